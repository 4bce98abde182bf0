//! Train a small multimodal VAE, checkpoint it, and draw joint and
//! conditional samples.
//!
//! `cargo run --release --example train_mvae -- [gmrf|almrf|nnmrf] [epochs]`
//!
//! A learned neural potential need not be normalizable, and after a few
//! epochs the nnmrf chain can drift; the sampler then reports an
//! out-of-range acceptance rate.

use mrf_mvae::copuladata::{sample, CopulaSpec};
use mrf_mvae::mvae::{train, Checkpoint, ModelConfig, Mvae, TrainState, Variant};
use mrf_mvae::nnmrf::MhConfig;
use mrf_mvae::rng::substream;

fn main() -> mrf_mvae::Result<()> {
    let mut args = std::env::args().skip(1);
    let variant = match args.next().as_deref() {
        None | Some("gmrf") => Variant::Gmrf,
        Some("almrf") => Variant::Almrf,
        Some("nnmrf") => Variant::Nnmrf,
        Some(other) => return Err(mrf_mvae::Error::Usage(format!("unknown variant {other}"))),
    };
    let epochs: usize = args.next().map(|s| s.parse().expect("epochs")).unwrap_or(10);

    let data = sample(&CopulaSpec::benchmark(2000, 0))?;
    let cfg = ModelConfig {
        variant,
        encoder_hidden: vec![64],
        decoder_hidden: vec![64],
        covariance_hidden: vec![32],
        potential_hidden: vec![16],
        beta: 0.01,
        epochs,
        mh: MhConfig { burn_in: 500, thinning: 2, ..MhConfig::default() },
        ..ModelConfig::default()
    };
    let mut model = Mvae::new(cfg)?;
    println!("{} model, {} posterior parameters per row", variant.name(), model.distribution_param_count());
    let mut state = TrainState::default();
    train(&mut model, &data, &mut state, epochs, |_, s| {
        let e = s.trace.last().expect("one epoch");
        println!("epoch {:>3}  loss {:.4}  recon {:.4}  regularizer {:.4}", s.epoch, e.loss, e.recon, e.regularizer);
        Ok(())
    })?;

    let path = std::env::temp_dir().join(format!("mrf-mvae-{}.json", variant.name()));
    Checkpoint::new(&model, &state).save(&path)?;
    let restored = Checkpoint::load(&path)?.model()?;
    println!("checkpoint written to {}", path.display());

    let joint = restored.generate(3, &mut substream(1, "example"))?;
    for row in joint.data().chunks(8) {
        println!("joint draw        {row:.3?}");
    }
    let observed = data.modality(0);
    let first = mrf_mvae::diffcore::Tensor::new(vec![2, 2], observed.data()[..4].to_vec())?;
    let cond = restored.conditional_generate(0, &first, &mut substream(2, "example"))?;
    for row in cond.data().chunks(8) {
        println!("given modality 1  {row:.3?}");
    }
    Ok(())
}
