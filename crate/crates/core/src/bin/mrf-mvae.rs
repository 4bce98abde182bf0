fn main() {
    std::process::exit(mrf_mvae::cli::main_with(std::env::args_os()));
}
