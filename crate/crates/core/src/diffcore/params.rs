//! Named parameter collections and the JSON checkpoint document.
//!
//! The document maps each parameter name to `{"shape": [...], "values": [...]}`.
//! Reals are written with 17 significant digits, which is enough for every
//! `f64` to parse back to the identical bit pattern.

use std::collections::BTreeMap;
use std::io;

use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};
use serde_json::ser::Formatter;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub type ParamMap = BTreeMap<String, Tensor>;

/// Anything that owns named parameter tensors.
pub trait Module {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));

    fn params(&self) -> ParamMap {
        let mut out = ParamMap::new();
        self.visit(&mut |name, t| {
            out.insert(name.to_string(), t.clone());
        });
        out
    }

    /// Overwrite parameters from `map`. Every parameter must be present with
    /// a matching shape.
    fn load_params(&mut self, map: &ParamMap) -> Result<()> {
        let mut err = None;
        self.visit_mut(&mut |name, t| {
            if err.is_some() {
                return;
            }
            match map.get(name) {
                Some(src) if src.shape() == t.shape() => *t = src.clone(),
                Some(src) => {
                    err = Some(Error::Dimension(format!(
                        "parameter `{name}`: expected {:?}, found {:?}",
                        t.shape(),
                        src.shape()
                    )))
                }
                None => err = Some(Error::Contract(format!("missing parameter `{name}`"))),
            }
        });
        err.map_or(Ok(()), Err)
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.len());
        n
    }
}

#[derive(Serialize, Deserialize)]
struct Entry {
    shape: Vec<usize>,
    values: Vec<f64>,
}

/// Wrapper serializing a [`ParamMap`] in checkpoint layout.
pub struct ParamDoc<'a>(pub &'a ParamMap);

impl Serialize for ParamDoc<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.0.len()))?;
        for (name, t) in self.0 {
            m.serialize_entry(
                name,
                &EntryRef {
                    shape: t.shape(),
                    values: t.data(),
                },
            )?;
        }
        m.end()
    }
}

#[derive(Serialize)]
struct EntryRef<'a> {
    shape: &'a [usize],
    values: &'a [f64],
}

/// JSON formatter printing reals as `d.dddddddddddddddde±x`.
#[derive(Clone, Debug, Default)]
pub struct FullPrecision;

impl Formatter for FullPrecision {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{}", format_real(value))
    }
}

/// 17-significant-digit representation of a finite real.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Serialize any value with [`FullPrecision`] reals. Non-finite reals are
/// rejected.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FullPrecision);
    value.serialize(&mut ser)?;
    let s = String::from_utf8(buf).expect("serde_json emits UTF-8");
    if s.contains("NaN") || s.contains("inf") {
        return Err(Error::Numeric("non-finite value in checkpoint".into()));
    }
    Ok(s)
}

pub fn params_to_json(map: &ParamMap) -> Result<String> {
    for (name, t) in map {
        if !t.is_finite() {
            return Err(Error::Numeric(format!("parameter `{name}` is not finite")));
        }
    }
    to_json_string(&ParamDoc(map))
}

pub fn params_from_json(s: &str) -> Result<ParamMap> {
    let raw: BTreeMap<String, Entry> = serde_json::from_str(s)?;
    raw.into_iter()
        .map(|(name, e)| Ok((name, Tensor::new(e.shape, e.values)?)))
        .collect()
}

/// Deserialize a parameter map embedded as a JSON value.
pub fn params_from_value(v: serde_json::Value) -> Result<ParamMap> {
    let raw: BTreeMap<String, Entry> = serde_json::from_value(v)?;
    raw.into_iter()
        .map(|(name, e)| Ok((name, Tensor::new(e.shape, e.values)?)))
        .collect()
}
