//! Versioned text container for network parameters.
//!
//! ```text
//! semisel-checkpoint
//! format_version 1
//! kind autoencoder
//! seed 42
//! meta alpha 2
//! layer encoder.0 20 16 sigmoid
//! ...
//! params encoder.0.weight 320
//! 1.2500000000000000e-1 -3.0000000000000000e-2 ...
//! params encoder.0.bias 16
//! ...
//! end
//! ```
//!
//! Layer specs come first; parameter arrays follow in the same order, weight
//! then bias. Values are written with 17 significant digits, which round-trips
//! every `f64` exactly.

use std::collections::BTreeMap;
use std::path::Path;

use super::layer::{Activation, Dense};
use super::matrix::Matrix;
use crate::error::{Error, Result};

pub const MAGIC: &str = "semisel-checkpoint";
pub const FORMAT_VERSION: u32 = 1;
const VALUES_PER_LINE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedLayer {
    pub name: String,
    pub layer: Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub seed: u64,
    pub meta: BTreeMap<String, String>,
    pub layers: Vec<NamedLayer>,
}

pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, seed: u64) -> Self {
        Self {
            kind: kind.into(),
            seed,
            meta: BTreeMap::new(),
            layers: Vec::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn push_layer(&mut self, name: impl Into<String>, layer: &Dense) {
        self.layers.push(NamedLayer {
            name: name.into(),
            layer: layer.clone(),
        });
    }

    pub fn meta_value(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Validation(format!("checkpoint is missing `{key}`")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.meta_value(key)?;
        raw.parse()
            .map_err(|_| Error::Validation(format!("checkpoint field `{key}` has invalid value `{raw}`")))
    }

    /// Layers whose name starts with `prefix.`, in declared order.
    pub fn layers_with_prefix(&self, prefix: &str) -> Vec<Dense> {
        let dotted = format!("{prefix}.");
        self.layers
            .iter()
            .filter(|l| l.name.starts_with(&dotted))
            .map(|l| l.layer.clone())
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        out.push_str(&format!("format_version {FORMAT_VERSION}\n"));
        out.push_str(&format!("kind {}\n", self.kind));
        out.push_str(&format!("seed {}\n", self.seed));
        for (k, v) in &self.meta {
            out.push_str(&format!("meta {k} {v}\n"));
        }
        for l in &self.layers {
            out.push_str(&format!(
                "layer {} {} {} {}\n",
                l.name,
                l.layer.in_dim(),
                l.layer.out_dim(),
                l.layer.activation()
            ));
        }
        for l in &self.layers {
            write_array(&mut out, &format!("{}.weight", l.name), l.layer.weights().as_slice());
            write_array(&mut out, &format!("{}.bias", l.name), l.layer.bias());
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let src = "checkpoint";
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));
        let mut next = |what: &str| -> Result<(usize, &str)> {
            lines
                .next()
                .ok_or_else(|| Error::parse(src, 0, format!("unexpected end of file, expected {what}")))
        };

        let (n, magic) = next("header")?;
        if magic != MAGIC {
            return Err(Error::parse(src, n, "not a semisel checkpoint"));
        }
        let (n, version) = next("format_version")?;
        let version: u32 = field(version, "format_version")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::parse(src, n, "bad format_version line"))?;
        if version != FORMAT_VERSION {
            return Err(Error::parse(src, n, format!("unsupported format_version {version}")));
        }
        let (n, kind) = next("kind")?;
        let kind = field(kind, "kind").ok_or_else(|| Error::parse(src, n, "bad kind line"))?;
        let (n, seed) = next("seed")?;
        let seed: u64 = field(seed, "seed")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::parse(src, n, "bad seed line"))?;

        let mut ckpt = Checkpoint::new(kind, seed);
        let mut specs: Vec<(String, usize, usize, Activation)> = Vec::new();
        let (mut n, mut line) = next("layers")?;
        loop {
            if let Some(rest) = field(line, "meta") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ckpt.meta.insert(k.to_string(), v.to_string());
            } else if let Some(rest) = field(line, "layer") {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if parts.len() != 4 {
                    return Err(Error::parse(src, n, "layer line needs name, in, out, activation"));
                }
                let dim = |s: &str| s.parse::<usize>().map_err(|_| Error::parse(src, n, format!("bad width `{s}`")));
                let act: Activation = parts[3].parse().map_err(|_| Error::parse(src, n, "bad activation"))?;
                specs.push((parts[0].to_string(), dim(parts[1])?, dim(parts[2])?, act));
            } else {
                break;
            }
            (n, line) = next("params")?;
        }

        let mut pending = Some((n, line));
        let mut read_array = |expected_name: &str, expected_len: usize| -> Result<Vec<f64>> {
            let (n, header) = match pending.take() {
                Some(p) => p,
                None => next("params")?,
            };
            let rest = field(header, "params").ok_or_else(|| Error::parse(src, n, "expected params line"))?;
            let (name, count) = rest.split_once(' ').ok_or_else(|| Error::parse(src, n, "bad params line"))?;
            if name != expected_name {
                return Err(Error::parse(src, n, format!("expected params {expected_name}, found {name}")));
            }
            let count: usize = count.parse().map_err(|_| Error::parse(src, n, "bad params count"))?;
            if count != expected_len {
                return Err(Error::parse(src, n, format!("{name}: declared {expected_len} values, header says {count}")));
            }
            let mut values = Vec::with_capacity(count);
            while values.len() < count {
                let (n, row) = next("parameter values")?;
                for tok in row.split_whitespace() {
                    let v: f64 = tok.parse().map_err(|_| Error::parse(src, n, format!("bad number `{tok}`")))?;
                    if !v.is_finite() {
                        return Err(Error::parse(src, n, "non-finite parameter"));
                    }
                    values.push(v);
                }
                if values.len() > count {
                    return Err(Error::parse(src, n, format!("{name}: too many values")));
                }
            }
            Ok(values)
        };

        for (name, in_dim, out_dim, act) in specs {
            let w = read_array(&format!("{name}.weight"), in_dim * out_dim)?;
            let b = read_array(&format!("{name}.bias"), out_dim)?;
            let layer = Dense::from_parts(Matrix::from_vec(out_dim, in_dim, w)?, b, act)?;
            ckpt.layers.push(NamedLayer { name, layer });
        }
        drop(read_array);
        let (n, tail) = match pending {
            Some(p) => p,
            None => next("end")?,
        };
        if tail != "end" {
            return Err(Error::parse(src, n, "expected `end`"));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

fn field<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    line.strip_prefix(key)?.strip_prefix(' ')
}

fn write_array(out: &mut String, name: &str, values: &[f64]) {
    out.push_str(&format!("params {name} {}\n", values.len()));
    for chunk in values.chunks(VALUES_PER_LINE) {
        let line: Vec<String> = chunk.iter().map(|&v| format_value(v)).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;
    use proptest::prelude::*;

    fn sample(seed: u64) -> Checkpoint {
        let mut rng = SeedStream::new(seed).rng();
        let mut c = Checkpoint::new("test", seed).with_meta("alpha", 2.0).with_meta("note", "two words");
        c.push_layer("enc.0", &Dense::glorot(5, 3, Activation::Sigmoid, &mut rng));
        c.push_layer("enc.1", &Dense::glorot(3, 9, Activation::Softmax, &mut rng));
        c
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample(11);
        let text = c.to_text();
        let back = Checkpoint::parse(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), text);
        assert_eq!(back.meta_value("note").unwrap(), "two words");
    }

    #[test]
    fn rejects_truncated_and_foreign_files() {
        let text = sample(1).to_text();
        let cut: String = text.lines().take(12).collect::<Vec<_>>().join("\n");
        assert!(Checkpoint::parse(&cut).is_err());
        assert!(Checkpoint::parse("hello\n").is_err());
        let bumped = text.replace("format_version 1", "format_version 9");
        assert!(Checkpoint::parse(&bumped).is_err());
    }

    proptest! {
        #[test]
        fn any_finite_value_round_trips(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let parsed: f64 = format_value(v).parse().unwrap();
            prop_assert_eq!(parsed.to_bits(), v.to_bits());
        }
    }
}
