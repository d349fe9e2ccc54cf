//! Text checkpoints.
//!
//! One `key = value` pair per line, UTF-8. The first line is always
//! `schema_version = N`; the last is `end = ok`, so a truncated file is
//! detected. Floats are written with 17 significant digits, which makes a
//! save/load round trip bit-exact. Keys, in order:
//!
//! ```text
//! schema_version = 1
//! provenance = <tag>
//! seed = <u64>
//! activation = relu | tanh
//! layer_dims = d0,d1,...,dL
//! threshold = <f64>                  (optional)
//! aux.a / aux.b / aux.alpha / aux.margin / aux.prior = <f64>   (all or none)
//! layer.<l>.weight = <out*in floats, row-major>
//! layer.<l>.bias = <out floats>
//! end = ok
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::losses::AucState;
use crate::model::{Activation, Layer, ModelParams, ModelSpec};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

const AUX_KEYS: [&str; 5] = ["aux.a", "aux.b", "aux.alpha", "aux.margin", "aux.prior"];

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f64>,
    pub aux: Option<AucState<f64>>,
    /// Decision threshold selected on validation data, when known.
    pub threshold: Option<f64>,
    /// Where the weights came from, e.g. `pretrain` or `finetune`.
    pub provenance: String,
    pub seed: u64,
}

impl Checkpoint {
    pub fn new(params: ModelParams<f64>, provenance: impl Into<String>, seed: u64) -> Self {
        Self {
            params,
            aux: None,
            threshold: None,
            provenance: provenance.into(),
            seed,
        }
    }

    pub fn spec(&self) -> ModelSpec {
        self.params.spec()
    }

    pub fn to_text(&self) -> Result<String> {
        if self.provenance.contains(['\n', '\r']) {
            return Err(Error::Checkpoint("provenance tag must be a single line".into()));
        }
        if !self.params.is_finite() {
            return Err(Error::Checkpoint("refusing to save non-finite parameters".into()));
        }
        let spec = self.spec();
        let mut out = String::new();
        let _ = writeln!(out, "schema_version = {SCHEMA_VERSION}");
        let _ = writeln!(out, "provenance = {}", self.provenance);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "activation = {}", spec.activation);
        let dims: Vec<String> = spec.layer_dims.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(out, "layer_dims = {}", dims.join(","));
        if let Some(t) = self.threshold {
            let _ = writeln!(out, "threshold = {}", fmt_f64(t));
        }
        if let Some(aux) = &self.aux {
            aux.validate()?;
            for (key, v) in AUX_KEYS.iter().zip([aux.a, aux.b, aux.alpha, aux.margin, aux.prior]) {
                let _ = writeln!(out, "{key} = {}", fmt_f64(v));
            }
        }
        for (l, layer) in self.params.layers.iter().enumerate() {
            let _ = writeln!(out, "layer.{l}.weight = {}", fmt_list(layer.weight.iter()));
            let _ = writeln!(out, "layer.{l}.bias = {}", fmt_list(layer.bias.iter()));
        }
        out.push_str("end = ok\n");
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let first = lines
            .next()
            .ok_or_else(|| Error::Checkpoint("empty checkpoint".into()))?;
        let (key, value) = split_kv(first)?;
        if key != "schema_version" {
            return Err(Error::Checkpoint(format!(
                "first line must be schema_version, found {key:?}"
            )));
        }
        let found: u32 = value
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad schema_version {value:?}")))?;
        if found != SCHEMA_VERSION {
            return Err(Error::Version {
                found,
                expected: SCHEMA_VERSION,
            });
        }

        let mut kv = BTreeMap::new();
        for line in lines {
            let (k, v) = split_kv(line)?;
            if kv.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Checkpoint(format!("duplicate key {k:?}")));
            }
        }
        if kv.get("end").map(String::as_str) != Some("ok") {
            return Err(Error::Checkpoint("truncated checkpoint (no end marker)".into()));
        }
        let mut take = |k: &str| -> Result<String> {
            kv.remove(k)
                .ok_or_else(|| Error::Checkpoint(format!("missing key {k:?}")))
        };

        let provenance = take("provenance")?;
        let seed: u64 = take("seed")?
            .parse()
            .map_err(|_| Error::Checkpoint("bad seed".into()))?;
        let activation: Activation = take("activation")?.parse()?;
        let dims = take("layer_dims")?
            .split(',')
            .map(|d| d.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Checkpoint("bad layer_dims".into()))?;
        let spec = ModelSpec::encoder(dims, activation)?;

        let mut layers = Vec::with_capacity(spec.num_layers());
        for (l, w) in spec.layer_dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weight = parse_list(&take(&format!("layer.{l}.weight"))?)?;
            let bias = parse_list(&take(&format!("layer.{l}.bias"))?)?;
            if weight.len() != fan_in * fan_out || bias.len() != fan_out {
                return Err(Error::Checkpoint(format!(
                    "layer {l}: expected {} weights and {fan_out} biases, found {} and {}",
                    fan_in * fan_out,
                    weight.len(),
                    bias.len()
                )));
            }
            layers.push(Layer {
                weight: Array2::from_shape_vec((fan_out, fan_in), weight).expect("length checked"),
                bias: Array1::from(bias),
            });
        }

        let threshold = kv.remove("threshold").map(|v| parse_f64(&v)).transpose()?;
        let present = AUX_KEYS.iter().filter(|k| kv.contains_key(**k)).count();
        let aux = match present {
            0 => None,
            5 => {
                let mut vals = [0.0; 5];
                for (slot, key) in vals.iter_mut().zip(AUX_KEYS) {
                    *slot = parse_f64(&kv.remove(key).unwrap())?;
                }
                let [a, b, alpha, margin, prior] = vals;
                let aux = AucState { a, b, alpha, margin, prior };
                aux.validate()
                    .map_err(|e| Error::Checkpoint(format!("invalid auxiliary state: {e}")))?;
                Some(aux)
            }
            _ => return Err(Error::Checkpoint("incomplete aux block".into())),
        };
        kv.remove("end");
        if let Some(k) = kv.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected key {k:?}")));
        }

        Ok(Self {
            params: ModelParams { activation, layers },
            aux,
            threshold,
            provenance,
            seed,
        })
    }
}

fn split_kv(line: &str) -> Result<(&str, &str)> {
    line.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| Error::Checkpoint(format!("malformed line {line:?}")))
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_list<'a>(vals: impl Iterator<Item = &'a f64>) -> String {
    vals.map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",")
}

fn parse_f64(s: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::Checkpoint(format!("bad number {s:?}")))?;
    if !v.is_finite() {
        return Err(Error::Checkpoint(format!("non-finite value {s:?}")));
    }
    Ok(v)
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',').map(parse_f64).collect()
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, ckpt.to_text()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_text(&text)
}
