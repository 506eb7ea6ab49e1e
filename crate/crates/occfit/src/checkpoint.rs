//! Training checkpoints.
//!
//! # Byte layout
//!
//! A checkpoint is an ASCII header followed by a binary body.
//!
//! ```text
//! OCCFIT1\n
//! key=value\n          (one line per header field, order below)
//! ...
//! end_header\n
//! params        param_count × f64, little endian
//! first_moment  param_count × f64, little endian
//! second_moment param_count × f64, little endian
//! ```
//!
//! Header fields, in order: `num_hidden_layers`, `hidden_width`, `skip_layer_index`,
//! `activation` (`softplus` or `relu`), `softplus_beta`, `centroid` (three reals),
//! `scale`, `bounds_min` and `bounds_max` (three reals each, the uniform-pool box in
//! normalized coordinates), `seed`, `rng_seed` (64 hex digits), `rng_stream`,
//! `rng_word_pos`, `iteration` and `param_count`. Reals are written in the shortest
//! decimal form that parses back to the same `f64`, so the header is lossless. The
//! file ends exactly after the second-moment block.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use occfit_core::cloud::Normalization;
use occfit_core::diffnet::{Activation, NetworkConfig, ParamVector, DEFAULT_SOFTPLUS_BETA};
use occfit_core::geom::Aabb;
use occfit_core::trainer::{RngState, TrainState};
use occfit_core::Vec3;

use crate::{Error, Result};

pub const MAGIC: &str = "OCCFIT1";
const END: &str = "end_header";

/// Everything needed to rebuild the field, emit raw-space meshes and resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: NetworkConfig,
    pub normalization: Normalization,
    pub bounds: Aabb,
    pub seed: u64,
    pub state: TrainState,
}

fn vec3(v: Vec3) -> String {
    format!("{} {} {}", v[0], v[1], v[2])
}

pub fn to_bytes(ck: &Checkpoint) -> Vec<u8> {
    let net = &ck.network;
    let (activation, beta) = match net.activation {
        Activation::Softplus { beta } => ("softplus", beta),
        Activation::Relu => ("relu", DEFAULT_SOFTPLUS_BETA),
    };
    let rng = RngState::capture(&ck.state.rng);
    let hex: String = rng.seed.iter().map(|b| format!("{b:02x}")).collect();
    let mut h = String::new();
    let _ = writeln!(h, "{MAGIC}");
    let _ = writeln!(h, "num_hidden_layers={}", net.num_hidden_layers);
    let _ = writeln!(h, "hidden_width={}", net.hidden_width);
    let _ = writeln!(h, "skip_layer_index={}", net.skip_layer_index);
    let _ = writeln!(h, "activation={activation}");
    let _ = writeln!(h, "softplus_beta={beta}");
    let _ = writeln!(h, "centroid={}", vec3(ck.normalization.centroid));
    let _ = writeln!(h, "scale={}", ck.normalization.scale);
    let _ = writeln!(h, "bounds_min={}", vec3(ck.bounds.min));
    let _ = writeln!(h, "bounds_max={}", vec3(ck.bounds.max));
    let _ = writeln!(h, "seed={}", ck.seed);
    let _ = writeln!(h, "rng_seed={hex}");
    let _ = writeln!(h, "rng_stream={}", rng.stream);
    let _ = writeln!(h, "rng_word_pos={}", rng.word_pos);
    let _ = writeln!(h, "iteration={}", ck.state.iteration);
    let _ = writeln!(h, "param_count={}", ck.state.params.len());
    let _ = writeln!(h, "{END}");

    let mut out = h.into_bytes();
    let blocks = [
        ck.state.params.as_slice(),
        &ck.state.first_moment,
        &ck.state.second_moment,
    ];
    for block in blocks {
        for v in block {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Header<'a> {
    fields: Vec<(&'a str, &'a str)>,
    path: &'a Path,
}

impl<'a> Header<'a> {
    fn take(&mut self, key: &str) -> Result<&'a str> {
        match self.fields.first() {
            Some(&(k, v)) if k == key => {
                self.fields.remove(0);
                Ok(v)
            }
            Some(&(k, _)) => Err(Error::format(self.path, format!("expected header field {key}, found {k}"))),
            None => Err(Error::format(self.path, format!("header ends before field {key}"))),
        }
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.take(key)?;
        v.parse()
            .map_err(|_| Error::format(self.path, format!("bad value {v:?} for header field {key}")))
    }

    fn vec3(&mut self, key: &str) -> Result<Vec3> {
        let v = self.take(key)?;
        let parts: Vec<f64> = v
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(self.path, format!("bad vector {v:?} for header field {key}")))?;
        <[f64; 3]>::try_from(parts)
            .map_err(|_| Error::format(self.path, format!("header field {key} needs three values")))
    }
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let fail = |m: &str| Error::format(path, m);
    let magic_line = format!("{MAGIC}\n");
    if !bytes.starts_with(magic_line.as_bytes()) {
        return Err(fail("not an occfit checkpoint (magic/version mismatch)"));
    }
    let end_marker = format!("\n{END}\n");
    let header_len = bytes
        .windows(end_marker.len())
        .position(|w| w == end_marker.as_bytes())
        .map(|p| p + end_marker.len())
        .ok_or_else(|| fail("truncated header"))?;
    let text = std::str::from_utf8(&bytes[magic_line.len()..header_len - END.len() - 1])
        .map_err(|_| fail("header is not ASCII"))?;
    let fields = text
        .lines()
        .map(|l| l.split_once('=').ok_or_else(|| fail("header line without '='")))
        .collect::<Result<Vec<_>>>()?;
    let mut h = Header { fields, path };

    let num_hidden_layers = h.parse("num_hidden_layers")?;
    let hidden_width = h.parse("hidden_width")?;
    let skip_layer_index = h.parse("skip_layer_index")?;
    let activation_name = h.take("activation")?;
    let beta: f64 = h.parse("softplus_beta")?;
    let activation = match activation_name {
        "softplus" => Activation::Softplus { beta },
        "relu" => Activation::Relu,
        other => return Err(fail(&format!("unknown activation {other:?}"))),
    };
    let network = NetworkConfig {
        num_hidden_layers,
        hidden_width,
        skip_layer_index,
        activation,
    };
    network.validate().map_err(|e| fail(&e.to_string()))?;
    let normalization = Normalization {
        centroid: h.vec3("centroid")?,
        scale: h.parse("scale")?,
    };
    let bounds = Aabb {
        min: h.vec3("bounds_min")?,
        max: h.vec3("bounds_max")?,
    };
    let seed = h.parse("seed")?;
    let hex = h.take("rng_seed")?;
    if hex.len() != 64 || !hex.is_ascii() {
        return Err(fail("rng_seed must be 64 hex digits"));
    }
    let mut rng_seed = [0u8; 32];
    for (i, b) in rng_seed.iter_mut().enumerate() {
        *b = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).map_err(|_| fail("rng_seed must be 64 hex digits"))?;
    }
    let rng = RngState {
        seed: rng_seed,
        stream: h.parse("rng_stream")?,
        word_pos: h.parse("rng_word_pos")?,
    };
    let iteration = h.parse("iteration")?;
    let param_count: usize = h.parse("param_count")?;
    if let Some((k, _)) = h.fields.first() {
        return Err(fail(&format!("unexpected header field {k}")));
    }
    if param_count != network.param_count() {
        return Err(fail("param_count does not match the network configuration"));
    }

    let body = &bytes[header_len..];
    let expected = 3 * param_count * 8;
    if body.len() != expected {
        return Err(fail(&format!(
            "body has {} bytes, expected {expected} (truncated or corrupt file)",
            body.len()
        )));
    }
    let mut values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut block = || values.by_ref().take(param_count).collect::<Vec<f64>>();
    let params = block();
    let first_moment = block();
    let second_moment = block();
    let params = ParamVector::new(&network, params).map_err(|e| fail(&e.to_string()))?;
    Ok(Checkpoint {
        network,
        normalization,
        bounds,
        seed,
        state: TrainState {
            params,
            first_moment,
            second_moment,
            iteration,
            rng: rng.restore(),
        },
    })
}

/// Writes to a sibling temporary file first so a crash never leaves a partial checkpoint.
pub fn save(ck: &Checkpoint, path: &Path) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, to_bytes(ck)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}
