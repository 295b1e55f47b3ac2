//! Checkpoint container: model config, named weights, optimizer state.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! magic "RFCK" | version u16 | config-hash u64 | config-len u32 | config JSON
//! param-count u32
//!   per param: name-len u16 | name utf8 | rank u8 | dims u64[rank] | f32 data
//! optimizer-present u8
//!   if 1: step u64 | lr f64 | beta1 f64 | beta2 f64 | eps f64 | wd f64
//!         slot-count u32
//!         per slot: name-len u16 | name utf8 | numel u64 | m f32[] | v f32[]
//! ```
//!
//! The config hash (FNV-1a over the config JSON) ties weights to the
//! architecture that produced them; loaders reject a mismatch before
//! touching any tensor data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::autodiff::{Adam, AdamConfig, AdamState, Moments, Tensor};
use crate::loss::LossParams;
use crate::model::{ModelConfig, Relformer};

const MAGIC: &[u8; 4] = b"RFCK";
const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error("parameter mismatch: {0}")]
    Mismatch(String),
}

pub type Result<T, E = CheckpointError> = std::result::Result<T, E>;

fn io_err(path: &Path, source: std::io::Error) -> CheckpointError {
    CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, detail: impl Into<String>) -> CheckpointError {
    CheckpointError::Format {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// FNV-1a, the 64-bit variant.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Everything a training run needs to stop and continue: architecture,
/// weights (model plus loss scalars), and Adam moments with the step
/// counter.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Vec<(String, Tensor<f32>)>,
    pub optimizer: Option<(AdamConfig, AdamState<f32>)>,
}

impl Checkpoint {
    /// Snapshot the current weights and optimizer state.
    pub fn capture(
        model: &Relformer<f32>,
        loss: &LossParams<f32>,
        optimizer: Option<&Adam<f32>>,
    ) -> Self {
        let mut params = Vec::new();
        model.visit(&mut |name, t| params.push((name.to_string(), t.clone())));
        loss.visit(&mut |name, t| params.push((name.to_string(), t.clone())));
        Checkpoint {
            config: model.config().clone(),
            params,
            optimizer: optimizer.map(|o| (*o.config(), o.state().clone())),
        }
    }

    /// Write the stored weights back into a model and loss of the same
    /// architecture. Every parameter must match by name and shape, in
    /// both directions.
    pub fn restore(&self, model: &mut Relformer<f32>, loss: &mut LossParams<f32>) -> Result<()> {
        if *model.config() != self.config {
            return Err(CheckpointError::Mismatch(
                "model config differs from the checkpoint's".to_string(),
            ));
        }
        let mut stored: std::collections::BTreeMap<&str, &Tensor<f32>> = self
            .params
            .iter()
            .map(|(n, t)| (n.as_str(), t))
            .collect();
        let mut problems = Vec::new();
        let mut apply = |name: &str, t: &mut Tensor<f32>| match stored.remove(name) {
            Some(saved) if saved.shape() == t.shape() => {
                t.data_mut().copy_from_slice(saved.data());
            }
            Some(saved) => problems.push(format!(
                "{name}: shape {:?} in checkpoint, {:?} in model",
                saved.shape(),
                t.shape()
            )),
            None => problems.push(format!("{name}: missing from checkpoint")),
        };
        model.visit_mut(&mut apply);
        loss.visit_mut(&mut apply);
        for (name, _) in stored {
            problems.push(format!("{name}: not used by the model"));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CheckpointError::Mismatch(problems.join("; ")))
        }
    }
}

fn write_name(out: &mut impl Write, name: &str) -> std::io::Result<()> {
    out.write_u16::<LittleEndian>(name.len() as u16)?;
    out.write_all(name.as_bytes())
}

fn read_name(path: &Path, inp: &mut impl Read) -> Result<String> {
    let len = inp.read_u16::<LittleEndian>().map_err(|e| io_err(path, e))? as usize;
    let mut buf = vec![0u8; len];
    inp.read_exact(&mut buf).map_err(|e| io_err(path, e))?;
    String::from_utf8(buf).map_err(|_| format_err(path, "name is not utf-8"))
}

fn read_f32s(path: &Path, inp: &mut impl Read, n: usize) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(inp.read_f32::<LittleEndian>().map_err(|e| io_err(path, e))?);
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let config_json =
        serde_json::to_vec(&ckpt.config).map_err(|e| format_err(path, e.to_string()))?;
    let mut out = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    let io = |e| io_err(path, e);

    out.write_all(MAGIC).map_err(io)?;
    out.write_u16::<LittleEndian>(VERSION).map_err(io)?;
    out.write_u64::<LittleEndian>(fnv1a64(&config_json)).map_err(io)?;
    out.write_u32::<LittleEndian>(config_json.len() as u32).map_err(io)?;
    out.write_all(&config_json).map_err(io)?;

    out.write_u32::<LittleEndian>(ckpt.params.len() as u32).map_err(io)?;
    for (name, t) in &ckpt.params {
        write_name(&mut out, name).map_err(io)?;
        out.write_u8(t.shape().len() as u8).map_err(io)?;
        for &d in t.shape() {
            out.write_u64::<LittleEndian>(d as u64).map_err(io)?;
        }
        for &v in t.data() {
            out.write_f32::<LittleEndian>(v).map_err(io)?;
        }
    }

    match &ckpt.optimizer {
        None => out.write_u8(0).map_err(io)?,
        Some((cfg, state)) => {
            out.write_u8(1).map_err(io)?;
            out.write_u64::<LittleEndian>(state.step).map_err(io)?;
            for v in [cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay] {
                out.write_f64::<LittleEndian>(v).map_err(io)?;
            }
            out.write_u32::<LittleEndian>(state.slots.len() as u32).map_err(io)?;
            for (name, m) in &state.slots {
                write_name(&mut out, name).map_err(io)?;
                out.write_u64::<LittleEndian>(m.m.len() as u64).map_err(io)?;
                for &v in &m.m {
                    out.write_f32::<LittleEndian>(v).map_err(io)?;
                }
                for &v in &m.v {
                    out.write_f32::<LittleEndian>(v).map_err(io)?;
                }
            }
        }
    }
    out.flush().map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut inp = BufReader::new(File::open(path).map_err(|e| io_err(path, e))?);

    let mut magic = [0u8; 4];
    inp.read_exact(&mut magic).map_err(|e| io_err(path, e))?;
    if &magic != MAGIC {
        return Err(format_err(path, "bad magic, not a checkpoint"));
    }
    let version = inp.read_u16::<LittleEndian>().map_err(|e| io_err(path, e))?;
    if version != VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let stored_hash = inp.read_u64::<LittleEndian>().map_err(|e| io_err(path, e))?;
    let config_len = inp.read_u32::<LittleEndian>().map_err(|e| io_err(path, e))? as usize;
    let mut config_json = vec![0u8; config_len];
    inp.read_exact(&mut config_json).map_err(|e| io_err(path, e))?;
    if fnv1a64(&config_json) != stored_hash {
        return Err(format_err(path, "config hash mismatch, file corrupt"));
    }
    let config: ModelConfig =
        serde_json::from_slice(&config_json).map_err(|e| format_err(path, e.to_string()))?;

    let n_params = inp.read_u32::<LittleEndian>().map_err(|e| io_err(path, e))? as usize;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name = read_name(path, &mut inp)?;
        let rank = inp.read_u8().map_err(|e| io_err(path, e))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(inp.read_u64::<LittleEndian>().map_err(|e| io_err(path, e))? as usize);
        }
        let numel = shape.iter().product();
        let data = read_f32s(path, &mut inp, numel)?;
        params.push((name, Tensor::new(shape, data)));
    }

    let optimizer = match inp.read_u8().map_err(|e| io_err(path, e))? {
        0 => None,
        1 => {
            let step = inp.read_u64::<LittleEndian>().map_err(|e| io_err(path, e))?;
            let mut vals = [0f64; 5];
            for v in &mut vals {
                *v = inp.read_f64::<LittleEndian>().map_err(|e| io_err(path, e))?;
            }
            let cfg = AdamConfig {
                lr: vals[0],
                beta1: vals[1],
                beta2: vals[2],
                eps: vals[3],
                weight_decay: vals[4],
            };
            let n_slots = inp.read_u32::<LittleEndian>().map_err(|e| io_err(path, e))? as usize;
            let mut slots = std::collections::BTreeMap::new();
            for _ in 0..n_slots {
                let name = read_name(path, &mut inp)?;
                let numel = inp.read_u64::<LittleEndian>().map_err(|e| io_err(path, e))? as usize;
                let m = read_f32s(path, &mut inp, numel)?;
                let v = read_f32s(path, &mut inp, numel)?;
                slots.insert(name, Moments { m, v });
            }
            Some((cfg, AdamState { step, slots }))
        }
        other => return Err(format_err(path, format!("bad optimizer flag {other}"))),
    };

    // Trailing garbage means a writer bug or truncated concatenation.
    let mut rest = [0u8; 1];
    match inp.read(&mut rest).map_err(|e| io_err(path, e))? {
        0 => Ok(Checkpoint {
            config,
            params,
            optimizer,
        }),
        _ => Err(format_err(path, "trailing bytes after checkpoint")),
    }
}
