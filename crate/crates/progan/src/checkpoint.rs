//! Checkpoint file format.
//!
//! Layout:
//!
//! ```text
//! magic      4 bytes        "PGCK"
//! version    u32 LE         1
//! meta_len   u32 LE
//! meta       meta_len bytes UTF-8 JSON document
//! blobs      f32 LE values
//! ```
//!
//! The metadata document carries the training configuration, phase, epoch,
//! step and RNG state, the optimizer step counters, and an ordered parameter
//! manifest (name, shape, element offset). Each manifest entry owns three
//! consecutive blobs of `numel` f32 values each: the parameter, then the
//! Adam first and second moments. Generator entries (`G.*`) precede critic
//! entries (`D.*`). Roundtrips are bit-exact.

use std::fmt;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::networks::PhaseState;
use crate::tensor::Tensor;
use crate::train::TrainingConfig;

pub const MAGIC: [u8; 4] = *b"PGCK";
pub const VERSION: u32 = 1;

#[derive(Debug)]
pub enum CheckpointError {
    Io(std::io::Error),
    BadMagic,
    UnsupportedVersion(u32),
    Corrupt(String),
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointError::Io(e) => write!(f, "i/o error: {e}"),
            CheckpointError::BadMagic => write!(f, "not a checkpoint file (bad magic)"),
            CheckpointError::UnsupportedVersion(v) => {
                write!(f, "unsupported checkpoint version {v}")
            }
            CheckpointError::Corrupt(msg) => write!(f, "corrupt checkpoint: {msg}"),
        }
    }
}

impl std::error::Error for CheckpointError {}

impl From<std::io::Error> for CheckpointError {
    fn from(e: std::io::Error) -> Self {
        CheckpointError::Io(e)
    }
}

/// One parameter with its optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub param: Tensor<f32>,
    pub m: Tensor<f32>,
    pub v: Tensor<f32>,
}

/// Everything needed to resume training bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainingConfig,
    pub phase: PhaseState,
    pub next_epoch: u64,
    pub global_step: u64,
    pub rng_state: [u64; 4],
    pub adam_g_step: u64,
    pub adam_d_step: u64,
    pub params_g: Vec<ParamBlock>,
    pub params_d: Vec<ParamBlock>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    /// Element offset of the parameter blob; moments follow at
    /// `offset + numel` and `offset + 2 * numel`.
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: TrainingConfig,
    phase: PhaseState,
    next_epoch: u64,
    global_step: u64,
    /// Four u64 words as lowercase hex (JSON numbers cannot hold u64).
    rng_state: [String; 4],
    adam_g_step: u64,
    adam_d_step: u64,
    generator_params: usize,
    manifest: Vec<ManifestEntry>,
}

pub fn save(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let mut manifest = Vec::new();
    let mut offset = 0u64;
    for block in ckpt.params_g.iter().chain(&ckpt.params_d) {
        let numel = block.param.numel() as u64;
        manifest.push(ManifestEntry {
            name: block.name.clone(),
            shape: block.param.shape().to_vec(),
            offset,
        });
        offset += 3 * numel;
    }
    let meta = Meta {
        config: ckpt.config.clone(),
        phase: ckpt.phase,
        next_epoch: ckpt.next_epoch,
        global_step: ckpt.global_step,
        rng_state: ckpt.rng_state.map(|w| format!("{w:016x}")),
        adam_g_step: ckpt.adam_g_step,
        adam_d_step: ckpt.adam_d_step,
        generator_params: ckpt.params_g.len(),
        manifest,
    };
    let meta_bytes =
        serde_json::to_vec(&meta).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;

    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(meta_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&meta_bytes)?;
    for block in ckpt.params_g.iter().chain(&ckpt.params_d) {
        for tensor in [&block.param, &block.m, &block.v] {
            for &v in tensor.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_exact_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let meta_len = read_exact_u32(&mut r)? as usize;
    let mut meta_bytes = vec![0u8; meta_len];
    r.read_exact(&mut meta_bytes)?;
    let meta: Meta = serde_json::from_slice(&meta_bytes)
        .map_err(|e| CheckpointError::Corrupt(format!("metadata: {e}")))?;

    let mut rng_state = [0u64; 4];
    for (i, word) in meta.rng_state.iter().enumerate() {
        rng_state[i] = u64::from_str_radix(word, 16)
            .map_err(|e| CheckpointError::Corrupt(format!("rng state: {e}")))?;
    }

    let mut blob = Vec::new();
    r.read_to_end(&mut blob)?;
    if blob.len() % 4 != 0 {
        return Err(CheckpointError::Corrupt(format!(
            "blob section of {} bytes is not f32-aligned",
            blob.len()
        )));
    }
    let floats: Vec<f32> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    if meta.generator_params > meta.manifest.len() {
        return Err(CheckpointError::Corrupt(
            "generator parameter count exceeds manifest".into(),
        ));
    }
    let mut blocks = Vec::with_capacity(meta.manifest.len());
    for entry in &meta.manifest {
        let numel: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + 3 * numel;
        if end > floats.len() {
            return Err(CheckpointError::Corrupt(format!(
                "parameter {} extends past the blob section",
                entry.name
            )));
        }
        let slice = |k: usize| -> Result<Tensor<f32>, CheckpointError> {
            Tensor::new(
                entry.shape.clone(),
                floats[start + k * numel..start + (k + 1) * numel].to_vec(),
            )
            .map_err(|e| CheckpointError::Corrupt(format!("{}: {e}", entry.name)))
        };
        blocks.push(ParamBlock {
            name: entry.name.clone(),
            param: slice(0)?,
            m: slice(1)?,
            v: slice(2)?,
        });
    }
    let params_d = blocks.split_off(meta.generator_params);

    Ok(Checkpoint {
        config: meta.config,
        phase: meta.phase,
        next_epoch: meta.next_epoch,
        global_step: meta.global_step,
        rng_state,
        adam_g_step: meta.adam_g_step,
        adam_d_step: meta.adam_d_step,
        params_g: blocks,
        params_d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn sample_checkpoint() -> Checkpoint {
        let mut rng = Rng::seed_from_u64(3);
        let block = |name: &str, shape: Vec<usize>, rng: &mut Rng| ParamBlock {
            name: name.into(),
            param: Tensor::randn(shape.clone(), rng),
            m: Tensor::randn(shape.clone(), rng),
            v: Tensor::randn(shape, rng),
        };
        Checkpoint {
            config: TrainingConfig {
                seed: 17,
                ..TrainingConfig::default()
            },
            phase: PhaseState::new(1, 0.625, 3).unwrap(),
            next_epoch: 23,
            global_step: 92,
            rng_state: [u64::MAX, 1, 0x0123_4567_89ab_cdef, 42],
            adam_g_step: 91,
            adam_d_step: 92,
            params_g: vec![
                block("G.block0.conv0.weight", vec![4, 4, 8, 8], &mut rng),
                block("G.block0.conv0.bias", vec![8], &mut rng),
            ],
            params_d: vec![block("D.cost.conv2.weight", vec![1, 1, 8, 1], &mut rng)],
        }
    }

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("progan-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let ckpt = sample_checkpoint();
        let path = tmp("roundtrip.pgck");
        save(&ckpt, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(ckpt, loaded);
        // explicit bitwise check of the float payloads
        for (a, b) in ckpt.params_g.iter().zip(&loaded.params_g) {
            for (ta, tb) in [(&a.param, &b.param), (&a.m, &b.m), (&a.v, &b.v)] {
                assert!(ta
                    .data()
                    .iter()
                    .zip(tb.data())
                    .all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let path = tmp("badmagic.pgck");
        std::fs::write(&path, b"NOPE....").unwrap();
        assert!(matches!(load(&path), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let ckpt = sample_checkpoint();
        let path = tmp("badver.pgck");
        save(&ckpt, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load(&path),
            Err(CheckpointError::UnsupportedVersion(99))
        ));
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let ckpt = sample_checkpoint();
        let path = tmp("trunc.pgck");
        save(&ckpt, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(load(&path), Err(CheckpointError::Corrupt(_))));
    }
}
