//! Binary checkpoint format: magic "RNPC", a format version, the model
//! config as JSON, length-prefixed named parameter blocks of little-endian
//! f64 values, optimizer moments, the epoch counter, and the training RNG
//! state. Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::gradcheck::Parameterized;
use crate::model::{RnpConfig, RnpModel};
use crate::train::AdamState;

pub const MAGIC: [u8; 4] = *b"RNPC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint does not match config: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AdamSnapshot {
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub version: u32,
    pub config: RnpConfig,
    pub params: Vec<ParamBlock>,
    pub adam: Option<AdamSnapshot>,
    pub epoch: u64,
    pub rng_seed: u64,
    pub rng_word_pos: u128,
}

impl Checkpoint {
    pub fn capture(
        model: &RnpModel,
        adam: Option<&AdamState>,
        epoch: u64,
        rng_seed: u64,
        rng_word_pos: u128,
    ) -> Self {
        let mut params = Vec::new();
        model.visit_params(&mut |name, t| {
            params.push(ParamBlock {
                name: name.to_string(),
                shape: t.shape.clone(),
                values: t.data.clone(),
            });
        });
        Checkpoint {
            version: FORMAT_VERSION,
            config: model.config.clone(),
            params,
            adam: adam.map(|a| AdamSnapshot {
                t: a.t,
                m: a.m.clone(),
                v: a.v.clone(),
            }),
            epoch,
            rng_seed,
            rng_word_pos,
        }
    }

    /// Rebuilds the model from the stored config and overwrites every
    /// parameter with the stored values. Every parameter must appear
    /// exactly once with a matching shape.
    pub fn restore_model(&self) -> Result<RnpModel, CheckpointError> {
        let mut model = RnpModel::new(self.config.clone(), 0);
        let mut expected = 0usize;
        model.visit_params(&mut |_, _| expected += 1);
        if expected != self.params.len() {
            return Err(CheckpointError::ShapeMismatch(format!(
                "config implies {} parameter blocks, checkpoint has {}",
                expected,
                self.params.len()
            )));
        }
        let mut idx = 0usize;
        let mut err: Option<CheckpointError> = None;
        model.visit_params_mut(&mut |name, t| {
            if err.is_some() {
                return;
            }
            let block = &self.params[idx];
            idx += 1;
            if block.name != name {
                err = Some(CheckpointError::ShapeMismatch(format!(
                    "expected block {:?}, found {:?}",
                    name, block.name
                )));
                return;
            }
            if block.shape != t.shape {
                err = Some(CheckpointError::ShapeMismatch(format!(
                    "block {:?} has shape {:?}, config expects {:?}",
                    name, block.shape, t.shape
                )));
                return;
            }
            t.data = block.values.clone();
        });
        match err {
            Some(e) => Err(e),
            None => Ok(model),
        }
    }

    pub fn restore_adam(&self) -> Option<AdamState> {
        self.adam.as_ref().map(|a| AdamState {
            t: a.t,
            m: a.m.clone(),
            v: a.v.clone(),
            skipped: 0,
        })
    }
}

// ── Writing ─────────────────────────────────────────────────────────────

fn write_bytes(w: &mut impl Write, bytes: &[u8]) -> Result<(), CheckpointError> {
    w.write_all(bytes)?;
    Ok(())
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<(), CheckpointError> {
    write_bytes(w, &v.to_le_bytes())
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<(), CheckpointError> {
    write_bytes(w, &v.to_le_bytes())
}

fn write_f64_slice(w: &mut impl Write, values: &[f64]) -> Result<(), CheckpointError> {
    write_u64(w, values.len() as u64)?;
    for v in values {
        write_bytes(w, &v.to_le_bytes())?;
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_bytes(&mut w, &MAGIC)?;
    write_u32(&mut w, ckpt.version)?;
    let config_json =
        serde_json::to_vec(&ckpt.config).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    write_u32(&mut w, config_json.len() as u32)?;
    write_bytes(&mut w, &config_json)?;

    write_u32(&mut w, ckpt.params.len() as u32)?;
    for block in &ckpt.params {
        write_u32(&mut w, block.name.len() as u32)?;
        write_bytes(&mut w, block.name.as_bytes())?;
        write_u32(&mut w, block.shape.len() as u32)?;
        for &d in &block.shape {
            write_u64(&mut w, d as u64)?;
        }
        write_f64_slice(&mut w, &block.values)?;
    }

    match &ckpt.adam {
        None => write_bytes(&mut w, &[0u8])?,
        Some(a) => {
            write_bytes(&mut w, &[1u8])?;
            write_u64(&mut w, a.t)?;
            write_u32(&mut w, a.m.len() as u32)?;
            for (m, v) in a.m.iter().zip(&a.v) {
                write_f64_slice(&mut w, m)?;
                write_f64_slice(&mut w, v)?;
            }
        }
    }
    write_u64(&mut w, ckpt.epoch)?;
    write_u64(&mut w, ckpt.rng_seed)?;
    write_u64(&mut w, (ckpt.rng_word_pos & u128::from(u64::MAX)) as u64)?;
    write_u64(&mut w, (ckpt.rng_word_pos >> 64) as u64)?;
    w.flush()?;
    Ok(())
}

// ── Reading ─────────────────────────────────────────────────────────────

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<(), CheckpointError> {
    r.read_exact(buf)
        .map_err(|_| CheckpointError::Corrupt("unexpected end of file".into()))
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64_slice(r: &mut impl Read) -> Result<Vec<f64>, CheckpointError> {
    let n = read_u64(r)? as usize;
    if n > (1 << 32) {
        return Err(CheckpointError::Corrupt(format!(
            "implausible block length {}",
            n
        )));
    }
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        read_exact(r, &mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let config_len = read_u32(&mut r)? as usize;
    let mut config_json = vec![0u8; config_len];
    read_exact(&mut r, &mut config_json)?;
    let config: RnpConfig = serde_json::from_slice(&config_json)
        .map_err(|e| CheckpointError::Corrupt(format!("config json: {}", e)))?;

    let n_params = read_u32(&mut r)? as usize;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        read_exact(&mut r, &mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| CheckpointError::Corrupt("non-utf8 parameter name".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let values = read_f64_slice(&mut r)?;
        if values.len() != shape.iter().product::<usize>() {
            return Err(CheckpointError::Corrupt(format!(
                "block {:?}: {} values for shape {:?}",
                name,
                values.len(),
                shape
            )));
        }
        params.push(ParamBlock {
            name,
            shape,
            values,
        });
    }

    let mut flag = [0u8; 1];
    read_exact(&mut r, &mut flag)?;
    let adam = if flag[0] == 1 {
        let t = read_u64(&mut r)?;
        let n = read_u32(&mut r)? as usize;
        let mut m = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            m.push(read_f64_slice(&mut r)?);
            v.push(read_f64_slice(&mut r)?);
        }
        Some(AdamSnapshot { t, m, v })
    } else {
        None
    };
    let epoch = read_u64(&mut r)?;
    let rng_seed = read_u64(&mut r)?;
    let lo = read_u64(&mut r)? as u128;
    let hi = read_u64(&mut r)? as u128;
    Ok(Checkpoint {
        version,
        config,
        params,
        adam,
        epoch,
        rng_seed,
        rng_word_pos: lo | (hi << 64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DecoderKind;
    use std::io::{Seek, SeekFrom};

    fn model() -> RnpModel {
        RnpModel::new(
            RnpConfig {
                input_dim: 1,
                target_dim: 1,
                hidden_size: 5,
                latent_dim: 3,
                encoder_layers: 1,
                bidirectional: true,
                decoder_kind: DecoderKind::Recurrent,
                use_deterministic_path: true,
                condition_on_time: false,
            },
            99,
        )
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.rnpc");
        let ckpt = Checkpoint::capture(&m, None, 7, 42, 1234);
        save_checkpoint(&path, &ckpt).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.epoch, 7);
        assert_eq!(loaded.rng_seed, 42);
        assert_eq!(loaded.rng_word_pos, 1234);
        assert_eq!(loaded.params, ckpt.params);

        let restored = loaded.restore_model().unwrap();
        let before = m.named_params();
        let after = restored.named_params();
        for ((na, ta), (nb, tb)) in before.iter().zip(&after) {
            assert_eq!(na, nb);
            assert!(ta
                .data
                .iter()
                .zip(&tb.data)
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn adam_state_round_trips() {
        let m = model();
        let adam = AdamState {
            t: 31,
            m: vec![vec![0.1; 4]],
            v: vec![vec![0.2; 4]],
            skipped: 0,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.rnpc");
        save_checkpoint(&path, &Checkpoint::capture(&m, Some(&adam), 1, 0, 0)).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        let restored = loaded.restore_adam().unwrap();
        assert_eq!(restored.t, 31);
        assert_eq!(restored.m, adam.m);
        assert_eq!(restored.v, adam.v);
    }

    #[test]
    fn corrupt_magic_is_detected() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.rnpc");
        save_checkpoint(&path, &Checkpoint::capture(&m, None, 0, 0, 0)).unwrap();
        let mut f = std::fs::OpenOptions::new().write(true).open(&path).unwrap();
        f.seek(SeekFrom::Start(0)).unwrap();
        f.write_all(b"XXXX").unwrap();
        drop(f);
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::BadMagic)
        ));
    }

    #[test]
    fn future_version_is_rejected() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.rnpc");
        let mut ckpt = Checkpoint::capture(&m, None, 0, 0, 0);
        ckpt.version = FORMAT_VERSION + 1;
        save_checkpoint(&path, &ckpt).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::Version { found, .. }) if found == FORMAT_VERSION + 1
        ));
    }

    #[test]
    fn truncated_file_is_detected() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.rnpc");
        save_checkpoint(&path, &Checkpoint::capture(&m, None, 0, 0, 0)).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::Corrupt(_))
        ));
    }

    #[test]
    fn shape_mismatch_against_config_is_detected() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.rnpc");
        let mut ckpt = Checkpoint::capture(&m, None, 0, 0, 0);
        ckpt.params[0].shape = vec![1, 1];
        ckpt.params[0].values = vec![0.0];
        save_checkpoint(&path, &ckpt).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert!(matches!(
            loaded.restore_model(),
            Err(CheckpointError::ShapeMismatch(_))
        ));
    }
}
