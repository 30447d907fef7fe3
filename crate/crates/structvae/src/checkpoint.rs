//! Versioned binary checkpoint.
//!
//! ```text
//! magic "SVAECKPT" | version u32 | config hash [32]
//! config text: len u64, utf-8 bytes
//! spec: input_dim, num_classes, style_dim, hidden_width (u64), estimator u8,
//!       classifier weight f64
//! step u64 | adam t u64 | epoch accumulator: steps u64, 5 × f64
//! parameters, Adam m, Adam v: 12 tensors each, f64 in spec shape order
//! sha-256 of everything above [32]
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use structvae_core::optim::AdamState;
use structvae_core::{EstimatorMode, LossBreakdown, ModelSpec, StructuredVAE, Tensor};

use crate::config::{hex, RunConfig};
use crate::metrics::EpochAccumulator;

pub const MAGIC: &[u8; 8] = b"SVAECKPT";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("truncated checkpoint: {expected} bytes needed, {found} present")]
    Length { expected: usize, found: usize },
    #[error("not a checkpoint (bad magic)")]
    Magic,
    #[error("checkpoint version {found} is not supported (expected {VERSION})")]
    Version { found: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint config hash {found} does not match the run configuration {expected}")]
    Incompatible { found: String, expected: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    /// Full resolved configuration of the run that wrote the checkpoint.
    pub config_text: String,
    pub model: StructuredVAE,
    pub adam: AdamState,
    pub step: u64,
    pub epoch_acc: EpochAccumulator,
}

fn estimator_code(e: EstimatorMode) -> u8 {
    match e {
        EstimatorMode::Marginalize => 0,
        EstimatorMode::Plugin => 1,
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let spec = self.model.spec();
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.extend_from_slice(&self.config_hash);
        b.extend_from_slice(&(self.config_text.len() as u64).to_le_bytes());
        b.extend_from_slice(self.config_text.as_bytes());
        for d in [spec.input_dim, spec.num_classes, spec.style_dim, spec.hidden_width] {
            b.extend_from_slice(&(d as u64).to_le_bytes());
        }
        b.push(estimator_code(spec.estimator));
        b.extend_from_slice(&spec.classifier_weight.to_le_bytes());
        b.extend_from_slice(&self.step.to_le_bytes());
        b.extend_from_slice(&self.adam.t.to_le_bytes());
        let s = &self.epoch_acc.sums;
        b.extend_from_slice(&self.epoch_acc.steps.to_le_bytes());
        for v in [s.recon, s.kl_gauss, s.cat_term, s.classifier, s.total] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        for t in self.model.params().iter().chain(&self.adam.m).chain(&self.adam.v) {
            for v in t.data() {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&b);
        b.extend_from_slice(&digest);
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(CheckpointError::Magic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version { found: version });
        }
        let config_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let text_len = r.u64()? as usize;
        let config_text = String::from_utf8(r.take(text_len)?.to_vec())
            .map_err(|_| CheckpointError::Corrupt("config text is not utf-8".into()))?;
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u64()? as usize;
        }
        let estimator = match r.take(1)?[0] {
            0 => EstimatorMode::Marginalize,
            1 => EstimatorMode::Plugin,
            c => return Err(CheckpointError::Corrupt(format!("estimator code {c}"))),
        };
        let spec = ModelSpec {
            input_dim: dims[0],
            num_classes: dims[1],
            style_dim: dims[2],
            hidden_width: dims[3],
            estimator,
            classifier_weight: r.f64()?,
        };
        spec.validate()
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let step = r.u64()?;
        let adam_t = r.u64()?;
        let acc_steps = r.u64()?;
        let sums = LossBreakdown {
            recon: r.f64()?,
            kl_gauss: r.f64()?,
            cat_term: r.f64()?,
            classifier: r.f64()?,
            total: r.f64()?,
        };

        let shapes = spec.param_shapes();
        let payload: usize = shapes.iter().map(|[a, b]| a * b).sum::<usize>() * 3 * 8;
        let expected = r.pos + payload + DIGEST_LEN;
        if bytes.len() < expected {
            return Err(CheckpointError::Length {
                expected,
                found: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(CheckpointError::Corrupt(format!(
                "{} trailing bytes",
                bytes.len() - expected
            )));
        }
        let body = &bytes[..expected - DIGEST_LEN];
        if Sha256::digest(body).as_slice() != &bytes[expected - DIGEST_LEN..] {
            return Err(CheckpointError::Corrupt("checksum mismatch".into()));
        }

        let mut tensors = || -> Result<Vec<Tensor>, CheckpointError> {
            shapes
                .iter()
                .map(|&[rows, cols]| {
                    let data = (0..rows * cols).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
                    let t = if rows == 1 {
                        Tensor::new([cols], data)
                    } else {
                        Tensor::new([rows, cols], data)
                    };
                    t.map_err(|e| CheckpointError::Corrupt(e.to_string()))
                })
                .collect()
        };
        let params = tensors()?;
        let m = tensors()?;
        let v = tensors()?;
        let model = StructuredVAE::from_params(spec, params)
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        Ok(Checkpoint {
            config_hash,
            config_text,
            model,
            adam: AdamState { m, v, t: adam_t },
            step,
            epoch_acc: EpochAccumulator {
                steps: acc_steps,
                sums,
            },
        })
    }

    /// Embedded configuration, checked against the stored hash.
    pub fn config(&self) -> Result<RunConfig, CheckpointError> {
        let cfg = RunConfig::parse(&self.config_text)
            .map_err(|e| CheckpointError::Corrupt(format!("embedded config: {e}")))?;
        if cfg.hash() != self.config_hash {
            return Err(CheckpointError::Corrupt(
                "embedded config does not match its hash".into(),
            ));
        }
        Ok(cfg)
    }

    pub fn ensure_compatible(&self, cfg: &RunConfig) -> Result<(), CheckpointError> {
        let expected = cfg.hash();
        if expected != self.config_hash {
            return Err(CheckpointError::Incompatible {
                found: hex(&self.config_hash),
                expected: hex(&expected),
            });
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Length {
            expected: self.pos.saturating_add(n),
            found: self.bytes.len(),
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Writes to a sibling temp file, syncs, then renames over `path`.
pub fn save_checkpoint(c: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io {
        path: path.to_owned(),
        source,
    };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(&c.to_bytes()).map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    fs::rename(&tmp, path).map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_owned(),
        source,
    })?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use structvae_core::gradcheck::{random_tiny_model, tiny_spec};

    fn sample() -> Checkpoint {
        let cfg = RunConfig::default();
        let model = random_tiny_model(3, tiny_spec(EstimatorMode::Plugin)).unwrap();
        let mut adam = AdamState::new(model.params());
        adam.t = 7;
        adam.m[0] = model.params()[0].map(|v| v * 0.5);
        let mut epoch_acc = EpochAccumulator::default();
        epoch_acc.add(&LossBreakdown { recon: 0.1 + 0.2, total: 1e-300, ..Default::default() });
        Checkpoint {
            config_hash: cfg.hash(),
            config_text: cfg.to_text(),
            model,
            adam,
            step: 7,
            epoch_acc,
        }
    }

    #[test]
    fn round_trip_is_lossless() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
        back.config().unwrap();
    }

    #[test]
    fn save_load_save_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        save_checkpoint(&sample(), &a).unwrap();
        save_checkpoint(&load_checkpoint(&a).unwrap(), &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert!(!dir.path().join("a.ckpt.tmp").exists());
    }

    #[test]
    fn truncation_is_a_length_error() {
        let bytes = sample().to_bytes();
        for cut in [1, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(CheckpointError::Length { .. })),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn corruption_and_versioning() {
        let mut bytes = sample().to_bytes();
        let n = bytes.len();
        bytes[n - 100] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::Corrupt(_))));
        let mut bytes = sample().to_bytes();
        bytes[8] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::Version { found: 9 })));
        assert!(matches!(Checkpoint::from_bytes(b"NOTACKPTxxxx"), Err(CheckpointError::Magic)));
    }

    #[test]
    fn config_hash_mismatch() {
        let c = sample();
        let mut other = RunConfig::default();
        other.set("seed", "99").unwrap();
        assert!(matches!(c.ensure_compatible(&other), Err(CheckpointError::Incompatible { .. })));
        c.ensure_compatible(&RunConfig::default()).unwrap();
    }
}
