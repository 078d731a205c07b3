//! Binary checkpoint format.
//!
//! Layout (little-endian):
//!
//! ```text
//! "BNDLCKPT"              8 bytes
//! version                 u32 (= 1)
//! D, K, C                 u32 each
//! alpha_sparsity          f64
//! W_k, b_k, W_lambda, b_lambda, W1, W2   row-major f64 blocks
//! optimizer flag          u8 (0 or 1)
//!   [step u64, first moments, second moments]   when flag = 1
//! echo line count         u32
//!   [byte length u32, UTF-8 `key=value`]         per line
//! ```

use std::io::Write;
use std::path::Path;

use crate::error::{BndlError, Result};
use crate::model::{Dims, ModelParams};
use crate::training::{OptimizerState, TrainConfig};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"BNDLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

const RNG_KEY: &str = "rng_word_pos";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub optimizer: Option<OptimizerState>,
    pub config: TrainConfig,
    /// Position of the training RNG stream seeded by `config.seed`.
    pub rng_word_pos: u128,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let dims = self.params.dims();
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for d in [dims.features, dims.latent, dims.classes] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.params.alpha_sparsity.to_le_bytes());
        for v in self.params.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        match &self.optimizer {
            None => out.push(0),
            Some(st) => {
                out.push(1);
                out.extend_from_slice(&st.step.to_le_bytes());
                for v in st.first.iter().chain(&st.second) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let mut lines: Vec<String> = self
            .config
            .to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        lines.push(format!("{RNG_KEY}={}", self.rng_word_pos));
        out.extend_from_slice(&(lines.len() as u32).to_le_bytes());
        for line in &lines {
            out.extend_from_slice(&(line.len() as u32).to_le_bytes());
            out.extend_from_slice(line.as_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(r.error_at(0, "bad magic, expected BNDLCKPT"));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(r.error_at(8, &format!("unsupported version {version}")));
        }
        let d = r.u32("D")? as usize;
        let k = r.u32("K")? as usize;
        let c = r.u32("C")? as usize;
        let dims = Dims::new(d, k, c).map_err(|e| r.error_at(12, &e.to_string()))?;
        let alpha_pos = r.pos;
        let alpha = r.f64("alpha_sparsity")?;
        let n = dims.n_params();
        let values = r.f64s(n, "parameter blocks")?;
        let params = ModelParams::from_values(dims, values, alpha)
            .map_err(|e| r.error_at(alpha_pos as u64, &e.to_string()))?;
        let flag_pos = r.pos;
        let optimizer = match r.u8("optimizer flag")? {
            0 => None,
            1 => {
                let step = r.u64("optimizer step")?;
                let first = r.f64s(n, "first moments")?;
                let second = r.f64s(n, "second moments")?;
                Some(OptimizerState {
                    step,
                    first,
                    second,
                })
            }
            f => return Err(r.error_at(flag_pos as u64, &format!("bad optimizer flag {f}"))),
        };
        let n_lines = r.u32("echo line count")? as usize;
        let mut pairs = Vec::with_capacity(n_lines);
        for _ in 0..n_lines {
            let len = r.u32("echo line length")? as usize;
            let at = r.pos;
            let raw = r.take(len, "echo line")?;
            let line = std::str::from_utf8(raw)
                .map_err(|_| r.error_at(at as u64, "echo line is not UTF-8"))?;
            let (key, val) = line
                .split_once('=')
                .ok_or_else(|| r.error_at(at as u64, "echo line lacks `=`"))?;
            pairs.push((key.to_string(), val.to_string()));
        }
        if r.pos != bytes.len() {
            return Err(r.error_at(r.pos as u64, "trailing bytes after checkpoint"));
        }
        let mut rng_word_pos = 0u128;
        let mut cfg_pairs = Vec::new();
        for (key, val) in &pairs {
            if key == RNG_KEY {
                rng_word_pos = val.parse().map_err(|_| BndlError::Format {
                    offset: 0,
                    message: format!("bad {RNG_KEY} `{val}`"),
                })?;
            } else {
                cfg_pairs.push((key.as_str(), val.as_str()));
            }
        }
        let config = TrainConfig::from_pairs(cfg_pairs)?;
        Ok(Checkpoint {
            params,
            optimizer,
            config,
            rng_word_pos,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn error_at(&self, offset: u64, message: &str) -> BndlError {
        BndlError::Format {
            offset,
            message: message.to_string(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.error_at(
                self.pos as u64,
                &format!("truncated while reading {what} ({n} bytes needed)"),
            )),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(n.saturating_mul(8), what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| BndlError::io(path, e))?;
    f.write_all(&ckpt.to_bytes())
        .map_err(|e| BndlError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| BndlError::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;

    fn sample() -> Checkpoint {
        let dims = Dims::new(3, 2, 4).unwrap();
        let params = init_model(dims, 0.25, 4).unwrap();
        let mut st = OptimizerState::new(dims.n_params());
        st.step = 17;
        st.first
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = i as f64 * 0.1);
        st.second
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = 1.0 / (i + 1) as f64);
        Checkpoint {
            params,
            optimizer: Some(st),
            config: TrainConfig {
                alpha_sparsity: 0.25,
                ..Default::default()
            },
            rng_word_pos: 123_456_789_012_345,
        }
    }

    #[test]
    fn bytes_round_trip() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn truncation_is_an_error() {
        let bytes = sample().to_bytes();
        for cut in [0, 5, 8, 20, 40, bytes.len() - 1] {
            match Checkpoint::from_bytes(&bytes[..cut]) {
                Err(BndlError::Format { .. }) => {}
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(BndlError::Format { offset: 0, .. })
        ));
        let mut bytes = sample().to_bytes();
        bytes[8] = 2;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(BndlError::Format { offset: 8, .. })
        ));
    }

    #[test]
    fn no_optimizer_state() {
        let mut c = sample();
        c.optimizer = None;
        assert_eq!(Checkpoint::from_bytes(&c.to_bytes()).unwrap(), c);
    }
}
