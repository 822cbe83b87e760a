//! Binary checkpoints.
//!
//! Layout, all little-endian: magic `DMPG`, u32 version, then u32 words
//! `seed_lo seed_hi iteration populations`, then per population
//! `head activation input_dim output_dim num_hidden hidden.. log_std_lo log_std_hi param_len`,
//! then every population's parameters as f64.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Activation, MlpSpec, ParamVector};
use crate::policy::{ActionHead, PolicySpec};

pub const MAGIC: &[u8; 4] = b"DMPG";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    /// Completed training iterations.
    pub iteration: u32,
    pub policies: Vec<PolicySpec>,
    pub params: Vec<ParamVector>,
}

impl Checkpoint {
    pub fn validate(&self) -> Result<()> {
        if self.policies.is_empty() || self.policies.len() != self.params.len() {
            return Err(Error::Format(format!(
                "{} policies for {} parameter vectors",
                self.policies.len(),
                self.params.len()
            )));
        }
        for (p, v) in self.policies.iter().zip(&self.params) {
            if p.num_params() != v.len() {
                return Err(Error::dims("checkpoint parameters", p.num_params(), v.len()));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut words: Vec<u32> = vec![
            VERSION,
            self.seed as u32,
            (self.seed >> 32) as u32,
            self.iteration,
            word(self.policies.len())?,
        ];
        for p in &self.policies {
            let (head, log_std) = match p.head {
                ActionHead::Gaussian { initial_log_std, .. } => (0, initial_log_std.to_bits()),
                ActionHead::Categorical { .. } => (1, 0),
            };
            let activation = match p.net.activation {
                Activation::Relu => 0,
                Activation::Tanh => 1,
            };
            words.extend([head, activation, word(p.net.input_dim)?, word(p.net.output_dim)?]);
            words.push(word(p.net.hidden_dims.len())?);
            for &h in &p.net.hidden_dims {
                words.push(word(h)?);
            }
            words.extend([log_std as u32, (log_std >> 32) as u32, word(p.num_params())?]);
        }
        let floats: usize = self.params.iter().map(|v| v.len()).sum();
        let mut out = Vec::with_capacity(4 + 4 * words.len() + 8 * floats);
        out.extend_from_slice(MAGIC);
        for w in words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        for v in &self.params {
            for x in v.as_slice() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let seed = r.u32()? as u64 | (r.u32()? as u64) << 32;
        let iteration = r.u32()?;
        let populations = r.u32()? as usize;
        let mut policies = Vec::new();
        for _ in 0..populations {
            let head = r.u32()?;
            let activation = match r.u32()? {
                0 => Activation::Relu,
                1 => Activation::Tanh,
                a => return Err(Error::Format(format!("unknown activation code {a}"))),
            };
            let input_dim = r.u32()? as usize;
            let output_dim = r.u32()? as usize;
            let num_hidden = r.u32()? as usize;
            let hidden = (0..num_hidden).map(|_| r.u32().map(|h| h as usize)).collect::<Result<Vec<_>>>()?;
            let log_std = f64::from_bits(r.u32()? as u64 | (r.u32()? as u64) << 32);
            let param_len = r.u32()? as usize;
            let net = MlpSpec::new(input_dim, hidden, output_dim, activation)
                .map_err(|e| Error::Format(e.to_string()))?;
            let policy = match head {
                0 => PolicySpec::gaussian(net, log_std),
                1 => PolicySpec::categorical(net),
                h => return Err(Error::Format(format!("unknown head code {h}"))),
            }
            .map_err(|e| Error::Format(e.to_string()))?;
            if policy.num_params() != param_len {
                return Err(Error::Format(format!(
                    "header lists {param_len} parameters, spec needs {}",
                    policy.num_params()
                )));
            }
            policies.push(policy);
        }
        let mut params = Vec::with_capacity(populations);
        for p in &policies {
            let raw = r.take(8 * p.num_params())?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            params.push(ParamVector::new(values));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let ckpt = Checkpoint {
            seed,
            iteration,
            policies,
            params,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }
}

fn word(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{n} does not fit in a u32 header field")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("truncated file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4-byte slice")))
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, ckpt.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
