//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"LVCK"
//! version u32 (currently 1)
//! hlen    u32, byte length of the header
//! header  UTF-8 `key=value` lines: config, config_digest, epoch,
//!         adam_step, seed, lr, beta1, beta2, epsilon, pos_weight
//! body    raw f32 parameter tensors in declaration order, then the Adam
//!         first moments in the same order, then the second moments
//! ```
//!
//! The header carries the architecture as canonical text plus its FNV-1a
//! digest; loads verify the digest, the version, and exact body length, so
//! a truncated or mismatched file never yields a partial model.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{build_model, Model, NetworkConfig};
use crate::optim::{AdamConfig, AdamState};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LVCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume or evaluate a run.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub adam: AdamState<f32>,
    pub adam_config: AdamConfig,
    /// Completed epochs.
    pub epoch: u64,
    /// Master seed; together with the epoch this pins every RNG stream.
    pub seed: u64,
    pub pos_weight: Option<f64>,
}

impl Checkpoint {
    /// Error unless the stored architecture matches `expected`.
    pub fn require_config(&self, expected: &NetworkConfig) -> Result<()> {
        let got = self.model.config.canonical_text();
        let want = expected.canonical_text();
        if got != want {
            return Err(Error::Checkpoint(format!(
                "config digest mismatch: checkpoint holds {:016x}, expected {:016x}",
                fnv1a64(got.as_bytes()),
                fnv1a64(want.as_bytes())
            )));
        }
        Ok(())
    }
}

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let config_text = ckpt.model.config.canonical_text();
    let header = format!(
        "config={}\nconfig_digest={:016x}\nepoch={}\nadam_step={}\nseed={}\nlr={}\nbeta1={}\nbeta2={}\nepsilon={}\npos_weight={}\n",
        config_text,
        fnv1a64(config_text.as_bytes()),
        ckpt.epoch,
        ckpt.adam.step,
        ckpt.seed,
        ckpt.adam_config.lr,
        ckpt.adam_config.beta1,
        ckpt.adam_config.beta2,
        ckpt.adam_config.epsilon,
        match ckpt.pos_weight {
            Some(w) => w.to_string(),
            None => "none".to_string(),
        },
    );

    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let mut write = |bytes: &[u8]| out.write_all(bytes).map_err(|e| Error::io(path, e));
    write(CHECKPOINT_MAGIC)?;
    write(&CHECKPOINT_VERSION.to_le_bytes())?;
    write(&(header.len() as u32).to_le_bytes())?;
    write(header.as_bytes())?;
    for tensor in ckpt.model.param_tensors() {
        for &v in tensor.data() {
            write(&v.to_le_bytes())?;
        }
    }
    for tensor in ckpt.adam.m.iter().chain(ckpt.adam.v.iter()) {
        for &v in tensor.data() {
            write(&v.to_le_bytes())?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Advance `pos` by `n` and return that window, or `None` past the end.
fn take_slice<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Option<&'a [u8]> {
    let end = pos.checked_add(n).filter(|&e| e <= bytes.len())?;
    let slice = &bytes[*pos..end];
    *pos = end;
    Some(slice)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
    let mut pos = 0usize;

    let magic = take_slice(&bytes, &mut pos, 4).ok_or_else(|| corrupt("truncated file"))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic, not a checkpoint file"));
    }
    let version_bytes =
        take_slice(&bytes, &mut pos, 4).ok_or_else(|| corrupt("truncated file"))?;
    let version = u32::from_le_bytes(version_bytes.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(&format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let hlen_bytes = take_slice(&bytes, &mut pos, 4).ok_or_else(|| corrupt("truncated file"))?;
    let hlen = u32::from_le_bytes(hlen_bytes.try_into().unwrap()) as usize;
    let header_bytes =
        take_slice(&bytes, &mut pos, hlen).ok_or_else(|| corrupt("truncated header"))?;
    let header =
        std::str::from_utf8(header_bytes).map_err(|_| corrupt("header is not UTF-8"))?;

    let mut fields = std::collections::HashMap::new();
    for line in header.lines() {
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| corrupt(&format!("malformed header line '{line}'")))?;
        fields.insert(k.to_string(), v.to_string());
    }
    let field = |k: &str| -> Result<&str> {
        fields
            .get(k)
            .map(|s| s.as_str())
            .ok_or_else(|| corrupt(&format!("header missing '{k}'")))
    };
    let parse_u64 = |k: &str| -> Result<u64> {
        field(k)?
            .parse()
            .map_err(|_| corrupt(&format!("header field '{k}' is not an integer")))
    };
    let parse_f64 = |k: &str| -> Result<f64> {
        field(k)?
            .parse()
            .map_err(|_| corrupt(&format!("header field '{k}' is not a number")))
    };

    let config_text = field("config")?;
    let stored_digest = u64::from_str_radix(field("config_digest")?, 16)
        .map_err(|_| corrupt("config_digest is not hex"))?;
    if fnv1a64(config_text.as_bytes()) != stored_digest {
        return Err(corrupt("config digest mismatch"));
    }
    let config = NetworkConfig::from_canonical_text(config_text)?;
    let epoch = parse_u64("epoch")?;
    let step = parse_u64("adam_step")?;
    let seed = parse_u64("seed")?;
    let adam_config = AdamConfig {
        lr: parse_f64("lr")?,
        beta1: parse_f64("beta1")?,
        beta2: parse_f64("beta2")?,
        epsilon: parse_f64("epsilon")?,
    };
    let pos_weight = match field("pos_weight")? {
        "none" => None,
        v => Some(
            v.parse()
                .map_err(|_| corrupt("pos_weight is not a number"))?,
        ),
    };

    // Shapes come from the config; build_model allocates them, the body
    // overwrites every value.
    let mut model: Model<f32> = build_model(&config, 0)?;
    let mut adam = AdamState::new(&model);
    adam.step = step;

    let fill = |pos: &mut usize, tensor_data: &mut [f32]| -> Option<()> {
        let raw = take_slice(&bytes, pos, 4 * tensor_data.len())?;
        for (dst, chunk) in tensor_data.iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().unwrap());
        }
        Some(())
    };
    for tensor in model.param_tensors_mut() {
        fill(&mut pos, tensor.data_mut()).ok_or_else(|| corrupt("truncated parameter block"))?;
    }
    for tensor in adam.m.iter_mut().chain(adam.v.iter_mut()) {
        fill(&mut pos, tensor.data_mut()).ok_or_else(|| corrupt("truncated optimizer block"))?;
    }
    if pos != bytes.len() {
        return Err(corrupt(&format!(
            "{} trailing bytes after the optimizer block",
            bytes.len() - pos
        )));
    }

    Ok(Checkpoint {
        model,
        adam,
        adam_config,
        epoch,
        seed,
        pos_weight,
    })
}
