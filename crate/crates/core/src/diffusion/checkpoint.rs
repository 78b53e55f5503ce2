//! Versioned binary checkpoint for a trained denoiser.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! offset  size   field
//! 0       8      magic  b"ENTSCKPT"
//! 8       4      format version (u32, currently 1)
//! 12      4      float width in bytes (u32, 4 or 8)
//! 16      8      optimizer step (u64)
//! 24      8      training token count T (u64)
//! 32      8×5    patch, d_model, d_key, mlp_hidden, blocks (u64)
//! 72      8      diffusion steps (u64)
//! 80      8      beta_start (f64)
//! 88      8      beta_end (f64)
//! 96      8×B    per-site training token count, one per block (u64)
//! ...     4      tensor count (u32)
//! ...            shape table: name length (u32), UTF-8 name, rows (u64), cols (u64)
//! ...            tensor data in table order, row-major, at the float width
//! ```
//!
//! Optimizer velocity and loss history are not stored.

use super::model::{DenoiserConfig, DenoiserParams};
use super::schedule::make_schedule;
use super::train::TrainState;

pub const MAGIC: &[u8; 8] = b"ENTSCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CheckpointError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {VERSION})")]
    VersionMismatch { found: u32 },
    #[error("unsupported float width {0}")]
    BadFloatWidth(u32),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("{0} trailing bytes after tensor data")]
    TrailingBytes(usize),
    #[error("invalid checkpoint contents: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FloatWidth {
    F32,
    F64,
}

impl FloatWidth {
    fn bytes(self) -> u32 {
        match self {
            FloatWidth::F32 => 4,
            FloatWidth::F64 => 8,
        }
    }
}

pub fn encode(state: &TrainState, width: FloatWidth) -> Vec<u8> {
    let p = &state.params;
    let c = p.config;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&width.bytes().to_le_bytes());
    for v in [
        state.step,
        state.train_tokens(),
        c.patch,
        c.d_model,
        c.d_key,
        c.mlp_hidden,
        c.blocks,
        state.schedule.steps(),
    ] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.extend_from_slice(&state.schedule.beta_start().to_le_bytes());
    out.extend_from_slice(&state.schedule.beta_end().to_le_bytes());
    for b in &p.blocks {
        out.extend_from_slice(&(b.train_tokens as u64).to_le_bytes());
    }
    let mut table = Vec::new();
    p.for_each_tensor(|name, m| table.push((name.to_string(), m.rows(), m.cols())));
    out.extend_from_slice(&(table.len() as u32).to_le_bytes());
    for (name, rows, cols) in &table {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(*rows as u64).to_le_bytes());
        out.extend_from_slice(&(*cols as u64).to_le_bytes());
    }
    p.for_each_tensor(|_, m| {
        for &v in m.as_slice() {
            match width {
                FloatWidth::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                FloatWidth::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    });
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .ok_or(CheckpointError::Truncated(self.pos))?;
        let s = self
            .buf
            .get(self.pos..end)
            .ok_or(CheckpointError::Truncated(self.pos))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn usize(&mut self) -> Result<usize, CheckpointError> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| CheckpointError::Invalid(format!("count {v} too large")))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f32(&mut self) -> Result<f32, CheckpointError> {
        Ok(f32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

pub fn decode(bytes: &[u8]) -> Result<TrainState, CheckpointError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch { found: version });
    }
    let width = match r.u32()? {
        4 => FloatWidth::F32,
        8 => FloatWidth::F64,
        other => return Err(CheckpointError::BadFloatWidth(other)),
    };
    let step = r.usize()?;
    let train_tokens = r.usize()?;
    let config = DenoiserConfig {
        patch: r.usize()?,
        d_model: r.usize()?,
        d_key: r.usize()?,
        mlp_hidden: r.usize()?,
        blocks: r.usize()?,
    };
    let invalid = |e: super::DiffusionError| CheckpointError::Invalid(e.to_string());
    config.validate().map_err(invalid)?;
    if config.blocks > 1024 {
        return Err(CheckpointError::Invalid("implausible block count".into()));
    }
    let diffusion_steps = r.usize()?;
    let beta_start = r.f64()?;
    let beta_end = r.f64()?;
    let schedule = make_schedule(diffusion_steps, beta_start, beta_end).map_err(invalid)?;
    let site_tokens = (0..config.blocks)
        .map(|_| r.usize())
        .collect::<Result<Vec<_>, _>>()?;

    let mut params = DenoiserParams::zeros(config, 2).map_err(invalid)?;
    for (b, t) in params.blocks.iter_mut().zip(site_tokens) {
        b.train_tokens = t;
    }
    let mut expected = Vec::new();
    params.for_each_tensor(|name, m| expected.push((name.to_string(), m.rows(), m.cols())));
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(CheckpointError::Invalid(format!(
            "{count} tensors, expected {}",
            expected.len()
        )));
    }
    for (name, rows, cols) in &expected {
        let len = r.u32()? as usize;
        let found = r.take(len)?;
        let found_rows = r.usize()?;
        let found_cols = r.usize()?;
        if found != name.as_bytes() || (found_rows, found_cols) != (*rows, *cols) {
            return Err(CheckpointError::Invalid(format!(
                "shape table entry for {name} does not match the config"
            )));
        }
    }
    let mut flat = Vec::with_capacity(params.num_params());
    for _ in 0..params.num_params() {
        flat.push(match width {
            FloatWidth::F32 => r.f32()? as f64,
            FloatWidth::F64 => r.f64()?,
        });
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
    }
    params.set_flat(&flat).map_err(invalid)?;
    params.validate().map_err(invalid)?;
    if train_tokens < 2 {
        return Err(CheckpointError::Invalid(
            "training token count below 2".into(),
        ));
    }
    Ok(TrainState::new(params, schedule, step, train_tokens))
}
