//! `.tlm` checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "TLM\0"  u32 version  u32 feature_dim  u64 hash_seed
//! u32 vocab_len  { u32 byte_len  utf8 bytes } * vocab_len
//! u32 rows  u32 cols  f64 * (rows * cols)   row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Policy, PolicyError, TinyLm, Vocab};

pub const TLM_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"TLM\0";

fn io_err(e: std::io::Error) -> PolicyError {
    PolicyError::Checkpoint(e.to_string())
}

pub fn write_tlm<W: Write>(lm: &TinyLm, mut out: W) -> Result<(), PolicyError> {
    let mut buf = Vec::with_capacity(64 + lm.params().len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&TLM_FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(lm.feature_dim() as u32).to_le_bytes());
    buf.extend_from_slice(&lm.hash_seed().to_le_bytes());
    let tokens = lm.vocab().tokens();
    buf.extend_from_slice(&(tokens.len() as u32).to_le_bytes());
    for t in tokens {
        buf.extend_from_slice(&(t.len() as u32).to_le_bytes());
        buf.extend_from_slice(t.as_bytes());
    }
    buf.extend_from_slice(&(lm.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(lm.cols() as u32).to_le_bytes());
    for w in lm.params() {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    out.write_all(&buf).map_err(io_err)?;
    out.flush().map_err(io_err)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PolicyError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| PolicyError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, PolicyError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, PolicyError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_tlm<R: Read>(mut input: R) -> Result<TinyLm, PolicyError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(io_err)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(PolicyError::Checkpoint("not a .tlm file".into()));
    }
    let version = c.u32()?;
    if version != TLM_FORMAT_VERSION {
        return Err(PolicyError::Checkpoint(format!("unsupported version {version}")));
    }
    let feature_dim = c.u32()? as usize;
    let hash_seed = c.u64()?;
    let n_tokens = c.u32()? as usize;
    let mut tokens = Vec::with_capacity(n_tokens.min(1 << 16));
    for _ in 0..n_tokens {
        let len = c.u32()? as usize;
        let raw = c.take(len)?;
        let s = std::str::from_utf8(raw).map_err(|e| PolicyError::Checkpoint(format!("token is not UTF-8: {e}")))?;
        tokens.push(s.to_owned());
    }
    let vocab = Vocab::from_tokens(tokens)?;
    let rows = c.u32()? as usize;
    let cols = c.u32()? as usize;
    if rows != vocab.len() || cols != feature_dim + vocab.len() {
        return Err(PolicyError::Checkpoint(format!(
            "matrix is {rows}x{cols}, expected {}x{}",
            vocab.len(),
            feature_dim + vocab.len()
        )));
    }
    let raw = c.take(rows * cols * 8)?;
    if c.pos != bytes.len() {
        return Err(PolicyError::Checkpoint(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    let weights = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    TinyLm::from_parts(vocab, feature_dim, hash_seed, weights)
}

impl TinyLm {
    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        let f = File::create(path).map_err(io_err)?;
        write_tlm(self, BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let f = File::open(path).map_err(io_err)?;
        read_tlm(BufReader::new(f))
    }
}
