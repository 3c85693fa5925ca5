use std::io::{Read, Write};
use std::path::Path;

use super::params::{PolicyParams, PolicyShape};
use super::vocab::Vocabulary;

const MAGIC: &[u8; 8] = b"TSRPOLCY";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a policy checkpoint")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint was written for a different vocabulary")]
    VocabMismatch,
    #[error("checkpoint shape {found:?} does not match vocabulary size {vocab}")]
    ShapeMismatch { found: PolicyShape, vocab: usize },
    #[error("checkpoint is truncated or has trailing bytes")]
    Length,
}

/// Serializes parameters with a shape header and the vocabulary hash.
/// Layout: magic, version, V, F, d, d_h (u32 LE), 32-byte hash, then every
/// parameter as f64 LE.
pub fn encode_checkpoint(params: &PolicyParams, vocab: &Vocabulary) -> Vec<u8> {
    let s = params.shape();
    let mut out = Vec::with_capacity(8 + 20 + 32 + 8 * params.len());
    out.extend_from_slice(MAGIC);
    for n in [
        CHECKPOINT_VERSION as usize,
        s.vocab,
        s.features,
        s.embed,
        s.hidden,
    ] {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    out.extend_from_slice(&vocab.fingerprint());
    for x in params.as_slice() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

/// Inverse of [`encode_checkpoint`]; refuses data written for another vocabulary.
pub fn decode_checkpoint(
    bytes: &[u8],
    vocab: &Vocabulary,
) -> Result<PolicyParams, CheckpointError> {
    let mut r = bytes;
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| CheckpointError::BadMagic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut header = [0u32; 5];
    for h in &mut header {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(|_| CheckpointError::Length)?;
        *h = u32::from_le_bytes(b);
    }
    if header[0] != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(header[0]));
    }
    let mut hash = [0u8; 32];
    r.read_exact(&mut hash)
        .map_err(|_| CheckpointError::Length)?;
    if hash != vocab.fingerprint() {
        return Err(CheckpointError::VocabMismatch);
    }
    let shape = PolicyShape::new(
        header[1] as usize,
        header[2] as usize,
        header[3] as usize,
        header[4] as usize,
    );
    if shape.vocab != vocab.len() {
        return Err(CheckpointError::ShapeMismatch {
            found: shape,
            vocab: vocab.len(),
        });
    }
    if r.len() != 8 * shape.param_count() {
        return Err(CheckpointError::Length);
    }
    let data = r
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(PolicyParams::from_vec(shape, data).expect("length checked"))
}

pub fn save_checkpoint(
    path: &Path,
    params: &PolicyParams,
    vocab: &Vocabulary,
) -> Result<(), CheckpointError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_checkpoint(params, vocab))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, vocab: &Vocabulary) -> Result<PolicyParams, CheckpointError> {
    decode_checkpoint(&std::fs::read(path)?, vocab)
}
