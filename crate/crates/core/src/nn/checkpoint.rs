//! Binary parameter checkpoints.
//!
//! Layout: the 8-byte magic `DGQNPARM`, a little-endian `u32` format version,
//! a `u32` layer count, then per layer the weight shape (`u32` rank followed
//! by `u32` extents), the bias shape in the same form, the weight values and
//! the bias values as little-endian `f64`.

use std::path::Path;

use super::{LayerParams, NetworkParams, NnError, Tensor};

pub const MAGIC: &[u8; 8] = b"DGQNPARM";
pub const FORMAT_VERSION: u32 = 1;

fn put_shape(out: &mut Vec<u8>, shape: &[usize]) {
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
}

pub fn encode_params(params: &NetworkParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.num_params() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.layers.len() as u32).to_le_bytes());
    for layer in &params.layers {
        put_shape(&mut out, layer.weights.shape());
        put_shape(&mut out, layer.bias.shape());
        for v in layer.weights.data().iter().chain(layer.bias.data()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], NnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| NnError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn shape(&mut self) -> Result<Vec<usize>, NnError> {
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(NnError::Checkpoint(format!("implausible tensor rank {rank}")));
        }
        (0..rank).map(|_| self.u32().map(|d| d as usize)).collect()
    }

    fn tensor(&mut self, shape: &[usize]) -> Result<Tensor, NnError> {
        let n: usize = shape.iter().product();
        let raw = self.take(n.checked_mul(8).ok_or_else(|| NnError::Checkpoint("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::from_vec(shape, data)
    }
}

pub fn decode_params(bytes: &[u8]) -> Result<NetworkParams, NnError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(NnError::Checkpoint(format!("unsupported format version {version}")));
    }
    let count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let ws = r.shape()?;
        let bs = r.shape()?;
        let weights = r.tensor(&ws)?;
        let bias = r.tensor(&bs)?;
        layers.push(LayerParams { weights, bias });
    }
    if r.pos != bytes.len() {
        return Err(NnError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(NetworkParams { layers })
}

pub fn save_params(params: &NetworkParams, path: &Path) -> Result<(), NnError> {
    std::fs::write(path, encode_params(params)).map_err(|e| NnError::Io(path.display().to_string(), e))
}

pub fn load_params(path: &Path) -> Result<NetworkParams, NnError> {
    let bytes = std::fs::read(path).map_err(|e| NnError::Io(path.display().to_string(), e))?;
    decode_params(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, NetworkSpec};
    use rand::SeedableRng;

    #[test]
    fn round_trip_is_byte_exact() {
        let params = init_params(&NetworkSpec::default(), &mut rand_chacha::ChaCha8Rng::seed_from_u64(5)).unwrap();
        let bytes = encode_params(&params);
        let back = decode_params(&bytes).unwrap();
        assert_eq!(back, params);
        assert_eq!(encode_params(&back), bytes);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let params = init_params(&NetworkSpec::default(), &mut rand_chacha::ChaCha8Rng::seed_from_u64(5)).unwrap();
        let bytes = encode_params(&params);
        assert!(decode_params(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_params(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_params(&extra).is_err());
    }
}
