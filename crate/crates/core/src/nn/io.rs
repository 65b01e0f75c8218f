//! Parameter files: `LUMITRACK-NN`, u32 format version, 32-byte spec hash,
//! u8 mode, then per layer u32 array counts and u64-length-prefixed
//! little-endian f64 arrays (weights, then buffers).

use super::{LayerParams, Mode, NetworkParams, NetworkSpec};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 12] = b"LUMITRACK-NN";
pub const FORMAT_VERSION: u32 = 1;

pub fn save_params(params: &NetworkParams, spec: &NetworkSpec) -> Result<Vec<u8>> {
    params.check(spec)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&spec.hash());
    out.push(match params.mode {
        Mode::Training => 0,
        Mode::Inference => 1,
    });
    out.extend_from_slice(&(params.layers.len() as u32).to_le_bytes());
    for layer in &params.layers {
        out.extend_from_slice(&(layer.weights.len() as u32).to_le_bytes());
        out.extend_from_slice(&(layer.buffers.len() as u32).to_le_bytes());
        for array in layer.weights.iter().chain(&layer.buffers) {
            out.extend_from_slice(&(array.len() as u64).to_le_bytes());
            for v in array {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("parameter file truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn array(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("array length overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

pub fn load_params(bytes: &[u8], spec: &NetworkSpec) -> Result<NetworkParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
        return Err(Error::Format("not a LUMITRACK-NN parameter file".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("format version {version}, expected {FORMAT_VERSION}")));
    }
    let found = r.take(32)?;
    let expected = spec.hash();
    if found != expected {
        return Err(Error::Format(format!(
            "spec hash mismatch: expected {}, found {}",
            hex::encode(expected),
            hex::encode(found)
        )));
    }
    let mode = match r.take(1)?[0] {
        0 => Mode::Training,
        1 => Mode::Inference,
        m => return Err(Error::Format(format!("unknown mode byte {m}"))),
    };
    let n_layers = r.u32()? as usize;
    if n_layers != spec.layers.len() {
        return Err(Error::Format(format!("{n_layers} layers in file, spec has {}", spec.layers.len())));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let (nw, nb) = (r.u32()? as usize, r.u32()? as usize);
        if nw > 4 || nb > 4 {
            return Err(Error::Format("implausible array count".into()));
        }
        let weights = (0..nw).map(|_| r.array()).collect::<Result<Vec<_>>>()?;
        let buffers = (0..nb).map(|_| r.array()).collect::<Result<Vec<_>>>()?;
        layers.push(LayerParams { weights, buffers });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let params = NetworkParams { layers, mode };
    params.check(spec).map_err(|e| Error::Format(e.to_string()))?;
    Ok(params)
}
