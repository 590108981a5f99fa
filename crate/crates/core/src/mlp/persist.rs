//! Model file: `SPMLP1`, `u32` layer count, `u32` widths (input first), then
//! per layer the `inputs × outputs` weights row-major followed by the biases,
//! then the input normalizer. All numbers little-endian; reals are `f64`.

use super::{Activation, Dense, MlpError, MlpModel};
use ndarray::{Array1, Array2};

pub const MAGIC: &[u8; 6] = b"SPMLP1";

pub fn to_bytes(model: &MlpModel) -> Vec<u8> {
    let dims = model.dims();
    let mut out = Vec::with_capacity(6 + 4 * (dims.len() + 1) + 8 * (model.parameter_count() + 1));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(model.layers.len() as u32).to_le_bytes());
    for d in &dims {
        out.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    for layer in &model.layers {
        for w in layer.weights.iter() {
            out.extend_from_slice(&w.to_le_bytes());
        }
        for b in layer.bias.iter() {
            out.extend_from_slice(&b.to_le_bytes());
        }
    }
    out.extend_from_slice(&model.normalizer.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, k: usize) -> Result<&[u8], MlpError> {
        let end = self.pos.checked_add(k).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| MlpError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, MlpError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, MlpError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<MlpModel, MlpError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(6)? != MAGIC {
        return Err(MlpError::Format("bad magic".into()));
    }
    let count = r.u32()? as usize;
    if count == 0 || count > 64 {
        return Err(MlpError::Format(format!("implausible layer count {count}")));
    }
    let dims = (0..=count).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
    if dims.contains(&0) {
        return Err(MlpError::Format("zero layer width".into()));
    }
    let mut layers = Vec::with_capacity(count);
    for (k, w) in dims.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let need = fan_in.checked_mul(fan_out).and_then(|x| x.checked_add(fan_out)).and_then(|x| x.checked_mul(8));
        if need.is_none_or(|need| need > bytes.len().saturating_sub(r.pos)) {
            return Err(MlpError::Format(format!("truncated in layer {k}")));
        }
        let weights = (0..fan_in * fan_out).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        let bias = (0..fan_out).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        layers.push(Dense {
            weights: Array2::from_shape_vec((fan_in, fan_out), weights).unwrap(),
            bias: Array1::from_vec(bias),
            activation: if k + 1 == count {
                Activation::Sigmoid
            } else {
                Activation::Relu
            },
        });
    }
    let normalizer = r.f64()?;
    if r.pos != bytes.len() {
        return Err(MlpError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(MlpModel { layers, normalizer })
}
