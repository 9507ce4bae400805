//! Checkpoint container: an 8-byte magic, a little-endian u64 header length,
//! a JSON header, then every parameter and buffer as raw little-endian f32 in
//! declaration order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchitectureSpec, Model, Variant};
use crate::error::{Error, Result};
use crate::harmonics::BlinderSet;
use crate::nn::Tensor;

pub const MAGIC: &[u8; 8] = b"MERCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub spec: ArchitectureSpec,
    pub seed: u64,
    /// Free-form training summary (best epoch, validation F1, ...).
    pub metrics: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode_checkpoint(model: &Model<f32>, seed: u64, metrics: serde_json::Value) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    for (name, p) in model.param_names().into_iter().zip(model.params()) {
        tensors.push(TensorEntry {
            name,
            shape: p.value.shape().to_vec(),
            trainable: true,
        });
        payload.extend(p.value.data().iter().flat_map(|v| v.to_le_bytes()));
    }
    for (name, b) in model.buffer_names().into_iter().zip(model.buffers()) {
        tensors.push(TensorEntry {
            name,
            shape: b.shape().to_vec(),
            trainable: false,
        });
        payload.extend(b.data().iter().flat_map(|v| v.to_le_bytes()));
    }
    let header = Checkpoint {
        version: FORMAT_VERSION,
        spec: model.spec().clone(),
        seed,
        metrics,
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Checkpoint, Model<f32>)> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(16..16 + len)
        .ok_or_else(|| Error::Format("truncated checkpoint header".into()))?;
    let header: Checkpoint = serde_json::from_slice(body)?;
    if header.version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {} (expected {FORMAT_VERSION})",
            header.version
        )));
    }
    let mut model = match header.spec.variant {
        // Blinder weights are stored as buffers; start from zeros.
        Variant::Harmonics => Model::with_blinders(
            &header.spec,
            &BlinderSet::from_weights(vec![vec![0.0; header.spec.n_mels]; 12])?,
            0,
        )?,
        _ => Model::new(&header.spec, 0)?,
    };
    let expect: Vec<(String, Vec<usize>, bool)> = model
        .param_names()
        .into_iter()
        .zip(model.params().iter().map(|p| p.value.shape().to_vec()))
        .map(|(n, s)| (n, s, true))
        .chain(
            model
                .buffer_names()
                .into_iter()
                .zip(model.buffers().iter().map(|b| b.shape().to_vec()))
                .map(|(n, s)| (n, s, false)),
        )
        .collect();
    if expect.len() != header.tensors.len() {
        return Err(Error::Format(format!(
            "checkpoint lists {} tensors, architecture has {}",
            header.tensors.len(),
            expect.len()
        )));
    }
    for (e, t) in expect.iter().zip(&header.tensors) {
        if e.0 != t.name || e.1 != t.shape || e.2 != t.trainable {
            return Err(Error::Format(format!(
                "tensor {} {:?} does not match architecture slot {} {:?}",
                t.name, t.shape, e.0, e.1
            )));
        }
    }
    let mut payload = &bytes[16 + len..];
    let mut take = |dst: &mut Tensor<f32>| -> Result<()> {
        let n = dst.len() * 4;
        if payload.len() < n {
            return Err(Error::Format("truncated checkpoint payload".into()));
        }
        for (d, c) in dst.data_mut().iter_mut().zip(payload[..n].chunks_exact(4)) {
            *d = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        }
        payload = &payload[n..];
        Ok(())
    };
    for p in model.params_mut() {
        take(&mut p.value)?;
    }
    for b in model.buffers_mut() {
        take(b)?;
    }
    if !payload.is_empty() {
        return Err(Error::Format(format!("{} trailing payload bytes", payload.len())));
    }
    Ok((header, model))
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model<f32>, seed: u64, metrics: serde_json::Value) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(model, seed, metrics)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Checkpoint, Model<f32>)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Ctx, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut m = Model::<f32>::new(&ArchitectureSpec::default(), 11).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(2);
        // Move running statistics away from their initial values.
        let x = Tensor::from_vec(&[4, 1, 256, 40], (0..4 * 256 * 40).map(|_| r.random::<f32>()).collect()).unwrap();
        m.forward(&x, &mut Ctx::train(1)).unwrap();
        let bytes = encode_checkpoint(&m, 11, serde_json::json!({"best_epoch": 3})).unwrap();
        let (h, mut back) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(h.seed, 11);
        assert_eq!(h.metrics["best_epoch"], 3);
        for _ in 0..100 {
            let x = Tensor::from_vec(&[1, 1, 256, 8], (0..256 * 8).map(|_| r.random::<f32>()).collect()).unwrap();
            let a = m.forward(&x, &mut Ctx::infer()).unwrap();
            let b = back.forward(&x, &mut Ctx::infer()).unwrap();
            assert_eq!(a.data(), b.data());
        }
        assert_eq!(encode_checkpoint(&back, 11, h.metrics.clone()).unwrap(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let m = Model::<f32>::new(&ArchitectureSpec::for_variant(Variant::Time), 0).unwrap();
        let bytes = encode_checkpoint(&m, 0, serde_json::Value::Null).unwrap();
        assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 4]), Err(Error::Format(_))));
        assert!(matches!(decode_checkpoint(b"garbage bytes here"), Err(Error::Format(_))));
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0; 4]);
        assert!(decode_checkpoint(&extra).is_err());
    }
}
