//! Versioned binary checkpoint: header `{magic "HWCN", version, arch tag,
//! flags, dims}`, then raw little-endian f32 tensors in declaration order.
//! Save → load → save is byte-identical.

use thiserror::Error;

use super::network::Cnn;
use super::{Arch, CnnConfig, CnnModel};

const MAGIC: &[u8; 4] = b"HWCN";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint version {found} unsupported (expected {VERSION})")]
    VersionMismatch { found: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

pub fn save_checkpoint(model: &CnnModel) -> Vec<u8> {
    let tensors = model.net.all_tensors();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(model.config.arch.tag());
    out.push(model.config.use_batchnorm as u8);
    out.extend_from_slice(&(model.config.dropout_rate as f32).to_le_bytes());
    out.extend_from_slice(&model.config.seed.to_le_bytes());
    out.extend_from_slice(&(model.feature_dim() as u32).to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (data, shape) in tensors {
        out.push(shape.len() as u8);
        for &d in &shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &value in data {
            out.extend_from_slice(&value.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Corrupt(format!(
                "truncated at byte {} (wanted {} more)",
                self.pos, n
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn f32(&mut self) -> Result<f32, CheckpointError> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<CnnModel, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(CheckpointError::Corrupt(format!(
            "bad magic {magic:02x?}, expected {MAGIC:02x?}"
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch { found: version });
    }
    let arch = Arch::from_tag(r.u8()?)
        .ok_or_else(|| CheckpointError::Corrupt("unknown arch tag".into()))?;
    let use_batchnorm = match r.u8()? {
        0 => false,
        1 => true,
        other => {
            return Err(CheckpointError::Corrupt(format!(
                "bad batchnorm flag {other}"
            )))
        }
    };
    let dropout_rate = r.f32()? as f64;
    if !(0.0..1.0).contains(&dropout_rate) {
        return Err(CheckpointError::Corrupt(format!(
            "dropout rate {dropout_rate} out of range"
        )));
    }
    let seed = r.u64()?;
    let feature_dim = r.u32()? as usize;
    let config = CnnConfig {
        arch,
        use_batchnorm,
        dropout_rate,
        seed,
    };
    let spec = config.stack_spec();
    if spec.feature_dim() != feature_dim {
        return Err(CheckpointError::Corrupt(format!(
            "feature dim {feature_dim} does not match arch {arch:?} ({})",
            spec.feature_dim()
        )));
    }
    // allocate the structure, then overwrite every tensor from the stream
    let mut net = Cnn::<f32>::glorot(spec, 0);
    let tensor_count = r.u32()? as usize;
    {
        let mut slots = net.all_tensors_mut();
        if tensor_count != slots.len() {
            return Err(CheckpointError::Corrupt(format!(
                "tensor count {tensor_count} does not match architecture ({} expected)",
                slots.len()
            )));
        }
        for slot in slots.iter_mut() {
            let ndim = r.u8()? as usize;
            let mut len = 1usize;
            for _ in 0..ndim {
                len = len.saturating_mul(r.u32()? as usize);
            }
            if len != slot.len() {
                return Err(CheckpointError::Corrupt(format!(
                    "tensor length {len} does not match expected {}",
                    slot.len()
                )));
            }
            for value in slot.iter_mut() {
                *value = r.f32()?;
            }
        }
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(CnnModel { config, net })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::init_glorot;
    use ndarray::Array4;

    fn model() -> CnnModel {
        init_glorot(&CnnConfig::new(Arch::ThreeLayer, 42))
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let m = model();
        let bytes = save_checkpoint(&m);
        let loaded = load_checkpoint(&bytes).unwrap();
        assert_eq!(save_checkpoint(&loaded), bytes);
        assert_eq!(loaded.config, m.config);
    }

    #[test]
    fn round_trip_reproduces_logits_exactly() {
        let m = init_glorot(&CnnConfig::new(Arch::FourLayer, 7));
        let mut x = Array4::<f32>::zeros((1, 1, 28, 28));
        for (i, v) in x.iter_mut().enumerate() {
            *v = ((i % 53) as f32) / 26.5 - 1.0;
        }
        let before = m.net.forward_logits(x.view()).unwrap();
        let loaded = load_checkpoint(&save_checkpoint(&m)).unwrap();
        let after = loaded.net.forward_logits(x.view()).unwrap();
        assert_eq!(before.as_slice().unwrap(), after.as_slice().unwrap());
    }

    #[test]
    fn truncation_is_corrupt() {
        let bytes = save_checkpoint(&model());
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(
                    load_checkpoint(&bytes[..cut]),
                    Err(CheckpointError::Corrupt(_))
                ),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn version_bump_is_detected() {
        let mut bytes = save_checkpoint(&model());
        bytes[4..8].copy_from_slice(&9u32.to_le_bytes());
        assert!(matches!(
            load_checkpoint(&bytes),
            Err(CheckpointError::VersionMismatch { found: 9 })
        ));
    }

    #[test]
    fn bad_magic_is_corrupt() {
        let mut bytes = save_checkpoint(&model());
        bytes[0] = b'X';
        assert!(matches!(
            load_checkpoint(&bytes),
            Err(CheckpointError::Corrupt(_))
        ));
    }

    #[test]
    fn trailing_garbage_is_corrupt() {
        let mut bytes = save_checkpoint(&model());
        bytes.push(0);
        assert!(matches!(
            load_checkpoint(&bytes),
            Err(CheckpointError::Corrupt(_))
        ));
    }
}
