use std::path::Path;

use super::{EegNetConfig, EegNetModel};
use crate::container::{f64s_to_le_bytes, le_bytes_to_f64s};
use crate::error::{invalid_data, Error, Result};

const MAGIC: &[u8; 8] = b"EEGNETRG";
pub const FORMAT_VERSION: u32 = 1;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| invalid_data!("model file truncated"))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| invalid_data!("model file length field overflows"))
    }
}

impl EegNetModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = serde_json::to_vec(&self.cfg).expect("config serializes");
        let mut out = Vec::with_capacity(64 + cfg.len() + 8 * (self.params.len() + self.running.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
        out.extend_from_slice(&cfg);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.running.len() as u64).to_le_bytes());
        out.extend(f64s_to_le_bytes(&self.params));
        out.extend(f64s_to_le_bytes(&self.running));
        let sum = fnv1a(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(8)? != MAGIC {
            return Err(invalid_data!("not an EEGNet model file"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(invalid_data!(
                "model format version {version}, expected {FORMAT_VERSION}"
            ));
        }
        if bytes.len() < 8 {
            return Err(invalid_data!("model file truncated"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        let cfg_len = r.len()?;
        let cfg: EegNetConfig =
            serde_json::from_slice(r.take(cfg_len)?).map_err(|e| invalid_data!("model config block: {e}"))?;
        let step = r.u64()?;
        let n_params = r.len()?;
        let n_running = r.len()?;
        let params = le_bytes_to_f64s(r.take(n_params.checked_mul(8).ok_or_else(|| invalid_data!("bad count"))?)?);
        let running = le_bytes_to_f64s(r.take(n_running.checked_mul(8).ok_or_else(|| invalid_data!("bad count"))?)?);
        if r.at != body.len() {
            return Err(invalid_data!(
                "model file has {} unexpected bytes",
                body.len() as isize - r.at as isize
            ));
        }
        if fnv1a(body) != stored {
            return Err(invalid_data!("model file checksum mismatch"));
        }
        let mut model = EegNetModel::build(cfg).map_err(|e| invalid_data!("model config: {e}"))?;
        if params.len() != model.params.len() || running.len() != model.running.len() {
            return Err(invalid_data!(
                "tensor sizes ({}, {}) do not match the architecture ({}, {})",
                params.len(),
                running.len(),
                model.params.len(),
                model.running.len()
            ));
        }
        model.params = params;
        model.running = running;
        model.step = step;
        Ok(model)
    }
}

pub fn save_model(model: &EegNetModel, path: &Path) -> Result<()> {
    std::fs::write(path, model.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<EegNetModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    EegNetModel::from_bytes(&bytes)
}
