//! Binary model container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "ROPM"                       magic
//! u32                          format version
//! u32  + bytes                 UTF-8 JSON model descriptor
//! u32                          parameter record count
//! per record:
//!   u32 + bytes                parameter name
//!   u8                         dtype tag (0 = f32, 1 = f64)
//!   u32                        rank
//!   u64 * rank                 extents
//!   payload                    raw IEEE-754 values
//! ```

use std::fs;
use std::path::Path;

use super::spec::{is_running_stat, ModelSpec, Parameters};
use crate::error::{Error, Result};
use crate::tensor::{DType, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"ROPM";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_model<T: Scalar>(spec: &ModelSpec, params: &Parameters<T>) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(spec).map_err(|e| Error::Validation(e.to_string()))?;
    let mut out = Vec::with_capacity(64 + json.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, p) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::DTYPE.tag());
        out.extend_from_slice(&(p.tensor.rank() as u32).to_le_bytes());
        for &d in p.tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in p.tensor.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(
                self.pos as u64,
                format!("truncated while reading {what}"),
            )),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_model<T: Scalar>(bytes: &[u8]) -> Result<(ModelSpec, Parameters<T>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic, expected \"ROPM\""));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::format(4, format!("unsupported format version {version}")));
    }
    let json_len = r.u32("descriptor length")? as usize;
    let json_at = r.pos as u64;
    let spec: ModelSpec = serde_json::from_slice(r.take(json_len, "descriptor")?)
        .map_err(|e| Error::format(json_at, format!("invalid model descriptor: {e}")))?;

    let count = r.u32("record count")?;
    let mut params = Parameters::new();
    for _ in 0..count {
        let at = r.pos as u64;
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::format(at, "parameter name is not UTF-8"))?
            .to_owned();
        let tag_at = r.pos as u64;
        let dtype = DType::from_tag(r.take(1, "dtype")?[0])
            .ok_or_else(|| Error::format(tag_at, "unknown dtype tag"))?;
        let rank = r.u32("rank")? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::format(tag_at + 1, format!("implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("extent")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::format(tag_at, format!("bad extents {:?}", shape)))?;
        let payload = r.take(
            n.checked_mul(dtype.size())
                .ok_or_else(|| Error::format(r.pos as u64, "payload size overflow"))?,
            "payload",
        )?;
        let data: Vec<T> = match dtype {
            DType::F32 => payload
                .chunks_exact(4)
                .map(|c| T::from_f64(f32::read_le(c) as f64))
                .collect(),
            DType::F64 => payload
                .chunks_exact(8)
                .map(|c| T::from_f64(f64::read_le(c)))
                .collect(),
        };
        let trainable = !is_running_stat(&name);
        params.insert(name, Tensor::from_vec(shape, data)?, trainable);
    }
    if r.pos != bytes.len() {
        return Err(Error::format(r.pos as u64, "trailing bytes after last record"));
    }
    spec.validate()
        .map_err(|e| Error::format(json_at, format!("descriptor does not validate: {e}")))?;
    params
        .check_against(&spec)
        .map_err(|e| Error::format(json_at, e.to_string()))?;
    Ok((spec, params))
}

pub fn save_model<T: Scalar>(
    spec: &ModelSpec,
    params: &Parameters<T>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_model(spec, params)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(ModelSpec, Parameters)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}
