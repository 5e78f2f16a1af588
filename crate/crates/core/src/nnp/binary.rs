//! `parameter.bin`: a u32 magic and record count, then per record the name,
//! dtype (0 = f32, 1 = f16), need_grad flag, dims, and the raw payload.
//! Every integer is little-endian.

use super::ParameterRecord;
use crate::error::{Error, Result};
use crate::tensor::{f16_bits_to_f32, f32_to_f16_bits, numel, Dtype, NdArray};

pub const PARAMETER_MAGIC: u32 = 0x4E4E_5042;
const MEMBER: &str = "parameter.bin";

pub fn write_parameters(records: &[ParameterRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&PARAMETER_MAGIC.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        let name = r.name.as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.push(match r.data.dtype() {
            Dtype::F32 => 0,
            Dtype::F16 => 1,
        });
        out.push(u8::from(r.need_grad));
        out.extend_from_slice(&(r.shape().len() as u32).to_le_bytes());
        for &d in r.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match r.data.dtype() {
            Dtype::F32 => r
                .data
                .data()
                .iter()
                .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            Dtype::F16 => r
                .data
                .data()
                .iter()
                .for_each(|&v| out.extend_from_slice(&f32_to_f16_bits(v).to_le_bytes())),
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse(
                MEMBER,
                0,
                format!("truncated at byte {} while reading {what}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn err(&self, message: String) -> Error {
        Error::parse(MEMBER, 0, format!("byte {}: {message}", self.pos))
    }
}

pub fn read_parameters(bytes: &[u8]) -> Result<Vec<ParameterRecord>> {
    let mut c = Cursor { bytes, pos: 0 };
    if bytes.len() < 4 {
        return Err(Error::BadMagic(MEMBER.to_string()));
    }
    if c.u32("magic")? != PARAMETER_MAGIC {
        return Err(Error::BadMagic(MEMBER.to_string()));
    }
    let count = c.u32("record count")? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| c.err("name is not UTF-8".into()))?
            .to_string();
        let dtype = match c.u8("dtype")? {
            0 => Dtype::F32,
            1 => Dtype::F16,
            other => return Err(c.err(format!("unknown dtype code {other}"))),
        };
        let need_grad = match c.u8("need_grad")? {
            0 => false,
            1 => true,
            other => return Err(c.err(format!("bad need_grad flag {other}"))),
        };
        let ndim = c.u32("ndim")? as usize;
        let mut shape = Vec::with_capacity(ndim.min(16));
        for _ in 0..ndim {
            shape.push(c.u32("dim")? as usize);
        }
        let n = numel(&shape);
        let width = match dtype {
            Dtype::F32 => 4,
            Dtype::F16 => 2,
        };
        let payload = c.take(
            n.checked_mul(width).ok_or_else(|| c.err("payload too large".into()))?,
            "payload",
        )?;
        let values: Vec<f32> = match dtype {
            Dtype::F32 => payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
            Dtype::F16 => payload
                .chunks_exact(2)
                .map(|b| f16_bits_to_f32(u16::from_le_bytes([b[0], b[1]])))
                .collect(),
        };
        records.push(ParameterRecord {
            name,
            data: NdArray::from_vec_dtype(&shape, values, dtype)?,
            need_grad,
        });
    }
    if c.pos != bytes.len() {
        return Err(c.err("trailing bytes after the last record".into()));
    }
    Ok(records)
}
