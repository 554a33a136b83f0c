//! Binary checkpoint format. All integers and floats are little-endian.
//!
//! ```text
//! magic          8 bytes   b"S2STCKPT"
//! version        u32       currently 1
//! src_vocab      u32
//! tgt_vocab      u32
//! hidden         u32
//! time_reduction u32
//! echo_len       u64
//! echo           echo_len bytes of UTF-8 (the config that produced the file)
//! tensor_count   u32       13
//! per tensor, in ModelParams::tensors() order:
//!   name_len     u16
//!   name         name_len bytes of UTF-8
//!   rows         u32
//!   cols         u32
//!   values       rows * cols f64
//! ```

use std::io::{Read, Write};

use thiserror::Error;

use super::params::{ModelDims, ModelParams, TENSOR_NAMES};

pub const MAGIC: &[u8; 8] = b"S2STCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic header")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint is malformed: {0}")]
    Malformed(String),
    #[error("checkpoint I/O failed: {0}")]
    Io(#[from] std::io::Error),
}

fn u32_of(n: usize) -> Result<u32, CheckpointError> {
    u32::try_from(n).map_err(|_| CheckpointError::Malformed(format!("{n} does not fit in u32")))
}

pub fn write_checkpoint<W: Write>(
    mut out: W,
    params: &ModelParams,
    config_echo: &str,
) -> Result<(), CheckpointError> {
    let dims = params.dims;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    for v in [dims.src_vocab, dims.tgt_vocab, dims.hidden, dims.time_reduction] {
        out.write_all(&u32_of(v)?.to_le_bytes())?;
    }
    out.write_all(&(config_echo.len() as u64).to_le_bytes())?;
    out.write_all(config_echo.as_bytes())?;
    out.write_all(&u32_of(TENSOR_NAMES.len())?.to_le_bytes())?;
    for ((name, values), (rows, cols)) in params.tensors().iter().zip(params.shapes()) {
        out.write_all(&(name.len() as u16).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&u32_of(rows)?.to_le_bytes())?;
        out.write_all(&u32_of(cols)?.to_le_bytes())?;
        for v in values.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CheckpointError::Malformed("unexpected end of file".into()))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn utf8(&mut self, n: usize) -> Result<String, CheckpointError> {
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| CheckpointError::Malformed("invalid UTF-8".into()))
    }
}

/// Returns the parameters and the embedded config echo.
pub fn read_checkpoint<R: Read>(mut input: R) -> Result<(ModelParams, String), CheckpointError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if bytes.len() < MAGIC.len() || cur.take(MAGIC.len())? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let dims = ModelDims {
        src_vocab: cur.u32()? as usize,
        tgt_vocab: cur.u32()? as usize,
        hidden: cur.u32()? as usize,
        time_reduction: cur.u32()? as usize,
    };
    if dims.src_vocab == 0 || dims.tgt_vocab == 0 || dims.hidden == 0 || dims.time_reduction == 0 {
        return Err(CheckpointError::Malformed("zero model dimension".into()));
    }
    let echo_len = usize::try_from(cur.u64()?)
        .map_err(|_| CheckpointError::Malformed("config echo too long".into()))?;
    let echo = cur.utf8(echo_len)?;
    let count = cur.u32()? as usize;
    if count != TENSOR_NAMES.len() {
        return Err(CheckpointError::Malformed(format!(
            "expected {} tensors, found {count}",
            TENSOR_NAMES.len()
        )));
    }
    let mut params = ModelParams::zeros(dims);
    let shapes = params.shapes();
    for ((expected_name, tensor), (rows, cols)) in params.tensors_mut().into_iter().zip(shapes) {
        let name_len = cur.u16()? as usize;
        let name = cur.utf8(name_len)?;
        if name != expected_name {
            return Err(CheckpointError::Malformed(format!(
                "expected tensor {expected_name}, found {name}"
            )));
        }
        let (r, c) = (cur.u32()? as usize, cur.u32()? as usize);
        if (r, c) != (rows, cols) {
            return Err(CheckpointError::Malformed(format!(
                "tensor {name} has shape {r}x{c}, expected {rows}x{cols}"
            )));
        }
        for v in tensor.iter_mut() {
            *v = cur.f64()?;
        }
    }
    if cur.pos != bytes.len() {
        return Err(CheckpointError::Malformed("trailing bytes".into()));
    }
    if !params.all_finite() {
        return Err(CheckpointError::Malformed("non-finite parameter".into()));
    }
    Ok((params, echo))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ModelParams {
        ModelParams::init(
            ModelDims {
                src_vocab: 5,
                tgt_vocab: 4,
                hidden: 3,
                time_reduction: 2,
            },
            9,
        )
    }

    #[test]
    fn roundtrip_preserves_everything() {
        let p = params();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p, "{\"k\":1}").unwrap();
        let (q, echo) = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(p, q);
        assert_eq!(echo, "{\"k\":1}");
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
    }

    #[test]
    fn corruption_is_detected() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &params(), "").unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(bad.as_slice()), Err(CheckpointError::BadMagic)));

        let mut bad = buf.clone();
        bad[8] = 2;
        assert!(matches!(
            read_checkpoint(bad.as_slice()),
            Err(CheckpointError::UnsupportedVersion(2))
        ));

        let truncated = &buf[..buf.len() - 3];
        assert!(matches!(read_checkpoint(truncated), Err(CheckpointError::Malformed(_))));

        let mut extra = buf.clone();
        extra.push(0);
        assert!(matches!(read_checkpoint(extra.as_slice()), Err(CheckpointError::Malformed(_))));

        assert!(matches!(read_checkpoint(&b"S2"[..]), Err(CheckpointError::BadMagic)));
    }
}
