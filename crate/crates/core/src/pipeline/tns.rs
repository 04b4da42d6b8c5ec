//! `.tns` tensor files.
//!
//! Little-endian layout: magic `TNS1`, u32 version, u32 name length, UTF-8
//! name, u8 rank, rank × u64 dims, u8 dtype (0 = f32, 1 = f64), u16 reserved,
//! payload, then a CRC32 of every preceding byte.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, Real, Tensor};

pub const TNS_MAGIC: &[u8; 4] = b"TNS1";
pub const TNS_VERSION: u32 = 1;
pub const MAX_RANK: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    pub fn to_f32(&self) -> Tensor<f32> {
        match self {
            AnyTensor::F32(t) => t.clone(),
            AnyTensor::F64(t) => t.cast(),
        }
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.clone(),
        }
    }
}

/// Exact file size for a tensor: header, payload and checksum.
pub fn encoded_len(name: &str, shape: &[usize], dtype: DType) -> usize {
    16 + name.len() + 8 * shape.len() + shape.iter().product::<usize>() * dtype.size() + 4
}

pub fn encode<T: Real>(name: &str, t: &Tensor<T>) -> Result<Vec<u8>> {
    if t.rank() > MAX_RANK {
        return Err(Error::InvalidArgument(format!(
            "rank {} exceeds {MAX_RANK}",
            t.rank()
        )));
    }
    let mut out = Vec::with_capacity(encoded_len(name, t.shape(), T::DTYPE));
    out.extend_from_slice(TNS_MAGIC);
    out.extend_from_slice(&TNS_VERSION.to_le_bytes());
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.push(T::DTYPE as u8);
    out.extend_from_slice(&0u16.to_le_bytes());
    for &v in t.data() {
        v.to_le_bytes_vec(&mut out);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Sequential little-endian reader over a byte slice.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end =
            end.ok_or_else(|| Error::Malformed(format!("need {n} bytes at offset {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Malformed("name is not UTF-8".into()))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

/// Checks magic, version and trailing CRC; returns the checksummed body.
pub(crate) fn check_envelope<'a>(
    bytes: &'a [u8],
    magic: &[u8; 4],
    supported: u32,
) -> Result<&'a [u8]> {
    if bytes.len() < 4 || &bytes[..4] != magic {
        let found = &bytes[..bytes.len().min(4)];
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: String::from_utf8_lossy(found).into_owned(),
        });
    }
    if bytes.len() < 12 {
        return Err(Error::Malformed(format!(
            "file is only {} bytes",
            bytes.len()
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version > supported || version == 0 {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported,
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    Ok(body)
}

pub(crate) fn read_dims(r: &mut Reader<'_>) -> Result<Vec<usize>> {
    let rank = r.u8()? as usize;
    if rank > MAX_RANK {
        return Err(Error::Malformed(format!("rank {rank} exceeds {MAX_RANK}")));
    }
    (0..rank)
        .map(|_| {
            usize::try_from(r.u64()?)
                .map_err(|_| Error::Malformed("dimension overflows usize".into()))
        })
        .collect()
}

pub(crate) fn read_payload<T: Real>(r: &mut Reader<'_>, shape: &[usize]) -> Result<Tensor<T>> {
    let n = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::Malformed("element count overflows".into()))?;
    let width = T::DTYPE.size();
    let bytes = r.take(
        n.checked_mul(width)
            .ok_or_else(|| Error::Malformed("payload overflows".into()))?,
    )?;
    let data = bytes
        .chunks_exact(width)
        .map(|c| match T::DTYPE {
            DType::F32 => T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64),
            DType::F64 => T::lit(f64::from_le_bytes(c.try_into().unwrap())),
        })
        .collect();
    Tensor::from_vec(shape, data)
}

pub fn decode(bytes: &[u8]) -> Result<(String, AnyTensor)> {
    let body = check_envelope(bytes, TNS_MAGIC, TNS_VERSION)?;
    let mut r = Reader::new(body);
    r.take(8)?;
    let name = r.string()?;
    let dims = read_dims(&mut r)?;
    let dtype = r.u8()?;
    let _reserved = r.u16()?;
    let t = match dtype {
        0 => AnyTensor::F32(read_payload(&mut r, &dims)?),
        1 => AnyTensor::F64(read_payload(&mut r, &dims)?),
        d => return Err(Error::Malformed(format!("unknown dtype code {d}"))),
    };
    if r.remaining() != 0 {
        return Err(Error::Malformed(format!(
            "{} trailing bytes",
            r.remaining()
        )));
    }
    Ok((name, t))
}

pub fn save_tns<T: Real>(path: impl AsRef<Path>, name: &str, t: &Tensor<T>) -> Result<()> {
    write_atomic(path.as_ref(), &encode(name, t)?)
}

pub fn load_tns(path: impl AsRef<Path>) -> Result<(String, AnyTensor)> {
    let path = path.as_ref();
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let file_name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{file_name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}
