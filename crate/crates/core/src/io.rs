//! Binary file formats: the named-tensor checkpoint container and
//! per-utterance feature files. Both round-trip bit-exactly.
//!
//! Checkpoint container layout:
//!   magic "MSDT" | version u32 | tensor count u32 | per tensor:
//!   name len u16 | UTF-8 name | rank u8 | dims u32 each | f64 LE values
//!
//! Feature file layout:
//!   magic "FEAT" | version u32 | T u32 | f u32 | T·f f64 LE values
//!
//! All integers are little-endian. Writes go through a temp file in the
//! target directory followed by a rename.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const TENSOR_MAGIC: &[u8; 4] = b"MSDT";
const FEATURE_MAGIC: &[u8; 4] = b"FEAT";
const FORMAT_VERSION: u32 = 1;

struct Reader<R> {
    inner: R,
    offset: usize,
}

impl<R: Read> Reader<R> {
    fn new(inner: R) -> Self {
        Reader { inner, offset: 0 }
    }

    fn read_exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len();
                Ok(())
            }
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Err(Error::Format(format!(
                "truncated file: expected {} bytes for {} at byte offset {}",
                buf.len(),
                what,
                self.offset
            ))),
            Err(e) => Err(e.into()),
        }
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let mut b = [0u8; 2];
        self.read_exact(&mut b, what)?;
        Ok(u16::from_le_bytes(b))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        let mut b = [0u8; 1];
        self.read_exact(&mut b, what)?;
        Ok(b[0])
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let mut raw = vec![0u8; n * 8];
        self.read_exact(&mut raw, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Write `bytes` to `path` atomically (temp file + rename).
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        w.write_all(bytes)?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Serialize named tensors into the checkpoint container.
pub fn write_tensors(path: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(TENSOR_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, tensor) in entries {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(Error::Format(format!("tensor name too long: {}", name)));
        }
        buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        if tensor.rank() > u8::MAX as usize {
            return Err(Error::Format(format!("tensor rank too large: {}", tensor.rank())));
        }
        buf.push(tensor.rank() as u8);
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    atomic_write(path, &buf)
}

pub fn read_tensors(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader::new(BufReader::new(fs::File::open(path)?));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic, "magic")?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?} in {} (expected \"MSDT\")",
            magic,
            path.display()
        )));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {}", version)));
    }
    let count = r.u32("tensor count")? as usize;
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let name_len = r.u16("name length")? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes, "name")?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Format(format!("tensor {} name is not UTF-8", i)))?;
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dim")? as usize);
        }
        let numel: usize = shape.iter().product();
        let data = r.f64s(numel, "tensor data")?;
        entries.push((name, Tensor::new(shape, data)?));
    }
    Ok(entries)
}

/// Write a `[T×f]` feature tensor. An empty time axis is rejected.
pub fn write_features(path: &Path, features: &Tensor) -> Result<()> {
    let (t, f) = features.dims2()?;
    if t == 0 {
        return Err(Error::Dimension("write_features: T = 0".into()));
    }
    let mut buf = Vec::with_capacity(16 + t * f * 8);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(t as u32).to_le_bytes());
    buf.extend_from_slice(&(f as u32).to_le_bytes());
    for &v in features.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &buf)
}

pub fn read_features(path: &Path) -> Result<Tensor> {
    let mut r = Reader::new(BufReader::new(fs::File::open(path)?));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic, "magic")?;
    if &magic != FEATURE_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?} in {} (expected \"FEAT\")",
            magic,
            path.display()
        )));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {}", version)));
    }
    let t = r.u32("frame count")? as usize;
    let f = r.u32("feature dim")? as usize;
    let data = r.f64s(t * f, "feature data")?;
    Tensor::new(vec![t, f], data)
}
