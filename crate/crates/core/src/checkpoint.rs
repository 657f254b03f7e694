//! Binary weight checkpoints.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "CEDGCKPT"
//! version      u32      1
//! dtype        u8       0 = f32, 1 = f64
//! arch_hash    32 bytes SHA-256 of the architecture JSON below
//! arch_len     u32
//! arch_json    arch_len bytes (serialized BundleArch)
//! count        u32      number of records
//! record*      name_len u16, name (UTF-8), kind u8 (0 param, 1 buffer),
//!              ndim u8, dims u32 * ndim, values (dtype, little-endian)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};
use crate::nn::{BundleArch, ModelBundle};
use crate::param::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"CEDGCKPT";
pub const VERSION: u32 = 1;

const KIND_PARAM: u8 = 0;
const KIND_BUFFER: u8 = 1;

fn bad(msg: impl Into<String>) -> CoreError {
    CoreError::Checkpoint(msg.into())
}

pub fn arch_hash(arch: &BundleArch) -> [u8; 32] {
    let json = serde_json::to_vec(arch).expect("arch serializes");
    Sha256::digest(&json).into()
}

fn write_record<T: Scalar>(out: &mut Vec<u8>, name: &str, kind: u8, t: &Tensor<T>) -> Result<()> {
    let name_len = u16::try_from(name.len()).map_err(|_| bad(format!("name too long: {name}")))?;
    out.extend_from_slice(&name_len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(kind);
    out.push(u8::try_from(t.ndim()).map_err(|_| bad("rank too large"))?);
    for &d in t.shape() {
        out.extend_from_slice(&u32::try_from(d).map_err(|_| bad("dimension too large"))?.to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(out);
    }
    Ok(())
}

pub fn to_bytes<T: Scalar>(bundle: &ModelBundle<T>) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(&bundle.arch).map_err(|e| bad(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::DTYPE);
    out.extend_from_slice(&Sha256::digest(&json));
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let count = bundle.params.len() + bundle.params.buffers().count();
    out.extend_from_slice(&(count as u32).to_le_bytes());
    for (name, p) in bundle.params.params() {
        write_record(&mut out, name, KIND_PARAM, &p.value)?;
    }
    for (name, b) in bundle.params.buffers() {
        write_record(&mut out, name, KIND_BUFFER, b)?;
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| bad("truncated file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<ModelBundle<T>> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let dtype = c.u8()?;
    if dtype != T::DTYPE {
        return Err(bad(format!("stored dtype {dtype} does not match requested {}", T::DTYPE)));
    }
    let hash: [u8; 32] = c.take(32)?.try_into().unwrap();
    let json_len = c.u32()? as usize;
    let json = c.take(json_len)?;
    if <[u8; 32]>::from(Sha256::digest(json)) != hash {
        return Err(bad("architecture hash mismatch"));
    }
    let arch: BundleArch = serde_json::from_slice(json).map_err(|e| bad(format!("architecture: {e}")))?;
    arch.validate()?;
    let count = c.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?).map_err(|_| bad("record name is not UTF-8"))?.to_string();
        let kind = c.u8()?;
        let ndim = c.u8()? as usize;
        let dims = (0..ndim).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = dims.iter().product();
        let raw = c.take(numel.checked_mul(T::BYTES).ok_or_else(|| bad("record too large"))?)?;
        let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        let t = Tensor::new(dims, data).map_err(|e| bad(format!("{name}: {e}")))?;
        match kind {
            KIND_PARAM => {
                store.insert(name, t);
            }
            KIND_BUFFER => store.insert_buffer(name, t),
            k => return Err(bad(format!("{name}: unknown record kind {k}"))),
        }
    }
    if c.pos != bytes.len() {
        return Err(bad("trailing bytes after last record"));
    }
    // The stored records must match exactly what the architecture declares.
    let decls = arch.declarations();
    for d in &decls {
        let shape = if d.buffer { store.buffer(&d.name) } else { store.param(&d.name).map(|p| &*p.value) }
            .ok_or_else(|| bad(format!("missing {}", d.name)))?
            .shape();
        if shape != d.shape.as_slice() {
            return Err(bad(format!("{}: shape {shape:?}, expected {:?}", d.name, d.shape)));
        }
    }
    if store.len() + store.buffers().count() != decls.len() {
        return Err(bad("checkpoint holds records the architecture does not declare"));
    }
    Ok(ModelBundle { arch, params: store })
}

pub fn save<T: Scalar>(bundle: &ModelBundle<T>, path: impl AsRef<Path>) -> Result<()> {
    let bytes = to_bytes(bundle)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<ModelBundle<T>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}
