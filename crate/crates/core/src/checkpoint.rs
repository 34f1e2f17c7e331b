//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SRCK" u32:version
//! u32:len config text (flat key = value model config)
//! u32:len vocabulary text (one token per line)
//! u32:count
//! count × { u32:len name, u32:rank, rank × u32:dim, f32 payload row-major }
//! ```
//!
//! Loading builds a fresh model from the echoed config and vocabulary and
//! then overwrites every parameter by name.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::config::{from_flat_text, to_flat_text};
use crate::error::{format_err, Result};
use crate::language::{EmbeddingTable, Vocabulary};
use crate::model::{ModelConfig, RefModel};
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 4] = b"SRCK";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| format_err("checkpoint", format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) -> Result<()> {
    put_u32(out, b.len())?;
    out.extend_from_slice(b);
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(format_err("checkpoint", "truncated file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn text(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| format_err("checkpoint", "text field is not UTF-8"))
    }
}

pub fn encode<T: Real>(model: &RefModel<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_bytes(&mut out, to_flat_text(&model.cfg)?.as_bytes())?;
    put_bytes(&mut out, model.vocab.to_text().as_bytes())?;
    put_u32(&mut out, model.store.len())?;
    for id in model.store.ids() {
        put_bytes(&mut out, model.store.name(id).as_bytes())?;
        let t = model.store.value(id);
        put_u32(&mut out, t.shape().len())?;
        for &d in t.shape() {
            put_u32(&mut out, d)?;
        }
        for v in t.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode<T: Real>(bytes: &[u8]) -> Result<RefModel<T>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(format_err("checkpoint", "bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(format_err("checkpoint", format!("unsupported version {version}")));
    }
    let cfg: ModelConfig = from_flat_text(&r.text()?)?;
    let vocab = Vocabulary::from_text(&r.text()?)?;
    let table = EmbeddingTable {
        vectors: Tensor::zeros(&[vocab.len(), cfg.embedding_dim]),
        frozen: cfg.freeze_embeddings,
    };
    let mut model = RefModel::<T>::new(cfg, vocab, table, 0)?;
    let count = r.u32()?;
    if count != model.store.len() {
        return Err(format_err(
            "checkpoint",
            format!("{count} parameters, model expects {}", model.store.len()),
        ));
    }
    for _ in 0..count {
        let name = r.text()?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::from_f64_lossy(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        let id = model
            .store
            .id(&name)
            .ok_or_else(|| format_err("checkpoint", format!("unknown parameter `{name}`")))?;
        model.store.set_value(id, Tensor::new(shape, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(format_err("checkpoint", "trailing bytes"));
    }
    Ok(model)
}

pub fn save<T: Real>(model: &RefModel<T>, path: &Path) -> Result<()> {
    let bytes = encode(model)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load<T: Real>(path: &Path) -> Result<RefModel<T>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}
