//! Binary embedding store.
//!
//! All integers little-endian.
//!
//! ```text
//! header   b"MILSTORE"  version:u8  embed_dim:u32  slide_count:u32
//! block    block_len:u64            bytes that follow in this block
//!          id_len:u16  id:utf8  label:u8  rows:u32  coord_count:u32
//!          embeddings: rows*embed_dim f64, row-major
//!          coords: coord_count * (level:u8 col:u32 row:u32)
//!          flags: rows * u8         0 = original tile, k = k-th augmentation
//! ```

use std::path::Path;

use crate::bags::Bag;
use crate::diff::Tensor2D;
use crate::error::{Error, Result};

use super::{Magnification, TileCoord};

const MAGIC: &[u8; 8] = b"MILSTORE";
pub const STORE_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SlideRecord {
    pub slide_id: String,
    pub label: u8,
    pub embeddings: Tensor2D,
    pub coords: Vec<TileCoord>,
    pub aug_flags: Vec<u8>,
}

impl SlideRecord {
    pub fn new(
        slide_id: impl Into<String>,
        label: u8,
        embeddings: Tensor2D,
        coords: Vec<TileCoord>,
        aug_flags: Vec<u8>,
    ) -> Result<Self> {
        let rec = Self {
            slide_id: slide_id.into(),
            label,
            embeddings,
            coords,
            aug_flags,
        };
        rec.validate()?;
        Ok(rec)
    }

    fn validate(&self) -> Result<()> {
        let rows = self.embeddings.rows();
        if rows == 0 {
            return Err(Error::Format(format!("slide {} has no tiles", self.slide_id)));
        }
        if self.coords.len() != rows || self.aug_flags.len() != rows {
            return Err(Error::Format(format!(
                "slide {}: {} embeddings, {} coords, {} flags",
                self.slide_id,
                rows,
                self.coords.len(),
                self.aug_flags.len()
            )));
        }
        if self.label > 1 {
            return Err(Error::Format(format!("slide {}: label {}", self.slide_id, self.label)));
        }
        if self.slide_id.len() > usize::from(u16::MAX) {
            return Err(Error::Format("slide id too long".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The record as a bag. With `include_augmented` false only original tiles are kept.
    pub fn to_bag(&self, include_augmented: bool) -> Result<Bag> {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| include_augmented || self.aug_flags[i] == 0)
            .collect();
        let coords = keep.iter().map(|&i| self.coords[i]).collect();
        Bag::new(self.slide_id.clone(), self.embeddings.select_rows(&keep), self.label)?.with_tile_coords(coords)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    pub embed_dim: usize,
    pub slides: Vec<SlideRecord>,
}

impl EmbeddingStore {
    pub fn new(embed_dim: usize) -> Self {
        Self {
            embed_dim,
            slides: Vec::new(),
        }
    }

    pub fn push(&mut self, record: SlideRecord) -> Result<()> {
        record.validate()?;
        if record.embeddings.cols() != self.embed_dim {
            return Err(Error::Format(format!(
                "slide {}: width {} in a width-{} store",
                record.slide_id,
                record.embeddings.cols(),
                self.embed_dim
            )));
        }
        self.slides.push(record);
        Ok(())
    }

    pub fn get(&self, slide_id: &str) -> Option<&SlideRecord> {
        self.slides.iter().find(|s| s.slide_id == slide_id)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(STORE_VERSION);
        out.extend_from_slice(
            &u32::try_from(self.embed_dim)
                .map_err(|_| Error::Format("embed_dim".into()))?
                .to_le_bytes(),
        );
        out.extend_from_slice(&(self.slides.len() as u32).to_le_bytes());
        for s in &self.slides {
            s.validate()?;
            if s.embeddings.cols() != self.embed_dim {
                return Err(Error::Format(format!(
                    "slide {} has width {}",
                    s.slide_id,
                    s.embeddings.cols()
                )));
            }
            let mut block = Vec::new();
            block.extend_from_slice(&(s.slide_id.len() as u16).to_le_bytes());
            block.extend_from_slice(s.slide_id.as_bytes());
            block.push(s.label);
            block.extend_from_slice(&(s.len() as u32).to_le_bytes());
            block.extend_from_slice(&(s.coords.len() as u32).to_le_bytes());
            for v in s.embeddings.values() {
                block.extend_from_slice(&v.to_le_bytes());
            }
            for c in &s.coords {
                block.push(c.level.code());
                block.extend_from_slice(&c.col.to_le_bytes());
                block.extend_from_slice(&c.row.to_le_bytes());
            }
            block.extend_from_slice(&s.aug_flags);
            out.extend_from_slice(&(block.len() as u64).to_le_bytes());
            out.extend_from_slice(&block);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Format("not an embedding store".into()));
        }
        let version = r.u8()?;
        if version != STORE_VERSION {
            return Err(Error::Format(format!(
                "store version {version}, expected {STORE_VERSION}"
            )));
        }
        let embed_dim = r.u32()? as usize;
        let count = r.u32()?;
        let mut store = EmbeddingStore::new(embed_dim);
        for _ in 0..count {
            let block_len = usize::try_from(r.u64()?).map_err(|_| Error::Format("block length".into()))?;
            let mut b = Reader {
                buf: r.take(block_len)?,
                pos: 0,
            };
            let id_len = usize::from(b.u16()?);
            let slide_id = String::from_utf8(b.take(id_len)?.to_vec())
                .map_err(|_| Error::Format("slide id is not UTF-8".into()))?;
            let label = b.u8()?;
            let rows = b.u32()? as usize;
            let coord_count = b.u32()? as usize;
            if coord_count != rows {
                return Err(Error::Format(format!(
                    "slide {slide_id}: {rows} embeddings, {coord_count} coords"
                )));
            }
            let n = rows
                .checked_mul(embed_dim)
                .ok_or_else(|| Error::Format("embedding block too large".into()))?;
            let raw = b.take(
                n.checked_mul(8)
                    .ok_or_else(|| Error::Format("embedding block too large".into()))?,
            )?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap_or([0; 8])))
                .collect();
            let embeddings = Tensor2D::from_vec(rows, embed_dim, values).map_err(|e| Error::Format(e.to_string()))?;
            let mut coords = Vec::with_capacity(rows);
            for _ in 0..coord_count {
                let level = Magnification::from_code(b.u8()?)?;
                let col = b.u32()?;
                let row = b.u32()?;
                coords.push(TileCoord::new(level, col, row));
            }
            let aug_flags = b.take(rows)?.to_vec();
            if b.pos != b.buf.len() {
                return Err(Error::Format(format!("slide {slide_id}: trailing bytes in block")));
            }
            store.push(SlideRecord::new(slide_id, label, embeddings, coords, aug_flags)?)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after the last block".into()));
        }
        Ok(store)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("truncated store".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes([self.u8()?, self.u8()?]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut a = [0; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}

pub fn store_write(path: &Path, store: &EmbeddingStore) -> Result<()> {
    let bytes = store.to_bytes()?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn store_read(path: &Path) -> Result<EmbeddingStore> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingStore::from_bytes(&bytes)
}
