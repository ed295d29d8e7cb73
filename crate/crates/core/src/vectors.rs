//! Embedding spaces and the vector file formats.
//!
//! Binary layout (`MFV1`), all integers little-endian:
//!
//! ```text
//! "MFV1" | dim: u32 | record*
//! record = id_len: u16 | entry_id: utf8 | cui_len: u16 | cui: utf8 | dim x f32
//! ```
//!
//! The text mirror is one TSV row per entry: `entry_id<TAB>cui<TAB>f f f ...`.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MFV1";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingEntry {
    pub entry_id: String,
    pub cui: String,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSpace {
    dim: usize,
    entries: Vec<EmbeddingEntry>,
}

impl EmbeddingSpace {
    pub fn new(dim: usize, entries: Vec<EmbeddingEntry>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        let mut ids = HashSet::with_capacity(entries.len());
        for e in &entries {
            if e.vector.len() != dim {
                return Err(Error::Dimension {
                    entry_id: e.entry_id.clone(),
                    expected: dim,
                    found: e.vector.len(),
                });
            }
            if e.vector.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    entry_id: e.entry_id.clone(),
                });
            }
            if !ids.insert(e.entry_id.as_str()) {
                return Err(Error::invalid(format!("duplicate entry id `{}`", e.entry_id)));
            }
        }
        Ok(EmbeddingSpace { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[EmbeddingEntry] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<EmbeddingEntry> {
        self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sub-space of entries accepted by `keep`, in original order.
    pub fn filtered(&self, mut keep: impl FnMut(&EmbeddingEntry) -> bool) -> EmbeddingSpace {
        EmbeddingSpace {
            dim: self.dim,
            entries: self.entries.iter().filter(|e| keep(e)).cloned().collect(),
        }
    }

    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        let io = |e| Error::io("<output>", e);
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&(self.dim as u32).to_le_bytes()).map_err(io)?;
        for e in &self.entries {
            for field in [&e.entry_id, &e.cui] {
                let len = u16::try_from(field.len())
                    .map_err(|_| Error::invalid(format!("field `{field}` longer than 65535 bytes")))?;
                w.write_all(&len.to_le_bytes()).map_err(io)?;
                w.write_all(field.as_bytes()).map_err(io)?;
            }
            for x in &e.vector {
                w.write_all(&x.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn write_text(&self, mut w: impl Write) -> Result<()> {
        let io = |e| Error::io("<output>", e);
        for e in &self.entries {
            let floats: Vec<String> = e.vector.iter().map(|x| format!("{x:?}")).collect();
            writeln!(w, "{}\t{}\t{}", e.entry_id, e.cui, floats.join(" ")).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn save(&self, path: impl AsRef<Path>, text: bool) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let w = BufWriter::new(file);
        let res = if text { self.write_text(w) } else { self.write_binary(w) };
        res.map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }
}

/// Loads a vector file, binary unless `text` is set, validating every entry.
pub fn embed_corpus_ingest(path: impl AsRef<Path>, text: bool) -> Result<EmbeddingSpace> {
    let path = path.as_ref();
    let origin = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    if text {
        read_text(BufReader::new(file), &origin)
    } else {
        let mut bytes = Vec::new();
        BufReader::new(file).read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        read_binary(&bytes, &origin)
    }
}

pub fn read_binary(bytes: &[u8], origin: &str) -> Result<EmbeddingSpace> {
    let mut cur = Cursor { bytes, pos: 0, origin };
    if cur.take(4)? != MAGIC {
        return Err(Error::parse(origin, 0, "missing MFV1 magic"));
    }
    let dim = u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes")) as usize;
    if dim == 0 {
        return Err(Error::parse(origin, 0, "header dimension is zero"));
    }
    let mut entries = Vec::new();
    while cur.pos < bytes.len() {
        let entry_id = cur.string()?;
        let cui = cur.string()?;
        let need = dim * 4;
        if bytes.len() - cur.pos < need {
            return Err(Error::Dimension {
                entry_id,
                expected: dim,
                found: (bytes.len() - cur.pos) / 4,
            });
        }
        let vector = cur
            .take(need)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        entries.push(EmbeddingEntry { entry_id, cui, vector });
    }
    EmbeddingSpace::new(dim, entries)
}

pub fn read_text(reader: impl BufRead, origin: &str) -> Result<EmbeddingSpace> {
    let mut dim = None;
    let mut entries = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let (Some(entry_id), Some(cui), Some(floats)) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::parse(origin, idx + 1, "expected `entry_id<TAB>cui<TAB>floats`"));
        };
        let vector = floats
            .split_whitespace()
            .map(|f| f.parse::<f32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(origin, idx + 1, format!("entry `{entry_id}`: {e}")))?;
        let expected = *dim.get_or_insert(vector.len());
        if vector.len() != expected {
            return Err(Error::Dimension {
                entry_id: entry_id.to_string(),
                expected,
                found: vector.len(),
            });
        }
        entries.push(EmbeddingEntry {
            entry_id: entry_id.to_string(),
            cui: cui.to_string(),
            vector,
        });
    }
    let Some(dim) = dim else {
        return Err(Error::parse(origin, 0, "no vectors"));
    };
    EmbeddingSpace::new(dim, entries)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse(self.origin, 0, format!("truncated record at byte {}", self.pos)));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn string(&mut self) -> Result<String> {
        let len = u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")) as usize;
        let at = self.pos;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::parse(self.origin, 0, format!("invalid UTF-8 at byte {at}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, v: &[f32]) -> EmbeddingEntry {
        EmbeddingEntry {
            entry_id: id.into(),
            cui: "C1".into(),
            vector: v.to_vec(),
        }
    }

    #[test]
    fn binary_round_trip() {
        let space = EmbeddingSpace::new(4, vec![entry("a", &[1.0, 0.0, 0.5, -2.0]), entry("b", &[0.0; 4])]).unwrap();
        let mut buf = Vec::new();
        space.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..4], MAGIC);
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 4);
        assert_eq!(read_binary(&buf, "mem").unwrap(), space);
    }

    #[test]
    fn text_round_trip() {
        let space = EmbeddingSpace::new(2, vec![entry("a", &[0.1, -3.25]), entry("b", &[1e-7, 2.0])]).unwrap();
        let mut buf = Vec::new();
        space.write_text(&mut buf).unwrap();
        assert_eq!(read_text(buf.as_slice(), "mem").unwrap(), space);
    }

    #[test]
    fn short_record_names_entry() {
        let mut buf = Vec::new();
        EmbeddingSpace::new(3, vec![entry("a", &[1.0, 2.0, 3.0])])
            .unwrap()
            .write_binary(&mut buf)
            .unwrap();
        buf[4] = 4; // claim dim 4
        match read_binary(&buf, "mem").unwrap_err() {
            Error::Dimension { entry_id, expected, found } => {
                assert_eq!((entry_id.as_str(), expected, found), ("a", 4, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
        let err = read_text("a\tC1\t1 2 3 4\nb\tC1\t1 2 3\n".as_bytes(), "t").unwrap_err();
        assert!(matches!(err, Error::Dimension { ref entry_id, .. } if entry_id == "b"));
    }

    #[test]
    fn rejects_non_finite() {
        let err = read_text("a\tC1\t1 NaN\n".as_bytes(), "t").unwrap_err();
        assert!(matches!(err, Error::NonFinite { ref entry_id } if entry_id == "a"));
        assert!(EmbeddingSpace::new(1, vec![entry("x", &[f32::INFINITY])]).is_err());
    }

    #[test]
    fn rejects_bad_magic_and_duplicates() {
        assert!(read_binary(b"MFV2\x01\x00\x00\x00", "m").is_err());
        assert!(EmbeddingSpace::new(1, vec![entry("x", &[1.0]), entry("x", &[2.0])]).is_err());
    }
}
