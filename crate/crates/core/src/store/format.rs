//! The EMB1 container: one file per tap point, little-endian throughout.
//!
//! ```text
//! header   magic "EMB1" | version u16 | tap code u8 | record count u32 | dtype u8
//! record   id length u16 | id bytes (UTF-8) | class id u32 | rank u8
//!          | dims u32 x rank | payload f32 x product(dims), row-major
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::error::{Error, Result};
use crate::representation::TapPoint;
use crate::tensor::EmbeddingTensor;

pub const MAGIC: [u8; 4] = *b"EMB1";
pub const FORMAT_VERSION: u16 = 1;
pub const DTYPE_F32_LE: u8 = 0;
pub const HEADER_LEN: usize = 12;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic {0:02x?}, expected \"EMB1\"")]
    BadMagic(Vec<u8>),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("unknown tap code {0}")]
    UnknownTap(u8),
    #[error("file truncated inside {0}")]
    Truncated(String),
    #[error("header declares {declared} records but the body holds {found}")]
    CountMismatch { declared: u32, found: u32 },
    #[error("{bytes} unexpected bytes after the {declared} declared records")]
    TrailingData { declared: u32, bytes: usize },
    #[error("record '{image_id}': non-finite payload value")]
    NonFinite { image_id: String },
    #[error("record '{image_id}': {detail}")]
    InvalidRecord { image_id: String, detail: String },
    #[error("record {0}: image id is not valid UTF-8")]
    InvalidUtf8(u32),
    #[error("too many records for a u32 count: {0}")]
    TooManyRecords(usize),
}

/// One record as laid out on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredRecord {
    pub image_id: String,
    pub class_id: u32,
    pub shape: Vec<u32>,
    pub data: Vec<f32>,
}

impl StoredRecord {
    pub fn from_tensor(image_id: impl Into<String>, class_id: u32, tensor: &EmbeddingTensor) -> Self {
        Self {
            image_id: image_id.into(),
            class_id,
            shape: tensor.shape().iter().map(|&d| d as u32).collect(),
            data: tensor.data().to_vec(),
        }
    }

    pub fn to_tensor(&self) -> Result<EmbeddingTensor> {
        EmbeddingTensor::new(
            self.shape.iter().map(|&d| d as usize).collect(),
            self.data.clone(),
        )
    }

    pub fn into_tensor(self) -> Result<EmbeddingTensor> {
        EmbeddingTensor::new(self.shape.into_iter().map(|d| d as usize).collect(), self.data)
    }

    fn check(&self) -> std::result::Result<(), FormatError> {
        let invalid = |detail: String| FormatError::InvalidRecord {
            image_id: self.image_id.clone(),
            detail,
        };
        if self.image_id.len() > usize::from(u16::MAX) {
            return Err(invalid(format!("image id is {} bytes long", self.image_id.len())));
        }
        if self.shape.is_empty() || self.shape.len() > usize::from(u8::MAX) {
            return Err(invalid(format!("rank {} not in 1..=255", self.shape.len())));
        }
        if self.shape.contains(&0) {
            return Err(invalid(format!("zero dimension in shape {:?}", self.shape)));
        }
        let expected = self
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
        if expected != Some(self.data.len()) {
            return Err(invalid(format!(
                "shape {:?} does not match {} payload values",
                self.shape,
                self.data.len()
            )));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(FormatError::NonFinite {
                image_id: self.image_id.clone(),
            });
        }
        Ok(())
    }
}

/// Contents of one EMB1 file.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub tap: TapPoint,
    pub records: Vec<StoredRecord>,
}

pub fn encode<W: Write>(
    records: &[StoredRecord],
    tap: TapPoint,
    mut w: W,
) -> std::result::Result<(), EncodeError> {
    let count = u32::try_from(records.len())
        .map_err(|_| FormatError::TooManyRecords(records.len()))?;
    for r in records {
        r.check()?;
    }
    w.write_all(&MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&[tap.code()])?;
    w.write_all(&count.to_le_bytes())?;
    w.write_all(&[DTYPE_F32_LE])?;
    for r in records {
        w.write_all(&(r.image_id.len() as u16).to_le_bytes())?;
        w.write_all(r.image_id.as_bytes())?;
        w.write_all(&r.class_id.to_le_bytes())?;
        w.write_all(&[r.shape.len() as u8])?;
        for d in &r.shape {
            w.write_all(&d.to_le_bytes())?;
        }
        let mut payload = Vec::with_capacity(r.data.len() * 4);
        for v in &r.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&payload)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn encode_to_vec(
    records: &[StoredRecord],
    tap: TapPoint,
) -> std::result::Result<Vec<u8>, FormatError> {
    let mut buf = Vec::new();
    match encode(records, tap, &mut buf) {
        Ok(()) => Ok(buf),
        Err(EncodeError::Format(e)) => Err(e),
        Err(EncodeError::Io(e)) => unreachable!("writing to a Vec cannot fail: {e}"),
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &dyn Fn() -> String) -> std::result::Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let out = &self.buf[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(FormatError::Truncated(what())),
        }
    }

    fn u8(&mut self, what: &dyn Fn() -> String) -> std::result::Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &dyn Fn() -> String) -> std::result::Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &dyn Fn() -> String) -> std::result::Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn decode(bytes: &[u8]) -> std::result::Result<EmbeddingFile, FormatError> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let header = || "header".to_owned();
    if bytes.len() < MAGIC.len() || bytes[..4] != MAGIC {
        return Err(FormatError::BadMagic(bytes[..bytes.len().min(4)].to_vec()));
    }
    cur.take(4, &header)?;
    let version = cur.u16(&header)?;
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let tap_code = cur.u8(&header)?;
    let tap = TapPoint::from_code(tap_code).ok_or(FormatError::UnknownTap(tap_code))?;
    let declared = cur.u32(&header)?;
    let dtype = cur.u8(&header)?;
    if dtype != DTYPE_F32_LE {
        return Err(FormatError::UnsupportedDtype(dtype));
    }

    let mut records = Vec::with_capacity((declared as usize).min(1 << 16));
    for index in 0..declared {
        if cur.remaining() == 0 {
            return Err(FormatError::CountMismatch {
                declared,
                found: index,
            });
        }
        let at = || format!("record {index}");
        let id_len = cur.u16(&at)?;
        let image_id = std::str::from_utf8(cur.take(usize::from(id_len), &at)?)
            .map_err(|_| FormatError::InvalidUtf8(index))?
            .to_owned();
        let class_id = cur.u32(&at)?;
        let rank = cur.u8(&at)?;
        let shape = (0..rank)
            .map(|_| cur.u32(&at))
            .collect::<std::result::Result<Vec<u32>, _>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| FormatError::InvalidRecord {
                image_id: image_id.clone(),
                detail: format!("shape {shape:?} overflows"),
            })?;
        let data = cur
            .take(n, &at)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let record = StoredRecord {
            image_id,
            class_id,
            shape,
            data,
        };
        record.check()?;
        records.push(record);
    }
    if cur.remaining() > 0 {
        return Err(FormatError::TrailingData {
            declared,
            bytes: cur.remaining(),
        });
    }
    Ok(EmbeddingFile { tap, records })
}

pub fn write_embeddings(records: &[StoredRecord], tap: TapPoint, path: &Path) -> Result<()> {
    let bytes = encode_to_vec(records, tap).map_err(|source| Error::Format {
        path: path.to_owned(),
        source,
    })?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|source| Error::Format {
        path: path.to_owned(),
        source,
    })
}
