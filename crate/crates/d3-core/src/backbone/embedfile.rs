//! Binary embedding archive.
//!
//! Layout, all little endian: magic `D3EB`, version u16, dim u32, count u64,
//! then `count` records. Each record is a length-prefixed sample id, a
//! length-prefixed generator id, a class byte, and two dim-length f32 vectors
//! (original view first, disrupted view second).

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: [u8; 4] = *b"D3EB";
const VERSION: u16 = 1;
/// Ids longer than this are treated as corruption, not data.
const MAX_ID_LEN: u32 = 4096;

#[derive(Debug, Error)]
pub enum EmbedFileError {
    #[error("not an embedding archive (bad magic)")]
    BadMagic,
    #[error("unsupported archive version {0}")]
    UnsupportedVersion(u16),
    #[error("corrupt archive: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRecord {
    pub sample_id: String,
    pub generator_id: String,
    /// 0 real, 1 fake.
    pub label: u8,
    pub original: Vec<f32>,
    pub disrupted: Vec<f32>,
}

pub fn save_embeddings(
    path: &Path,
    dim: u32,
    records: &[EmbeddingRecord],
) -> Result<(), EmbedFileError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&dim.to_le_bytes())?;
    w.write_all(&(records.len() as u64).to_le_bytes())?;
    for r in records {
        if r.original.len() != dim as usize || r.disrupted.len() != dim as usize {
            return Err(EmbedFileError::Corrupt(format!(
                "record {} has vector lengths {}/{}, archive dim is {dim}",
                r.sample_id,
                r.original.len(),
                r.disrupted.len()
            )));
        }
        write_str(&mut w, &r.sample_id)?;
        write_str(&mut w, &r.generator_id)?;
        w.write_all(&[r.label])?;
        for v in r.original.iter().chain(&r.disrupted) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_str(w: &mut impl Write, s: &str) -> io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_u16(r: &mut impl Read) -> io::Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Streaming reader; validates the header eagerly and each record lazily.
pub struct EmbeddingReader<R: Read> {
    inner: R,
    dim: u32,
    remaining: u64,
}

impl EmbeddingReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self, EmbedFileError> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

impl<R: Read> EmbeddingReader<R> {
    pub fn new(mut inner: R) -> Result<Self, EmbedFileError> {
        let mut magic = [0u8; 4];
        inner.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(EmbedFileError::BadMagic);
        }
        let version = read_u16(&mut inner)?;
        if version != VERSION {
            return Err(EmbedFileError::UnsupportedVersion(version));
        }
        let dim = read_u32(&mut inner)?;
        if dim == 0 {
            return Err(EmbedFileError::Corrupt("dim is zero".into()));
        }
        let remaining = read_u64(&mut inner)?;
        Ok(Self { inner, dim, remaining })
    }

    pub fn dim(&self) -> u32 {
        self.dim
    }

    pub fn remaining(&self) -> u64 {
        self.remaining
    }

    fn read_record(&mut self) -> Result<EmbeddingRecord, EmbedFileError> {
        let sample_id = self.read_id()?;
        let generator_id = self.read_id()?;
        let mut label = [0u8; 1];
        self.inner.read_exact(&mut label)?;
        if label[0] > 1 {
            return Err(EmbedFileError::Corrupt(format!(
                "record {sample_id} has class byte {}",
                label[0]
            )));
        }
        let original = self.read_vec()?;
        let disrupted = self.read_vec()?;
        Ok(EmbeddingRecord { sample_id, generator_id, label: label[0], original, disrupted })
    }

    fn read_id(&mut self) -> Result<String, EmbedFileError> {
        let len = read_u32(&mut self.inner)?;
        if len > MAX_ID_LEN {
            return Err(EmbedFileError::Corrupt(format!("id length {len} exceeds limit")));
        }
        let mut buf = vec![0u8; len as usize];
        self.inner.read_exact(&mut buf)?;
        String::from_utf8(buf)
            .map_err(|_| EmbedFileError::Corrupt("id is not utf-8".into()))
    }

    fn read_vec(&mut self) -> Result<Vec<f32>, EmbedFileError> {
        let mut buf = vec![0u8; self.dim as usize * 4];
        self.inner.read_exact(&mut buf)?;
        Ok(buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

impl<R: Read> Iterator for EmbeddingReader<R> {
    type Item = Result<EmbeddingRecord, EmbedFileError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        Some(self.read_record())
    }
}

pub fn load_embeddings(path: &Path) -> Result<(u32, Vec<EmbeddingRecord>), EmbedFileError> {
    let mut reader = EmbeddingReader::open(path)?;
    let dim = reader.dim();
    let mut records = Vec::with_capacity(reader.remaining() as usize);
    for r in &mut reader {
        records.push(r?);
    }
    let mut probe = [0u8; 1];
    match reader.inner.read(&mut probe)? {
        0 => Ok((dim, records)),
        _ => Err(EmbedFileError::Corrupt("trailing bytes after final record".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(i: usize, dim: usize) -> EmbeddingRecord {
        EmbeddingRecord {
            sample_id: format!("gen_real_{i:04}"),
            generator_id: "gen".into(),
            label: (i % 2) as u8,
            original: (0..dim).map(|d| (i * dim + d) as f32 * 0.25).collect(),
            disrupted: (0..dim).map(|d| -((i * dim + d) as f32)).collect(),
        }
    }

    #[test]
    fn roundtrip_preserves_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.d3eb");
        let records: Vec<_> = (0..5).map(|i| sample(i, 16)).collect();
        save_embeddings(&path, 16, &records).unwrap();
        let (dim, loaded) = load_embeddings(&path).unwrap();
        assert_eq!(dim, 16);
        assert_eq!(loaded, records);
    }

    #[test]
    fn wide_vectors_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wide.d3eb");
        let records = vec![sample(0, 1024)];
        save_embeddings(&path, 1024, &records).unwrap();
        assert_eq!(load_embeddings(&path).unwrap().1, records);
    }

    #[test]
    fn loaded_wide_archive_trains_a_linear_head() {
        use crate::head::{train_on_fixed, HeadKind, HeadModel, PairMode, PairSample, TrainConfig};

        let dim = 1024usize;
        let mk = |i: usize, label: u8| {
            let bias = if label == 1 { 0.6 } else { -0.6 };
            let v: Vec<f32> =
                (0..dim).map(|d| bias + ((i * 31 + d) % 7) as f32 * 0.01).collect();
            EmbeddingRecord {
                sample_id: format!("wide_{i:03}"),
                generator_id: "wide".into(),
                label,
                original: v.clone(),
                disrupted: v,
            }
        };
        let records: Vec<_> = (0..40).map(|i| mk(i, (i % 2) as u8)).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.d3eb");
        save_embeddings(&path, dim as u32, &records).unwrap();

        let (loaded_dim, loaded) = load_embeddings(&path).unwrap();
        let pairs: Vec<PairSample> = loaded
            .into_iter()
            .map(|r| PairSample {
                original: r.original,
                disrupted: r.disrupted,
                label: r.label,
                generator_id: r.generator_id,
                architecture_group: "wide".into(),
            })
            .collect();
        let model = HeadModel::new(
            HeadKind::FcOnly,
            PairMode::OriginalDisrupted,
            loaded_dim as usize,
            0,
        )
        .unwrap();
        let cfg = TrainConfig { epochs: 5, batch_size: 8, learning_rate: 5e-2, ..TrainConfig::default() };
        let out = train_on_fixed(model, cfg, &pairs, &pairs).unwrap();
        assert_eq!(out.best_val_accuracy, 1.0);
    }

    #[test]
    fn dimension_mismatch_is_rejected_at_save() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.d3eb");
        let err = save_embeddings(&path, 8, &[sample(0, 16)]).unwrap_err();
        assert!(matches!(err, EmbedFileError::Corrupt(_)));
    }

    #[test]
    fn bad_magic_and_future_version_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.d3eb");
        save_embeddings(&path, 4, &[sample(0, 4)]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mut flipped = bytes.clone();
        flipped[0] = b'X';
        std::fs::write(&path, &flipped).unwrap();
        assert!(matches!(
            EmbeddingReader::open(&path).err().unwrap(),
            EmbedFileError::BadMagic
        ));
        bytes[4] = 9;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            EmbeddingReader::open(&path).err().unwrap(),
            EmbedFileError::UnsupportedVersion(9)
        ));
    }

    #[test]
    fn truncation_and_trailing_bytes_are_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.d3eb");
        save_embeddings(&path, 4, &[sample(0, 4), sample(1, 4)]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(load_embeddings(&path).is_err());
        let mut extended = bytes.clone();
        extended.push(0);
        std::fs::write(&path, &extended).unwrap();
        assert!(matches!(
            load_embeddings(&path).unwrap_err(),
            EmbedFileError::Corrupt(_)
        ));
    }

    #[test]
    fn streaming_reader_reports_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.d3eb");
        let records: Vec<_> = (0..3).map(|i| sample(i, 2)).collect();
        save_embeddings(&path, 2, &records).unwrap();
        let mut reader = EmbeddingReader::open(&path).unwrap();
        assert_eq!(reader.remaining(), 3);
        assert_eq!(reader.next().unwrap().unwrap(), records[0]);
        assert_eq!(reader.remaining(), 2);
    }
}
