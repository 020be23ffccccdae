//! On-disk epoch format and label CSV export.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic            4 bytes  "PSGB"
//! version          u16      currently 1
//! n_epochs         u32
//! n_channels       u16      must be 9
//! samples_per_epoch u32     must be 6000
//! has_labels       u8       0 or 1
//! subject_id_len   u16
//! subject_id       UTF-8 bytes
//! epochs           n_epochs * 9 * 6000 f32, row-major per epoch
//! labels           n_epochs u8 stage codes, only if has_labels = 1
//! ```

use crate::error::{Error, Result};
use crate::types::{Epoch, Recording, SleepStage, NUM_CHANNELS, SAMPLES_PER_EPOCH};
use ndarray::Array2;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"PSGB";
const VERSION: u16 = 1;

fn format_err(offset: u64, reason: impl Into<String>) -> Error {
    Error::Format {
        offset,
        reason: reason.into(),
    }
}

/// Writes a recording; samples are stored bit-exactly as 32-bit floats.
pub fn write_recording(rec: &Recording, path: impl AsRef<Path>) -> Result<()> {
    let subject = rec.subject_id().unwrap_or("").as_bytes();
    if subject.len() > u16::MAX as usize {
        return Err(Error::State("subject id longer than 65535 bytes".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(rec.len() as u32).to_le_bytes())?;
    w.write_all(&(NUM_CHANNELS as u16).to_le_bytes())?;
    w.write_all(&(SAMPLES_PER_EPOCH as u32).to_le_bytes())?;
    w.write_all(&[rec.labels().is_some() as u8])?;
    w.write_all(&(subject.len() as u16).to_le_bytes())?;
    w.write_all(subject)?;
    let mut buf = Vec::with_capacity(NUM_CHANNELS * SAMPLES_PER_EPOCH * 4);
    for epoch in rec.epochs() {
        buf.clear();
        for v in epoch.samples().iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    if let Some(labels) = rec.labels() {
        let codes: Vec<u8> = labels.iter().map(|s| s.code() as u8).collect();
        w.write_all(&codes)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a recording written by [`write_recording`], validating the header
/// and payload sizes. Errors carry the byte offset of the problem.
pub fn read_recording(path: impl AsRef<Path>) -> Result<Recording> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };

    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(format_err(0, format!("bad magic {magic:?}, expected PSGB")));
    }
    let version = u16::from_le_bytes(cur.take(2, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(format_err(4, format!("unsupported version {version}")));
    }
    let n_epochs = u32::from_le_bytes(cur.take(4, "n_epochs")?.try_into().unwrap()) as usize;
    let n_channels = u16::from_le_bytes(cur.take(2, "n_channels")?.try_into().unwrap()) as usize;
    if n_channels != NUM_CHANNELS {
        return Err(format_err(10, format!("expected 9 channels, got {n_channels}")));
    }
    let spe = u32::from_le_bytes(cur.take(4, "samples_per_epoch")?.try_into().unwrap()) as usize;
    if spe != SAMPLES_PER_EPOCH {
        return Err(format_err(12, format!("expected 6000 samples/epoch, got {spe}")));
    }
    let has_labels = cur.take(1, "has_labels")?[0];
    if has_labels > 1 {
        return Err(format_err(16, format!("has_labels must be 0/1, got {has_labels}")));
    }
    let id_len = u16::from_le_bytes(cur.take(2, "subject_id_len")?.try_into().unwrap()) as usize;
    let id_off = cur.pos as u64;
    let id_bytes = cur.take(id_len, "subject_id")?;
    let subject_id = std::str::from_utf8(id_bytes)
        .map_err(|e| format_err(id_off, format!("subject id is not UTF-8: {e}")))?
        .to_string();

    let mut epochs = Vec::with_capacity(n_epochs);
    for idx in 0..n_epochs {
        let off = cur.pos as u64;
        let raw = cur.take(NUM_CHANNELS * SAMPLES_PER_EPOCH * 4, "epoch samples")?;
        let mut m = Array2::zeros((NUM_CHANNELS, SAMPLES_PER_EPOCH));
        for (k, chunk) in raw.chunks_exact(4).enumerate() {
            m[[k / SAMPLES_PER_EPOCH, k % SAMPLES_PER_EPOCH]] =
                f32::from_le_bytes(chunk.try_into().unwrap());
        }
        epochs.push(
            Epoch::new(m, subject_id.clone(), idx)
                .map_err(|e| format_err(off, format!("epoch {idx}: {e}")))?,
        );
    }

    let labels = if has_labels == 1 {
        let off = cur.pos as u64;
        let raw = cur.take(n_epochs, "labels")?;
        let mut labels = Vec::with_capacity(n_epochs);
        for (i, &code) in raw.iter().enumerate() {
            labels.push(SleepStage::from_code(code as usize).map_err(|_| {
                format_err(off + i as u64, format!("invalid stage code {code}"))
            })?);
        }
        Some(labels)
    } else {
        None
    };

    if cur.pos != bytes.len() {
        return Err(format_err(
            cur.pos as u64,
            format!("{} trailing bytes after payload", bytes.len() - cur.pos),
        ));
    }
    Recording::new(epochs, labels)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(format_err(
                self.bytes.len() as u64,
                format!(
                    "truncated while reading {what}: need {n} bytes at offset {}",
                    self.pos
                ),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
}

/// Writes labels as `epoch_index,stage_code` CSV.
pub fn write_labels_csv(rec: &Recording, path: impl AsRef<Path>) -> Result<()> {
    let labels = rec
        .labels()
        .ok_or_else(|| Error::State("recording has no labels to export".into()))?;
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "epoch_index,stage_code")?;
    for (i, s) in labels.iter().enumerate() {
        writeln!(w, "{i},{}", s.code())?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use tempfile::tempdir;

    fn sample_recording(n: usize, labeled: bool) -> Recording {
        let epochs: Vec<Epoch> = (0..n)
            .map(|i| {
                let m = Array2::from_shape_fn((NUM_CHANNELS, SAMPLES_PER_EPOCH), |(c, j)| {
                    ((i * 7 + c * 13 + j) % 101) as f32 * 0.37 - 17.0
                });
                Epoch::new(m, "subj-A", i).unwrap()
            })
            .collect();
        let labels = labeled.then(|| {
            (0..n)
                .map(|i| SleepStage::from_code(i % 5).unwrap())
                .collect()
        });
        Recording::new(epochs, labels).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("r.psgb");
        let rec = sample_recording(3, true);
        write_recording(&rec, &path).unwrap();
        let back = read_recording(&path).unwrap();
        assert_eq!(rec, back);
    }

    #[test]
    fn unlabeled_recording_round_trips_without_labels() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("r.psgb");
        let rec = sample_recording(2, false);
        write_recording(&rec, &path).unwrap();
        let back = read_recording(&path).unwrap();
        assert!(back.labels().is_none());
        assert_eq!(rec, back);
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("r.psgb");
        write_recording(&sample_recording(5, false), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        // Drop the last epoch's worth of bytes: header claims 5, payload has 4.
        let cut = bytes.len() - NUM_CHANNELS * SAMPLES_PER_EPOCH * 4;
        std::fs::write(&path, &bytes[..cut]).unwrap();
        match read_recording(&path) {
            Err(Error::Format { offset, reason }) => {
                assert_eq!(offset as usize, cut);
                assert!(reason.contains("truncated"), "reason: {reason}");
            }
            other => panic!("expected Format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_rejected_at_offset_zero() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("r.psgb");
        write_recording(&sample_recording(1, false), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        match read_recording(&path) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected Format error, got {other:?}"),
        }
    }

    #[test]
    fn labels_csv_lists_codes() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        write_labels_csv(&sample_recording(3, true), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "epoch_index,stage_code\n0,0\n1,1\n2,2\n");
    }
}
