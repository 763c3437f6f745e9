//! Record files.
//!
//! Binary layout (little-endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 4     | magic `LFSR` |
//! | 2     | version (1) |
//! | 2     | flags (bit 0: label track present) |
//! | 4     | channel count `N` |
//! | 8     | sample rate, `f64` |
//! | 8     | samples per channel `S` |
//! | 4·N·S | samples, row-major `f32` |
//! | S     | label track, one `u8` per sample (only when flagged) |

use std::fs;
use std::path::Path;

use super::SignalRecord;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LFSR";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 28;

pub fn write_record_bytes(record: &SignalRecord) -> Vec<u8> {
    let n = record.len();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * record.samples().len() + n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let flags: u16 = u16::from(record.label_track().is_some());
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&(record.channels() as u32).to_le_bytes());
    out.extend_from_slice(&record.sample_rate().to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for v in record.samples() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    if let Some(labels) = record.label_track() {
        out.extend_from_slice(labels);
    }
    out
}

pub fn write_record(path: &Path, record: &SignalRecord) -> Result<()> {
    fs::write(path, write_record_bytes(record))?;
    Ok(())
}

fn take<'a>(bytes: &'a [u8], offset: &mut usize, len: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < *offset + len {
        return Err(Error::Format {
            offset: *offset as u64,
            message: format!("truncated while reading {what}: need {len} bytes, {} left", bytes.len() - *offset),
        });
    }
    let out = &bytes[*offset..*offset + len];
    *offset += len;
    Ok(out)
}

pub fn read_record_bytes(bytes: &[u8]) -> Result<SignalRecord> {
    let mut off = 0;
    let magic = take(bytes, &mut off, 4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic {magic:?}"),
        });
    }
    let version = u16::from_le_bytes(take(bytes, &mut off, 2, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let flags = u16::from_le_bytes(take(bytes, &mut off, 2, "flags")?.try_into().unwrap());
    let channels = u32::from_le_bytes(take(bytes, &mut off, 4, "channel count")?.try_into().unwrap()) as usize;
    let rate_at = off;
    let sample_rate = f64::from_le_bytes(take(bytes, &mut off, 8, "sample rate")?.try_into().unwrap());
    if !(sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(Error::Format {
            offset: rate_at as u64,
            message: format!("invalid sample rate {sample_rate}"),
        });
    }
    let len_at = off;
    let len = u64::from_le_bytes(take(bytes, &mut off, 8, "sample count")?.try_into().unwrap()) as usize;
    if channels == 0 || len == 0 {
        return Err(Error::Format {
            offset: len_at as u64,
            message: "record has no samples".into(),
        });
    }
    let total = channels.checked_mul(len).ok_or_else(|| Error::Format {
        offset: len_at as u64,
        message: "sample count overflows".into(),
    })?;
    let raw = take(bytes, &mut off, total * 4, "samples")?;
    let samples: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let labels = if flags & 1 == 1 {
        let at = off;
        let l = take(bytes, &mut off, len, "label track")?.to_vec();
        if let Some(pos) = l.iter().position(|&v| v > 1) {
            return Err(Error::Format {
                offset: (at + pos) as u64,
                message: format!("label value {} is not 0 or 1", l[pos]),
            });
        }
        Some(l)
    } else {
        None
    };
    if off != bytes.len() {
        return Err(Error::Format {
            offset: off as u64,
            message: format!("{} trailing bytes", bytes.len() - off),
        });
    }
    SignalRecord::new(channels, sample_rate, samples, labels)
}

pub fn read_record(path: &Path) -> Result<SignalRecord> {
    read_record_bytes(&fs::read(path)?)
}

/// Loads a CSV with a header row of channel names and one channel per column.
/// A column named `label` is taken as the label track.
pub fn load_csv(text: &str, sample_rate: f64) -> Result<SignalRecord> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::invalid("empty CSV"))?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let label_col = names.iter().position(|n| n.eq_ignore_ascii_case("label"));
    let channels = names.len() - usize::from(label_col.is_some());
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); channels];
    let mut labels = Vec::new();
    for (row, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != names.len() {
            return Err(Error::invalid(format!(
                "CSV row {} has {} fields, header has {}",
                row + 2,
                fields.len(),
                names.len()
            )));
        }
        let mut c = 0;
        for (i, f) in fields.iter().enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::invalid(format!("CSV row {} column {}: not a number: {f}", row + 2, i + 1)))?;
            if Some(i) == label_col {
                labels.push(if v != 0.0 { 1 } else { 0 });
            } else {
                columns[c].push(v);
                c += 1;
            }
        }
    }
    let samples = columns.concat();
    SignalRecord::new(channels, sample_rate, samples, label_col.map(|_| labels))
}
