//! Small CSV writers/readers for hypnograms, similarities, and features.

use anyhow::{Context, Result};
use ndarray::Array2;
use sleeper_core::dsp::{EpochFeatures, BAND_NAMES};
use sleeper_core::types::{ChannelId, ChannelPair, SleepStage};
use std::fmt::Write as _;
use std::path::Path;

pub fn write_hypnogram(path: &Path, predictions: &[SleepStage]) -> Result<()> {
    let mut out = String::from("epoch_index,stage_code,stage_name\n");
    for (i, s) in predictions.iter().enumerate() {
        writeln!(out, "{i},{},{}", s.code(), s.name()).unwrap();
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Reads `epoch_index,stage_code[,...]` CSV back into stages.
pub fn read_stage_csv(path: &Path) -> Result<Vec<SleepStage>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let code: usize = line
            .split(',')
            .nth(1)
            .with_context(|| format!("{}:{}: missing stage_code", path.display(), lineno + 1))?
            .trim()
            .parse()
            .with_context(|| format!("{}:{}: bad stage_code", path.display(), lineno + 1))?;
        out.push(SleepStage::from_code(code).map_err(|e| anyhow::anyhow!("{e}"))?);
    }
    Ok(out)
}

/// Similarity matrix with one `rule_<bankindex>` column per prototype.
pub fn write_similarities(path: &Path, sims: &Array2<f64>, rule_indices: &[usize]) -> Result<()> {
    let mut out = String::from("epoch_index");
    for r in rule_indices {
        write!(out, ",rule_{r}").unwrap();
    }
    out.push('\n');
    for i in 0..sims.nrows() {
        write!(out, "{i}").unwrap();
        for j in 0..sims.ncols() {
            write!(out, ",{:.6}", sims[[i, j]]).unwrap();
        }
        out.push('\n');
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_features(path: &Path, features: &[EpochFeatures]) -> Result<()> {
    let mut out = String::from("epoch_index");
    for ch in ChannelId::ALL {
        for band in BAND_NAMES {
            write!(out, ",{}_{}", band.to_lowercase(), ch.name()).unwrap();
        }
    }
    for ch in ChannelId::ALL {
        write!(out, ",amplitude_{}", ch.name()).unwrap();
    }
    for ch in ChannelId::ALL {
        write!(out, ",kurtosis_{}", ch.name()).unwrap();
    }
    for pair in ChannelPair::ALL {
        write!(out, ",spindle_sec_{}", pair.name().replace('&', "")).unwrap();
    }
    for pair in ChannelPair::ALL {
        write!(out, ",sws_sec_{}", pair.name().replace('&', "")).unwrap();
    }
    out.push('\n');
    for (i, f) in features.iter().enumerate() {
        write!(out, "{i}").unwrap();
        for row in &f.band_power {
            for v in row {
                write!(out, ",{v:.6}").unwrap();
            }
        }
        for v in &f.amplitude {
            write!(out, ",{v:.6}").unwrap();
        }
        for v in &f.kurtosis {
            write!(out, ",{v:.6}").unwrap();
        }
        for v in &f.spindle_sec {
            write!(out, ",{v:.3}").unwrap();
        }
        for v in &f.sws_sec {
            write!(out, ",{v:.3}").unwrap();
        }
        out.push('\n');
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Generic numeric table with a header row.
pub fn write_table(path: &Path, header: &str, rows: &[Vec<f64>]) -> Result<()> {
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
