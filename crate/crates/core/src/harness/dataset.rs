//! Training data: synthetic bars-and-stripes, plain bit-vector files and
//! coarse-grained grayscale images.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::parse_bits;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    BarsAndStripes {
        rows: usize,
        cols: usize,
    },
    File {
        path: PathBuf,
    },
    /// One image per line, `width * height` intensities separated by commas
    /// or whitespace (either in `[0, 1]` or `0..=255`). Each image is
    /// average-pooled onto a `target_rows x target_cols` grid and thresholded.
    CoarseGrainedImages {
        path: PathBuf,
        width: usize,
        height: usize,
        target_rows: usize,
        target_cols: usize,
        threshold: f64,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::BarsAndStripes { rows: 3, cols: 4 }
    }
}

impl DatasetSpec {
    pub fn load(&self) -> Result<Vec<Vec<u8>>> {
        match self {
            DatasetSpec::BarsAndStripes { rows, cols } => generate_bars_and_stripes(*rows, *cols),
            DatasetSpec::File { path } => ingest_binary_vectors(path),
            DatasetSpec::CoarseGrainedImages {
                path,
                width,
                height,
                target_rows,
                target_cols,
                threshold,
            } => coarse_grain_images(path, *width, *height, *target_rows, *target_cols, *threshold),
        }
    }

    /// Vector length the spec produces, when known without reading files.
    pub fn width(&self) -> Option<usize> {
        match self {
            DatasetSpec::BarsAndStripes { rows, cols } => Some(rows * cols),
            DatasetSpec::CoarseGrainedImages {
                target_rows,
                target_cols,
                ..
            } => Some(target_rows * target_cols),
            DatasetSpec::File { .. } => None,
        }
    }
}

/// Every `rows x cols` image whose rows are all constant or whose columns
/// are all constant, row-major, without duplicating the blank and full
/// images.
pub fn generate_bars_and_stripes(rows: usize, cols: usize) -> Result<Vec<Vec<u8>>> {
    if rows == 0 || cols == 0 || rows >= 32 || cols >= 32 {
        return Err(Error::invalid(format!("bad bars-and-stripes shape {rows}x{cols}")));
    }
    let mut out = Vec::with_capacity((1 << rows) + (1 << cols) - 2);
    // constant rows
    for mask in 0u32..1 << rows {
        out.push(
            (0..rows * cols)
                .map(|k| ((mask >> (k / cols)) & 1) as u8)
                .collect(),
        );
    }
    // constant columns, blank and full already present
    for mask in 1u32..(1 << cols) - 1 {
        out.push(
            (0..rows * cols)
                .map(|k| ((mask >> (k % cols)) & 1) as u8)
                .collect(),
        );
    }
    Ok(out)
}

/// Reads one `0`/`1` vector per line. Blank lines are skipped.
pub fn ingest_binary_vectors(path: &Path) -> Result<Vec<Vec<u8>>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out: Vec<Vec<u8>> = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: k + 1,
            msg,
        };
        let bits = parse_bits(line).map_err(err)?;
        if let Some(first) = out.first() {
            if first.len() != bits.len() {
                return Err(err(format!(
                    "expected {} bits, found {}",
                    first.len(),
                    bits.len()
                )));
            }
        }
        out.push(bits);
    }
    if out.is_empty() {
        log::warn!("{} contains no vectors", path.display());
    }
    Ok(out)
}

pub fn write_binary_vectors<W: Write>(mut out: W, data: &[Vec<u8>]) -> Result<()> {
    for v in data {
        let line: String = v.iter().map(|&b| if b != 0 { '1' } else { '0' }).collect();
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Average-pools each image onto the target grid, then thresholds.
pub fn coarse_grain_images(
    path: &Path,
    width: usize,
    height: usize,
    target_rows: usize,
    target_cols: usize,
    threshold: f64,
) -> Result<Vec<Vec<u8>>> {
    if target_rows == 0 || target_cols == 0 || target_rows > height || target_cols > width {
        return Err(Error::invalid(format!(
            "cannot pool {width}x{height} images onto {target_cols}x{target_rows}"
        )));
    }
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut images: Vec<Vec<f64>> = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: k + 1,
            msg,
        };
        let pixels = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|e| err(format!("{s:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if pixels.len() != width * height {
            return Err(err(format!(
                "expected {} pixels, found {}",
                width * height,
                pixels.len()
            )));
        }
        images.push(pixels);
    }
    let scale = if images.iter().flatten().any(|&p| p > 1.0) {
        255.0
    } else {
        1.0
    };
    Ok(images
        .iter()
        .map(|img| {
            let mut sums = vec![0.0; target_rows * target_cols];
            let mut counts = vec![0usize; target_rows * target_cols];
            for y in 0..height {
                for x in 0..width {
                    let cell = (y * target_rows / height) * target_cols + x * target_cols / width;
                    sums[cell] += img[y * width + x] / scale;
                    counts[cell] += 1;
                }
            }
            sums.iter()
                .zip(&counts)
                .map(|(s, &c)| u8::from(s / c as f64 >= threshold))
                .collect()
        })
        .collect())
}
