//! Dense row-major 2-D grids plus their on-disk forms: a JSON sidecar with a
//! raw little-endian f32 payload, and 8-bit grayscale PGM renders.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Grid {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Size(format!(
                "{} values for a {rows}x{cols} grid",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Sum in f64.
    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Min-max scaled 8-bit image, each cell expanded to `scale`x`scale` pixels.
    /// A constant grid renders as mid-gray.
    pub fn to_gray8(&self, scale: usize) -> (usize, usize, Vec<u8>) {
        let scale = scale.max(1);
        let (lo, hi) = self.min_max();
        let span = hi - lo;
        let level = |v: f32| -> u8 {
            if !(span > 0.0) {
                128
            } else {
                (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8
            }
        };
        let (h, w) = (self.rows * scale, self.cols * scale);
        let mut px = Vec::with_capacity(h * w);
        for r in 0..self.rows {
            let line: Vec<u8> = self
                .row(r)
                .iter()
                .flat_map(|&v| std::iter::repeat(level(v)).take(scale))
                .collect();
            for _ in 0..scale {
                px.extend_from_slice(&line);
            }
        }
        (h, w, px)
    }

    /// Binary PGM (P5). Row 0 is drawn at the top.
    pub fn to_pgm(&self, scale: usize) -> Vec<u8> {
        let (h, w, px) = self.to_gray8(scale);
        let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
        out.extend_from_slice(&px);
        out
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>, scale: usize) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_pgm(scale)).map_err(|e| Error::io(path, e))
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(rows: usize, cols: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != rows * cols * 4 {
            return Err(Error::Size(format!(
                "{} payload bytes for a {rows}x{cols} f32 grid",
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::from_vec(rows, cols, data)
    }
}

/// JSON sidecar describing a raw grid payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub rows: usize,
    pub cols: usize,
    pub scale: String,
    pub bin_hz: f64,
    pub frame_hop_s: f64,
}

/// Writes `<stem>.json` and `<stem>.f32`.
pub fn write_grid(dir: impl AsRef<Path>, stem: &str, header: &GridHeader, grid: &Grid) -> Result<()> {
    let dir = dir.as_ref();
    if header.rows != grid.rows || header.cols != grid.cols {
        return Err(Error::Size("header shape disagrees with grid".into()));
    }
    let json_path = dir.join(format!("{stem}.json"));
    let raw_path = dir.join(format!("{stem}.f32"));
    let mut f = std::fs::File::create(&json_path).map_err(|e| Error::io(&json_path, e))?;
    serde_json::to_writer_pretty(&mut f, header)?;
    f.write_all(b"\n").map_err(|e| Error::io(&json_path, e))?;
    std::fs::write(&raw_path, grid.to_le_bytes()).map_err(|e| Error::io(&raw_path, e))
}

pub fn read_grid(dir: impl AsRef<Path>, stem: &str) -> Result<(GridHeader, Grid)> {
    let dir = dir.as_ref();
    let json_path = dir.join(format!("{stem}.json"));
    let raw_path = dir.join(format!("{stem}.f32"));
    let text = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let header: GridHeader = serde_json::from_str(&text)?;
    let bytes = std::fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let grid = Grid::from_le_bytes(header.rows, header.cols, &bytes)?;
    Ok((header, grid))
}
