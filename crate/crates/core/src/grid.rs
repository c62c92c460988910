//! Dense real-valued grids (images and latents) and binary masks.
//!
//! Values are stored row-major with channels interleaved: element
//! `(y, x, c)` lives at `(y * width + x) * channels + c`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{check_shape, Error, Result, Shape};

const RAW_MAGIC: &[u8; 4] = b"TTGA";

#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    shape: Shape,
    values: Vec<f64>,
}

impl LatentGrid {
    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Self {
            shape,
            values: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::config("shape", "all dimensions must be positive"));
        }
        if values.len() != shape.len() {
            return Err(Error::Contract(format!(
                "{} values supplied for a {} grid",
                values.len(),
                shape
            )));
        }
        Ok(Self { shape, values })
    }

    pub(crate) fn from_parts(shape: Shape, values: Vec<f64>) -> Self {
        debug_assert_eq!(shape.len(), values.len());
        Self { shape, values }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(shape.len());
        for y in 0..shape.height {
            for x in 0..shape.width {
                for c in 0..shape.channels {
                    values.push(f(y, x, c));
                }
            }
        }
        Self { shape, values }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.shape.width + x) * self.shape.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.values[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let i = self.index(y, x, c);
        self.values[i] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        check_shape(self.shape, other.shape)?;
        Ok(Self {
            shape: self.shape,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|v| v * k)
    }

    /// `self + k * other`
    pub fn add_scaled(&self, other: &Self, k: f64) -> Result<Self> {
        self.zip_map(other, |a, b| a + k * b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn mse(&self, other: &Self) -> Result<f64> {
        check_shape(self.shape, other.shape)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / self.values.len() as f64)
    }

    /// Channel-averaged single channel view.
    pub fn channel_mean(&self) -> Self {
        let c = self.shape.channels;
        let shape = Shape::new(self.shape.height, self.shape.width, 1);
        let values = self
            .values
            .chunks_exact(c)
            .map(|px| px.iter().sum::<f64>() / c as f64)
            .collect();
        Self { shape, values }
    }

    pub fn write_raw<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(RAW_MAGIC)?;
        for d in [self.shape.height, self.shape.width, self.shape.channels] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_raw<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        if &header[..4] != RAW_MAGIC {
            return Err(Error::Format("bad grid magic".into()));
        }
        let dim = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap()) as usize;
        let shape = Shape::new(dim(4), dim(8), dim(12));
        let mut bytes = vec![0u8; shape.len() * 8];
        r.read_exact(&mut bytes)?;
        let values = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Self::from_vec(shape, values)
    }

    pub fn save_raw(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_raw(std::io::BufWriter::new(f))
    }

    pub fn load_raw(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_raw(std::io::BufReader::new(f))
    }

    /// 8-bit binary PGM of the channel mean, min-max scaled.
    pub fn write_pgm<W: Write>(&self, w: W) -> Result<()> {
        let g = self.channel_mean();
        let (lo, hi) = g
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let span = hi - lo;
        let bytes: Vec<u8> = g
            .values
            .iter()
            .map(|&v| {
                if span > 0.0 {
                    ((v - lo) / span * 255.0).round() as u8
                } else {
                    0
                }
            })
            .collect();
        write_pgm_bytes(w, self.shape.width, self.shape.height, &bytes)
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_pgm(std::io::BufWriter::new(f))
    }
}

fn write_pgm_bytes<W: Write>(mut w: W, width: usize, height: usize, bytes: &[u8]) -> Result<()> {
    write!(w, "P5\n{width} {height}\n255\n")?;
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}

/// Single-channel boolean grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::Contract(format!(
                "{} bits supplied for a {height}x{width} mask",
                bits.len()
            )));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self {
            height,
            width,
            bits: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            bits,
        }
    }

    /// `value >= threshold` on channel 0.
    pub fn threshold(grid: &LatentGrid, threshold: f64) -> Self {
        Self::from_fn(grid.height(), grid.width(), |y, x| {
            grid.get(y, x, 0) >= threshold
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.bits.iter().any(|&b| b)
    }

    pub fn not(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn xor(&self, other: &Self) -> Result<Self> {
        self.same_size(other)?;
        Ok(Self {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| a ^ b).collect(),
        })
    }

    pub fn same_size(&self, other: &Self) -> Result<()> {
        check_shape(
            Shape::new(self.height, self.width, 1),
            Shape::new(other.height, other.width, 1),
        )
    }

    pub fn to_grid(&self) -> LatentGrid {
        LatentGrid::from_parts(
            Shape::new(self.height, self.width, 1),
            self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
    }

    pub fn write_pgm<W: Write>(&self, w: W) -> Result<()> {
        let bytes: Vec<u8> = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        write_pgm_bytes(w, self.width, self.height, &bytes)
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_pgm(std::io::BufWriter::new(f))
    }
}
