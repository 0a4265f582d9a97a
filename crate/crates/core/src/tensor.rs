//! Dense rank-3 tensors (channels x height x width) of `f64`.
//!
//! Every image, feature map and gradient in the crate is a [`Tensor`], stored
//! row-major in (channel, row, column) order.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::DataLength {
                len: data.len(),
                shape: (channels, height, width),
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    /// Single-channel tensor from a list of equal-length rows.
    ///
    /// Panics on ragged rows; intended for literals in tests and examples.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(height * width);
        for row in rows {
            let row = row.as_ref();
            assert_eq!(row.len(), width, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            channels: 1,
            height,
            width,
            data,
        }
    }

    /// Stacks single-channel tensors of equal spatial size into one tensor.
    pub fn stack(maps: &[Tensor]) -> Result<Self> {
        let first = maps.first().ok_or(Error::Empty)?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::with_capacity(maps.len() * h * w);
        for m in maps {
            if m.height != h || m.width != w {
                return Err(Error::ShapeMismatch {
                    left: first.shape(),
                    right: m.shape(),
                });
            }
            data.extend_from_slice(&m.data);
        }
        Tensor::new(data.len() / (h * w).max(1), h, w, data)
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Copies channel `c` out as its own single-channel tensor.
    pub fn channel_tensor(&self, c: usize) -> Tensor {
        Tensor {
            channels: 1,
            height: self.height,
            width: self.width,
            data: self.channel(c).to_vec(),
        }
    }

    #[inline]
    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[(c * self.height + row) * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, c: usize, row: usize, col: usize, value: f64) {
        self.data[(c * self.height + row) * self.width + col] = value;
    }

    pub fn same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        self.with_data(self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(other)?;
        Ok(self.with_data(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn elementwise_mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add_scalar(&self, k: f64) -> Tensor {
        self.map(|v| v + k)
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| v * k)
    }

    pub fn neg(&self) -> Tensor {
        self.map(|v| -v)
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn mean(&self) -> Result<f64> {
        mean(&self.data)
    }

    pub fn variance(&self) -> Result<f64> {
        variance(&self.data)
    }

    pub fn covariance(&self, other: &Tensor) -> Result<f64> {
        self.same_shape(other)?;
        covariance(&self.data, &other.data)
    }

    /// Crops a spatial window `[row0, row0+h) x [col0, col0+w)` from every channel.
    pub fn crop(&self, row0: usize, col0: usize, h: usize, w: usize) -> Tensor {
        assert!(row0 + h <= self.height && col0 + w <= self.width, "crop out of bounds");
        let mut data = Vec::with_capacity(self.channels * h * w);
        for c in 0..self.channels {
            let plane = self.channel(c);
            for r in row0..row0 + h {
                let start = r * self.width + col0;
                data.extend_from_slice(&plane[start..start + w]);
            }
        }
        Tensor {
            channels: self.channels,
            height: h,
            width: w,
            data,
        }
    }

    fn with_data(&self, data: Vec<f64>) -> Tensor {
        debug_assert_eq!(data.len(), self.data.len());
        Tensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data,
        }
    }
}

/// Population mean (divisor N).
pub fn mean(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Empty);
    }
    Ok(xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Mean with one correction pass, so a constant slice yields its value exactly.
fn centered_mean(xs: &[f64]) -> Result<f64> {
    let m = mean(xs)?;
    Ok(m + xs.iter().map(|x| x - m).sum::<f64>() / xs.len() as f64)
}

/// Population variance (divisor N).
pub fn variance(xs: &[f64]) -> Result<f64> {
    covariance(xs, xs)
}

/// Population covariance (divisor N). `covariance(x, x) == variance(x)` bitwise.
pub fn covariance(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::ShapeMismatch {
            left: (1, 1, xs.len()),
            right: (1, 1, ys.len()),
        });
    }
    let mx = centered_mean(xs)?;
    let my = centered_mean(ys)?;
    let s: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(s / xs.len() as f64)
}
