//! The central image representation: a hyperspectral cube of shape
//! bands x height x width with reflectance-like values in [0,1], plus the
//! binary observation mask used by inpainting.
//!
//! Storage is band-sequential (band-major, row-major within a band), which
//! matches both the on-disk container and the channel-first layout the
//! convolution kernels expect.

use crate::array::NdArray;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct HyperCube {
    data: NdArray,
}

impl HyperCube {
    /// Wraps an array of shape [bands, height, width], validating range.
    pub fn new(data: NdArray) -> Result<Self> {
        if data.rank() != 3 {
            return Err(Error::DimMismatch {
                op: "HyperCube::new",
                dim: "rank",
                expected: 3,
                got: data.rank(),
            });
        }
        if let Some(i) = data.data().iter().position(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::ValueOutOfRange {
                context: "HyperCube::new",
                found: data.data()[i],
                index: i,
            });
        }
        Ok(HyperCube { data })
    }

    /// Builds from a per-element generator over (band, y, x).
    pub fn from_fn(
        bands: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let arr = NdArray::from_fn(&[bands, height, width], |i| {
            let b = i / (height * width);
            let r = i % (height * width);
            f(b, r / width, r % width)
        });
        Self::new(arr)
    }

    pub fn bands(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }

    pub fn at(&self, band: usize, y: usize, x: usize) -> f64 {
        self.data.data()[(band * self.height() + y) * self.width() + x]
    }

    /// One full band as a contiguous row-major slice.
    pub fn band(&self, band: usize) -> &[f64] {
        let n = self.height() * self.width();
        &self.data.data()[band * n..(band + 1) * n]
    }

    pub fn as_array(&self) -> &NdArray {
        &self.data
    }

    pub fn into_array(self) -> NdArray {
        self.data
    }

    pub fn same_shape(&self, other: &HyperCube) -> bool {
        self.shape() == other.shape()
    }
}

/// Binary observation mask: 1 = pixel observed, 0 = missing.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    data: NdArray,
}

impl Mask {
    /// Wraps an array of shape [bands, height, width] with entries in {0,1}.
    pub fn new(data: NdArray) -> Result<Self> {
        if data.rank() != 3 {
            return Err(Error::DimMismatch {
                op: "Mask::new",
                dim: "rank",
                expected: 3,
                got: data.rank(),
            });
        }
        if let Some(i) = data
            .data()
            .iter()
            .position(|&v| v != 0.0 && v != 1.0)
        {
            return Err(Error::NonBinaryMask {
                found: data.data()[i],
                index: i,
            });
        }
        Ok(Mask { data })
    }

    pub fn all_ones(bands: usize, height: usize, width: usize) -> Self {
        Mask {
            data: NdArray::filled(&[bands, height, width], 1.0),
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }

    pub fn as_array(&self) -> &NdArray {
        &self.data
    }

    pub fn count_ones(&self) -> usize {
        self.data.data().iter().filter(|&&v| v == 1.0).count()
    }

    /// Fraction of entries equal to zero.
    pub fn zero_fraction(&self) -> f64 {
        1.0 - self.count_ones() as f64 / self.data.numel() as f64
    }
}
