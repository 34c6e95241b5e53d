//! Reproducible degradations of a clean cube: additive Gaussian noise,
//! stripe masks, and spatial downsampling — plus a synthetic clean cube so
//! experiments are self-contained.

use std::ops::Range;

use rand::Rng;

use crate::array::NdArray;
use crate::cube::{HyperCube, Mask};
use crate::error::{Error, Result};
use crate::objectives;
use crate::rng::{gaussian_array, seeded_rng};

/// One degradation recipe. Exactly the fields of its kind exist.
#[derive(Debug, Clone)]
pub enum CorruptionSpec {
    GaussianNoise {
        /// Noise std-dev on the [0,1] scale.
        sigma: f64,
        seed: u64,
    },
    Stripes {
        stripe_count: usize,
        stripe_width: usize,
        /// Bands hit by the stripes; `None` means all of them.
        band_range: Option<Range<usize>>,
        seed: u64,
    },
    Downsample {
        alpha: usize,
    },
}

impl CorruptionSpec {
    /// Applies the degradation; stripe corruption also returns its mask.
    pub fn apply(&self, x: &HyperCube) -> Result<(HyperCube, Option<Mask>)> {
        match self {
            CorruptionSpec::GaussianNoise { sigma, seed } => {
                Ok((add_gaussian_noise(x, *sigma, *seed)?, None))
            }
            CorruptionSpec::Stripes {
                stripe_count,
                stripe_width,
                band_range,
                seed,
            } => {
                let range = band_range.clone().unwrap_or(0..x.bands());
                let mask = make_stripe_mask(
                    [x.bands(), x.height(), x.width()],
                    *stripe_count,
                    *stripe_width,
                    range,
                    *seed,
                )?;
                let corrupted = apply_mask(x, &mask);
                Ok((corrupted, Some(mask)))
            }
            CorruptionSpec::Downsample { alpha } => {
                Ok((downsample_observation(x, *alpha)?, None))
            }
        }
    }
}

/// x + N(0, sigma) clipped back to [0,1]; sigma = 0 returns x exactly.
pub fn add_gaussian_noise(x: &HyperCube, sigma: f64, seed: u64) -> Result<HyperCube> {
    if sigma < 0.0 {
        return Err(Error::Config("noise sigma must be nonnegative".into()));
    }
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let noise = gaussian_array(x.shape(), seed, sigma);
    let arr = NdArray::from_fn(x.shape(), |i| {
        (x.as_array().data()[i] + noise.data()[i]).clamp(0.0, 1.0)
    });
    HyperCube::new(arr)
}

/// Zeroes the cube wherever the mask is 0 (the "observed" cube an
/// inpainting run sees).
pub fn apply_mask(x: &HyperCube, mask: &Mask) -> HyperCube {
    let arr = NdArray::from_fn(x.shape(), |i| {
        x.as_array().data()[i] * mask.as_array().data()[i]
    });
    HyperCube::new(arr).expect("product of [0,1] and {0,1} stays in range")
}

/// Vertical stripes of zeros at seeded random columns across the given band
/// range; everything else is 1. Stripes never overlap: starts are drawn via
/// the gap method (sorted draws plus cumulative widths).
pub fn make_stripe_mask(
    shape: [usize; 3],
    stripe_count: usize,
    stripe_width: usize,
    band_range: Range<usize>,
    seed: u64,
) -> Result<Mask> {
    let [bands, height, width] = shape;
    if band_range.end > bands || band_range.start >= band_range.end {
        return Err(Error::Config(format!(
            "band range {band_range:?} invalid for {bands} bands"
        )));
    }
    if stripe_count == 0 {
        return Ok(Mask::all_ones(bands, height, width));
    }
    if stripe_width == 0 {
        return Err(Error::Config("stripe width must be positive".into()));
    }
    if stripe_count * stripe_width > width {
        return Err(Error::Config(format!(
            "{stripe_count} stripes of width {stripe_width} exceed image width {width}"
        )));
    }
    let slack = width - stripe_count * stripe_width;
    let mut rng = seeded_rng(seed);
    let mut offsets: Vec<usize> = (0..stripe_count)
        .map(|_| rng.random_range(0..=slack))
        .collect();
    offsets.sort_unstable();
    let columns: Vec<usize> = offsets
        .iter()
        .enumerate()
        .map(|(i, &o)| o + i * stripe_width)
        .collect();
    stripe_mask_at_columns(shape, &columns, stripe_width, band_range)
}

/// Stripe mask with explicitly chosen stripe start columns, for exact
/// reproduction of a given pattern.
pub fn stripe_mask_at_columns(
    shape: [usize; 3],
    columns: &[usize],
    stripe_width: usize,
    band_range: Range<usize>,
) -> Result<Mask> {
    let [bands, height, width] = shape;
    if band_range.end > bands || band_range.start >= band_range.end {
        return Err(Error::Config(format!(
            "band range {band_range:?} invalid for {bands} bands"
        )));
    }
    let mut striped = vec![false; width];
    for &c in columns {
        if c + stripe_width > width {
            return Err(Error::Config(format!(
                "stripe at column {c} of width {stripe_width} exceeds image width {width}"
            )));
        }
        for s in striped.iter_mut().skip(c).take(stripe_width) {
            *s = true;
        }
    }
    let arr = NdArray::from_fn(&[bands, height, width], |i| {
        let b = i / (height * width);
        let x = i % width;
        if band_range.contains(&b) && striped[x] {
            0.0
        } else {
            1.0
        }
    });
    Mask::new(arr)
}

/// Spatial block-average downsampling of a clean observation; delegates to
/// the objectives operator so the data generator and the forward model
/// agree bit-exactly.
pub fn downsample_observation(x: &HyperCube, alpha: usize) -> Result<HyperCube> {
    objectives::degrade_downsample(x, alpha)
}

/// A clean synthetic cube: smooth spectral gradients over a slowly varying
/// background, plus a few geometric shapes with their own smooth spectra.
/// Deterministic per seed; values stay inside (0,1).
pub fn synthetic_cube(bands: usize, height: usize, width: usize, seed: u64) -> HyperCube {
    use std::f64::consts::PI;
    let mut rng = seeded_rng(seed);

    struct Shape {
        cx: f64,
        cy: f64,
        r: f64,
        rect: bool,
        amp: f64,
        phase: f64,
    }
    let shapes: Vec<Shape> = (0..4)
        .map(|_| Shape {
            cx: rng.random_range(0.15..0.85),
            cy: rng.random_range(0.15..0.85),
            r: rng.random_range(0.08..0.22),
            rect: rng.random::<bool>(),
            amp: rng.random_range(0.25..0.45),
            phase: rng.random_range(0.0..PI),
        })
        .collect();
    let bg_phase: f64 = rng.random_range(0.0..PI);

    HyperCube::from_fn(bands, height, width, |b, y, x| {
        let (u, v) = (x as f64 / width as f64, y as f64 / height as f64);
        let t = if bands > 1 {
            b as f64 / (bands - 1) as f64
        } else {
            0.0
        };
        let mut val = 0.45
            + 0.18 * (2.0 * PI * (0.7 * u + 0.4 * v) + bg_phase + 1.5 * t).sin()
            + 0.10 * (PI * (t + v)).cos();
        for s in &shapes {
            let (du, dv) = ((u - s.cx).abs(), (v - s.cy).abs());
            let inside = if s.rect {
                du < s.r && dv < 0.8 * s.r
            } else {
                du * du + dv * dv < s.r * s.r
            };
            if inside {
                val += s.amp * (PI * t + s.phase).sin() * 0.5;
            }
        }
        val.clamp(0.02, 0.98)
    })
    .expect("values clamped into range")
}

/// Pixel-shuffled copy: the same values with all spatial structure
/// destroyed (spectra travel with their pixel).
pub fn shuffle_pixels(x: &HyperCube, seed: u64) -> HyperCube {
    let (h, w) = (x.height(), x.width());
    let plane = h * w;
    let mut perm: Vec<usize> = (0..plane).collect();
    let mut rng = seeded_rng(seed);
    // Fisher-Yates
    for i in (1..plane).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    let arr = NdArray::from_fn(x.shape(), |i| {
        let b = i / plane;
        let p = i % plane;
        x.as_array().data()[b * plane + perm[p]]
    });
    HyperCube::new(arr).expect("permutation preserves range")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_is_identity() {
        let x = synthetic_cube(3, 16, 16, 1);
        let y = add_gaussian_noise(&x, 0.0, 42).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn noise_is_seeded_and_clipped() {
        let x = synthetic_cube(3, 16, 16, 1);
        let a = add_gaussian_noise(&x, 0.2, 5).unwrap();
        let b = add_gaussian_noise(&x, 0.2, 5).unwrap();
        let c = add_gaussian_noise(&x, 0.2, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.as_array().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn noise_std_matches_sigma_before_clipping() {
        // mid-gray cube keeps clipping negligible at sigma = 0.05
        let x = HyperCube::new(NdArray::filled(&[16, 64, 64], 0.5)).unwrap();
        let sigma = 0.05;
        let y = add_gaussian_noise(&x, sigma, 11).unwrap();
        let diffs: Vec<f64> = y
            .as_array()
            .data()
            .iter()
            .zip(x.as_array().data())
            .map(|(a, b)| a - b)
            .collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>()
            / diffs.len() as f64;
        let std = var.sqrt();
        assert!(
            (std - sigma).abs() < 0.02 * sigma,
            "sample std {std} vs sigma {sigma}"
        );
    }

    #[test]
    fn zero_stripes_is_all_ones() {
        let m = make_stripe_mask([3, 8, 8], 0, 1, 0..3, 1).unwrap();
        assert_eq!(m.count_ones(), 3 * 8 * 8);
    }

    #[test]
    fn stripe_zero_fraction_is_exact() {
        let (bands, h, w) = (4, 16, 32);
        let (count, width) = (3, 2);
        let m = make_stripe_mask([bands, h, w], count, width, 0..bands, 9).unwrap();
        let expected = (count * width * h * bands) as f64 / (bands * h * w) as f64;
        assert_eq!(m.zero_fraction(), expected, "non-overlapping by construction");
    }

    #[test]
    fn partial_band_range_leaves_other_bands_intact() {
        let (bands, h, w) = (8, 8, 16);
        let range = 1..7; // 75 percent of bands
        let m = make_stripe_mask([bands, h, w], 2, 1, range.clone(), 3).unwrap();
        for b in 0..bands {
            let slice = &m.as_array().data()[b * h * w..(b + 1) * h * w];
            let zeros = slice.iter().filter(|&&v| v == 0.0).count();
            if range.contains(&b) {
                assert_eq!(zeros, 2 * h, "striped band {b}");
            } else {
                assert_eq!(zeros, 0, "untouched band {b}");
            }
        }
    }

    #[test]
    fn stripes_that_do_not_fit_are_rejected() {
        let err = make_stripe_mask([1, 4, 8], 5, 2, 0..1, 1).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn fixed_columns_are_honored() {
        let m = stripe_mask_at_columns([1, 2, 8], &[1, 5], 2, 0..1).unwrap();
        let row = &m.as_array().data()[0..8];
        assert_eq!(row, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn downsample_delegates_bit_exactly() {
        let x = synthetic_cube(3, 16, 16, 2);
        let a = downsample_observation(&x, 2).unwrap();
        let b = objectives::degrade_downsample(&x, 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(downsample_observation(&x, 1).unwrap(), x);
    }

    #[test]
    fn synthetic_cube_is_deterministic_and_in_range() {
        let a = synthetic_cube(6, 24, 24, 3);
        let b = synthetic_cube(6, 24, 24, 3);
        assert_eq!(a, b);
        assert!(a
            .as_array()
            .data()
            .iter()
            .all(|&v| (0.02..=0.98).contains(&v)));
    }

    #[test]
    fn shuffle_preserves_values_and_moves_pixels() {
        let x = synthetic_cube(2, 8, 8, 4);
        let s = shuffle_pixels(&x, 5);
        let mut a: Vec<u64> = x.as_array().data().iter().map(|v| v.to_bits()).collect();
        let mut b: Vec<u64> = s.as_array().data().iter().map(|v| v.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b, "same multiset of values");
        assert_ne!(x, s);
    }
}
