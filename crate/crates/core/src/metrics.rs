//! Quality measures between a restored cube and a reference: MPSNR, MSSIM,
//! and the spectral angle mapper.
//!
//! The standard definitions are used throughout: band-wise PSNR with peak
//! 1.0 averaged over bands; band-wise SSIM under an 11x11 Gaussian window
//! (sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range 1.0) over fully interior
//! windows, averaged over bands; and the mean per-pixel angle between
//! spectra, in degrees, skipping pixels where either spectrum has zero norm.

use std::fmt;

use crate::cube::HyperCube;
use crate::error::{Error, Result};

/// SSIM window extent.
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// The three Table-style quality measures of one comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    /// Mean band-wise peak signal-to-noise ratio, in dB. Infinite for
    /// identical cubes.
    pub mpsnr: f64,
    /// Mean band-wise structural similarity, in [-1, 1].
    pub mssim: f64,
    /// Mean spectral angle, in degrees.
    pub sam: f64,
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "MPSNR  {:>10.4} dB", self.mpsnr)?;
        writeln!(f, "MSSIM  {:>10.6}", self.mssim)?;
        write!(f, "SAM    {:>10.4} deg", self.sam)
    }
}

impl MetricReport {
    pub fn csv_header() -> &'static str {
        "mpsnr_db,mssim,sam_deg"
    }

    pub fn csv_line(&self) -> String {
        format!("{},{},{}", self.mpsnr, self.mssim, self.sam)
    }
}

fn check_same_shape(op: &'static str, a: &HyperCube, b: &HyperCube) -> Result<()> {
    for (i, dim) in ["bands", "height", "width"].iter().enumerate() {
        if a.shape()[i] != b.shape()[i] {
            return Err(Error::DimMismatch {
                op,
                dim,
                expected: a.shape()[i],
                got: b.shape()[i],
            });
        }
    }
    Ok(())
}

/// Mean over bands of 10 log10(1 / MSE_band), peak fixed at 1.0.
pub fn mpsnr(x: &HyperCube, reference: &HyperCube) -> Result<f64> {
    check_same_shape("mpsnr", x, reference)?;
    let n = (x.height() * x.width()) as f64;
    let mut acc = 0.0;
    for b in 0..x.bands() {
        let mut mse = 0.0;
        for (a, r) in x.band(b).iter().zip(reference.band(b)) {
            let d = a - r;
            mse += d * d;
        }
        mse /= n;
        acc += if mse == 0.0 {
            f64::INFINITY
        } else {
            10.0 * (1.0 / mse).log10()
        };
    }
    Ok(acc / x.bands() as f64)
}

/// Normalized 1D Gaussian window.
fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size - 1) as f64 / 2.0;
    let mut w: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c) * (i as f64 - c)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Valid-mode separable filtering of a [h, w] image with a symmetric 1D
/// window applied along both axes.
fn filter_valid(img: &[f64], h: usize, w: usize, win: &[f64]) -> Vec<f64> {
    let k = win.len();
    let wv = w - k + 1;
    // rows
    let mut tmp = vec![0.0; h * wv];
    for y in 0..h {
        for x in 0..wv {
            let mut acc = 0.0;
            for (j, &wj) in win.iter().enumerate() {
                acc += wj * img[y * w + x + j];
            }
            tmp[y * wv + x] = acc;
        }
    }
    // columns
    let hv = h - k + 1;
    let mut out = vec![0.0; hv * wv];
    for y in 0..hv {
        for x in 0..wv {
            let mut acc = 0.0;
            for (j, &wj) in win.iter().enumerate() {
                acc += wj * tmp[(y + j) * wv + x];
            }
            out[y * wv + x] = acc;
        }
    }
    out
}

/// Single-band SSIM: mean of the SSIM map over fully interior windows.
fn ssim_band(x: &[f64], r: &[f64], h: usize, w: usize) -> f64 {
    let win = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let rr: Vec<f64> = r.iter().map(|v| v * v).collect();
    let xr: Vec<f64> = x.iter().zip(r).map(|(a, b)| a * b).collect();

    let mu_x = filter_valid(x, h, w, &win);
    let mu_r = filter_valid(r, h, w, &win);
    let m_xx = filter_valid(&xx, h, w, &win);
    let m_rr = filter_valid(&rr, h, w, &win);
    let m_xr = filter_valid(&xr, h, w, &win);

    let c1 = (SSIM_K1 * 1.0_f64).powi(2);
    let c2 = (SSIM_K2 * 1.0_f64).powi(2);
    let mut acc = 0.0;
    for i in 0..mu_x.len() {
        let (mx, mr) = (mu_x[i], mu_r[i]);
        let sx = m_xx[i] - mx * mx;
        let sr = m_rr[i] - mr * mr;
        let sxr = m_xr[i] - mx * mr;
        acc += ((2.0 * mx * mr + c1) * (2.0 * sxr + c2))
            / ((mx * mx + mr * mr + c1) * (sx + sr + c2));
    }
    acc / mu_x.len() as f64
}

/// Mean over bands of single-band SSIM.
pub fn mssim(x: &HyperCube, reference: &HyperCube) -> Result<f64> {
    check_same_shape("mssim", x, reference)?;
    let (h, w) = (x.height(), x.width());
    for extent in [h, w] {
        if extent < SSIM_WINDOW {
            return Err(Error::WindowTooSmall {
                extent,
                window: SSIM_WINDOW,
            });
        }
    }
    let mut acc = 0.0;
    for b in 0..x.bands() {
        acc += ssim_band(x.band(b), reference.band(b), h, w);
    }
    Ok(acc / x.bands() as f64)
}

/// Mean over pixels of the angle between per-pixel spectra, in degrees.
/// Pixels where either spectrum has zero norm are excluded; if every pixel
/// is excluded the comparison is undefined.
pub fn sam(x: &HyperCube, reference: &HyperCube) -> Result<f64> {
    check_same_shape("sam", x, reference)?;
    let (bands, h, w) = (x.bands(), x.height(), x.width());
    let plane = h * w;
    let (xd, rd) = (x.as_array().data(), reference.as_array().data());
    let mut acc = 0.0;
    let mut included = 0usize;
    for p in 0..plane {
        let mut dot = 0.0;
        let mut nx = 0.0;
        let mut nr = 0.0;
        for b in 0..bands {
            let (a, r) = (xd[b * plane + p], rd[b * plane + p]);
            dot += a * r;
            nx += a * a;
            nr += r * r;
        }
        if nx == 0.0 || nr == 0.0 {
            continue;
        }
        // Cauchy-Schwarz equality means exactly parallel (or antiparallel)
        // spectra; resolving it explicitly keeps self-comparison at 0
        // degrees instead of acos-of-rounding noise.
        if dot * dot >= nx * nr {
            acc += if dot >= 0.0 { 0.0 } else { std::f64::consts::PI };
        } else {
            acc += (dot / (nx * nr).sqrt()).acos();
        }
        included += 1;
    }
    if included == 0 {
        return Err(Error::AllSpectraZero);
    }
    Ok(acc / included as f64 * 180.0 / std::f64::consts::PI)
}

/// All three measures at once.
pub fn report(x: &HyperCube, reference: &HyperCube) -> Result<MetricReport> {
    Ok(MetricReport {
        mpsnr: mpsnr(x, reference)?,
        mssim: mssim(x, reference)?,
        sam: sam(x, reference)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::NdArray;
    use crate::rng::uniform_array;

    fn cube_from(seed: u64, shape: [usize; 3]) -> HyperCube {
        HyperCube::new(uniform_array(&shape, seed, 0.0, 1.0)).unwrap()
    }

    #[test]
    fn mpsnr_identical_is_infinite() {
        let x = cube_from(1, [3, 12, 12]);
        assert_eq!(mpsnr(&x, &x).unwrap(), f64::INFINITY);
    }

    #[test]
    fn mpsnr_constant_offset_is_twenty_db() {
        let r = HyperCube::new(NdArray::filled(&[2, 8, 8], 0.4)).unwrap();
        let x = HyperCube::new(NdArray::filled(&[2, 8, 8], 0.5)).unwrap();
        let v = mpsnr(&x, &r).unwrap();
        assert!((v - 20.0).abs() < 1e-12, "10*log10(1/0.01) = 20, got {v}");
    }

    #[test]
    fn mpsnr_decreases_with_noise_amplitude() {
        let clean = cube_from(2, [2, 16, 16]);
        let mut last = f64::INFINITY;
        for (i, &amp) in [0.01, 0.05, 0.2].iter().enumerate() {
            let noisy = HyperCube::new(NdArray::from_fn(&[2, 16, 16], |j| {
                let n = if j % 2 == 0 { amp } else { -amp };
                (clean.as_array().data()[j] + n).clamp(0.0, 1.0)
            }))
            .unwrap();
            let v = mpsnr(&noisy, &clean).unwrap();
            assert!(v < last, "amplitude step {i} should lower mpsnr");
            last = v;
        }
    }

    #[test]
    fn mssim_self_is_one() {
        let x = cube_from(3, [2, 16, 16]);
        let v = mssim(&x, &x).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mssim_noise_vs_constant_is_low() {
        let r = HyperCube::new(NdArray::filled(&[1, 16, 16], 0.5)).unwrap();
        let x = cube_from(44, [1, 16, 16]);
        let v = mssim(&x, &r).unwrap();
        assert!(v < 0.2, "independent noise against a constant: {v}");
    }

    #[test]
    fn mssim_rejects_small_images() {
        let x = cube_from(5, [1, 8, 16]);
        assert!(matches!(
            mssim(&x, &x).unwrap_err(),
            Error::WindowTooSmall { extent: 8, .. }
        ));
    }

    #[test]
    fn sam_parallel_orthogonal_diagonal() {
        let x = cube_from(6, [3, 4, 4]);
        assert_eq!(sam(&x, &x).unwrap(), 0.0);

        let e1 = HyperCube::from_fn(2, 4, 4, |b, _, _| (b == 0) as u8 as f64).unwrap();
        let e2 = HyperCube::from_fn(2, 4, 4, |b, _, _| (b == 1) as u8 as f64).unwrap();
        assert!((sam(&e1, &e2).unwrap() - 90.0).abs() < 1e-12);

        let ones = HyperCube::new(NdArray::filled(&[2, 4, 4], 1.0)).unwrap();
        assert!((sam(&ones, &e1).unwrap() - 45.0).abs() < 1e-12);
    }

    #[test]
    fn sam_is_symmetric_and_scale_free() {
        let x = cube_from(7, [3, 6, 6]);
        let r = cube_from(8, [3, 6, 6]);
        assert_eq!(sam(&x, &r).unwrap(), sam(&r, &x).unwrap());

        let half = HyperCube::new(x.as_array().map(|v| v * 0.5)).unwrap();
        let a = sam(&x, &r).unwrap();
        let b = sam(&half, &r).unwrap();
        assert!((a - b).abs() < 1e-9, "positive per-pixel scaling: {a} vs {b}");
    }

    #[test]
    fn sam_skips_zero_spectra_and_errors_when_all_zero() {
        // one zero spectrum at pixel 0, parallel elsewhere
        let x = HyperCube::from_fn(2, 2, 2, |_, y, xx| {
            if y == 0 && xx == 0 {
                0.0
            } else {
                0.5
            }
        })
        .unwrap();
        let r = HyperCube::new(NdArray::filled(&[2, 2, 2], 0.25)).unwrap();
        assert_eq!(sam(&x, &r).unwrap(), 0.0);

        let z = HyperCube::new(NdArray::zeros(&[2, 2, 2])).unwrap();
        assert!(matches!(sam(&z, &r).unwrap_err(), Error::AllSpectraZero));
    }

    #[test]
    fn report_self_comparison() {
        let x = cube_from(9, [2, 12, 12]);
        let rep = report(&x, &x).unwrap();
        assert_eq!(rep.mpsnr, f64::INFINITY);
        assert!((rep.mssim - 1.0).abs() < 1e-12);
        assert_eq!(rep.sam, 0.0);
    }
}
