//! Brute-force reference implementations, written independently of the
//! library's fast paths, checked on randomized small instances.
//!
//! The references here favor obviousness over speed: plain nested loops,
//! non-separable window sums, and direct per-element index arithmetic.

use hsprior_core::autodiff::ops;
use hsprior_core::cube::{HyperCube, Mask};
use hsprior_core::metrics;
use hsprior_core::objectives;
use hsprior_core::rng::{seeded_rng, uniform_array};
use hsprior_core::NdArray;
use rand::Rng;

const TRIALS: u64 = 24;

fn reflect_idx(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let mut i = i;
    let n = n as isize;
    while i < 0 || i >= n {
        if i < 0 {
            i = -i;
        } else {
            i = 2 * n - 2 - i;
        }
    }
    i as usize
}

/// Nested-loop 2D convolution: for every output element, walk the kernel
/// and read the reflection-padded input coordinate directly.
fn conv2d_reference(
    x: &NdArray,
    k: &NdArray,
    b: &NdArray,
    stride: usize,
    pad: usize,
) -> NdArray {
    let (ci_n, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co_n, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = NdArray::zeros(&[co_n, oh, ow]);
    for co in 0..co_n {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = b.data()[co];
                for ci in 0..ci_n {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = reflect_idx(
                                (oy * stride + ky) as isize - pad as isize,
                                h,
                            );
                            let ix = reflect_idx(
                                (ox * stride + kx) as isize - pad as isize,
                                w,
                            );
                            acc += x.data()[(ci * h + iy) * w + ix]
                                * k.data()[((co * ci_n + ci) * kh + ky) * kw + kx];
                        }
                    }
                }
                out.data_mut()[(co * oh + oy) * ow + ox] = acc;
            }
        }
    }
    out
}

fn conv3d_reference(
    x: &NdArray,
    k: &NdArray,
    b: &NdArray,
    stride: [usize; 3],
    pad: [usize; 3],
) -> NdArray {
    let (mi_n, d, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (mo_n, kd, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3], k.shape()[4]);
    let od = (d + 2 * pad[0] - kd) / stride[0] + 1;
    let oh = (h + 2 * pad[1] - kh) / stride[1] + 1;
    let ow = (w + 2 * pad[2] - kw) / stride[2] + 1;
    let mut out = NdArray::zeros(&[mo_n, od, oh, ow]);
    for mo in 0..mo_n {
        for oz in 0..od {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[mo];
                    for mi in 0..mi_n {
                        for kz in 0..kd {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iz = reflect_idx(
                                        (oz * stride[0] + kz) as isize - pad[0] as isize,
                                        d,
                                    );
                                    let iy = reflect_idx(
                                        (oy * stride[1] + ky) as isize - pad[1] as isize,
                                        h,
                                    );
                                    let ix = reflect_idx(
                                        (ox * stride[2] + kx) as isize - pad[2] as isize,
                                        w,
                                    );
                                    acc += x.data()[((mi * d + iz) * h + iy) * w + ix]
                                        * k.data()[(((mo * mi_n + mi) * kd + kz) * kh + ky)
                                            * kw
                                            + kx];
                                }
                            }
                        }
                    }
                    out.data_mut()[((mo * od + oz) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_nested_loop_reference() {
    for trial in 0..TRIALS {
        let mut rng = seeded_rng(10 + trial);
        let (ci, co) = (rng.random_range(1..4), rng.random_range(1..4));
        let (h, w) = (rng.random_range(4..9), rng.random_range(4..9));
        let ks = [1, 3, 5][rng.random_range(0..3)];
        let stride = rng.random_range(1..3);
        let pad = if ks == 1 { 0 } else { (ks - 1) / 2 };
        if h + 2 * pad < ks || w + 2 * pad < ks {
            continue;
        }
        let x = uniform_array(&[ci, h, w], 20 + trial, -1.0, 1.0);
        let k = uniform_array(&[co, ci, ks, ks], 30 + trial, -1.0, 1.0);
        let b = uniform_array(&[co], 40 + trial, -0.5, 0.5);
        let fast = ops::conv2d(&x, &k, &b, stride, pad).unwrap();
        let slow = conv2d_reference(&x, &k, &b, stride, pad);
        assert_eq!(fast.shape(), slow.shape());
        assert!(
            fast.max_abs_diff(&slow) < 1e-10,
            "trial {trial}: diff {}",
            fast.max_abs_diff(&slow)
        );
    }
}

#[test]
fn conv2d_identity_and_symmetry_cases() {
    // 1x1 kernel of value 1 leaves any input unchanged
    let x = uniform_array(&[3, 5, 7], 1, -1.0, 1.0);
    let k = NdArray::from_vec(&[3, 3, 1, 1], {
        let mut v = vec![0.0; 9];
        v[0] = 1.0; // co=0 reads ci=0
        v[4] = 1.0; // co=1 reads ci=1
        v[8] = 1.0; // co=2 reads ci=2
        v
    })
    .unwrap();
    let b = NdArray::zeros(&[3]);
    let out = ops::conv2d(&x, &k, &b, 1, 0).unwrap();
    assert_eq!(out, x);

    // all-ones 3x3 kernel over a constant image: every pixel sums 9 values
    // (reflection padding keeps borders constant too)
    let c = NdArray::filled(&[1, 5, 5], 0.3);
    let k9 = NdArray::filled(&[1, 1, 3, 3], 1.0);
    let out = ops::conv2d(&c, &k9, &NdArray::zeros(&[1]), 1, 1).unwrap();
    for &v in out.data() {
        assert!((v - 2.7).abs() < 1e-12);
    }
}

#[test]
fn conv3d_matches_nested_loop_reference() {
    for trial in 0..TRIALS {
        let mut rng = seeded_rng(50 + trial);
        let (mi, mo) = (rng.random_range(1..3), rng.random_range(1..3));
        let (d, h, w) = (
            rng.random_range(2..5),
            rng.random_range(3..6),
            rng.random_range(3..6),
        );
        let stride = [rng.random_range(1..3), 1, rng.random_range(1..3)];
        let x = uniform_array(&[mi, d, h, w], 60 + trial, -1.0, 1.0);
        let k = uniform_array(&[mo, mi, 3, 3, 3], 70 + trial, -1.0, 1.0);
        let b = uniform_array(&[mo], 80 + trial, -0.5, 0.5);
        let fast = ops::conv3d(&x, &k, &b, stride, [1, 1, 1]).unwrap();
        let slow = conv3d_reference(&x, &k, &b, stride, [1, 1, 1]);
        assert_eq!(fast.shape(), slow.shape());
        assert!(fast.max_abs_diff(&slow) < 1e-10, "trial {trial}");
    }
}

#[test]
fn upsample_linear_matches_hand_derived_values() {
    // 1D row [0,1] under factor 2, half-pixel alignment, edge clamped
    let x = NdArray::from_vec(&[1, 1, 2], vec![0.0, 1.0]).unwrap();
    let up = ops::upsample2d(&x, [1, 2], ops::UpsampleMode::Linear);
    let expected = [0.0, 0.25, 0.75, 1.0];
    for (a, e) in up.data().iter().zip(expected) {
        assert!((a - e).abs() < 1e-12, "{:?}", up.data());
    }

    // constants stay constant under any factor and mode
    let c = NdArray::filled(&[2, 3, 3], 0.42);
    for mode in [ops::UpsampleMode::Nearest, ops::UpsampleMode::Linear] {
        let u = ops::upsample2d(&c, [3, 2], mode);
        assert!(u.data().iter().all(|&v| (v - 0.42).abs() < 1e-15));
    }
}

#[test]
fn energies_match_loop_oracles() {
    for trial in 0..TRIALS {
        let shape = [3, 6, 4];
        let x = HyperCube::new(uniform_array(&shape, 100 + trial, 0.0, 1.0)).unwrap();
        let y = HyperCube::new(uniform_array(&shape, 200 + trial, 0.0, 1.0)).unwrap();
        let mut rng = seeded_rng(300 + trial);
        let mask_arr = NdArray::from_fn(&shape, |_| f64::from(rng.random::<f64>() < 0.7));
        if mask_arr.data().iter().all(|&v| v == 0.0) {
            continue;
        }
        let m = Mask::new(mask_arr.clone()).unwrap();

        // one-line loops, straight from the definitions
        let n = x.as_array().numel() as f64;
        let mut l2 = 0.0;
        for i in 0..x.as_array().numel() {
            l2 += (x.as_array().data()[i] - y.as_array().data()[i]).powi(2);
        }
        l2 /= n;
        assert!((objectives::energy_l2(&x, &y).unwrap() - l2).abs() < 1e-12);

        let mut masked = 0.0;
        let mut count = 0.0;
        for i in 0..x.as_array().numel() {
            if mask_arr.data()[i] == 1.0 {
                masked += (x.as_array().data()[i] - y.as_array().data()[i]).powi(2);
                count += 1.0;
            }
        }
        masked /= count;
        assert!((objectives::energy_masked(&x, &y, &m).unwrap() - masked).abs() < 1e-12);
    }
}

#[test]
fn downsample_and_sr_energy_match_composed_oracles() {
    for trial in 0..TRIALS {
        let x = HyperCube::new(uniform_array(&[2, 6, 8], 400 + trial, 0.0, 1.0)).unwrap();
        let alpha = 2;
        let (oh, ow) = (3, 4);
        let mut down = NdArray::zeros(&[2, oh, ow]);
        for c in 0..2 {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for dy in 0..alpha {
                        for dx in 0..alpha {
                            acc += x.at(c, oy * alpha + dy, ox * alpha + dx);
                        }
                    }
                    down.data_mut()[(c * oh + oy) * ow + ox] = acc / (alpha * alpha) as f64;
                }
            }
        }
        let fast = objectives::degrade_downsample(&x, alpha).unwrap();
        assert!(fast.as_array().max_abs_diff(&down) < 1e-12, "trial {trial}");

        let lr = HyperCube::new(uniform_array(&[2, 3, 4], 500 + trial, 0.0, 1.0)).unwrap();
        let mut l2 = 0.0;
        for i in 0..down.numel() {
            l2 += (down.data()[i] - lr.as_array().data()[i]).powi(2);
        }
        l2 /= down.numel() as f64;
        assert!(
            (objectives::energy_sr(&x, &lr, alpha).unwrap() - l2).abs() < 1e-12,
            "trial {trial}"
        );
    }
}

/// Independent PSNR: per-band mean over a plain double loop.
fn mpsnr_reference(x: &HyperCube, r: &HyperCube) -> f64 {
    let mut total = 0.0;
    for b in 0..x.bands() {
        let mut mse = 0.0;
        for y in 0..x.height() {
            for xx in 0..x.width() {
                mse += (x.at(b, y, xx) - r.at(b, y, xx)).powi(2);
            }
        }
        mse /= (x.height() * x.width()) as f64;
        total += 10.0 * (1.0 / mse).log10();
    }
    total / x.bands() as f64
}

/// Independent SSIM: non-separable product-window statistics per position.
fn mssim_reference(x: &HyperCube, r: &HyperCube) -> f64 {
    let (h, w) = (x.height(), x.width());
    let win = 11usize;
    let sigma = 1.5f64;
    let c = (win - 1) as f64 / 2.0;
    let mut weights = vec![0.0; win * win];
    let mut sum = 0.0;
    for i in 0..win {
        for j in 0..win {
            let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            weights[i * win + j] = (-d2 / (2.0 * sigma * sigma)).exp();
            sum += weights[i * win + j];
        }
    }
    for v in &mut weights {
        *v /= sum;
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));

    let mut band_mean = 0.0;
    for b in 0..x.bands() {
        let mut acc = 0.0;
        let mut count = 0.0;
        for oy in 0..=(h - win) {
            for ox in 0..=(w - win) {
                let (mut mx, mut mr) = (0.0, 0.0);
                let (mut sxx, mut srr, mut sxr) = (0.0, 0.0, 0.0);
                for i in 0..win {
                    for j in 0..win {
                        let wv = weights[i * win + j];
                        let a = x.at(b, oy + i, ox + j);
                        let v = r.at(b, oy + i, ox + j);
                        mx += wv * a;
                        mr += wv * v;
                        sxx += wv * a * a;
                        srr += wv * v * v;
                        sxr += wv * a * v;
                    }
                }
                let vx = sxx - mx * mx;
                let vr = srr - mr * mr;
                let cov = sxr - mx * mr;
                acc += ((2.0 * mx * mr + c1) * (2.0 * cov + c2))
                    / ((mx * mx + mr * mr + c1) * (vx + vr + c2));
                count += 1.0;
            }
        }
        band_mean += acc / count;
    }
    band_mean / x.bands() as f64
}

/// Independent SAM with explicit per-pixel spectrum gathering.
fn sam_reference(x: &HyperCube, r: &HyperCube) -> f64 {
    let mut acc = 0.0;
    let mut n = 0usize;
    for y in 0..x.height() {
        for xx in 0..x.width() {
            let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
            for b in 0..x.bands() {
                dot += x.at(b, y, xx) * r.at(b, y, xx);
                na += x.at(b, y, xx).powi(2);
                nb += r.at(b, y, xx).powi(2);
            }
            if na == 0.0 || nb == 0.0 {
                continue;
            }
            let ratio = (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0);
            acc += ratio.acos().to_degrees();
            n += 1;
        }
    }
    acc / n as f64
}

#[test]
fn metrics_match_reference_implementations() {
    for trial in 0..TRIALS {
        let shape = [4, 12, 12];
        let x = HyperCube::new(uniform_array(&shape, 600 + trial, 0.0, 1.0)).unwrap();
        let r = HyperCube::new(uniform_array(&shape, 700 + trial, 0.0, 1.0)).unwrap();

        let p = metrics::mpsnr(&x, &r).unwrap();
        assert!(
            (p - mpsnr_reference(&x, &r)).abs() < 1e-9,
            "trial {trial}: mpsnr {p}"
        );

        let s = metrics::mssim(&x, &r).unwrap();
        assert!(
            (s - mssim_reference(&x, &r)).abs() < 1e-6,
            "trial {trial}: mssim {s} vs {}",
            mssim_reference(&x, &r)
        );

        let a = metrics::sam(&x, &r).unwrap();
        assert!(
            (a - sam_reference(&x, &r)).abs() < 1e-9,
            "trial {trial}: sam {a}"
        );
    }
}

#[test]
fn mpsnr_constant_offset_is_exactly_twenty() {
    let r = HyperCube::new(NdArray::filled(&[3, 8, 8], 0.3)).unwrap();
    let x = HyperCube::new(NdArray::filled(&[3, 8, 8], 0.4)).unwrap();
    // 10*log10(1/0.01) = 20 dB
    assert!((metrics::mpsnr(&x, &r).unwrap() - 20.0).abs() < 1e-9);
}
