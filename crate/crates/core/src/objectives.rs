//! The three task energies and the spatial downsampling operator d.
//!
//! Each energy exists twice: as a pure function over cubes (used for
//! reporting and by the corruption harness) and as a tape attachment (used
//! by the engine so gradients flow to the network output). Both routes share
//! the same elementwise arithmetic and summation order.
//!
//! The inpainting energy restricts the squared difference to observed
//! positions, ||(x - x0) o m||^2 / count(m=1); values of x0 hidden by the
//! mask cannot influence the energy or its gradient.

use crate::autodiff::{ops, NodeId, Tape};
use crate::cube::{HyperCube, Mask};
use crate::error::{Error, Result};

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

/// Mean of squared differences over all elements.
pub fn energy_l2(x: &HyperCube, x0: &HyperCube) -> Result<f64> {
    check_same_shape("energy_l2", x, x0)?;
    let mut acc = 0.0;
    for (a, b) in x.as_array().data().iter().zip(x0.as_array().data()) {
        let d = a - b;
        acc += d * d;
    }
    Ok(acc / x.as_array().numel() as f64)
}

/// Mean of squared differences over observed (mask = 1) positions.
pub fn energy_masked(x: &HyperCube, x0: &HyperCube, m: &Mask) -> Result<f64> {
    check_same_shape("energy_masked", x, x0)?;
    if m.shape() != x.shape() {
        return Err(Error::DimMismatch {
            op: "energy_masked",
            dim: "mask flat length",
            expected: x.as_array().numel(),
            got: m.as_array().numel(),
        });
    }
    let ones = m.count_ones();
    if ones == 0 {
        return Err(Error::EmptyMask);
    }
    let (xd, td, md) = (
        x.as_array().data(),
        x0.as_array().data(),
        m.as_array().data(),
    );
    let mut acc = 0.0;
    for i in 0..xd.len() {
        let d = md[i] * xd[i] - md[i] * td[i];
        acc += d * d;
    }
    Ok(acc / ones as f64)
}

/// Per-band alpha x alpha block averaging; the spectral dimension is
/// untouched. This is the forward model of the super-resolution energy and
/// the generator of low-resolution observations.
pub fn degrade_downsample(x: &HyperCube, alpha: usize) -> Result<HyperCube> {
    assert!(alpha >= 1, "alpha must be positive");
    let arr = ops::block_avg2(x.as_array(), alpha).map_err(|e| match e {
        Error::NotDivisible { dim, extent, divisor, .. } => Error::NotDivisible {
            op: "degrade_downsample",
            dim,
            extent,
            divisor,
        },
        other => other,
    })?;
    HyperCube::new(arr)
}

/// Super-resolution energy: L2 distance between the downsampled candidate
/// and the low-resolution observation.
pub fn energy_sr(x: &HyperCube, x0_lowres: &HyperCube, alpha: usize) -> Result<f64> {
    let down = degrade_downsample(x, alpha)?;
    check_same_shape("energy_sr", &down, x0_lowres)?;
    energy_l2(&down, x0_lowres)
}

/// Records the denoising energy on the tape and returns the scalar node.
pub fn attach_l2_energy(tape: &mut Tape, x: NodeId, x0: &HyperCube) -> Result<NodeId> {
    tape.mse_against(x, x0.as_array())
}

/// Records the inpainting energy on the tape.
pub fn attach_masked_energy(
    tape: &mut Tape,
    x: NodeId,
    x0: &HyperCube,
    m: &Mask,
) -> Result<NodeId> {
    tape.masked_mse_against(x, x0.as_array(), m.as_array())
}

/// Records the super-resolution energy on the tape: block-average the
/// candidate, then L2 against the low-resolution observation.
pub fn attach_sr_energy(
    tape: &mut Tape,
    x: NodeId,
    x0_lowres: &HyperCube,
    alpha: usize,
) -> Result<NodeId> {
    let down = tape.block_avg(x, alpha)?;
    tape.mse_against(down, x0_lowres.as_array())
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
    fn l2_of_identical_cubes_is_zero() {
        let x = cube_from(1, [2, 4, 4]);
        assert_eq!(energy_l2(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn l2_of_constant_offset() {
        let x0 = HyperCube::new(NdArray::filled(&[2, 3, 3], 0.4)).unwrap();
        let x = HyperCube::new(NdArray::filled(&[2, 3, 3], 0.5)).unwrap();
        let e = energy_l2(&x, &x0).unwrap();
        assert!((e - 0.01).abs() < 1e-15);
    }

    #[test]
    fn l2_rejects_shape_mismatch() {
        let x = cube_from(1, [2, 4, 4]);
        let y = cube_from(2, [2, 4, 5]);
        let err = energy_l2(&x, &y).unwrap_err();
        assert!(matches!(err, Error::DimMismatch { dim: "width", .. }));
    }

    #[test]
    fn masked_with_all_ones_equals_l2() {
        let x = cube_from(3, [2, 4, 4]);
        let x0 = cube_from(4, [2, 4, 4]);
        let m = Mask::all_ones(2, 4, 4);
        let em = energy_masked(&x, &x0, &m).unwrap();
        let el = energy_l2(&x, &x0).unwrap();
        assert!((em - el).abs() < 1e-15);
    }

    #[test]
    fn masked_ignores_differences_in_holes() {
        let x0 = HyperCube::new(NdArray::filled(&[1, 2, 2], 0.25)).unwrap();
        let mut data = x0.as_array().data().to_vec();
        data[1] = 0.9; // differs only where the mask is 0
        let x = HyperCube::new(NdArray::from_vec(&[1, 2, 2], data).unwrap()).unwrap();
        let m = Mask::new(NdArray::from_vec(&[1, 2, 2], vec![1.0, 0.0, 1.0, 1.0]).unwrap())
            .unwrap();
        assert_eq!(energy_masked(&x, &x0, &m).unwrap(), 0.0);
    }

    #[test]
    fn masked_rejects_empty_mask() {
        let x = cube_from(5, [1, 2, 2]);
        let m = Mask::new(NdArray::zeros(&[1, 2, 2])).unwrap();
        assert!(matches!(
            energy_masked(&x, &x, &m).unwrap_err(),
            Error::EmptyMask
        ));
    }

    #[test]
    fn downsample_keeps_constants() {
        let x = HyperCube::new(NdArray::filled(&[3, 4, 4], 0.7)).unwrap();
        let d = degrade_downsample(&x, 2).unwrap();
        assert_eq!(d.shape(), &[3, 2, 2]);
        assert!(d.as_array().data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn downsample_alpha_one_is_identity() {
        let x = cube_from(6, [2, 4, 4]);
        let d = degrade_downsample(&x, 1).unwrap();
        assert_eq!(d, x);
    }

    #[test]
    fn downsample_checkerboard_averages_to_half() {
        let x = HyperCube::from_fn(1, 4, 4, |_, y, xx| ((y + xx) % 2) as f64).unwrap();
        let d = degrade_downsample(&x, 2).unwrap();
        assert!(d.as_array().data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn downsample_rejects_non_divisible() {
        let x = cube_from(7, [1, 6, 4]);
        let err = degrade_downsample(&x, 4).unwrap_err();
        assert!(matches!(
            err,
            Error::NotDivisible {
                op: "degrade_downsample",
                dim: "height",
                ..
            }
        ));
    }

    #[test]
    fn sr_energy_zero_for_nearest_upsampled_lowres() {
        let lr = cube_from(8, [2, 4, 4]);
        let up = ops::upsample2d(lr.as_array(), [2, 2], crate::autodiff::UpsampleMode::Nearest);
        let x = HyperCube::new(up).unwrap();
        let e = energy_sr(&x, &lr, 2).unwrap();
        assert!(e < 1e-28, "block averaging inverts nearest replication");
    }

    #[test]
    fn sr_energy_alpha_one_equals_l2() {
        let x = cube_from(9, [2, 4, 4]);
        let x0 = cube_from(10, [2, 4, 4]);
        assert_eq!(
            energy_sr(&x, &x0, 1).unwrap(),
            energy_l2(&x, &x0).unwrap()
        );
    }

    #[test]
    fn tape_energies_match_pure_functions() {
        let x = cube_from(11, [2, 8, 8]);
        let x0 = cube_from(12, [2, 8, 8]);
        let lr = degrade_downsample(&x0, 2).unwrap();
        let m = Mask::new(NdArray::from_fn(&[2, 8, 8], |i| (i % 3 == 0) as u8 as f64)).unwrap();

        let mut tape = Tape::new();
        let xn = tape.constant(x.as_array().clone());
        let l2 = attach_l2_energy(&mut tape, xn, &x0).unwrap();
        let mm = attach_masked_energy(&mut tape, xn, &x0, &m).unwrap();
        let sr = attach_sr_energy(&mut tape, xn, &lr, 2).unwrap();

        assert_eq!(tape.value(l2).data()[0], energy_l2(&x, &x0).unwrap());
        assert_eq!(
            tape.value(mm).data()[0],
            energy_masked(&x, &x0, &m).unwrap()
        );
        assert_eq!(tape.value(sr).data()[0], energy_sr(&x, &lr, 2).unwrap());
    }
}
