//! Hourglass encoder-decoder construction, in 2D and 3D convolutional
//! variants.
//!
//! The 2D variant consumes all spectral bands at once: the first layer's
//! filters span the full band depth, interior layers work on feature maps,
//! and the last layer emits exactly the original band count. The 3D variant
//! keeps the cube as a volume throughout, using small cubic kernels, and
//! downsamples the spectral dimension alongside the spatial ones wherever
//! the current spectral extent is even.
//!
//! Every interior convolution is followed by per-channel normalization
//! (when enabled) and LeakyReLU; without the normalization, deep stacks
//! drift into sigmoid saturation within tens of optimizer steps at the
//! default learning rate. Both variants finish with a raw convolution and a
//! sigmoid, so outputs are valid reflectance values in [0,1] with the exact
//! shape of the input cube.

use rand_chacha::ChaCha8Rng;

use crate::array::NdArray;
use crate::autodiff::{init_array, NodeId, Tape, UpsampleMode};
use crate::error::{Error, Result};
use crate::rng::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    TwoD,
    ThreeD,
}

/// Declarative description of one hourglass network.
#[derive(Debug, Clone)]
pub struct ArchSpec {
    pub variant: Variant,
    /// Encoder/decoder depth; each level halves the spatial extents.
    pub levels: usize,
    /// Feature channels (2D) or volume multiplicities (3D) per level.
    pub channels_per_level: Vec<usize>,
    /// Odd spatial kernel extent; 3D kernels are cubes of this size.
    pub kernel_size: usize,
    /// Per-level skip connection toggle.
    pub skip: Vec<bool>,
    /// Width of each skip path.
    pub skip_channels: usize,
    pub upsample_mode: UpsampleMode,
    /// Per-channel normalization after every interior convolution.
    pub normalize: bool,
    /// Cube shape as [bands, height, width].
    pub input_shape: [usize; 3],
}

impl ArchSpec {
    /// Default 2D hourglass: 5 levels, widths 16..128, skips everywhere.
    pub fn default_2d(input_shape: [usize; 3]) -> ArchSpec {
        ArchSpec {
            variant: Variant::TwoD,
            levels: 5,
            channels_per_level: vec![16, 32, 64, 128, 128],
            kernel_size: 3,
            skip: vec![true; 5],
            skip_channels: 4,
            upsample_mode: UpsampleMode::Linear,
            normalize: true,
            input_shape,
        }
    }

    /// Default 3D hourglass. Multiplicities stay small at full-volume levels
    /// (where compute lives) and grow toward the bottleneck (where the
    /// parameters live), which keeps the variant tractable while its total
    /// parameter count stays well above the 2D default's.
    pub fn default_3d(input_shape: [usize; 3]) -> ArchSpec {
        ArchSpec {
            variant: Variant::ThreeD,
            levels: 5,
            channels_per_level: vec![4, 8, 32, 128, 256],
            kernel_size: 3,
            skip: vec![true; 5],
            skip_channels: 4,
            upsample_mode: UpsampleMode::Linear,
            normalize: true,
            input_shape,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::Config("levels must be at least 1".into()));
        }
        if self.channels_per_level.len() != self.levels {
            return Err(Error::Config(format!(
                "channels_per_level has {} entries for {} levels",
                self.channels_per_level.len(),
                self.levels
            )));
        }
        if self.skip.len() != self.levels {
            return Err(Error::Config(format!(
                "skip has {} entries for {} levels",
                self.skip.len(),
                self.levels
            )));
        }
        if self.channels_per_level.iter().any(|&c| c == 0) {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.kernel_size % 2 == 0 || self.kernel_size == 0 {
            return Err(Error::Config(format!(
                "kernel_size must be odd and positive, got {}",
                self.kernel_size
            )));
        }
        if self.skip_channels == 0 && self.skip.iter().any(|&s| s) {
            return Err(Error::Config("skip_channels must be positive".into()));
        }
        let [bands, h, w] = self.input_shape;
        if bands == 0 || h == 0 || w == 0 {
            return Err(Error::Config("input extents must be positive".into()));
        }
        let div = 1usize << self.levels;
        for (dim, n) in [("height", h), ("width", w)] {
            if n % div != 0 {
                return Err(Error::NotDivisible {
                    op: "build_network",
                    dim,
                    extent: n,
                    divisor: div,
                });
            }
        }
        Ok(())
    }
}

/// A built hourglass: the tape, its input placeholder, and the cube-shaped
/// output node.
pub struct Network {
    arch: ArchSpec,
    tape: Tape,
    input: NodeId,
    output: NodeId,
    /// Spectral stride applied at each encoder level (3D variant only;
    /// all ones for 2D).
    spectral_strides: Vec<usize>,
}

/// LeakyReLU slope used throughout the hourglass.
pub const LEAKY_SLOPE: f64 = 0.1;
/// Variance floor of the per-channel normalization.
pub const NORM_EPS: f64 = 1e-5;

/// conv -> optional norm -> LeakyReLU, parameters drawn in a fixed order.
#[allow(clippy::too_many_arguments)]
fn conv_block_2d(
    tape: &mut Tape,
    rng: &mut ChaCha8Rng,
    x: NodeId,
    in_ch: usize,
    out_ch: usize,
    ksize: usize,
    stride: usize,
    pad: usize,
    normalize: bool,
) -> Result<NodeId> {
    let fan_in = in_ch * ksize * ksize;
    let k = tape.param(init_array(rng, &[out_ch, in_ch, ksize, ksize], fan_in));
    let b = tape.param(init_array(rng, &[out_ch], fan_in));
    let mut cur = tape.conv2d(x, k, b, stride, pad)?;
    if normalize {
        let gamma = tape.param(NdArray::filled(&[out_ch], 1.0));
        let beta = tape.param(NdArray::zeros(&[out_ch]));
        cur = tape.chan_norm(cur, gamma, beta, NORM_EPS)?;
    }
    Ok(tape.leaky_relu(cur, LEAKY_SLOPE))
}

#[allow(clippy::too_many_arguments)]
fn conv_block_3d(
    tape: &mut Tape,
    rng: &mut ChaCha8Rng,
    x: NodeId,
    in_m: usize,
    out_m: usize,
    ksize: usize,
    stride: [usize; 3],
    pad: [usize; 3],
    normalize: bool,
) -> Result<NodeId> {
    let fan_in = in_m * ksize.pow(3);
    let k = tape.param(init_array(
        rng,
        &[out_m, in_m, ksize, ksize, ksize],
        fan_in,
    ));
    let b = tape.param(init_array(rng, &[out_m], fan_in));
    let mut cur = tape.conv3d(x, k, b, stride, pad)?;
    if normalize {
        let gamma = tape.param(NdArray::filled(&[out_m], 1.0));
        let beta = tape.param(NdArray::zeros(&[out_m]));
        cur = tape.chan_norm(cur, gamma, beta, NORM_EPS)?;
    }
    Ok(tape.leaky_relu(cur, LEAKY_SLOPE))
}

impl Network {
    /// Builds the network with parameters drawn deterministically from the
    /// seed: same spec and seed, bit-identical network.
    pub fn build(arch: ArchSpec, seed: u64) -> Result<Network> {
        arch.validate()?;
        let mut rng = seeded_rng(seed);
        match arch.variant {
            Variant::TwoD => Self::build_2d(arch, &mut rng),
            Variant::ThreeD => Self::build_3d(arch, &mut rng),
        }
    }

    fn build_2d(arch: ArchSpec, rng: &mut ChaCha8Rng) -> Result<Network> {
        let [bands, h, w] = arch.input_shape;
        let k = arch.kernel_size;
        let pad = (k - 1) / 2;
        let s = arch.skip_channels;
        let norm = arch.normalize;
        let mut tape = Tape::new();

        let input = tape.input(&[bands, h, w]);
        let mut cur = input;
        let mut cur_ch = bands;
        let mut skips: Vec<Option<(NodeId, usize)>> = Vec::with_capacity(arch.levels);

        for level in 0..arch.levels {
            let ch = arch.channels_per_level[level];
            if arch.skip[level] {
                let sk = conv_block_2d(&mut tape, rng, cur, cur_ch, s, 1, 1, 0, norm)?;
                skips.push(Some((sk, s)));
            } else {
                skips.push(None);
            }
            cur = conv_block_2d(&mut tape, rng, cur, cur_ch, ch, k, 2, pad, norm)?;
            cur = conv_block_2d(&mut tape, rng, cur, ch, ch, k, 1, pad, norm)?;
            cur_ch = ch;
        }

        for level in (0..arch.levels).rev() {
            cur = tape.upsample2d(cur, [2, 2], arch.upsample_mode);
            if let Some((sk, s_ch)) = skips[level] {
                cur = tape.concat(cur, sk)?;
                cur_ch += s_ch;
            }
            let out_ch = arch.channels_per_level[level.saturating_sub(1)];
            cur = conv_block_2d(&mut tape, rng, cur, cur_ch, out_ch, k, 1, pad, norm)?;
            cur = conv_block_2d(&mut tape, rng, cur, out_ch, out_ch, 1, 1, 0, norm)?;
            cur_ch = out_ch;
        }

        let kf = tape.param(init_array(rng, &[bands, cur_ch, 1, 1], cur_ch));
        let bf = tape.param(init_array(rng, &[bands], cur_ch));
        let cf = tape.conv2d(cur, kf, bf, 1, 0)?;
        let output = tape.sigmoid(cf);

        debug_assert_eq!(tape.value(output).shape(), &[bands, h, w]);
        Ok(Network {
            spectral_strides: vec![1; arch.levels],
            arch,
            tape,
            input,
            output,
        })
    }

    fn build_3d(arch: ArchSpec, rng: &mut ChaCha8Rng) -> Result<Network> {
        let [bands, h, w] = arch.input_shape;
        let k = arch.kernel_size;
        let pad = (k - 1) / 2;
        let s = arch.skip_channels;
        let norm = arch.normalize;
        let mut tape = Tape::new();

        let input = tape.input(&[bands, h, w]);
        let mut cur = tape.reshape(input, &[1, bands, h, w])?;
        let mut cur_m = 1usize;
        let mut cur_d = bands;
        let mut skips: Vec<Option<(NodeId, usize)>> = Vec::with_capacity(arch.levels);
        let mut spectral_strides = Vec::with_capacity(arch.levels);

        for level in 0..arch.levels {
            let m = arch.channels_per_level[level];
            if arch.skip[level] {
                let sk = conv_block_3d(
                    &mut tape,
                    rng,
                    cur,
                    cur_m,
                    s,
                    1,
                    [1, 1, 1],
                    [0, 0, 0],
                    norm,
                )?;
                skips.push(Some((sk, s)));
            } else {
                skips.push(None);
            }
            // Spectral stride only where the band extent halves cleanly;
            // odd or exhausted extents fall back to spatial-only striding.
            let sd = if cur_d >= 2 && cur_d % 2 == 0 { 2 } else { 1 };
            spectral_strides.push(sd);
            cur = conv_block_3d(
                &mut tape,
                rng,
                cur,
                cur_m,
                m,
                k,
                [sd, 2, 2],
                [pad, pad, pad],
                norm,
            )?;
            cur = conv_block_3d(
                &mut tape,
                rng,
                cur,
                m,
                m,
                k,
                [1, 1, 1],
                [pad, pad, pad],
                norm,
            )?;
            cur_m = m;
            cur_d = if sd == 2 { cur_d / 2 } else { cur_d };
        }

        for level in (0..arch.levels).rev() {
            let sd = spectral_strides[level];
            cur = tape.upsample3d(cur, [sd, 2, 2], arch.upsample_mode);
            if let Some((sk, s_ch)) = skips[level] {
                cur = tape.concat(cur, sk)?;
                cur_m += s_ch;
            }
            let out_m = arch.channels_per_level[level.saturating_sub(1)];
            cur = conv_block_3d(
                &mut tape,
                rng,
                cur,
                cur_m,
                out_m,
                k,
                [1, 1, 1],
                [pad, pad, pad],
                norm,
            )?;
            cur = conv_block_3d(
                &mut tape,
                rng,
                cur,
                out_m,
                out_m,
                1,
                [1, 1, 1],
                [0, 0, 0],
                norm,
            )?;
            cur_m = out_m;
        }

        let kf = tape.param(init_array(rng, &[1, cur_m, 1, 1, 1], cur_m));
        let bf = tape.param(init_array(rng, &[1], cur_m));
        let cf = tape.conv3d(cur, kf, bf, [1, 1, 1], [0, 0, 0])?;
        let sq = tape.sigmoid(cf);
        let output = tape.reshape(sq, &[bands, h, w])?;

        Ok(Network {
            spectral_strides,
            arch,
            tape,
            input,
            output,
        })
    }

    /// Runs the network on an input of the spec's shape and returns the
    /// output cube values.
    pub fn forward(&mut self, z: &NdArray) -> Result<&NdArray> {
        if z.shape() != self.arch.input_shape {
            return Err(Error::DimMismatch {
                op: "forward",
                dim: "input flat length",
                expected: self.arch.input_shape.iter().product(),
                got: z.numel(),
            });
        }
        self.tape.set_value(self.input, z.clone())?;
        self.tape.replay();
        Ok(self.tape.value(self.output))
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn input_id(&self) -> NodeId {
        self.input
    }

    pub fn output_id(&self) -> NodeId {
        self.output
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn tape_mut(&mut self) -> &mut Tape {
        &mut self.tape
    }

    pub fn param_count(&self) -> usize {
        self.tape.param_count()
    }

    pub fn spectral_strides(&self) -> &[usize] {
        &self.spectral_strides
    }
}
