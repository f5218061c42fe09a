//! Equivalent-kernel computation for pooling-free Bayesian CNN priors.
//!
//! An infinitely wide CNN with Gaussian weight priors defines a GP over its
//! outputs. Without pooling layers the kernel between two images is diagonal
//! across pixels, so it is fully described by three spatial maps: the
//! per-pixel variance of each image and their per-pixel cross-covariance.
//! Convolutions act affinely on these maps, relu applies the first-order
//! arc-cosine moment, and nearest upsampling replicates entries. The cost of
//! one kernel evaluation is one single-channel forward pass.

use crate::block_cov::{GaussianBatch, StructuredCov};
use crate::error::{FvError, Result};
use crate::tensor::{nearest_src_index, Tensor3};

/// Convolution layer of the prior architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    /// Total weight variance; per-weight variance in the finite network is
    /// `weight_var / (kh * kw * c_in)`.
    pub weight_var: f64,
    pub bias_var: f64,
}

impl ConvSpec {
    pub fn out_dim(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let oh = (h + 2 * self.pad).checked_sub(self.kh).map(|v| v / self.stride + 1);
        let ow = (w + 2 * self.pad).checked_sub(self.kw).map(|v| v / self.stride + 1);
        match (oh, ow) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok((oh, ow)),
            _ => Err(FvError::ShapeMismatch(format!(
                "conv {}x{} stride {} pad {} does not fit {}x{} input",
                self.kh, self.kw, self.stride, self.pad, h, w
            ))),
        }
    }
}

/// Layers allowed in the prior: convolutions, relu, nearest upsampling.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv(ConvSpec),
    Relu,
    /// Nearest-neighbor upsampling to a target resolution.
    NearestUpsample { th: usize, tw: usize },
}

/// Prior architecture: layer list plus input shape and the GP constants.
#[derive(Clone, Debug)]
pub struct ArchSpec {
    pub layers: Vec<Layer>,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    /// Constant prior mean over all outputs.
    pub prior_mean: f64,
    /// White noise added to diagonal blocks of the batch covariance.
    pub noise_var: f64,
}

impl ArchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.in_h == 0 || self.in_w == 0 {
            return Err(FvError::ShapeMismatch("empty input shape".into()));
        }
        if self.noise_var < 0.0 {
            return Err(FvError::Domain("noise_var must be >= 0".into()));
        }
        let mut h = self.in_h;
        let mut w = self.in_w;
        for l in &self.layers {
            match l {
                Layer::Conv(c) => {
                    if c.weight_var < 0.0 || c.bias_var < 0.0 || c.stride == 0 {
                        return Err(FvError::Domain("conv variances must be >= 0, stride >= 1".into()));
                    }
                    let (oh, ow) = c.out_dim(h, w)?;
                    h = oh;
                    w = ow;
                }
                Layer::Relu => {}
                Layer::NearestUpsample { th, tw } => {
                    if *th == 0 || *tw == 0 {
                        return Err(FvError::ShapeMismatch("upsample target must be >= 1".into()));
                    }
                    h = *th;
                    w = *tw;
                }
            }
        }
        Ok(())
    }

    /// Spatial resolution after the full layer stack.
    pub fn out_dim(&self) -> Result<(usize, usize)> {
        self.validate()?;
        let mut h = self.in_h;
        let mut w = self.in_w;
        for l in &self.layers {
            match l {
                Layer::Conv(c) => {
                    let (oh, ow) = c.out_dim(h, w)?;
                    h = oh;
                    w = ow;
                }
                Layer::Relu => {}
                Layer::NearestUpsample { th, tw } => {
                    h = *th;
                    w = *tw;
                }
            }
        }
        Ok((h, w))
    }

    /// Output pixel count P.
    pub fn out_pixels(&self) -> Result<usize> {
        let (h, w) = self.out_dim()?;
        Ok(h * w)
    }

    /// Interpolation-style prior stack: a full-resolution conv, a strided
    /// reduction to roughly 20% of the output resolution, then upsample+conv
    /// stages at 40/60/80/100% of the output resolution. All convs are 3×3
    /// with the given prior variances, relu between stages.
    #[allow(clippy::too_many_arguments)]
    pub fn interp_stack(
        in_channels: usize,
        in_h: usize,
        in_w: usize,
        out_h: usize,
        out_w: usize,
        weight_var: f64,
        bias_var: f64,
        prior_mean: f64,
        noise_var: f64,
    ) -> Result<ArchSpec> {
        let conv = |stride: usize| {
            Layer::Conv(ConvSpec {
                kh: 3,
                kw: 3,
                stride,
                pad: 1,
                weight_var,
                bias_var,
            })
        };
        let stage = |frac: f64, out: usize| -> usize { ((frac * out as f64).round() as usize).max(1) };
        let (h20, w20) = (stage(0.2, out_h), stage(0.2, out_w));
        let stride = (in_h / h20).max(in_w / w20).max(1);
        let mut layers = vec![conv(1), Layer::Relu, conv(stride), Layer::Relu];
        for frac in [0.4, 0.6, 0.8, 1.0] {
            layers.push(Layer::NearestUpsample {
                th: stage(frac, out_h),
                tw: stage(frac, out_w),
            });
            layers.push(conv(1));
            if frac < 1.0 {
                layers.push(Layer::Relu);
            }
        }
        let arch = ArchSpec {
            layers,
            in_channels,
            in_h,
            in_w,
            prior_mean,
            noise_var,
        };
        arch.validate()?;
        let (oh, ow) = arch.out_dim()?;
        if (oh, ow) != (out_h, out_w) {
            return Err(FvError::ShapeMismatch(format!(
                "interp stack lands at {}x{}, wanted {}x{}",
                oh, ow, out_h, out_w
            )));
        }
        Ok(arch)
    }
}

/// The three spatial maps carrying a kernel evaluation between two images.
#[derive(Clone, Debug)]
pub struct KernelMaps {
    pub h: usize,
    pub w: usize,
    /// Per-pixel variance map of the first image.
    pub v_i: Vec<f64>,
    /// Per-pixel variance map of the second image.
    pub v_j: Vec<f64>,
    /// Per-pixel cross-covariance map.
    pub c_ij: Vec<f64>,
}

impl KernelMaps {
    fn apply_spatial(&self, h: usize, w: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> KernelMaps {
        KernelMaps {
            h,
            w,
            v_i: f(&self.v_i),
            v_j: f(&self.v_j),
            c_ij: f(&self.c_ij),
        }
    }
}

/// E[relu(u) relu(w)] for zero-mean jointly Gaussian (u, w) with variances
/// `v_i`, `v_j` and covariance `c`: the first-order arc-cosine moment
/// sqrt(v_i v_j)/(2π) · (sin θ + (π−θ) cos θ) with θ = arccos(c/sqrt(v_i v_j)).
pub fn relu_moment(v_i: f64, v_j: f64, c: f64) -> Result<f64> {
    if v_i < 0.0 || v_j < 0.0 {
        return Err(FvError::Domain(format!("negative variance in relu moment: {v_i}, {v_j}")));
    }
    let prod = v_i * v_j;
    if prod <= 0.0 {
        return Ok(0.0);
    }
    let s = prod.sqrt();
    let rho = c / s;
    if rho.abs() > 1.0 + 1e-9 {
        return Err(FvError::Domain(format!(
            "correlation magnitude {rho} exceeds 1 beyond tolerance"
        )));
    }
    let rho = rho.clamp(-1.0, 1.0);
    let theta = rho.acos();
    Ok(s / (2.0 * std::f64::consts::PI) * (theta.sin() + (std::f64::consts::PI - theta) * theta.cos()))
}

/// Pushes kernel maps through a convolution: each output entry is
/// `bias_var + weight_var * mean(receptive field)`, with zero padding
/// contributing zeros to the mean. Cross-pixel covariances stay exactly zero,
/// so the same affine map applies to all three maps.
pub fn conv_propagate(conv: &ConvSpec, maps: &KernelMaps) -> Result<KernelMaps> {
    let (oh, ow) = conv.out_dim(maps.h, maps.w)?;
    let (h, w) = (maps.h, maps.w);
    let denom = (conv.kh * conv.kw) as f64;
    let prop = |m: &[f64]| -> Vec<f64> {
        let mut out = Vec::with_capacity(oh * ow);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ky in 0..conv.kh {
                    let sy = (oy * conv.stride + ky) as isize - conv.pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..conv.kw {
                        let sx = (ox * conv.stride + kx) as isize - conv.pad as isize;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        acc += m[sy as usize * w + sx as usize];
                    }
                }
                out.push(conv.bias_var + conv.weight_var * acc / denom);
            }
        }
        out
    };
    Ok(maps.apply_spatial(oh, ow, prop))
}

/// Replicates every map entry to its nearest-neighbor upsampled positions.
pub fn upsample_propagate(th: usize, tw: usize, maps: &KernelMaps) -> KernelMaps {
    let (h, w) = (maps.h, maps.w);
    let prop = |m: &[f64]| -> Vec<f64> {
        let mut out = Vec::with_capacity(th * tw);
        for y in 0..th {
            let sy = nearest_src_index(y, h, th);
            for x in 0..tw {
                let sx = nearest_src_index(x, w, tw);
                out.push(m[sy * w + sx]);
            }
        }
        out
    };
    maps.apply_spatial(th, tw, prop)
}

/// Applies the relu moment to all three maps (variance maps are the c = v case).
fn relu_propagate(maps: &KernelMaps) -> Result<KernelMaps> {
    let n = maps.v_i.len();
    let mut out = KernelMaps {
        h: maps.h,
        w: maps.w,
        v_i: Vec::with_capacity(n),
        v_j: Vec::with_capacity(n),
        c_ij: Vec::with_capacity(n),
    };
    for p in 0..n {
        out.v_i.push(relu_moment(maps.v_i[p], maps.v_i[p], maps.v_i[p])?);
        out.v_j.push(relu_moment(maps.v_j[p], maps.v_j[p], maps.v_j[p])?);
        out.c_ij.push(relu_moment(maps.v_i[p], maps.v_j[p], maps.c_ij[p])?);
    }
    Ok(out)
}

/// Layer-0 maps: the image itself is the first activation, averaged over
/// channels, so c⁰[p] = mean_c x_i[c,p]·x_j[c,p] and v⁰ likewise with x_i=x_j.
fn initial_maps(arch: &ArchSpec, x_i: &Tensor3, x_j: &Tensor3) -> Result<KernelMaps> {
    for x in [x_i, x_j] {
        if x.c != arch.in_channels || x.h != arch.in_h || x.w != arch.in_w {
            return Err(FvError::ShapeMismatch(format!(
                "input {}x{}x{} does not match arch input {}x{}x{}",
                x.c, x.h, x.w, arch.in_channels, arch.in_h, arch.in_w
            )));
        }
    }
    let n = arch.in_h * arch.in_w;
    let cf = arch.in_channels as f64;
    let mut maps = KernelMaps {
        h: arch.in_h,
        w: arch.in_w,
        v_i: vec![0.0; n],
        v_j: vec![0.0; n],
        c_ij: vec![0.0; n],
    };
    for c in 0..arch.in_channels {
        for p in 0..n {
            let a = x_i.data[c * n + p];
            let b = x_j.data[c * n + p];
            maps.v_i[p] += a * a / cf;
            maps.v_j[p] += b * b / cf;
            maps.c_ij[p] += a * b / cf;
        }
    }
    Ok(maps)
}

/// Full propagation of the kernel maps through the architecture.
pub fn propagate(arch: &ArchSpec, x_i: &Tensor3, x_j: &Tensor3) -> Result<KernelMaps> {
    let mut maps = initial_maps(arch, x_i, x_j)?;
    for l in &arch.layers {
        maps = match l {
            Layer::Conv(c) => conv_propagate(c, &maps)?,
            Layer::Relu => relu_propagate(&maps)?,
            Layer::NearestUpsample { th, tw } => upsample_propagate(*th, *tw, &maps),
        };
    }
    Ok(maps)
}

/// Diagonal of the prior covariance block K(x_i, x_j), flattened row-major
/// over the output resolution. With x_i = x_j this is the variance map.
pub fn equivalent_kernel(arch: &ArchSpec, x_i: &Tensor3, x_j: &Tensor3) -> Result<Vec<f64>> {
    Ok(propagate(arch, x_i, x_j)?.c_ij)
}

/// GP prior over a batch: constant mean `prior_mean`, covariance blocks from
/// the equivalent kernel, white noise `noise_var` on the diagonal blocks.
/// `replicate` repeats each kernel entry that many times consecutively (for
/// tasks with multiple output channels per pixel, which share the kernel).
pub fn prior_structured_cov(arch: &ArchSpec, xs: &[Tensor3], replicate: usize) -> Result<GaussianBatch> {
    if xs.is_empty() {
        return Err(FvError::EmptyInput("prior over an empty batch".into()));
    }
    let b = xs.len();
    let p_spatial = arch.out_pixels()?;
    let p = p_spatial * replicate;
    let mut kernels: Vec<Option<Vec<f64>>> = vec![None; b * b];
    for i in 0..b {
        for j in i..b {
            let k = equivalent_kernel(arch, &xs[i], &xs[j])?;
            if k.len() != p_spatial {
                return Err(FvError::ShapeMismatch("kernel length mismatch".into()));
            }
            kernels[i * b + j] = Some(k);
        }
    }
    let cov = StructuredCov::from_symmetric_fn(b, p, |i, j| {
        let base = kernels[i * b + j].as_ref().expect("filled");
        let mut blk = Vec::with_capacity(p);
        for q in 0..p_spatial {
            let mut v = base[q];
            if i == j {
                v += arch.noise_var;
            }
            for _ in 0..replicate {
                blk.push(v);
            }
        }
        blk
    });
    GaussianBatch::new(vec![arch.prior_mean; b * p], cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::check;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::PI;

    fn conv3(wv: f64, bv: f64, stride: usize) -> Layer {
        Layer::Conv(ConvSpec {
            kh: 3,
            kw: 3,
            stride,
            pad: 1,
            weight_var: wv,
            bias_var: bv,
        })
    }

    fn random_image(c: usize, h: usize, w: usize, seed: u64) -> Tensor3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor3::from_fn(c, h, w, |_, _, _| rng.random::<f64>())
    }

    #[test]
    fn relu_moment_perfect_correlation() {
        assert_relative_eq!(relu_moment(1.0, 1.0, 1.0).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn relu_moment_independent() {
        assert_relative_eq!(
            relu_moment(1.0, 1.0, 0.0).unwrap(),
            1.0 / (2.0 * PI),
            epsilon = 1e-12
        );
    }

    #[test]
    fn relu_moment_degenerate_zero_variance() {
        assert_eq!(relu_moment(0.0, 4.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn relu_moment_rejects_bad_correlation() {
        assert!(relu_moment(1.0, 1.0, 1.1).is_err());
        // within the 1e-9 slack it clamps instead
        assert!(relu_moment(1.0, 1.0, 1.0 + 1e-12).is_ok());
    }

    #[test]
    fn relu_moment_matches_mc() {
        let (vi, vj, c) = (2.0f64, 1.0f64, 0.7f64);
        let n = 1_000_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = vi.sqrt();
        let b1 = c / vi.sqrt();
        let b2 = (vj - c * c / vi).sqrt();
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for _ in 0..n {
            let e1: f64 = StandardNormal.sample(&mut rng);
            let e2: f64 = StandardNormal.sample(&mut rng);
            let u = (a * e1).max(0.0);
            let w = (b1 * e1 + b2 * e2).max(0.0);
            acc += u * w;
            acc2 += (u * w) * (u * w);
        }
        let mean = acc / n as f64;
        let var = acc2 / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        let analytic = relu_moment(vi, vj, c).unwrap();
        assert!(
            (analytic - mean).abs() <= 3.0 * se,
            "analytic {analytic} mc {mean} se {se}"
        );
    }

    #[test]
    fn conv_identity_1x1() {
        let conv = ConvSpec {
            kh: 1,
            kw: 1,
            stride: 1,
            pad: 0,
            weight_var: 1.0,
            bias_var: 0.0,
        };
        let maps = KernelMaps {
            h: 2,
            w: 2,
            v_i: vec![1.0, 2.0, 3.0, 4.0],
            v_j: vec![4.0, 3.0, 2.0, 1.0],
            c_ij: vec![0.5, 0.6, 0.7, 0.8],
        };
        let out = conv_propagate(&conv, &maps).unwrap();
        assert_eq!(out.v_i, maps.v_i);
        assert_eq!(out.v_j, maps.v_j);
        assert_eq!(out.c_ij, maps.c_ij);
    }

    #[test]
    fn conv_constant_interior() {
        let conv = ConvSpec {
            kh: 3,
            kw: 3,
            stride: 1,
            pad: 1,
            weight_var: 0.5,
            bias_var: 0.25,
        };
        let a = 2.0;
        let maps = KernelMaps {
            h: 5,
            w: 5,
            v_i: vec![a; 25],
            v_j: vec![a; 25],
            c_ij: vec![a; 25],
        };
        let out = conv_propagate(&conv, &maps).unwrap();
        // interior pixel has full 3x3 overlap
        assert_relative_eq!(out.v_i[2 * 5 + 2], 0.25 + 0.5 * a, epsilon = 1e-12);
        // corner pixel sees only 4 of 9 taps, padding contributing zeros
        assert_relative_eq!(out.v_i[0], 0.25 + 0.5 * a * 4.0 / 9.0, epsilon = 1e-12);
    }

    #[test]
    fn upsample_identity_and_blocks() {
        let maps = KernelMaps {
            h: 2,
            w: 2,
            v_i: vec![1.0, 2.0, 3.0, 4.0],
            v_j: vec![1.0, 2.0, 3.0, 4.0],
            c_ij: vec![1.0, 2.0, 3.0, 4.0],
        };
        let same = upsample_propagate(2, 2, &maps);
        assert_eq!(same.c_ij, maps.c_ij);
        let up = upsample_propagate(4, 4, &maps);
        let expect = vec![
            1.0, 1.0, 2.0, 2.0, //
            1.0, 1.0, 2.0, 2.0, //
            3.0, 3.0, 4.0, 4.0, //
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(up.c_ij, expect);
    }

    #[test]
    fn kernel_self_equals_variance_map() {
        let arch = ArchSpec {
            layers: vec![conv3(0.2, 0.08, 1), Layer::Relu, conv3(0.2, 0.08, 1)],
            in_channels: 1,
            in_h: 4,
            in_w: 4,
            prior_mean: 0.5,
            noise_var: 0.1,
        };
        let x = random_image(1, 4, 4, 3);
        let maps = propagate(&arch, &x, &x).unwrap();
        assert_eq!(maps.c_ij, maps.v_i);
        assert_eq!(maps.v_i, maps.v_j);
    }

    #[test]
    fn zero_weight_variance_gives_constant_bias_map() {
        let arch = ArchSpec {
            layers: vec![conv3(0.0, 0.3, 1)],
            in_channels: 1,
            in_h: 4,
            in_w: 4,
            prior_mean: 0.5,
            noise_var: 0.0,
        };
        let a = random_image(1, 4, 4, 10);
        let b = random_image(1, 4, 4, 11);
        let k = equivalent_kernel(&arch, &a, &b).unwrap();
        for v in k {
            assert_relative_eq!(v, 0.3, epsilon = 1e-15);
        }
    }

    #[test]
    fn kernel_symmetry_exact() {
        let arch = ArchSpec {
            layers: vec![
                conv3(0.2, 0.08, 1),
                Layer::Relu,
                Layer::NearestUpsample { th: 6, tw: 6 },
                conv3(0.2, 0.08, 1),
            ],
            in_channels: 2,
            in_h: 4,
            in_w: 4,
            prior_mean: 0.5,
            noise_var: 0.1,
        };
        let a = random_image(2, 4, 4, 20);
        let b = random_image(2, 4, 4, 21);
        let kab = equivalent_kernel(&arch, &a, &b).unwrap();
        let kba = equivalent_kernel(&arch, &b, &a).unwrap();
        assert_eq!(kab, kba);
    }

    #[test]
    fn cauchy_schwarz_after_each_layer() {
        let arch = ArchSpec {
            layers: vec![
                conv3(0.4, 0.05, 1),
                Layer::Relu,
                conv3(0.3, 0.02, 2),
                Layer::Relu,
                Layer::NearestUpsample { th: 5, tw: 5 },
                conv3(0.2, 0.08, 1),
            ],
            in_channels: 1,
            in_h: 6,
            in_w: 6,
            prior_mean: 0.0,
            noise_var: 0.0,
        };
        let a = random_image(1, 6, 6, 30);
        let b = random_image(1, 6, 6, 31);
        let mut maps = super::initial_maps(&arch, &a, &b).unwrap();
        let check_cs = |m: &KernelMaps| {
            for p in 0..m.v_i.len() {
                assert!(m.v_i[p] >= 0.0 && m.v_j[p] >= 0.0);
                assert!(m.c_ij[p].abs() <= (m.v_i[p] * m.v_j[p]).sqrt() + 1e-12);
            }
        };
        check_cs(&maps);
        for l in &arch.layers {
            maps = match l {
                Layer::Conv(c) => conv_propagate(c, &maps).unwrap(),
                Layer::Relu => super::relu_propagate(&maps).unwrap(),
                Layer::NearestUpsample { th, tw } => upsample_propagate(*th, *tw, &maps),
            };
            check_cs(&maps);
        }
    }

    #[test]
    fn prior_single_image_diag() {
        let arch = ArchSpec {
            layers: vec![conv3(0.2, 0.08, 1), Layer::Relu, conv3(0.2, 0.08, 1)],
            in_channels: 1,
            in_h: 3,
            in_w: 3,
            prior_mean: 0.5,
            noise_var: 0.1,
        };
        let x = random_image(1, 3, 3, 40);
        let g = prior_structured_cov(&arch, std::slice::from_ref(&x), 1).unwrap();
        let var_map = equivalent_kernel(&arch, &x, &x).unwrap();
        for (q, v) in var_map.iter().enumerate() {
            assert_relative_eq!(g.cov.block(0, 0)[q], v + 0.1, epsilon = 1e-15);
        }
        assert!(g.mean.iter().all(|m| *m == 0.5));
    }

    #[test]
    fn prior_duplicate_image_without_noise_is_singular() {
        let arch = ArchSpec {
            layers: vec![conv3(0.2, 0.08, 1)],
            in_channels: 1,
            in_h: 3,
            in_w: 3,
            prior_mean: 0.5,
            noise_var: 0.0,
        };
        let x = random_image(1, 3, 3, 50);
        let g = prior_structured_cov(&arch, &[x.clone(), x], 1).unwrap();
        assert!(g.cov.schur_inverse().is_err());
    }

    #[test]
    fn prior_batch_is_psd_per_pixel() {
        let arch = ArchSpec {
            layers: vec![
                conv3(0.2, 0.08, 1),
                Layer::Relu,
                conv3(0.2, 0.08, 1),
                Layer::Relu,
                conv3(0.2, 0.08, 1),
            ],
            in_channels: 1,
            in_h: 4,
            in_w: 4,
            prior_mean: 0.5,
            noise_var: 0.1,
        };
        let xs: Vec<Tensor3> = (0..3).map(|i| random_image(1, 4, 4, 60 + i)).collect();
        let g = prior_structured_cov(&arch, &xs, 1).unwrap();
        for m in g.cov.per_pixel_view().mats {
            let eig = m.symmetric_eigen().eigenvalues;
            assert!(eig.iter().all(|v| *v >= -1e-9));
        }
    }

    #[test]
    fn prior_replication_shares_kernel_across_channels() {
        let arch = ArchSpec {
            layers: vec![conv3(0.2, 0.08, 1)],
            in_channels: 1,
            in_h: 2,
            in_w: 2,
            prior_mean: 1.0,
            noise_var: 0.1,
        };
        let xs: Vec<Tensor3> = (0..2).map(|i| random_image(1, 2, 2, 70 + i)).collect();
        let g = prior_structured_cov(&arch, &xs, 3).unwrap();
        assert_eq!(g.cov.pixels(), 12);
        let blk = g.cov.block(0, 1);
        for q in 0..4 {
            assert_eq!(blk[3 * q], blk[3 * q + 1]);
            assert_eq!(blk[3 * q], blk[3 * q + 2]);
        }
    }

    #[test]
    fn conv_propagate_matches_finite_channel_mc() {
        // single conv layer against a wide random network
        let arch = ArchSpec {
            layers: vec![conv3(0.2, 0.08, 1)],
            in_channels: 1,
            in_h: 4,
            in_w: 4,
            prior_mean: 0.0,
            noise_var: 0.0,
        };
        let a = random_image(1, 4, 4, 80);
        let b = random_image(1, 4, 4, 81);
        let analytic = equivalent_kernel(&arch, &a, &b).unwrap();
        let mc = check::mc_equivalent_kernel(&arch, &a, &b, 512, 1500, 123);
        for (p, (an, est)) in analytic.iter().zip(&mc).enumerate() {
            let rel = (an - est).abs() / an.abs().max(1e-9);
            assert!(rel < 0.05, "pixel {p}: analytic {an} mc {est} rel {rel}");
        }
    }

    #[test]
    fn upsample_conv_compose_matches_mc() {
        let arch = ArchSpec {
            layers: vec![
                conv3(0.2, 0.08, 1),
                Layer::Relu,
                Layer::NearestUpsample { th: 4, tw: 4 },
                conv3(0.2, 0.08, 1),
            ],
            in_channels: 1,
            in_h: 2,
            in_w: 2,
            prior_mean: 0.0,
            noise_var: 0.0,
        };
        let a = random_image(1, 2, 2, 90);
        let b = random_image(1, 2, 2, 91);
        let analytic = equivalent_kernel(&arch, &a, &b).unwrap();
        let mc = check::mc_equivalent_kernel(&arch, &a, &b, 512, 1500, 321);
        for (p, (an, est)) in analytic.iter().zip(&mc).enumerate() {
            let rel = (an - est).abs() / an.abs().max(1e-9);
            assert!(rel < 0.05, "pixel {p}: analytic {an} mc {est} rel {rel}");
        }
    }
}
