//! Minimal differentiable network engine.
//!
//! Networks are sequential stacks over a fixed layer vocabulary (dense, 3×3
//! conv, relu, softplus, nearest upsample) with parameters stored in one flat
//! vector. The forward pass is generic over [`Real`]: instantiated with `f64`
//! it is a plain (prediction) evaluation, instantiated with taped variables it
//! yields exact reverse-mode gradients for any scalar objective of the
//! outputs. No dropout anywhere; evaluation is deterministic given parameters
//! and input.

use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{FvError, Result};
use crate::tape::{Real, Tape, Var};
use crate::tensor::{nearest_src_index, Tensor3};

/// Layers available to the variational network.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    /// Fully connected over the flattened input; output shape (out, 1, 1).
    Dense { inp: usize, out: usize },
    /// 3×3 convolution, padding 1.
    Conv3 { cin: usize, cout: usize, stride: usize },
    Relu,
    Softplus,
    NearestUpsample { th: usize, tw: usize },
}

/// Shape/offset record for one parameter tensor in the flat vector.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// A sequential network with flat parameter storage.
#[derive(Debug)]
pub struct Net {
    in_shape: (usize, usize, usize),
    layers: Vec<LayerSpec>,
    params: Vec<f64>,
    manifest: Vec<TensorInfo>,
    forward_count: AtomicU64,
}

impl Clone for Net {
    fn clone(&self) -> Self {
        Net {
            in_shape: self.in_shape,
            layers: self.layers.clone(),
            params: self.params.clone(),
            manifest: self.manifest.clone(),
            forward_count: AtomicU64::new(self.forward_count.load(Ordering::Relaxed)),
        }
    }
}

fn shape_after(layers: &[LayerSpec], mut c: usize, mut h: usize, mut w: usize) -> Result<(usize, usize, usize)> {
    for l in layers {
        match l {
            LayerSpec::Dense { inp, out } => {
                if *inp != c * h * w {
                    return Err(FvError::ShapeMismatch(format!(
                        "dense expects {inp} inputs, stack carries {}",
                        c * h * w
                    )));
                }
                c = *out;
                h = 1;
                w = 1;
            }
            LayerSpec::Conv3 { cin, cout, stride } => {
                if *cin != c {
                    return Err(FvError::ShapeMismatch(format!(
                        "conv expects {cin} channels, stack carries {c}"
                    )));
                }
                if *stride == 0 {
                    return Err(FvError::ShapeMismatch("conv stride must be >= 1".into()));
                }
                let oh = (h + 2).checked_sub(3).map(|v| v / stride + 1).unwrap_or(0);
                let ow = (w + 2).checked_sub(3).map(|v| v / stride + 1).unwrap_or(0);
                if oh == 0 || ow == 0 {
                    return Err(FvError::ShapeMismatch("conv output collapsed to zero".into()));
                }
                c = *cout;
                h = oh;
                w = ow;
            }
            LayerSpec::Relu | LayerSpec::Softplus => {}
            LayerSpec::NearestUpsample { th, tw } => {
                if *th == 0 || *tw == 0 {
                    return Err(FvError::ShapeMismatch("upsample target must be >= 1".into()));
                }
                h = *th;
                w = *tw;
            }
        }
    }
    Ok((c, h, w))
}

impl Net {
    /// Builds a network with deterministic initialization: weights drawn from
    /// N(0, 2/fan_in) under the given seed, biases zero.
    pub fn new(in_shape: (usize, usize, usize), layers: Vec<LayerSpec>, seed: u64) -> Result<Net> {
        shape_after(&layers, in_shape.0, in_shape.1, in_shape.2)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut manifest = Vec::new();
        let push = |name: String, shape: Vec<usize>, std: f64, params: &mut Vec<f64>, manifest: &mut Vec<TensorInfo>, rng: &mut ChaCha8Rng| {
            let len: usize = shape.iter().product();
            let offset = params.len();
            for _ in 0..len {
                let z: f64 = if std > 0.0 { StandardNormal.sample(rng) } else { 0.0 };
                params.push(z * std);
            }
            manifest.push(TensorInfo { name, shape, offset, len });
        };
        for (i, l) in layers.iter().enumerate() {
            match l {
                LayerSpec::Dense { inp, out } => {
                    let std = (2.0 / *inp as f64).sqrt();
                    push(format!("layer{i}.weight"), vec![*out, *inp], std, &mut params, &mut manifest, &mut rng);
                    push(format!("layer{i}.bias"), vec![*out], 0.0, &mut params, &mut manifest, &mut rng);
                }
                LayerSpec::Conv3 { cin, cout, .. } => {
                    let std = (2.0 / (9 * cin) as f64).sqrt();
                    push(format!("layer{i}.weight"), vec![*cout, *cin, 3, 3], std, &mut params, &mut manifest, &mut rng);
                    push(format!("layer{i}.bias"), vec![*cout], 0.0, &mut params, &mut manifest, &mut rng);
                }
                _ => {}
            }
        }
        Ok(Net {
            in_shape,
            layers,
            params,
            manifest,
            forward_count: AtomicU64::new(0),
        })
    }

    pub fn in_shape(&self) -> (usize, usize, usize) {
        self.in_shape
    }

    pub fn out_shape(&self) -> (usize, usize, usize) {
        shape_after(&self.layers, self.in_shape.0, self.in_shape.1, self.in_shape.2)
            .expect("validated at construction")
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn manifest(&self) -> &[TensorInfo] {
        &self.manifest
    }

    /// Flat-range of a named tensor.
    pub fn tensor_range(&self, name: &str) -> Option<std::ops::Range<usize>> {
        self.manifest
            .iter()
            .find(|t| t.name == name)
            .map(|t| t.offset..t.offset + t.len)
    }

    /// Number of forward evaluations since construction.
    pub fn forward_count(&self) -> u64 {
        self.forward_count.load(Ordering::Relaxed)
    }

    /// Lifts all parameters onto a tape as leaves, in flat order.
    pub fn lift<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.params.iter().map(|p| tape.leaf(*p)).collect()
    }

    /// Forward pass over arbitrary parameter values of the same layout.
    /// Returns the flat (C, H, W) output, channel-major.
    pub fn forward_with<T: Real>(&self, params: &[T], x: &Tensor3) -> Result<Vec<T>> {
        if (x.c, x.h, x.w) != self.in_shape {
            return Err(FvError::ShapeMismatch(format!(
                "input {}x{}x{}, net expects {:?}",
                x.c, x.h, x.w, self.in_shape
            )));
        }
        if params.len() != self.params.len() {
            return Err(FvError::ShapeMismatch("parameter vector length mismatch".into()));
        }
        self.forward_count.fetch_add(1, Ordering::Relaxed);
        let (mut c, mut h, mut w) = self.in_shape;
        // first layer consumes the raw image as f64 constants
        let mut act: Option<Vec<T>> = None;
        let mut cursor = 0usize; // walks the manifest in lock-step with layers
        let take = |n_tensors: usize, cursor: &mut usize| -> (usize, usize) {
            let off = self.manifest[*cursor].offset;
            let last = &self.manifest[*cursor + n_tensors - 1];
            *cursor += n_tensors;
            (off, last.offset + last.len)
        };
        for l in &self.layers {
            match l {
                LayerSpec::Dense { inp, out } => {
                    let (w_off, end) = take(2, &mut cursor);
                    let b_off = end - *out;
                    let mut next: Vec<T> = Vec::with_capacity(*out);
                    for o in 0..*out {
                        let mut acc = params[b_off + o];
                        match &act {
                            None => {
                                for i in 0..*inp {
                                    acc = acc + params[w_off + o * inp + i].mul_f(x.data[i]);
                                }
                            }
                            Some(a) => {
                                for i in 0..*inp {
                                    acc = acc + params[w_off + o * inp + i] * a[i];
                                }
                            }
                        }
                        next.push(acc);
                    }
                    act = Some(next);
                    c = *out;
                    h = 1;
                    w = 1;
                }
                LayerSpec::Conv3 { cin, cout, stride } => {
                    let (w_off, end) = take(2, &mut cursor);
                    let b_off = end - *cout;
                    let oh = (h + 2 - 3) / stride + 1;
                    let ow = (w + 2 - 3) / stride + 1;
                    let mut next: Vec<T> = Vec::with_capacity(cout * oh * ow);
                    for co in 0..*cout {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut acc = params[b_off + co];
                                for ky in 0..3usize {
                                    let sy = (oy * stride + ky) as isize - 1;
                                    if sy < 0 || sy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..3usize {
                                        let sx = (ox * stride + kx) as isize - 1;
                                        if sx < 0 || sx >= w as isize {
                                            continue;
                                        }
                                        let spatial = sy as usize * w + sx as usize;
                                        for ci in 0..*cin {
                                            let wv = params[w_off + ((co * cin + ci) * 3 + ky) * 3 + kx];
                                            match &act {
                                                None => {
                                                    let xv = x.data[ci * h * w + spatial];
                                                    if xv != 0.0 {
                                                        acc = acc + wv.mul_f(xv);
                                                    }
                                                }
                                                Some(a) => {
                                                    acc = acc + wv * a[ci * h * w + spatial];
                                                }
                                            }
                                        }
                                    }
                                }
                                next.push(acc);
                            }
                        }
                    }
                    act = Some(next);
                    c = *cout;
                    h = oh;
                    w = ow;
                }
                LayerSpec::Relu => {
                    if let Some(a) = &mut act {
                        for v in a.iter_mut() {
                            *v = v.relu();
                        }
                    } else {
                        return Err(FvError::ShapeMismatch(
                            "relu cannot be the first layer".into(),
                        ));
                    }
                }
                LayerSpec::Softplus => {
                    if let Some(a) = &mut act {
                        for v in a.iter_mut() {
                            *v = v.softplus();
                        }
                    } else {
                        return Err(FvError::ShapeMismatch(
                            "softplus cannot be the first layer".into(),
                        ));
                    }
                }
                LayerSpec::NearestUpsample { th, tw } => {
                    let a = match &act {
                        Some(a) => a,
                        None => {
                            return Err(FvError::ShapeMismatch(
                                "upsample cannot be the first layer".into(),
                            ))
                        }
                    };
                    let mut next: Vec<T> = Vec::with_capacity(c * th * tw);
                    for ci in 0..c {
                        for y in 0..*th {
                            let sy = nearest_src_index(y, h, *th);
                            for xx in 0..*tw {
                                let sx = nearest_src_index(xx, w, *tw);
                                next.push(a[ci * h * w + sy * w + sx]);
                            }
                        }
                    }
                    act = Some(next);
                    h = *th;
                    w = *tw;
                }
            }
        }
        match act {
            Some(a) => Ok(a),
            // identity network: outputs are the input constants, which only
            // makes sense on the f64 path; tapes have nothing to record
            None => x
                .data
                .iter()
                .map(|v| T::from_const(*v))
                .collect::<Option<Vec<T>>>()
                .ok_or_else(|| {
                    FvError::ShapeMismatch(
                        "identity network has no parameters to differentiate".into(),
                    )
                }),
        }
    }

    /// Plain forward evaluation with the stored parameters.
    pub fn forward(&self, x: &Tensor3) -> Result<Vec<f64>> {
        self.forward_with(&self.params, x)
    }

    /// Exact reverse-mode parameter gradients of `objective` over the outputs
    /// at input `x`. Returns (objective value, flat gradient vector).
    pub fn grad<F>(&self, x: &Tensor3, objective: F) -> Result<(f64, Vec<f64>)>
    where
        F: for<'t> Fn(&[Var<'t>]) -> Var<'t>,
    {
        let tape = Tape::new();
        let params = self.lift(&tape);
        let out = self.forward_with(&params, x)?;
        let obj = objective(&out);
        if !obj.val().is_finite() {
            return Err(FvError::NonFinite("objective is not finite".into()));
        }
        let grads = tape.backward(obj);
        let g: Vec<f64> = params.iter().map(|p| grads.wrt(*p)).collect();
        if g.iter().any(|v| !v.is_finite()) {
            return Err(FvError::NonFinite("gradient is not finite".into()));
        }
        Ok((obj.val(), g))
    }
}

/// SGD with momentum and coupled weight decay:
/// v ← momentum·v + g + wd·p;  p ← p − lr·v.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64, n_params: usize) -> Sgd {
        Sgd {
            lr,
            momentum,
            weight_decay,
            velocity: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.velocity.len() || grads.len() != params.len() {
            return Err(FvError::ShapeMismatch("optimizer state and gradients must match".into()));
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            *v = self.momentum * *v + *g + self.weight_decay * *p;
            *p -= self.lr * *v;
        }
        Ok(())
    }
}

const CKPT_MAGIC: &str = "funcvi-net v1";

impl Net {
    /// Writes a versioned text checkpoint: layer stack, shape manifest and
    /// parameters as hexadecimal f64 bits (round-trip exact).
    pub fn save_checkpoint<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "{CKPT_MAGIC}")?;
        writeln!(w, "in_shape {} {} {}", self.in_shape.0, self.in_shape.1, self.in_shape.2)?;
        writeln!(w, "layers {}", self.layers.len())?;
        for l in &self.layers {
            match l {
                LayerSpec::Dense { inp, out } => writeln!(w, "dense {inp} {out}")?,
                LayerSpec::Conv3 { cin, cout, stride } => writeln!(w, "conv3 {cin} {cout} {stride}")?,
                LayerSpec::Relu => writeln!(w, "relu")?,
                LayerSpec::Softplus => writeln!(w, "softplus")?,
                LayerSpec::NearestUpsample { th, tw } => writeln!(w, "upsample {th} {tw}")?,
            }
        }
        writeln!(w, "tensors {}", self.manifest.len())?;
        for t in &self.manifest {
            let dims: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
            writeln!(w, "tensor {} {} {} {}", t.name, t.shape.len(), dims.join(" "), t.offset)?;
        }
        writeln!(w, "data {}", self.params.len())?;
        for chunk in self.params.chunks(8) {
            let line: Vec<String> = chunk.iter().map(|v| format!("{:016x}", v.to_bits())).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn load_checkpoint<R: BufRead>(r: &mut R) -> Result<Net> {
        let mut lines = r.lines();
        let mut next = |what: &str| -> Result<String> {
            lines
                .next()
                .ok_or_else(|| FvError::Parse(format!("checkpoint truncated at {what}")))?
                .map_err(FvError::Io)
        };
        if next("magic")? != CKPT_MAGIC {
            return Err(FvError::Parse("not a funcvi-net v1 checkpoint".into()));
        }
        let shape_line = next("in_shape")?;
        let parts: Vec<&str> = shape_line.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "in_shape" {
            return Err(FvError::Parse("bad in_shape line".into()));
        }
        let dim = |s: &str| -> Result<usize> {
            s.parse().map_err(|_| FvError::Parse(format!("bad integer {s}")))
        };
        let in_shape = (dim(parts[1])?, dim(parts[2])?, dim(parts[3])?);
        let nl_line = next("layers")?;
        let n_layers: usize = nl_line
            .strip_prefix("layers ")
            .ok_or_else(|| FvError::Parse("bad layers line".into()))?
            .parse()
            .map_err(|_| FvError::Parse("bad layer count".into()))?;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let line = next("layer")?;
            let p: Vec<&str> = line.split_whitespace().collect();
            layers.push(match p.as_slice() {
                ["dense", a, b] => LayerSpec::Dense { inp: dim(a)?, out: dim(b)? },
                ["conv3", a, b, s] => LayerSpec::Conv3 { cin: dim(a)?, cout: dim(b)?, stride: dim(s)? },
                ["relu"] => LayerSpec::Relu,
                ["softplus"] => LayerSpec::Softplus,
                ["upsample", a, b] => LayerSpec::NearestUpsample { th: dim(a)?, tw: dim(b)? },
                _ => return Err(FvError::Parse(format!("unknown layer line: {line}"))),
            });
        }
        let nt_line = next("tensors")?;
        let n_tensors: usize = nt_line
            .strip_prefix("tensors ")
            .ok_or_else(|| FvError::Parse("bad tensors line".into()))?
            .parse()
            .map_err(|_| FvError::Parse("bad tensor count".into()))?;
        for _ in 0..n_tensors {
            let _ = next("tensor")?; // manifest is reconstructed from layers
        }
        let nd_line = next("data")?;
        let n_data: usize = nd_line
            .strip_prefix("data ")
            .ok_or_else(|| FvError::Parse("bad data line".into()))?
            .parse()
            .map_err(|_| FvError::Parse("bad data count".into()))?;
        let mut params = Vec::with_capacity(n_data);
        while params.len() < n_data {
            let line = next("data values")?;
            for tok in line.split_whitespace() {
                let bits = u64::from_str_radix(tok, 16)
                    .map_err(|_| FvError::Parse(format!("bad hex value {tok}")))?;
                params.push(f64::from_bits(bits));
            }
        }
        if params.len() != n_data {
            return Err(FvError::Parse("checkpoint data length mismatch".into()));
        }
        let mut net = Net::new(in_shape, layers, 0)?;
        if net.params.len() != params.len() {
            return Err(FvError::Parse(format!(
                "checkpoint has {} parameters, stack wants {}",
                params.len(),
                net.params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tiny_conv_net(seed: u64) -> Net {
        Net::new(
            (1, 4, 4),
            vec![
                LayerSpec::Conv3 { cin: 1, cout: 3, stride: 1 },
                LayerSpec::Relu,
                LayerSpec::Conv3 { cin: 3, cout: 2, stride: 2 },
                LayerSpec::Softplus,
                LayerSpec::NearestUpsample { th: 4, tw: 4 },
            ],
            seed,
        )
        .unwrap()
    }

    #[test]
    fn identity_network_returns_input() {
        let net = Net::new((1, 2, 2), vec![], 0).unwrap();
        let x = Tensor3::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(net.forward(&x).unwrap(), x.data);
    }

    #[test]
    fn zero_weight_dense_outputs_bias() {
        let mut net = Net::new(
            (1, 1, 3),
            vec![LayerSpec::Dense { inp: 3, out: 2 }],
            1,
        )
        .unwrap();
        let wr = net.tensor_range("layer0.weight").unwrap();
        for v in &mut net.params_mut()[wr] {
            *v = 0.0;
        }
        let br = net.tensor_range("layer0.bias").unwrap();
        net.params_mut()[br].copy_from_slice(&[0.7, -0.2]);
        let x = Tensor3::from_vec(1, 1, 3, vec![5.0, 6.0, 7.0]).unwrap();
        assert_eq!(net.forward(&x).unwrap(), vec![0.7, -0.2]);
    }

    #[test]
    fn outputs_finite_for_random_nets() {
        for seed in 0..5u64 {
            let net = tiny_conv_net(seed);
            let x = Tensor3::from_fn(1, 4, 4, |_, y, xx| ((y * 4 + xx) as f64 * 0.37).sin());
            let out = net.forward(&x).unwrap();
            assert_eq!(out.len(), 2 * 4 * 4);
            assert!(out.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = tiny_conv_net(42);
        let b = tiny_conv_net(42);
        assert_eq!(a.params(), b.params());
        let c = tiny_conv_net(43);
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn constant_objective_gives_zero_gradient() {
        let net = tiny_conv_net(3);
        let x = Tensor3::from_fn(1, 4, 4, |_, _, _| 0.5);
        let (_val, g) = net
            .grad(&x, |out| out[0].mul_f(0.0).add_f(3.0))
            .unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_model_analytic_gradient() {
        // one dense weight, squared error: d/dw (wx - y)^2 = 2 (wx - y) x
        let mut net = Net::new((1, 1, 1), vec![LayerSpec::Dense { inp: 1, out: 1 }], 0).unwrap();
        net.params_mut()[0] = 0.8; // w
        net.params_mut()[1] = 0.0; // b
        let (xv, yv) = (1.7, 0.4);
        let x = Tensor3::from_vec(1, 1, 1, vec![xv]).unwrap();
        let (val, g) = net
            .grad(&x, |out| out[0].sub_f(yv).square())
            .unwrap();
        assert_relative_eq!(val, (0.8 * xv - yv) * (0.8 * xv - yv), epsilon = 1e-14);
        assert_relative_eq!(g[0], 2.0 * (0.8 * xv - yv) * xv, epsilon = 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let net = tiny_conv_net(9);
        let x = Tensor3::from_fn(1, 4, 4, |_, y, xx| ((y + 2 * xx) as f64 * 0.21).cos());
        let objective = |out: &[f64]| -> f64 {
            out.iter()
                .enumerate()
                .map(|(i, v)| (v + (i as f64) * 0.01).powi(2) + softplus(*v))
                .sum()
        };
        fn softplus(x: f64) -> f64 {
            crate::tape::softplus_f64(x)
        }
        let (_val, g) = net
            .grad(&x, |out| {
                let mut acc: Option<Var<'_>> = None;
                for (i, v) in out.iter().enumerate() {
                    let t = v.add_f(i as f64 * 0.01).square() + v.softplus();
                    acc = Some(match acc {
                        None => t,
                        Some(a) => a + t,
                    });
                }
                acc.unwrap()
            })
            .unwrap();
        let mut worst = 0.0f64;
        let mut probe = net.clone();
        let h = 1e-5;
        for k in (0..net.n_params()).step_by(3) {
            let orig = probe.params()[k];
            probe.params_mut()[k] = orig + h;
            let up = objective(&probe.forward(&x).unwrap());
            probe.params_mut()[k] = orig - h;
            let dn = objective(&probe.forward(&x).unwrap());
            probe.params_mut()[k] = orig;
            let fd = (up - dn) / (2.0 * h);
            let rel = (g[k] - fd).abs() / g[k].abs().max(fd.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "worst FD mismatch {worst}");
    }

    #[test]
    fn sgd_zero_lr_keeps_params() {
        let mut p = vec![1.0, -2.0];
        let mut opt = Sgd::new(0.0, 0.9, 1e-4, 2);
        opt.step(&mut p, &[3.0, 4.0]).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn sgd_single_plain_step() {
        let mut p = vec![1.0];
        let mut opt = Sgd::new(0.1, 0.0, 0.0, 1);
        opt.step(&mut p, &[2.0]).unwrap();
        assert_relative_eq!(p[0], 1.0 - 0.1 * 2.0, epsilon = 1e-15);
    }

    #[test]
    fn sgd_momentum_two_steps() {
        // constant gradient g: after two steps p = p0 - lr*g*(1 + 1.9)
        let mut p = vec![0.5];
        let mut opt = Sgd::new(0.1, 0.9, 0.0, 1);
        opt.step(&mut p, &[1.0]).unwrap();
        opt.step(&mut p, &[1.0]).unwrap();
        assert_relative_eq!(p[0], 0.5 - 0.1 * (1.0 + 1.9), epsilon = 1e-15);
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let net = tiny_conv_net(77);
        let mut buf = Vec::new();
        net.save_checkpoint(&mut buf).unwrap();
        let loaded = Net::load_checkpoint(&mut std::io::BufReader::new(buf.as_slice())).unwrap();
        assert_eq!(net.layers(), loaded.layers());
        assert_eq!(net.in_shape(), loaded.in_shape());
        let same = net
            .params()
            .iter()
            .zip(loaded.params())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same);
    }

    #[test]
    fn forward_counter_increments() {
        let net = tiny_conv_net(5);
        let x = Tensor3::from_fn(1, 4, 4, |_, _, _| 0.1);
        assert_eq!(net.forward_count(), 0);
        let _ = net.forward(&x).unwrap();
        let _ = net.forward(&x).unwrap();
        assert_eq!(net.forward_count(), 2);
    }
}
