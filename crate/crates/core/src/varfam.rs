//! The variational family: a multi-output GP whose mean and covariance are
//! produced by a network.
//!
//! For each input the network emits an (L+3)·C channel map that splits into a
//! mean head h, L feature heads g_k, a diagonal head D and a scale head σ.
//! The covariance between two batch members is the rank-L Gram term
//! (1/L) Σ_k g_k(x_i) ⊙ g_k(x_j), plus D(x_i) on the batch diagonal, so every
//! per-pixel matrix is Gram + diagonal and PSD by construction. D and σ pass
//! through softplus with small floors; the D floor doubles as the training
//! jitter on the covariance diagonal.

use crate::block_cov::{GaussianBatch, StructuredCov};
use crate::error::{FvError, Result};
use crate::gradnet::{LayerSpec, Net};
use crate::tape::Real;
use crate::tensor::Tensor3;

/// Output layout of the variational network.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadLayout {
    pub res_h: usize,
    pub res_w: usize,
    /// Output channels per spatial position: 1 for scalar regression,
    /// K for K-class segmentation.
    pub channels: usize,
    /// Covariance rank L.
    pub rank: usize,
}

impl HeadLayout {
    /// Total output dimension P = H·W·C, pixel-major (all channels of a
    /// spatial position are adjacent).
    pub fn outputs(&self) -> usize {
        self.res_h * self.res_w * self.channels
    }

    /// Channels the network must produce: (L + 3)·C.
    pub fn net_out_channels(&self) -> usize {
        (self.rank + 3) * self.channels
    }

    pub fn spatial(&self) -> usize {
        self.res_h * self.res_w
    }
}

/// Heads evaluated at one input.
#[derive(Clone, Debug)]
pub struct VarHeads<T> {
    /// Mean h(x), length P.
    pub mean: Vec<T>,
    /// Features g_1..g_L, each length P.
    pub feats: Vec<Vec<T>>,
    /// Diagonal D(x) > 0 after link, length P.
    pub diag: Vec<T>,
    /// Aleatoric scale σ(x) (regression) or per-class σ²_k(x)
    /// (classification), length P, > 0 after link.
    pub scale: Vec<T>,
}

/// Variational model: the network plus its head layout and link floors.
#[derive(Clone, Debug)]
pub struct VarModel {
    pub net: Net,
    pub layout: HeadLayout,
    /// Added to softplus(D); doubles as the training jitter on the q diagonal.
    pub d_floor: f64,
    /// Added to softplus(σ) to keep scales bounded away from zero.
    pub scale_floor: f64,
}

impl VarModel {
    pub fn new(net: Net, layout: HeadLayout, d_floor: f64, scale_floor: f64) -> Result<VarModel> {
        let (c, h, w) = net.out_shape();
        if (c, h, w) != (layout.net_out_channels(), layout.res_h, layout.res_w) {
            return Err(FvError::ShapeMismatch(format!(
                "net emits {c}x{h}x{w}, layout wants {}x{}x{}",
                layout.net_out_channels(),
                layout.res_h,
                layout.res_w
            )));
        }
        Ok(VarModel {
            net,
            layout,
            d_floor,
            scale_floor,
        })
    }

    /// Splits a raw network output into linked heads. Channel groups, in
    /// order: mean (C), features (L·C), diagonal (C), scale (C).
    pub fn split_heads<T: Real>(&self, raw: &[T]) -> VarHeads<T> {
        let lay = &self.layout;
        let hw = lay.spatial();
        let c = lay.channels;
        let p = lay.outputs();
        let chan = |group_ch: usize, px: usize, k: usize| raw[(group_ch + k) * hw + px];
        let mut mean = Vec::with_capacity(p);
        let mut diag = Vec::with_capacity(p);
        let mut scale = Vec::with_capacity(p);
        let mut feats = vec![Vec::with_capacity(p); lay.rank];
        for px in 0..hw {
            for k in 0..c {
                mean.push(chan(0, px, k));
                for (l, fl) in feats.iter_mut().enumerate() {
                    fl.push(chan(c + l * c, px, k));
                }
                diag.push(chan(c + lay.rank * c, px, k).softplus().add_f(self.d_floor));
                scale.push(chan(c + lay.rank * c + c, px, k).softplus().add_f(self.scale_floor));
            }
        }
        VarHeads {
            mean,
            feats,
            diag,
            scale,
        }
    }

    /// Heads at one input under arbitrary parameter values.
    pub fn heads_with<T: Real>(&self, params: &[T], x: &Tensor3) -> Result<VarHeads<T>> {
        let raw = self.net.forward_with(params, x)?;
        Ok(self.split_heads(&raw))
    }

    /// Variational distribution over a batch plus the per-input scale heads.
    pub fn q_at_with<T: Real>(
        &self,
        params: &[T],
        xs: &[Tensor3],
    ) -> Result<(GaussianBatch<T>, Vec<VarHeads<T>>)> {
        if xs.is_empty() {
            return Err(FvError::EmptyInput("variational batch is empty".into()));
        }
        let heads: Vec<VarHeads<T>> = xs
            .iter()
            .map(|x| self.heads_with(params, x))
            .collect::<Result<_>>()?;
        let cov = q_cov(&heads, self.layout.rank, self.layout.outputs());
        let mean: Vec<T> = heads.iter().flat_map(|h| h.mean.iter().copied()).collect();
        Ok((GaussianBatch::new(mean, cov)?, heads))
    }

    /// Plain-f64 evaluation with the stored parameters.
    pub fn q_at(&self, xs: &[Tensor3]) -> Result<(GaussianBatch<f64>, Vec<VarHeads<f64>>)> {
        self.q_at_with(self.net.params(), xs)
    }

    /// Initializes the head biases of the final parametric layer so softplus
    /// lands at the requested initial D and σ.
    pub fn init_head_biases(&mut self, d0: f64, sigma0: f64) -> Result<()> {
        let inv_softplus = |y: f64| -> f64 { (y.exp() - 1.0).max(1e-12).ln() };
        let lay = self.layout.clone();
        let c = lay.channels;
        let last_param_layer = self
            .net
            .layers()
            .iter()
            .enumerate()
            .rev()
            .find_map(|(i, l)| match l {
                LayerSpec::Dense { out, .. } if *out == lay.net_out_channels() => Some(i),
                LayerSpec::Conv3 { cout, .. } if *cout == lay.net_out_channels() => Some(i),
                _ => None,
            })
            .ok_or_else(|| {
                FvError::ShapeMismatch("no head layer producing (L+3)C channels".into())
            })?;
        let range = self
            .net
            .tensor_range(&format!("layer{last_param_layer}.bias"))
            .ok_or_else(|| FvError::ShapeMismatch("head layer has no bias tensor".into()))?;
        let d_raw = inv_softplus((d0 - self.d_floor).max(1e-6));
        let s_raw = inv_softplus((sigma0 - self.scale_floor).max(1e-6));
        let bias = &mut self.net.params_mut()[range];
        for k in 0..c {
            bias[c + lay.rank * c + k] = d_raw;
            bias[c + lay.rank * c + c + k] = s_raw;
        }
        Ok(())
    }
}

/// Rank-L + diagonal covariance over a batch of evaluated heads:
/// blocks[i][j][p] = (1/L) Σ_k g_k(x_i)[p]·g_k(x_j)[p] + D(x_i)[p]·[i==j].
/// δ keys on the batch index, not on input values, so duplicated inputs get
/// independent noise.
pub fn q_cov<T: Real>(heads: &[VarHeads<T>], rank: usize, p: usize) -> StructuredCov<T> {
    let inv_l = 1.0 / rank as f64;
    StructuredCov::from_symmetric_fn(heads.len(), p, |i, j| {
        let (hi, hj) = (&heads[i], &heads[j]);
        (0..p)
            .map(|q| {
                let mut acc: Option<T> = None;
                for l in 0..rank {
                    let t = hi.feats[l][q] * hj.feats[l][q];
                    acc = Some(match acc {
                        None => t,
                        Some(a) => a + t,
                    });
                }
                let gram = acc.expect("L >= 1").mul_f(inv_l);
                if i == j {
                    gram + hi.diag[q]
                } else {
                    gram
                }
            })
            .collect()
    })
}

/// Reparametrized joint samples: per pixel p the slice across the batch is
/// mean + L_p ε with L_p the per-pixel Cholesky factor of the covariance.
/// `eps` is laid out sample-major, then pixel, then batch index (S·P·B
/// values); gradients flow into mean, features and diagonal heads.
pub fn rsample_q<T: Real>(
    q: &GaussianBatch<T>,
    eps: &[f64],
    n_samples: usize,
) -> Result<Vec<Vec<T>>> {
    let b = q.cov.batch();
    let p = q.cov.pixels();
    if eps.len() != n_samples * p * b {
        return Err(FvError::ShapeMismatch(format!(
            "eps holds {} values, need S*P*B = {}",
            eps.len(),
            n_samples * p * b
        )));
    }
    let factors = q.cov.chol_factors()?;
    let mut out = Vec::with_capacity(n_samples);
    for s in 0..n_samples {
        let mut f: Vec<T> = q.mean.clone();
        for q_ix in 0..p {
            let l = &factors[q_ix];
            let e_base = s * p * b + q_ix * b;
            for i in 0..b {
                let mut acc: Option<T> = None;
                for j in 0..=i {
                    let t = l[i * b + j].mul_f(eps[e_base + j]);
                    acc = Some(match acc {
                        None => t,
                        Some(a) => a + t,
                    });
                }
                f[i * p + q_ix] = f[i * p + q_ix] + acc.expect("j <= i");
            }
        }
        out.push(f);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn manual_heads(mean: Vec<f64>, feats: Vec<Vec<f64>>, diag: Vec<f64>) -> VarHeads<f64> {
        let p = mean.len();
        VarHeads {
            mean,
            feats,
            diag,
            scale: vec![1.0; p],
        }
    }

    fn tiny_model(seed: u64) -> VarModel {
        let layout = HeadLayout {
            res_h: 1,
            res_w: 2,
            channels: 1,
            rank: 3,
        };
        let net = Net::new(
            (1, 1, 2),
            vec![
                LayerSpec::Conv3 {
                    cin: 1,
                    cout: 4,
                    stride: 1,
                },
                LayerSpec::Relu,
                LayerSpec::Conv3 {
                    cin: 4,
                    cout: layout.net_out_channels(),
                    stride: 1,
                },
            ],
            seed,
        )
        .unwrap();
        VarModel::new(net, layout, 1e-3, 1e-4).unwrap()
    }

    #[test]
    fn q_cov_zero_features_is_diagonal() {
        let heads = vec![
            manual_heads(vec![0.0; 2], vec![vec![0.0; 2]; 2], vec![0.5, 0.7]),
            manual_heads(vec![0.0; 2], vec![vec![0.0; 2]; 2], vec![0.9, 1.1]),
        ];
        let cov = q_cov(&heads, 2, 2);
        assert_eq!(cov.block(0, 0), &[0.5, 0.7]);
        assert_eq!(cov.block(1, 1), &[0.9, 1.1]);
        assert_eq!(cov.block(0, 1), &[0.0, 0.0]);
    }

    #[test]
    fn q_cov_rank_one_all_ones_is_singular() {
        let heads = vec![
            manual_heads(vec![0.0], vec![vec![1.0]], vec![0.0]),
            manual_heads(vec![0.0], vec![vec![1.0]], vec![0.0]),
        ];
        let cov = q_cov(&heads, 1, 1);
        assert_eq!(cov.block(0, 0), &[1.0]);
        assert_eq!(cov.block(0, 1), &[1.0]);
        assert!(cov.schur_inverse().is_err());
    }

    #[test]
    fn q_cov_eigenvalues_dominate_min_diag() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let p = 3;
        let l = 4;
        let heads: Vec<VarHeads<f64>> = (0..3)
            .map(|_| {
                manual_heads(
                    (0..p).map(|_| rng.random::<f64>()).collect(),
                    (0..l)
                        .map(|_| (0..p).map(|_| StandardNormal.sample(&mut rng)).collect())
                        .collect(),
                    (0..p).map(|_| 0.05 + rng.random::<f64>()).collect(),
                )
            })
            .collect();
        let min_d = heads
            .iter()
            .flat_map(|h| h.diag.iter())
            .cloned()
            .fold(f64::INFINITY, f64::min);
        let cov = q_cov(&heads, l, p);
        for m in cov.per_pixel_view().mats {
            let eig = m.symmetric_eigen().eigenvalues;
            assert!(eig.iter().all(|v| *v >= min_d - 1e-9));
        }
    }

    #[test]
    fn q_at_single_input_diag_formula() {
        let model = tiny_model(5);
        let x = Tensor3::from_vec(1, 1, 2, vec![0.3, 0.9]).unwrap();
        let (g, heads) = model.q_at(std::slice::from_ref(&x)).unwrap();
        let h = &heads[0];
        for q in 0..2 {
            let gram: f64 = h.feats.iter().map(|f| f[q] * f[q]).sum::<f64>() / 3.0;
            assert_relative_eq!(g.cov.block(0, 0)[q], gram + h.diag[q], epsilon = 1e-12);
        }
        assert!(g.mean.iter().all(|v| v.is_finite()));
        assert!(g.cov.schur_inverse().is_ok());
    }

    #[test]
    fn q_at_batch_permutation_equivariance() {
        let model = tiny_model(6);
        let a = Tensor3::from_vec(1, 1, 2, vec![0.1, 0.2]).unwrap();
        let b = Tensor3::from_vec(1, 1, 2, vec![0.8, 0.4]).unwrap();
        let (g_ab, _) = model.q_at(&[a.clone(), b.clone()]).unwrap();
        let (g_ba, _) = model.q_at(&[b, a]).unwrap();
        assert_eq!(g_ab.cov.block(0, 0), g_ba.cov.block(1, 1));
        assert_eq!(g_ab.cov.block(0, 1), g_ba.cov.block(1, 0));
        assert_eq!(&g_ab.mean[0..2], &g_ba.mean[2..4]);
    }

    #[test]
    fn heads_are_positive_after_link() {
        let model = tiny_model(7);
        let x = Tensor3::from_vec(1, 1, 2, vec![-5.0, 5.0]).unwrap();
        let (_, heads) = model.q_at(std::slice::from_ref(&x)).unwrap();
        assert!(heads[0].diag.iter().all(|v| *v >= 1e-3));
        assert!(heads[0].scale.iter().all(|v| *v >= 1e-4));
    }

    #[test]
    fn init_head_biases_hits_targets() {
        let mut model = tiny_model(8);
        model.init_head_biases(0.1, 0.5).unwrap();
        // zero input rides only on biases through the zero-init final conv
        let x = Tensor3::from_vec(1, 1, 2, vec![0.0, 0.0]).unwrap();
        let (_, heads) = model.q_at(std::slice::from_ref(&x)).unwrap();
        // relu trunk of a zero input is zero, so heads sit at their bias link
        for v in &heads[0].diag {
            assert_relative_eq!(*v, 0.1, epsilon = 1e-6);
        }
        for v in &heads[0].scale {
            assert_relative_eq!(*v, 0.5, epsilon = 1e-6);
        }
    }

    #[test]
    fn rsample_zero_eps_returns_mean() {
        let model = tiny_model(9);
        let x = Tensor3::from_vec(1, 1, 2, vec![0.2, 0.6]).unwrap();
        let (g, _) = model.q_at(std::slice::from_ref(&x)).unwrap();
        let eps = vec![0.0; 2];
        let s = rsample_q(&g, &eps, 1).unwrap();
        assert_eq!(s[0], g.mean);
    }

    #[test]
    fn rsample_empirical_variance_matches_cov_diag() {
        let model = tiny_model(10);
        let xs = [
            Tensor3::from_vec(1, 1, 2, vec![0.2, 0.6]).unwrap(),
            Tensor3::from_vec(1, 1, 2, vec![0.9, 0.1]).unwrap(),
        ];
        let (g, _) = model.q_at(&xs).unwrap();
        let n = 100_000usize;
        let (b, p) = (2usize, 2usize);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let eps: Vec<f64> = (0..n * p * b).map(|_| StandardNormal.sample(&mut rng)).collect();
        let samples = rsample_q(&g, &eps, n).unwrap();
        for i in 0..b {
            for q in 0..p {
                let idx = i * p + q;
                let mean: f64 = samples.iter().map(|s| s[idx]).sum::<f64>() / n as f64;
                let var: f64 = samples.iter().map(|s| (s[idx] - mean).powi(2)).sum::<f64>()
                    / (n - 1) as f64;
                let expect = g.cov.block(i, i)[q];
                let se = 3.0 * (2.0 / n as f64).sqrt() * expect;
                assert!(
                    (var - expect).abs() < se,
                    "var {var} expect {expect} (se {se})"
                );
            }
        }
    }

    #[test]
    fn rsample_gradient_wrt_diag_matches_fd() {
        // E[f²] of a zero-mean rank-0 Gaussian is D; check d/dD via the tape
        // against finite differences through the same generic pipeline.
        let eps: Vec<f64> = {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            (0..64).map(|_| StandardNormal.sample(&mut rng)).collect()
        };
        let eval = |d: f64| -> f64 {
            let heads = vec![manual_heads(vec![0.0], vec![vec![0.3]], vec![d])];
            let cov = q_cov(&heads, 1, 1);
            let g = GaussianBatch::new(vec![0.0], cov).unwrap();
            let samples = rsample_q(&g, &eps, 64).unwrap();
            samples.iter().map(|s| s[0] * s[0]).sum::<f64>() / 64.0
        };
        let d0 = 0.4;
        let tape = Tape::new();
        let d_var = tape.leaf(d0);
        let heads = vec![VarHeads {
            mean: vec![tape.leaf(0.0)],
            feats: vec![vec![tape.leaf(0.3)]],
            diag: vec![d_var],
            scale: vec![tape.leaf(1.0)],
        }];
        let cov = q_cov(&heads, 1, 1);
        let g = GaussianBatch::new(vec![heads[0].mean[0]], cov).unwrap();
        let samples = rsample_q(&g, &eps, 64).unwrap();
        let mut acc = samples[0][0] * samples[0][0];
        for s in samples.iter().skip(1) {
            acc = acc + s[0] * s[0];
        }
        let obj = acc.div_f(64.0);
        let grad = tape.backward(obj).wrt(d_var);
        let h = 1e-6;
        let fd = (eval(d0 + h) - eval(d0 - h)) / (2.0 * h);
        assert_relative_eq!(grad, fd, max_relative = 1e-5);
    }
}
