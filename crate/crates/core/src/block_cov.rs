//! Covariance algebra for BP×BP matrices whose P×P blocks are all diagonal.
//!
//! A batch of B images with P outputs each induces a BP×BP covariance matrix
//! made of B² blocks, every one of which is diagonal. Such a matrix is
//! permutation-similar to P independent B×B matrices (one per pixel), has at
//! most B²·P nonzeros, and its inverse has the same block structure. The
//! inverse and log-determinant are computed by recursively extending the
//! top-left n-block inverse with a Schur complement; because every block is
//! diagonal the whole recursion runs on length-P vectors.
//!
//! Operations are generic over [`Real`] so the same recursion that inverts an
//! `f64` prior covariance also differentiates through a taped variational
//! covariance.

use std::io::Write;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{FvError, Result};
use crate::tape::Real;

/// Schur pivots below this are treated as loss of positive definiteness.
pub const PIVOT_TOL: f64 = 1e-12;

/// Symmetric B×B grid of diagonal P×P blocks; entry `(i, j)` stores the
/// diagonal of the covariance block between images `i` and `j`.
#[derive(Clone, Debug)]
pub struct StructuredCov<T = f64> {
    b: usize,
    p: usize,
    blocks: Vec<Vec<T>>, // row-major (i * b + j), each of length p
}

impl<T: Real> StructuredCov<T> {
    /// Build from a symmetric generator: `f(i, j)` is called once per pair
    /// with `i <= j` and mirrored, so symmetry holds by construction.
    pub fn from_symmetric_fn(b: usize, p: usize, mut f: impl FnMut(usize, usize) -> Vec<T>) -> Self {
        assert!(b >= 1 && p >= 1, "B and P must be at least 1");
        let mut blocks = vec![Vec::new(); b * b];
        for i in 0..b {
            for j in i..b {
                let v = f(i, j);
                assert_eq!(v.len(), p, "block ({i},{j}) has wrong length");
                if i != j {
                    blocks[j * b + i] = v.clone();
                }
                blocks[i * b + j] = v;
            }
        }
        StructuredCov { b, p, blocks }
    }

    pub fn batch(&self) -> usize {
        self.b
    }

    pub fn pixels(&self) -> usize {
        self.p
    }

    /// Diagonal entries of block (i, j).
    pub fn block(&self, i: usize, j: usize) -> &[T] {
        &self.blocks[i * self.b + j]
    }

    /// Adds `eps` to every diagonal entry of every diagonal block.
    pub fn add_jitter(&self, eps: f64) -> Self {
        let mut out = self.clone();
        for i in 0..self.b {
            for v in out.blocks[i * self.b + i].iter_mut() {
                *v = v.add_f(eps);
            }
        }
        out
    }

    /// Inverse in the same structured form, via the recursive Schur-complement
    /// extension: the inverse of the leading (n+1)-block matrix is assembled
    /// from the inverse of the leading n-block matrix and the pivot
    /// S = K_{n+1,n+1} − Kᵀ_{:n,n+1} K⁻¹_{:n,:n} K_{:n,n+1}, all on length-P
    /// vectors.
    pub fn schur_inverse(&self) -> Result<StructuredCov<T>> {
        Ok(self.schur_sweep()?.0)
    }

    /// log det K accumulated through the same recursion:
    /// log det K_{:n+1,:n+1} = log det K_{:n,:n} + Σ_p log S_{n,n}[p].
    pub fn logdet(&self) -> Result<T> {
        Ok(self.schur_sweep()?.1)
    }

    pub(crate) fn schur_sweep(&self) -> Result<(StructuredCov<T>, T)> {
        let (b, p) = (self.b, self.p);
        let mut ld = check_pivots(self.block(0, 0), 0)?;
        let mut inv: Vec<Vec<T>> = vec![self.block(0, 0).iter().map(|v| v.recip()).collect()];
        let at = |g: &[Vec<T>], n: usize, i: usize, j: usize| -> usize {
            debug_assert!(i < n && j < n && g.len() == n * n);
            i * n + j
        };
        for n in 1..b {
            // u = K⁻¹_{:n,:n} · K_{:n,n}
            let mut u: Vec<Vec<T>> = Vec::with_capacity(n);
            for i in 0..n {
                let mut acc: Vec<T> = self.block(0, n).iter().zip(&inv[at(&inv, n, i, 0)]).map(|(c, m)| *m * *c).collect();
                for j in 1..n {
                    let c = self.block(j, n);
                    let m = &inv[at(&inv, n, i, j)];
                    for q in 0..p {
                        acc[q] = acc[q] + m[q] * c[q];
                    }
                }
                u.push(acc);
            }
            // S = K_{n,n} − Σ_i K_{i,n} ⊙ u_i
            let mut s: Vec<T> = self.block(n, n).to_vec();
            for (i, ui) in u.iter().enumerate() {
                let c = self.block(i, n);
                for q in 0..p {
                    s[q] = s[q] - c[q] * ui[q];
                }
            }
            ld = ld + check_pivots(&s, n)?;
            let sinv: Vec<T> = s.iter().map(|v| v.recip()).collect();

            let m = n + 1;
            let mut next: Vec<Vec<T>> = vec![Vec::new(); m * m];
            for i in 0..n {
                for j in i..n {
                    let prev = &inv[at(&inv, n, i, j)];
                    let mut blk: Vec<T> = Vec::with_capacity(p);
                    for q in 0..p {
                        blk.push(prev[q] + u[i][q] * sinv[q] * u[j][q]);
                    }
                    if i != j {
                        next[j * m + i] = blk.clone();
                    }
                    next[i * m + j] = blk;
                }
                let off: Vec<T> = (0..p).map(|q| -(u[i][q] * sinv[q])).collect();
                next[n * m + i] = off.clone();
                next[i * m + n] = off;
            }
            next[n * m + n] = sinv;
            inv = next;
        }
        Ok((StructuredCov { b, p, blocks: inv }, ld))
    }

    /// Per-pixel lower Cholesky factors L_p with L_p L_pᵀ = M_p, as row-major
    /// B×B matrices. Pivots within [`PIVOT_TOL`] of zero are taken as exact
    /// zeros (PSD boundary, e.g. a zero covariance); negative pivots are an
    /// error.
    pub fn chol_factors(&self) -> Result<Vec<Vec<T>>> {
        let (b, p) = (self.b, self.p);
        let mut out = Vec::with_capacity(p);
        for q in 0..p {
            let mut l = vec![None::<T>; b * b];
            for j in 0..b {
                let mut d = self.block(j, j)[q];
                for k in 0..j {
                    let ljk = l[j * b + k].expect("filled");
                    d = d - ljk * ljk;
                }
                let dv = d.val();
                if dv < -PIVOT_TOL {
                    return Err(FvError::NonPositiveDefinite { pixel: q, pivot: dv });
                }
                let zero_col = dv < PIVOT_TOL;
                let ljj = if zero_col { None } else { Some(d.sqrt()) };
                l[j * b + j] = ljj.or(Some(d.mul_f(0.0)));
                for i in (j + 1)..b {
                    let mut v = self.block(i, j)[q];
                    for k in 0..j {
                        let lik = l[i * b + k].expect("filled");
                        let ljk = l[j * b + k].expect("filled");
                        v = v - lik * ljk;
                    }
                    if zero_col {
                        if v.val().abs() > 1e-9 {
                            return Err(FvError::NonPositiveDefinite { pixel: q, pivot: dv });
                        }
                        l[i * b + j] = Some(v.mul_f(0.0));
                    } else {
                        l[i * b + j] = Some(v / ljj.expect("nonzero pivot"));
                    }
                }
                for i in 0..j {
                    l[i * b + j] = Some(d.mul_f(0.0));
                }
            }
            out.push(l.into_iter().map(|v| v.expect("filled")).collect());
        }
        Ok(out)
    }
}

fn check_pivots<T: Real>(s: &[T], block_idx: usize) -> Result<T> {
    let mut ld = None;
    for (q, v) in s.iter().enumerate() {
        if v.val() < PIVOT_TOL {
            let _ = block_idx;
            return Err(FvError::NonPositiveDefinite { pixel: q, pivot: v.val() });
        }
        let term = v.ln();
        ld = Some(match ld {
            None => term,
            Some(acc) => acc + term,
        });
    }
    Ok(ld.expect("P >= 1"))
}

impl StructuredCov<f64> {
    /// Builds from explicit blocks, enforcing symmetry exactly.
    pub fn from_blocks(b: usize, p: usize, blocks: Vec<Vec<f64>>) -> Result<Self> {
        if blocks.len() != b * b || blocks.iter().any(|v| v.len() != p) {
            return Err(FvError::ShapeMismatch(format!(
                "expected {}x{} blocks of length {p}",
                b, b
            )));
        }
        for i in 0..b {
            for j in (i + 1)..b {
                if blocks[i * b + j] != blocks[j * b + i] {
                    return Err(FvError::ShapeMismatch(format!(
                        "blocks ({i},{j}) and ({j},{i}) differ"
                    )));
                }
            }
        }
        Ok(StructuredCov { b, p, blocks })
    }

    pub fn identity(b: usize, p: usize) -> Self {
        Self::from_symmetric_fn(b, p, |i, j| vec![if i == j { 1.0 } else { 0.0 }; p])
    }

    /// Dense BP×BP materialization (test oracle / debugging; O((BP)²) memory).
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.b * self.p;
        let mut m = DMatrix::zeros(n, n);
        for i in 0..self.b {
            for j in 0..self.b {
                let blk = self.block(i, j);
                for q in 0..self.p {
                    m[(i * self.p + q, j * self.p + q)] = blk[q];
                }
            }
        }
        m
    }

    /// The permutation-similar view: P dense B×B matrices M_p with
    /// M_p[i][j] = blocks[i][j][p].
    pub fn per_pixel_view(&self) -> PerPixelView {
        let mats = (0..self.p)
            .map(|q| DMatrix::from_fn(self.b, self.b, |i, j| self.block(i, j)[q]))
            .collect();
        PerPixelView { b: self.b, mats }
    }

    /// Per-pixel lower Cholesky factors packaged as a view.
    pub fn cholesky_per_pixel(&self) -> Result<PerPixelView> {
        let factors = self.chol_factors()?;
        let mats = factors
            .into_iter()
            .map(|l| DMatrix::from_fn(self.b, self.b, |i, j| l[i * self.b + j]))
            .collect();
        Ok(PerPixelView { b: self.b, mats })
    }

    /// Debug CSV dump: first the B,P header, then one `i,j,p,value` row per
    /// structural nonzero.
    pub fn dump_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "B,P")?;
        writeln!(w, "{},{}", self.b, self.p)?;
        writeln!(w, "i,j,p,value")?;
        for i in 0..self.b {
            for j in 0..self.b {
                let blk = self.block(i, j);
                for (q, v) in blk.iter().enumerate() {
                    if *v != 0.0 {
                        writeln!(w, "{i},{j},{q},{v}")?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// P dense B×B matrices; lossless round-trip with [`StructuredCov`].
#[derive(Clone, Debug)]
pub struct PerPixelView {
    b: usize,
    pub mats: Vec<DMatrix<f64>>,
}

impl PerPixelView {
    pub fn batch(&self) -> usize {
        self.b
    }

    /// Inverse of [`StructuredCov::per_pixel_view`]; exact.
    pub fn reassemble(&self) -> StructuredCov<f64> {
        let p = self.mats.len();
        StructuredCov::from_symmetric_fn(self.b, p, |i, j| {
            (0..p).map(|q| self.mats[q][(i, j)]).collect()
        })
    }
}

/// A multi-output Gaussian over a batch: mean of length B·P (pixel-major
/// within each image) plus a structured covariance.
#[derive(Clone, Debug)]
pub struct GaussianBatch<T = f64> {
    pub mean: Vec<T>,
    pub cov: StructuredCov<T>,
}

impl<T: Real> GaussianBatch<T> {
    pub fn new(mean: Vec<T>, cov: StructuredCov<T>) -> Result<Self> {
        if mean.len() != cov.batch() * cov.pixels() {
            return Err(FvError::ShapeMismatch(format!(
                "mean length {} != B*P = {}",
                mean.len(),
                cov.batch() * cov.pixels()
            )));
        }
        Ok(GaussianBatch { mean, cov })
    }
}

impl GaussianBatch<f64> {
    /// Draws `n_samples` joint samples, one length-B·P vector each. Per pixel
    /// p the slice across images is mean + L_p ε with ε standard normal;
    /// deterministic for a fixed seed.
    pub fn sample(&self, n_samples: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let (b, p) = (self.cov.batch(), self.cov.pixels());
        let factors = self.cov.chol_factors()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n_samples);
        let mut eps = vec![0.0f64; b];
        for _ in 0..n_samples {
            let mut f = self.mean.clone();
            for q in 0..p {
                for e in eps.iter_mut() {
                    *e = StandardNormal.sample(&mut rng);
                }
                let l = &factors[q];
                for i in 0..b {
                    let mut acc = 0.0;
                    for j in 0..=i {
                        acc += l[i * b + j] * eps[j];
                    }
                    f[i * p + q] += acc;
                }
            }
            out.push(f);
        }
        Ok(out)
    }
}

/// KL(q ‖ p) between two multi-output Gaussians with structured covariances:
/// ½ [tr(Σ_p⁻¹ Σ_q) + (μ_p−μ_q)ᵀ Σ_p⁻¹ (μ_p−μ_q) − BP + log det Σ_p − log det Σ_q],
/// every term computed with structured operations. Generic in the q side so
/// the divergence differentiates through a taped variational distribution.
pub fn gaussian_kl_generic<T: Real>(
    q: &GaussianBatch<T>,
    p_mean: &[f64],
    p_cov: &StructuredCov<f64>,
) -> Result<T> {
    let (b, p) = (p_cov.batch(), p_cov.pixels());
    if q.cov.batch() != b || q.cov.pixels() != p || p_mean.len() != b * p {
        return Err(FvError::ShapeMismatch(
            "KL operands must share B and P".into(),
        ));
    }
    let (p_inv, ld_p) = p_cov.schur_sweep().map_err(|e| match e {
        FvError::NonPositiveDefinite { pixel, pivot } => FvError::Domain(format!(
            "prior covariance not positive definite (pixel {pixel}, pivot {pivot:.3e})"
        )),
        other => other,
    })?;
    let ld_q = q.cov.logdet().map_err(|e| match e {
        FvError::NonPositiveDefinite { pixel, pivot } => FvError::Domain(format!(
            "variational covariance lost positive definiteness (pixel {pixel}, pivot {pivot:.3e})"
        )),
        other => other,
    })?;

    let d: Vec<T> = q
        .mean
        .iter()
        .zip(p_mean)
        .map(|(qm, pm)| qm.sub_f(*pm))
        .collect();

    let mut acc: Option<T> = None;
    for i in 0..b {
        for j in 0..b {
            let w = p_inv.block(i, j);
            let sq = q.cov.block(i, j);
            for q_ix in 0..p {
                let t = (sq[q_ix] + d[i * p + q_ix] * d[j * p + q_ix]).mul_f(w[q_ix]);
                acc = Some(match acc {
                    None => t,
                    Some(a) => a + t,
                });
            }
        }
    }
    let tr_plus_quad = acc.expect("B,P >= 1");
    Ok((tr_plus_quad - ld_q).add_f(ld_p - (b * p) as f64).mul_f(0.5))
}

/// KL between two concrete Gaussians (both `f64`).
pub fn gaussian_kl(q: &GaussianBatch<f64>, p: &GaussianBatch<f64>) -> Result<f64> {
    gaussian_kl_generic(q, &p.mean, &p.cov)
}
