//! Exact Gaussian-process regression: prior, posterior, reparameterized
//! sampling, and single-point conditioning.
//!
//! Observations are treated as noiseless; a small diagonal jitter keeps the
//! Cholesky factorization stable. Conditioning on a hypothetical observation
//! ("fantasy") is available in two forms: [`GaussianPosterior::condition`]
//! produces a durable refitted posterior via a rank-one Cholesky extension,
//! while [`FantasyView`] provides an allocation-light view used inside the
//! nested acquisition estimators, where thousands of fantasies per outer
//! evaluation would make full refits wasteful.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError, DUPLICATE_TOL};
use crate::kernel::{KernelError, KernelSpec};

#[derive(Debug, Error)]
pub enum GpError {
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Jitter escalation multiplies by 10 until this fraction of the output scale.
const JITTER_CEIL_REL: f64 = 1e-2;
/// Default jitter as a fraction of the output scale.
pub const JITTER_REL: f64 = 1e-6;

/// Result of a posterior query, with optional gradients and covariances
/// against a set of anchor points.
#[derive(Debug, Clone)]
pub struct Query {
    pub mean: f64,
    pub var: f64,
    pub grad_mean: Option<DVector<f64>>,
    pub grad_var: Option<DVector<f64>>,
    /// Posterior covariance between the query point and each anchor.
    pub cov: Vec<f64>,
    pub grad_cov: Vec<DVector<f64>>,
}

/// A Gaussian posterior surface that can be queried pointwise and extended
/// with fantasy observations. Implemented by [`GaussianPosterior`] and by
/// [`FantasyView`], so fantasies compose to any look-ahead depth.
pub trait GpSurface {
    type Anchor;

    fn dim(&self) -> usize;
    /// Effective noise floor added to the diagonal (the jitter in use).
    fn noise_floor(&self) -> f64;
    /// Precompute the solve data needed for covariances against `x`.
    fn make_anchor(&self, x: &DVector<f64>) -> Self::Anchor;
    /// Posterior mean/variance at `z`, covariance against each anchor, and
    /// gradients with respect to `z` when `grad` is set.
    fn query(&self, z: &DVector<f64>, anchors: &[&Self::Anchor], grad: bool) -> Query;

    fn mean_var(&self, z: &DVector<f64>) -> (f64, f64) {
        let q = self.query(z, &[], false);
        (q.mean, q.var)
    }
}

/// GP conditioned on a [`Dataset`] under a fixed [`KernelSpec`].
///
/// Invariants: the gram matrix plus jitter is symmetric positive definite,
/// the posterior variance is non-negative, and at observed points the
/// posterior interpolates the data up to jitter level.
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    kernel: KernelSpec,
    data: Dataset,
    /// Lower-triangular factor of `K + jitter I`; empty matrix when no data.
    chol: DMatrix<f64>,
    /// Forward solve `L^{-1} y`.
    w: DVector<f64>,
    /// Weights `(K + jitter I)^{-1} y` for the posterior mean.
    alpha: DVector<f64>,
    /// Jitter actually applied after escalation.
    jitter_eff: f64,
}

/// Anchor for covariance queries against a fixed point.
pub struct BaseAnchor {
    x: DVector<f64>,
    /// `(K + jitter I)^{-1} k(X, x)`.
    u: DVector<f64>,
}

impl GaussianPosterior {
    /// Fits the posterior. With empty data this returns the prior.
    pub fn fit(data: Dataset, kernel: KernelSpec) -> Result<Self, GpError> {
        if let Some(d) = data.dim() {
            if d != kernel.dim() {
                return Err(GpError::DegenerateData(format!(
                    "data dimension {d} does not match kernel dimension {}",
                    kernel.dim()
                )));
            }
        }
        let n = data.len();
        for i in 0..n {
            for j in (i + 1)..n {
                if (&data.points()[i] - &data.points()[j]).norm() < DUPLICATE_TOL {
                    return Err(GpError::DegenerateData(format!(
                        "points {i} and {j} coincide within {DUPLICATE_TOL:e}"
                    )));
                }
            }
        }
        if n == 0 {
            return Ok(Self {
                jitter_eff: kernel.jitter,
                kernel,
                data,
                chol: DMatrix::zeros(0, 0),
                w: DVector::zeros(0),
                alpha: DVector::zeros(0),
            });
        }

        let mut gram = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = kernel.eval(&data.points()[i], &data.points()[j]);
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }
        let (chol, jitter_eff) = cholesky_with_escalation(&gram, &kernel)?;
        let y = DVector::from_column_slice(data.values());
        let w = forward_solve(&chol, &y);
        let alpha = backward_solve(&chol, &w);
        Ok(Self {
            kernel,
            data,
            chol,
            w,
            alpha,
            jitter_eff,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn jitter_eff(&self) -> f64 {
        self.jitter_eff
    }

    /// Posterior mean and variance at `x`.
    pub fn posterior_at(&self, x: &DVector<f64>) -> (f64, f64) {
        self.mean_var(x)
    }

    /// Reparameterized draw `mu(x) + sigma(x) * xi`.
    pub fn sample_at(&self, x: &DVector<f64>, xi: f64) -> f64 {
        let (mu, var) = self.posterior_at(x);
        mu + var.sqrt() * xi
    }

    /// Joint reparameterized draw at `q` points: `mu + L_q xi` with `L_q` the
    /// Cholesky factor of the joint posterior covariance. Points closer than
    /// the duplicate tolerance share a single underlying draw, so duplicated
    /// inputs produce identical outputs.
    pub fn sample_joint(
        &self,
        xs: &[DVector<f64>],
        xi: &[f64],
    ) -> Result<Vec<f64>, GpError> {
        let q = xs.len();
        assert!(q >= 1, "sample_joint needs at least one point");
        assert!(xi.len() >= q, "need one standard normal per point");
        // Map each point to the first point it duplicates.
        let mut repr: Vec<usize> = Vec::with_capacity(q);
        let mut unique: Vec<usize> = Vec::new();
        for (i, x) in xs.iter().enumerate() {
            let found = unique
                .iter()
                .position(|&u| (&xs[u] - x).norm() < DUPLICATE_TOL);
            match found {
                Some(pos) => repr.push(pos),
                None => {
                    unique.push(i);
                    repr.push(unique.len() - 1);
                }
            }
        }
        let m = unique.len();
        let mut mu = DVector::zeros(m);
        let mut cov = DMatrix::zeros(m, m);
        let anchors: Vec<BaseAnchor> = unique
            .iter()
            .map(|&i| self.make_anchor(&xs[i]))
            .collect();
        for (a, &ia) in unique.iter().enumerate() {
            let refs: Vec<&BaseAnchor> = anchors[..a].iter().collect();
            let qr = self.query(&xs[ia], &refs, false);
            mu[a] = qr.mean;
            cov[(a, a)] = qr.var;
            for b in 0..a {
                cov[(a, b)] = qr.cov[b];
                cov[(b, a)] = qr.cov[b];
            }
        }
        // Factor the joint covariance. First try without extra jitter so the
        // marginals agree with sample_at exactly; escalate only on failure.
        let ceil = JITTER_CEIL_REL * self.kernel.output_scale;
        let mut j = 0.0;
        let chol = loop {
            let mut c = cov.clone();
            for a in 0..m {
                c[(a, a)] += j;
            }
            match nalgebra::Cholesky::new(c) {
                Some(ch) => break ch.l(),
                None => {
                    j = if j == 0.0 { self.jitter_eff } else { j * 10.0 };
                    if j > ceil {
                        return Err(GpError::DegenerateData(
                            "joint covariance not positive definite after jitter escalation"
                                .into(),
                        ));
                    }
                }
            }
        };
        let zi = DVector::from_iterator(m, xi.iter().take(m).copied());
        let draws = mu + &chol * zi;
        Ok(repr.iter().map(|&r| draws[r]).collect())
    }

    /// Posterior after appending the observation `(x, y)`; equivalent to a
    /// full refit but implemented as a rank-one Cholesky extension.
    pub fn condition(&self, x: &DVector<f64>, y: f64) -> Result<Self, GpError> {
        if self.data.contains_point(x) {
            return Err(GpError::DegenerateData(format!(
                "conditioning point duplicates an existing observation within {DUPLICATE_TOL:e}"
            )));
        }
        let n = self.data.len();
        let mut data = self.data.clone();
        data.push(x.clone(), y)?;
        if n == 0 {
            return Self::fit(data, self.kernel.clone());
        }
        let ks = self.kernel_column(x);
        let l = forward_solve(&self.chol, &ks);
        let d2 = self.kernel.eval(x, x) + self.jitter_eff - l.norm_squared();
        if d2 <= 1e-12 * self.kernel.output_scale {
            // Near-singular extension: fall back to a full refit which runs
            // the jitter escalation.
            return Self::fit(data, self.kernel.clone());
        }
        let lnn = d2.sqrt();
        let mut chol = DMatrix::zeros(n + 1, n + 1);
        chol.view_mut((0, 0), (n, n)).copy_from(&self.chol);
        for i in 0..n {
            chol[(n, i)] = l[i];
        }
        chol[(n, n)] = lnn;
        let mut w = DVector::zeros(n + 1);
        w.rows_mut(0, n).copy_from(&self.w);
        w[n] = (y - l.dot(&self.w)) / lnn;
        let alpha = backward_solve(&chol, &w);
        Ok(Self {
            kernel: self.kernel.clone(),
            data,
            chol,
            w,
            alpha,
            jitter_eff: self.jitter_eff,
        })
    }

    /// Log marginal likelihood of the data under the current kernel.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.data.len() as f64;
        let y = DVector::from_column_slice(self.data.values());
        let log_det: f64 = (0..self.data.len())
            .map(|i| self.chol[(i, i)].ln())
            .sum();
        -0.5 * y.dot(&self.alpha) - log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }

    fn kernel_column(&self, z: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.data.len(),
            self.data.points().iter().map(|p| self.kernel.eval(p, z)),
        )
    }
}

impl GpSurface for GaussianPosterior {
    type Anchor = BaseAnchor;

    fn dim(&self) -> usize {
        self.kernel.dim()
    }

    fn noise_floor(&self) -> f64 {
        self.jitter_eff
    }

    fn make_anchor(&self, x: &DVector<f64>) -> BaseAnchor {
        if self.data.is_empty() {
            return BaseAnchor {
                x: x.clone(),
                u: DVector::zeros(0),
            };
        }
        let ks = self.kernel_column(x);
        let v = forward_solve(&self.chol, &ks);
        let u = backward_solve(&self.chol, &v);
        BaseAnchor { x: x.clone(), u }
    }

    fn query(&self, z: &DVector<f64>, anchors: &[&BaseAnchor], grad: bool) -> Query {
        let n = self.data.len();
        let d = self.dim();
        if n == 0 {
            let cov = anchors.iter().map(|a| self.kernel.eval(&a.x, z)).collect();
            let grad_cov = if grad {
                anchors.iter().map(|a| self.kernel.grad_x(z, &a.x)).collect()
            } else {
                Vec::new()
            };
            return Query {
                mean: 0.0,
                var: self.kernel.diag(),
                grad_mean: grad.then(|| DVector::zeros(d)),
                grad_var: grad.then(|| DVector::zeros(d)),
                cov,
                grad_cov,
            };
        }
        let ks = self.kernel_column(z);
        let v = forward_solve(&self.chol, &ks);
        let mean = self.alpha.dot(&ks);
        let var = (self.kernel.diag() - v.norm_squared()).max(0.0);
        let cov: Vec<f64> = anchors
            .iter()
            .map(|a| self.kernel.eval(&a.x, z) - a.u.dot(&ks))
            .collect();
        let (grad_mean, grad_var, grad_cov) = if grad {
            // Rows of `jac` are the gradients of k(x_i, z) with respect to z.
            let mut jac = DMatrix::zeros(n, d);
            for (i, p) in self.data.points().iter().enumerate() {
                let gi = self.kernel.grad_x(z, p);
                for k in 0..d {
                    jac[(i, k)] = gi[k];
                }
            }
            let u = backward_solve(&self.chol, &v);
            let gm = jac.transpose() * &self.alpha;
            let gv = -2.0 * (jac.transpose() * &u);
            let gcov = anchors
                .iter()
                .map(|a| self.kernel.grad_x(z, &a.x) - jac.transpose() * &a.u)
                .collect();
            (Some(gm), Some(gv), gcov)
        } else {
            (None, None, Vec::new())
        };
        Query {
            mean,
            var,
            grad_mean,
            grad_var,
            cov,
            grad_cov,
        }
    }
}

/// A posterior extended with one fantasy observation `(x, y)`, computed as a
/// rank-one update over the base surface. Construction is cheap; queries cost
/// a single base query.
pub struct FantasyView<'a, S: GpSurface> {
    base: &'a S,
    x_anchor: S::Anchor,
    y: f64,
    mu_x: f64,
    /// `var(x) + jitter`, the conditioning denominator.
    s2j: f64,
}

pub struct FantasyAnchor<S: GpSurface> {
    inner: S::Anchor,
    /// Base posterior covariance between the fantasy input and the anchor.
    cov_xw: f64,
}

impl<'a, S: GpSurface> FantasyView<'a, S> {
    pub fn new(base: &'a S, x: &DVector<f64>, y: f64) -> Self {
        let x_anchor = base.make_anchor(x);
        let (mu_x, var_x) = base.mean_var(x);
        Self {
            base,
            x_anchor,
            y,
            mu_x,
            s2j: var_x + base.noise_floor(),
        }
    }

    pub fn fantasy_value(&self) -> f64 {
        self.y
    }

    fn gain(&self) -> f64 {
        (self.y - self.mu_x) / self.s2j
    }
}

impl<'a, S: GpSurface> GpSurface for FantasyView<'a, S> {
    type Anchor = FantasyAnchor<S>;

    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn noise_floor(&self) -> f64 {
        self.base.noise_floor()
    }

    fn make_anchor(&self, w: &DVector<f64>) -> FantasyAnchor<S> {
        let inner = self.base.make_anchor(w);
        let cov_xw = self.base.query(w, &[&self.x_anchor], false).cov[0];
        FantasyAnchor { inner, cov_xw }
    }

    fn query(&self, z: &DVector<f64>, anchors: &[&FantasyAnchor<S>], grad: bool) -> Query {
        let mut base_anchors: Vec<&S::Anchor> = Vec::with_capacity(anchors.len() + 1);
        base_anchors.push(&self.x_anchor);
        for a in anchors {
            base_anchors.push(&a.inner);
        }
        let q = self.base.query(z, &base_anchors, grad);
        let c0 = q.cov[0];
        let gain = self.gain();
        let mean = q.mean + c0 * gain;
        let var_raw = q.var - c0 * c0 / self.s2j;
        let var = var_raw.max(0.0);
        let cov: Vec<f64> = anchors
            .iter()
            .enumerate()
            .map(|(i, a)| q.cov[i + 1] - a.cov_xw * c0 / self.s2j)
            .collect();
        let (grad_mean, grad_var, grad_cov) = if grad {
            let g0 = &q.grad_cov[0];
            let gm = q.grad_mean.as_ref().unwrap() + g0 * gain;
            let gv = if var_raw > 0.0 {
                q.grad_var.as_ref().unwrap() - g0 * (2.0 * c0 / self.s2j)
            } else {
                DVector::zeros(self.dim())
            };
            let gc = anchors
                .iter()
                .enumerate()
                .map(|(i, a)| &q.grad_cov[i + 1] - g0 * (a.cov_xw / self.s2j))
                .collect();
            (Some(gm), Some(gv), gc)
        } else {
            (None, None, Vec::new())
        };
        Query {
            mean,
            var,
            grad_mean,
            grad_var,
            cov,
            grad_cov,
        }
    }
}

fn cholesky_with_escalation(
    gram: &DMatrix<f64>,
    kernel: &KernelSpec,
) -> Result<(DMatrix<f64>, f64), GpError> {
    let n = gram.nrows();
    let mut jitter = kernel.jitter;
    let ceil = JITTER_CEIL_REL * kernel.output_scale;
    loop {
        let mut k = gram.clone();
        for i in 0..n {
            k[(i, i)] += jitter;
        }
        if let Some(ch) = nalgebra::Cholesky::new(k) {
            return Ok((ch.l(), jitter));
        }
        jitter *= 10.0;
        if jitter > ceil {
            return Err(GpError::DegenerateData(format!(
                "gram matrix not positive definite with jitter up to {ceil:e} \
                 (near-duplicate points?)"
            )));
        }
    }
}

fn forward_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = b.len();
    let mut x = b.clone();
    for i in 0..n {
        let mut s = x[i];
        for j in 0..i {
            s -= l[(i, j)] * x[j];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

fn backward_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = b.len();
    let mut x = b.clone();
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in (i + 1)..n {
            s -= l[(j, i)] * x[j];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn randn(rng: &mut Xoshiro256PlusPlus) -> f64 {
        StandardNormal.sample(rng)
    }

    fn toy_kernel(dim: usize) -> KernelSpec {
        KernelSpec::matern52(dim, 1.2, 0.8)
    }

    #[test]
    fn empty_dataset_recovers_prior() {
        let gp = GaussianPosterior::fit(Dataset::new(), toy_kernel(1)).unwrap();
        let (mu, var) = gp.posterior_at(&dvector![0.3]);
        assert_eq!(mu, 0.0);
        assert!((var - 0.8).abs() < 1e-15);
    }

    #[test]
    fn single_point_interpolates() {
        let mut ds = Dataset::new();
        ds.push(dvector![0.5], 1.7).unwrap();
        let gp = GaussianPosterior::fit(ds, toy_kernel(1)).unwrap();
        let (mu, var) = gp.posterior_at(&dvector![0.5]);
        assert!((mu - 1.7).abs() < 1e-6 * (1.0 + 1.7));
        assert!(var <= 10.0 * gp.jitter_eff());
    }

    #[test]
    fn two_point_posterior_matches_dense_solve() {
        // Independent oracle: direct 2x2 inversion of the posterior formulas.
        let k = toy_kernel(1);
        let (x0, x1, q) = (dvector![-0.4], dvector![0.9], dvector![0.25]);
        let (y0, y1) = (0.3, -1.1);
        let mut ds = Dataset::new();
        ds.push(x0.clone(), y0).unwrap();
        ds.push(x1.clone(), y1).unwrap();
        let gp = GaussianPosterior::fit(ds, k.clone()).unwrap();

        let j = gp.jitter_eff();
        let a = k.eval(&x0, &x0) + j;
        let b = k.eval(&x0, &x1);
        let c = k.eval(&x1, &x1) + j;
        let det = a * c - b * b;
        let (k0, k1) = (k.eval(&q, &x0), k.eval(&q, &x1));
        // K^{-1} y and K^{-1} k*
        let w0 = (c * y0 - b * y1) / det;
        let w1 = (-b * y0 + a * y1) / det;
        let mu_oracle = k0 * w0 + k1 * w1;
        let s0 = (c * k0 - b * k1) / det;
        let s1 = (-b * k0 + a * k1) / det;
        let var_oracle = k.eval(&q, &q) - (k0 * s0 + k1 * s1);

        let (mu, var) = gp.posterior_at(&q);
        assert!((mu - mu_oracle).abs() < 1e-10, "{mu} vs {mu_oracle}");
        assert!((var - var_oracle).abs() < 1e-10, "{var} vs {var_oracle}");
    }

    #[test]
    fn far_field_returns_prior() {
        let mut ds = Dataset::new();
        ds.push(dvector![0.0], 2.0).unwrap();
        let gp = GaussianPosterior::fit(ds, toy_kernel(1)).unwrap();
        // 25 lengthscales away
        let (mu, var) = gp.posterior_at(&dvector![30.0]);
        assert!(mu.abs() < 1e-6 * 2.0);
        assert!((var - 0.8).abs() < 1e-6 * 0.8);
    }

    #[test]
    fn sample_at_is_reparameterized() {
        let mut ds = Dataset::new();
        ds.push(dvector![0.0], 1.0).unwrap();
        let gp = GaussianPosterior::fit(ds, toy_kernel(1)).unwrap();
        let x = dvector![0.7];
        let (mu, var) = gp.posterior_at(&x);
        assert_eq!(gp.sample_at(&x, 0.0), mu);
        assert!((gp.sample_at(&x, 1.0) - (mu + var.sqrt())).abs() < 1e-15);
        // prior with xi = 1
        let prior = GaussianPosterior::fit(Dataset::new(), toy_kernel(1)).unwrap();
        assert!((prior.sample_at(&x, 1.0) - 0.8f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn sample_at_empirical_mean_clt() {
        let mut ds = Dataset::new();
        ds.push(dvector![0.0], 1.0).unwrap();
        ds.push(dvector![1.5], -0.4).unwrap();
        let gp = GaussianPosterior::fit(ds, toy_kernel(1)).unwrap();
        let x = dvector![0.6];
        let (mu, var) = gp.posterior_at(&x);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(7);
        let n = 100_000usize;
        let mut sum = 0.0;
        for _ in 0..n {
            let xi = randn(&mut rng);
            sum += gp.sample_at(&x, xi);
        }
        let emp = sum / n as f64;
        let se = var.sqrt() / (n as f64).sqrt();
        assert!(
            (emp - mu).abs() < 4.0 * se,
            "empirical {emp} vs {mu} (se {se})"
        );
    }

    #[test]
    fn sample_joint_reduces_to_sample_at() {
        let mut ds = Dataset::new();
        ds.push(dvector![0.2], 0.9).unwrap();
        let gp = GaussianPosterior::fit(ds, toy_kernel(1)).unwrap();
        let x = dvector![1.1];
        let joint = gp.sample_joint(&[x.clone()], &[0.73]).unwrap();
        assert!((joint[0] - gp.sample_at(&x, 0.73)).abs() < 1e-14);
    }

    #[test]
    fn sample_joint_duplicate_points_agree_exactly() {
        let mut ds = Dataset::new();
        ds.push(dvector![0.2], 0.9).unwrap();
        let gp = GaussianPosterior::fit(ds, toy_kernel(1)).unwrap();
        let x = dvector![0.8];
        let out = gp.sample_joint(&[x.clone(), x.clone()], &[0.5, -1.2]).unwrap();
        assert_eq!(out[0], out[1]);
    }

    #[test]
    fn sample_joint_empirical_covariance() {
        let mut ds = Dataset::new();
        ds.push(dvector![0.0], 1.0).unwrap();
        ds.push(dvector![2.0], 0.1).unwrap();
        let gp = GaussianPosterior::fit(ds, toy_kernel(1)).unwrap();
        let xs = [dvector![0.6], dvector![1.0]];
        let a0 = gp.make_anchor(&xs[0]);
        let q1 = gp.query(&xs[1], &[&a0], false);
        let cov_true = q1.cov[0];
        let (mu0, var0) = gp.posterior_at(&xs[0]);
        let (mu1, var1) = (q1.mean, q1.var);

        let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
        let n = 100_000usize;
        let (mut s0, mut s1, mut s00, mut s11, mut s01) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let xi: [f64; 2] = [
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            ];
            let d = gp.sample_joint(&xs, &xi).unwrap();
            s0 += d[0];
            s1 += d[1];
            s00 += d[0] * d[0];
            s11 += d[1] * d[1];
            s01 += d[0] * d[1];
        }
        let nf = n as f64;
        let (m0, m1) = (s0 / nf, s1 / nf);
        let c00 = s00 / nf - m0 * m0;
        let c11 = s11 / nf - m1 * m1;
        let c01 = s01 / nf - m0 * m1;
        // 4 standard errors, se(cov) ~ sqrt((c00*c11 + c01^2)/n)
        let se = ((c00 * c11 + c01 * c01) / nf).sqrt();
        assert!((m0 - mu0).abs() < 4.0 * (var0 / nf).sqrt());
        assert!((m1 - mu1).abs() < 4.0 * (var1 / nf).sqrt());
        assert!((c00 - var0).abs() < 4.0 * (2.0 * var0 * var0 / nf).sqrt() + 1e-5);
        assert!((c11 - var1).abs() < 4.0 * (2.0 * var1 * var1 / nf).sqrt() + 1e-5);
        assert!((c01 - cov_true).abs() < 4.0 * se + 1e-5, "{c01} vs {cov_true}");
    }

    #[test]
    fn condition_matches_full_refit() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
        for dim in [1usize, 2, 6] {
            for n in [1usize, 4, 10] {
                let kernel = KernelSpec::matern52(dim, 0.9, 1.3);
                let mut ds = Dataset::new();
                for _ in 0..n {
                    let p = DVector::from_fn(dim, |_, _| {
                        2.0 * randn(&mut rng)
                    });
                    let v = randn(&mut rng);
                    if !ds.contains_point(&p) {
                        ds.push(p, v).unwrap();
                    }
                }
                let gp = GaussianPosterior::fit(ds.clone(), kernel.clone()).unwrap();
                let xnew = DVector::from_fn(dim, |_, _| {
                    2.0 * randn(&mut rng)
                });
                let ynew = randn(&mut rng);
                let cond = gp.condition(&xnew, ynew).unwrap();

                let mut ds2 = ds.clone();
                ds2.push(xnew.clone(), ynew).unwrap();
                let refit = GaussianPosterior::fit(ds2, kernel).unwrap();

                for _ in 0..10 {
                    let probe = DVector::from_fn(dim, |_, _| {
                        2.0 * randn(&mut rng)
                    });
                    let (m1, v1) = cond.posterior_at(&probe);
                    let (m2, v2) = refit.posterior_at(&probe);
                    assert!(
                        (m1 - m2).abs() <= 1e-8 * (1.0 + m2.abs()),
                        "dim {dim} n {n}: mean {m1} vs {m2}"
                    );
                    assert!(
                        (v1 - v2).abs() <= 1e-8 * (1.0 + v2.abs()),
                        "dim {dim} n {n}: var {v1} vs {v2}"
                    );
                }
            }
        }
    }

    #[test]
    fn condition_then_query_interpolates() {
        let gp = GaussianPosterior::fit(Dataset::new(), toy_kernel(1)).unwrap();
        let cond = gp.condition(&dvector![0.4], 2.5).unwrap();
        let (mu, var) = cond.posterior_at(&dvector![0.4]);
        assert!((mu - 2.5).abs() < 1e-6 * 3.5);
        assert!(var <= 10.0 * cond.jitter_eff());

        // condition(prior, x, y) == fit({(x, y)})
        let mut ds = Dataset::new();
        ds.push(dvector![0.4], 2.5).unwrap();
        let direct = GaussianPosterior::fit(ds, toy_kernel(1)).unwrap();
        let (m1, v1) = cond.posterior_at(&dvector![1.0]);
        let (m2, v2) = direct.posterior_at(&dvector![1.0]);
        assert!((m1 - m2).abs() < 1e-12);
        assert!((v1 - v2).abs() < 1e-12);
    }

    #[test]
    fn condition_rejects_duplicates() {
        let mut ds = Dataset::new();
        ds.push(dvector![0.4], 2.5).unwrap();
        let gp = GaussianPosterior::fit(ds, toy_kernel(1)).unwrap();
        assert!(gp.condition(&dvector![0.4], 1.0).is_err());
    }

    #[test]
    fn fit_rejects_duplicate_points() {
        let mut ds = Dataset::new();
        ds.push(dvector![0.4], 2.5).unwrap();
        ds.push(dvector![0.4 + 1e-12], 2.5).unwrap();
        assert!(GaussianPosterior::fit(ds, toy_kernel(1)).is_err());
    }

    #[test]
    fn variance_never_exceeds_prior() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
        let mut ds = Dataset::new();
        for _ in 0..8 {
            let p = DVector::from_fn(2, |_, _| 3.0 * randn(&mut rng));
            let v = randn(&mut rng);
            if !ds.contains_point(&p) {
                ds.push(p, v).unwrap();
            }
        }
        let gp = GaussianPosterior::fit(ds, toy_kernel(2)).unwrap();
        for _ in 0..200 {
            let z = DVector::from_fn(2, |_, _| 4.0 * randn(&mut rng));
            let (_, var) = gp.posterior_at(&z);
            assert!(var >= 0.0);
            assert!(var <= 0.8 + 1e-12);
        }
    }

    #[test]
    fn observation_order_is_irrelevant() {
        let kernel = toy_kernel(1);
        let pts = [0.1, 0.9, -1.3, 2.2];
        let vals = [1.0, -0.5, 0.3, 0.8];
        let mut a = Dataset::new();
        for (p, v) in pts.iter().zip(vals) {
            a.push(dvector![*p], v).unwrap();
        }
        let mut b = Dataset::new();
        for idx in [2usize, 0, 3, 1] {
            b.push(dvector![pts[idx]], vals[idx]).unwrap();
        }
        let ga = GaussianPosterior::fit(a, kernel.clone()).unwrap();
        let gb = GaussianPosterior::fit(b, kernel).unwrap();
        for q in [-2.0, -0.3, 0.5, 1.4, 3.0] {
            let (m1, v1) = ga.posterior_at(&dvector![q]);
            let (m2, v2) = gb.posterior_at(&dvector![q]);
            assert!((m1 - m2).abs() <= 1e-8 * (1.0 + m2.abs()));
            assert!((v1 - v2).abs() <= 1e-8 * (1.0 + v2.abs()));
        }
    }

    #[test]
    fn interpolation_invariant_on_random_datasets() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(17);
        for n in [3usize, 7] {
            let mut ds = Dataset::new();
            for _ in 0..n {
                let p = DVector::from_fn(1, |_, _| {
                    5.0 * randn(&mut rng)
                });
                let v: f64 = 2.0 * randn(&mut rng);
                // Keep a sane separation; interpolation accuracy necessarily
                // degrades as the gram matrix approaches singularity.
                if ds.min_distance(&p) > 1.0 || ds.is_empty() {
                    ds.push(p, v).unwrap();
                }
            }
            let gp = GaussianPosterior::fit(ds.clone(), toy_kernel(1)).unwrap();
            for (p, &v) in ds.points().iter().zip(ds.values()) {
                let (mu, _) = gp.posterior_at(p);
                assert!(
                    (mu - v).abs() <= 1e-6 * (1.0 + v.abs()),
                    "interpolation broke: {mu} vs {v}"
                );
            }
        }
    }

    #[test]
    fn fantasy_view_matches_condition() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(23);
        let mut ds = Dataset::new();
        for _ in 0..5 {
            let p = DVector::from_fn(2, |_, _| 2.0 * randn(&mut rng));
            let v = randn(&mut rng);
            if !ds.contains_point(&p) {
                ds.push(p, v).unwrap();
            }
        }
        let gp = GaussianPosterior::fit(ds, toy_kernel(2)).unwrap();
        let x = dvector![0.3, -0.7];
        let y = 1.9;
        let view = FantasyView::new(&gp, &x, y);
        let cond = gp.condition(&x, y).unwrap();
        for _ in 0..10 {
            let z = DVector::from_fn(2, |_, _| 2.0 * randn(&mut rng));
            let (m1, v1) = view.mean_var(&z);
            let (m2, v2) = cond.posterior_at(&z);
            assert!((m1 - m2).abs() <= 1e-8 * (1.0 + m2.abs()), "{m1} vs {m2}");
            assert!((v1 - v2).abs() <= 1e-8 * (1.0 + v2.abs()), "{v1} vs {v2}");
        }
    }

    #[test]
    fn stacked_fantasy_views_match_two_conditions() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(29);
        let mut ds = Dataset::new();
        for _ in 0..4 {
            let p = DVector::from_fn(1, |_, _| 3.0 * randn(&mut rng));
            let v = randn(&mut rng);
            if !ds.contains_point(&p) {
                ds.push(p, v).unwrap();
            }
        }
        let gp = GaussianPosterior::fit(ds, toy_kernel(1)).unwrap();
        let (x1, y1) = (dvector![0.25], 0.6);
        let (x2, y2) = (dvector![-1.4], -0.2);
        let v1 = FantasyView::new(&gp, &x1, y1);
        let v2 = FantasyView::new(&v1, &x2, y2);
        let cond = gp.condition(&x1, y1).unwrap().condition(&x2, y2).unwrap();
        for q in [-2.5, -0.8, 0.0, 0.9, 2.1] {
            let z = dvector![q];
            let (m1, s1) = v2.mean_var(&z);
            let (m2, s2) = cond.posterior_at(&z);
            assert!((m1 - m2).abs() <= 1e-7 * (1.0 + m2.abs()), "{m1} vs {m2}");
            assert!((s1 - s2).abs() <= 1e-7 * (1.0 + s2.abs()), "{s1} vs {s2}");
        }
    }

    #[test]
    fn query_gradients_match_finite_differences() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(31);
        let mut ds = Dataset::new();
        for _ in 0..6 {
            let p = DVector::from_fn(2, |_, _| 2.0 * randn(&mut rng));
            let v = randn(&mut rng);
            if !ds.contains_point(&p) {
                ds.push(p, v).unwrap();
            }
        }
        let gp = GaussianPosterior::fit(ds, toy_kernel(2)).unwrap();
        let anchor_x = dvector![0.5, 0.5];
        let anchor = gp.make_anchor(&anchor_x);
        let z = dvector![0.1, -0.4];
        let q = gp.query(&z, &[&anchor], true);
        let h = 1e-6;
        for k in 0..2 {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[k] += h;
            zm[k] -= h;
            let qp = gp.query(&zp, &[&anchor], false);
            let qm = gp.query(&zm, &[&anchor], false);
            let fd_mean = (qp.mean - qm.mean) / (2.0 * h);
            let fd_var = (qp.var - qm.var) / (2.0 * h);
            let fd_cov = (qp.cov[0] - qm.cov[0]) / (2.0 * h);
            assert!((q.grad_mean.as_ref().unwrap()[k] - fd_mean).abs() < 1e-5);
            assert!((q.grad_var.as_ref().unwrap()[k] - fd_var).abs() < 1e-5);
            assert!((q.grad_cov[0][k] - fd_cov).abs() < 1e-5);
        }
    }
}
