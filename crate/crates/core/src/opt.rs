//! Deterministic multi-start bounded maximization.
//!
//! `raw` low-discrepancy candidates are screened by objective value, the top
//! `restarts` seed a limited-memory quasi-Newton ascent projected onto the
//! box, and the best terminal point wins. Everything is a pure function of
//! the seed, so repeated calls are bit-identical.

use nalgebra::DVector;
use thiserror::Error;

use crate::domain::BoxDomain;
use crate::sampling::rng_from;
use rand::RngExt;

#[derive(Debug, Error)]
pub enum OptError {
    #[error("maximize requires restarts >= 1 and raw >= restarts (got restarts={restarts}, raw={raw})")]
    BadBudget { restarts: usize, raw: usize },
    #[error("objective returned non-finite value at every screened candidate")]
    AllCandidatesNonFinite,
}

/// An objective to maximize. Gradient is optional; when absent the
/// optimizer falls back to forward finite differences.
pub trait Objective {
    fn value(&self, x: &DVector<f64>) -> f64;

    /// Analytic gradient, if available.
    fn gradient(&self, _x: &DVector<f64>) -> Option<DVector<f64>> {
        None
    }
}

impl<F: Fn(&DVector<f64>) -> f64> Objective for F {
    fn value(&self, x: &DVector<f64>) -> f64 {
        self(x)
    }
}

/// An objective defined by a pair of closures (value, gradient).
pub struct WithGrad<F, G> {
    pub f: F,
    pub g: G,
}

impl<F, G> Objective for WithGrad<F, G>
where
    F: Fn(&DVector<f64>) -> f64,
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    fn value(&self, x: &DVector<f64>) -> f64 {
        (self.f)(x)
    }
    fn gradient(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        Some((self.g)(x))
    }
}

#[derive(Debug, Clone)]
pub struct OptResult {
    pub x_star: DVector<f64>,
    pub value: f64,
    pub starts_used: usize,
    /// Convergence flag per start, in start order.
    pub converged: Vec<bool>,
    /// Terminal point and value of every start, in start order.
    pub candidates: Vec<(DVector<f64>, f64)>,
}

#[derive(Debug, Clone)]
pub struct MaximizeOpts {
    pub restarts: usize,
    pub raw: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub pg_tol: f64,
    /// Scale of the first steepest-ascent step as a fraction of the mean box
    /// width. Local polish runs use a small value so they stay within the
    /// starting basin.
    pub first_step_frac: f64,
    /// Finish each run with safeguarded finite-difference Newton steps.
    /// Squeezes the terminal to machine-level stationarity on smooth
    /// objectives, which coupled-increment estimation needs.
    pub newton_polish: bool,
    /// Points always included as starts, ahead of the screened candidates.
    /// Used for warm starts and level anchoring.
    pub extra_starts: Vec<DVector<f64>>,
}

impl MaximizeOpts {
    pub fn new(restarts: usize, raw: usize, seed: u64) -> Self {
        Self {
            restarts,
            raw,
            seed,
            max_iters: 200,
            pg_tol: 1e-8,
            first_step_frac: 0.02,
            newton_polish: false,
            extra_starts: Vec::new(),
        }
    }

    /// Spec defaults: 10 restarts over 512 * d raw candidates.
    pub fn default_for(domain: &BoxDomain, seed: u64) -> Self {
        Self::new(10, 512 * domain.dim(), seed)
    }

    pub fn with_extra_starts(mut self, starts: Vec<DVector<f64>>) -> Self {
        self.extra_starts = starts;
        self
    }

    pub fn with_max_iters(mut self, iters: usize) -> Self {
        self.max_iters = iters;
        self
    }
}

/// Maximizes `objective` over `domain` with multi-start projected L-BFGS.
/// Value ties within 1e-12 are broken by the lowest start index.
pub fn maximize(
    objective: &dyn Objective,
    domain: &BoxDomain,
    restarts: usize,
    raw: usize,
    seed: u64,
) -> Result<OptResult, OptError> {
    maximize_with(objective, domain, &MaximizeOpts::new(restarts, raw, seed))
}

pub fn maximize_with(
    objective: &dyn Objective,
    domain: &BoxDomain,
    opts: &MaximizeOpts,
) -> Result<OptResult, OptError> {
    // restarts = 0 is a pure-local mode: only the supplied extra starts run,
    // with no raw screening.
    if (opts.restarts < 1 && opts.extra_starts.is_empty()) || opts.raw < opts.restarts {
        return Err(OptError::BadBudget {
            restarts: opts.restarts,
            raw: opts.raw,
        });
    }
    let (screened, best_raw) = if opts.restarts > 0 {
        let raws = raw_candidates(domain, opts.raw, opts.seed);
        let mut scored: Vec<(usize, f64)> = raws
            .iter()
            .enumerate()
            .map(|(i, x)| (i, objective.value(x)))
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
        let screened: Vec<DVector<f64>> = scored
            .iter()
            .take(opts.restarts)
            .map(|&(i, _)| raws[i].clone())
            .collect();
        let best_raw = scored
            .iter()
            .find(|(_, v)| v.is_finite())
            .map(|&(i, v)| (raws[i].clone(), v));
        (screened, best_raw)
    } else {
        (Vec::new(), None)
    };

    let mut starts: Vec<DVector<f64>> = Vec::with_capacity(opts.extra_starts.len() + screened.len());
    for s in &opts.extra_starts {
        starts.push(domain.clamp(s));
    }
    starts.extend(screened);

    let mut candidates: Vec<(DVector<f64>, f64)> = Vec::with_capacity(starts.len());
    let mut converged = Vec::with_capacity(starts.len());
    for start in &starts {
        let mut run = lbfgs_ascent(
            objective,
            domain,
            start,
            opts.max_iters,
            opts.pg_tol,
            opts.first_step_frac,
        );
        if opts.newton_polish && run.value.is_finite() {
            let (x, v) = newton_refine(objective, domain, &run.x, run.value);
            run.x = x;
            run.value = v;
        }
        candidates.push((run.x, run.value));
        converged.push(run.converged);
    }

    let mut best: Option<(usize, f64)> = None;
    for (i, (_, v)) in candidates.iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        match best {
            None => best = Some((i, *v)),
            // Strictly-better only beyond the tie tolerance keeps the lowest index.
            Some((_, bv)) if *v > bv + 1e-12 => best = Some((i, *v)),
            _ => {}
        }
    }
    match best {
        Some((i, v)) => Ok(OptResult {
            x_star: candidates[i].0.clone(),
            value: v,
            starts_used: starts.len(),
            converged,
            candidates,
        }),
        None => {
            // Every start failed outright; fall back to the best raw point.
            let (x, v) = best_raw.ok_or(OptError::AllCandidatesNonFinite)?;
            let n = starts.len();
            Ok(OptResult {
                x_star: x.clone(),
                value: v,
                starts_used: n,
                converged: vec![false; n],
                candidates: vec![(x, v)],
            })
        }
    }
}

struct AscentRun {
    x: DVector<f64>,
    value: f64,
    converged: bool,
}

fn gradient_of(
    objective: &dyn Objective,
    domain: &BoxDomain,
    x: &DVector<f64>,
    fx: f64,
) -> DVector<f64> {
    if let Some(g) = objective.gradient(x) {
        return g;
    }
    // Central differences with step 1e-6 * width, falling back to one-sided
    // at active bounds. (Forward differences stall a factor of the step size
    // away from smooth optima, which breaks the advertised 1e-6 accuracy.)
    let d = domain.dim();
    let mut g = DVector::zeros(d);
    for i in 0..d {
        let h = 1e-6 * domain.width(i);
        let up_ok = x[i] + h <= domain.upper()[i];
        let dn_ok = x[i] - h >= domain.lower()[i];
        let mut xp = x.clone();
        let mut xm = x.clone();
        g[i] = if up_ok && dn_ok {
            xp[i] = x[i] + h;
            xm[i] = x[i] - h;
            (objective.value(&xp) - objective.value(&xm)) / (2.0 * h)
        } else if up_ok {
            xp[i] = x[i] + h;
            (objective.value(&xp) - fx) / h
        } else {
            xm[i] = x[i] - h;
            (fx - objective.value(&xm)) / h
        };
    }
    g
}

/// Zeroes gradient components that push out of the box at active bounds.
fn project_gradient(domain: &BoxDomain, x: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
    let mut pg = g.clone();
    for i in 0..x.len() {
        let at_lower = x[i] <= domain.lower()[i];
        let at_upper = x[i] >= domain.upper()[i];
        if (at_lower && g[i] < 0.0) || (at_upper && g[i] > 0.0) {
            pg[i] = 0.0;
        }
    }
    pg
}

fn lbfgs_ascent(
    objective: &dyn Objective,
    domain: &BoxDomain,
    start: &DVector<f64>,
    max_iters: usize,
    pg_tol: f64,
    first_step_frac: f64,
) -> AscentRun {
    const MEMORY: usize = 8;
    const C1: f64 = 1e-4;
    let mut x = domain.clamp(start);
    let mut fx = objective.value(&x);
    if !fx.is_finite() {
        return AscentRun {
            x,
            value: fx,
            converged: false,
        };
    }
    let mut g = gradient_of(objective, domain, &x, fx);
    let mean_width: f64 =
        (0..domain.dim()).map(|i| domain.width(i)).sum::<f64>() / domain.dim() as f64;

    let mut s_mem: Vec<DVector<f64>> = Vec::new();
    let mut y_mem: Vec<DVector<f64>> = Vec::new();
    let mut rho: Vec<f64> = Vec::new();
    let mut converged = false;

    for _ in 0..max_iters {
        let pg = project_gradient(domain, &x, &g);
        if pg.norm() <= pg_tol {
            converged = true;
            break;
        }
        // Two-loop recursion on the minimization of -f.
        let mut d = pg.clone();
        if !s_mem.is_empty() {
            let mut q = -&pg;
            let k = s_mem.len();
            let mut a = vec![0.0; k];
            for i in (0..k).rev() {
                a[i] = rho[i] * s_mem[i].dot(&q);
                q -= &y_mem[i] * a[i];
            }
            let gamma = s_mem[k - 1].dot(&y_mem[k - 1]) / y_mem[k - 1].norm_squared();
            let mut r = q * gamma;
            for i in 0..k {
                let b = rho[i] * y_mem[i].dot(&r);
                r += &s_mem[i] * (a[i] - b);
            }
            d = -r;
            if d.dot(&pg) <= 0.0 {
                // Not an ascent direction; reset.
                s_mem.clear();
                y_mem.clear();
                rho.clear();
                d = pg.clone();
            }
        }
        if s_mem.is_empty() {
            // Scale the first steepest-ascent step to a fraction of the box.
            let n = d.norm();
            if n > 0.0 {
                d *= first_step_frac * mean_width / n;
            }
        }

        // Backtracking line search along the projected arc. On failure,
        // restart once from steepest ascent before giving up: stale
        // curvature pairs can produce unusable directions near flat tops.
        let mut accepted = false;
        let mut x_new = x.clone();
        let mut f_new = fx;
        'search: for attempt in 0..2 {
            let mut t = 1.0;
            for _ in 0..40 {
                let cand = domain.clamp(&(&x + &d * t));
                let step = &cand - &x;
                if step.norm() == 0.0 {
                    break;
                }
                let f_cand = objective.value(&cand);
                if f_cand.is_finite() && f_cand >= fx + C1 * g.dot(&step) {
                    x_new = cand;
                    f_new = f_cand;
                    accepted = true;
                    break 'search;
                }
                t *= 0.5;
            }
            if attempt == 0 && !s_mem.is_empty() {
                s_mem.clear();
                y_mem.clear();
                rho.clear();
                d = pg.clone();
                let n = d.norm();
                if n > 0.0 {
                    d *= first_step_frac * mean_width / n;
                }
            } else {
                break;
            }
        }
        if !accepted {
            break;
        }

        let g_new = gradient_of(objective, domain, &x_new, f_new);
        let s = &x_new - &x;
        // Curvature pairs of the minimization problem: y = (-g_new) - (-g).
        let yk = &g - &g_new;
        let sy = s.dot(&yk);
        if sy > 1e-12 * s.norm() * yk.norm() {
            s_mem.push(s);
            y_mem.push(yk);
            rho.push(1.0 / sy);
            if s_mem.len() > MEMORY {
                s_mem.remove(0);
                y_mem.remove(0);
                rho.remove(0);
            }
        }
        x = x_new;
        fx = f_new;
        g = g_new;
    }
    AscentRun {
        x,
        value: fx,
        converged,
    }
}

/// Safeguarded finite-difference Newton ascent steps from a terminal point.
/// Steps that do not improve the value are rejected, so this can only help.
fn newton_refine(
    objective: &dyn Objective,
    domain: &BoxDomain,
    x0: &DVector<f64>,
    f0: f64,
) -> (DVector<f64>, f64) {
    let d = domain.dim();
    let mut x = x0.clone();
    let mut fx = f0;
    for _ in 0..3 {
        let h: Vec<f64> = (0..d).map(|i| 1e-4 * domain.width(i)).collect();
        // Central gradient and Hessian.
        let mut grad = DVector::zeros(d);
        let mut hess = nalgebra::DMatrix::zeros(d, d);
        let probe = |dx: &[f64]| {
            let mut xp = x.clone();
            for i in 0..d {
                xp[i] += dx[i];
            }
            objective.value(&domain.clamp(&xp))
        };
        let mut fplus = vec![0.0; d];
        let mut fminus = vec![0.0; d];
        for i in 0..d {
            let mut dx = vec![0.0; d];
            dx[i] = h[i];
            fplus[i] = probe(&dx);
            dx[i] = -h[i];
            fminus[i] = probe(&dx);
            grad[i] = (fplus[i] - fminus[i]) / (2.0 * h[i]);
            hess[(i, i)] = (fplus[i] - 2.0 * fx + fminus[i]) / (h[i] * h[i]);
        }
        for i in 0..d {
            for j in (i + 1)..d {
                let mut dx = vec![0.0; d];
                dx[i] = h[i];
                dx[j] = h[j];
                let fpp = probe(&dx);
                dx[i] = -h[i];
                dx[j] = -h[j];
                let fmm = probe(&dx);
                let v = (fpp - fplus[i] - fplus[j] + 2.0 * fx - fminus[i] - fminus[j] + fmm)
                    / (2.0 * h[i] * h[j]);
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        // Ascent requires a negative-definite Hessian; otherwise stop.
        let neg = -hess;
        let Some(chol) = nalgebra::Cholesky::new(neg) else {
            break;
        };
        let step = chol.solve(&grad);
        // Cap the step to stay local.
        let cap: f64 = (0..d).map(|i| 0.01 * domain.width(i)).sum::<f64>() / d as f64;
        let step = if step.norm() > cap {
            &step * (cap / step.norm())
        } else {
            step
        };
        let cand = domain.clamp(&(&x + step));
        let f_cand = objective.value(&cand);
        if f_cand.is_finite() && f_cand >= fx {
            let moved = (&cand - &x).norm();
            x = cand;
            fx = f_cand;
            if moved < 1e-12 {
                break;
            }
        } else {
            break;
        }
    }
    (x, fx)
}

/// Scrambled Halton points mapped into the box: per-dimension digit
/// permutations plus a Cranley-Patterson rotation, deterministic in `seed`.
pub fn raw_candidates(domain: &BoxDomain, raw: usize, seed: u64) -> Vec<DVector<f64>> {
    assert!(raw >= 1);
    let d = domain.dim();
    let bases = primes(d);
    let mut rng = rng_from(seed, &[0x7a77u64]);
    // Digit permutations fixing 0 so finite expansions stay exact.
    let perms: Vec<Vec<usize>> = bases
        .iter()
        .map(|&b| {
            let mut p: Vec<usize> = (1..b).collect();
            for i in (1..p.len()).rev() {
                let j = rng.random_range(0..=i);
                p.swap(i, j);
            }
            let mut full = vec![0usize];
            full.extend(p);
            full
        })
        .collect();
    let shifts: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();

    (0..raw)
        .map(|idx| {
            let u = DVector::from_iterator(
                d,
                (0..d).map(|k| {
                    let h = radical_inverse(idx + 1, bases[k], &perms[k]);
                    (h + shifts[k]).fract()
                }),
            );
            domain.from_unit(&u)
        })
        .collect()
}

fn radical_inverse(mut n: usize, base: usize, perm: &[usize]) -> f64 {
    let mut inv = 0.0;
    let mut denom = 1.0;
    while n > 0 {
        denom *= base as f64;
        inv += perm[n % base] as f64 / denom;
        n /= base;
    }
    inv
}

fn primes(count: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(count);
    let mut candidate = 2usize;
    while out.len() < count {
        if (2..candidate).all(|k| candidate % k != 0) {
            out.push(candidate);
        }
        candidate += 1;
    }
    out
}
