//! Level and sample-count allocation.

use super::MlmcError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    Plain,
    Antithetic,
}

/// Level schedule: per-level inner counts `M_l = 2^l` and outer counts `N_l`.
#[derive(Debug, Clone)]
pub struct MlmcSchedule {
    pub eps: f64,
    /// Finest level L; the schedule has L+1 entries.
    pub levels: usize,
    pub m: Vec<usize>,
    pub n: Vec<usize>,
    /// Level-0 variance estimate the allocation was built from.
    pub v0: f64,
    pub coupling: Coupling,
    /// Decay-rate assumption behind model-based variances.
    pub beta_hint: f64,
}

impl MlmcSchedule {
    pub fn validate(&self) -> Result<(), MlmcError> {
        if self.m.len() != self.levels + 1 || self.n.len() != self.levels + 1 {
            return Err(MlmcError::BadSchedule(format!(
                "expected {} entries, got m: {}, n: {}",
                self.levels + 1,
                self.m.len(),
                self.n.len()
            )));
        }
        if self.m[0] != 1 {
            return Err(MlmcError::BadSchedule("M_0 must be 1".into()));
        }
        for l in 1..=self.levels {
            if self.m[l] != 2 * self.m[l - 1] {
                return Err(MlmcError::BadSchedule(format!(
                    "M_{l} = {} is not twice M_{}",
                    self.m[l],
                    l - 1
                )));
            }
            if self.n[l] > self.n[l - 1] {
                return Err(MlmcError::BadSchedule(format!(
                    "N_{l} = {} exceeds N_{} = {}",
                    self.n[l],
                    l - 1,
                    self.n[l - 1]
                )));
            }
        }
        if self.n.iter().any(|&n| n == 0) {
            return Err(MlmcError::BadSchedule("all N_l must be positive".into()));
        }
        Ok(())
    }

    /// Single-level schedule (degenerate MLMC = plain MC with one inner draw).
    pub fn single_level(eps: f64, n0: usize) -> Self {
        Self {
            eps,
            levels: 0,
            m: vec![1],
            n: vec![n0.max(1)],
            v0: 1.0,
            coupling: Coupling::Plain,
            beta_hint: 1.0,
        }
    }

    pub fn with_coupling(mut self, coupling: Coupling) -> Self {
        self.coupling = coupling;
        self
    }
}

/// Cost-optimal allocation for fixed variance budget: given per-level
/// variances `v_l` and unit costs `c_l`, returns the real-valued `n_l`
/// meeting `sum v_l / n_l = eps^2` at minimum cost, and that cost.
pub fn lagrange_allocation(
    v: &[f64],
    c: &[f64],
    eps: f64,
) -> Result<(Vec<f64>, f64), MlmcError> {
    assert_eq!(v.len(), c.len());
    if !(eps > 0.0) {
        return Err(MlmcError::BadEps(eps));
    }
    for (i, (&vi, &ci)) in v.iter().zip(c).enumerate() {
        if !(vi > 0.0) || !(ci > 0.0) {
            return Err(MlmcError::NonPositiveAllocation { index: i, v: vi, c: ci });
        }
    }
    let s: f64 = v.iter().zip(c).map(|(&vi, &ci)| (vi * ci).sqrt()).sum();
    let inv_eps2 = 1.0 / (eps * eps);
    let n: Vec<f64> = v
        .iter()
        .zip(c)
        .map(|(&vi, &ci)| inv_eps2 * (vi / ci).sqrt() * s)
        .collect();
    let cost = inv_eps2 * s * s;
    Ok((n, cost))
}

/// Number of levels for target accuracy: `ceil(2 |log eps| / log 2)`.
pub fn levels_for(eps: f64) -> usize {
    (2.0 * eps.ln().abs() / 2.0f64.ln()).ceil() as usize
}

/// Sample counts as printed: `N_0 = eps^-2 K_L sqrt(V_0 / M_0)`,
/// `N_l = eps^-2 K_L / M_l` with `K_L = sqrt(V_0 M_0) + L`, rounded up.
pub fn schedule_from_theorem(
    eps: f64,
    v0: f64,
    l_override: Option<usize>,
) -> Result<MlmcSchedule, MlmcError> {
    schedule_from_theorem_with(eps, v0, l_override, false)
}

/// As [`schedule_from_theorem`], optionally applying the extra `(L+1)`
/// factor that appears in the proof's allocation rather than the printed
/// parameter choice.
pub fn schedule_from_theorem_with(
    eps: f64,
    v0: f64,
    l_override: Option<usize>,
    proof_factor: bool,
) -> Result<MlmcSchedule, MlmcError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(MlmcError::BadEps(eps));
    }
    if !(v0 > 0.0) {
        return Err(MlmcError::BadV0(v0));
    }
    let levels = l_override.unwrap_or_else(|| levels_for(eps));
    let k_l = v0.sqrt() + levels as f64;
    let factor = if proof_factor {
        (levels + 1) as f64
    } else {
        1.0
    };
    let inv_eps2 = 1.0 / (eps * eps);
    let m: Vec<usize> = (0..=levels).map(|l| 1usize << l).collect();
    let mut n: Vec<usize> = (0..=levels)
        .map(|l| {
            let raw = if l == 0 {
                factor * inv_eps2 * k_l * v0.sqrt()
            } else {
                factor * inv_eps2 * k_l / m[l] as f64
            };
            (raw.ceil() as usize).max(1)
        })
        .collect();
    // Small V0 can put the formula's N_0 below N_1; raising N_0 preserves
    // the variance bound and restores monotonicity.
    if levels >= 1 && n[0] < n[1] {
        n[0] = n[1];
    }
    let schedule = MlmcSchedule {
        eps,
        levels,
        m,
        n,
        v0,
        coupling: Coupling::Antithetic,
        beta_hint: 1.0,
    };
    schedule.validate()?;
    Ok(schedule)
}

/// Practical allocation: variances modeled as `w0 2^{-beta l}` with `w0`
/// from a pilot, costs `M_l + 1`, sample counts from the Lagrange solution.
pub fn practical_schedule(
    eps: f64,
    w0: f64,
    beta: f64,
    l_override: Option<usize>,
    coupling: Coupling,
) -> Result<MlmcSchedule, MlmcError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(MlmcError::BadEps(eps));
    }
    if !(w0 > 0.0) {
        return Err(MlmcError::BadV0(w0));
    }
    let levels = l_override.unwrap_or_else(|| levels_for(eps));
    let m: Vec<usize> = (0..=levels).map(|l| 1usize << l).collect();
    let v: Vec<f64> = (0..=levels)
        .map(|l| w0 * 2.0f64.powf(-beta * l as f64))
        .collect();
    let c: Vec<f64> = m.iter().map(|&ml| (ml + 1) as f64).collect();
    let (n_real, _) = lagrange_allocation(&v, &c, eps)?;
    let mut n: Vec<usize> = n_real
        .iter()
        .map(|&x| (x.ceil() as usize).max(1))
        .collect();
    for l in (0..levels).rev() {
        n[l] = n[l].max(n[l + 1]);
    }
    let schedule = MlmcSchedule {
        eps,
        levels,
        m,
        n,
        v0: w0,
        coupling,
        beta_hint: beta,
    };
    schedule.validate()?;
    Ok(schedule)
}

/// Nominal cost in inner-reward evaluations: `sum N_l (M_l + 1)`.
pub fn nominal_cost(schedule: &MlmcSchedule) -> f64 {
    schedule
        .n
        .iter()
        .zip(&schedule.m)
        .map(|(&n, &m)| (n * (m + 1)) as f64)
        .sum()
}
