//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use lorasense::dataset::TrafficClass;
use lorasense::svm::{max_kkt_violation, train_binary, KernelSpec, SmoParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn kernel_matrix(x: &[Vec<f64>], kernel: &KernelSpec<f64>) -> Vec<Vec<f64>> {
    x.iter()
        .map(|a| x.iter().map(|b| kernel.eval(a, b)).collect())
        .collect()
}

/// Euclidean projection onto `{0 <= a <= c, y'a = 0}` by bisection on the
/// multiplier of the equality constraint.
fn project(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let at = |lam: f64| -> Vec<f64> {
        v.iter()
            .zip(y)
            .map(|(&vi, &yi)| (vi - lam * yi).clamp(0.0, c))
            .collect()
    };
    let residual = |a: &[f64]| a.iter().zip(y).map(|(ai, yi)| ai * yi).sum::<f64>();
    let bound = v.iter().fold(0.0f64, |m, x| m.max(x.abs())) + c + 1.0;
    let (mut lo, mut hi) = (-bound, bound);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if residual(&at(mid)) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

/// Dual objective `sum(a) - a'Qa/2` with `Q_ij = y_i y_j K_ij`.
pub fn dual_value(a: &[f64], y: &[f64], k: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += a[i] * a[j] * y[i] * y[j] * k[i][j];
        }
    }
    a.iter().sum::<f64>() - 0.5 * quad
}

/// Maximizes the SVM dual by accelerated projected gradient with adaptive
/// restart, run until the iterates stop moving.
pub fn qp_oracle(x: &[Vec<f64>], y: &[f64], kernel: &KernelSpec<f64>, c: f64) -> Vec<f64> {
    let n = x.len();
    let k = kernel_matrix(x, kernel);
    let q: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| y[i] * y[j] * k[i][j]).collect())
        .collect();

    // Largest eigenvalue of Q by power iteration.
    let mut v = vec![1.0; n];
    let mut lipschitz = 1.0;
    for _ in 0..500 {
        let w: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| q[i][j] * v[j]).sum())
            .collect();
        let norm = w.iter().map(|t| t * t).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        lipschitz = norm / v.iter().map(|t| t * t).sum::<f64>().sqrt();
        v = w.iter().map(|t| t / norm).collect();
    }
    let step = 1.0 / (lipschitz * 1.01 + 1e-12);

    let grad = |a: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| (0..n).map(|j| q[i][j] * a[j]).sum::<f64>() - 1.0)
            .collect()
    };
    let mut a = project(&vec![0.0; n], y, c);
    let mut z = a.clone();
    let mut t = 1.0f64;
    for _ in 0..400_000 {
        let g = grad(&z);
        let next = project(
            &z.iter()
                .zip(&g)
                .map(|(zi, gi)| zi - step * gi)
                .collect::<Vec<_>>(),
            y,
            c,
        );
        let moved = next
            .iter()
            .zip(&a)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let restart = g
            .iter()
            .zip(next.iter().zip(&a))
            .map(|(gi, (p, q))| gi * (p - q))
            .sum::<f64>()
            > 0.0;
        if restart {
            z = next.clone();
            t = 1.0;
        } else {
            z = next
                .iter()
                .zip(&a)
                .map(|(p, q)| p + (t - 1.0) / t_next * (p - q))
                .collect();
            t = t_next;
        }
        a = next;
        if moved < 1e-14 && !restart {
            break;
        }
    }
    a
}

/// Bias consistent with the KKT conditions of `a`: the mean over free
/// multipliers, else the midpoint of the feasible interval.
pub fn oracle_bias(a: &[f64], y: &[f64], k: &[Vec<f64>], c: f64) -> f64 {
    let n = a.len();
    let eps = 1e-8 * c.max(1.0);
    let mut free = Vec::new();
    let (mut lower, mut upper) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..n {
        let r = y[i] - (0..n).map(|j| a[j] * y[j] * k[i][j]).sum::<f64>();
        if a[i] > eps && a[i] < c - eps {
            free.push(r);
        } else if (a[i] <= eps) == (y[i] > 0.0) {
            lower = lower.max(r);
        } else {
            upper = upper.min(r);
        }
    }
    if !free.is_empty() {
        free.iter().sum::<f64>() / free.len() as f64
    } else {
        0.5 * (lower + upper)
    }
}

pub struct SvmFixture {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub kernel: KernelSpec<f64>,
    pub c: f64,
}

/// Randomized two-class problem: at most 20 points in at most 3 dimensions,
/// two overlapping Gaussian blobs.
pub fn svm_fixture(index: u64) -> SvmFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0000 + index);
    let n = rng.random_range(4..=20usize);
    let dim = rng.random_range(1..=3usize);
    let spread = rng.random_range(0.3..1.5);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = if i % 2 == 0 { 1.0 } else { -1.0 };
        let p: Vec<f64> = (0..dim)
            .map(|_| label * 0.8 + spread * (rng.random::<f64>() * 2.0 - 1.0) * 1.7)
            .collect();
        x.push(p);
        y.push(label);
    }
    let c = [0.1, 1.0, 10.0][(index % 3) as usize];
    let kernel = if index % 2 == 0 {
        KernelSpec::Linear
    } else {
        KernelSpec::Rbf {
            gamma: rng.random_range(0.2..2.0),
        }
    };
    SvmFixture { x, y, kernel, c }
}

pub struct OracleComparison {
    pub objective_gap: f64,
    pub kkt_violation: f64,
    pub grid_agreement: f64,
}

/// Trains SMO with default tolerances on the fixture and compares it with
/// the dense QP oracle.
pub fn compare_with_oracle(f: &SvmFixture, seed: u64) -> OracleComparison {
    let pair = (TrafficClass::new(1).unwrap(), TrafficClass::new(2).unwrap());
    let params = SmoParams {
        c: f.c,
        seed,
        ..SmoParams::default()
    };
    let fit = train_binary(&f.x, &f.y, f.kernel, pair, &params).expect("smo trains");
    let k = kernel_matrix(&f.x, &f.kernel);
    let smo_obj = dual_value(&fit.alphas, &f.y, &k);
    let oracle = qp_oracle(&f.x, &f.y, &f.kernel, f.c);
    let oracle_obj = dual_value(&oracle, &f.y, &k);
    let bias = oracle_bias(&oracle, &f.y, &k, f.c);

    let dim = f.x[0].len();
    let (mut lo, mut hi) = (vec![f64::INFINITY; dim], vec![f64::NEG_INFINITY; dim]);
    for p in &f.x {
        for d in 0..dim {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let per_axis = [400usize, 40, 12][dim - 1];
    let total = per_axis.pow(dim as u32);
    let mut agree = 0usize;
    for idx in 0..total {
        let mut rem = idx;
        let g: Vec<f64> = (0..dim)
            .map(|d| {
                let s = rem % per_axis;
                rem /= per_axis;
                lo[d] + (hi[d] - lo[d]) * (s as f64 + 0.37) / per_axis as f64
            })
            .collect();
        let oracle_dec = bias
            + (0..f.x.len())
                .map(|j| oracle[j] * f.y[j] * f.kernel.eval(&f.x[j], &g))
                .sum::<f64>();
        if (oracle_dec >= 0.0) == (fit.svm.decision(&g) >= 0.0) {
            agree += 1;
        }
    }
    OracleComparison {
        objective_gap: (smo_obj - oracle_obj).abs(),
        kkt_violation: max_kkt_violation(&fit, &f.x, &f.y, f.c),
        grid_agreement: agree as f64 / total as f64,
    }
}
