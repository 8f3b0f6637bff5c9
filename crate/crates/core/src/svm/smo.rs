//! Binary soft-margin SVM trained by sequential minimal optimization.
//!
//! Training runs in two phases over a dense Gram matrix. The first is the
//! simplified SMO sweep: every KKT violator is paired with a second
//! multiplier drawn from the seeded RNG. The second phase repeatedly updates
//! the maximal violating pair (second-order working-set selection) until the
//! KKT gap drops below `tol`, so every model leaves training KKT-clean.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::KernelSpec;
use crate::dataset::TrafficClass;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoParams<T> {
    /// Box constraint `C`.
    pub c: T,
    /// KKT tolerance.
    pub tol: T,
    /// Sweep budget for the random-pair phase.
    pub max_passes: usize,
    pub seed: u64,
    /// Iteration cap for the working-set phase; `0` picks `max(10^6, 200 n)`.
    pub max_iter: usize,
}

impl<T: Scalar> Default for SmoParams<T> {
    fn default() -> Self {
        Self {
            c: T::one(),
            tol: T::of(1e-3),
            max_passes: 50,
            seed: 42,
            max_iter: 0,
        }
    }
}

/// A trained two-class machine. `class_pair.0` is the `+1` side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct BinarySvm<T> {
    pub class_pair: (TrafficClass, TrafficClass),
    pub kernel: KernelSpec<T>,
    pub support_vectors: Vec<Vec<T>>,
    /// `alpha_i * y_i` for each support vector.
    pub dual_coefs: Vec<T>,
    pub bias: T,
}

impl<T: Scalar> BinarySvm<T> {
    pub fn decision(&self, x: &[T]) -> T {
        self.support_vectors
            .iter()
            .zip(&self.dual_coefs)
            .fold(self.bias, |acc, (sv, &coef)| {
                acc + coef * self.kernel.eval(sv, x)
            })
    }

    /// Class voted for by this machine; a zero decision goes to the positive side.
    pub fn vote(&self, x: &[T]) -> TrafficClass {
        if self.decision(x) >= T::zero() {
            self.class_pair.0
        } else {
            self.class_pair.1
        }
    }
}

/// Training output with the full multiplier vector for diagnostics.
#[derive(Debug, Clone)]
pub struct BinaryFit<T> {
    pub svm: BinarySvm<T>,
    /// One multiplier per training point, in input order.
    pub alphas: Vec<T>,
    /// Dual objective `sum(alpha) - 1/2 alpha' Q alpha` at the solution.
    pub objective: T,
    pub random_sweeps: usize,
    pub iterations: usize,
}

pub(crate) fn gram<T: Scalar>(x: &[Vec<T>], kernel: &KernelSpec<T>) -> Vec<T> {
    let n = x.len();
    let mut k = vec![T::zero(); n * n];
    for i in 0..n {
        for j in i..n {
            let v = kernel.eval(&x[i], &x[j]);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

struct Solver<'a, T> {
    n: usize,
    k: &'a [T],
    y: &'a [T],
    c: T,
    alpha: Vec<T>,
    /// Gradient of `1/2 a'Qa - e'a`.
    grad: Vec<T>,
}

impl<'a, T: Scalar> Solver<'a, T> {
    fn q(&self, i: usize, j: usize) -> T {
        self.y[i] * self.y[j] * self.k[i * self.n + j]
    }

    fn update_grad(&mut self, i: usize, di: T, j: usize, dj: T) {
        for t in 0..self.n {
            let g = self.q(t, i) * di + self.q(t, j) * dj;
            self.grad[t] += g;
        }
    }

    fn in_up(&self, t: usize) -> bool {
        (self.y[t] > T::zero() && self.alpha[t] < self.c)
            || (self.y[t] < T::zero() && self.alpha[t] > T::zero())
    }

    fn in_low(&self, t: usize) -> bool {
        (self.y[t] > T::zero() && self.alpha[t] > T::zero())
            || (self.y[t] < T::zero() && self.alpha[t] < self.c)
    }

    /// `f(x_t) - y_t` under bias `b`.
    fn error(&self, t: usize, b: T) -> T {
        self.y[t] * (self.grad[t] + T::one()) + b - self.y[t]
    }

    fn random_phase(&mut self, tol: T, max_passes: usize, seed: u64) -> usize {
        if self.n < 2 {
            return 0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = T::zero();
        let eps = T::of(1e-5);
        let two = T::of(2.0);
        let mut sweeps = 0;
        while sweeps < max_passes {
            sweeps += 1;
            let mut changed = 0;
            for i in 0..self.n {
                let ei = self.error(i, b);
                let r = self.y[i] * ei;
                if !((r < -tol && self.alpha[i] < self.c) || (r > tol && self.alpha[i] > T::zero()))
                {
                    continue;
                }
                let mut j = rng.random_range(0..self.n - 1);
                if j >= i {
                    j += 1;
                }
                let ej = self.error(j, b);
                let (ai, aj) = (self.alpha[i], self.alpha[j]);
                let (lo, hi) = if self.y[i] != self.y[j] {
                    ((aj - ai).max(T::zero()), (self.c + aj - ai).min(self.c))
                } else {
                    ((ai + aj - self.c).max(T::zero()), (ai + aj).min(self.c))
                };
                if lo >= hi {
                    continue;
                }
                let (kii, kjj, kij) = (
                    self.k[i * self.n + i],
                    self.k[j * self.n + j],
                    self.k[i * self.n + j],
                );
                let eta = two * kij - kii - kjj;
                if eta >= T::zero() {
                    continue;
                }
                let mut aj_new = (aj - self.y[j] * (ei - ej) / eta).max(lo).min(hi);
                if (aj_new - aj).abs() < eps {
                    continue;
                }
                let mut ai_new = ai + self.y[i] * self.y[j] * (aj - aj_new);
                ai_new = self.snap(ai_new);
                aj_new = self.snap(aj_new);
                let (di, dj) = (ai_new - ai, aj_new - aj);
                let b1 = b - ei - self.y[i] * di * kii - self.y[j] * dj * kij;
                let b2 = b - ej - self.y[i] * di * kij - self.y[j] * dj * kjj;
                b = if ai_new > T::zero() && ai_new < self.c {
                    b1
                } else if aj_new > T::zero() && aj_new < self.c {
                    b2
                } else {
                    (b1 + b2) / two
                };
                self.alpha[i] = ai_new;
                self.alpha[j] = aj_new;
                self.update_grad(i, di, j, dj);
                changed += 1;
            }
            if changed == 0 {
                break;
            }
        }
        sweeps
    }

    fn snap(&self, a: T) -> T {
        let eps = self.c * T::of(1e-12).max(T::epsilon() * T::of(4.0));
        if a < eps {
            T::zero()
        } else if a > self.c - eps {
            self.c
        } else {
            a
        }
    }

    /// Maximal violating pair with second-order selection of `j`.
    fn select_pair(&self, tol: T) -> Option<(usize, usize)> {
        let mut gmax = T::neg_infinity();
        let mut i_sel = None;
        for t in 0..self.n {
            if self.in_up(t) {
                let v = -self.y[t] * self.grad[t];
                if v > gmax {
                    gmax = v;
                    i_sel = Some(t);
                }
            }
        }
        let i = i_sel?;
        let tau = T::of(1e-12);
        let mut gmin = T::infinity();
        let mut best = T::infinity();
        let mut j_sel = None;
        for t in 0..self.n {
            if !self.in_low(t) {
                continue;
            }
            let v = -self.y[t] * self.grad[t];
            if v < gmin {
                gmin = v;
            }
            let b = gmax - v;
            if b > T::zero() {
                let mut a = self.k[i * self.n + i] + self.k[t * self.n + t]
                    - T::of(2.0) * self.k[i * self.n + t];
                if a <= T::zero() {
                    a = tau;
                }
                let score = -(b * b) / a;
                if score < best {
                    best = score;
                    j_sel = Some(t);
                }
            }
        }
        if gmax - gmin < tol {
            return None;
        }
        j_sel.map(|j| (i, j))
    }

    fn pair_step(&mut self, i: usize, j: usize) {
        let c = self.c;
        let n = self.n;
        let (kii, kjj, kij) = (self.k[i * n + i], self.k[j * n + j], self.k[i * n + j]);
        let mut quad = kii + kjj - T::of(2.0) * kij;
        if quad <= T::zero() {
            quad = T::of(1e-12);
        }
        let (old_i, old_j) = (self.alpha[i], self.alpha[j]);
        let (mut ai, mut aj) = (old_i, old_j);
        if self.y[i] != self.y[j] {
            let delta = (-self.grad[i] - self.grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > T::zero() {
                if aj < T::zero() {
                    aj = T::zero();
                    ai = diff;
                }
            } else if ai < T::zero() {
                ai = T::zero();
                aj = -diff;
            }
            if diff > T::zero() {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let delta = (self.grad[i] - self.grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < T::zero() {
                aj = T::zero();
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < T::zero() {
                ai = T::zero();
                aj = sum;
            }
        }
        let (ai, aj) = (self.snap(ai), self.snap(aj));
        self.alpha[i] = ai;
        self.alpha[j] = aj;
        self.update_grad(i, ai - old_i, j, aj - old_j);
    }

    fn recompute_grad(&mut self) {
        for t in 0..self.n {
            let mut g = -T::one();
            for s in 0..self.n {
                if self.alpha[s] != T::zero() {
                    g += self.q(t, s) * self.alpha[s];
                }
            }
            self.grad[t] = g;
        }
    }

    /// Bias from free multipliers, or the midpoint of the feasible interval.
    fn bias(&self) -> T {
        let mut ub = T::infinity();
        let mut lb = T::neg_infinity();
        let mut sum = T::zero();
        let mut free = 0usize;
        for t in 0..self.n {
            let yg = self.y[t] * self.grad[t];
            let pos = self.y[t] > T::zero();
            if self.alpha[t] >= self.c {
                if pos {
                    lb = lb.max(yg);
                } else {
                    ub = ub.min(yg);
                }
            } else if self.alpha[t] <= T::zero() {
                if pos {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                sum += yg;
                free += 1;
            }
        }
        let rho = if free > 0 {
            sum / T::of_usize(free)
        } else if ub.is_finite() && lb.is_finite() {
            (ub + lb) / T::of(2.0)
        } else if ub.is_finite() {
            ub
        } else {
            lb
        };
        -rho
    }

    fn objective(&self) -> T {
        // sum(a) - 1/2 a'Qa with Qa = grad + 1.
        let two = T::of(2.0);
        (0..self.n).fold(T::zero(), |acc, t| {
            acc + self.alpha[t] - self.alpha[t] * (self.grad[t] + T::one()) / two
        })
    }
}

/// Trains one binary machine on `x` with labels `y` in `{-1, +1}`.
pub fn train_binary<T: Scalar>(
    x: &[Vec<T>],
    y: &[T],
    kernel: KernelSpec<T>,
    class_pair: (TrafficClass, TrafficClass),
    params: &SmoParams<T>,
) -> Result<BinaryFit<T>> {
    kernel.validate()?;
    if x.len() != y.len() {
        return Err(Error::Domain(format!(
            "{} points but {} labels",
            x.len(),
            y.len()
        )));
    }
    if !(params.c > T::zero()) || !(params.tol > T::zero()) {
        return Err(Error::Domain("C and tol must be > 0".into()));
    }
    let dim = x.first().map_or(0, Vec::len);
    for (i, p) in x.iter().enumerate() {
        if p.len() != dim {
            return Err(Error::Domain(format!(
                "point {i} has dimension {} != {dim}",
                p.len()
            )));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("point {i} has non-finite features")));
        }
    }
    if let Some(bad) = y.iter().find(|&&v| v != T::one() && v != -T::one()) {
        return Err(Error::Domain(format!("labels must be +1 or -1, got {bad}")));
    }
    if !(y.iter().any(|&v| v > T::zero()) && y.iter().any(|&v| v < T::zero())) {
        return Err(Error::DegenerateTraining(
            "binary training needs both signs".into(),
        ));
    }

    let n = x.len();
    let k = gram(x, &kernel);
    let mut s = Solver {
        n,
        k: &k,
        y,
        c: params.c,
        alpha: vec![T::zero(); n],
        grad: vec![-T::one(); n],
    };
    let random_sweeps = s.random_phase(params.tol, params.max_passes, params.seed);

    let max_iter = if params.max_iter == 0 {
        (200 * n).max(1_000_000)
    } else {
        params.max_iter
    };
    let mut iterations = 0;
    let mut refreshed = false;
    loop {
        match s.select_pair(params.tol) {
            Some((i, j)) => {
                if iterations >= max_iter {
                    return Err(Error::NotConverged(iterations));
                }
                s.pair_step(i, j);
                iterations += 1;
            }
            None if !refreshed => {
                // Confirm convergence against a freshly computed gradient.
                s.recompute_grad();
                refreshed = true;
            }
            None => break,
        }
    }

    let bias = s.bias();
    let objective = s.objective();
    let mut support_vectors = Vec::new();
    let mut dual_coefs = Vec::new();
    for t in 0..n {
        if s.alpha[t] > T::zero() {
            support_vectors.push(x[t].clone());
            dual_coefs.push(s.alpha[t] * y[t]);
        }
    }
    Ok(BinaryFit {
        svm: BinarySvm {
            class_pair,
            kernel,
            support_vectors,
            dual_coefs,
            bias,
        },
        alphas: s.alpha,
        objective,
        random_sweeps,
        iterations,
    })
}

/// Largest KKT violation of `alphas` over the training set, measured on
/// `y_i f(x_i)` with the machine's bias.
pub fn max_kkt_violation<T: Scalar>(fit: &BinaryFit<T>, x: &[Vec<T>], y: &[T], c: T) -> T {
    let mut worst = T::zero();
    for (t, (p, &yt)) in x.iter().zip(y).enumerate() {
        let m = yt * fit.svm.decision(p);
        let a = fit.alphas[t];
        let v = if a <= T::zero() {
            T::one() - m
        } else if a >= c {
            m - T::one()
        } else {
            (m - T::one()).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Dual objective `sum(a) - 1/2 a'Qa` for an arbitrary multiplier vector.
pub fn dual_objective<T: Scalar>(alphas: &[T], x: &[Vec<T>], y: &[T], kernel: &KernelSpec<T>) -> T {
    let mut quad = T::zero();
    for i in 0..x.len() {
        for j in 0..x.len() {
            quad += alphas[i] * alphas[j] * y[i] * y[j] * kernel.eval(&x[i], &x[j]);
        }
    }
    alphas.iter().fold(T::zero(), |a, &b| a + b) - quad / T::of(2.0)
}
