//! Kernel SVM classifier: SMO-trained binary machines combined one-vs-one.

mod cv;
mod smo;

pub use cv::{cross_validate, CvReport};
pub use smo::{dual_objective, max_kkt_violation, train_binary, BinaryFit, BinarySvm, SmoParams};

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, TrafficClass};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", bound = "T: Scalar")]
pub enum KernelSpec<T> {
    Linear,
    /// `exp(-gamma |a - b|^2)`
    Rbf {
        gamma: T,
    },
}

impl<T: Scalar> KernelSpec<T> {
    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::Rbf { gamma } if !(*gamma > T::zero()) || !gamma.is_finite() => {
                Err(Error::Domain(format!("rbf gamma must be > 0, got {gamma}")))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, a: &[T], b: &[T]) -> T {
        match self {
            KernelSpec::Linear => a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y),
            KernelSpec::Rbf { gamma } => {
                let d2 = a
                    .iter()
                    .zip(b)
                    .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y));
                (-*gamma * d2).exp()
            }
        }
    }
}

/// Kernel requested for training; `Rbf { gamma: None }` derives gamma from
/// the standardized training set as `1 / (d * mean feature variance)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelChoice<T> {
    Linear,
    Rbf { gamma: Option<T> },
}

impl<T> Default for KernelChoice<T> {
    fn default() -> Self {
        KernelChoice::Rbf { gamma: None }
    }
}

/// Per-feature standardization `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Scaler<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Scalar> Scaler<T> {
    /// Population statistics; a constant feature gets `std = 1`.
    pub fn fit(rows: &[&[T]]) -> Self {
        let d = rows.first().map_or(0, |r| r.len());
        let n = T::of_usize(rows.len().max(1));
        let mut mean = vec![T::zero(); d];
        for r in rows {
            for (m, &v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![T::zero(); d];
        for r in rows {
            for ((s, &v), &m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > T::zero() && sd.is_finite() {
                    sd
                } else {
                    T::one()
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn transform(&self, x: &[T]) -> Vec<T> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((&v, &m), &s)| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams<T> {
    pub kernel: KernelChoice<T>,
    pub c: T,
    pub tol: T,
    pub max_passes: usize,
    pub seed: u64,
}

impl<T: Scalar> Default for SvmParams<T> {
    fn default() -> Self {
        Self {
            kernel: KernelChoice::default(),
            c: T::one(),
            tol: T::of(1e-3),
            max_passes: 50,
            seed: 42,
        }
    }
}

/// One-vs-one multiclass model with its input scaler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SvmModel<T> {
    /// Gateway ids in feature order.
    #[serde(default)]
    pub feature_names: Vec<String>,
    pub kernel: KernelSpec<T>,
    pub scaler: Scaler<T>,
    pub classes: Vec<TrafficClass>,
    pub binaries: Vec<BinarySvm<T>>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct SvmModelFile<T> {
    format_version: u32,
    model: String,
    #[serde(flatten)]
    body: SvmModel<T>,
}

/// Trains one binary machine per unordered class pair.
pub fn train<T: Scalar>(ds: &Dataset<T>, params: &SvmParams<T>) -> Result<SvmModel<T>> {
    let labels = ds.labels()?;
    let classes = ds.classes();
    if classes.len() < 2 {
        return Err(Error::DegenerateTraining(format!(
            "need at least two classes, found {}",
            classes.len()
        )));
    }
    let dim = ds.dim();
    for (i, v) in ds.vectors.iter().enumerate() {
        if v.features.len() != dim {
            return Err(Error::Domain(format!(
                "vector {i} has dimension {}",
                v.features.len()
            )));
        }
    }
    let rows: Vec<&[T]> = ds.vectors.iter().map(|v| v.features.as_slice()).collect();
    let scaler = Scaler::fit(&rows);
    let x: Vec<Vec<T>> = rows.iter().map(|r| scaler.transform(r)).collect();
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite feature values".into()));
    }

    let kernel = match params.kernel {
        KernelChoice::Linear => KernelSpec::Linear,
        KernelChoice::Rbf { gamma: Some(gamma) } => KernelSpec::Rbf { gamma },
        KernelChoice::Rbf { gamma: None } => KernelSpec::Rbf {
            gamma: auto_gamma(&x),
        },
    };
    kernel.validate()?;

    let mut pairs = Vec::new();
    for a in 0..classes.len() {
        for b in a + 1..classes.len() {
            pairs.push((classes[a], classes[b]));
        }
    }
    let binaries = pairs
        .par_iter()
        .enumerate()
        .map(|(p, &(pos, neg))| {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for (xi, &li) in x.iter().zip(&labels) {
                if li == pos || li == neg {
                    xs.push(xi.clone());
                    ys.push(if li == pos { T::one() } else { -T::one() });
                }
            }
            let smo = SmoParams {
                c: params.c,
                tol: params.tol,
                max_passes: params.max_passes,
                seed: params
                    .seed
                    .wrapping_add((p as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
                max_iter: 0,
            };
            train_binary(&xs, &ys, kernel, (pos, neg), &smo).map(|f| f.svm)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SvmModel {
        feature_names: ds.gateway_order.clone(),
        kernel,
        scaler,
        classes,
        binaries,
    })
}

fn auto_gamma<T: Scalar>(x: &[Vec<T>]) -> T {
    let d = x.first().map_or(1, Vec::len).max(1);
    let rows: Vec<&[T]> = x.iter().map(Vec::as_slice).collect();
    let n = T::of_usize(x.len().max(1));
    let mean = Scaler::fit(&rows).mean;
    let mut total_var = T::zero();
    for j in 0..d {
        let s = x.iter().fold(T::zero(), |acc, r| {
            acc + (r[j] - mean[j]) * (r[j] - mean[j])
        });
        total_var += s / n;
    }
    let mean_var = total_var / T::of_usize(d);
    if mean_var > T::zero() {
        T::one() / (T::of_usize(d) * mean_var)
    } else {
        T::one() / T::of_usize(d)
    }
}

/// Majority vote; ties go to the class listed first (lowest id).
pub fn vote_winner(classes: &[TrafficClass], votes: &[u32]) -> TrafficClass {
    let mut best = 0;
    for (i, &v) in votes.iter().enumerate() {
        if v > votes[best] {
            best = i;
        }
    }
    classes[best]
}

impl<T: Scalar> SvmModel<T> {
    pub fn dim(&self) -> usize {
        self.scaler.mean.len()
    }

    /// Predicted class and the vote count per entry of `classes`.
    pub fn predict(&self, x: &[T]) -> Result<(TrafficClass, Vec<u32>)> {
        if x.len() != self.dim() {
            return Err(Error::Domain(format!(
                "feature dimension {} does not match model dimension {}",
                x.len(),
                self.dim()
            )));
        }
        let z = self.scaler.transform(x);
        let mut votes = vec![0u32; self.classes.len()];
        for b in &self.binaries {
            let winner = b.vote(&z);
            if let Some(i) = self.classes.iter().position(|&c| c == winner) {
                votes[i] += 1;
            }
        }
        Ok((vote_winner(&self.classes, &votes), votes))
    }

    pub fn predict_dataset(&self, ds: &Dataset<T>) -> Result<Vec<TrafficClass>> {
        ds.vectors
            .par_iter()
            .map(|v| self.predict(&v.features).map(|(c, _)| c))
            .collect()
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        let file = SvmModelFile {
            format_version: MODEL_FORMAT_VERSION,
            model: "svm".into(),
            body: self.clone(),
        };
        serde_json::to_writer_pretty(out, &file)?;
        Ok(())
    }

    pub fn to_json_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_json(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_json<R: Read>(input: R) -> Result<Self> {
        let file: SvmModelFile<T> = serde_json::from_reader(input)?;
        if file.format_version != MODEL_FORMAT_VERSION || file.model != "svm" {
            return Err(Error::Format(format!(
                "unsupported model file (model={}, format_version={})",
                file.model, file.format_version
            )));
        }
        Ok(file.body)
    }
}
