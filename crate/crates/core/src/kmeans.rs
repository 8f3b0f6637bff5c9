//! K-means clustering baseline with majority-vote cluster labelling.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, TrafficClass};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::svm::MODEL_FORMAT_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub n_restarts: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            k: 5,
            seed: 42,
            max_iter: 300,
            n_restarts: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct KMeansModel<T> {
    pub k: usize,
    pub centroids: Vec<Vec<T>>,
    pub inertia: T,
    /// Filled by [`assign_classes`]; empty until then.
    pub cluster_to_class: Vec<TrafficClass>,
    pub iterations: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct KMeansFile<T> {
    format_version: u32,
    model: String,
    #[serde(flatten)]
    body: KMeansModel<T>,
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
}

/// Nearest centroid, ties to the lowest index.
fn nearest<T: Scalar>(centroids: &[Vec<T>], x: &[T]) -> (usize, T) {
    let mut best = (0, sq_dist(&centroids[0], x));
    for (j, c) in centroids.iter().enumerate().skip(1) {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Distance-weighted (k-means++) seeding.
fn seed_centroids<T: Scalar>(points: &[&[T]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<T>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].to_vec()];
    let mut d2: Vec<T> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total = d2.iter().fold(T::zero(), |a, &b| a + b);
        let pick = if total > T::zero() {
            let target = T::of(rng.random::<f64>()) * total;
            let mut acc = T::zero();
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick].to_vec();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

struct Run<T> {
    centroids: Vec<Vec<T>>,
    inertia: T,
    iterations: usize,
    history: Vec<T>,
}

fn lloyd<T: Scalar>(points: &[&[T]], k: usize, max_iter: usize, rng: &mut ChaCha8Rng) -> Run<T> {
    let dim = points[0].len();
    let mut centroids = seed_centroids(points, k, rng);
    let mut assign = vec![usize::MAX; points.len()];
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let mut changed = false;
        let mut inertia = T::zero();
        for (a, p) in assign.iter_mut().zip(points) {
            let (j, d) = nearest(&centroids, p);
            inertia += d;
            if *a != j {
                *a = j;
                changed = true;
            }
        }
        history.push(inertia);
        if !changed || iterations >= max_iter {
            return Run {
                centroids,
                inertia,
                iterations,
                history,
            };
        }
        iterations += 1;

        let mut sums = vec![vec![T::zero(); dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assign.iter().zip(points) {
            counts[a] += 1;
            for (s, &v) in sums[a].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                let n = T::of_usize(counts[j]);
                centroids[j] = sums[j].iter().map(|&s| s / n).collect();
            }
        }
        // Reseed empty clusters from the point farthest from its centroid.
        for j in 0..k {
            if counts[j] == 0 {
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        let da = sq_dist(points[a], &centroids[assign[a]]);
                        let db = sq_dist(points[b], &centroids[assign[b]]);
                        da.partial_cmp(&db)
                            .unwrap_or(std::cmp::Ordering::Equal)
                            .then(b.cmp(&a))
                    })
                    .expect("non-empty input");
                counts[assign[far]] -= 1;
                assign[far] = j;
                counts[j] = 1;
                centroids[j] = points[far].to_vec();
            }
        }
    }
}

/// Lloyd's algorithm from k-means++ seeds, best of `n_restarts` by inertia.
pub fn fit<T: Scalar>(ds: &Dataset<T>, params: &KMeansParams) -> Result<KMeansModel<T>> {
    Ok(fit_traced(ds, params)?.0)
}

/// Like [`fit`], also returning the inertia after each assignment step of the
/// winning restart.
pub fn fit_traced<T: Scalar>(
    ds: &Dataset<T>,
    params: &KMeansParams,
) -> Result<(KMeansModel<T>, Vec<T>)> {
    let k = params.k;
    if k == 0 || params.max_iter == 0 || params.n_restarts == 0 {
        return Err(Error::Domain(
            "k, max_iter and n_restarts must be >= 1".into(),
        ));
    }
    let points: Vec<&[T]> = ds.vectors.iter().map(|v| v.features.as_slice()).collect();
    if points.iter().flat_map(|p| p.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite feature values".into()));
    }
    let mut distinct: Vec<Vec<u64>> = points
        .iter()
        .map(|p| p.iter().map(|v| v.to_f64_lossy().to_bits()).collect())
        .collect();
    distinct.sort();
    distinct.dedup();
    if k > distinct.len() {
        return Err(Error::Domain(format!(
            "k = {k} exceeds the {} distinct vectors",
            distinct.len()
        )));
    }

    let runs: Vec<Run<T>> = (0..params.n_restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(r as u64);
            lloyd(&points, k, params.max_iter, &mut rng)
        })
        .collect();
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.inertia < a.inertia { b } else { a })
        .expect("n_restarts >= 1");
    Ok((
        KMeansModel {
            k,
            centroids: best.centroids,
            inertia: best.inertia,
            cluster_to_class: Vec::new(),
            iterations: best.iterations,
        },
        best.history,
    ))
}

impl<T: Scalar> KMeansModel<T> {
    pub fn cluster_of(&self, x: &[T]) -> Result<usize> {
        let dim = self.centroids[0].len();
        if x.len() != dim {
            return Err(Error::Domain(format!(
                "feature dimension {} does not match model dimension {dim}",
                x.len()
            )));
        }
        Ok(nearest(&self.centroids, x).0)
    }

    /// Class of the nearest centroid.
    pub fn predict(&self, x: &[T]) -> Result<TrafficClass> {
        if self.cluster_to_class.len() != self.k {
            return Err(Error::Label("cluster-to-class mapping not assigned".into()));
        }
        Ok(self.cluster_to_class[self.cluster_of(x)?])
    }

    pub fn predict_dataset(&self, ds: &Dataset<T>) -> Result<Vec<TrafficClass>> {
        ds.vectors
            .iter()
            .map(|v| self.predict(&v.features))
            .collect()
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        let file = KMeansFile {
            format_version: MODEL_FORMAT_VERSION,
            model: "kmeans".into(),
            body: self.clone(),
        };
        serde_json::to_writer_pretty(out, &file)?;
        Ok(())
    }

    pub fn read_json<R: Read>(input: R) -> Result<Self> {
        let file: KMeansFile<T> = serde_json::from_reader(input)?;
        if file.format_version != MODEL_FORMAT_VERSION || file.model != "kmeans" {
            return Err(Error::Format(format!(
                "unsupported model file (model={}, format_version={})",
                file.model, file.format_version
            )));
        }
        Ok(file.body)
    }
}

/// Labels each cluster with the majority class of its members (ties to the
/// lowest class id, empty clusters to class 1).
pub fn assign_classes<T: Scalar>(
    model: &KMeansModel<T>,
    ds: &Dataset<T>,
) -> Result<KMeansModel<T>> {
    let labels = ds.labels()?;
    let mut tally = vec![[0usize; TrafficClass::COUNT]; model.k];
    for (v, l) in ds.vectors.iter().zip(labels) {
        let j = model.cluster_of(&v.features)?;
        tally[j][usize::from(l.id()) - 1] += 1;
    }
    let cluster_to_class = tally
        .iter()
        .map(|t| {
            let mut best = 0;
            for (i, &n) in t.iter().enumerate() {
                if n > t[best] {
                    best = i;
                }
            }
            TrafficClass::new(best as u8 + 1).expect("index within class range")
        })
        .collect();
    Ok(KMeansModel {
        cluster_to_class,
        ..model.clone()
    })
}
