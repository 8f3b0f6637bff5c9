//! Uplink joining, feature vectors, traffic classes and data splits.

mod io;

pub use io::{parse_records, write_records_csv, write_records_jsonl, RecordFormat, RECORD_COLUMNS};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::RssiRecord;
use crate::scalar::Scalar;

/// Occupancy band of the monitored lot, `1..=5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct TrafficClass(u8);

impl TrafficClass {
    pub const COUNT: usize = 5;

    pub fn new(id: u8) -> Result<Self> {
        if (1..=Self::COUNT as u8).contains(&id) {
            Ok(TrafficClass(id))
        } else {
            Err(Error::Domain(format!(
                "traffic class must be in 1..=5, got {id}"
            )))
        }
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = TrafficClass> {
        (1..=Self::COUNT as u8).map(TrafficClass)
    }

    /// Maps a car count onto its band: `<=17`, `18..=24`, `25..=31`,
    /// `32..=38`, `>=39`.
    pub fn from_occupancy(count: u32) -> Self {
        TrafficClass(match count {
            0..=17 => 1,
            18..=24 => 2,
            25..=31 => 3,
            32..=38 => 4,
            _ => 5,
        })
    }
}

impl TryFrom<u8> for TrafficClass {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        TrafficClass::new(v)
    }
}

impl From<TrafficClass> for u8 {
    fn from(c: TrafficClass) -> u8 {
        c.0
    }
}

impl fmt::Display for TrafficClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub fn label_class(occupancy: i64) -> Result<TrafficClass> {
    if occupancy < 0 {
        return Err(Error::Domain(format!(
            "car count must be >= 0, got {occupancy}"
        )));
    }
    Ok(TrafficClass::from_occupancy(
        u32::try_from(occupancy).unwrap_or(u32::MAX),
    ))
}

/// Per-uplink RSSI vector, one entry per configured gateway.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FeatureVector<T> {
    pub features: Vec<T>,
    pub label: Option<TrafficClass>,
    pub timestamp_s: f64,
}

impl<T: Scalar> FeatureVector<T> {
    pub fn new(features: Vec<T>, label: Option<TrafficClass>) -> Self {
        Self {
            features,
            label,
            timestamp_s: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Dataset<T> {
    pub vectors: Vec<FeatureVector<T>>,
    pub gateway_order: Vec<String>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(vectors: Vec<FeatureVector<T>>, gateway_order: Vec<String>) -> Self {
        Self {
            vectors,
            gateway_order,
        }
    }

    /// Builds an anonymous dataset from raw rows; gateways are named `f0, f1, ...`.
    pub fn from_rows(rows: Vec<Vec<T>>, labels: Vec<TrafficClass>) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        let vectors = rows
            .into_iter()
            .zip(labels)
            .map(|(f, l)| FeatureVector::new(f, Some(l)))
            .collect();
        Self {
            vectors,
            gateway_order: (0..dim).map(|i| format!("f{i}")).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.gateway_order.len()
    }

    /// Vectors per label; unlabeled vectors are counted under `None`.
    pub fn class_counts(&self) -> BTreeMap<Option<TrafficClass>, usize> {
        let mut counts = BTreeMap::new();
        for v in &self.vectors {
            *counts.entry(v.label).or_insert(0) += 1;
        }
        counts
    }

    pub fn classes(&self) -> Vec<TrafficClass> {
        self.vectors
            .iter()
            .filter_map(|v| v.label)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn labels(&self) -> Result<Vec<TrafficClass>> {
        self.vectors
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.label
                    .ok_or_else(|| Error::Label(format!("vector {i} is unlabeled")))
            })
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            vectors: indices.iter().map(|&i| self.vectors[i].clone()).collect(),
            gateway_order: self.gateway_order.clone(),
        }
    }
}

/// Uplink joining parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JoinParams {
    pub join_tolerance_s: f64,
    pub min_gateways: usize,
}

impl Default for JoinParams {
    fn default() -> Self {
        Self {
            join_tolerance_s: 5.0,
            min_gateways: 2,
        }
    }
}

/// Joins gateway reports of the same uplink into feature vectors.
///
/// Records of one node whose timestamps lie within `join_tolerance_s` of the
/// earliest member form a group. Groups heard by fewer than `min_gateways`
/// configured gateways are dropped; a gateway missing from an accepted group
/// is filled with that gateway's mean RSSI over all input records. Records
/// from gateways outside `gateway_order` are ignored.
pub fn build_features<T: Scalar>(
    records: &[RssiRecord],
    gateway_order: &[String],
    params: JoinParams,
) -> Result<Dataset<T>> {
    if gateway_order.is_empty() {
        return Err(Error::Domain("gateway_order must not be empty".into()));
    }
    if !(params.join_tolerance_s >= 0.0) {
        return Err(Error::Domain(format!(
            "join_tolerance_s must be >= 0, got {}",
            params.join_tolerance_s
        )));
    }
    let slot: HashMap<&str, usize> = gateway_order
        .iter()
        .enumerate()
        .map(|(i, g)| (g.as_str(), i))
        .collect();

    let mut sums = vec![(0.0f64, 0usize); gateway_order.len()];
    let mut by_node: BTreeMap<&str, Vec<&RssiRecord>> = BTreeMap::new();
    for r in records {
        if let Some(&g) = slot.get(r.gateway_id.as_str()) {
            sums[g].0 += r.rssi_dbm;
            sums[g].1 += 1;
            by_node.entry(r.node_id.as_str()).or_default().push(r);
        }
    }
    let means: Vec<Option<f64>> = sums
        .iter()
        .map(|&(s, n)| (n > 0).then(|| s / n as f64))
        .collect();

    let mut vectors = Vec::new();
    for (node, mut recs) in by_node {
        recs.sort_by(|a, b| {
            a.timestamp_s
                .total_cmp(&b.timestamp_s)
                .then_with(|| a.gateway_id.cmp(&b.gateway_id))
        });
        let mut start = 0;
        while start < recs.len() {
            let anchor = recs[start].timestamp_s;
            let mut end = start + 1;
            while end < recs.len() && recs[end].timestamp_s - anchor <= params.join_tolerance_s {
                end += 1;
            }
            let group = &recs[start..end];
            start = end;

            let mut values: Vec<Option<f64>> = vec![None; gateway_order.len()];
            let mut label: Option<u32> = None;
            for r in group {
                let g = slot[r.gateway_id.as_str()];
                values[g].get_or_insert(r.rssi_dbm);
                match (label, r.occupancy) {
                    (Some(a), Some(b)) if a != b => {
                        return Err(Error::LabelConflict {
                            node_id: node.to_string(),
                            timestamp_s: anchor,
                        })
                    }
                    (None, Some(b)) => label = Some(b),
                    _ => {}
                }
            }
            if values.iter().filter(|v| v.is_some()).count() < params.min_gateways {
                continue;
            }
            let features = values
                .iter()
                .enumerate()
                .map(|(g, v)| match v.or(means[g]) {
                    Some(x) => Ok(T::of(x)),
                    None => Err(Error::Domain(format!(
                        "gateway {} has no records to impute from",
                        gateway_order[g]
                    ))),
                })
                .collect::<Result<Vec<T>>>()?;
            vectors.push(FeatureVector {
                features,
                label: label.map(TrafficClass::from_occupancy),
                timestamp_s: anchor,
            });
        }
    }
    vectors.sort_by(|a, b| a.timestamp_s.total_cmp(&b.timestamp_s));
    Ok(Dataset {
        vectors,
        gateway_order: gateway_order.to_vec(),
    })
}

fn indices_by_class<T: Scalar>(ds: &Dataset<T>) -> Result<BTreeMap<TrafficClass, Vec<usize>>> {
    let mut by_class: BTreeMap<TrafficClass, Vec<usize>> = BTreeMap::new();
    for (i, label) in ds.labels()?.into_iter().enumerate() {
        by_class.entry(label).or_default().push(i);
    }
    Ok(by_class)
}

/// Seeded shuffle split. Train and test keep the original vector order.
pub fn split_train_test<T: Scalar>(
    ds: &Dataset<T>,
    train_fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<(Dataset<T>, Dataset<T>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Split(format!(
            "train_fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    if stratified {
        for (class, mut idx) in indices_by_class(ds)? {
            if idx.len() < 2 {
                return Err(Error::Split(format!(
                    "class {class} has {} element(s); stratified split needs >= 2",
                    idx.len()
                )));
            }
            idx.shuffle(&mut rng);
            let n_train =
                ((train_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
            train.extend_from_slice(&idx[..n_train]);
            test.extend_from_slice(&idx[n_train..]);
        }
    } else {
        let mut idx: Vec<usize> = (0..ds.len()).collect();
        idx.shuffle(&mut rng);
        let n_train = (train_fraction * idx.len() as f64).round() as usize;
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// Seeded stratified k-fold assignment: entry `i` is the fold of vector `i`.
pub fn stratified_folds<T: Scalar>(ds: &Dataset<T>, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Fold(format!("need at least 2 folds, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; ds.len()];
    // Each class starts one fold later than the previous one.
    for (offset, (class, mut idx)) in indices_by_class(ds)?.into_iter().enumerate() {
        if idx.len() < k {
            return Err(Error::Fold(format!(
                "class {class} has {} member(s), fewer than {k} folds",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for (j, i) in idx.into_iter().enumerate() {
            fold[i] = (j + offset) % k;
        }
    }
    Ok(fold)
}
