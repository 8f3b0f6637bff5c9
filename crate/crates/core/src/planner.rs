//! Fingerprint radio maps, deployment-point selection and the node-position
//! accuracy study.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::JoinParams;
use crate::error::{Error, Result, RowError};
use crate::pipeline::{holdout_svm, simulate_dataset};
use crate::radio_model::ScenarioConfig;
use crate::record::RssiRecord;
use crate::svm::SvmParams;

pub const RADIO_MAP_COLUMNS: &str =
    "point_id,x_m,y_m,z_m,gateway_id,mean_rssi_dbm,var_rssi_db2,n_samples";
pub const STUDY_COLUMNS: &str = "position_id,x_m,y_m,accuracy_macro";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatewayStats {
    pub mean_rssi_dbm: f64,
    /// Unbiased sample variance; 0 for a single sample.
    pub var_rssi_db2: f64,
    pub n_samples: u64,
}

/// Welford accumulator.
#[derive(Debug, Clone, Copy, Default)]
struct Running {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Running {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn finish(self) -> GatewayStats {
        let var = if self.n > 1 {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        } else {
            0.0
        };
        GatewayStats {
            mean_rssi_dbm: self.mean,
            var_rssi_db2: var,
            n_samples: self.n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerprintPoint {
    pub point_id: String,
    pub position: [f64; 3],
    pub per_gateway_stats: BTreeMap<String, GatewayStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioMap {
    /// Sorted by `point_id`.
    pub points: Vec<FingerprintPoint>,
    pub gateway_order: Vec<String>,
}

/// Aggregate of per-gateway variances used to rank points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreAgg {
    #[default]
    Sum,
    Max,
    Mean,
}

impl std::str::FromStr for ScoreAgg {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(ScoreAgg::Sum),
            "max" => Ok(ScoreAgg::Max),
            "mean" => Ok(ScoreAgg::Mean),
            other => Err(Error::Config(format!("unknown score aggregate {other:?}"))),
        }
    }
}

impl FingerprintPoint {
    pub fn score(&self, agg: ScoreAgg) -> f64 {
        let vars = self.per_gateway_stats.values().map(|s| s.var_rssi_db2);
        match agg {
            ScoreAgg::Sum => vars.sum(),
            ScoreAgg::Max => vars.fold(0.0, f64::max),
            ScoreAgg::Mean => {
                let n = self.per_gateway_stats.len();
                if n == 0 {
                    0.0
                } else {
                    vars.sum::<f64>() / n as f64
                }
            }
        }
    }
}

/// Groups records by `node_id`, each node standing for one surveyed point.
pub fn group_by_point(records: &[RssiRecord]) -> BTreeMap<String, Vec<RssiRecord>> {
    let mut groups: BTreeMap<String, Vec<RssiRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.node_id.clone()).or_default().push(r.clone());
    }
    groups
}

pub fn build_radio_map(
    groups: &BTreeMap<String, Vec<RssiRecord>>,
    positions: &BTreeMap<String, [f64; 3]>,
) -> Result<RadioMap> {
    let mut gateways = BTreeSet::new();
    let mut points = Vec::with_capacity(groups.len());
    for (point_id, records) in groups {
        if records.is_empty() {
            return Err(Error::Mapping(format!("point {point_id} has no samples")));
        }
        let position = *positions
            .get(point_id)
            .ok_or_else(|| Error::Mapping(format!("point {point_id} has no position")))?;
        let mut acc: BTreeMap<String, Running> = BTreeMap::new();
        for r in records {
            acc.entry(r.gateway_id.clone())
                .or_default()
                .push(r.rssi_dbm);
        }
        gateways.extend(acc.keys().cloned());
        points.push(FingerprintPoint {
            point_id: point_id.clone(),
            position,
            per_gateway_stats: acc.into_iter().map(|(g, s)| (g, s.finish())).collect(),
        });
    }
    Ok(RadioMap {
        points,
        gateway_order: gateways.into_iter().collect(),
    })
}

/// The `m` highest-scoring point ids, best first; equal scores go to the
/// lexicographically smaller id.
pub fn select_points(map: &RadioMap, m: usize, agg: ScoreAgg) -> Result<Vec<String>> {
    if m > map.points.len() {
        return Err(Error::Domain(format!(
            "cannot select {m} of {} points",
            map.points.len()
        )));
    }
    let mut scored: Vec<(f64, &str)> = map
        .points
        .iter()
        .map(|p| (p.score(agg), p.point_id.as_str()))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    Ok(scored
        .into_iter()
        .take(m)
        .map(|(_, id)| id.to_string())
        .collect())
}

#[derive(Debug, Deserialize)]
struct MapRow {
    point_id: String,
    x_m: f64,
    y_m: f64,
    z_m: f64,
    gateway_id: String,
    mean_rssi_dbm: f64,
    var_rssi_db2: f64,
    n_samples: u64,
}

pub fn write_radio_map_csv<W: Write>(map: &RadioMap, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(RADIO_MAP_COLUMNS.split(','))
        .map_err(csv_err)?;
    for p in &map.points {
        for (g, s) in &p.per_gateway_stats {
            w.write_record([
                p.point_id.clone(),
                p.position[0].to_string(),
                p.position[1].to_string(),
                p.position[2].to_string(),
                g.clone(),
                s.mean_rssi_dbm.to_string(),
                s.var_rssi_db2.to_string(),
                s.n_samples.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

pub fn read_radio_map_csv<R: Read>(input: R) -> Result<RadioMap> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr
        .headers()
        .map_err(csv_err)?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != RADIO_MAP_COLUMNS {
        return Err(Error::Format(format!(
            "radio map header must be {RADIO_MAP_COLUMNS:?}, got {header:?}"
        )));
    }
    let mut errors = Vec::new();
    let mut points: BTreeMap<String, FingerprintPoint> = BTreeMap::new();
    let mut gateways = BTreeSet::new();
    for (i, row) in rdr.deserialize::<MapRow>().enumerate() {
        let row_no = i + 1;
        let bad = |column: &str, message: String| RowError {
            row: row_no,
            column: column.into(),
            message,
        };
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                errors.push(bad("*", e.to_string()));
                continue;
            }
        };
        if !(row.var_rssi_db2 >= 0.0) {
            errors.push(bad(
                "var_rssi_db2",
                format!("variance must be >= 0, got {}", row.var_rssi_db2),
            ));
            continue;
        }
        if row.n_samples == 0 {
            errors.push(bad("n_samples", "sample count must be >= 1".into()));
            continue;
        }
        let position = [row.x_m, row.y_m, row.z_m];
        let point = points
            .entry(row.point_id.clone())
            .or_insert_with(|| FingerprintPoint {
                point_id: row.point_id.clone(),
                position,
                per_gateway_stats: BTreeMap::new(),
            });
        if point.position != position {
            errors.push(bad(
                "x_m",
                format!("point {} listed at two positions", row.point_id),
            ));
            continue;
        }
        let stats = GatewayStats {
            mean_rssi_dbm: row.mean_rssi_dbm,
            var_rssi_db2: row.var_rssi_db2,
            n_samples: row.n_samples,
        };
        if point
            .per_gateway_stats
            .insert(row.gateway_id.clone(), stats)
            .is_some()
        {
            errors.push(bad(
                "gateway_id",
                format!(
                    "duplicate gateway {} for point {}",
                    row.gateway_id, row.point_id
                ),
            ));
            continue;
        }
        gateways.insert(row.gateway_id);
    }
    if !errors.is_empty() {
        return Err(Error::Rows(errors));
    }
    Ok(RadioMap {
        points: points.into_values().collect(),
        gateway_order: gateways.into_iter().collect(),
    })
}

/// Reads `point_id,x_m,y_m,z_m` rows.
pub fn read_positions_csv<R: Read>(input: R) -> Result<BTreeMap<String, [f64; 3]>> {
    #[derive(Deserialize)]
    struct Row {
        point_id: String,
        x_m: f64,
        y_m: f64,
        z_m: f64,
    }
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = BTreeMap::new();
    let mut errors = Vec::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        match row {
            Ok(r) => {
                if out
                    .insert(r.point_id.clone(), [r.x_m, r.y_m, r.z_m])
                    .is_some()
                {
                    errors.push(RowError {
                        row: i + 1,
                        column: "point_id".into(),
                        message: format!("duplicate point {}", r.point_id),
                    });
                }
            }
            Err(e) => errors.push(RowError {
                row: i + 1,
                column: "*".into(),
                message: e.to_string(),
            }),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(Error::Rows(errors))
    }
}

/// Fraction of the lot rectangle within `radius_m` (horizontal distance) of
/// `position`, by midpoint integration on a 0.25 m grid.
pub fn lot_coverage_fraction(cfg: &ScenarioConfig, position: [f64; 3], radius_m: f64) -> f64 {
    const CELL: f64 = 0.25;
    let nx = (cfg.lot_length_m / CELL).ceil().max(1.0) as usize;
    let ny = (cfg.lot_width_m / CELL).ceil().max(1.0) as usize;
    let (dx, dy) = (cfg.lot_length_m / nx as f64, cfg.lot_width_m / ny as f64);
    let r2 = radius_m * radius_m;
    let mut inside = 0usize;
    for i in 0..nx {
        let x = (i as f64 + 0.5) * dx - position[0];
        for j in 0..ny {
            let y = (j as f64 + 0.5) * dy - position[1];
            if x * x + y * y <= r2 {
                inside += 1;
            }
        }
    }
    inside as f64 / (nx * ny) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub position_id: String,
    pub position: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyParams {
    pub svm: SvmParams<f64>,
    pub train_fraction: f64,
    pub join: JoinParams,
    /// Radius for the coverage-based scaling of the per-car attenuation.
    pub coverage_radius_m: f64,
}

impl Default for StudyParams {
    fn default() -> Self {
        Self {
            svm: SvmParams::default(),
            train_fraction: 0.7,
            join: JoinParams::default(),
            coverage_radius_m: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub position_id: String,
    pub position: [f64; 3],
    pub beta_db_per_car: f64,
    pub accuracy_macro: Option<f64>,
}

/// Scenario for one candidate: node moved to `position`, per-car attenuation
/// scaled by its lot coverage relative to the lot center.
pub fn candidate_scenario(
    template: &ScenarioConfig,
    position: [f64; 3],
    coverage_radius_m: f64,
) -> ScenarioConfig {
    let [cx, cy] = template.lot_center();
    let center = [cx, cy, position[2]];
    let reference = lot_coverage_fraction(template, center, coverage_radius_m);
    let here = lot_coverage_fraction(template, position, coverage_radius_m);
    let mut cfg = template.clone();
    cfg.node_position = position;
    cfg.beta_db_per_car = if reference > 0.0 {
        template.beta_db_per_car * here / reference
    } else {
        template.beta_db_per_car
    };
    cfg
}

/// Holdout macro accuracy per candidate position, sorted by position id. The
/// simulation and the split use the template seed; the classifier uses
/// `params.svm.seed`.
pub fn position_study(
    template: &ScenarioConfig,
    candidates: &[Candidate],
    params: &StudyParams,
) -> Result<Vec<StudyRow>> {
    if candidates.len() < 2 {
        return Err(Error::Domain(format!(
            "position study needs at least 2 candidates, got {}",
            candidates.len()
        )));
    }
    let mut rows = candidates
        .par_iter()
        .map(|c| {
            let cfg = candidate_scenario(template, c.position, params.coverage_radius_m);
            cfg.validate()?;
            let ds = simulate_dataset(&cfg, params.join)?;
            let holdout = holdout_svm(&ds, params.train_fraction, template.seed, &params.svm)?;
            Ok(StudyRow {
                position_id: c.position_id.clone(),
                position: c.position,
                beta_db_per_car: cfg.beta_db_per_car,
                accuracy_macro: holdout.report.macro_avg.accuracy,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.position_id.cmp(&b.position_id));
    Ok(rows)
}

pub fn write_study_csv<W: Write>(rows: &[StudyRow], mut out: W) -> Result<()> {
    writeln!(out, "{STUDY_COLUMNS}")?;
    for r in rows {
        let acc = r
            .accuracy_macro
            .map_or_else(|| "NA".to_string(), |a| a.to_string());
        writeln!(
            out,
            "{},{},{},{}",
            r.position_id, r.position[0], r.position[1], acc
        )?;
    }
    Ok(())
}

/// Lot center and the midpoint of the short edge at `x = 0`, both at the
/// template node height.
pub fn default_candidates(cfg: &ScenarioConfig) -> Vec<Candidate> {
    let [cx, cy] = cfg.lot_center();
    let z = cfg.node_position[2];
    vec![
        Candidate {
            position_id: "center".into(),
            position: [cx, cy, z],
        },
        Candidate {
            position_id: "entrance".into(),
            position: [0.0, cy, z],
        },
    ]
}
