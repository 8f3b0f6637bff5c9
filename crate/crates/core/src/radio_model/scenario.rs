use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{expected_path_loss, RadioParams};
use crate::error::{Error, Result};
use crate::record::RssiRecord;

pub const DEFAULT_NODE_ID: &str = "node-1";

const OCCUPANCY_STREAM: u64 = 1;
const SHADOW_STREAM: u64 = 2;

/// How the car count evolves over the simulated span.
#[derive(Debug, Clone, PartialEq)]
pub enum OccupancyProcess {
    /// Bounded integer random walk: each uplink moves the count by a uniform
    /// step in `[-max_step, max_step]`, clamped to `[0, capacity]`.
    RandomWalk { initial: u32, max_step: u32 },
    /// Piecewise-constant schedule of `(offset_s, count)` breakpoints, offsets
    /// relative to the scenario start and sorted ascending.
    Schedule(Vec<(f64, u32)>),
}

impl OccupancyProcess {
    pub fn constant(count: u32) -> Self {
        OccupancyProcess::Schedule(vec![(0.0, count)])
    }

    fn schedule_value(points: &[(f64, u32)], offset_s: f64) -> u32 {
        let idx = points.partition_point(|(t, _)| *t <= offset_s);
        points[idx.saturating_sub(1)].1
    }
}

/// Parking-lot scenario driving the channel simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub lot_length_m: f64,
    pub lot_width_m: f64,
    pub capacity: u32,
    pub gateway_ids: Vec<String>,
    /// Gateway antenna positions `[x, y, z]` in metres, lot corner at the origin.
    pub gateway_positions: Vec<[f64; 3]>,
    pub node_id: String,
    pub node_position: [f64; 3],
    pub tx_interval_s: f64,
    /// Extra attenuation per parked car (dB/car).
    pub beta_db_per_car: f64,
    pub radio: RadioParams<f64>,
    pub duration_s: f64,
    pub seed: u64,
    pub start_timestamp_s: f64,
    pub occupancy_process: OccupancyProcess,
    pub sf: u8,
    pub bw_khz: f64,
    pub cr: String,
    pub freq_mhz: f64,
    /// Receiver noise floor used to derive the reported SNR.
    pub noise_floor_dbm: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioFile::default().into()
    }
}

impl ScenarioConfig {
    pub fn lot_center(&self) -> [f64; 2] {
        [self.lot_length_m / 2.0, self.lot_width_m / 2.0]
    }

    pub fn n_uplinks(&self) -> usize {
        (self.duration_s / self.tx_interval_s).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        if self.capacity == 0 {
            return cfg_err("capacity must be > 0".into());
        }
        if !(self.tx_interval_s > 0.0) || !self.tx_interval_s.is_finite() {
            return cfg_err(format!(
                "tx_interval_s must be > 0, got {}",
                self.tx_interval_s
            ));
        }
        if !(self.duration_s >= 0.0) || !self.duration_s.is_finite() {
            return cfg_err(format!("duration_s must be >= 0, got {}", self.duration_s));
        }
        if !(self.beta_db_per_car >= 0.0) || !self.beta_db_per_car.is_finite() {
            return cfg_err(format!(
                "beta_db_per_car must be >= 0, got {}",
                self.beta_db_per_car
            ));
        }
        if !(self.lot_length_m > 0.0 && self.lot_width_m > 0.0) {
            return cfg_err("lot dimensions must be > 0".into());
        }
        if self.gateway_positions.is_empty() {
            return cfg_err("at least one gateway is required".into());
        }
        if self.gateway_ids.len() != self.gateway_positions.len() {
            return cfg_err(format!(
                "{} gateway ids for {} gateway positions",
                self.gateway_ids.len(),
                self.gateway_positions.len()
            ));
        }
        let mut ids = self.gateway_ids.clone();
        ids.sort();
        ids.dedup();
        if ids.len() != self.gateway_ids.len() {
            return cfg_err("gateway ids must be unique".into());
        }
        for p in self
            .gateway_positions
            .iter()
            .chain(std::iter::once(&self.node_position))
        {
            if p.iter().any(|v| !v.is_finite()) {
                return cfg_err(format!("position {p:?} is not finite"));
            }
            if p[2] < 0.0 {
                return cfg_err(format!("position {p:?} has negative height"));
            }
        }
        for (id, g) in self.gateway_ids.iter().zip(&self.gateway_positions) {
            if distance(g, &self.node_position) <= 0.0 {
                return cfg_err(format!("gateway {id} coincides with the node"));
            }
        }
        self.radio.validate()?;
        match &self.occupancy_process {
            OccupancyProcess::RandomWalk { initial, .. } => {
                if *initial > self.capacity {
                    return cfg_err(format!("occupancy_initial {initial} exceeds capacity"));
                }
            }
            OccupancyProcess::Schedule(points) => {
                if points.is_empty() {
                    return cfg_err("occupancy_schedule must not be empty".into());
                }
                if points.windows(2).any(|w| w[1].0 < w[0].0) {
                    return cfg_err("occupancy_schedule offsets must be ascending".into());
                }
                if let Some((_, c)) = points.iter().find(|(_, c)| *c > self.capacity) {
                    return cfg_err(format!("occupancy_schedule count {c} exceeds capacity"));
                }
            }
        }
        Ok(())
    }

    /// Parses the flat key-value (TOML) scenario format. Missing keys take
    /// the testbed defaults; unknown keys are rejected.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        let cfg: ScenarioConfig = file.into();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&ScenarioFile::from(self)).expect("scenario serializes to toml")
    }
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ScenarioFile {
    lot_length_m: f64,
    lot_width_m: f64,
    capacity: u32,
    gateway_ids: Vec<String>,
    gateway_positions: Vec<[f64; 3]>,
    node_id: String,
    node_position: [f64; 3],
    tx_interval_s: f64,
    beta_db_per_car: f64,
    ptx_dbm: f64,
    gtx_dbi: f64,
    pl_d0_db: f64,
    n_exponent: f64,
    d0_m: f64,
    sigma_db: f64,
    duration_s: f64,
    seed: u64,
    start_timestamp_s: f64,
    occupancy_process: String,
    occupancy_initial: u32,
    occupancy_max_step: u32,
    occupancy_schedule: Vec<[f64; 2]>,
    sf: u8,
    bw_khz: f64,
    cr: String,
    freq_mhz: f64,
    noise_floor_dbm: f64,
}

impl Default for ScenarioFile {
    fn default() -> Self {
        let radio = RadioParams::<f64>::default();
        Self {
            lot_length_m: 100.0,
            lot_width_m: 35.0,
            capacity: 50,
            gateway_ids: vec!["gw1".into(), "gw2".into(), "gw3".into()],
            // 300 m, 500 m and 800 m from the lot center at 0, 120 and 240 degrees.
            gateway_positions: vec![
                [350.0, 17.5, 30.0],
                [-200.0, 450.512702, 32.0],
                [-350.0, -675.320323, 35.0],
            ],
            node_id: DEFAULT_NODE_ID.into(),
            node_position: [50.0, 17.5, 3.0],
            tx_interval_s: 60.0,
            beta_db_per_car: 0.2,
            ptx_dbm: radio.ptx_dbm,
            gtx_dbi: radio.gtx_dbi,
            pl_d0_db: radio.pl_d0_db,
            n_exponent: radio.n_exponent,
            d0_m: radio.d0_m,
            sigma_db: radio.sigma_db,
            duration_s: 7000.0 * 60.0,
            seed: 42,
            start_timestamp_s: 1_672_531_200.0,
            occupancy_process: "random_walk".into(),
            occupancy_initial: 25,
            occupancy_max_step: 2,
            occupancy_schedule: Vec::new(),
            sf: 7,
            bw_khz: 125.0,
            cr: "4/5".into(),
            freq_mhz: 868.0,
            noise_floor_dbm: -117.0,
        }
    }
}

impl From<ScenarioFile> for ScenarioConfig {
    fn from(f: ScenarioFile) -> Self {
        let occupancy_process = if f.occupancy_process == "schedule" {
            OccupancyProcess::Schedule(
                f.occupancy_schedule
                    .iter()
                    .map(|[t, c]| (*t, c.max(0.0) as u32))
                    .collect(),
            )
        } else {
            OccupancyProcess::RandomWalk {
                initial: f.occupancy_initial,
                max_step: f.occupancy_max_step,
            }
        };
        ScenarioConfig {
            lot_length_m: f.lot_length_m,
            lot_width_m: f.lot_width_m,
            capacity: f.capacity,
            gateway_ids: f.gateway_ids,
            gateway_positions: f.gateway_positions,
            node_id: f.node_id,
            node_position: f.node_position,
            tx_interval_s: f.tx_interval_s,
            beta_db_per_car: f.beta_db_per_car,
            radio: RadioParams {
                ptx_dbm: f.ptx_dbm,
                gtx_dbi: f.gtx_dbi,
                pl_d0_db: f.pl_d0_db,
                n_exponent: f.n_exponent,
                d0_m: f.d0_m,
                sigma_db: f.sigma_db,
            },
            duration_s: f.duration_s,
            seed: f.seed,
            start_timestamp_s: f.start_timestamp_s,
            occupancy_process,
            sf: f.sf,
            bw_khz: f.bw_khz,
            cr: f.cr,
            freq_mhz: f.freq_mhz,
            noise_floor_dbm: f.noise_floor_dbm,
        }
    }
}

impl From<&ScenarioConfig> for ScenarioFile {
    fn from(c: &ScenarioConfig) -> Self {
        let defaults = ScenarioFile::default();
        let (process, initial, max_step, schedule) = match &c.occupancy_process {
            OccupancyProcess::RandomWalk { initial, max_step } => {
                ("random_walk", *initial, *max_step, Vec::new())
            }
            OccupancyProcess::Schedule(points) => (
                "schedule",
                defaults.occupancy_initial,
                defaults.occupancy_max_step,
                points.iter().map(|(t, n)| [*t, f64::from(*n)]).collect(),
            ),
        };
        ScenarioFile {
            lot_length_m: c.lot_length_m,
            lot_width_m: c.lot_width_m,
            capacity: c.capacity,
            gateway_ids: c.gateway_ids.clone(),
            gateway_positions: c.gateway_positions.clone(),
            node_id: c.node_id.clone(),
            node_position: c.node_position,
            tx_interval_s: c.tx_interval_s,
            beta_db_per_car: c.beta_db_per_car,
            ptx_dbm: c.radio.ptx_dbm,
            gtx_dbi: c.radio.gtx_dbi,
            pl_d0_db: c.radio.pl_d0_db,
            n_exponent: c.radio.n_exponent,
            d0_m: c.radio.d0_m,
            sigma_db: c.radio.sigma_db,
            duration_s: c.duration_s,
            seed: c.seed,
            start_timestamp_s: c.start_timestamp_s,
            occupancy_process: process.into(),
            occupancy_initial: initial,
            occupancy_max_step: max_step,
            occupancy_schedule: schedule,
            sf: c.sf,
            bw_khz: c.bw_khz,
            cr: c.cr.clone(),
            freq_mhz: c.freq_mhz,
            noise_floor_dbm: c.noise_floor_dbm,
        }
    }
}

struct GatewayLink {
    id: String,
    distance_m: f64,
}

/// Record stream produced by [`simulate_scenario`]: one uplink per
/// `tx_interval_s`, each yielding one record per gateway in ascending id order.
pub struct ScenarioStream {
    cfg: ScenarioConfig,
    links: Vec<GatewayLink>,
    n_uplinks: usize,
    uplink: usize,
    gateway: usize,
    occupancy: u32,
    occupancy_rng: ChaCha8Rng,
    shadow_rng: ChaCha8Rng,
    shadow: Option<Normal<f64>>,
}

impl ScenarioStream {
    fn new(cfg: ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let mut links: Vec<GatewayLink> = cfg
            .gateway_ids
            .iter()
            .zip(&cfg.gateway_positions)
            .map(|(id, pos)| GatewayLink {
                id: id.clone(),
                distance_m: distance(pos, &cfg.node_position),
            })
            .collect();
        links.sort_by(|a, b| a.id.cmp(&b.id));

        let mut occupancy_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        occupancy_rng.set_stream(OCCUPANCY_STREAM);
        let mut shadow_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        shadow_rng.set_stream(SHADOW_STREAM);
        let shadow = if cfg.radio.sigma_db > 0.0 {
            Some(
                Normal::new(0.0, cfg.radio.sigma_db)
                    .map_err(|e| Error::Config(format!("sigma_db: {e}")))?,
            )
        } else {
            None
        };
        let occupancy = match &cfg.occupancy_process {
            OccupancyProcess::RandomWalk { initial, .. } => *initial,
            OccupancyProcess::Schedule(points) => OccupancyProcess::schedule_value(points, 0.0),
        };
        Ok(Self {
            n_uplinks: cfg.n_uplinks(),
            cfg,
            links,
            uplink: 0,
            gateway: 0,
            occupancy,
            occupancy_rng,
            shadow_rng,
            shadow,
        })
    }

    pub fn n_uplinks(&self) -> usize {
        self.n_uplinks
    }

    fn advance_occupancy(&mut self) {
        let offset = self.uplink as f64 * self.cfg.tx_interval_s;
        self.occupancy = match &self.cfg.occupancy_process {
            OccupancyProcess::RandomWalk { max_step, .. } => {
                let step = i64::from(*max_step);
                let delta = self.occupancy_rng.random_range(-step..=step);
                (i64::from(self.occupancy) + delta).clamp(0, i64::from(self.cfg.capacity)) as u32
            }
            OccupancyProcess::Schedule(points) => OccupancyProcess::schedule_value(points, offset),
        };
    }
}

impl Iterator for ScenarioStream {
    type Item = RssiRecord;

    fn next(&mut self) -> Option<RssiRecord> {
        if self.uplink >= self.n_uplinks {
            return None;
        }
        let link = &self.links[self.gateway];
        let shadow = match &self.shadow {
            Some(normal) => normal.sample(&mut self.shadow_rng),
            None => 0.0,
        };
        let radio = &self.cfg.radio;
        let epl = expected_path_loss(link.distance_m, radio, shadow)
            .expect("gateway distance validated > 0");
        let loss = epl + self.cfg.beta_db_per_car * f64::from(self.occupancy);
        let rssi = radio.ptx_dbm + radio.gtx_dbi - loss;
        let record = RssiRecord {
            timestamp_s: self.cfg.start_timestamp_s + self.uplink as f64 * self.cfg.tx_interval_s,
            node_id: self.cfg.node_id.clone(),
            gateway_id: link.id.clone(),
            rssi_dbm: rssi,
            snr_db: rssi - self.cfg.noise_floor_dbm,
            sf: self.cfg.sf,
            bw_khz: self.cfg.bw_khz,
            cr: self.cfg.cr.clone(),
            freq_mhz: self.cfg.freq_mhz,
            occupancy: Some(self.occupancy),
        };

        self.gateway += 1;
        if self.gateway == self.links.len() {
            self.gateway = 0;
            self.uplink += 1;
            if self.uplink < self.n_uplinks {
                self.advance_occupancy();
            }
        }
        Some(record)
    }
}

/// Validates `cfg` and returns the seeded record stream.
pub fn simulate_scenario(cfg: &ScenarioConfig) -> Result<ScenarioStream> {
    ScenarioStream::new(cfg.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(beta: f64, process: OccupancyProcess) -> ScenarioConfig {
        let mut cfg = ScenarioConfig {
            beta_db_per_car: beta,
            occupancy_process: process,
            duration_s: 600.0,
            ..Default::default()
        };
        cfg.radio.sigma_db = 0.0;
        cfg
    }

    #[test]
    fn default_config_is_valid() {
        let cfg = ScenarioConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.n_uplinks(), 7000);
        assert_eq!(cfg.gateway_ids.len(), 3);
        let c = cfg.lot_center();
        let horiz: Vec<f64> = cfg
            .gateway_positions
            .iter()
            .map(|g| ((g[0] - c[0]).powi(2) + (g[1] - c[1]).powi(2)).sqrt())
            .collect();
        for (h, want) in horiz.iter().zip([300.0, 500.0, 800.0]) {
            assert!((h - want).abs() < 1e-3, "{h} vs {want}");
        }
    }

    #[test]
    fn noiseless_static_channel() {
        let cfg = quiet(0.0, OccupancyProcess::constant(0));
        let recs: Vec<_> = simulate_scenario(&cfg).unwrap().collect();
        assert_eq!(recs.len(), 10 * 3);
        for (id, pos) in cfg.gateway_ids.iter().zip(&cfg.gateway_positions) {
            let d = distance(pos, &cfg.node_position);
            let want = cfg.radio.ptx_dbm + cfg.radio.gtx_dbi
                - expected_path_loss(d, &cfg.radio, 0.0).unwrap();
            for r in recs.iter().filter(|r| &r.gateway_id == id) {
                assert_eq!(r.rssi_dbm, want);
            }
        }
    }

    #[test]
    fn occupancy_jump_drops_rssi() {
        let cfg = quiet(0.2, OccupancyProcess::Schedule(vec![(0.0, 0), (300.0, 50)]));
        let recs: Vec<_> = simulate_scenario(&cfg).unwrap().collect();
        let before = &recs[4 * 3..5 * 3];
        let after = &recs[5 * 3..6 * 3];
        for (b, a) in before.iter().zip(after) {
            assert_eq!(b.gateway_id, a.gateway_id);
            assert_eq!(b.occupancy, Some(0));
            assert_eq!(a.occupancy, Some(50));
            assert!((b.rssi_dbm - a.rssi_dbm - 10.0).abs() < 1e-9);
        }
    }

    #[test]
    fn uplink_count_and_order() {
        let cfg = ScenarioConfig::default();
        let stream = simulate_scenario(&cfg).unwrap();
        assert_eq!(stream.n_uplinks(), 7000);
        let recs: Vec<_> = stream.collect();
        assert_eq!(recs.len(), 21000);
        for chunk in recs.chunks(3) {
            let ids: Vec<_> = chunk.iter().map(|r| r.gateway_id.as_str()).collect();
            assert_eq!(ids, ["gw1", "gw2", "gw3"]);
            assert!(chunk.iter().all(|r| r.timestamp_s == chunk[0].timestamp_s));
            assert!(chunk.iter().all(|r| r.occupancy.unwrap() <= cfg.capacity));
        }
        let one = ScenarioConfig {
            duration_s: 60.0,
            tx_interval_s: 60.0,
            ..Default::default()
        };
        assert_eq!(simulate_scenario(&one).unwrap().count(), 3);
    }

    #[test]
    fn seeded_determinism() {
        let cfg = ScenarioConfig {
            duration_s: 6000.0,
            ..Default::default()
        };
        let a: Vec<_> = simulate_scenario(&cfg).unwrap().collect();
        let b: Vec<_> = simulate_scenario(&cfg).unwrap().collect();
        assert_eq!(a, b);
        let other = ScenarioConfig { seed: 7, ..cfg };
        let c: Vec<_> = simulate_scenario(&other).unwrap().collect();
        assert_ne!(a, c);
    }

    #[test]
    fn noiseless_residual_equals_occupancy_attenuation() {
        let mut cfg = quiet(
            0.2,
            OccupancyProcess::RandomWalk {
                initial: 10,
                max_step: 3,
            },
        );
        cfg.duration_s = 60.0 * 200.0;
        for r in simulate_scenario(&cfg).unwrap() {
            let idx = cfg
                .gateway_ids
                .iter()
                .position(|g| *g == r.gateway_id)
                .unwrap();
            let d = distance(&cfg.gateway_positions[idx], &cfg.node_position);
            let measured = r
                .path_loss(&cfg.radio, super::super::PathLossMode::Physical)
                .unwrap();
            let epl = expected_path_loss(d, &cfg.radio, 0.0).unwrap();
            let want = 0.2 * f64::from(r.occupancy.unwrap());
            assert!((measured - epl - want).abs() < 1e-9);
        }
    }

    #[test]
    fn shadow_mean_within_monte_carlo_bound() {
        let mut cfg = quiet(0.0, OccupancyProcess::constant(20));
        cfg.radio.sigma_db = 2.0;
        let n = 12_000;
        cfg.duration_s = 60.0 * n as f64;
        let recs: Vec<_> = simulate_scenario(&cfg).unwrap().collect();
        for (id, pos) in cfg.gateway_ids.iter().zip(&cfg.gateway_positions) {
            let d = distance(pos, &cfg.node_position);
            let clean = cfg.radio.ptx_dbm + cfg.radio.gtx_dbi
                - expected_path_loss(d, &cfg.radio, 0.0).unwrap();
            let samples: Vec<f64> = recs
                .iter()
                .filter(|r| &r.gateway_id == id)
                .map(|r| r.rssi_dbm)
                .collect();
            let mean = samples.iter().sum::<f64>() / samples.len() as f64;
            assert!((mean - clean).abs() <= 3.0 * 2.0 / (n as f64).sqrt());
        }
    }

    #[test]
    fn invalid_configs() {
        let base = ScenarioConfig::default();
        let bad = [
            ScenarioConfig {
                capacity: 0,
                ..base.clone()
            },
            ScenarioConfig {
                tx_interval_s: 0.0,
                ..base.clone()
            },
            ScenarioConfig {
                beta_db_per_car: -0.1,
                ..base.clone()
            },
            ScenarioConfig {
                gateway_positions: vec![],
                gateway_ids: vec![],
                ..base.clone()
            },
            ScenarioConfig {
                node_position: [1.0, 1.0, -3.0],
                ..base.clone()
            },
            ScenarioConfig {
                occupancy_process: OccupancyProcess::constant(51),
                ..base.clone()
            },
        ];
        for cfg in bad {
            assert!(matches!(simulate_scenario(&cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn toml_round_trip_and_defaults() {
        let cfg = ScenarioConfig::from_toml_str("seed = 9\nduration_s = 120\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.n_uplinks(), 2);
        assert_eq!(cfg.capacity, 50);
        let again = ScenarioConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, again);

        let sched = ScenarioConfig::from_toml_str(
            "occupancy_process = \"schedule\"\noccupancy_schedule = [[0, 5], [3600, 40]]\n",
        )
        .unwrap();
        assert_eq!(
            sched.occupancy_process,
            OccupancyProcess::Schedule(vec![(0.0, 5), (3600.0, 40)])
        );
        assert!(ScenarioConfig::from_toml_str("sigma = 1.0\n").is_err());
    }
}
