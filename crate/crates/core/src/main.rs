use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use lorasense::dataset::{
    build_features, parse_records, Dataset, JoinParams, RecordFormat, TrafficClass,
};
use lorasense::kmeans::KMeansParams;
use lorasense::metrics::EvalReport;
use lorasense::pipeline::{holdout_svm, simulate_records};
use lorasense::planner::{self, Candidate, ScoreAgg, StudyParams};
use lorasense::radio_model::ScenarioConfig;
use lorasense::svm::{cross_validate, KernelChoice, SvmModel, SvmParams};
use lorasense::{Error, RssiRecord};

/// Vehicle-occupancy sensing from LoRaWAN RSSI: simulate, train, evaluate,
/// baseline, plan and study.
#[derive(Parser)]
#[command(name = "lorasense", version)]
struct Cli {
    /// Scenario file (TOML); omitted keys take the testbed defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// RNG seed for simulation, splits, solver and clustering.
    #[arg(long, global = true, default_value_t = 42, value_name = "U64")]
    seed: u64,
    /// Output directory; created if missing.
    #[arg(long, global = true, default_value = "out", value_name = "DIR")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a labeled uplink corpus and write records.csv.
    Simulate(SimulateArgs),
    /// Train the SVM; writes model.json, holdout_report.csv and cv_report.csv.
    Train(TrainArgs),
    /// Score a model on labeled records; writes fig4_metrics.csv and summary.json.
    Evaluate(EvaluateArgs),
    /// K-means baseline; writes kmeans_model.json, kmeans_report.csv and table1_kmeans.csv.
    Baseline(BaselineArgs),
    /// Rank fingerprint points by RSSI variance; writes selected_points.csv.
    Plan(PlanArgs),
    /// Node-position accuracy study; writes fig5_position.csv.
    Study(StudyArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulated span in seconds (overrides the config).
    #[arg(long, value_name = "SECONDS")]
    duration: Option<f64>,
    /// Uplink period in seconds (overrides the config).
    #[arg(long, value_name = "SECONDS")]
    interval: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Linear,
    Rbf,
}

#[derive(Args)]
struct SvmArgs {
    /// Kernel function.
    #[arg(long, value_enum, default_value = "rbf")]
    kernel: KernelArg,
    /// Box constraint C (dimensionless, > 0).
    #[arg(long = "c", default_value_t = 1.0, value_name = "C")]
    c: f64,
    /// RBF width in 1/(standardized unit)^2; default 1/(dims * mean variance).
    #[arg(long, value_name = "GAMMA")]
    gamma: Option<f64>,
    /// KKT tolerance of the solver (dimensionless).
    #[arg(long, default_value_t = 1e-3, value_name = "TOL")]
    tol: f64,
    /// Sweeps of the randomized solver phase (count).
    #[arg(long, default_value_t = 50, value_name = "N")]
    max_passes: usize,
}

impl SvmArgs {
    fn params(&self, seed: u64) -> SvmParams<f64> {
        SvmParams {
            kernel: match self.kernel {
                KernelArg::Linear => KernelChoice::Linear,
                KernelArg::Rbf => KernelChoice::Rbf { gamma: self.gamma },
            },
            c: self.c,
            tol: self.tol,
            max_passes: self.max_passes,
            seed,
        }
    }
}

#[derive(Args)]
struct JoinArgs {
    /// Maximum spread of one uplink's gateway timestamps (seconds).
    #[arg(long, default_value_t = 5.0, value_name = "SECONDS")]
    join_tolerance: f64,
    /// Minimum gateways that must hear an uplink (count).
    #[arg(long, default_value_t = 2, value_name = "N")]
    min_gateways: usize,
}

impl JoinArgs {
    fn params(&self) -> JoinParams {
        JoinParams {
            join_tolerance_s: self.join_tolerance,
            min_gateways: self.min_gateways,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Labeled uplink records (.csv or .jsonl).
    #[arg(long, value_name = "PATH")]
    records: PathBuf,
    #[command(flatten)]
    svm: SvmArgs,
    #[command(flatten)]
    join: JoinArgs,
    /// Cross-validation folds (count); 0 skips cross-validation.
    #[arg(long, default_value_t = 5, value_name = "K")]
    folds: usize,
    /// Training share of the stratified holdout split (fraction in (0, 1)).
    #[arg(long, default_value_t = 0.7, value_name = "FRACTION")]
    split: f64,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Model file written by `train`.
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    /// Labeled uplink records (.csv or .jsonl).
    #[arg(long, value_name = "PATH")]
    records: PathBuf,
    #[command(flatten)]
    join: JoinArgs,
}

#[derive(Args)]
struct BaselineArgs {
    /// Labeled uplink records (.csv or .jsonl).
    #[arg(long, value_name = "PATH")]
    records: PathBuf,
    /// Cluster count.
    #[arg(long, default_value_t = 5, value_name = "K")]
    k: usize,
    /// Lloyd iteration cap per restart (count).
    #[arg(long, default_value_t = 300, value_name = "N")]
    max_iter: usize,
    /// Seeded restarts (count).
    #[arg(long, default_value_t = 10, value_name = "N")]
    restarts: usize,
    #[command(flatten)]
    join: JoinArgs,
}

#[derive(Args)]
struct PlanArgs {
    /// Radio map CSV (point_id,x_m,y_m,z_m,gateway_id,mean_rssi_dbm,var_rssi_db2,n_samples).
    #[arg(long, value_name = "PATH", conflicts_with_all = ["records", "positions"])]
    map: Option<PathBuf>,
    /// Survey records; node_id names the surveyed point.
    #[arg(long, value_name = "PATH", requires = "positions")]
    records: Option<PathBuf>,
    /// Point positions CSV (point_id,x_m,y_m,z_m; metres).
    #[arg(long, value_name = "PATH", requires = "records")]
    positions: Option<PathBuf>,
    /// Points to select (count).
    #[arg(long, default_value_t = 16, value_name = "M")]
    m: usize,
    /// Aggregate of per-gateway RSSI variances (dB^2).
    #[arg(long, default_value = "sum", value_parser = ["sum", "max", "mean"])]
    score: String,
}

#[derive(Args)]
struct StudyArgs {
    /// Candidate positions CSV (point_id,x_m,y_m,z_m; metres); default lot center and entrance.
    #[arg(long, value_name = "PATH")]
    positions: Option<PathBuf>,
    /// Radius for the coverage scaling of per-car attenuation (metres).
    #[arg(long, default_value_t = 20.0, value_name = "METRES")]
    coverage_radius: f64,
    /// Training share of the stratified holdout split (fraction in (0, 1)).
    #[arg(long, default_value_t = 0.7, value_name = "FRACTION")]
    split: f64,
    #[command(flatten)]
    svm: SvmArgs,
    #[command(flatten)]
    join: JoinArgs,
}

/// Tracks what a command reads and writes, and removes its outputs if the
/// command fails.
struct Run {
    command: &'static str,
    out: PathBuf,
    config: Option<PathBuf>,
    seed: u64,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: f64,
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

impl Run {
    fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    /// Creates `name` in the output directory and hands it to `fill`.
    fn write(
        &mut self,
        name: &str,
        fill: impl FnOnce(&mut BufWriter<File>) -> anyhow::Result<()>,
    ) -> anyhow::Result<()> {
        let path = self.out.join(name);
        self.outputs.push(path.clone());
        let mut w = BufWriter::new(
            File::create(&path).with_context(|| format!("creating {}", path.display()))?,
        );
        fill(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn finish(&mut self) -> anyhow::Result<()> {
        let manifest = json!({
            "command": self.command,
            "config_path": self.config.as_ref().map(|p| p.display().to_string()),
            "seed": self.seed,
            "inputs": self.inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "outputs": self.outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "version": env!("CARGO_PKG_VERSION"),
            "started_unix_s": self.started,
            "finished_unix_s": unix_now(),
        });
        self.write("manifest.json", |w| {
            serde_json::to_writer_pretty(&mut *w, &manifest)?;
            writeln!(w)?;
            Ok(())
        })
    }

    fn discard(&self) {
        for p in &self.outputs {
            let _ = fs::remove_file(p);
        }
    }
}

fn load_config(path: Option<&Path>) -> anyhow::Result<ScenarioConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ScenarioConfig::from_toml_str(&text)
                .with_context(|| format!("in config {}", p.display()))
        }
        None => Ok(ScenarioConfig::default()),
    }
}

fn load_records(path: &Path) -> anyhow::Result<Vec<RssiRecord>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_records(BufReader::new(file), RecordFormat::from_path(path))
        .with_context(|| format!("in records {}", path.display()))
}

/// Features in config gateway order when a config is given, otherwise in
/// sorted gateway-id order.
fn load_dataset(
    cli: &Cli,
    run: &mut Run,
    path: &Path,
    join: JoinParams,
) -> anyhow::Result<Dataset<f64>> {
    run.input(path);
    let records = load_records(path)?;
    let gateways: Vec<String> = match &cli.config {
        Some(_) => load_config(cli.config.as_deref())?.gateway_ids,
        None => records
            .iter()
            .map(|r| r.gateway_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    Ok(build_features(&records, &gateways, join)?)
}

fn require_labels(ds: &Dataset<f64>) -> anyhow::Result<()> {
    if ds.is_empty() {
        bail!("no feature vectors could be built from the records");
    }
    ds.labels().context("records must carry occupancy labels")?;
    Ok(())
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs, run: &mut Run) -> anyhow::Result<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    cfg.seed = cli.seed;
    if let Some(d) = args.duration {
        cfg.duration_s = d;
    }
    if let Some(i) = args.interval {
        cfg.tx_interval_s = i;
    }
    cfg.validate()?;
    let records = simulate_records(&cfg)?;
    run.write("records.csv", |w| {
        Ok(lorasense::dataset::write_records_csv(w, &records)?)
    })?;
    eprintln!("{} records from {} uplinks", records.len(), cfg.n_uplinks());
    Ok(())
}

fn cmd_train(cli: &Cli, args: &TrainArgs, run: &mut Run) -> anyhow::Result<()> {
    let ds = load_dataset(cli, run, &args.records, args.join.params())?;
    require_labels(&ds)?;
    let params = args.svm.params(cli.seed);
    let holdout = holdout_svm(&ds, args.split, cli.seed, &params)?;
    run.write("model.json", |w| Ok(holdout.model.write_json(w)?))?;
    run.write("holdout_report.csv", |w| Ok(holdout.report.write_csv(w)?))?;
    if args.folds > 0 {
        let cv = cross_validate(&ds, args.folds, &params)?;
        run.write("cv_report.csv", |w| {
            writeln!(w, "fold,n_samples,accuracy,precision,recall,fdr")?;
            let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
            for (f, r) in cv.folds.iter().enumerate() {
                let m = &r.macro_avg;
                writeln!(
                    w,
                    "{f},{},{},{},{},{}",
                    r.n_samples,
                    opt(m.accuracy),
                    opt(m.precision),
                    opt(m.recall),
                    opt(m.false_detection_rate)
                )?;
            }
            let m = &cv.mean;
            writeln!(
                w,
                "mean,{},{},{},{},{}",
                ds.len(),
                opt(m.accuracy),
                opt(m.precision),
                opt(m.recall),
                opt(m.false_detection_rate)
            )?;
            Ok(())
        })?;
        eprintln!("cross-validated macro accuracy: {:?}", cv.mean.accuracy);
    }
    eprintln!(
        "holdout macro accuracy: {:?}",
        holdout.report.macro_avg.accuracy
    );
    Ok(())
}

fn cmd_evaluate(cli: &Cli, args: &EvaluateArgs, run: &mut Run) -> anyhow::Result<()> {
    run.input(&args.model);
    let file =
        File::open(&args.model).with_context(|| format!("opening {}", args.model.display()))?;
    let model: SvmModel<f64> = SvmModel::read_json(BufReader::new(file))?;
    let ds = if model.feature_names.is_empty() {
        load_dataset(cli, run, &args.records, args.join.params())?
    } else {
        run.input(&args.records);
        build_features(
            &load_records(&args.records)?,
            &model.feature_names,
            args.join.params(),
        )?
    };
    require_labels(&ds)?;
    let predicted = model.predict_dataset(&ds)?;
    let classes: Vec<TrafficClass> = model
        .classes
        .iter()
        .chain(&ds.classes())
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let report = EvalReport::evaluate(&ds.labels()?, &predicted, &classes)?;
    run.write("fig4_metrics.csv", |w| Ok(report.write_csv(w)?))?;
    run.write("summary.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &report.summary_json())?;
        writeln!(w)?;
        Ok(())
    })?;
    eprintln!("macro accuracy: {:?}", report.macro_avg.accuracy);
    Ok(())
}

fn cmd_baseline(cli: &Cli, args: &BaselineArgs, run: &mut Run) -> anyhow::Result<()> {
    let ds = load_dataset(cli, run, &args.records, args.join.params())?;
    require_labels(&ds)?;
    let params = KMeansParams {
        k: args.k,
        seed: cli.seed,
        max_iter: args.max_iter,
        n_restarts: args.restarts,
    };
    let (model, report) = lorasense::pipeline::kmeans_baseline(&ds, &params)?;
    run.write("kmeans_model.json", |w| Ok(model.write_json(w)?))?;
    run.write("kmeans_report.csv", |w| Ok(report.write_csv(w)?))?;
    run.write("table1_kmeans.csv", |w| {
        Ok(lorasense::pipeline::write_class_accuracy_row(&report, w)?)
    })?;
    eprintln!("k-means macro accuracy: {:?}", report.macro_avg.accuracy);
    Ok(())
}

fn cmd_plan(_cli: &Cli, args: &PlanArgs, run: &mut Run) -> anyhow::Result<()> {
    let agg: ScoreAgg = args.score.parse()?;
    let map = match (&args.map, &args.records, &args.positions) {
        (Some(map), _, _) => {
            run.input(map);
            let file = File::open(map).with_context(|| format!("opening {}", map.display()))?;
            planner::read_radio_map_csv(BufReader::new(file))
                .with_context(|| format!("in radio map {}", map.display()))?
        }
        (None, Some(records), Some(positions)) => {
            run.input(records);
            run.input(positions);
            let groups = planner::group_by_point(&load_records(records)?);
            let file = File::open(positions)
                .with_context(|| format!("opening {}", positions.display()))?;
            let pos = planner::read_positions_csv(BufReader::new(file))
                .with_context(|| format!("in positions {}", positions.display()))?;
            let map = planner::build_radio_map(&groups, &pos)?;
            run.write("radio_map.csv", |w| {
                Ok(planner::write_radio_map_csv(&map, w)?)
            })?;
            map
        }
        _ => bail!("plan needs --map, or --records together with --positions"),
    };
    let selected = planner::select_points(&map, args.m, agg)?;
    run.write("selected_points.csv", |w| {
        writeln!(w, "rank,point_id,score_db2")?;
        for (rank, id) in selected.iter().enumerate() {
            let p = map
                .points
                .iter()
                .find(|p| &p.point_id == id)
                .expect("selected from map");
            writeln!(w, "{},{},{}", rank + 1, id, p.score(agg))?;
        }
        Ok(())
    })?;
    eprintln!("selected {} of {} points", selected.len(), map.points.len());
    Ok(())
}

fn cmd_study(cli: &Cli, args: &StudyArgs, run: &mut Run) -> anyhow::Result<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    cfg.seed = cli.seed;
    let candidates = match &args.positions {
        Some(p) => {
            run.input(p);
            let file = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            planner::read_positions_csv(BufReader::new(file))?
                .into_iter()
                .map(|(position_id, position)| Candidate {
                    position_id,
                    position,
                })
                .collect()
        }
        None => planner::default_candidates(&cfg),
    };
    let params = StudyParams {
        svm: args.svm.params(cli.seed),
        train_fraction: args.split,
        join: args.join.params(),
        coverage_radius_m: args.coverage_radius,
    };
    let rows = planner::position_study(&cfg, &candidates, &params)?;
    run.write("fig5_position.csv", |w| {
        Ok(planner::write_study_csv(&rows, w)?)
    })?;
    for r in &rows {
        eprintln!("{}: macro accuracy {:?}", r.position_id, r.accuracy_macro);
    }
    Ok(())
}

fn report(err: &anyhow::Error) {
    eprintln!("error: {err}");
    for cause in err.chain().skip(1) {
        eprintln!("  caused by: {cause}");
    }
    if let Some(Error::Rows(rows)) = err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        for r in rows {
            eprintln!("  {r}");
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let name = match &cli.command {
        Command::Simulate(_) => "simulate",
        Command::Train(_) => "train",
        Command::Evaluate(_) => "evaluate",
        Command::Baseline(_) => "baseline",
        Command::Plan(_) => "plan",
        Command::Study(_) => "study",
    };
    let mut run = Run {
        command: name,
        out: cli.out.clone(),
        config: cli.config.clone(),
        seed: cli.seed,
        inputs: cli.config.iter().cloned().collect(),
        outputs: Vec::new(),
        started: unix_now(),
    };
    let result = fs::create_dir_all(&cli.out)
        .with_context(|| format!("creating {}", cli.out.display()))
        .and_then(|()| match &cli.command {
            Command::Simulate(a) => cmd_simulate(&cli, a, &mut run),
            Command::Train(a) => cmd_train(&cli, a, &mut run),
            Command::Evaluate(a) => cmd_evaluate(&cli, a, &mut run),
            Command::Baseline(a) => cmd_baseline(&cli, a, &mut run),
            Command::Plan(a) => cmd_plan(&cli, a, &mut run),
            Command::Study(a) => cmd_study(&cli, a, &mut run),
        });
    if let Err(e) = result.and_then(|()| run.finish()) {
        report(&e);
        run.discard();
        std::process::exit(1);
    }
}
