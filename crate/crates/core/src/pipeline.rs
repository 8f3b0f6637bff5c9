//! End-to-end helpers: simulate a scenario, join it into features, and score
//! an SVM on a stratified holdout.

use std::io::Write;

use crate::dataset::{build_features, split_train_test, Dataset, JoinParams, TrafficClass};
use crate::error::Result;
use crate::kmeans::{assign_classes, fit, KMeansModel, KMeansParams};
use crate::metrics::EvalReport;
use crate::radio_model::{simulate_scenario, ScenarioConfig};
use crate::record::RssiRecord;
use crate::svm::{train, SvmModel, SvmParams};

pub fn simulate_records(cfg: &ScenarioConfig) -> Result<Vec<RssiRecord>> {
    Ok(simulate_scenario(cfg)?.collect())
}

/// Simulated feature vectors with gateways in configuration order.
pub fn simulate_dataset(cfg: &ScenarioConfig, join: JoinParams) -> Result<Dataset<f64>> {
    let records = simulate_records(cfg)?;
    build_features(&records, &cfg.gateway_ids, join)
}

#[derive(Debug, Clone)]
pub struct Holdout {
    pub model: SvmModel<f64>,
    pub report: EvalReport,
    pub n_train: usize,
}

/// Stratified split, train on the first part, evaluate on the rest.
pub fn holdout_svm(
    ds: &Dataset<f64>,
    train_fraction: f64,
    split_seed: u64,
    params: &SvmParams<f64>,
) -> Result<Holdout> {
    let (train_ds, test_ds) = split_train_test(ds, train_fraction, split_seed, true)?;
    let model = train(&train_ds, params)?;
    let predicted = model.predict_dataset(&test_ds)?;
    let report = EvalReport::evaluate(&test_ds.labels()?, &predicted, &ds.classes())?;
    Ok(Holdout {
        model,
        report,
        n_train: train_ds.len(),
    })
}

/// Clusters the whole dataset, labels clusters by majority and scores the
/// resulting classifier on the same vectors.
pub fn kmeans_baseline(
    ds: &Dataset<f64>,
    params: &KMeansParams,
) -> Result<(KMeansModel<f64>, EvalReport)> {
    let labels = ds.labels()?;
    let model = assign_classes(&fit(ds, params)?, ds)?;
    let predicted = model.predict_dataset(ds)?;
    let report = EvalReport::evaluate(
        &labels,
        &predicted,
        &TrafficClass::all().collect::<Vec<_>>(),
    )?;
    Ok((model, report))
}

/// One-row table of per-class accuracy, columns `class_1..class_5`.
pub fn write_class_accuracy_row<W: Write>(report: &EvalReport, mut out: W) -> Result<()> {
    let header: Vec<String> = TrafficClass::all().map(|c| format!("class_{c}")).collect();
    writeln!(out, "{}", header.join(","))?;
    let row: Vec<String> = TrafficClass::all()
        .map(|c| {
            report
                .class(c)
                .map_or_else(|| "NA".to_string(), |r| r.accuracy.to_string())
        })
        .collect();
    writeln!(out, "{}", row.join(","))?;
    Ok(())
}
