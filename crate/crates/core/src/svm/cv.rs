use serde::Serialize;

use super::{train, SvmParams};
use crate::dataset::{stratified_folds, Dataset};
use crate::error::Result;
use crate::metrics::{EvalReport, MacroReport};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvReport {
    /// Fold index of every input vector.
    pub assignment: Vec<usize>,
    pub folds: Vec<EvalReport>,
    /// Unweighted mean of the per-fold macro measures.
    pub mean: MacroReport,
}

/// Stratified k-fold cross-validation of the one-vs-one SVM.
pub fn cross_validate<T: Scalar>(
    ds: &Dataset<T>,
    k: usize,
    params: &SvmParams<T>,
) -> Result<CvReport> {
    let assignment = stratified_folds(ds, k, params.seed)?;
    let classes = ds.classes();
    let labels = ds.labels()?;
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let train_idx: Vec<usize> = (0..ds.len()).filter(|&i| assignment[i] != f).collect();
        let valid_idx: Vec<usize> = (0..ds.len()).filter(|&i| assignment[i] == f).collect();
        let model = train(&ds.subset(&train_idx), params)?;
        let valid = ds.subset(&valid_idx);
        let predicted = model.predict_dataset(&valid)?;
        let truth: Vec<_> = valid_idx.iter().map(|&i| labels[i]).collect();
        folds.push(EvalReport::evaluate(&truth, &predicted, &classes)?);
    }
    let avg = |get: fn(&MacroReport) -> Option<f64>| {
        let vals: Vec<f64> = folds.iter().filter_map(|r| get(&r.macro_avg)).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    let mean = MacroReport {
        accuracy: avg(|m| m.accuracy),
        precision: avg(|m| m.precision),
        recall: avg(|m| m.recall),
        false_detection_rate: avg(|m| m.false_detection_rate),
    };
    Ok(CvReport {
        assignment,
        folds,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::TrafficClass;
    use crate::error::Error;

    fn ds(per: usize, gap: f64) -> Dataset<f64> {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..3u8 {
            for i in 0..per {
                let t = i as f64;
                rows.push(vec![
                    c as f64 * gap + 0.3 * (t * 1.1).sin(),
                    0.3 * (t * 0.6).cos(),
                ]);
                labels.push(TrafficClass::new(c + 1).unwrap());
            }
        }
        Dataset::from_rows(rows, labels)
    }

    #[test]
    fn separable_blobs_score_perfectly() {
        let report = cross_validate(&ds(10, 20.0), 5, &SvmParams::default()).unwrap();
        assert_eq!(report.folds.len(), 5);
        assert_eq!(report.mean.accuracy, Some(1.0));
    }

    #[test]
    fn folds_cover_each_vector_once() {
        let data = ds(2, 20.0);
        let report = cross_validate(&data, 2, &SvmParams::default()).unwrap();
        let total: u64 = report.folds.iter().map(|r| r.n_samples).sum();
        assert_eq!(total as usize, data.len());
        let again = cross_validate(&data, 2, &SvmParams::default()).unwrap();
        assert_eq!(report, again);
    }

    #[test]
    fn too_few_members() {
        assert!(matches!(
            cross_validate(&ds(3, 5.0), 4, &SvmParams::default()),
            Err(Error::Fold(_))
        ));
    }
}
