//! Confusion matrices and the four evaluation measures (accuracy, precision,
//! recall, false detection rate), per class one-vs-rest plus macro averages.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::TrafficClass;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// An exact ratio of counts. A zero denominator is the undefined marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rate {
    pub num: u64,
    pub den: u64,
}

impl Rate {
    pub fn new(num: u64, den: u64) -> Self {
        Self { num, den }
    }

    pub fn is_defined(self) -> bool {
        self.den != 0
    }

    pub fn value<T: Scalar>(self) -> Option<T> {
        self.is_defined()
            .then(|| T::from_u64(self.num).unwrap() / T::from_u64(self.den).unwrap())
    }

    pub fn get(self) -> Option<f64> {
        self.value::<f64>()
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.get() {
            Some(v) => write!(f, "{v}"),
            None => f.write_str(UNDEFINED),
        }
    }
}

/// Marker written in place of a rate whose denominator is zero.
pub const UNDEFINED: &str = "NA";

/// `(TP + TN) / (TP + TN + FP + FN)`
pub fn accuracy(tp: u64, tn: u64, fp: u64, fn_: u64) -> Rate {
    Rate::new(tp + tn, tp + tn + fp + fn_)
}

/// `TP / (TP + FP)`
pub fn precision(tp: u64, fp: u64) -> Rate {
    Rate::new(tp, tp + fp)
}

/// `TP / (TP + FN)`
pub fn recall(tp: u64, fn_: u64) -> Rate {
    Rate::new(tp, tp + fn_)
}

/// `FP / (FP + TN)`. This is the false-positive rate, kept under the name
/// used in the evaluation tables.
pub fn false_detection_rate(fp: u64, tn: u64) -> Rate {
    Rate::new(fp, fp + tn)
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<TrafficClass>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(classes: Vec<TrafficClass>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = classes.len();
        if counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(Error::Domain(format!("confusion counts must be {k}x{k}")));
        }
        Ok(Self { classes, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn index(&self, c: TrafficClass) -> Result<usize> {
        self.classes
            .iter()
            .position(|&x| x == c)
            .ok_or_else(|| Error::Domain(format!("class {c} is not in the class order")))
    }

    pub fn get(&self, truth: TrafficClass, predicted: TrafficClass) -> Result<u64> {
        Ok(self.counts[self.index(truth)?][self.index(predicted)?])
    }
}

pub fn confusion(
    truth: &[TrafficClass],
    predicted: &[TrafficClass],
    classes: &[TrafficClass],
) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::Domain(format!(
            "{} true labels vs {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let mut cm = ConfusionMatrix {
        classes: classes.to_vec(),
        counts: vec![vec![0; classes.len()]; classes.len()],
    };
    for (&t, &p) in truth.iter().zip(predicted) {
        let (i, j) = (cm.index(t)?, cm.index(p)?);
        cm.counts[i][j] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

/// One-vs-rest reduction of `cm` for class `c`.
pub fn binarize(cm: &ConfusionMatrix, c: TrafficClass) -> Result<BinaryCounts> {
    let ci = cm.index(c)?;
    let tp = cm.counts[ci][ci];
    let fn_ = cm.counts[ci].iter().sum::<u64>() - tp;
    let fp = cm.counts.iter().map(|row| row[ci]).sum::<u64>() - tp;
    let tn = cm.total() - tp - fn_ - fp;
    Ok(BinaryCounts { tp, tn, fp, fn_ })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: TrafficClass,
    pub counts: BinaryCounts,
    pub accuracy: Rate,
    pub precision: Rate,
    pub recall: Rate,
    pub false_detection_rate: Rate,
}

/// Unweighted mean over the classes where each measure is defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroReport {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub false_detection_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: Vec<ClassReport>,
    #[serde(rename = "macro")]
    pub macro_avg: MacroReport,
    pub n_samples: u64,
    pub confusion: ConfusionMatrix,
}

fn mean_defined(rates: impl Iterator<Item = Rate>) -> Option<f64> {
    let vals: Vec<f64> = rates.filter_map(Rate::get).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

pub const REPORT_COLUMNS: &str = "class,tp,tn,fp,fn,accuracy,precision,recall,fdr";

impl EvalReport {
    pub fn from_confusion(cm: ConfusionMatrix) -> Self {
        let per_class: Vec<ClassReport> = cm
            .classes
            .iter()
            .map(|&c| {
                let b = binarize(&cm, c).expect("class taken from the matrix");
                ClassReport {
                    class: c,
                    counts: b,
                    accuracy: accuracy(b.tp, b.tn, b.fp, b.fn_),
                    precision: precision(b.tp, b.fp),
                    recall: recall(b.tp, b.fn_),
                    false_detection_rate: false_detection_rate(b.fp, b.tn),
                }
            })
            .collect();
        let macro_avg = MacroReport {
            accuracy: mean_defined(per_class.iter().map(|r| r.accuracy)),
            precision: mean_defined(per_class.iter().map(|r| r.precision)),
            recall: mean_defined(per_class.iter().map(|r| r.recall)),
            false_detection_rate: mean_defined(per_class.iter().map(|r| r.false_detection_rate)),
        };
        Self {
            per_class,
            macro_avg,
            n_samples: cm.total(),
            confusion: cm,
        }
    }

    pub fn evaluate(
        truth: &[TrafficClass],
        predicted: &[TrafficClass],
        classes: &[TrafficClass],
    ) -> Result<Self> {
        Ok(Self::from_confusion(confusion(truth, predicted, classes)?))
    }

    pub fn class(&self, c: TrafficClass) -> Option<&ClassReport> {
        self.per_class.iter().find(|r| r.class == c)
    }

    /// Per-class rows followed by a `macro` row with empty count columns.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{REPORT_COLUMNS}")?;
        for r in &self.per_class {
            let b = r.counts;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.class,
                b.tp,
                b.tn,
                b.fp,
                b.fn_,
                r.accuracy,
                r.precision,
                r.recall,
                r.false_detection_rate
            )?;
        }
        let opt = |v: Option<f64>| v.map_or_else(|| UNDEFINED.to_string(), |x| x.to_string());
        let m = &self.macro_avg;
        writeln!(
            out,
            "macro,,,,,{},{},{},{}",
            opt(m.accuracy),
            opt(m.precision),
            opt(m.recall),
            opt(m.false_detection_rate)
        )?;
        Ok(())
    }

    /// Human-readable JSON summary with rates as plain numbers (`null` when undefined).
    pub fn summary_json(&self) -> serde_json::Value {
        let classes: Vec<_> = self
            .per_class
            .iter()
            .map(|r| {
                json!({
                    "class": r.class.id(),
                    "tp": r.counts.tp, "tn": r.counts.tn, "fp": r.counts.fp, "fn": r.counts.fn_,
                    "accuracy": r.accuracy.get(),
                    "precision": r.precision.get(),
                    "recall": r.recall.get(),
                    "false_detection_rate": r.false_detection_rate.get(),
                })
            })
            .collect();
        json!({
            "n_samples": self.n_samples,
            "per_class": classes,
            "macro": self.macro_avg,
            "confusion": { "classes": self.confusion.classes, "counts": self.confusion.counts },
        })
    }
}
