//! Evaluation: center-crop inference, ROC-AUC, and report output.
//!
//! The AUC comes from a threshold sweep with tied scores grouped, i.e. the
//! trapezoid rule over the ROC staircase. Accumulating twice the area in
//! exact integer counts makes the result equal to the Mann-Whitney
//! statistic (ties at half credit) down to the final division.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::checkpoint::Checkpoint;
use crate::data::image::{center_crop, preprocess};
use crate::data::load_manifest;
use crate::error::{Error, Result};
use crate::network::{forward, sigmoid};

/// Counts at the 0.5 score threshold (score >= 0.5 predicts malignant).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Confusion {
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.true_positive + self.false_positive + self.true_negative + self.false_negative
    }

    pub fn accuracy(&self) -> f64 {
        (self.true_positive + self.true_negative) as f64 / self.total() as f64
    }
}

#[derive(Debug, Clone)]
pub struct SampleScore {
    pub path: PathBuf,
    pub label: u8,
    /// Sigmoid of the logit, in [0,1].
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    /// `None` when the manifest holds a single class (AUC undefined).
    pub auc: Option<f64>,
    /// (false positive rate, true positive rate) staircase from (0,0) to
    /// (1,1); empty when AUC is undefined.
    pub roc: Vec<(f64, f64)>,
    pub confusion: Confusion,
    pub scores: Vec<SampleScore>,
}

/// Tie-grouped threshold sweep shared by [`roc_auc`] and [`roc_curve`]:
/// cumulative (false positives, true positives) after each distinct score,
/// descending. Errors unless both classes are present.
fn sweep_counts(scores: &[f64], labels: &[u8]) -> Result<(Vec<(usize, usize)>, usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::invalid(format!("non-finite score {bad}")));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::invalid(format!("label must be 0 or 1, got {bad}")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "ROC needs both classes, got {pos} positive / {neg} negative"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());

    let mut points = vec![(0usize, 0usize)];
    let (mut fp, mut tp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        // Consume the whole tie group before emitting a point.
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp, tp));
    }
    debug_assert_eq!(points.last(), Some(&(neg, pos)));
    Ok((points, pos, neg))
}

/// Area under the ROC curve; equals P(score+ > score-) + 1/2 P(tie).
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (points, pos, neg) = sweep_counts(scores, labels)?;
    // Twice the area in count units stays integral: sum of
    // d_fp * (tp_before + tp_after) over segments.
    let mut twice_area: u128 = 0;
    for pair in points.windows(2) {
        let (fp0, tp0) = pair[0];
        let (fp1, tp1) = pair[1];
        twice_area += (fp1 - fp0) as u128 * (tp0 + tp1) as u128;
    }
    Ok(twice_area as f64 / (2.0 * pos as f64 * neg as f64))
}

/// ROC staircase normalized to rates, from (0,0) to (1,1), monotone
/// non-decreasing in both coordinates.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64)>> {
    let (points, pos, neg) = sweep_counts(scores, labels)?;
    Ok(points
        .into_iter()
        .map(|(fp, tp)| (fp as f64 / neg as f64, tp as f64 / pos as f64))
        .collect())
}

/// Score every manifest record with a deterministic center crop and collect
/// AUC, ROC points, and the 0.5-threshold confusion. A single-class
/// manifest yields `auc: None` with the confusion still filled in.
pub fn evaluate(ckpt: &Checkpoint, manifest_path: &Path) -> Result<EvalReport> {
    let records = load_manifest(manifest_path)?;
    if records.is_empty() {
        return Err(Error::invalid(format!(
            "manifest {} has no records",
            manifest_path.display()
        )));
    }
    let crop = ckpt.model.config.input_shape[1];

    let mut scores = Vec::with_capacity(records.len());
    for record in &records {
        let img = preprocess(&record.image_path)?;
        let input = center_crop(&img, crop)?;
        let trace = forward(&ckpt.model, &input, &[])?;
        scores.push(SampleScore {
            path: record.image_path.clone(),
            label: record.label,
            score: sigmoid(trace.logit as f64),
        });
    }

    let raw: Vec<f64> = scores.iter().map(|s| s.score).collect();
    let labels: Vec<u8> = scores.iter().map(|s| s.label).collect();
    let (auc, roc) = match roc_auc(&raw, &labels) {
        Ok(a) => (Some(a), roc_curve(&raw, &labels)?),
        Err(Error::UndefinedMetric(_)) => (None, Vec::new()),
        Err(e) => return Err(e),
    };

    let mut confusion = Confusion {
        true_positive: 0,
        false_positive: 0,
        true_negative: 0,
        false_negative: 0,
    };
    for s in &scores {
        match (s.label, s.score >= 0.5) {
            (1, true) => confusion.true_positive += 1,
            (0, true) => confusion.false_positive += 1,
            (0, false) => confusion.true_negative += 1,
            (1, false) => confusion.false_negative += 1,
            _ => unreachable!("labels validated on load"),
        }
    }

    Ok(EvalReport {
        auc,
        roc,
        confusion,
        scores,
    })
}

/// Human-readable summary plus one line per sample.
pub fn write_report(report: &EvalReport, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let c = &report.confusion;
    let write = |out: &mut std::io::BufWriter<std::fs::File>, line: String| {
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))
    };
    write(
        &mut out,
        match report.auc {
            Some(a) => format!("auc={a}"),
            None => "auc=undefined (single-class manifest)".to_string(),
        },
    )?;
    write(&mut out, format!("samples={}", c.total()))?;
    write(&mut out, format!("accuracy={}", c.accuracy()))?;
    write(&mut out, "threshold=0.5".to_string())?;
    write(
        &mut out,
        format!(
            "tp={} fp={} tn={} fn={}",
            c.true_positive, c.false_positive, c.true_negative, c.false_negative
        ),
    )?;
    for s in &report.scores {
        write(
            &mut out,
            format!("sample={} label={} score={}", s.path.display(), s.label, s.score),
        )?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// ROC points, one `fpr tpr` pair per line.
pub fn write_roc_points(report: &EvalReport, path: &Path) -> Result<()> {
    let mut text = String::new();
    for (fpr, tpr) in &report.roc {
        text.push_str(&format!("{fpr} {tpr}\n"));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
