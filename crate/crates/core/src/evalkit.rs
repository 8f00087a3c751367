//! Grounding accuracy under BEV and 3D IoU thresholds, split by attribute.

use std::collections::{HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datakit::GroundingSample;
use crate::error::{Error, Result};
use crate::geometry::{bev_iou, iou_3d, Box3D};
use crate::labels::Attribute;

pub const DEFAULT_THRESHOLDS: [f64; 2] = [0.25, 0.5];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IouKind {
    #[serde(rename = "bev")]
    Bev,
    #[serde(rename = "3d")]
    ThreeD,
}

impl IouKind {
    pub fn iou(self, a: &Box3D<f64>, b: &Box3D<f64>) -> f64 {
        match self {
            IouKind::Bev => bev_iou(a, b),
            IouKind::ThreeD => iou_3d(a, b),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            IouKind::Bev => "BEV",
            IouKind::ThreeD => "3D",
        }
    }
}

impl FromStr for IouKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bev" => Ok(IouKind::Bev),
            "3d" => Ok(IouKind::ThreeD),
            other => Err(Error::InvalidArgument(format!("unknown IoU kind `{other}`"))),
        }
    }
}

/// One scored grounding: the single predicted box against the referred box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub sample_id: String,
    pub predicted: Box3D<f64>,
    pub gt: Box3D<f64>,
    pub attribute: Attribute,
}

/// Line of a prediction file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    #[serde(rename = "box")]
    pub bbox: Box3D<f64>,
    pub confidence: f64,
}

/// Pairs predictions with ground truth by sample id. Every ground-truth
/// sample must have exactly one prediction.
pub fn join(predictions: &[PredictionRecord], samples: &[GroundingSample]) -> Result<Vec<EvalRecord>> {
    let mut by_id: HashMap<&str, &PredictionRecord> = HashMap::with_capacity(predictions.len());
    for p in predictions {
        if by_id.insert(p.sample_id.as_str(), p).is_some() {
            return Err(Error::Integrity(format!("duplicate prediction for {}", p.sample_id)));
        }
    }
    let mut missing = Vec::new();
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        match by_id.get(s.sample_id.as_str()) {
            Some(p) => out.push(EvalRecord {
                sample_id: s.sample_id.clone(),
                predicted: p.bbox,
                gt: s.referred,
                attribute: s.attribute,
            }),
            None => missing.push(s.sample_id.clone()),
        }
    }
    if !missing.is_empty() {
        let shown: Vec<_> = missing.iter().take(5).cloned().collect();
        return Err(Error::Integrity(format!(
            "{} samples have no prediction (e.g. {})",
            missing.len(),
            shown.join(", ")
        )));
    }
    let known: HashSet<&str> = samples.iter().map(|s| s.sample_id.as_str()).collect();
    let stray = predictions.iter().filter(|p| !known.contains(p.sample_id.as_str())).count();
    if stray > 0 {
        log::warn!("{stray} predictions refer to unknown samples and are ignored");
    }
    Ok(out)
}

fn hits(records: &[&EvalRecord], kind: IouKind, threshold: f64) -> usize {
    records
        .iter()
        .filter(|r| kind.iou(&r.predicted, &r.gt) >= threshold)
        .count()
}

/// Fraction of records whose IoU reaches `threshold` (inclusive).
pub fn accuracy(records: &[EvalRecord], kind: IouKind, threshold: f64) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Empty("evaluation records"));
    }
    let refs: Vec<&EvalRecord> = records.iter().collect();
    Ok(hits(&refs, kind, threshold) as f64 / records.len() as f64)
}

/// Accuracies of one subgroup; `None` cells mark an absent subgroup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub group: String,
    pub count: usize,
    pub bev: Vec<Option<f64>>,
    #[serde(rename = "3d")]
    pub iou3d: Vec<Option<f64>>,
}

impl ReportRow {
    pub fn cell(&self, kind: IouKind, i: usize) -> Option<f64> {
        match kind {
            IouKind::Bev => self.bev[i],
            IouKind::ThreeD => self.iou3d[i],
        }
    }
}

/// Unique / multiple / overall accuracies under both IoU kinds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub thresholds: Vec<f64>,
    pub unique: ReportRow,
    pub multiple: ReportRow,
    pub overall: ReportRow,
    /// Number of runs averaged into this report.
    #[serde(default = "one")]
    pub trials: usize,
}

fn one() -> usize {
    1
}

fn row(group: &str, records: &[&EvalRecord], thresholds: &[f64]) -> ReportRow {
    let cells = |kind| {
        thresholds
            .iter()
            .map(|&t| (!records.is_empty()).then(|| hits(records, kind, t) as f64 / records.len() as f64))
            .collect()
    };
    ReportRow {
        group: group.to_string(),
        count: records.len(),
        bev: cells(IouKind::Bev),
        iou3d: cells(IouKind::ThreeD),
    }
}

/// Builds the report. The overall row is computed over all records, not as
/// a mean of subgroup accuracies.
pub fn report(records: &[EvalRecord]) -> Report {
    report_with_thresholds(records, &DEFAULT_THRESHOLDS)
}

pub fn report_with_thresholds(records: &[EvalRecord], thresholds: &[f64]) -> Report {
    let unique: Vec<&EvalRecord> = records.iter().filter(|r| r.attribute == Attribute::Unique).collect();
    let multiple: Vec<&EvalRecord> = records.iter().filter(|r| r.attribute == Attribute::Multiple).collect();
    let all: Vec<&EvalRecord> = records.iter().collect();
    Report {
        thresholds: thresholds.to_vec(),
        unique: row("unique", &unique, thresholds),
        multiple: row("multiple", &multiple, thresholds),
        overall: row("overall", &all, thresholds),
        trials: 1,
    }
}

/// Cell-wise mean of reports over repeated trials.
pub fn mean_report(reports: &[Report]) -> Result<Report> {
    let first = reports.first().ok_or(Error::Empty("reports"))?;
    if reports.iter().any(|r| r.thresholds != first.thresholds) {
        return Err(Error::InvalidArgument("reports use different thresholds".into()));
    }
    let n = reports.len() as f64;
    let avg = |pick: &dyn Fn(&Report) -> &ReportRow| -> ReportRow {
        let base = pick(first);
        let mean_cells = |kind: IouKind| -> Vec<Option<f64>> {
            (0..first.thresholds.len())
                .map(|i| {
                    let vals: Option<Vec<f64>> = reports.iter().map(|r| pick(r).cell(kind, i)).collect();
                    vals.map(|v| v.iter().sum::<f64>() / n)
                })
                .collect()
        };
        ReportRow {
            group: base.group.clone(),
            count: base.count,
            bev: mean_cells(IouKind::Bev),
            iou3d: mean_cells(IouKind::ThreeD),
        }
    };
    Ok(Report {
        thresholds: first.thresholds.clone(),
        unique: avg(&|r| &r.unique),
        multiple: avg(&|r| &r.multiple),
        overall: avg(&|r| &r.overall),
        trials: reports.len(),
    })
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let groups = [&self.unique, &self.multiple, &self.overall];
        let mut head1 = format!("{:<6}", "");
        let mut head2 = format!("{:<6}", "IoU");
        let cell_w = 10;
        for g in groups {
            let title = format!("{} (n={})", capitalize(&g.group), g.count);
            let _ = write!(head1, " | {:<w$}", title, w = cell_w * self.thresholds.len());
            head2.push_str(" |");
            for t in &self.thresholds {
                let _ = write!(head2, " {:<w$}", format!("Acc@{t}"), w = cell_w - 1);
            }
        }
        writeln!(f, "{}", head1.trim_end())?;
        writeln!(f, "{}", head2.trim_end())?;
        for kind in [IouKind::Bev, IouKind::ThreeD] {
            let mut line = format!("{:<6}", kind.label());
            for g in groups {
                line.push_str(" |");
                for i in 0..self.thresholds.len() {
                    let cell = match g.cell(kind, i) {
                        Some(v) => format!("{:.2}", v * 100.0),
                        None => "-".to_string(),
                    };
                    let _ = write!(line, " {:<w$}", cell, w = cell_w - 1);
                }
            }
            writeln!(f, "{}", line.trim_end())?;
        }
        if self.trials > 1 {
            writeln!(f, "(mean over {} trials)", self.trials)?;
        }
        Ok(())
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(first) => first.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(x: f64) -> Box3D<f64> {
        Box3D::new(x, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0).unwrap()
    }

    /// A box shifted along x so that its BEV IoU with `unit(0)` equals `iou`.
    fn with_iou(iou: f64) -> Box3D<f64> {
        // overlap (1-d) / (1+d) = iou  =>  d = (1-iou)/(1+iou)
        unit((1.0 - iou) / (1.0 + iou))
    }

    fn rec(id: &str, iou: f64, attribute: Attribute) -> EvalRecord {
        EvalRecord {
            sample_id: id.into(),
            predicted: with_iou(iou),
            gt: unit(0.0),
            attribute,
        }
    }

    #[test]
    fn perfect_predictions() {
        let r: Vec<_> = (0..5).map(|i| EvalRecord { sample_id: i.to_string(), predicted: unit(3.0), gt: unit(3.0), attribute: Attribute::Multiple }).collect();
        for t in [0.01, 0.25, 0.5, 0.99, 1.0] {
            assert_eq!(accuracy(&r, IouKind::Bev, t).unwrap(), 1.0);
            assert_eq!(accuracy(&r, IouKind::ThreeD, t).unwrap(), 1.0);
        }
    }

    #[test]
    fn empty_is_an_error() {
        assert!(accuracy(&[], IouKind::Bev, 0.25).is_err());
    }

    #[test]
    fn threshold_is_inclusive() {
        let r = [EvalRecord { sample_id: "a".into(), predicted: unit(0.5), gt: unit(0.0), attribute: Attribute::Unique }];
        let iou = bev_iou(&unit(0.5), &unit(0.0));
        assert_eq!(accuracy(&r, IouKind::Bev, iou).unwrap(), 1.0);
    }

    #[test]
    fn all_unique_marks_multiple_absent() {
        let r = vec![rec("a", 0.9, Attribute::Unique), rec("b", 0.1, Attribute::Unique)];
        let rep = report(&r);
        assert_eq!(rep.multiple.count, 0);
        assert!(rep.multiple.bev.iter().all(Option::is_none));
        assert_eq!(rep.overall.bev, rep.unique.bev);
        let text = rep.to_string();
        assert!(text.contains("Multiple (n=0)"));
        assert!(text.contains(" - "));
    }

    #[test]
    fn join_requires_every_sample() {
        let s: Vec<GroundingSample> = Vec::new();
        let p = vec![PredictionRecord { sample_id: "x".into(), bbox: unit(0.0), confidence: 1.0 }];
        assert!(join(&p, &s).unwrap().is_empty());
        let dup = vec![p[0].clone(), p[0].clone()];
        assert!(join(&dup, &s).is_err());
    }
}
