//! Raw annotation filtering: class mapping, strict range, minimum point count.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{in_range, points_in_box, Box3D, PointCloudFrame, RANGE_HI, RANGE_LO};
use crate::labels::{Attribute, Category, Color, Viewpoint};

use super::schema::{same_box, GroundingSample, SceneObject, NUM_VIEWS};

/// A scene object as delivered by an upstream annotation source.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RawSceneObject {
    #[serde(rename = "box")]
    pub bbox: Box3D<f64>,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<Color>,
}

/// Upstream record before filtering. Either `num_points` or a readable
/// `lidar_ref` must be present for the point-count filter.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RawRecord {
    pub sample_id: String,
    pub scene_id: String,
    pub prompt: String,
    pub category: String,
    #[serde(rename = "box")]
    pub bbox: Box3D<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_points: Option<usize>,
    #[serde(default)]
    pub lidar_ref: String,
    pub image_refs: Vec<String>,
    pub scene_boxes: Vec<RawSceneObject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub viewpoint: Option<Viewpoint>,
}

impl From<&GroundingSample> for RawRecord {
    fn from(s: &GroundingSample) -> Self {
        RawRecord {
            sample_id: s.sample_id.clone(),
            scene_id: s.scene_id.clone(),
            prompt: s.prompt.clone(),
            category: s.category.name().to_string(),
            bbox: s.referred,
            num_points: None,
            lidar_ref: s.lidar_ref.clone(),
            image_refs: s.image_refs.clone(),
            scene_boxes: s
                .scene_boxes
                .iter()
                .map(|o| RawSceneObject {
                    bbox: o.bbox,
                    category: o.category.name().to_string(),
                    color: o.color,
                })
                .collect(),
            viewpoint: Some(s.viewpoint),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub range_lo: [f64; 3],
    pub range_hi: [f64; 3],
    pub min_points: usize,
    /// Base directory for relative `lidar_ref` paths.
    #[serde(default)]
    pub lidar_root: Option<PathBuf>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            range_lo: RANGE_LO,
            range_hi: RANGE_HI,
            min_points: 1,
            lidar_root: None,
        }
    }
}

/// The three survivor filters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Category,
    Range,
    Points,
}

pub const DEFAULT_FILTER_ORDER: [FilterKind; 3] = [FilterKind::Category, FilterKind::Range, FilterKind::Points];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    /// Unparseable or inconsistent record.
    Malformed { reason: String },
    /// Well-formed record removed by a filter.
    Filtered { filter: FilterKind, detail: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub index: usize,
    pub sample_id: Option<String>,
    pub outcome: Outcome,
}

#[derive(Clone, Debug, Default)]
pub struct PreprocessReport {
    pub samples: Vec<GroundingSample>,
    /// Input records (as given) that survived, parallel to `samples`.
    pub kept: Vec<serde_json::Value>,
    pub diagnostics: Vec<Diagnostic>,
}

impl PreprocessReport {
    pub fn filtered(&self) -> usize {
        self.diagnostics
            .iter()
            .filter(|d| matches!(d.outcome, Outcome::Filtered { .. }))
            .count()
    }

    pub fn malformed(&self) -> usize {
        self.diagnostics.len() - self.filtered()
    }
}

/// Labels the referred object `unique` when no other scene object shares
/// its class.
pub fn label_attribute(referred: &Box3D<f64>, category: Category, scene_boxes: &[SceneObject]) -> Result<Attribute> {
    if !scene_boxes
        .iter()
        .any(|o| o.category == category && same_box(&o.bbox, referred))
    {
        return Err(Error::Integrity("referred box missing from scene boxes".into()));
    }
    let same_class = scene_boxes.iter().filter(|o| o.category == category).count();
    Ok(if same_class == 1 { Attribute::Unique } else { Attribute::Multiple })
}

/// Runs the filters in the default order.
pub fn preprocess(records: &[serde_json::Value], cfg: &PreprocessConfig) -> PreprocessReport {
    preprocess_with_order(records, cfg, DEFAULT_FILTER_ORDER)
}

/// Filters raw records. Malformed records produce a diagnostic and never
/// abort the batch.
pub fn preprocess_with_order(
    records: &[serde_json::Value],
    cfg: &PreprocessConfig,
    order: [FilterKind; 3],
) -> PreprocessReport {
    let mut report = PreprocessReport::default();
    let mut frames: HashMap<String, std::result::Result<PointCloudFrame<f64>, String>> = HashMap::new();
    for (index, value) in records.iter().enumerate() {
        let sample_id = value.get("sample_id").and_then(|v| v.as_str()).map(str::to_string);
        let diag = |outcome| Diagnostic {
            index,
            sample_id: sample_id.clone(),
            outcome,
        };
        let raw: RawRecord = match serde_json::from_value(value.clone()) {
            Ok(r) => r,
            Err(e) => {
                report.diagnostics.push(diag(Outcome::Malformed { reason: e.to_string() }));
                continue;
            }
        };
        if raw.image_refs.len() != NUM_VIEWS {
            report.diagnostics.push(diag(Outcome::Malformed {
                reason: format!("expected {NUM_VIEWS} image refs, found {}", raw.image_refs.len()),
            }));
            continue;
        }
        let mut verdict: Option<Outcome> = None;
        let mut category = None;
        for f in order {
            let rejected = match f {
                FilterKind::Category => match Category::from_raw(&raw.category) {
                    Some(c) => {
                        category = Some(c);
                        None
                    }
                    None => Some(format!("unmapped category `{}`", raw.category)),
                },
                FilterKind::Range => (!in_range(&raw.bbox, cfg.range_lo, cfg.range_hi)).then(|| {
                    format!("center ({}, {}, {}) outside range", raw.bbox.x, raw.bbox.y, raw.bbox.z)
                }),
                FilterKind::Points => match count_points(&raw, cfg, &mut frames) {
                    Ok(n) if n >= cfg.min_points => None,
                    Ok(n) => Some(format!("{n} points < {}", cfg.min_points)),
                    Err(e) => {
                        verdict = Some(Outcome::Malformed { reason: e });
                        break;
                    }
                },
            };
            if let Some(detail) = rejected {
                verdict = Some(Outcome::Filtered { filter: f, detail });
                break;
            }
        }
        if let Some(outcome) = verdict {
            log::debug!("record {index} dropped: {outcome:?}");
            report.diagnostics.push(diag(outcome));
            continue;
        }
        let category = category.expect("category filter ran");
        let scene_boxes: Vec<SceneObject> = raw
            .scene_boxes
            .iter()
            .filter_map(|o| {
                Category::from_raw(&o.category).map(|c| SceneObject {
                    bbox: o.bbox,
                    category: c,
                    color: o.color,
                })
            })
            .collect();
        let attribute = match label_attribute(&raw.bbox, category, &scene_boxes) {
            Ok(a) => a,
            Err(e) => {
                report.diagnostics.push(diag(Outcome::Malformed { reason: e.to_string() }));
                continue;
            }
        };
        let viewpoint = raw
            .viewpoint
            .unwrap_or_else(|| Viewpoint::from_azimuth(raw.bbox.azimuth()));
        report.samples.push(GroundingSample {
            sample_id: raw.sample_id,
            scene_id: raw.scene_id,
            prompt: raw.prompt,
            lidar_ref: raw.lidar_ref,
            image_refs: raw.image_refs,
            referred: raw.bbox,
            category,
            attribute,
            viewpoint,
            scene_boxes,
        });
        report.kept.push(value.clone());
    }
    report
}

fn count_points(
    raw: &RawRecord,
    cfg: &PreprocessConfig,
    cache: &mut HashMap<String, std::result::Result<PointCloudFrame<f64>, String>>,
) -> std::result::Result<usize, String> {
    if let Some(n) = raw.num_points {
        return Ok(n);
    }
    if raw.lidar_ref.is_empty() {
        return Err("no point count and no lidar_ref".into());
    }
    let frame = cache.entry(raw.lidar_ref.clone()).or_insert_with(|| {
        let path = resolve(cfg.lidar_root.as_deref(), &raw.lidar_ref);
        PointCloudFrame::read(&path).map_err(|e| e.to_string())
    });
    match frame {
        Ok(f) => Ok(points_in_box(f, &raw.bbox)),
        Err(e) => Err(e.clone()),
    }
}

pub(crate) fn resolve(root: Option<&Path>, rel: &str) -> PathBuf {
    match root {
        Some(r) if Path::new(rel).is_relative() => r.join(rel),
        _ => PathBuf::from(rel),
    }
}
