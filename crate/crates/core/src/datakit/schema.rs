//! Sample store records and JSON-Lines helpers.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Box3D;
use crate::labels::{Attribute, Category, Color, Viewpoint};

/// Number of camera views per frame.
pub const NUM_VIEWS: usize = 6;

/// An annotated object in the frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    #[serde(rename = "box")]
    pub bbox: Box3D<f64>,
    pub category: Category,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<Color>,
}

/// One prompt / point cloud / images / referred box record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundingSample {
    pub sample_id: String,
    pub scene_id: String,
    pub prompt: String,
    pub lidar_ref: String,
    pub image_refs: Vec<String>,
    pub referred: Box3D<f64>,
    pub category: Category,
    pub attribute: Attribute,
    pub viewpoint: Viewpoint,
    pub scene_boxes: Vec<SceneObject>,
}

impl GroundingSample {
    /// Checks the record-level invariants.
    pub fn validate(&self) -> Result<()> {
        if self.image_refs.len() != NUM_VIEWS {
            return Err(Error::Integrity(format!(
                "{}: expected {NUM_VIEWS} image refs, found {}",
                self.sample_id,
                self.image_refs.len()
            )));
        }
        if self.prompt.trim().is_empty() {
            return Err(Error::Integrity(format!("{}: empty prompt", self.sample_id)));
        }
        let attr = super::label_attribute(&self.referred, self.category, &self.scene_boxes)?;
        if attr != self.attribute {
            return Err(Error::Integrity(format!(
                "{}: attribute {} disagrees with scene ({attr})",
                self.sample_id, self.attribute
            )));
        }
        Ok(())
    }

    /// The referred object's entry in `scene_boxes`.
    pub fn referred_object(&self) -> Option<&SceneObject> {
        self.scene_boxes
            .iter()
            .find(|o| o.category == self.category && same_box(&o.bbox, &self.referred))
    }
}

/// Box equality up to numeric noise from serialization.
pub fn same_box(a: &Box3D<f64>, b: &Box3D<f64>) -> bool {
    const TOL: f64 = 1e-6;
    let da = crate::geometry::normalize_angle(a.alpha - b.alpha).abs();
    (a.x - b.x).abs() < TOL
        && (a.y - b.y).abs() < TOL
        && (a.z - b.z).abs() < TOL
        && (a.l - b.l).abs() < TOL
        && (a.w - b.w).abs() < TOL
        && (a.h - b.h).abs() < TOL
        && da < TOL
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeCounts {
    pub unique: usize,
    pub multiple: usize,
}

impl AttributeCounts {
    pub fn add(&mut self, a: Attribute) {
        match a {
            Attribute::Unique => self.unique += 1,
            Attribute::Multiple => self.multiple += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.unique + self.multiple
    }
}

/// Disjoint train/test partition of sample ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub train_counts: AttributeCounts,
    pub test_counts: AttributeCounts,
}

impl SplitManifest {
    /// Splits by scene so no scene contributes to both sides: scenes are
    /// shuffled by `seed` and the leading `test_fraction` of them go to test.
    pub fn by_scene(samples: &[GroundingSample], test_fraction: f64, seed: u64) -> Result<Self> {
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "test fraction must lie in (0, 1), got {test_fraction}"
            )));
        }
        let mut scenes: Vec<&str> = samples.iter().map(|s| s.scene_id.as_str()).collect();
        scenes.sort_unstable();
        scenes.dedup();
        let n_test = ((scenes.len() as f64) * test_fraction).round() as usize;
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut order = scenes.clone();
        order.shuffle(&mut rng);
        let test_scenes: std::collections::BTreeSet<&str> = order.into_iter().take(n_test).collect();
        let mut m = SplitManifest {
            train: Vec::new(),
            test: Vec::new(),
            train_counts: AttributeCounts::default(),
            test_counts: AttributeCounts::default(),
        };
        for s in samples {
            if test_scenes.contains(s.scene_id.as_str()) {
                m.test.push(s.sample_id.clone());
                m.test_counts.add(s.attribute);
            } else {
                m.train.push(s.sample_id.clone());
                m.train_counts.add(s.attribute);
            }
        }
        Ok(m)
    }

    pub fn is_disjoint(&self) -> bool {
        let train: std::collections::HashSet<&String> = self.train.iter().collect();
        self.test.iter().all(|id| !train.contains(id))
    }
}

/// Reads one JSON value per non-empty line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_samples(path: &Path) -> Result<Vec<GroundingSample>> {
    read_jsonl(path)
}

pub fn write_samples(path: &Path, samples: &[GroundingSample]) -> Result<()> {
    write_jsonl(path, samples)
}
