//! Aggregate corpus statistics.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::Attribute;
use crate::textenc::tokenize;

use super::schema::{AttributeCounts, GroundingSample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceSummary {
    pub unique: Option<f64>,
    pub multiple: Option<f64>,
    pub overall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub samples: usize,
    pub scenes: usize,
    pub prompts_per_scene_mean: f64,
    pub attributes: AttributeCounts,
    /// Referred-object class histogram.
    pub per_class: BTreeMap<String, usize>,
    pub per_class_unique: BTreeMap<String, usize>,
    pub per_class_multiple: BTreeMap<String, usize>,
    /// Mean planar range of the referred object, meters.
    pub mean_distance: DistanceSummary,
    pub mean_prompt_tokens: f64,
    pub vocabulary: BTreeMap<String, usize>,
}

pub fn corpus_stats(samples: &[GroundingSample]) -> Result<CorpusStats> {
    if samples.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let scenes: BTreeSet<&str> = samples.iter().map(|s| s.scene_id.as_str()).collect();
    let mut attributes = AttributeCounts::default();
    let mut per_class = BTreeMap::new();
    let mut per_class_unique = BTreeMap::new();
    let mut per_class_multiple = BTreeMap::new();
    let mut dist = [(0.0, 0usize); 2];
    let mut vocabulary = BTreeMap::new();
    let mut tokens_total = 0usize;
    for s in samples {
        attributes.add(s.attribute);
        let name = s.category.name().to_string();
        *per_class.entry(name.clone()).or_insert(0) += 1;
        let (bucket, slot) = match s.attribute {
            Attribute::Unique => (&mut per_class_unique, 0),
            Attribute::Multiple => (&mut per_class_multiple, 1),
        };
        *bucket.entry(name).or_insert(0) += 1;
        dist[slot].0 += s.referred.planar_range();
        dist[slot].1 += 1;
        // Prompts that fail to tokenize contribute no vocabulary.
        if let Ok(tokens) = tokenize(&s.prompt) {
            tokens_total += tokens.len();
            for t in tokens {
                *vocabulary.entry(t).or_insert(0) += 1;
            }
        }
    }
    let mean = |(sum, n): (f64, usize)| (n > 0).then(|| sum / n as f64);
    Ok(CorpusStats {
        samples: samples.len(),
        scenes: scenes.len(),
        prompts_per_scene_mean: samples.len() as f64 / scenes.len() as f64,
        attributes,
        per_class,
        per_class_unique,
        per_class_multiple,
        mean_distance: DistanceSummary {
            unique: mean(dist[0]),
            multiple: mean(dist[1]),
            overall: (dist[0].0 + dist[1].0) / samples.len() as f64,
        },
        mean_prompt_tokens: tokens_total as f64 / samples.len() as f64,
        vocabulary,
    })
}
