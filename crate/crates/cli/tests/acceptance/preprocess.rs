//! The bundled ten-record fixture and the range boundaries.

use grounding_core::datakit::{preprocess, PreprocessConfig};
use grounding_core::labels::Attribute;
use serde_json::Value;

use crate::{ensure, Outcome};

fn fixture() -> Vec<Value> {
    include_str!("../../../core/tests/fixtures/preprocess_10.jsonl")
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

pub fn run() -> Outcome {
    let records = fixture();
    ensure!(records.len() == 10, "fixture has {} records", records.len());
    let cfg = PreprocessConfig::default();
    let report = preprocess(&records, &cfg);
    let got: Vec<(&str, Attribute)> = report.samples.iter().map(|s| (s.sample_id.as_str(), s.attribute)).collect();
    // Hand-labelled: fx-00 is the only car, fx-01 one of two pedestrians,
    // fx-08 one of two trucks, fx-09 the only cone.
    let want = [
        ("fx-00", Attribute::Unique),
        ("fx-01", Attribute::Multiple),
        ("fx-08", Attribute::Multiple),
        ("fx-09", Attribute::Unique),
    ];
    ensure!(got == want, "survivors {got:?}, expected {want:?}");
    ensure!(
        report.filtered() == 6 && report.malformed() == 0,
        "{} filtered / {} malformed",
        report.filtered(),
        report.malformed()
    );

    // x, y in (-54, 54), z in (-5, 3): on the face is out, just inside is in.
    let base = records[0].clone();
    let faces = [("x", -54.0), ("x", 54.0), ("y", -54.0), ("y", 54.0), ("z", -5.0), ("z", 3.0)];
    for (axis, v) in faces {
        for (offset, survives) in [(0.0, false), (if v < 0.0 { 1e-6 } else { -1e-6 }, true)] {
            let mut rec = base.clone();
            rec["box"][axis] = Value::from(v + offset);
            rec["scene_boxes"][0]["box"][axis] = Value::from(v + offset);
            let kept = preprocess(&[rec], &cfg).samples.len() == 1;
            ensure!(kept == survives, "center {axis} = {}: kept {kept}", v + offset);
        }
    }
    Ok(format!(
        "10 records -> {} survivors {:?} with labels as hand-checked; all six range faces exclusive",
        got.len(),
        got.iter().map(|g| g.0).collect::<Vec<_>>()
    ))
}
