//! Accuracy on a hand fixture and the weighted overall row.

use grounding_core::evalkit::{accuracy, report, EvalRecord, IouKind};
use grounding_core::geometry::{bev_iou, iou_3d};
use grounding_core::labels::Attribute;
use grounding_core::Box3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{ensure, Outcome};

const L: f64 = 4.0;

/// Two equal axis-aligned boxes slid apart by `d` along their length have
/// IoU `(L - d) / (L + d)`, in BEV and in 3D alike.
fn record(iou: f64, attribute: Attribute, id: usize) -> EvalRecord {
    let gt = Box3::new(10.0, -3.0, -1.0, L, 2.0, 1.5, 0.0).unwrap();
    let d = L * (1.0 - iou) / (1.0 + iou);
    EvalRecord {
        sample_id: format!("s{id:04}"),
        predicted: Box3 { x: gt.x + d, ..gt },
        gt,
        attribute,
    }
}

pub fn run() -> Outcome {
    let ious = [0.1, 0.3, 0.6, 0.9];
    let attrs = [Attribute::Unique, Attribute::Multiple, Attribute::Unique, Attribute::Multiple];
    let recs: Vec<EvalRecord> = ious.iter().zip(attrs).enumerate().map(|(i, (&v, a))| record(v, a, i)).collect();
    for (r, &want) in recs.iter().zip(&ious) {
        let (b, v) = (bev_iou(&r.predicted, &r.gt), iou_3d(&r.predicted, &r.gt));
        ensure!((b - want).abs() < 1e-12 && (v - want).abs() < 1e-12, "fixture IoU {b} / {v}, wanted {want}");
    }
    for kind in [IouKind::Bev, IouKind::ThreeD] {
        let (a25, a50) = (accuracy(&recs, kind, 0.25).unwrap(), accuracy(&recs, kind, 0.5).unwrap());
        ensure!(a25 == 0.75 && a50 == 0.5, "{}: Acc@0.25 {a25}, Acc@0.5 {a50}", kind.label());
    }

    // Unequal subgroups with random IoUs; the overall cell must be the
    // count-weighted mean of the subgroup cells.
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let (n_u, n_m) = (137, 863);
    let big: Vec<EvalRecord> = (0..n_u + n_m)
        .map(|i| record(rng.gen_range(0.0..1.0), if i < n_u { Attribute::Unique } else { Attribute::Multiple }, i))
        .collect();
    let r = report(&big);
    let mut worst = 0f64;
    for kind in [IouKind::Bev, IouKind::ThreeD] {
        for i in 0..r.thresholds.len() {
            let (u, m, o) = (
                r.unique.cell(kind, i).unwrap(),
                r.multiple.cell(kind, i).unwrap(),
                r.overall.cell(kind, i).unwrap(),
            );
            let (hu, hm, ho) = ((u * n_u as f64).round(), (m * n_m as f64).round(), (o * (n_u + n_m) as f64).round());
            ensure!(hu + hm == ho, "hit counts {hu} + {hm} != {ho}");
            let weighted = (n_u as f64 * u + n_m as f64 * m) / (n_u + n_m) as f64;
            worst = worst.max((weighted - o).abs());
        }
    }
    ensure!(worst <= 4.0 * f64::EPSILON, "weighted mean off by {worst:e}");
    Ok(format!(
        "IoUs {ious:?} -> Acc@0.25 0.75, Acc@0.5 0.50 (BEV and 3D, exact); \
         {n_u}+{n_m} records: hit counts add exactly, weighted mean within {worst:.0e}"
    ))
}
