//! Acceptance checks, one line per criterion.
//!
//! `cargo test -p grounding-cli --test acceptance -- 3 5` runs a subset.

use std::panic::{self, AssertUnwindSafe};
use std::time::Instant;

mod annotation;
mod eval;
mod geometry;
mod gradients;
mod hungarian;
mod invariants;
mod learning;
mod matcher;
mod preprocess;
mod tiny;

/// Detail line on success, reason on failure.
pub type Outcome = Result<String, String>;

/// Turns a failed check into an `Err` carrying `msg`.
#[macro_export]
macro_rules! ensure {
    ($cond:expr, $($msg:tt)*) => {
        if !$cond {
            return Err(format!($($msg)*));
        }
    };
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "geometry oracles", geometry::run),
        (2, "hungarian exactness", hungarian::run),
        (3, "gradient checks", gradients::run),
        (4, "transformer invariants", invariants::run),
        (5, "desk-scale learning", learning::run),
        (6, "matcher on separable features", matcher::run),
        (7, "preprocessing fixture", preprocess::run),
        (8, "eval arithmetic", eval::run),
        (9, "annotation pipeline", annotation::run),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (n, name, check) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n} {tag} {name} ({secs:.1} s): {detail}");
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
