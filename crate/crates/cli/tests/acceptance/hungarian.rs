//! Assignment against factorial enumeration.

use grounding_model::hungarian::hungarian_match;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{ensure, Outcome};

const MATRICES: usize = 1000;

fn cost_of(cost: &[Vec<f64>], rows_of_cols: &[usize]) -> f64 {
    let mut s = 0.0;
    for (c, &r) in rows_of_cols.iter().enumerate() {
        s += cost[r][c];
    }
    s
}

/// Cheapest injective column -> row map, by trying every one.
fn brute_force(cost: &[Vec<f64>]) -> f64 {
    fn rec(cost: &[Vec<f64>], used: &mut Vec<bool>, cur: &mut Vec<usize>, best: &mut f64) {
        let cols = cost[0].len();
        if cur.len() == cols {
            *best = best.min(cost_of(cost, cur));
            return;
        }
        for r in 0..cost.len() {
            if !used[r] {
                used[r] = true;
                cur.push(r);
                rec(cost, used, cur, best);
                cur.pop();
                used[r] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(cost, &mut vec![false; cost.len()], &mut Vec::new(), &mut best);
    best
}

pub fn run() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut square = 0;
    for trial in 0..MATRICES {
        let cols = rng.gen_range(1..=6);
        let rows = rng.gen_range(cols..=6);
        square += (rows == cols) as usize;
        let integer = trial % 2 == 0;
        let cost: Vec<Vec<f64>> = (0..rows)
            .map(|_| {
                (0..cols)
                    .map(|_| if integer { rng.gen_range(0..4) as f64 } else { rng.gen_range(-5.0..5.0) })
                    .collect()
            })
            .collect();
        let got = hungarian_match(&cost).map_err(|e| format!("trial {trial}: {e}"))?;
        let mut seen = vec![false; rows];
        ensure!(got.len() == cols, "trial {trial}: {} columns assigned of {cols}", got.len());
        for &r in &got {
            ensure!(r < rows && !seen[r], "trial {trial}: row {r} reused or out of range");
            seen[r] = true;
        }
        let (have, want) = (cost_of(&cost, &got), brute_force(&cost));
        ensure!(have == want, "trial {trial}: cost {have} vs optimum {want} for {cost:?}");
    }
    Ok(format!("{MATRICES} matrices up to 6x6 ({square} square), optimal cost matched exactly"))
}
