//! Real losses with closed-form gradients, recorded as single graph nodes.
//!
//! All of them take logits; probabilities are never formed before the log so
//! large logits stay finite.

use crate::Real;

use crate::graph::{sigmoid, softplus, Graph, Var};

/// Penalty-reduced focal loss against a soft target heatmap.
///
/// Cells with target exactly 1 are positives; the sum is divided by their
/// count (at least 1).
pub fn gaussian_focal<T: Real>(g: &mut Graph<T>, logits: Var, target: &[T], alpha: T, beta: T) -> Var {
    let (value, local) = gaussian_focal_value(g.value(logits).data(), target, alpha, beta);
    g.fused_scalar(logits, value, local)
}

pub fn gaussian_focal_value<T: Real>(z: &[T], target: &[T], alpha: T, beta: T) -> (T, Vec<T>) {
    assert_eq!(z.len(), target.len(), "heatmap/target size");
    let one = T::one();
    let npos = target.iter().filter(|t| **t == one).count().max(1);
    let norm = one / T::from_usize(npos).unwrap();
    let mut total = T::zero();
    let mut local = Vec::with_capacity(z.len());
    for (&zi, &t) in z.iter().zip(target) {
        let p = sigmoid(zi);
        if t == one {
            // (1-p)^a * -log p
            let sp = softplus(-zi);
            let q = one - p;
            total += q.powf(alpha) * sp;
            local.push(norm * (-alpha * q.powf(alpha) * p * sp - q.powf(alpha + one)));
        } else {
            // (1-t)^b * p^a * -log(1-p)
            let w = (one - t).powf(beta);
            let sp = softplus(zi);
            total += w * p.powf(alpha) * sp;
            local.push(norm * w * p.powf(alpha) * (alpha * (one - p) * sp + p));
        }
    }
    (total * norm, local)
}

/// Binary focal loss; `positive[k]` marks the positives. Normalised by the
/// number of positives (at least 1).
pub fn sigmoid_focal<T: Real>(g: &mut Graph<T>, logits: Var, positive: &[bool], gamma: T, alpha: T) -> Var {
    let (value, local) = sigmoid_focal_value(g.value(logits).data(), positive, gamma, alpha);
    g.fused_scalar(logits, value, local)
}

pub fn sigmoid_focal_value<T: Real>(z: &[T], positive: &[bool], gamma: T, alpha: T) -> (T, Vec<T>) {
    assert_eq!(z.len(), positive.len());
    let one = T::one();
    let npos = positive.iter().filter(|p| **p).count().max(1);
    let norm = one / T::from_usize(npos).unwrap();
    let mut total = T::zero();
    let mut local = Vec::with_capacity(z.len());
    for (&zi, &pos) in z.iter().zip(positive) {
        let p = sigmoid(zi);
        let q = one - p;
        if pos {
            let sp = softplus(-zi);
            total += alpha * q.powf(gamma) * sp;
            local.push(norm * alpha * (-gamma * q.powf(gamma) * p * sp - q.powf(gamma + one)));
        } else {
            let sp = softplus(zi);
            total += (one - alpha) * p.powf(gamma) * sp;
            local.push(norm * (one - alpha) * p.powf(gamma) * (gamma * q * sp + p));
        }
    }
    (total * norm, local)
}

/// Mean absolute error.
pub fn l1_mean<T: Real>(g: &mut Graph<T>, pred: Var, target: &[T]) -> Var {
    let x = g.value(pred).data();
    assert_eq!(x.len(), target.len());
    let n = T::from_usize(x.len().max(1)).unwrap();
    let mut total = T::zero();
    let local = x
        .iter()
        .zip(target)
        .map(|(a, b)| {
            let d = *a - *b;
            total += d.abs();
            if d > T::zero() {
                T::one() / n
            } else if d < T::zero() {
                -T::one() / n
            } else {
                T::zero()
            }
        })
        .collect();
    g.fused_scalar(pred, total / n, local)
}

/// `-log softmax(z)[class]` over a flat logit vector.
pub fn softmax_ce<T: Real>(g: &mut Graph<T>, logits: Var, class: usize) -> Var {
    let z = g.value(logits).data();
    assert!(class < z.len(), "class {class} out of {}", z.len());
    let mx = z.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = z.iter().map(|v| (*v - mx).exp()).sum();
    let lse = mx + sum.ln();
    let mut local: Vec<T> = z.iter().map(|v| (*v - lse).exp()).collect();
    local[class] -= T::one();
    let value = lse - z[class];
    g.fused_scalar(logits, value, local)
}
