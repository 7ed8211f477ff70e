use rand::Rng;

use super::{check_pair, ObjectiveConfig};
use crate::error::{Error, Result};
use crate::numerics::tensor::dot;
use crate::numerics::Tensor2;

/// Keeps `1 − d²/4` away from zero for antipodal pairs.
const DENSITY_FLOOR: f64 = 1e-8;

/// `[δ − s_pos + s_neg]₊`
pub fn triplet_hinge(s_pos: f64, s_neg: f64, margin: f64) -> f64 {
    (margin - s_pos + s_neg).max(0.0)
}

fn log_q(d: f64, n: f64) -> f64 {
    (n - 2.0) * d.ln() + 0.5 * (n - 3.0) * (1.0 - 0.25 * d * d).max(DENSITY_FLOOR).ln()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Unnormalized log sampling weights `min(−log q(d), −log q(λ))`, where `q`
/// is the density of pairwise distances between uniform points on the
/// `n`-sphere and distances are clipped below at `λ`.
pub fn negative_log_weights(anchor: &[f64], candidates: &[&[f64]], n: usize, cutoff: f64) -> Vec<f64> {
    let nf = n as f64;
    let cap = -log_q(cutoff, nf);
    candidates
        .iter()
        .map(|c| {
            let d = distance(anchor, c).max(cutoff);
            (-log_q(d, nf)).min(cap)
        })
        .collect()
}

/// Draws a candidate index with probability proportional to the inverse
/// distance density.
pub fn distance_weighted_negative(
    anchor: &[f64],
    candidates: &[&[f64]],
    n: usize,
    cutoff: f64,
    rng: &mut impl Rng,
) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::InsufficientNegatives("no candidates".into()));
    }
    if candidates.len() == 1 {
        return Ok(0);
    }
    let logw = negative_log_weights(anchor, candidates, n, cutoff);
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, wi) in w.iter().enumerate() {
        if u < *wi {
            return Ok(i);
        }
        u -= wi;
    }
    // rounding left u just above the last bucket
    Ok(w.iter().rposition(|&x| x > 0.0).unwrap_or(w.len() - 1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletOutput {
    pub loss: f64,
    pub grad_a: Tensor2,
    pub grad_t: Tensor2,
    /// Text index used as negative for each audio anchor.
    pub negatives_a2t: Vec<usize>,
    /// Audio index used as negative for each text anchor.
    pub negatives_t2a: Vec<usize>,
}

fn sample_negatives(
    anchors: &Tensor2,
    pool: &Tensor2,
    cutoff: f64,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    let n = anchors.rows();
    (0..n)
        .map(|i| {
            let idx: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let cands: Vec<&[f64]> = idx.iter().map(|&j| pool.row(j)).collect();
            let k = distance_weighted_negative(anchors.row(i), &cands, anchors.cols(), cutoff, rng)?;
            Ok(idx[k])
        })
        .collect()
}

/// Symmetric triplet loss with one sampled negative per anchor and
/// direction. Negatives for audio anchors are drawn first.
pub fn triplet_loss_symmetric(
    za: &Tensor2,
    zt: &Tensor2,
    cfg: &ObjectiveConfig,
    rng: &mut impl Rng,
) -> Result<TripletOutput> {
    check_pair(za, zt)?;
    if za.rows() < 2 {
        return Err(Error::InsufficientNegatives(format!(
            "batch of {} has no negatives",
            za.rows()
        )));
    }
    let neg_a2t = sample_negatives(za, zt, cfg.cutoff, rng)?;
    let neg_t2a = sample_negatives(zt, za, cfg.cutoff, rng)?;
    triplet_loss_with_negatives(za, zt, &neg_a2t, &neg_t2a, cfg.margin)
}

/// The same loss with the negative choice fixed, which makes it a plain
/// piecewise-linear function of the embeddings.
pub fn triplet_loss_with_negatives(
    za: &Tensor2,
    zt: &Tensor2,
    neg_a2t: &[usize],
    neg_t2a: &[usize],
    margin: f64,
) -> Result<TripletOutput> {
    check_pair(za, zt)?;
    let n = za.rows();
    if n < 2 {
        return Err(Error::InsufficientNegatives(format!("batch of {n} has no negatives")));
    }
    if neg_a2t.len() != n || neg_t2a.len() != n {
        return Err(Error::dim("one negative per anchor required"));
    }
    for (i, (&a, &t)) in neg_a2t.iter().zip(neg_t2a).enumerate() {
        if a == i || t == i || a >= n || t >= n {
            return Err(Error::Contract(format!("invalid negative for anchor {i}")));
        }
    }
    let w = 1.0 / (2.0 * n as f64);
    let d = za.cols();
    let mut grad_a = Tensor2::zeros(n, d);
    let mut grad_t = Tensor2::zeros(n, d);
    let (mut a2t, mut t2a) = (0.0, 0.0);

    let accumulate = |g: &mut Tensor2, row: usize, v: &[f64], s: f64| {
        for (x, y) in g.row_mut(row).iter_mut().zip(v) {
            *x += s * y;
        }
    };
    for i in 0..n {
        let (a, t) = (za.row(i), zt.row(i));
        let j = neg_a2t[i];
        let h = triplet_hinge(dot(a, t), dot(a, zt.row(j)), margin);
        if h > 0.0 {
            a2t += h;
            accumulate(&mut grad_a, i, zt.row(j), w);
            accumulate(&mut grad_a, i, t, -w);
            accumulate(&mut grad_t, i, a, -w);
            accumulate(&mut grad_t, j, a, w);
        }
        let m = neg_t2a[i];
        let h = triplet_hinge(dot(t, a), dot(t, za.row(m)), margin);
        if h > 0.0 {
            t2a += h;
            accumulate(&mut grad_t, i, za.row(m), w);
            accumulate(&mut grad_t, i, a, -w);
            accumulate(&mut grad_a, i, t, -w);
            accumulate(&mut grad_a, m, t, w);
        }
    }
    let nf = n as f64;
    Ok(TripletOutput {
        loss: 0.5 * (a2t / nf + t2a / nf),
        grad_a,
        grad_t,
        negatives_a2t: neg_a2t.to_vec(),
        negatives_t2a: neg_t2a.to_vec(),
    })
}
