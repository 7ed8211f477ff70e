use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::dim(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores".into()));
    }
    Ok(())
}

/// Indices by descending score, ties by ascending index.
pub fn rank_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// `P(s_pos > s_neg) + ½ P(tie)`, computed from midranks.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("roc_auc needs both classes".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of (1-based) midranks of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Mean precision at the rank of each positive.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 {
        return Err(Error::UndefinedMetric("average precision needs a positive".into()));
    }
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in rank_order(scores).iter().enumerate() {
        if labels[i] {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / pos as f64)
}

/// F1-maximizing threshold over the distinct scores plus `+∞` (predict
/// positive when `score ≥ threshold`). Ties go to the lowest threshold.
pub fn best_f1_threshold(scores: &[f64], labels: &[bool]) -> Result<(f64, f64)> {
    check(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 {
        return Err(Error::UndefinedMetric("best-F1 threshold needs a positive".into()));
    }
    let order = rank_order(scores);
    let mut best = (f64::INFINITY, 0.0);
    let (mut tp, mut predicted) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            predicted += 1;
            tp += usize::from(labels[order[i]]);
            i += 1;
        }
        let f1 = 2.0 * tp as f64 / (pos + predicted) as f64;
        if f1 >= best.1 {
            best = (s, f1);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub r_at_1: f64,
    pub r_at_5: f64,
    pub r_at_10: f64,
    pub map10: f64,
    pub medr: usize,
}

/// R@K, mAP@10 and MedR from the 1-based rank of each query's single
/// relevant item. MedR takes the lower middle for even counts.
pub fn retrieval_from_ranks(ranks: &[usize]) -> Result<RetrievalMetrics> {
    if ranks.is_empty() {
        return Err(Error::EmptyInput("no queries".into()));
    }
    if ranks.contains(&0) {
        return Err(Error::Contract("ranks are 1-based".into()));
    }
    let n = ranks.len() as f64;
    let recall = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    let map10 = ranks
        .iter()
        .map(|&r| if r <= 10 { 1.0 / r as f64 } else { 0.0 })
        .sum::<f64>()
        / n;
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    Ok(RetrievalMetrics {
        r_at_1: recall(1),
        r_at_5: recall(5),
        r_at_10: recall(10),
        map10,
        medr: sorted[(sorted.len() - 1) / 2],
    })
}

/// Rank of `target` among `scores`, counting higher scores and equal
/// scores whose id sorts first.
pub fn rank_of(target: usize, scores: &[f64], ids: &[String]) -> usize {
    let s = scores[target];
    1 + scores
        .iter()
        .zip(ids)
        .enumerate()
        .filter(|&(i, (&x, id))| {
            i != target
                && match x.total_cmp(&s) {
                    Ordering::Greater => true,
                    Ordering::Equal => id < &ids[target],
                    Ordering::Less => false,
                }
        })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&x| x == 1).collect()
    }

    #[test]
    fn roc_hand_cases() {
        let s = [0.9, 0.8, 0.2, 0.1];
        assert_eq!(roc_auc(&s, &labels(&[1, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(roc_auc(&s, &labels(&[1, 0, 1, 0])).unwrap(), 0.75);
        assert!(matches!(roc_auc(&s, &labels(&[1, 1, 1, 1])), Err(Error::UndefinedMetric(_))));
        assert_eq!(roc_auc(&[0.5, 0.5], &labels(&[1, 0])).unwrap(), 0.5);
    }

    #[test]
    fn ap_hand_cases() {
        let s = [0.9, 0.8, 0.2, 0.1];
        assert_eq!(average_precision(&s, &labels(&[1, 1, 0, 0])).unwrap(), 1.0);
        let ap = average_precision(&s, &labels(&[1, 0, 1, 0])).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert!(average_precision(&s, &labels(&[0, 0, 0, 0])).is_err());
    }

    #[test]
    fn best_f1_cases() {
        let (t, f) = best_f1_threshold(&[0.1, 0.4, 0.6, 0.9], &labels(&[0, 0, 1, 1])).unwrap();
        assert_eq!((t, f), (0.6, 1.0));
        let (t, f) = best_f1_threshold(&[0.3, 0.2, 0.7], &labels(&[1, 1, 1])).unwrap();
        assert_eq!((t, f), (0.2, 1.0));
    }

    #[test]
    fn retrieval_hand_cases() {
        let m = retrieval_from_ranks(&[1, 1, 1]).unwrap();
        assert_eq!((m.r_at_1, m.map10, m.medr), (1.0, 1.0, 1));
        let m = retrieval_from_ranks(&[4]).unwrap();
        assert_eq!((m.r_at_1, m.r_at_5, m.map10), (0.0, 1.0, 0.25));
        assert_eq!(retrieval_from_ranks(&[1, 3, 7]).unwrap().medr, 3);
        assert_eq!(retrieval_from_ranks(&[8, 1, 3, 7]).unwrap().medr, 3);
        assert_eq!(retrieval_from_ranks(&[11]).unwrap().map10, 0.0);
    }

    #[test]
    fn rank_uses_id_tie_break() {
        let ids: Vec<String> = ["b", "a", "c"].iter().map(|s| s.to_string()).collect();
        let scores = [0.5, 0.5, 0.5];
        assert_eq!(rank_of(1, &scores, &ids), 1);
        assert_eq!(rank_of(0, &scores, &ids), 2);
        assert_eq!(rank_of(2, &scores, &ids), 3);
    }

    // brute-force oracles straight from the definitions
    fn roc_oracle(s: &[f64], l: &[bool]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..s.len() {
            for j in 0..s.len() {
                if l[i] && !l[j] {
                    den += 1.0;
                    if s[i] > s[j] {
                        num += 1.0;
                    } else if s[i] == s[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    fn ap_oracle(s: &[f64], l: &[bool]) -> f64 {
        // position of item i: items strictly better, or tied with lower index
        let pos = |i: usize| {
            (0..s.len())
                .filter(|&j| s[j] > s[i] || (s[j] == s[i] && j < i))
                .count()
                + 1
        };
        let rel: Vec<usize> = (0..s.len()).filter(|&i| l[i]).collect();
        rel.iter()
            .map(|&i| {
                let r = pos(i);
                let above = rel.iter().filter(|&&j| pos(j) <= r).count();
                above as f64 / r as f64
            })
            .sum::<f64>()
            / rel.len() as f64
    }

    fn random_case(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
        loop {
            let n = rng.random_range(2..=64);
            // coarse scores so ties occur
            let s: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..12u8)) / 11.0).collect();
            let l: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            if l.iter().any(|&x| x) && l.iter().any(|&x| !x) {
                return (s, l);
            }
        }
    }

    #[test]
    fn roc_and_ap_match_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let (s, l) = random_case(&mut rng);
            assert!((roc_auc(&s, &l).unwrap() - roc_oracle(&s, &l)).abs() <= 1e-9);
            assert!((average_precision(&s, &l).unwrap() - ap_oracle(&s, &l)).abs() <= 1e-9);
        }
    }

    #[test]
    fn best_f1_beats_every_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let (s, l) = random_case(&mut rng);
            let (t, f) = best_f1_threshold(&s, &l).unwrap();
            let pos = l.iter().filter(|&&x| x).count();
            let f1_at = |th: f64| {
                let tp = (0..s.len()).filter(|&i| s[i] >= th && l[i]).count();
                let pred = s.iter().filter(|&&x| x >= th).count();
                2.0 * tp as f64 / (pos + pred) as f64
            };
            assert_eq!(f1_at(t), f);
            for &th in s.iter().chain([f64::INFINITY].iter()) {
                assert!(f1_at(th) <= f);
                if f1_at(th) == f {
                    assert!(th >= t);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn roc_invariant_under_monotone_transform(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (s, l) = random_case(&mut rng);
            let t: Vec<f64> = s.iter().map(|x| (3.0 * x).exp() - 7.0).collect();
            prop_assert_eq!(roc_auc(&s, &l).unwrap(), roc_auc(&t, &l).unwrap());
        }

        #[test]
        fn map10_is_truncated_reciprocal_rank(ranks in prop::collection::vec(1usize..40, 1..50)) {
            let m = retrieval_from_ranks(&ranks).unwrap();
            let rr: f64 = ranks.iter().map(|&r| if r <= 10 { 1.0 / r as f64 } else { 0.0 }).sum::<f64>() / ranks.len() as f64;
            prop_assert_eq!(m.map10, rr);
            prop_assert!(m.medr >= 1);
            prop_assert!((0.0..=1.0).contains(&m.r_at_1) && m.r_at_1 <= m.r_at_5 && m.r_at_5 <= m.r_at_10);
        }
    }
}
