//! Training objectives over batches of aligned audio/text embeddings.
//!
//! Each loss returns its value together with gradients w.r.t. its inputs so
//! the trainer can seed the encoder tape with them.

pub mod ops;
pub mod triplet;

use serde::{Deserialize, Serialize};

pub use ops::{BceOp, InfoNceOp, TripletOp};
pub use triplet::{
    distance_weighted_negative, negative_log_weights, triplet_hinge, triplet_loss_symmetric,
    triplet_loss_with_negatives, TripletOutput,
};

use crate::error::{Error, Result};
use crate::numerics::kernels::log_sum_exp;
use crate::numerics::{sigmoid, Tensor2};

pub const DEFAULT_MARGIN: f64 = 0.4;
pub const DEFAULT_TEMPERATURE: f64 = 0.2;
pub const DEFAULT_CUTOFF: f64 = 0.5;
pub const MIN_TEMPERATURE: f64 = 1e-3;
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    Classification,
    Triplet,
    Contrastive,
}

impl std::fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ObjectiveKind::Classification => "classification",
            ObjectiveKind::Triplet => "triplet",
            ObjectiveKind::Contrastive => "contrastive",
        })
    }
}

impl std::str::FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" => Ok(ObjectiveKind::Classification),
            "triplet" => Ok(ObjectiveKind::Triplet),
            "contrastive" => Ok(ObjectiveKind::Contrastive),
            other => Err(Error::Config(format!("unknown objective `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub kind: ObjectiveKind,
    pub margin: f64,
    pub temperature: f64,
    /// Distance clip for negative sampling.
    pub cutoff: f64,
}

impl ObjectiveConfig {
    pub fn new(kind: ObjectiveKind) -> Self {
        Self {
            kind,
            margin: DEFAULT_MARGIN,
            temperature: DEFAULT_TEMPERATURE,
            cutoff: DEFAULT_CUTOFF,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(Error::Config(format!("margin {} must be > 0", self.margin)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature {} must be > 0",
                self.temperature
            )));
        }
        if !(self.cutoff > 0.0 && self.cutoff < 2.0) {
            return Err(Error::Config(format!("cutoff {} outside (0, 2)", self.cutoff)));
        }
        Ok(())
    }
}

pub(crate) fn check_pair(za: &Tensor2, zt: &Tensor2) -> Result<()> {
    if za.shape() != zt.shape() {
        return Err(Error::dim(format!(
            "audio batch {:?} vs text batch {:?}",
            za.shape(),
            zt.shape()
        )));
    }
    if za.rows() == 0 {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    za.ensure_finite("audio embeddings")?;
    zt.ensure_finite("text embeddings")
}

#[derive(Debug, Clone, PartialEq)]
pub struct NceOutput {
    pub loss: f64,
    pub loss_a2t: f64,
    pub loss_t2a: f64,
    pub grad_a: Tensor2,
    pub grad_t: Tensor2,
    pub grad_tau: f64,
}

/// Symmetric InfoNCE over the similarity matrix `S = z_a z_tᵀ`.
pub fn info_nce_symmetric(za: &Tensor2, zt: &Tensor2, tau: f64) -> Result<NceOutput> {
    check_pair(za, zt)?;
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Domain(format!("temperature {tau} must be > 0")));
    }
    let n = za.rows();
    let nf = n as f64;
    let s = za.matmul_bt(zt)?;
    let logits = s.scale(1.0 / tau);

    // a→t: softmax over each row; t→a: softmax over each column
    let mut ds = Tensor2::zeros(n, n);
    let (mut loss_a2t, mut loss_t2a) = (0.0, 0.0);
    let (mut dtau_a2t, mut dtau_t2a) = (0.0, 0.0);
    for i in 0..n {
        let row = logits.row(i);
        let lse = log_sum_exp(row);
        loss_a2t += lse - row[i];
        let mut expected = 0.0;
        for j in 0..n {
            let p = (row[j] - lse).exp();
            expected += p * s.get(i, j);
            *ds.data_mut().get_mut(i * n + j).unwrap() += p;
        }
        dtau_a2t += s.get(i, i) - expected;
    }
    for j in 0..n {
        let col: Vec<f64> = (0..n).map(|i| logits.get(i, j)).collect();
        let lse = log_sum_exp(&col);
        loss_t2a += lse - col[j];
        let mut expected = 0.0;
        for (i, c) in col.iter().enumerate() {
            let q = (c - lse).exp();
            expected += q * s.get(i, j);
            *ds.data_mut().get_mut(i * n + j).unwrap() += q;
        }
        dtau_t2a += s.get(j, j) - expected;
    }
    for i in 0..n {
        *ds.data_mut().get_mut(i * n + i).unwrap() -= 2.0;
    }
    let ds = ds.scale(1.0 / (2.0 * nf * tau));
    let grad_a = ds.matmul(zt)?;
    let grad_t = ds.matmul_at(za)?;
    let loss_a2t = loss_a2t / nf;
    let loss_t2a = loss_t2a / nf;
    Ok(NceOutput {
        loss: 0.5 * (loss_a2t + loss_t2a),
        loss_a2t,
        loss_t2a,
        grad_a,
        grad_t,
        grad_tau: (dtau_a2t + dtau_t2a) / (2.0 * nf * tau * tau),
    })
}

fn check_labels(shape: (usize, usize), labels: &Tensor2) -> Result<()> {
    if labels.shape() != shape {
        return Err(Error::dim(format!(
            "labels {:?} for scores {:?}",
            labels.shape(),
            shape
        )));
    }
    if shape.0 * shape.1 == 0 {
        return Err(Error::EmptyInput("empty score matrix".into()));
    }
    if labels.data().iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::Domain("labels must be 0 or 1".into()));
    }
    Ok(())
}

/// Mean binary cross-entropy of probabilities against multi-hot labels.
/// Probabilities are clamped to `[1e-7, 1 − 1e-7]` before the log.
pub fn bce_classification_loss(scores: &Tensor2, labels: &Tensor2) -> Result<f64> {
    check_labels(scores.shape(), labels)?;
    if let Some(p) = scores.data().iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Domain(format!("probability {p} outside [0, 1]")));
    }
    let total: f64 = scores
        .data()
        .iter()
        .zip(labels.data())
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BceOutput {
    pub loss: f64,
    pub scores: Tensor2,
    /// Gradient w.r.t. the logits, `(ŷ − y) / (B·K)`.
    pub grad_logits: Tensor2,
}

/// BCE on `sigmoid(logits)`, the form used during training.
pub fn bce_with_logits(logits: &Tensor2, labels: &Tensor2) -> Result<BceOutput> {
    check_labels(logits.shape(), labels)?;
    logits.ensure_finite("logits")?;
    let scores = logits.map(sigmoid);
    let loss = bce_classification_loss(&scores, labels)?;
    let m = scores.len() as f64;
    let grad_logits = scores.zip_map(labels, |p, y| (p - y) / m)?;
    Ok(BceOutput {
        loss,
        scores,
        grad_logits,
    })
}

/// Clamp applied to the temperature after each optimizer step.
pub fn clamp_temperature(tau: f64) -> f64 {
    tau.max(MIN_TEMPERATURE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradient_check;
    use crate::numerics::kernels::l2_normalize;
    use proptest::prelude::{any, prop_assert, proptest};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn unit_rows(n: usize, d: usize, rng: &mut impl Rng) -> Tensor2 {
        let g = Normal::new(0.0, 1.0).unwrap();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| l2_normalize(&(0..d).map(|_| g.sample(rng)).collect::<Vec<_>>()).unwrap())
            .collect();
        Tensor2::from_rows(&rows).unwrap()
    }

    // naive exp/sum evaluation straight from the definition
    fn nce_oracle(za: &Tensor2, zt: &Tensor2, tau: f64) -> f64 {
        let n = za.rows();
        let s = |i: usize, j: usize| -> f64 {
            za.row(i).iter().zip(zt.row(j)).map(|(a, b)| a * b).sum::<f64>() / tau
        };
        let mut a2t = 0.0;
        let mut t2a = 0.0;
        for i in 0..n {
            let den: f64 = (0..n).map(|j| s(i, j).exp()).sum();
            a2t -= (s(i, i).exp() / den).ln();
            let den: f64 = (0..n).map(|j| s(j, i).exp()).sum();
            t2a -= (s(i, i).exp() / den).ln();
        }
        (a2t / n as f64 + t2a / n as f64) / 2.0
    }

    #[test]
    fn nce_single_pair_is_zero() {
        let z = Tensor2::from_rows(&[vec![0.6, 0.8]]).unwrap();
        let out = info_nce_symmetric(&z, &z, 0.2).unwrap();
        assert_eq!(out.loss, 0.0);
        assert_eq!(out.grad_tau, 0.0);
    }

    #[test]
    fn nce_uniform_similarity_is_log_n() {
        for n in [2usize, 4, 16] {
            // every row identical → all similarities equal
            let za = Tensor2::from_rows(&vec![vec![1.0, 0.0]; n]).unwrap();
            let zt = Tensor2::from_rows(&vec![vec![0.6, 0.8]; n]).unwrap();
            let out = info_nce_symmetric(&za, &zt, 0.2).unwrap();
            assert!((out.loss - (n as f64).ln()).abs() <= 1e-12, "{n}: {}", out.loss);
        }
    }

    #[test]
    fn nce_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let za = unit_rows(3, 6, &mut rng);
        let zt = unit_rows(3, 6, &mut rng);
        let out = info_nce_symmetric(&za, &zt, 0.2).unwrap();
        assert!((out.loss - nce_oracle(&za, &zt, 0.2)).abs() <= 1e-12);
    }

    #[test]
    fn nce_rejects_bad_temperature() {
        let z = Tensor2::from_rows(&[vec![1.0, 0.0]]).unwrap();
        for t in [0.0, -1.0, f64::NAN] {
            assert!(matches!(info_nce_symmetric(&z, &z, t), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn nce_gradient_check_with_temperature() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let za = unit_rows(4, 5, &mut rng);
            let zt = unit_rows(4, 5, &mut rng);
            let tau = Tensor2::scalar(rng.random_range(0.1..0.5));
            let err = gradient_check(&mut InfoNceOp::default(), &[za, zt, tau], 1e-5).unwrap();
            assert!(err <= 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn symmetric_similarity_gives_equal_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = unit_rows(5, 4, &mut rng);
        let out = info_nce_symmetric(&z, &z, 0.3).unwrap();
        assert_eq!(out.loss_a2t, out.loss_t2a);
    }

    #[test]
    fn bce_hand_values() {
        let half = Tensor2::scalar(0.5);
        let one = Tensor2::scalar(1.0);
        let l = bce_classification_loss(&half, &one).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() <= 1e-12);
        let exact = Tensor2::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(bce_classification_loss(&exact, &exact).unwrap() < 1e-6);
        assert!(matches!(
            bce_classification_loss(&Tensor2::scalar(1.5), &one),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            bce_classification_loss(&half, &Tensor2::zeros(1, 2)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn bce_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p: Vec<f64> = (0..8).map(|_| rng.random_range(0.01..0.99)).collect();
        let y: Vec<f64> = (0..8).map(|_| f64::from(rng.random_range(0..2u8))).collect();
        let scores = Tensor2::from_vec(2, 4, p.clone()).unwrap();
        let labels = Tensor2::from_vec(2, 4, y.clone()).unwrap();
        let mut oracle = 0.0;
        for k in 0..8 {
            oracle += if y[k] == 1.0 { -p[k].ln() } else { -(1.0 - p[k]).ln() };
        }
        oracle /= 8.0;
        assert!((bce_classification_loss(&scores, &labels).unwrap() - oracle).abs() <= 1e-12);
    }

    #[test]
    fn bce_gradient_check() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = Normal::new(0.0, 2.0).unwrap();
            let logits = Tensor2::from_vec(3, 4, (0..12).map(|_| g.sample(&mut rng)).collect()).unwrap();
            let labels = Tensor2::from_vec(3, 4, (0..12).map(|_| f64::from(rng.random_range(0..2u8))).collect()).unwrap();
            let err = gradient_check(&mut BceOp::new(labels), &[logits], 1e-5).unwrap();
            assert!(err <= 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn temperature_clamp() {
        assert_eq!(clamp_temperature(1e-6), MIN_TEMPERATURE);
        assert_eq!(clamp_temperature(0.2), 0.2);
    }

    proptest! {
        #[test]
        fn nce_permutation_invariant_and_bounded(seed in any::<u64>(), n in 1usize..7, tau in 0.05f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let za = unit_rows(n, 4, &mut rng);
            let zt = unit_rows(n, 4, &mut rng);
            let out = info_nce_symmetric(&za, &zt, tau).unwrap();

            let mut perm: Vec<usize> = (0..n).collect();
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
            let pa = Tensor2::from_rows(&perm.iter().map(|&i| za.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
            let pt = Tensor2::from_rows(&perm.iter().map(|&i| zt.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
            let permuted = info_nce_symmetric(&pa, &pt, tau).unwrap();
            prop_assert!((out.loss - permuted.loss).abs() <= 1e-12);

            let s = za.matmul_bt(&zt).unwrap();
            let spread = s.data().iter().cloned().fold(f64::MIN, f64::max)
                - s.data().iter().cloned().fold(f64::MAX, f64::min);
            let bound = (n as f64).ln() + spread / tau;
            for i in 0..n {
                let row: Vec<f64> = s.row(i).iter().map(|x| x / tau).collect();
                let l = log_sum_exp(&row) - row[i];
                prop_assert!(l >= -1e-12 && l <= bound + 1e-12);
            }
        }
    }
}
