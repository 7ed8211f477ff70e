//! The objectives as `DifferentiableOp`s with a `1 × 1` output, for
//! finite-difference checking.

use super::{bce_with_logits, info_nce_symmetric, triplet_loss_with_negatives};
use crate::error::{Error, Result};
use crate::numerics::{DifferentiableOp, Tensor2};

fn upstream_scalar(t: &Tensor2) -> Result<f64> {
    t.scalar_value()
}

/// Inputs: `z_a`, `z_t`, `τ` (1 × 1).
#[derive(Debug, Default)]
pub struct InfoNceOp {
    grads: Option<Vec<Tensor2>>,
}

impl DifferentiableOp for InfoNceOp {
    fn forward(&mut self, inputs: &[Tensor2]) -> Result<Tensor2> {
        let [za, zt, tau] = inputs else {
            return Err(Error::dim("InfoNCE takes z_a, z_t, tau"));
        };
        let out = info_nce_symmetric(za, zt, tau.scalar_value()?)?;
        self.grads = Some(vec![out.grad_a, out.grad_t, Tensor2::scalar(out.grad_tau)]);
        Ok(Tensor2::scalar(out.loss))
    }

    fn backward(&mut self, upstream: &Tensor2) -> Result<Vec<Tensor2>> {
        let g = upstream_scalar(upstream)?;
        let grads = self.grads.as_ref().ok_or(Error::NoForward)?;
        Ok(grads.iter().map(|t| t.scale(g)).collect())
    }
}

/// Inputs: `z_a`, `z_t`; the negative choice is frozen.
#[derive(Debug)]
pub struct TripletOp {
    neg_a2t: Vec<usize>,
    neg_t2a: Vec<usize>,
    margin: f64,
    grads: Option<Vec<Tensor2>>,
}

impl TripletOp {
    pub fn new(neg_a2t: Vec<usize>, neg_t2a: Vec<usize>, margin: f64) -> Self {
        Self {
            neg_a2t,
            neg_t2a,
            margin,
            grads: None,
        }
    }
}

impl DifferentiableOp for TripletOp {
    fn forward(&mut self, inputs: &[Tensor2]) -> Result<Tensor2> {
        let [za, zt] = inputs else {
            return Err(Error::dim("triplet takes z_a, z_t"));
        };
        let out = triplet_loss_with_negatives(za, zt, &self.neg_a2t, &self.neg_t2a, self.margin)?;
        self.grads = Some(vec![out.grad_a, out.grad_t]);
        Ok(Tensor2::scalar(out.loss))
    }

    fn backward(&mut self, upstream: &Tensor2) -> Result<Vec<Tensor2>> {
        let g = upstream_scalar(upstream)?;
        let grads = self.grads.as_ref().ok_or(Error::NoForward)?;
        Ok(grads.iter().map(|t| t.scale(g)).collect())
    }
}

/// Input: logits; labels fixed.
#[derive(Debug)]
pub struct BceOp {
    labels: Tensor2,
    grad: Option<Tensor2>,
}

impl BceOp {
    pub fn new(labels: Tensor2) -> Self {
        Self { labels, grad: None }
    }
}

impl DifferentiableOp for BceOp {
    fn forward(&mut self, inputs: &[Tensor2]) -> Result<Tensor2> {
        let [logits] = inputs else {
            return Err(Error::dim("BCE takes logits"));
        };
        let out = bce_with_logits(logits, &self.labels)?;
        self.grad = Some(out.grad_logits);
        Ok(Tensor2::scalar(out.loss))
    }

    fn backward(&mut self, upstream: &Tensor2) -> Result<Vec<Tensor2>> {
        let g = upstream_scalar(upstream)?;
        let grad = self.grad.as_ref().ok_or(Error::NoForward)?;
        Ok(vec![grad.scale(g)])
    }
}
