//! Finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use super::tape::{NodeId, Tape};
use super::tensor::Tensor2;
use crate::error::{Error, Result};

/// Forward/backward contract for anything whose gradient we want to verify.
///
/// `backward` refers to the inputs of the most recent `forward`; calling it
/// first is an error.
pub trait DifferentiableOp {
    fn forward(&mut self, inputs: &[Tensor2]) -> Result<Tensor2>;
    fn backward(&mut self, upstream: &Tensor2) -> Result<Vec<Tensor2>>;
}

/// Builds a tape graph from its inputs. Inputs enter as tape inputs.
pub struct TapeFn<F> {
    build: F,
    last: Option<(Vec<Tensor2>, (usize, usize))>,
    params: ParamStore,
}

impl<F> TapeFn<F>
where
    F: Fn(&mut Tape<'_>, &[NodeId]) -> Result<NodeId>,
{
    pub fn new(build: F) -> Self {
        Self {
            build,
            last: None,
            params: ParamStore::new(),
        }
    }
}

impl<F> DifferentiableOp for TapeFn<F>
where
    F: Fn(&mut Tape<'_>, &[NodeId]) -> Result<NodeId>,
{
    fn forward(&mut self, inputs: &[Tensor2]) -> Result<Tensor2> {
        let mut tape = Tape::new(&self.params);
        let ids: Vec<NodeId> = inputs.iter().map(|t| tape.input(t.clone())).collect();
        let out = (self.build)(&mut tape, &ids)?;
        let value = tape.value(out).clone();
        self.last = Some((inputs.to_vec(), value.shape()));
        Ok(value)
    }

    fn backward(&mut self, upstream: &Tensor2) -> Result<Vec<Tensor2>> {
        let (inputs, shape) = self.last.as_ref().ok_or(Error::NoForward)?;
        if upstream.shape() != *shape {
            return Err(Error::dim(format!(
                "upstream {:?} for output {shape:?}",
                upstream.shape()
            )));
        }
        let mut tape = Tape::new(&self.params);
        let ids: Vec<NodeId> = inputs.iter().map(|t| tape.input(t.clone())).collect();
        let out = (self.build)(&mut tape, &ids)?;
        let grads = tape.backward(&[(out, upstream.clone())])?;
        Ok(ids
            .iter()
            .zip(inputs)
            .map(|(id, t)| {
                grads
                    .wrt(*id)
                    .cloned()
                    .unwrap_or_else(|| Tensor2::zeros(t.rows(), t.cols()))
            })
            .collect())
    }
}

/// Treats every parameter of a store as an input, in store order. Used to
/// check whole-model gradients.
pub struct ParamFn<F> {
    build: F,
    store: ParamStore,
    forwarded: bool,
}

impl<F> ParamFn<F>
where
    F: Fn(&mut Tape<'_>) -> Result<NodeId>,
{
    pub fn new(store: ParamStore, build: F) -> Self {
        Self {
            build,
            store,
            forwarded: false,
        }
    }

    /// Current parameter values, suitable as `gradient_check` inputs.
    pub fn inputs(&self) -> Vec<Tensor2> {
        self.store.iter().map(|(_, p)| p.value.clone()).collect()
    }

    fn load(&mut self, inputs: &[Tensor2]) -> Result<()> {
        if inputs.len() != self.store.len() {
            return Err(Error::dim(format!(
                "{} inputs for {} parameters",
                inputs.len(),
                self.store.len()
            )));
        }
        for (p, v) in self.store.iter_mut().zip(inputs) {
            if !p.value.same_shape(v) {
                return Err(Error::dim(format!("input for `{}`", p.name)));
            }
            p.value.data_mut().copy_from_slice(v.data());
        }
        Ok(())
    }
}

impl<F> DifferentiableOp for ParamFn<F>
where
    F: Fn(&mut Tape<'_>) -> Result<NodeId>,
{
    fn forward(&mut self, inputs: &[Tensor2]) -> Result<Tensor2> {
        self.load(inputs)?;
        let mut tape = Tape::new(&self.store);
        let out = (self.build)(&mut tape)?;
        self.forwarded = true;
        Ok(tape.value(out).clone())
    }

    fn backward(&mut self, upstream: &Tensor2) -> Result<Vec<Tensor2>> {
        if !self.forwarded {
            return Err(Error::NoForward);
        }
        let mut tape = Tape::new(&self.store);
        let out = (self.build)(&mut tape)?;
        let grads = tape.backward(&[(out, upstream.clone())])?;
        let mut result: Vec<Tensor2> = self
            .store
            .iter()
            .map(|(_, p)| Tensor2::zeros(p.value.rows(), p.value.cols()))
            .collect();
        for (id, g) in grads.params() {
            result[id.index()] = g.clone();
        }
        Ok(result)
    }
}

/// Compares `op.backward` with central differences of a fixed random
/// linear functional of the output.
///
/// Returns the largest `|analytic − numeric| / max(1, |numeric|)` over all
/// input coordinates.
pub fn gradient_check(
    op: &mut dyn DifferentiableOp,
    inputs: &[Tensor2],
    h: f64,
) -> Result<f64> {
    if !(1e-6..=1e-4).contains(&h) {
        return Err(Error::CheckInvalid(format!(
            "step {h:e} outside [1e-6, 1e-4]"
        )));
    }
    let out = op.forward(inputs)?;
    let again = op.forward(inputs)?;
    let bitwise_equal = out.shape() == again.shape()
        && out
            .data()
            .iter()
            .zip(again.data())
            .all(|(a, b)| a.to_bits() == b.to_bits());
    if !bitwise_equal {
        return Err(Error::CheckInvalid(
            "operation is not deterministic".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
    let weights = Tensor2::from_vec(
        out.rows(),
        out.cols(),
        (0..out.len()).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let analytic = op.backward(&weights)?;
    if analytic.len() != inputs.len() {
        return Err(Error::CheckInvalid(format!(
            "backward returned {} gradients for {} inputs",
            analytic.len(),
            inputs.len()
        )));
    }

    let mut probe = inputs.to_vec();
    let mut worst: f64 = 0.0;
    for k in 0..inputs.len() {
        if !analytic[k].same_shape(&inputs[k]) {
            return Err(Error::CheckInvalid(format!(
                "gradient {k} has shape {:?}, input has {:?}",
                analytic[k].shape(),
                inputs[k].shape()
            )));
        }
        for i in 0..inputs[k].len() {
            let x0 = inputs[k].data()[i];
            probe[k].data_mut()[i] = x0 + h;
            let plus = weighted_sum(&op.forward(&probe)?, &weights);
            probe[k].data_mut()[i] = x0 - h;
            let minus = weighted_sum(&op.forward(&probe)?, &weights);
            probe[k].data_mut()[i] = x0;
            let numeric = (plus - minus) / (2.0 * h);
            let err = (analytic[k].data()[i] - numeric).abs() / numeric.abs().max(1.0);
            if !err.is_finite() {
                return Err(Error::NonFinite(format!("gradient check input {k}[{i}]")));
            }
            worst = worst.max(err);
        }
    }
    // leave the op primed on the original inputs
    op.forward(inputs)?;
    Ok(worst)
}

fn weighted_sum(out: &Tensor2, w: &Tensor2) -> f64 {
    out.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}
