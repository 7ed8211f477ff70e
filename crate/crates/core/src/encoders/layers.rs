use rand::Rng;

use crate::error::Result;
use crate::numerics::{multi_head_attention, NodeId, ParamId, ParamStore, Tape, Tensor2};

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let std = 1.0 / (inputs as f64).sqrt();
        let weight = store.add_normal(format!("{name}.weight"), inputs, outputs, std, rng);
        let bias = bias.then(|| store.add_zeros(format!("{name}.bias"), 1, outputs));
        Self { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: NodeId) -> Result<NodeId> {
        let w = tape.param(self.weight);
        let y = tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(b);
                tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gamma: store.add_filled(format!("{name}.gamma"), 1, width, 1.0),
            beta: store.add_zeros(format!("{name}.beta"), 1, width),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: NodeId) -> Result<NodeId> {
        let g = tape.param(self.gamma);
        let b = tape.param(self.beta);
        tape.layer_norm(x, g, b)
    }
}

/// Pre-layer-norm transformer encoder block.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    ln_attn: LayerNorm,
    qkv: Linear,
    out: Linear,
    ln_ff: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
    heads: usize,
    width: usize,
}

impl TransformerBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        heads: usize,
        ffn: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            ln_attn: LayerNorm::new(store, &format!("{name}.ln_attn"), width),
            qkv: Linear::new(store, &format!("{name}.qkv"), width, 3 * width, true, rng),
            out: Linear::new(store, &format!("{name}.attn_out"), width, width, true, rng),
            ln_ff: LayerNorm::new(store, &format!("{name}.ln_ff"), width),
            ff_in: Linear::new(store, &format!("{name}.ff_in"), width, ffn, true, rng),
            ff_out: Linear::new(store, &format!("{name}.ff_out"), ffn, width, true, rng),
            heads,
            width,
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: NodeId) -> Result<NodeId> {
        let w = self.width;
        let h = self.ln_attn.forward(tape, x)?;
        let qkv = self.qkv.forward(tape, h)?;
        let q = tape.slice_cols(qkv, 0, w)?;
        let k = tape.slice_cols(qkv, w, w)?;
        let v = tape.slice_cols(qkv, 2 * w, w)?;
        let a = multi_head_attention(tape, q, k, v, self.heads)?;
        let a = self.out.forward(tape, a)?;
        let x = tape.add(x, a)?;

        let h = self.ln_ff.forward(tape, x)?;
        let h = self.ff_in.forward(tape, h)?;
        let h = tape.gelu(h);
        let h = self.ff_out.forward(tape, h)?;
        tape.add(x, h)
    }
}

/// Fixed sinusoidal position table, `positions × width`.
pub fn sinusoidal_positions(positions: usize, width: usize) -> Tensor2 {
    let mut t = Tensor2::zeros(positions, width);
    for p in 0..positions {
        for i in 0..width {
            let pair = (i / 2) as f64;
            let angle = p as f64 / 10000f64.powf(2.0 * pair / width as f64);
            t.set(p, i, if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    t
}
