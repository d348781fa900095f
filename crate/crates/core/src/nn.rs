//! Layer building blocks shared by the encoder and the reconstruction decoder.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::params::{init, Bound, ParamStore};

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub fn init_linear<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut R) {
    store.insert(format!("{prefix}_w"), init::linear(fan_in, fan_out, rng));
    store.insert(format!("{prefix}_b"), init::zeros(&[fan_out]));
}

/// `x @ W + b` over the last axis.
pub fn linear<'g>(p: &Bound<'g, '_>, prefix: &str, x: Var<'g>) -> Var<'g> {
    x.matmul(p.param(&format!("{prefix}_w"))) + p.param(&format!("{prefix}_b"))
}

pub fn init_layer_norm(store: &mut ParamStore, prefix: &str, dim: usize) {
    store.insert(format!("{prefix}_g"), init::ones(&[dim]));
    store.insert(format!("{prefix}_b"), init::zeros(&[dim]));
}

/// Layer normalization over the last axis with a learned gain and bias.
pub fn layer_norm<'g>(p: &Bound<'g, '_>, prefix: &str, x: Var<'g>) -> Var<'g> {
    let last = x.shape().len() - 1;
    x.layer_norm(&[last], LAYER_NORM_EPS) * p.param(&format!("{prefix}_g"))
        + p.param(&format!("{prefix}_b"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerShape {
    pub dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
}

pub fn init_transformer_layer<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    shape: TransformerShape,
    rng: &mut R,
) {
    let d = shape.dim;
    init_layer_norm(store, &format!("{prefix}.ln1"), d);
    for proj in ["q", "k", "v", "o"] {
        init_linear(store, &format!("{prefix}.{proj}"), d, d, rng);
    }
    init_layer_norm(store, &format!("{prefix}.ln2"), d);
    init_linear(store, &format!("{prefix}.ff1"), d, shape.ff_dim, rng);
    init_linear(store, &format!("{prefix}.ff2"), shape.ff_dim, d, rng);
}

/// Multi-head scaled dot-product self-attention over the token axis of `x: [B, N, D]`.
///
/// Returns the attended tokens and the attention probabilities `[B, H, N, N]`.
pub fn self_attention<'g>(p: &Bound<'g, '_>, prefix: &str, x: Var<'g>, heads: usize) -> (Var<'g>, Var<'g>) {
    let shape = x.shape();
    let (b, n, d) = (shape[0], shape[1], shape[2]);
    let dh = d / heads;
    let split = |v: Var<'g>| v.reshape(&[b, n, heads, dh]).permute(&[0, 2, 1, 3]);
    let q = split(linear(p, &format!("{prefix}.q"), x));
    let k = split(linear(p, &format!("{prefix}.k"), x));
    let v = split(linear(p, &format!("{prefix}.v"), x));
    let scores = q.matmul(k.transpose()).scale(1.0 / (dh as f64).sqrt());
    let probs = scores.softmax();
    let merged = probs.matmul(v).permute(&[0, 2, 1, 3]).reshape(&[b, n, d]);
    (linear(p, &format!("{prefix}.o"), merged), probs)
}

/// Pre-norm transformer block: attention and feed-forward sub-layers, each residual.
pub fn transformer_layer<'g>(p: &Bound<'g, '_>, prefix: &str, x: Var<'g>, heads: usize) -> (Var<'g>, Var<'g>) {
    let (attended, probs) = self_attention(p, prefix, layer_norm(p, &format!("{prefix}.ln1"), x), heads);
    let x = x + attended;
    let hidden = linear(p, &format!("{prefix}.ff1"), layer_norm(p, &format!("{prefix}.ln2"), x)).gelu();
    (x + linear(p, &format!("{prefix}.ff2"), hidden), probs)
}
