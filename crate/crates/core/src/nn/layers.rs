//! Layers assembled from graph ops. Each layer owns indices into a
//! [`ParamStore`] and is a pure function of (graph, bound param ids, inputs).

use super::graph::{Graph, NodeId};
use super::store::{Init, ParamStore};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Linear {
    w: usize,
    b: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Linear {
        let w = ps.add(
            &format!("{name}.w"),
            &[in_dim, out_dim],
            Init::Normal { fan_in: in_dim },
            rng,
        );
        let b = ps.add(&format!("{name}.b"), &[out_dim], Init::Zeros, rng);
        Linear { w, b, in_dim, out_dim }
    }

    /// Zero-initialized variant: the layer is an exact no-op contribution
    /// until trained (used by control branches and output projections).
    pub fn zeroed(ps: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Linear {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = ps.add(&format!("{name}.w"), &[in_dim, out_dim], Init::Zeros, &mut rng);
        let b = ps.add(&format!("{name}.b"), &[out_dim], Init::Zeros, &mut rng);
        Linear { w, b, in_dim, out_dim }
    }

    /// (N, in) -> (N, out)
    pub fn forward(&self, g: &mut Graph, pids: &[NodeId], x: NodeId) -> NodeId {
        let y = g.matmul(x, pids[self.w]);
        g.add_row_bias(y, pids[self.b])
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    w: usize,
    b: usize,
    pub stride: usize,
}

impl Conv2d {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Conv2d {
        let w = ps.add(
            &format!("{name}.w"),
            &[out_ch, in_ch, 3, 3],
            Init::Normal { fan_in: in_ch * 9 },
            rng,
        );
        let b = ps.add(&format!("{name}.b"), &[out_ch], Init::Zeros, rng);
        Conv2d { w, b, stride }
    }

    pub fn zeroed(ps: &mut ParamStore, name: &str, in_ch: usize, out_ch: usize) -> Conv2d {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = ps.add(&format!("{name}.w"), &[out_ch, in_ch, 3, 3], Init::Zeros, &mut rng);
        let b = ps.add(&format!("{name}.b"), &[out_ch], Init::Zeros, &mut rng);
        Conv2d { w, b, stride: 1 }
    }

    pub fn forward(&self, g: &mut Graph, pids: &[NodeId], x: NodeId) -> NodeId {
        g.conv2d(x, pids[self.w], pids[self.b], self.stride)
    }
}

#[derive(Debug, Clone)]
pub struct GroupNorm {
    gamma: usize,
    beta: usize,
    pub groups: usize,
}

impl GroupNorm {
    pub fn new(ps: &mut ParamStore, name: &str, channels: usize, rng: &mut ChaCha8Rng) -> GroupNorm {
        let groups = if channels % 8 == 0 { 8 } else { channels.min(4) };
        assert_eq!(channels % groups, 0);
        let gamma = ps.add(&format!("{name}.gamma"), &[channels], Init::Ones, rng);
        let beta = ps.add(&format!("{name}.beta"), &[channels], Init::Zeros, rng);
        GroupNorm { gamma, beta, groups }
    }

    pub fn forward(&self, g: &mut Graph, pids: &[NodeId], x: NodeId) -> NodeId {
        g.group_norm(x, pids[self.gamma], pids[self.beta], self.groups)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: usize,
    beta: usize,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize, rng: &mut ChaCha8Rng) -> LayerNorm {
        let gamma = ps.add(&format!("{name}.gamma"), &[dim], Init::Ones, rng);
        let beta = ps.add(&format!("{name}.beta"), &[dim], Init::Zeros, rng);
        LayerNorm { gamma, beta }
    }

    pub fn forward(&self, g: &mut Graph, pids: &[NodeId], x: NodeId) -> NodeId {
        g.layer_norm_rows(x, pids[self.gamma], pids[self.beta])
    }
}

/// Single-head cross-attention from a spatial feature map to a token
/// sequence, with a residual connection. Softmax scores are recorded as an
/// attention tap.
#[derive(Debug, Clone)]
pub struct CrossAttention {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    pub attn_dim: usize,
}

impl CrossAttention {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        channels: usize,
        token_dim: usize,
        attn_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> CrossAttention {
        CrossAttention {
            wq: Linear::new(ps, &format!("{name}.wq"), channels, attn_dim, rng),
            wk: Linear::new(ps, &format!("{name}.wk"), token_dim, attn_dim, rng),
            wv: Linear::new(ps, &format!("{name}.wv"), token_dim, attn_dim, rng),
            wo: Linear::zeroed(ps, &format!("{name}.wo"), attn_dim, channels),
            attn_dim,
        }
    }

    /// x: (C, H, W), tokens: (S, token_dim) -> (C, H, W)
    pub fn forward(&self, g: &mut Graph, pids: &[NodeId], x: NodeId, tokens: NodeId) -> NodeId {
        let shape = g.value(x).shape().to_vec();
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let flat = g.reshape(x, &[c, h * w]);
        let q_in = g.transpose2(flat); // (HW, C)
        let q = self.wq.forward(g, pids, q_in);
        let k = self.wk.forward(g, pids, tokens);
        let v = self.wv.forward(g, pids, tokens);
        let kt = g.transpose2(k);
        let logits = g.matmul(q, kt);
        let scaled = g.scale(logits, 1.0 / (self.attn_dim as f64).sqrt());
        let scores = g.softmax_rows(scaled); // (HW, S)
        g.tap(scores, h, w);
        let ctx = g.matmul(scores, v); // (HW, A)
        let proj = self.wo.forward(g, pids, ctx); // (HW, C)
        let back = g.transpose2(proj);
        let back = g.reshape(back, &[c, h, w]);
        g.add(x, back)
    }
}

/// Single-head self-attention over a small row set, with residual.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    attn_dim: usize,
}

impl SelfAttention {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        dim: usize,
        attn_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> SelfAttention {
        SelfAttention {
            wq: Linear::new(ps, &format!("{name}.wq"), dim, attn_dim, rng),
            wk: Linear::new(ps, &format!("{name}.wk"), dim, attn_dim, rng),
            wv: Linear::new(ps, &format!("{name}.wv"), dim, attn_dim, rng),
            wo: Linear::zeroed(ps, &format!("{name}.wo"), attn_dim, dim),
            attn_dim,
        }
    }

    /// x: (N, D) -> (N, D)
    pub fn forward(&self, g: &mut Graph, pids: &[NodeId], x: NodeId) -> NodeId {
        let q = self.wq.forward(g, pids, x);
        let k = self.wk.forward(g, pids, x);
        let v = self.wv.forward(g, pids, x);
        let kt = g.transpose2(k);
        let logits = g.matmul(q, kt);
        let scaled = g.scale(logits, 1.0 / (self.attn_dim as f64).sqrt());
        let scores = g.softmax_rows(scaled);
        let ctx = g.matmul(scores, v);
        let proj = self.wo.forward(g, pids, ctx);
        g.add(x, proj)
    }
}

use rand::SeedableRng;

/// Sinusoidal embedding of a scalar (e.g. a diffusion timestep scaled to
/// [0, 1]); a plain input, not a parameter.
pub fn sinusoidal_embedding(t: f64, dim: usize) -> Vec<f64> {
    assert!(dim % 2 == 0);
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = (10_000f64).powf(-(i as f64) / half as f64);
        out.push((t * freq).sin());
    }
    for i in 0..half {
        let freq = (10_000f64).powf(-(i as f64) / half as f64);
        out.push((t * freq).cos());
    }
    out
}
