//! A small time-conditional encoder/decoder denoiser with one cross-attention
//! block per level, per-level additive control injection points, and
//! attention-score taps.

use super::graph::{Graph, NodeId};
use super::layers::{sinusoidal_embedding, Conv2d, CrossAttention, GroupNorm, Linear};
use super::store::ParamStore;
use ndarray::{ArrayD, IxDyn};
use rand_chacha::ChaCha8Rng;

pub const TIME_EMB_DIM: usize = 64;

#[derive(Debug, Clone, Copy)]
pub struct UNetConfig {
    pub in_ch: usize,
    /// Channel width of the full-resolution level; deeper levels use 2x, 3x.
    pub base: usize,
    pub token_dim: usize,
    pub attn_dim: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            in_ch: 3,
            base: 8,
            token_dim: 64,
            attn_dim: 32,
        }
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    gn1: GroupNorm,
    conv1: Conv2d,
    time: Linear,
    gn2: GroupNorm,
    conv2: Conv2d,
}

impl ResBlock {
    fn new(ps: &mut ParamStore, name: &str, ch: usize, rng: &mut ChaCha8Rng) -> ResBlock {
        ResBlock {
            gn1: GroupNorm::new(ps, &format!("{name}.gn1"), ch, rng),
            conv1: Conv2d::new(ps, &format!("{name}.conv1"), ch, ch, 1, rng),
            time: Linear::new(ps, &format!("{name}.time"), TIME_EMB_DIM, ch, rng),
            gn2: GroupNorm::new(ps, &format!("{name}.gn2"), ch, rng),
            // Zero-initialized second conv: the block starts as an identity.
            conv2: Conv2d::zeroed(ps, &format!("{name}.conv2"), ch, ch),
        }
    }

    fn forward(&self, g: &mut Graph, pids: &[NodeId], x: NodeId, temb: NodeId) -> NodeId {
        let mut h = self.gn1.forward(g, pids, x);
        h = g.silu(h);
        h = self.conv1.forward(g, pids, h);
        let shift = self.time.forward(g, pids, temb); // (1, ch)
        let ch = g.value(shift).shape()[1];
        let shift = g.reshape(shift, &[ch]);
        h = g.add_channel_bias(h, shift);
        h = self.gn2.forward(g, pids, h);
        h = g.silu(h);
        h = self.conv2.forward(g, pids, h);
        g.add(x, h)
    }
}

/// Three-level U-Net. Levels run at full, half and quarter resolution with
/// channel widths base, 2*base, 3*base. Control features (when given) are
/// added right after each encoder level's entry convolution.
#[derive(Debug, Clone)]
pub struct UNet {
    pub cfg: UNetConfig,
    time1: Linear,
    time2: Linear,
    stem: Conv2d,
    enc1: ResBlock,
    attn1: CrossAttention,
    down1: Conv2d,
    enc2: ResBlock,
    attn2: CrossAttention,
    down2: Conv2d,
    mid: ResBlock,
    attn3: CrossAttention,
    up1: Conv2d,
    dec1: ResBlock,
    up2: Conv2d,
    dec2: ResBlock,
    out_gn: GroupNorm,
    out_conv: Conv2d,
}

impl UNet {
    pub fn channels(cfg: &UNetConfig) -> [usize; 3] {
        [cfg.base, 2 * cfg.base, 3 * cfg.base]
    }

    pub fn new(ps: &mut ParamStore, name: &str, cfg: UNetConfig, rng: &mut ChaCha8Rng) -> UNet {
        let [c1, c2, c3] = Self::channels(&cfg);
        UNet {
            cfg,
            time1: Linear::new(ps, &format!("{name}.time1"), TIME_EMB_DIM, TIME_EMB_DIM, rng),
            time2: Linear::new(ps, &format!("{name}.time2"), TIME_EMB_DIM, TIME_EMB_DIM, rng),
            stem: Conv2d::new(ps, &format!("{name}.stem"), cfg.in_ch, c1, 1, rng),
            enc1: ResBlock::new(ps, &format!("{name}.enc1"), c1, rng),
            attn1: CrossAttention::new(ps, &format!("{name}.attn1"), c1, cfg.token_dim, cfg.attn_dim, rng),
            down1: Conv2d::new(ps, &format!("{name}.down1"), c1, c2, 2, rng),
            enc2: ResBlock::new(ps, &format!("{name}.enc2"), c2, rng),
            attn2: CrossAttention::new(ps, &format!("{name}.attn2"), c2, cfg.token_dim, cfg.attn_dim, rng),
            down2: Conv2d::new(ps, &format!("{name}.down2"), c2, c3, 2, rng),
            mid: ResBlock::new(ps, &format!("{name}.mid"), c3, rng),
            attn3: CrossAttention::new(ps, &format!("{name}.attn3"), c3, cfg.token_dim, cfg.attn_dim, rng),
            up1: Conv2d::new(ps, &format!("{name}.up1"), c3, c2, 1, rng),
            dec1: ResBlock::new(ps, &format!("{name}.dec1"), c2, rng),
            up2: Conv2d::new(ps, &format!("{name}.up2"), c2, c1, 1, rng),
            dec2: ResBlock::new(ps, &format!("{name}.dec2"), c1, rng),
            out_gn: GroupNorm::new(ps, &format!("{name}.out_gn"), c1, rng),
            // Zero-initialized output: untrained denoisers predict zero noise.
            out_conv: Conv2d::zeroed(ps, &format!("{name}.out"), c1, cfg.in_ch),
        }
    }

    /// Builds the time-embedding node for timestep `t` (1-based index).
    pub fn time_embedding(&self, g: &mut Graph, pids: &[NodeId], t: usize) -> NodeId {
        let sin = sinusoidal_embedding(t as f64, TIME_EMB_DIM);
        let inp = g.input(ArrayD::from_shape_vec(IxDyn(&[1, TIME_EMB_DIM]), sin).unwrap());
        let h = self.time1.forward(g, pids, inp);
        let h = g.silu(h);
        self.time2.forward(g, pids, h)
    }

    /// Predicts the noise for latent `x` (in_ch, H, W) under conditioning
    /// `tokens` (S, token_dim). `controls` holds per-branch level features
    /// aligned with the three encoder levels; every branch's features are
    /// added at its level.
    pub fn forward(
        &self,
        g: &mut Graph,
        pids: &[NodeId],
        x: NodeId,
        tokens: NodeId,
        t: usize,
        controls: &[[NodeId; 3]],
    ) -> NodeId {
        let temb = self.time_embedding(g, pids, t);

        let mut h1 = self.stem.forward(g, pids, x);
        for c in controls {
            h1 = g.add(h1, c[0]);
        }
        let h1 = self.enc1.forward(g, pids, h1, temb);
        let h1 = self.attn1.forward(g, pids, h1, tokens);

        let mut h2 = self.down1.forward(g, pids, h1);
        for c in controls {
            h2 = g.add(h2, c[1]);
        }
        let h2 = self.enc2.forward(g, pids, h2, temb);
        let h2 = self.attn2.forward(g, pids, h2, tokens);

        let mut h3 = self.down2.forward(g, pids, h2);
        for c in controls {
            h3 = g.add(h3, c[2]);
        }
        let h3 = self.mid.forward(g, pids, h3, temb);
        let h3 = self.attn3.forward(g, pids, h3, tokens);

        let u1 = g.upsample2(h3);
        let u1 = self.up1.forward(g, pids, u1);
        let u1 = g.add(u1, h2);
        let u1 = self.dec1.forward(g, pids, u1, temb);

        let u2 = g.upsample2(u1);
        let u2 = self.up2.forward(g, pids, u2);
        let u2 = g.add(u2, h1);
        let u2 = self.dec2.forward(g, pids, u2, temb);

        let out = self.out_gn.forward(g, pids, u2);
        let out = g.silu(out);
        self.out_conv.forward(g, pids, out)
    }
}

/// A control branch: a three-layer convolutional encoder of a conditioning
/// image producing one feature map per denoiser level, each behind a
/// zero-initialized projection so the branch is an exact no-op until trained.
#[derive(Debug, Clone)]
pub struct ControlBranch {
    conv1: Conv2d,
    conv2: Conv2d,
    conv3: Conv2d,
    proj: [Conv2d; 3],
}

impl ControlBranch {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        in_ch: usize,
        cfg: &UNetConfig,
        rng: &mut ChaCha8Rng,
    ) -> ControlBranch {
        let [c1, c2, c3] = UNet::channels(cfg);
        ControlBranch {
            conv1: Conv2d::new(ps, &format!("{name}.conv1"), in_ch, c1, 1, rng),
            conv2: Conv2d::new(ps, &format!("{name}.conv2"), c1, c2, 2, rng),
            conv3: Conv2d::new(ps, &format!("{name}.conv3"), c2, c3, 2, rng),
            proj: [
                Conv2d::zeroed(ps, &format!("{name}.proj1"), c1, c1),
                Conv2d::zeroed(ps, &format!("{name}.proj2"), c2, c2),
                Conv2d::zeroed(ps, &format!("{name}.proj3"), c3, c3),
            ],
        }
    }

    /// image: (in_ch, H, W) -> level features [(c1,H,W), (c2,H/2,W/2), (c3,H/4,W/4)]
    pub fn forward(&self, g: &mut Graph, pids: &[NodeId], image: NodeId) -> [NodeId; 3] {
        let f1 = self.conv1.forward(g, pids, image);
        let f1a = g.silu(f1);
        let f2 = self.conv2.forward(g, pids, f1a);
        let f2a = g.silu(f2);
        let f3 = self.conv3.forward(g, pids, f2a);
        [
            self.proj[0].forward(g, pids, f1a),
            self.proj[1].forward(g, pids, f2a),
            self.proj[2].forward(g, pids, f3),
        ]
    }
}
