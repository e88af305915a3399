//! Finite-difference verification of the autodiff engine. Every op used by
//! the generators is checked against central differences; a composite U-Net
//! pass is checked end to end.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;
use streetgen_core::nn::unet::ControlBranch;
use streetgen_core::nn::{AdamW, Graph, Init, NodeId, ParamStore, UNet, UNetConfig};

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> ArrayD<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
}

fn loss_of(store: &ParamStore, build: &dyn Fn(&mut Graph, &[NodeId]) -> NodeId) -> f64 {
    let mut g = Graph::new(false);
    let pids = store.bind(&mut g);
    let loss = build(&mut g, &pids);
    g.value(loss)[[0]]
}

fn analytic_grads(
    store: &ParamStore,
    build: &dyn Fn(&mut Graph, &[NodeId]) -> NodeId,
) -> Vec<ArrayD<f64>> {
    let mut g = Graph::new(true);
    let pids = store.bind(&mut g);
    let loss = build(&mut g, &pids);
    let mut grads = g.backward(loss);
    store.grads_from(&pids, &mut grads)
}

/// Checks up to `per_tensor` elements of every parameter against central
/// finite differences.
fn fd_assert(
    store: &mut ParamStore,
    build: &dyn Fn(&mut Graph, &[NodeId]) -> NodeId,
    per_tensor: usize,
    tol: f64,
) {
    let analytic = analytic_grads(store, build);
    let h = 1e-5;
    for idx in 0..store.len() {
        let len = store.value(idx).len();
        let stride = (len / per_tensor).max(1);
        for k in (0..len).step_by(stride) {
            let orig = store.value(idx).as_slice().unwrap()[k];
            store.value_mut(idx).as_slice_mut().unwrap()[k] = orig + h;
            let lp = loss_of(store, build);
            store.value_mut(idx).as_slice_mut().unwrap()[k] = orig - h;
            let lm = loss_of(store, build);
            store.value_mut(idx).as_slice_mut().unwrap()[k] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let got = analytic[idx].as_slice().unwrap()[k];
            let denom = numeric.abs().max(got.abs()).max(1e-6);
            assert!(
                (numeric - got).abs() / denom < tol,
                "param {} ({}) elem {k}: numeric {numeric:.3e} vs analytic {got:.3e}",
                store.entries[idx].name,
                idx
            );
        }
    }
}

#[test]
fn conv2d_gradients_stride1_and_2() {
    for stride in [1usize, 2] {
        let mut rng = ChaCha8Rng::seed_from_u64(1 + stride as u64);
        let mut ps = ParamStore::new();
        let x = ps.add("x", &[3, 6, 8], Init::Normal { fan_in: 1 }, &mut rng);
        let w = ps.add("w", &[4, 3, 3, 3], Init::Normal { fan_in: 27 }, &mut rng);
        let b = ps.add("b", &[4], Init::Normal { fan_in: 1 }, &mut rng);
        let build = move |g: &mut Graph, pids: &[NodeId]| {
            let y = g.conv2d(pids[x], pids[w], pids[b], stride);
            g.mean_all(y)
        };
        // mean_all alone has constant gradients; square to make them vary.
        let build_sq = move |g: &mut Graph, pids: &[NodeId]| {
            let y = g.conv2d(pids[x], pids[w], pids[b], stride);
            let y2 = g.mul(y, y);
            g.mean_all(y2)
        };
        fd_assert(&mut ps, &build, 6, 1e-6);
        fd_assert(&mut ps, &build_sq, 6, 1e-5);
    }
}

#[test]
fn norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut ps = ParamStore::new();
    let x = ps.add("x", &[8, 4, 5], Init::Normal { fan_in: 1 }, &mut rng);
    let gamma = ps.add("gamma", &[8], Init::Ones, &mut rng);
    let beta = ps.add("beta", &[8], Init::Normal { fan_in: 1 }, &mut rng);
    let build = move |g: &mut Graph, pids: &[NodeId]| {
        let y = g.group_norm(pids[x], pids[gamma], pids[beta], 4);
        let y2 = g.mul(y, y);
        g.mean_all(y2)
    };
    fd_assert(&mut ps, &build, 8, 1e-5);

    let mut ps = ParamStore::new();
    let x = ps.add("x", &[5, 6], Init::Normal { fan_in: 1 }, &mut rng);
    let gamma = ps.add("gamma", &[6], Init::Ones, &mut rng);
    let beta = ps.add("beta", &[6], Init::Normal { fan_in: 1 }, &mut rng);
    let build = move |g: &mut Graph, pids: &[NodeId]| {
        let y = g.layer_norm_rows(pids[x], pids[gamma], pids[beta]);
        let y2 = g.mul(y, y);
        g.mean_all(y2)
    };
    fd_assert(&mut ps, &build, 8, 1e-5);
}

#[test]
fn attention_style_composite_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut ps = ParamStore::new();
    let q = ps.add("q", &[6, 4], Init::Normal { fan_in: 4 }, &mut rng);
    let k = ps.add("k", &[3, 4], Init::Normal { fan_in: 4 }, &mut rng);
    let v = ps.add("v", &[3, 4], Init::Normal { fan_in: 4 }, &mut rng);
    let build = move |g: &mut Graph, pids: &[NodeId]| {
        let kt = g.transpose2(pids[k]);
        let logits = g.matmul(pids[q], kt);
        let scaled = g.scale(logits, 0.5);
        let p = g.softmax_rows(scaled);
        let ctx = g.matmul(p, pids[v]);
        let sq = g.mul(ctx, ctx);
        g.mean_all(sq)
    };
    fd_assert(&mut ps, &build, 10, 1e-5);
}

#[test]
fn elementwise_and_reduction_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut ps = ParamStore::new();
    let a = ps.add("a", &[4, 5], Init::Normal { fan_in: 1 }, &mut rng);
    let b = ps.add("b", &[4, 5], Init::Normal { fan_in: 1 }, &mut rng);
    let bias = ps.add("bias", &[5], Init::Normal { fan_in: 1 }, &mut rng);
    let build = move |g: &mut Graph, pids: &[NodeId]| {
        let s = g.silu(pids[a]);
        let m = g.mul(s, pids[b]);
        let ws = g.add_scaled(m, pids[a], 0.3);
        let wb = g.add_row_bias(ws, pids[bias]);
        let mc = g.mean_cols(wb);
        let shaped = g.reshape(mc, &[1, 4]);
        let sq = g.mul(shaped, shaped);
        g.mean_all(sq)
    };
    fd_assert(&mut ps, &build, 10, 1e-5);
}

#[test]
fn spatial_op_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut ps = ParamStore::new();
    let x = ps.add("x", &[2, 4, 6], Init::Normal { fan_in: 1 }, &mut rng);
    let cb = ps.add("cb", &[2], Init::Normal { fan_in: 1 }, &mut rng);
    let map = ps.add("map", &[5, 7], Init::Normal { fan_in: 1 }, &mut rng);
    let build = move |g: &mut Graph, pids: &[NodeId]| {
        let up = g.upsample2(pids[x]);
        let biased = g.add_channel_bias(up, pids[cb]);
        let pooled = g.global_mean_pool(biased); // (2,)
        let resized = g.bilinear_resize(pids[map], 3, 4);
        let rmean = g.mean_all(resized);
        let pmean = g.mean_all(pooled);
        let psq = g.mul(pmean, pmean);
        g.add_scaled(psq, rmean, 0.7)
    };
    fd_assert(&mut ps, &build, 8, 1e-5);
}

#[test]
fn embedding_concat_slice_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut ps = ParamStore::new();
    let table = ps.add("table", &[7, 5], Init::Normal { fan_in: 5 }, &mut rng);
    let other = ps.add("other", &[2, 5], Init::Normal { fan_in: 5 }, &mut rng);
    let build = move |g: &mut Graph, pids: &[NodeId]| {
        let rows = g.gather_rows(pids[table], vec![1, 4, 1]);
        let cat = g.concat_rows(rows, pids[other]); // (5, 5)
        let cols = g.concat_cols(cat, cat); // (5, 10)
        let sl = g.slice_cols(cols, 2, 7);
        let sq = g.mul(sl, sl);
        g.mean_all(sq)
    };
    fd_assert(&mut ps, &build, 10, 1e-5);
}

#[test]
fn loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut ps = ParamStore::new();
    let logits = ps.add("logits", &[4, 3], Init::Normal { fan_in: 1 }, &mut rng);
    let pred = ps.add("pred", &[2, 3, 3], Init::Normal { fan_in: 1 }, &mut rng);
    let target = Arc::new(randn(&[2, 3, 3], &mut rng));
    let t2 = Arc::clone(&target);
    let build = move |g: &mut Graph, pids: &[NodeId]| {
        let ce = g.cross_entropy_mean(pids[logits], vec![0, 2, 1, 1]);
        let mse = g.mse_mean(pids[pred], Arc::clone(&t2));
        let both = g.add_scaled(ce, mse, 0.6);
        let sq = g.sq_diff(both, 0.25);
        g.scale(sq, 1.0)
    };
    fd_assert(&mut ps, &build, 9, 1e-5);
}

#[test]
fn unet_composite_gradients_and_taps() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut ps = ParamStore::new();
    let cfg = UNetConfig {
        in_ch: 3,
        base: 8,
        token_dim: 16,
        attn_dim: 8,
    };
    let unet = UNet::new(&mut ps, "unet", cfg, &mut rng);
    // Jitter every tensor so zero-initialized layers do not block gradient
    // flow; the exact-zero behavior has its own test below.
    for idx in 0..ps.len() {
        let noise = randn(&ps.value(idx).shape().to_vec(), &mut rng);
        *ps.value_mut(idx) += &(noise * 0.05);
    }
    let x = randn(&[3, 8, 8], &mut rng);
    let tokens = randn(&[4, 16], &mut rng);
    let target = Arc::new(randn(&[3, 8, 8], &mut rng));

    let build = move |g: &mut Graph, pids: &[NodeId]| {
        let xin = g.input(x.clone());
        let tok = g.input(tokens.clone());
        let eps = unet.forward(g, pids, xin, tok, 17, &[]);
        g.mse_mean(eps, Arc::clone(&target))
    };

    // Attention taps: 3 layers, rows are probability distributions.
    {
        let mut g = Graph::new(false);
        let pids = ps.bind(&mut g);
        let _ = build(&mut g, &pids);
        assert_eq!(g.taps.len(), 3);
        for tap in g.taps.clone() {
            let scores = g.value(tap.scores);
            assert_eq!(scores.shape()[0], tap.h * tap.w);
            for row in scores.rows() {
                assert!(row.iter().all(|&p| p >= 0.0));
                assert!((row.sum() - 1.0).abs() < 1e-10);
            }
        }
    }

    // Spot-check 10 random parameter elements against finite differences at
    // the 1e-2 relative tolerance the training contract requires.
    let analytic = analytic_grads(&ps, &build);
    let mut checked = 0;
    let mut attempts = 0;
    let mut pick_rng = ChaCha8Rng::seed_from_u64(23);
    while checked < 10 && attempts < 200 {
        attempts += 1;
        let idx = pick_rng.gen_range(0..ps.len());
        let len = ps.value(idx).len();
        let k = pick_rng.gen_range(0..len);
        let got = analytic[idx].as_slice().unwrap()[k];
        if got.abs() < 1e-10 {
            continue; // zero-gradient elements carry no signal to compare
        }
        let h = 1e-4;
        let orig = ps.value(idx).as_slice().unwrap()[k];
        ps.value_mut(idx).as_slice_mut().unwrap()[k] = orig + h;
        let lp = loss_of(&ps, &build);
        ps.value_mut(idx).as_slice_mut().unwrap()[k] = orig - h;
        let lm = loss_of(&ps, &build);
        ps.value_mut(idx).as_slice_mut().unwrap()[k] = orig;
        let numeric = (lp - lm) / (2.0 * h);
        let rel = (numeric - got).abs() / numeric.abs().max(got.abs()).max(1e-12);
        assert!(
            rel < 1e-2,
            "unet param {} elem {k}: numeric {numeric:.4e} analytic {got:.4e} rel {rel:.2e}",
            ps.entries[idx].name
        );
        checked += 1;
    }
    assert_eq!(checked, 10, "could not find 10 live parameters");
}

#[test]
fn zero_initialized_control_branch_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let mut ps = ParamStore::new();
    let cfg = UNetConfig {
        in_ch: 3,
        base: 8,
        token_dim: 16,
        attn_dim: 8,
    };
    let unet = UNet::new(&mut ps, "unet", cfg, &mut rng);
    let branch = ControlBranch::new(&mut ps, "ctrl", 3, &cfg, &mut rng);
    let x = randn(&[3, 8, 8], &mut rng);
    let tokens = randn(&[2, 16], &mut rng);
    let cond = randn(&[3, 8, 8], &mut rng);

    let run = |with_control: bool| {
        let mut g = Graph::new(false);
        let pids = ps.bind(&mut g);
        let xin = g.input(x.clone());
        let tok = g.input(tokens.clone());
        let controls = if with_control {
            let ci = g.input(cond.clone());
            vec![branch.forward(&mut g, &pids, ci)]
        } else {
            Vec::new()
        };
        let eps = unet.forward(&mut g, &pids, xin, tok, 5, &controls);
        g.value(eps).clone()
    };

    assert_eq!(run(true), run(false));
}

#[test]
fn adamw_minimizes_a_quadratic() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut ps = ParamStore::new();
    let x = ps.add("x", &[4], Init::Normal { fan_in: 1 }, &mut rng);
    let target = Arc::new(ArrayD::from_shape_vec(IxDyn(&[4]), vec![1.0, -2.0, 0.5, 3.0]).unwrap());
    let mut opt = AdamW::new(&ps, 0.05, 0.0);
    for _ in 0..500 {
        let mut g = Graph::new(true);
        let pids = ps.bind(&mut g);
        let loss = g.mse_mean(pids[x], Arc::clone(&target));
        let mut grads = g.backward(loss);
        let grads = ps.grads_from(&pids, &mut grads);
        drop(g); // release shared parameter tensors before stepping
        opt.step(&mut ps, &grads);
    }
    for (got, want) in ps.value(x).iter().zip(target.iter()) {
        assert!((got - want).abs() < 1e-3, "{got} vs {want}");
    }
}

#[test]
fn adamw_state_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let mut ps = ParamStore::new();
    let _ = ps.add("x", &[3, 2], Init::Normal { fan_in: 1 }, &mut rng);
    let mut opt = AdamW::new(&ps, 0.01, 0.01);
    let grads = vec![randn(&[3, 2], &mut rng)];
    opt.step(&mut ps, &grads);
    let bytes = opt.state_bytes();
    let mut opt2 = AdamW::new(&ps, 0.01, 0.01);
    opt2.load_state_bytes(&bytes).unwrap();
    assert_eq!(opt2.state_bytes(), bytes);
}
