//! The autodiff tape. A [`Graph`] is built per forward pass: every op pushes
//! a node holding its value and, when recording, a closure that maps the
//! node's output gradient to contributions on its parents. Nodes are created
//! in topological order, so backward is a single reverse sweep.

use ndarray::{Array1, Array2, ArrayD, Axis, IxDyn};
use std::sync::Arc;

pub type NodeId = usize;

type BackFn = Box<dyn Fn(&ArrayD<f64>) -> Vec<(NodeId, ArrayD<f64>)>>;

struct Node {
    value: Arc<ArrayD<f64>>,
    back: Option<BackFn>,
}

/// A cross-attention probability tap: the softmax scores node of one
/// attention layer together with the spatial shape of its query grid.
#[derive(Debug, Clone, Copy)]
pub struct AttnTap {
    pub scores: NodeId,
    pub h: usize,
    pub w: usize,
}

pub struct Graph {
    nodes: Vec<Node>,
    /// When false, no backward closures are stored (inference mode).
    pub record: bool,
    pub taps: Vec<AttnTap>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Graph {
    pub fn new(record: bool) -> Graph {
        Graph {
            nodes: Vec::with_capacity(128),
            record,
            taps: Vec::new(),
        }
    }

    fn push(&mut self, value: ArrayD<f64>, back: Option<BackFn>) -> NodeId {
        self.nodes.push(Node {
            value: Arc::new(std_layout(value)),
            back: if self.record { back } else { None },
        });
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &ArrayD<f64> {
        &self.nodes[id].value
    }

    fn arc(&self, id: NodeId) -> Arc<ArrayD<f64>> {
        Arc::clone(&self.nodes[id].value)
    }

    /// Leaf holding a constant (inputs, conditioning, targets).
    pub fn input(&mut self, value: ArrayD<f64>) -> NodeId {
        self.push(value, None)
    }

    /// Leaf sharing a parameter tensor; gradients are read off after
    /// `backward` by node id.
    pub fn param(&mut self, value: Arc<ArrayD<f64>>) -> NodeId {
        self.nodes.push(Node { value, back: None });
        self.nodes.len() - 1
    }

    /// Reverse sweep from `loss` (a scalar node). Returns per-node gradients;
    /// entries for nodes the loss does not depend on are `None`.
    pub fn backward(&self, loss: NodeId) -> Vec<Option<ArrayD<f64>>> {
        assert!(self.record, "backward on a non-recording graph");
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; self.nodes.len()];
        grads[loss] = Some(ArrayD::ones(self.nodes[loss].value.raw_dim()));
        for id in (0..=loss).rev() {
            let Some(g) = grads[id].take() else { continue };
            if let Some(back) = &self.nodes[id].back {
                for (pid, contrib) in back(&g) {
                    match &mut grads[pid] {
                        Some(acc) => *acc += &contrib,
                        slot => *slot = Some(std_layout(contrib)),
                    }
                }
            }
            grads[id] = Some(g);
        }
        grads
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = &*self.nodes[a].value + &*self.nodes[b].value;
        self.push(
            out,
            Some(Box::new(move |g| {
                vec![(a, g.clone()), (b, g.clone())]
            })),
        )
    }

    /// a + k * b
    pub fn add_scaled(&mut self, a: NodeId, b: NodeId, k: f64) -> NodeId {
        let out = &*self.nodes[a].value + &(&*self.nodes[b].value * k);
        self.push(
            out,
            Some(Box::new(move |g| vec![(a, g.clone()), (b, g * k)])),
        )
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let out = &*self.nodes[a].value * k;
        self.push(out, Some(Box::new(move |g| vec![(a, g * k)])))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let va = self.arc(a);
        let vb = self.arc(b);
        let out = &*va * &*vb;
        self.push(
            out,
            Some(Box::new(move |g| vec![(a, g * &*vb), (b, g * &*va)])),
        )
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        let va = self.arc(a);
        let out = va.mapv(|x| x * sigmoid(x));
        self.push(
            out,
            Some(Box::new(move |g| {
                let dx = va.mapv(|x| {
                    let s = sigmoid(x);
                    s * (1.0 + x * (1.0 - s))
                });
                vec![(a, g * &dx)]
            })),
        )
    }

    // ---- shape ----

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        let in_shape: Vec<usize> = self.nodes[a].value.shape().to_vec();
        let out = self.nodes[a]
            .value
            .to_shape(IxDyn(shape))
            .expect("reshape: incompatible size")
            .to_owned();
        self.push(
            out,
            Some(Box::new(move |g| {
                vec![(a, g.to_shape(IxDyn(&in_shape)).unwrap().to_owned())]
            })),
        )
    }

    /// (M, N) -> (N, M)
    pub fn transpose2(&mut self, a: NodeId) -> NodeId {
        let out = self.nodes[a].value.t().as_standard_layout().into_owned();
        self.push(
            out,
            Some(Box::new(move |g| {
                vec![(a, g.t().as_standard_layout().into_owned())]
            })),
        )
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let va = as2(&self.nodes[a].value);
        let vb = as2(&self.nodes[b].value);
        let na = va.nrows();
        let nb = vb.nrows();
        let mut out = Array2::zeros((na + nb, va.ncols()));
        out.slice_mut(ndarray::s![..na, ..]).assign(&va);
        out.slice_mut(ndarray::s![na.., ..]).assign(&vb);
        self.push(
            out.into_dyn(),
            Some(Box::new(move |g| {
                let g2 = as2(g);
                vec![
                    (a, g2.slice(ndarray::s![..na, ..]).to_owned().into_dyn()),
                    (b, g2.slice(ndarray::s![na.., ..]).to_owned().into_dyn()),
                ]
            })),
        )
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let va = as2(&self.nodes[a].value);
        let vb = as2(&self.nodes[b].value);
        let (ca, cb) = (va.ncols(), vb.ncols());
        let mut out = Array2::zeros((va.nrows(), ca + cb));
        out.slice_mut(ndarray::s![.., ..ca]).assign(&va);
        out.slice_mut(ndarray::s![.., ca..]).assign(&vb);
        self.push(
            out.into_dyn(),
            Some(Box::new(move |g| {
                let g2 = as2(g);
                vec![
                    (a, g2.slice(ndarray::s![.., ..ca]).to_owned().into_dyn()),
                    (b, g2.slice(ndarray::s![.., ca..]).to_owned().into_dyn()),
                ]
            })),
        )
    }

    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let va = &self.nodes[a].value;
        let vb = &self.nodes[b].value;
        let (ca, h, w) = chw(va);
        let (cb, hb, wb) = chw(vb);
        assert_eq!((h, w), (hb, wb));
        let mut out = ArrayD::zeros(IxDyn(&[ca + cb, h, w]));
        out.as_slice_mut().unwrap()[..ca * h * w].copy_from_slice(va.as_slice().unwrap());
        out.as_slice_mut().unwrap()[ca * h * w..].copy_from_slice(vb.as_slice().unwrap());
        self.push(
            out,
            Some(Box::new(move |g| {
                let gs = g.as_slice().unwrap();
                let ga = ArrayD::from_shape_vec(IxDyn(&[ca, h, w]), gs[..ca * h * w].to_vec())
                    .unwrap();
                let gb = ArrayD::from_shape_vec(IxDyn(&[cb, h, w]), gs[ca * h * w..].to_vec())
                    .unwrap();
                vec![(a, ga), (b, gb)]
            })),
        )
    }

    pub fn slice_cols(&mut self, a: NodeId, lo: usize, hi: usize) -> NodeId {
        let va = as2(&self.nodes[a].value);
        let (rows, cols) = (va.nrows(), va.ncols());
        let out = va.slice(ndarray::s![.., lo..hi]).to_owned();
        self.push(
            out.into_dyn(),
            Some(Box::new(move |g| {
                let mut full = Array2::zeros((rows, cols));
                full.slice_mut(ndarray::s![.., lo..hi]).assign(&as2(g));
                vec![(a, full.into_dyn())]
            })),
        )
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let va = self.arc(a);
        let vb = self.arc(b);
        let out = as2(&va).dot(&as2(&vb));
        self.push(
            out.into_dyn(),
            Some(Box::new(move |g| {
                let g2 = as2(g);
                let da = g2.dot(&as2(&vb).t());
                let db = as2(&va).t().dot(&g2);
                vec![(a, da.into_dyn()), (b, db.into_dyn())]
            })),
        )
    }

    /// Adds a bias vector to every row of an (N, D) matrix.
    pub fn add_row_bias(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let va = as2(&self.nodes[a].value);
        let vb = as1(&self.nodes[bias].value);
        let out = &va + &vb;
        self.push(
            out.into_dyn(),
            Some(Box::new(move |g| {
                let g2 = as2(g);
                vec![(a, g.clone()), (bias, g2.sum_axis(Axis(0)).into_dyn())]
            })),
        )
    }

    /// Softmax over the last axis of an (N, S) matrix.
    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let va = as2(&self.nodes[a].value);
        let mut out = va.to_owned();
        for mut row in out.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let s = row.sum();
            row.mapv_inplace(|x| x / s);
        }
        let out_dyn = out.into_dyn();
        let p = Arc::new(out_dyn.clone());
        self.push(
            out_dyn,
            Some(Box::new(move |g| {
                let g2 = as2(g);
                let p2 = as2(&p);
                let mut dx = Array2::zeros(g2.raw_dim());
                for i in 0..g2.nrows() {
                    let dot: f64 = g2.row(i).iter().zip(p2.row(i)).map(|(x, y)| x * y).sum();
                    for j in 0..g2.ncols() {
                        dx[[i, j]] = p2[[i, j]] * (g2[[i, j]] - dot);
                    }
                }
                vec![(a, dx.into_dyn())]
            })),
        )
    }

    // ---- convolutions ----

    /// 3x3 convolution with padding 1 and the given stride over a (C, H, W)
    /// input; weight (O, C, 3, 3), bias (O).
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize) -> NodeId {
        let vx = self.arc(x);
        let vw = self.arc(w);
        let (c_in, h, wi) = chw(&vx);
        let o = self.nodes[w].value.shape()[0];
        assert_eq!(self.nodes[w].value.shape(), &[o, c_in, 3, 3]);
        let (oh, ow) = (out_dim(h, stride), out_dim(wi, stride));

        let col = im2col(&vx, c_in, h, wi, stride, oh, ow);
        let wmat = as2(&self.nodes[w].value.to_shape(IxDyn(&[o, c_in * 9])).unwrap().to_owned())
            .to_owned();
        let mut out_mat = col.dot(&wmat.t()); // (oh*ow, O)
        let vb = as1(&self.nodes[b].value);
        out_mat += &vb;
        // (oh*ow, O) -> (O, oh, ow)
        let out = out_mat
            .t()
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((o, oh, ow))
            .unwrap()
            .into_dyn();
        self.push(
            out,
            Some(Box::new(move |g| {
                let gmat = g
                    .to_shape(IxDyn(&[o, oh * ow]))
                    .unwrap()
                    .into_owned(); // (O, oh*ow)
                let gmat2 = as2(&gmat).t().as_standard_layout().into_owned(); // (oh*ow, O)
                let col = im2col(&vx, c_in, h, wi, stride, oh, ow);
                let dwmat = gmat2.t().dot(&col); // (O, C*9)
                let dw = dwmat.into_shape_with_order((o, c_in, 3, 3)).unwrap();
                let db = gmat2.sum_axis(Axis(0));
                let wmat = as2(&vw.to_shape(IxDyn(&[o, c_in * 9])).unwrap().to_owned()).to_owned();
                let dcol = gmat2.dot(&wmat); // (oh*ow, C*9)
                let dx = col2im(&dcol, c_in, h, wi, stride, oh, ow);
                vec![
                    (x, dx),
                    (w, dw.into_dyn()),
                    (b, db.into_dyn()),
                ]
            })),
        )
    }

    /// Adds a per-channel bias to a (C, H, W) tensor.
    pub fn add_channel_bias(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let vx = &self.nodes[x].value;
        let (c, h, w) = chw(vx);
        let vb = as1(&self.nodes[b].value);
        let mut out = vx.as_ref().clone();
        {
            let s = out.as_slice_mut().unwrap();
            for ch in 0..c {
                let bias = vb[ch];
                for v in &mut s[ch * h * w..(ch + 1) * h * w] {
                    *v += bias;
                }
            }
        }
        self.push(
            out,
            Some(Box::new(move |g| {
                let gs = g.as_slice().unwrap();
                let mut db = Array1::zeros(c);
                for ch in 0..c {
                    db[ch] = gs[ch * h * w..(ch + 1) * h * w].iter().sum();
                }
                vec![(x, g.clone()), (b, db.into_dyn())]
            })),
        )
    }

    /// Nearest-neighbor 2x upsampling of a (C, H, W) tensor.
    pub fn upsample2(&mut self, x: NodeId) -> NodeId {
        let vx = &self.nodes[x].value;
        let (c, h, w) = chw(vx);
        let xs = vx.as_slice().unwrap();
        let mut out = vec![0.0; c * 4 * h * w];
        let (oh, ow) = (2 * h, 2 * w);
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    out[ch * oh * ow + i * ow + j] = xs[ch * h * w + (i / 2) * w + j / 2];
                }
            }
        }
        self.push(
            ArrayD::from_shape_vec(IxDyn(&[c, oh, ow]), out).unwrap(),
            Some(Box::new(move |g| {
                let gs = g.as_slice().unwrap();
                let mut dx = vec![0.0; c * h * w];
                for ch in 0..c {
                    for i in 0..oh {
                        for j in 0..ow {
                            dx[ch * h * w + (i / 2) * w + j / 2] +=
                                gs[ch * oh * ow + i * ow + j];
                        }
                    }
                }
                vec![(x, ArrayD::from_shape_vec(IxDyn(&[c, h, w]), dx).unwrap())]
            })),
        )
    }

    // ---- normalization ----

    /// GroupNorm over a (C, H, W) tensor with learnable per-channel gain and
    /// shift.
    pub fn group_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        groups: usize,
    ) -> NodeId {
        const EPS: f64 = 1e-5;
        let vx = self.arc(x);
        let (c, h, w) = chw(&vx);
        assert_eq!(c % groups, 0);
        let per = c / groups;
        let n = per * h * w;
        let xs = vx.as_slice().unwrap();
        let vg = as1(&self.nodes[gamma].value).to_owned();
        let vb = as1(&self.nodes[beta].value).to_owned();

        let mut means = vec![0.0; groups];
        let mut stds = vec![0.0; groups];
        let mut out = vec![0.0; c * h * w];
        for g in 0..groups {
            let lo = g * per * h * w;
            let hi = lo + n;
            let mean = xs[lo..hi].iter().sum::<f64>() / n as f64;
            let var = xs[lo..hi].iter().map(|&v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let std = (var + EPS).sqrt();
            means[g] = mean;
            stds[g] = std;
            for ch in g * per..(g + 1) * per {
                for k in 0..h * w {
                    let idx = ch * h * w + k;
                    out[idx] = vg[ch] * (xs[idx] - mean) / std + vb[ch];
                }
            }
        }
        let gamma_v = vg.clone();
        self.push(
            ArrayD::from_shape_vec(IxDyn(&[c, h, w]), out).unwrap(),
            Some(Box::new(move |g| {
                let gs = g.as_slice().unwrap();
                let xs = vx.as_slice().unwrap();
                let mut dx = vec![0.0; c * h * w];
                let mut dgamma = Array1::zeros(c);
                let mut dbeta = Array1::zeros(c);
                for gi in 0..groups {
                    let mean = means[gi];
                    let std = stds[gi];
                    // Accumulate the two reduction terms of the norm backward.
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for ch in gi * per..(gi + 1) * per {
                        for k in 0..h * w {
                            let idx = ch * h * w + k;
                            let xhat = (xs[idx] - mean) / std;
                            let dxhat = gs[idx] * gamma_v[ch];
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * xhat;
                            dgamma[ch] += gs[idx] * xhat;
                            dbeta[ch] += gs[idx];
                        }
                    }
                    let nf = n as f64;
                    for ch in gi * per..(gi + 1) * per {
                        for k in 0..h * w {
                            let idx = ch * h * w + k;
                            let xhat = (xs[idx] - mean) / std;
                            let dxhat = gs[idx] * gamma_v[ch];
                            dx[idx] = (dxhat - sum_dxhat / nf - xhat * sum_dxhat_xhat / nf) / std;
                        }
                    }
                }
                vec![
                    (x, ArrayD::from_shape_vec(IxDyn(&[c, h, w]), dx).unwrap()),
                    (gamma, dgamma.into_dyn()),
                    (beta, dbeta.into_dyn()),
                ]
            })),
        )
    }

    /// LayerNorm over the last axis of an (N, D) matrix.
    pub fn layer_norm_rows(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        const EPS: f64 = 1e-5;
        let vx = self.arc(x);
        let x2 = as2(&vx).to_owned();
        let (n, d) = (x2.nrows(), x2.ncols());
        let vg = as1(&self.nodes[gamma].value).to_owned();
        let vb = as1(&self.nodes[beta].value).to_owned();
        let mut out = Array2::zeros((n, d));
        let mut means = vec![0.0; n];
        let mut stds = vec![0.0; n];
        for i in 0..n {
            let row = x2.row(i);
            let mean = row.sum() / d as f64;
            let var = row.iter().map(|&v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let std = (var + EPS).sqrt();
            means[i] = mean;
            stds[i] = std;
            for j in 0..d {
                out[[i, j]] = vg[j] * (x2[[i, j]] - mean) / std + vb[j];
            }
        }
        let gamma_v = vg.clone();
        self.push(
            out.into_dyn(),
            Some(Box::new(move |g| {
                let g2 = as2(g);
                let x2 = as2(&vx);
                let mut dx = Array2::zeros((n, d));
                let mut dgamma = Array1::zeros(d);
                let mut dbeta = Array1::zeros(d);
                for i in 0..n {
                    let mean = means[i];
                    let std = stds[i];
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for j in 0..d {
                        let xhat = (x2[[i, j]] - mean) / std;
                        let dxhat = g2[[i, j]] * gamma_v[j];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                        dgamma[j] += g2[[i, j]] * xhat;
                        dbeta[j] += g2[[i, j]];
                    }
                    let df = d as f64;
                    for j in 0..d {
                        let xhat = (x2[[i, j]] - mean) / std;
                        let dxhat = g2[[i, j]] * gamma_v[j];
                        dx[[i, j]] = (dxhat - sum_dxhat / df - xhat * sum_dxhat_xhat / df) / std;
                    }
                }
                vec![
                    (x, dx.into_dyn()),
                    (gamma, dgamma.into_dyn()),
                    (beta, dbeta.into_dyn()),
                ]
            })),
        )
    }

    // ---- resampling and reductions ----

    /// Bilinear resize of an (H, W) map to (oh, ow), half-pixel centers.
    pub fn bilinear_resize(&mut self, x: NodeId, oh: usize, ow: usize) -> NodeId {
        let vx = &self.nodes[x].value;
        let shape = vx.shape();
        assert_eq!(shape.len(), 2);
        let (h, w) = (shape[0], shape[1]);
        let xs = vx.as_slice().unwrap();
        let weights = bilinear_weights(h, w, oh, ow);
        let mut out = vec![0.0; oh * ow];
        for (oi, taps) in weights.iter().enumerate() {
            out[oi] = taps.iter().map(|&(si, wgt)| xs[si] * wgt).sum();
        }
        self.push(
            ArrayD::from_shape_vec(IxDyn(&[oh, ow]), out).unwrap(),
            Some(Box::new(move |g| {
                let gs = g.as_slice().unwrap();
                let mut dx = vec![0.0; h * w];
                for (oi, taps) in weights.iter().enumerate() {
                    for &(si, wgt) in taps {
                        dx[si] += gs[oi] * wgt;
                    }
                }
                vec![(x, ArrayD::from_shape_vec(IxDyn(&[h, w]), dx).unwrap())]
            })),
        )
    }

    /// Mean over the columns of an (N, S) matrix -> (N,).
    pub fn mean_cols(&mut self, a: NodeId) -> NodeId {
        let va = as2(&self.nodes[a].value);
        let (n, s) = (va.nrows(), va.ncols());
        let out = va.mean_axis(Axis(1)).unwrap();
        self.push(
            out.into_dyn(),
            Some(Box::new(move |g| {
                let g1 = as1(g);
                let mut dx = Array2::zeros((n, s));
                for i in 0..n {
                    let v = g1[i] / s as f64;
                    dx.row_mut(i).fill(v);
                }
                vec![(a, dx.into_dyn())]
            })),
        )
    }

    /// Global average pool of a (C, H, W) tensor -> (C,).
    pub fn global_mean_pool(&mut self, x: NodeId) -> NodeId {
        let vx = &self.nodes[x].value;
        let (c, h, w) = chw(vx);
        let xs = vx.as_slice().unwrap();
        let n = (h * w) as f64;
        let out: Array1<f64> = (0..c)
            .map(|ch| xs[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / n)
            .collect();
        self.push(
            out.into_dyn(),
            Some(Box::new(move |g| {
                let g1 = as1(g);
                let mut dx = vec![0.0; c * h * w];
                for ch in 0..c {
                    let v = g1[ch] / n;
                    for k in 0..h * w {
                        dx[ch * h * w + k] = v;
                    }
                }
                vec![(x, ArrayD::from_shape_vec(IxDyn(&[c, h, w]), dx).unwrap())]
            })),
        )
    }

    /// Selects rows of an embedding table (V, D) by token id -> (S, D).
    pub fn gather_rows(&mut self, table: NodeId, ids: Vec<usize>) -> NodeId {
        let vt = as2(&self.nodes[table].value);
        let (v, d) = (vt.nrows(), vt.ncols());
        let mut out = Array2::zeros((ids.len(), d));
        for (i, &id) in ids.iter().enumerate() {
            out.row_mut(i).assign(&vt.row(id));
        }
        self.push(
            out.into_dyn(),
            Some(Box::new(move |g| {
                let g2 = as2(g);
                let mut dt = Array2::zeros((v, d));
                for (i, &id) in ids.iter().enumerate() {
                    let mut row = dt.row_mut(id);
                    row += &g2.row(i);
                }
                vec![(table, dt.into_dyn())]
            })),
        )
    }

    // ---- losses ----

    /// Mean over all elements of (a - target)^2; target is a constant.
    pub fn mse_mean(&mut self, a: NodeId, target: Arc<ArrayD<f64>>) -> NodeId {
        let va = self.arc(a);
        assert_eq!(va.shape(), target.shape());
        let n = va.len() as f64;
        let loss = va
            .iter()
            .zip(target.iter())
            .map(|(&p, &t)| (p - t).powi(2))
            .sum::<f64>()
            / n;
        self.push(
            ArrayD::from_elem(IxDyn(&[1]), loss),
            Some(Box::new(move |g| {
                let gv = g[[0]];
                let dx = (&*va - &*target) * (2.0 * gv / n);
                vec![(a, dx)]
            })),
        )
    }

    /// Mean cross-entropy of row logits (N, K) against integer targets.
    pub fn cross_entropy_mean(&mut self, logits: NodeId, targets: Vec<usize>) -> NodeId {
        let vl = self.arc(logits);
        let l2 = as2(&vl).to_owned();
        let (n, _k) = (l2.nrows(), l2.ncols());
        assert_eq!(targets.len(), n);
        let mut probs = l2.clone();
        let mut loss = 0.0;
        for (i, mut row) in probs.rows_mut().into_iter().enumerate() {
            let m = row.fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let s = row.sum();
            row.mapv_inplace(|x| x / s);
            loss -= row[targets[i]].max(1e-300).ln();
        }
        loss /= n as f64;
        let probs = Arc::new(probs);
        self.push(
            ArrayD::from_elem(IxDyn(&[1]), loss),
            Some(Box::new(move |g| {
                let gv = g[[0]];
                let mut dl = probs.as_ref().clone();
                for (i, &t) in targets.iter().enumerate() {
                    dl[[i, t]] -= 1.0;
                }
                dl.mapv_inplace(|x| x * gv / n as f64);
                vec![(logits, dl.into_dyn())]
            })),
        )
    }

    /// (a - target)^2 for a scalar node and a constant target.
    pub fn sq_diff(&mut self, a: NodeId, target: f64) -> NodeId {
        let p = self.nodes[a].value[[0]];
        self.push(
            ArrayD::from_elem(IxDyn(&[1]), (p - target).powi(2)),
            Some(Box::new(move |g| {
                vec![(
                    a,
                    ArrayD::from_elem(IxDyn(&[1]), 2.0 * (p - target) * g[[0]]),
                )]
            })),
        )
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a].value;
        let n = va.len() as f64;
        let shape: Vec<usize> = va.shape().to_vec();
        let loss = va.sum() / n;
        self.push(
            ArrayD::from_elem(IxDyn(&[1]), loss),
            Some(Box::new(move |g| {
                vec![(a, ArrayD::from_elem(IxDyn(&shape), g[[0]] / n))]
            })),
        )
    }

    /// Records a cross-attention tap for later aggregation.
    pub fn tap(&mut self, scores: NodeId, h: usize, w: usize) {
        self.taps.push(AttnTap { scores, h, w });
    }
}

/// Rewrites an array into standard (C-order) layout if needed; every node
/// value and gradient is kept standard so ops may rely on `as_slice`.
fn std_layout(a: ArrayD<f64>) -> ArrayD<f64> {
    if a.is_standard_layout() {
        a
    } else {
        let shape: Vec<usize> = a.shape().to_vec();
        ArrayD::from_shape_vec(IxDyn(&shape), a.iter().copied().collect()).unwrap()
    }
}

pub(crate) fn as2(a: &ArrayD<f64>) -> ndarray::ArrayView2<'_, f64> {
    a.view().into_dimensionality().expect("expected 2-d array")
}

pub(crate) fn as1(a: &ArrayD<f64>) -> ndarray::ArrayView1<'_, f64> {
    a.view().into_dimensionality().expect("expected 1-d array")
}

pub(crate) fn chw(a: &ArrayD<f64>) -> (usize, usize, usize) {
    let s = a.shape();
    assert_eq!(s.len(), 3, "expected (C, H, W), got {s:?}");
    (s[0], s[1], s[2])
}

fn out_dim(n: usize, stride: usize) -> usize {
    (n + 2 - 3) / stride + 1
}

/// Unrolls 3x3 patches (padding 1) into an (oh*ow, C*9) matrix.
fn im2col(
    x: &ArrayD<f64>,
    c: usize,
    h: usize,
    w: usize,
    stride: usize,
    oh: usize,
    ow: usize,
) -> Array2<f64> {
    let xs = x.as_slice().unwrap();
    let mut col = Array2::zeros((oh * ow, c * 9));
    let cs = col.as_slice_mut().unwrap();
    for oi in 0..oh {
        for oj in 0..ow {
            let base = (oi * ow + oj) * c * 9;
            let i0 = (oi * stride) as isize - 1;
            let j0 = (oj * stride) as isize - 1;
            for ch in 0..c {
                let xoff = ch * h * w;
                let coff = base + ch * 9;
                for ki in 0..3isize {
                    let ii = i0 + ki;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for kj in 0..3isize {
                        let jj = j0 + kj;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        cs[coff + (ki * 3 + kj) as usize] =
                            xs[xoff + ii as usize * w + jj as usize];
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters an (oh*ow, C*9) gradient back onto the
/// (C, H, W) input.
fn col2im(
    dcol: &Array2<f64>,
    c: usize,
    h: usize,
    w: usize,
    stride: usize,
    oh: usize,
    ow: usize,
) -> ArrayD<f64> {
    let mut dx = vec![0.0; c * h * w];
    let ds = dcol.as_slice().unwrap();
    for oi in 0..oh {
        for oj in 0..ow {
            let base = (oi * ow + oj) * c * 9;
            let i0 = (oi * stride) as isize - 1;
            let j0 = (oj * stride) as isize - 1;
            for ch in 0..c {
                let xoff = ch * h * w;
                let coff = base + ch * 9;
                for ki in 0..3isize {
                    let ii = i0 + ki;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for kj in 0..3isize {
                        let jj = j0 + kj;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        dx[xoff + ii as usize * w + jj as usize] +=
                            ds[coff + (ki * 3 + kj) as usize];
                    }
                }
            }
        }
    }
    ArrayD::from_shape_vec(IxDyn(&[c, h, w]), dx).unwrap()
}

/// Source taps and weights for one output pixel of a bilinear resize.
fn bilinear_weights(h: usize, w: usize, oh: usize, ow: usize) -> Vec<Vec<(usize, f64)>> {
    let mut out = Vec::with_capacity(oh * ow);
    for oi in 0..oh {
        let sy = ((oi as f64 + 0.5) * h as f64 / oh as f64 - 0.5).clamp(0.0, h as f64 - 1.0);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for oj in 0..ow {
            let sx = ((oj as f64 + 0.5) * w as f64 / ow as f64 - 0.5).clamp(0.0, w as f64 - 1.0);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            out.push(vec![
                (y0 * w + x0, (1.0 - fy) * (1.0 - fx)),
                (y0 * w + x1, (1.0 - fy) * fx),
                (y1 * w + x0, fy * (1.0 - fx)),
                (y1 * w + x1, fy * fx),
            ]);
        }
    }
    out
}
