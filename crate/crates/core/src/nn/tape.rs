//! Reverse-mode differentiation over a recorded sequence of tensor ops.
//!
//! A [`Tape`] is built once per forward pass. Every op appends a node holding
//! its output value; [`Tape::backward`] walks the nodes in reverse and returns
//! the gradients of the parameters that were read onto the tape.

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    /// Stride 1, zero "same" padding; odd kernel sizes.
    Conv2d { x: Var, w: Var, b: Var },
    /// Kernel size equals stride.
    ConvTranspose { x: Var, w: Var, b: Var },
    MaxPool { x: Var, argmax: Vec<usize> },
    Silu { x: Var },
    Add { a: Var, b: Var },
    Concat { a: Var, b: Var },
    HCat { a: Var, b: Var },
    Linear { x: Var, w: Var, b: Var },
    Gather { table: Var, rows: Vec<usize> },
    Broadcast { v: Var },
    Pad { x: Var },
    Crop { x: Var },
    GlobalAvg { x: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Parameter gradients from one backward pass, indexed like the [`ParamStore`].
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub grads: Vec<Option<Tensor>>,
}

impl ParamGrads {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// Dense gradients, zero for parameters absent from the tape.
    pub fn into_dense(self, store: &ParamStore) -> Vec<Tensor> {
        self.grads
            .into_iter()
            .zip(store.tensors())
            .map(|(g, p)| g.unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect()
    }
}

fn im2col(x: &[f64], cin: usize, h: usize, w: usize, kh: usize, kw: usize, col: &mut [f64]) {
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let hw = h * w;
    for ci in 0..cin {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for dy in 0..kh {
            for dx in 0..kw {
                let row = &mut col[((ci * kh + dy) * kw + dx) * hw..][..hw];
                let ox = dx as isize - pw;
                let x_lo = (-ox).max(0) as usize;
                let x_hi = ((w as isize - ox).min(w as isize)).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + dy as isize - ph;
                    let out = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    out[..x_lo].fill(0.0);
                    out[x_hi..].fill(0.0);
                    let s0 = (x_lo as isize + ox) as usize;
                    out[x_lo..x_hi].copy_from_slice(&src[s0..s0 + (x_hi - x_lo)]);
                }
            }
        }
    }
}

fn col2im(col: &[f64], cin: usize, h: usize, w: usize, kh: usize, kw: usize, dx_out: &mut [f64]) {
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let hw = h * w;
    for ci in 0..cin {
        let plane = &mut dx_out[ci * hw..(ci + 1) * hw];
        for dy in 0..kh {
            for dx in 0..kw {
                let row = &col[((ci * kh + dy) * kw + dx) * hw..][..hw];
                let ox = dx as isize - pw;
                let x_lo = (-ox).max(0) as usize;
                let x_hi = ((w as isize - ox).min(w as isize)).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy as isize - ph;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..][..w];
                    let s0 = (x_lo as isize + ox) as usize;
                    for (d, s) in dst[s0..s0 + (x_hi - x_lo)].iter_mut().zip(&row[y * w + x_lo..y * w + x_hi]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (bs, cin, h, wd) = xv.dims4();
        let (cout, cin_w, kh, kw) = wv.dims4();
        assert_eq!(cin, cin_w, "conv input channels");
        assert!(kh % 2 == 1 && kw % 2 == 1, "conv kernels must be odd");
        let (kk, hw) = (cin * kh * kw, h * wd);
        let mut out = Tensor::zeros(&[bs, cout, h, wd]);
        let mut col = vec![0.0; kk * hw];
        for n in 0..bs {
            im2col(&xv.data()[n * cin * hw..(n + 1) * cin * hw], cin, h, wd, kh, kw, &mut col);
            let o = &mut out.data_mut()[n * cout * hw..(n + 1) * cout * hw];
            for co in 0..cout {
                o[co * hw..(co + 1) * hw].fill(bv.data()[co]);
            }
            gemm(cout, kk, hw, 1.0, wv.data(), false, &col, false, 1.0, o);
        }
        self.push(out, Op::Conv2d { x, w, b })
    }

    pub fn conv_transpose(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (bs, cin, h, wd) = xv.dims4();
        let (cin_w, cout, sh, sw) = wv.dims4();
        assert_eq!(cin, cin_w, "transposed conv input channels");
        let (hw, css) = (h * wd, cout * sh * sw);
        let (oh, ow) = (h * sh, wd * sw);
        let mut out = Tensor::zeros(&[bs, cout, oh, ow]);
        let mut y = vec![0.0; css * hw];
        for n in 0..bs {
            gemm(css, cin, hw, 1.0, wv.data(), true, &xv.data()[n * cin * hw..(n + 1) * cin * hw], false, 0.0, &mut y);
            let o = &mut out.data_mut()[n * cout * oh * ow..(n + 1) * cout * oh * ow];
            for co in 0..cout {
                let bias = bv.data()[co];
                for a in 0..sh {
                    for bb in 0..sw {
                        let row = &y[((co * sh + a) * sw + bb) * hw..][..hw];
                        for i in 0..h {
                            for j in 0..wd {
                                o[(co * oh + i * sh + a) * ow + j * sw + bb] = row[i * wd + j] + bias;
                            }
                        }
                    }
                }
            }
        }
        self.push(out, Op::ConvTranspose { x, w, b })
    }

    /// Non-overlapping `ph x pw` max pooling; trailing rows/columns are dropped.
    pub fn max_pool(&mut self, x: Var, ph: usize, pw: usize) -> Var {
        let xv = self.value(x);
        let (bs, c, h, w) = xv.dims4();
        let (oh, ow) = (h / ph, w / pw);
        let mut out = Tensor::zeros(&[bs, c, oh, ow]);
        let mut argmax = vec![0; bs * c * oh * ow];
        for plane in 0..bs * c {
            let base = plane * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut arg = 0;
                    for a in 0..ph {
                        for b in 0..pw {
                            let idx = base + (i * ph + a) * w + j * pw + b;
                            let v = xv.data()[idx];
                            if v > best {
                                best = v;
                                arg = idx;
                            }
                        }
                    }
                    let o = (plane * oh + i) * ow + j;
                    out.data_mut()[o] = best;
                    argmax[o] = arg;
                }
            }
        }
        self.push(out, Op::MaxPool { x, argmax })
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v * sigmoid(v)).collect();
        let out = Tensor::from_vec(xv.shape(), data);
        self.push(out, Op::Silu { x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(out.shape(), self.value(b).shape(), "add shapes");
        out.add_assign(self.value(b));
        self.push(out, Op::Add { a, b })
    }

    /// Channel concatenation of two `[B, C, H, W]` tensors.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (bs, ca, h, w) = av.dims4();
        let (bs2, cb, h2, w2) = bv.dims4();
        assert_eq!((bs, h, w), (bs2, h2, w2), "concat shapes");
        let hw = h * w;
        let mut data = Vec::with_capacity(bs * (ca + cb) * hw);
        for n in 0..bs {
            data.extend_from_slice(&av.data()[n * ca * hw..(n + 1) * ca * hw]);
            data.extend_from_slice(&bv.data()[n * cb * hw..(n + 1) * cb * hw]);
        }
        let out = Tensor::from_vec(&[bs, ca + cb, h, w], data);
        self.push(out, Op::Concat { a, b })
    }

    /// Column concatenation of `[B, n]` and `[B, m]`.
    pub fn hcat(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let ((bs, n), (bs2, m)) = (av.dims2(), bv.dims2());
        assert_eq!(bs, bs2, "hcat rows");
        let mut data = Vec::with_capacity(bs * (n + m));
        for r in 0..bs {
            data.extend_from_slice(&av.data()[r * n..(r + 1) * n]);
            data.extend_from_slice(&bv.data()[r * m..(r + 1) * m]);
        }
        let out = Tensor::from_vec(&[bs, n + m], data);
        self.push(out, Op::HCat { a, b })
    }

    /// `x [B, n] * w[m, n]^T + b[m]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (bs, n) = xv.dims2();
        let (m, n_w) = wv.dims2();
        assert_eq!(n, n_w, "linear input width");
        let mut out = Tensor::zeros(&[bs, m]);
        for r in 0..bs {
            out.data_mut()[r * m..(r + 1) * m].copy_from_slice(bv.data());
        }
        gemm(bs, n, m, 1.0, xv.data(), false, wv.data(), true, 1.0, out.data_mut());
        self.push(out, Op::Linear { x, w, b })
    }

    /// Rows of a `[rows, d]` table, one per batch element.
    pub fn gather(&mut self, table: Var, rows: &[usize]) -> Var {
        let tv = self.value(table);
        let (_, d) = tv.dims2();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            data.extend_from_slice(&tv.data()[r * d..(r + 1) * d]);
        }
        let out = Tensor::from_vec(&[rows.len(), d], data);
        self.push(out, Op::Gather { table, rows: rows.to_vec() })
    }

    /// `[B, k]` to constant `[B, k, h, w]` planes.
    pub fn broadcast(&mut self, v: Var, h: usize, w: usize) -> Var {
        let vv = self.value(v);
        let (bs, k) = vv.dims2();
        let mut data = Vec::with_capacity(bs * k * h * w);
        for &val in vv.data() {
            data.extend(std::iter::repeat(val).take(h * w));
        }
        let out = Tensor::from_vec(&[bs, k, h, w], data);
        self.push(out, Op::Broadcast { v })
    }

    /// Zero padding at the bottom and right up to `h x w`.
    pub fn pad(&mut self, x: Var, h: usize, w: usize) -> Var {
        let out = resize(self.value(x), h, w);
        self.push(out, Op::Pad { x })
    }

    /// Top-left `h x w` window.
    pub fn crop(&mut self, x: Var, h: usize, w: usize) -> Var {
        let out = resize(self.value(x), h, w);
        self.push(out, Op::Crop { x })
    }

    pub fn global_avg(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (bs, c, h, w) = xv.dims4();
        let hw = h * w;
        let data = xv.data().chunks_exact(hw).map(|p| p.iter().sum::<f64>() / hw as f64).collect();
        let out = Tensor::from_vec(&[bs, c], data);
        self.push(out, Op::GlobalAvg { x })
    }

    /// Back-propagates `seed` (the gradient of the loss with respect to `out`).
    pub fn backward(&self, out: Var, seed: Tensor, n_params: usize) -> ParamGrads {
        assert_eq!(self.value(out).shape(), seed.shape(), "seed shape");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed);
        let mut param_grads: Vec<Option<Tensor>> = vec![None; n_params];

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => match &mut param_grads[id.0] {
                    Some(existing) => existing.add_assign(&g),
                    slot => *slot = Some(g),
                },
                Op::Conv2d { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (bs, cin, h, wd) = xv.dims4();
                    let (cout, _, kh, kw) = wv.dims4();
                    let (kk, hw) = (cin * kh * kw, h * wd);
                    let mut dx = Tensor::zeros(xv.shape());
                    let mut dw = Tensor::zeros(wv.shape());
                    let mut db = Tensor::zeros(&[cout]);
                    let mut col = vec![0.0; kk * hw];
                    let mut dcol = vec![0.0; kk * hw];
                    for n in 0..bs {
                        let gout = &g.data()[n * cout * hw..(n + 1) * cout * hw];
                        im2col(&xv.data()[n * cin * hw..(n + 1) * cin * hw], cin, h, wd, kh, kw, &mut col);
                        gemm(cout, hw, kk, 1.0, gout, false, &col, true, 1.0, dw.data_mut());
                        gemm(kk, cout, hw, 1.0, wv.data(), true, gout, false, 0.0, &mut dcol);
                        col2im(&dcol, cin, h, wd, kh, kw, &mut dx.data_mut()[n * cin * hw..(n + 1) * cin * hw]);
                        for co in 0..cout {
                            db.data_mut()[co] += gout[co * hw..(co + 1) * hw].iter().sum::<f64>();
                        }
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *w, dw);
                    acc(&mut grads, *b, db);
                }
                Op::ConvTranspose { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (bs, cin, h, wd) = xv.dims4();
                    let (_, cout, sh, sw) = wv.dims4();
                    let (hw, css, oh, ow) = (h * wd, cout * sh * sw, h * sh, wd * sw);
                    let mut dx = Tensor::zeros(xv.shape());
                    let mut dw = Tensor::zeros(wv.shape());
                    let mut db = Tensor::zeros(&[cout]);
                    let mut dy = vec![0.0; css * hw];
                    for n in 0..bs {
                        let gout = &g.data()[n * cout * oh * ow..(n + 1) * cout * oh * ow];
                        for co in 0..cout {
                            db.data_mut()[co] += gout[co * oh * ow..(co + 1) * oh * ow].iter().sum::<f64>();
                            for a in 0..sh {
                                for bb in 0..sw {
                                    let row = &mut dy[((co * sh + a) * sw + bb) * hw..][..hw];
                                    for i in 0..h {
                                        for j in 0..wd {
                                            row[i * wd + j] = gout[(co * oh + i * sh + a) * ow + j * sw + bb];
                                        }
                                    }
                                }
                            }
                        }
                        let xn = &xv.data()[n * cin * hw..(n + 1) * cin * hw];
                        gemm(cin, css, hw, 1.0, wv.data(), false, &dy, false, 0.0, &mut dx.data_mut()[n * cin * hw..(n + 1) * cin * hw]);
                        gemm(cin, hw, css, 1.0, xn, false, &dy, true, 1.0, dw.data_mut());
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *w, dw);
                    acc(&mut grads, *b, db);
                }
                Op::MaxPool { x, argmax } => {
                    let mut dx = Tensor::zeros(self.value(*x).shape());
                    for (o, &src) in argmax.iter().enumerate() {
                        dx.data_mut()[src] += g.data()[o];
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Silu { x } => {
                    let xv = self.value(*x);
                    let data = xv
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &gg)| {
                            let s = sigmoid(v);
                            gg * s * (1.0 + v * (1.0 - s))
                        })
                        .collect();
                    acc(&mut grads, *x, Tensor::from_vec(xv.shape(), data));
                }
                Op::Add { a, b } => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Concat { a, b } => {
                    let (bs, ca, h, w) = self.value(*a).dims4();
                    let cb = self.value(*b).dims4().1;
                    let hw = h * w;
                    let mut da = Vec::with_capacity(bs * ca * hw);
                    let mut dbv = Vec::with_capacity(bs * cb * hw);
                    for n in 0..bs {
                        let base = n * (ca + cb) * hw;
                        da.extend_from_slice(&g.data()[base..base + ca * hw]);
                        dbv.extend_from_slice(&g.data()[base + ca * hw..base + (ca + cb) * hw]);
                    }
                    acc(&mut grads, *a, Tensor::from_vec(&[bs, ca, h, w], da));
                    acc(&mut grads, *b, Tensor::from_vec(&[bs, cb, h, w], dbv));
                }
                Op::HCat { a, b } => {
                    let (bs, n) = self.value(*a).dims2();
                    let m = self.value(*b).dims2().1;
                    let mut da = Vec::with_capacity(bs * n);
                    let mut dbv = Vec::with_capacity(bs * m);
                    for row in g.data().chunks_exact(n + m) {
                        da.extend_from_slice(&row[..n]);
                        dbv.extend_from_slice(&row[n..]);
                    }
                    acc(&mut grads, *a, Tensor::from_vec(&[bs, n], da));
                    acc(&mut grads, *b, Tensor::from_vec(&[bs, m], dbv));
                }
                Op::Linear { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (bs, n) = xv.dims2();
                    let (m, _) = wv.dims2();
                    let mut dx = Tensor::zeros(&[bs, n]);
                    let mut dw = Tensor::zeros(&[m, n]);
                    gemm(bs, m, n, 1.0, g.data(), false, wv.data(), false, 0.0, dx.data_mut());
                    gemm(m, bs, n, 1.0, g.data(), true, xv.data(), false, 0.0, dw.data_mut());
                    let mut db = Tensor::zeros(&[m]);
                    for row in g.data().chunks_exact(m) {
                        for (d, v) in db.data_mut().iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *w, dw);
                    acc(&mut grads, *b, db);
                }
                Op::Gather { table, rows } => {
                    let tv = self.value(*table);
                    let (_, d) = tv.dims2();
                    let mut dt = Tensor::zeros(tv.shape());
                    for (i, &r) in rows.iter().enumerate() {
                        for k in 0..d {
                            dt.data_mut()[r * d + k] += g.data()[i * d + k];
                        }
                    }
                    acc(&mut grads, *table, dt);
                }
                Op::Broadcast { v } => {
                    let vv = self.value(*v);
                    let (_, _, h, w) = node.value.dims4();
                    let data = g.data().chunks_exact(h * w).map(|p| p.iter().sum()).collect();
                    acc(&mut grads, *v, Tensor::from_vec(vv.shape(), data));
                }
                Op::Pad { x } | Op::Crop { x } => {
                    let (_, _, h, w) = self.value(*x).dims4();
                    acc(&mut grads, *x, resize(&g, h, w));
                }
                Op::GlobalAvg { x } => {
                    let xv = self.value(*x);
                    let (_, _, h, w) = xv.dims4();
                    let hw = h * w;
                    let mut data = Vec::with_capacity(xv.len());
                    for &gg in g.data() {
                        data.extend(std::iter::repeat(gg / hw as f64).take(hw));
                    }
                    acc(&mut grads, *x, Tensor::from_vec(xv.shape(), data));
                }
            }
        }
        ParamGrads { grads: param_grads }
    }
}

/// Copies the overlapping top-left region into a zeroed `[B, C, h, w]` tensor.
fn resize(x: &Tensor, h: usize, w: usize) -> Tensor {
    let (bs, c, xh, xw) = x.dims4();
    let mut out = Tensor::zeros(&[bs, c, h, w]);
    let (ch, cw) = (h.min(xh), w.min(xw));
    for plane in 0..bs * c {
        for i in 0..ch {
            let src = &x.data()[(plane * xh + i) * xw..][..cw];
            out.data_mut()[(plane * h + i) * w..][..cw].copy_from_slice(src);
        }
    }
    out
}
