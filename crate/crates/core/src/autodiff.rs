//! Tape-based reverse-mode automatic differentiation over row-major matrices.
//!
//! Every value on the tape is a 2-D `f64` matrix; scalars are `1 x 1`.
//! Batched sequence data is stored with batch and time folded into the row
//! axis, and the few ops that need the batch structure (attention, segment
//! pooling) take it as an explicit argument.

use ndarray::{s, Array2, Axis, Zip};

pub type Mat = Array2<f64>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    Sigmoid(Var),
    Tanh(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        heads: usize,
        probs: Vec<Mat>,
    },
    Gather {
        x: Var,
        idx: Vec<usize>,
    },
    Reshape(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SegmentMean {
        x: Var,
        seg: usize,
    },
    SegmentMax {
        x: Var,
        argmax: Vec<usize>,
    },
    Transpose(Var),
    SumAll(Var),
    SqErrSum {
        pred: Var,
        target: Mat,
        scale: f64,
    },
    BceProb {
        probs: Var,
        targets: Mat,
        scale: f64,
    },
    SoftCrossEntropy {
        logits: Var,
        targets: Mat,
        probs: Mat,
        scale: f64,
    },
    L2NormalizeRows {
        x: Var,
        norms: Vec<f64>,
    },
}

/// Lower bound applied to probabilities before taking logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Default)]
pub struct Tape {
    values: Vec<Mat>,
    ops: Vec<Op>,
}

/// Gradients of a scalar with respect to every leaf on the tape.
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Mat> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, delta: Mat) {
    match &mut grads[v.0] {
        Some(g) => *g += &delta,
        slot @ None => *slot = Some(delta),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.values[v.0]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.values[v.0][[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.values[v.0].dim()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.values[a.0].dot(&self.values[b.0]);
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let out = self.values[a.0].dot(&self.values[b.0].t());
        self.push(out, Op::MatMulBt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = &self.values[a.0] + &self.values[b.0];
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = &self.values[a.0] - &self.values[b.0];
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = &self.values[a.0] * &self.values[b.0];
        self.push(out, Op::Mul(a, b))
    }

    /// Adds a `1 x c` row to every row of an `n x c` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.values[row.0].nrows(), 1, "add_row expects a single row");
        let out = &self.values[a.0] + &self.values[row.0];
        self.push(out, Op::AddRow(a, row))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.values[row.0].nrows(), 1, "mul_row expects a single row");
        let out = &self.values[a.0] * &self.values[row.0];
        self.push(out, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, f: f64) -> Var {
        let out = &self.values[a.0] * f;
        self.push(out, Op::Scale(a, f))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.values[a.0].mapv(|x| x * sigmoid(x));
        self.push(out, Op::Silu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.values[a.0].mapv(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.values[a.0].mapv(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    /// Row-wise layer normalization with a learned `1 x c` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let xv = &self.values[x.0];
        let (n, c) = xv.dim();
        let mut xhat = Mat::zeros((n, c));
        let mut inv_std = Vec::with_capacity(n);
        for (i, row) in xv.outer_iter().enumerate() {
            let mean = row.sum() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for (j, v) in row.iter().enumerate() {
                xhat[[i, j]] = (v - mean) * is;
            }
        }
        let out = &(&xhat * &self.values[gain.0]) + &self.values[bias.0];
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    /// Multi-head scaled dot-product attention.
    ///
    /// `q` is `(batch * tq) x d`, `k` and `v` are `(batch * tk) x d`; every
    /// batch element attends only within its own block of rows.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, batch: usize, heads: usize) -> Var {
        let (qn, d) = self.values[q.0].dim();
        let (kn, dk_total) = self.values[k.0].dim();
        assert_eq!(d, dk_total, "query/key width mismatch");
        assert_eq!(self.values[v.0].dim(), (kn, d), "key/value shape mismatch");
        assert!(d % heads == 0, "width {d} not divisible by {heads} heads");
        assert!(qn % batch == 0 && kn % batch == 0, "rows not divisible by batch");
        let tq = qn / batch;
        let tk = kn / batch;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Mat::zeros((qn, d));
        let mut probs = Vec::with_capacity(batch * heads);
        {
            let qv = &self.values[q.0];
            let kv = &self.values[k.0];
            let vv = &self.values[v.0];
            for b in 0..batch {
                for h in 0..heads {
                    let qs = qv.slice(s![b * tq..(b + 1) * tq, h * dh..(h + 1) * dh]);
                    let ks = kv.slice(s![b * tk..(b + 1) * tk, h * dh..(h + 1) * dh]);
                    let vs = vv.slice(s![b * tk..(b + 1) * tk, h * dh..(h + 1) * dh]);
                    let mut p = qs.dot(&ks.t());
                    p *= scale;
                    for mut row in p.outer_iter_mut() {
                        let m = row.fold(f64::NEG_INFINITY, |a, &x| a.max(x));
                        row.mapv_inplace(|x| (x - m).exp());
                        let z = row.sum();
                        row /= z;
                    }
                    let o = p.dot(&vs);
                    out.slice_mut(s![b * tq..(b + 1) * tq, h * dh..(h + 1) * dh])
                        .assign(&o);
                    probs.push(p);
                }
            }
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                batch,
                heads,
                probs,
            },
        )
    }

    /// Selects rows by index; repeated indices are allowed.
    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Var {
        let xv = &self.values[x.0];
        let out = xv.select(Axis(0), &idx);
        self.push(out, Op::Gather { x, idx })
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let xv = &self.values[x.0];
        assert_eq!(xv.len(), rows * cols, "reshape must preserve element count");
        let flat: Vec<f64> = xv.iter().copied().collect();
        let out = Mat::from_shape_vec((rows, cols), flat).expect("shape checked above");
        self.push(out, Op::Reshape(x))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.values[p.0].view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("row counts must agree");
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.values[p.0].view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("column counts must agree");
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    /// Mean over consecutive blocks of `seg` rows.
    pub fn segment_mean(&mut self, x: Var, seg: usize) -> Var {
        let xv = &self.values[x.0];
        let (n, c) = xv.dim();
        assert!(seg > 0 && n % seg == 0, "rows {n} not divisible by segment {seg}");
        let mut out = Mat::zeros((n / seg, c));
        for (g, mut row) in out.outer_iter_mut().enumerate() {
            let block = xv.slice(s![g * seg..(g + 1) * seg, ..]);
            row.assign(&block.mean_axis(Axis(0)).expect("non-empty block"));
        }
        self.push(out, Op::SegmentMean { x, seg })
    }

    /// Max over consecutive blocks of `seg` rows.
    pub fn segment_max(&mut self, x: Var, seg: usize) -> Var {
        let xv = &self.values[x.0];
        let (n, c) = xv.dim();
        assert!(seg > 0 && n % seg == 0, "rows {n} not divisible by segment {seg}");
        let groups = n / seg;
        let mut out = Mat::zeros((groups, c));
        let mut argmax = vec![0usize; groups * c];
        for g in 0..groups {
            for j in 0..c {
                let mut best = f64::NEG_INFINITY;
                let mut arg = g * seg;
                for r in g * seg..(g + 1) * seg {
                    if xv[[r, j]] > best {
                        best = xv[[r, j]];
                        arg = r;
                    }
                }
                out[[g, j]] = best;
                argmax[g * c + j] = arg;
            }
        }
        self.push(out, Op::SegmentMax { x, argmax })
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.values[x.0].t().to_owned();
        self.push(out, Op::Transpose(x))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.values[x.0].sum();
        self.push(Mat::from_elem((1, 1), s), Op::SumAll(x))
    }

    /// `scale * Σ (pred - target)²`
    pub fn sq_err_sum(&mut self, pred: Var, target: Mat, scale: f64) -> Var {
        let pv = &self.values[pred.0];
        assert_eq!(pv.dim(), target.dim(), "prediction/target shape mismatch");
        let s: f64 = Zip::from(pv)
            .and(&target)
            .fold(0.0, |acc, p, t| acc + (p - t) * (p - t));
        self.push(
            Mat::from_elem((1, 1), s * scale),
            Op::SqErrSum {
                pred,
                target,
                scale,
            },
        )
    }

    /// `-scale * Σ [t ln p + (1 - t) ln(1 - p)]` with `p` clamped to
    /// `[PROB_CLAMP, 1 - PROB_CLAMP]`.
    pub fn bce_prob(&mut self, probs: Var, targets: Mat, scale: f64) -> Var {
        let pv = &self.values[probs.0];
        assert_eq!(pv.dim(), targets.dim(), "probability/target shape mismatch");
        let s: f64 = Zip::from(pv).and(&targets).fold(0.0, |acc, &p, &t| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            acc - (t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        });
        self.push(
            Mat::from_elem((1, 1), s * scale),
            Op::BceProb {
                probs,
                targets,
                scale,
            },
        )
    }

    /// Row-wise softmax cross-entropy against soft target rows, scaled.
    pub fn soft_cross_entropy(&mut self, logits: Var, targets: Mat, scale: f64) -> Var {
        let lv = &self.values[logits.0];
        assert_eq!(lv.dim(), targets.dim(), "logit/target shape mismatch");
        let mut probs = lv.clone();
        let mut loss = 0.0;
        for (i, mut row) in probs.outer_iter_mut().enumerate() {
            let m = row.fold(f64::NEG_INFINITY, |a, &x| a.max(x));
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            for (j, x) in row.iter_mut().enumerate() {
                let logp = *x - lse;
                loss -= targets[[i, j]] * logp;
                *x = logp.exp();
            }
        }
        self.push(
            Mat::from_elem((1, 1), loss * scale),
            Op::SoftCrossEntropy {
                logits,
                targets,
                probs,
                scale,
            },
        )
    }

    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let xv = &self.values[x.0];
        let mut out = xv.clone();
        let mut norms = Vec::with_capacity(xv.nrows());
        for mut row in out.outer_iter_mut() {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            row /= n;
            norms.push(n);
        }
        self.push(out, Op::L2NormalizeRows { x, norms })
    }

    /// Reverse sweep from a `1 x 1` output. Only leaf gradients are retained.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.values[loss.0].dim(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.values.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::from_elem((1, 1), 1.0));
        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            let out = &self.values[i];
            match &self.ops[i] {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.values[b.0].t());
                    let gb = self.values[a.0].t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulBt(a, b) => {
                    let ga = g.dot(&self.values[b.0]);
                    let gb = g.t().dot(&self.values[a.0]);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, -&g);
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * &self.values[b.0];
                    let gb = &g * &self.values[a.0];
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *row, gr);
                    accumulate(&mut grads, *a, g);
                }
                Op::MulRow(a, row) => {
                    let gr = (&g * &self.values[a.0]).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let ga = &g * &self.values[row.0];
                    accumulate(&mut grads, *row, gr);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Scale(a, f) => {
                    accumulate(&mut grads, *a, g * *f);
                }
                Op::Silu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(&self.values[a.0]).for_each(|gv, &x| {
                        let sg = sigmoid(x);
                        *gv *= sg * (1.0 + x * (1.0 - sg));
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(out).for_each(|gv, &y| *gv *= y * (1.0 - y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(out).for_each(|gv, &y| *gv *= 1.0 - y * y);
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gbias = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let ggain = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let gxhat = &g * &self.values[gain.0];
                    let c = xhat.ncols() as f64;
                    let mut gx = Mat::zeros(xhat.dim());
                    for (r, (gr, xr)) in gxhat.outer_iter().zip(xhat.outer_iter()).enumerate() {
                        let mean_g = gr.sum() / c;
                        let mean_gx = gr.iter().zip(xr.iter()).map(|(a, b)| a * b).sum::<f64>() / c;
                        for j in 0..xhat.ncols() {
                            gx[[r, j]] = inv_std[r] * (gr[j] - mean_g - xr[j] * mean_gx);
                        }
                    }
                    accumulate(&mut grads, *gain, ggain);
                    accumulate(&mut grads, *bias, gbias);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    batch,
                    heads,
                    probs,
                } => {
                    let qv = &self.values[q.0];
                    let kv = &self.values[k.0];
                    let vv = &self.values[v.0];
                    let (qn, d) = qv.dim();
                    let kn = kv.nrows();
                    let tq = qn / batch;
                    let tk = kn / batch;
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut gq = Mat::zeros((qn, d));
                    let mut gk = Mat::zeros((kn, d));
                    let mut gv = Mat::zeros((kn, d));
                    for b in 0..*batch {
                        for h in 0..*heads {
                            let p = &probs[b * heads + h];
                            let qr = s![b * tq..(b + 1) * tq, h * dh..(h + 1) * dh];
                            let kr = s![b * tk..(b + 1) * tk, h * dh..(h + 1) * dh];
                            let go = g.slice(qr);
                            let vs = vv.slice(kr);
                            let ks = kv.slice(kr);
                            let qs = qv.slice(qr);
                            gv.slice_mut(kr).assign(&p.t().dot(&go));
                            let gp = go.dot(&vs.t());
                            let mut gs = &gp * p;
                            let rows = gs.sum_axis(Axis(1));
                            for (mut srow, (prow, r)) in
                                gs.outer_iter_mut().zip(p.outer_iter().zip(rows.iter()))
                            {
                                srow.scaled_add(-*r, &prow);
                            }
                            gs *= scale;
                            gq.slice_mut(qr).assign(&gs.dot(&ks));
                            gk.slice_mut(kr).assign(&gs.t().dot(&qs));
                        }
                    }
                    accumulate(&mut grads, *q, gq);
                    accumulate(&mut grads, *k, gk);
                    accumulate(&mut grads, *v, gv);
                }
                Op::Gather { x, idx } => {
                    let mut gx = Mat::zeros(self.values[x.0].dim());
                    for (r, &src) in idx.iter().enumerate() {
                        let mut row = gx.row_mut(src);
                        row += &g.row(r);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Reshape(x) => {
                    let shape = self.values[x.0].dim();
                    let flat: Vec<f64> = g.iter().copied().collect();
                    let gx = Mat::from_shape_vec(shape, flat).expect("same element count");
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.values[p.0].ncols();
                        accumulate(&mut grads, *p, g.slice(s![.., off..off + w]).to_owned());
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let h = self.values[p.0].nrows();
                        accumulate(&mut grads, *p, g.slice(s![off..off + h, ..]).to_owned());
                        off += h;
                    }
                }
                Op::SegmentMean { x, seg } => {
                    let (n, c) = self.values[x.0].dim();
                    let mut gx = Mat::zeros((n, c));
                    let inv = 1.0 / *seg as f64;
                    for r in 0..n {
                        let mut row = gx.row_mut(r);
                        row.scaled_add(inv, &g.row(r / seg));
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SegmentMax { x, argmax } => {
                    let (n, c) = self.values[x.0].dim();
                    let mut gx = Mat::zeros((n, c));
                    for (gi, grow) in g.outer_iter().enumerate() {
                        for j in 0..c {
                            gx[[argmax[gi * c + j], j]] += grow[j];
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Transpose(x) => {
                    accumulate(&mut grads, *x, g.t().to_owned());
                }
                Op::SumAll(x) => {
                    let gx = Mat::from_elem(self.values[x.0].dim(), g[[0, 0]]);
                    accumulate(&mut grads, *x, gx);
                }
                Op::SqErrSum {
                    pred,
                    target,
                    scale,
                } => {
                    let f = 2.0 * scale * g[[0, 0]];
                    let gx = (&self.values[pred.0] - target) * f;
                    accumulate(&mut grads, *pred, gx);
                }
                Op::BceProb {
                    probs,
                    targets,
                    scale,
                } => {
                    let f = scale * g[[0, 0]];
                    let mut gx = Mat::zeros(targets.dim());
                    Zip::from(&mut gx)
                        .and(&self.values[probs.0])
                        .and(targets)
                        .for_each(|gv, &p, &t| {
                            *gv = if p < PROB_CLAMP || p > 1.0 - PROB_CLAMP {
                                0.0
                            } else {
                                f * (-t / p + (1.0 - t) / (1.0 - p))
                            };
                        });
                    accumulate(&mut grads, *probs, gx);
                }
                Op::SoftCrossEntropy {
                    logits,
                    targets,
                    probs,
                    scale,
                } => {
                    let f = scale * g[[0, 0]];
                    let mut gx = probs.clone();
                    for (mut row, trow) in gx.outer_iter_mut().zip(targets.outer_iter()) {
                        let tsum = trow.sum();
                        row *= tsum;
                        row -= &trow;
                    }
                    gx *= f;
                    accumulate(&mut grads, *logits, gx);
                }
                Op::L2NormalizeRows { x, norms } => {
                    let mut gx = g.clone();
                    for (r, (mut grow, yrow)) in gx.outer_iter_mut().zip(out.outer_iter()).enumerate() {
                        let dot = grow.iter().zip(yrow.iter()).map(|(a, b)| a * b).sum::<f64>();
                        grow.scaled_add(-dot, &yrow);
                        grow /= norms[r];
                    }
                    accumulate(&mut grads, *x, gx);
                }
            }
        }
        Gradients { grads }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    /// Central-difference check of d f / d inputs for an arbitrary graph
    /// builder.
    fn check<F>(inputs: Vec<Mat>, build: F)
    where
        F: Fn(&mut Tape, &[Var]) -> Var,
    {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
        let out = build(&mut tape, &vars);
        let grads = tape.backward(out);
        let h = 1e-6;
        for (i, input) in inputs.iter().enumerate() {
            let analytic = grads.get(vars[i]).cloned().unwrap_or_else(|| Mat::zeros(input.dim()));
            for idx in 0..input.len() {
                let (r, c) = (idx / input.ncols(), idx % input.ncols());
                let eval = |delta: f64| {
                    let mut t = Tape::new();
                    let vs: Vec<Var> = inputs
                        .iter()
                        .enumerate()
                        .map(|(j, m)| {
                            let mut m = m.clone();
                            if j == i {
                                m[[r, c]] += delta;
                            }
                            t.leaf(m)
                        })
                        .collect();
                    let o = build(&mut t, &vs);
                    t.scalar(o)
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let a = analytic[[r, c]];
                let denom = a.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    (a - numeric).abs() / denom < 1e-5,
                    "input {i} elem ({r},{c}): analytic {a} numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn matmul_and_elementwise_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_mat(&mut rng, 3, 4);
        let b = rand_mat(&mut rng, 4, 2);
        let c = rand_mat(&mut rng, 3, 2);
        let row = rand_mat(&mut rng, 1, 2);
        check(vec![a, b, c, row], |t, v| {
            let ab = t.matmul(v[0], v[1]);
            let x = t.mul(ab, v[2]);
            let x = t.add_row(x, v[3]);
            let x = t.silu(x);
            let y = t.tanh(x);
            let z = t.mul_row(y, v[3]);
            let z = t.sub(z, v[2]);
            let z = t.sigmoid(z);
            t.sq_err_sum(z, Mat::from_elem((3, 2), 0.3), 0.7)
        });
    }

    #[test]
    fn layer_norm_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_mat(&mut rng, 4, 5);
        let g = rand_mat(&mut rng, 1, 5);
        let b = rand_mat(&mut rng, 1, 5);
        let w = rand_mat(&mut rng, 4, 5);
        check(vec![x, g, b, w], |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2], 1e-5);
            let y = t.mul(y, v[3]);
            t.sum_all(y)
        });
    }

    #[test]
    fn attention_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = rand_mat(&mut rng, 6, 4);
        let k = rand_mat(&mut rng, 4, 4);
        let v = rand_mat(&mut rng, 4, 4);
        let w = rand_mat(&mut rng, 6, 4);
        check(vec![q, k, v, w], |t, x| {
            let y = t.attention(x[0], x[1], x[2], 2, 2);
            let y = t.mul(y, x[3]);
            t.sum_all(y)
        });
    }

    #[test]
    fn structural_op_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_mat(&mut rng, 6, 3);
        let y = rand_mat(&mut rng, 6, 2);
        let w = rand_mat(&mut rng, 2, 5);
        check(vec![x, y, w], |t, v| {
            let c = t.concat_cols(&[v[0], v[1]]);
            let g = t.gather_rows(c, vec![0, 2, 2, 5, 1, 3]);
            let r = t.reshape(g, 3, 10);
            let r = t.transpose(r);
            let r = t.reshape(r, 6, 5);
            let m = t.segment_mean(r, 3);
            let mx = t.segment_max(r, 2);
            let mx = t.matmul_bt(mx, m);
            let mx = t.l2_normalize_rows(mx);
            let s1 = t.sum_all(mx);
            let wv = t.matmul(v[1], v[2]);
            let s2 = t.sum_all(wv);
            let s2 = t.scale(s2, 0.1);
            t.add(s1, s2)
        });
    }

    #[test]
    fn loss_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let logits = rand_mat(&mut rng, 3, 4);
        let targets = Mat::from_shape_vec(
            (3, 4),
            vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        let bce_t = Mat::from_shape_fn((3, 4), |(i, j)| ((i + j) % 2) as f64);
        check(vec![logits], move |t, v| {
            let a = t.soft_cross_entropy(v[0], targets.clone(), 0.5);
            let p = t.sigmoid(v[0]);
            let b = t.bce_prob(p, bce_t.clone(), 1.0);
            t.add(a, b)
        });
    }

    #[test]
    fn concat_rows_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = rand_mat(&mut rng, 2, 3);
        let b = rand_mat(&mut rng, 3, 3);
        check(vec![a, b], |t, v| {
            let c = t.concat_rows(&[v[0], v[1], v[0]]);
            let c = t.tanh(c);
            t.sq_err_sum(c, Mat::from_elem((7, 3), 0.1), 1.0)
        });
    }

    #[test]
    fn bce_matches_closed_form() {
        let mut t = Tape::new();
        let p = t.leaf(Mat::from_elem((1, 8), 0.5));
        let l = t.bce_prob(p, Mat::from_elem((1, 8), 1.0), 1.0);
        assert!((t.scalar(l) - 8.0 * 2f64.ln()).abs() < 1e-12);
    }
}
