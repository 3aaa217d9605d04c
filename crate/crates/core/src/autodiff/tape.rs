use std::ops::Range;

use super::tensor::{Scalar, Tensor};
use super::AutodiffError;

/// Batch-norm epsilon.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the previous running statistic in the exponential average.
pub const BN_MOMENTUM: f64 = 0.9;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Per-channel statistics of one training-mode batch-norm application.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

impl<S: Scalar> BatchStats<S> {
    /// `running ← m·running + (1 − m)·batch`.
    pub fn update_running(&self, running_mean: &mut [S], running_var: &mut [S]) {
        let m = S::of(BN_MOMENTUM);
        let k = S::ONE - m;
        for (r, &b) in running_mean.iter_mut().zip(&self.mean) {
            *r = m * *r + k * b;
        }
        for (r, &b) in running_var.iter_mut().zip(&self.var) {
            *r = m * *r + k * b;
        }
    }
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Relu {
        x: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<S>,
        inv_std: Vec<S>,
        train: bool,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Gather {
        x: Var,
        idx: Vec<usize>,
    },
    Concat {
        parts: Vec<Var>,
    },
    Reshape {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        s: S,
    },
    WeightedSum {
        x: Var,
        coef: Vec<S>,
    },
    Mae {
        pred: Var,
        sign: Vec<S>,
    },
    CosDist {
        pred: Var,
        grad: Vec<S>,
    },
    #[cfg(test)]
    Corrupt {
        x: Var,
    },
}

#[derive(Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Record of executed primitives, replayed in reverse by [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

/// Gradients of one scalar with respect to every recorded value.
#[derive(Debug)]
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<S>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn shape_err(msg: String) -> AutodiffError {
    AutodiffError::ShapeMismatch(msg)
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    fn push(
        &mut self,
        value: Tensor<S>,
        op: Op<S>,
        needs_grad: bool,
        name: &'static str,
    ) -> Result<Var, AutodiffError> {
        if !value.all_finite() {
            return Err(AutodiffError::NonFinite(name));
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Differentiable input (a parameter or a checked input).
    pub fn leaf(&mut self, value: Tensor<S>) -> Result<Var, AutodiffError> {
        self.push(value, Op::Leaf, true, "leaf")
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Result<Var, AutodiffError> {
        self.push(value, Op::Leaf, false, "constant")
    }

    /// `y = x·w + b` over the last axis of `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if wv.shape().len() != 2
            || bv.shape() != [wv.shape()[1]]
            || xv.cols() != wv.shape()[0]
            || xv.shape().is_empty()
        {
            return Err(shape_err(format!(
                "linear: x {:?}, w {:?}, b {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )));
        }
        let (a, o) = (wv.shape()[0], wv.shape()[1]);
        let rows = xv.rows();
        let mut y = Vec::with_capacity(rows * o);
        let (xd, wd, bd) = (xv.data(), wv.data(), bv.data());
        for r in 0..rows {
            let xr = &xd[r * a..(r + 1) * a];
            let start = y.len();
            y.extend_from_slice(bd);
            let yr = &mut y[start..];
            for (k, &xk) in xr.iter().enumerate() {
                let wk = &wd[k * o..(k + 1) * o];
                for (yj, &wj) in yr.iter_mut().zip(wk) {
                    *yj += xk * wj;
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = o;
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(
            Tensor::new(shape, y)?,
            Op::Linear { x, w, b },
            needs,
            "linear",
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        let data = xv
            .data()
            .iter()
            .map(|&v| if v > S::ZERO { v } else { S::ZERO })
            .collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        let needs = self.needs(x);
        self.push(t, Op::Relu { x }, needs, "relu")
    }

    /// Per-channel normalization of `x: [N, C]`.
    ///
    /// Training mode uses the batch mean and biased variance and returns them
    /// for the caller to fold into the running averages; inference mode uses
    /// `running`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: (&[S], &[S]),
        mode: Mode,
    ) -> Result<(Var, Option<BatchStats<S>>), AutodiffError> {
        let xv = self.value(x);
        let c = xv.cols();
        let n = xv.rows();
        if xv.shape().len() != 2
            || self.value(gamma).shape() != [c]
            || self.value(beta).shape() != [c]
            || running.0.len() != c
            || running.1.len() != c
        {
            return Err(shape_err(format!(
                "batch_norm: x {:?}, channels {c}",
                xv.shape()
            )));
        }
        let eps = S::of(BN_EPS);
        let xd = xv.data();
        let (mean, var, stats) = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(AutodiffError::DegenerateBatch(n));
                }
                let inv_n = S::ONE / S::of(n as f64);
                let mut mean = vec![S::ZERO; c];
                for row in xd.chunks_exact(c) {
                    for (m, &v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                for m in &mut mean {
                    *m *= inv_n;
                }
                let mut var = vec![S::ZERO; c];
                for row in xd.chunks_exact(c) {
                    for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                        let d = v - m;
                        *s += d * d;
                    }
                }
                for s in &mut var {
                    *s *= inv_n;
                }
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: var.clone(),
                };
                (mean, var, Some(stats))
            }
            Mode::Infer => (running.0.to_vec(), running.1.to_vec(), None),
        };
        let inv_std: Vec<S> = var.iter().map(|&v| S::ONE / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = Vec::with_capacity(xd.len());
        let mut y = Vec::with_capacity(xd.len());
        for row in xd.chunks_exact(c) {
            for j in 0..c {
                let h = (row[j] - mean[j]) * inv_std[j];
                xhat.push(h);
                y.push(g[j] * h + b[j]);
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), y)?;
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let v = self.push(
            t,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train: mode == Mode::Train,
            },
            needs,
            "batch_norm",
        )?;
        Ok((v, stats))
    }

    /// Max over the first `valid[r]` entries of each row of `x: [N, K, C]`,
    /// giving `[N, C]`. Ties keep the first entry.
    pub fn max_pool_set(&mut self, x: Var, valid: &[usize]) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        let &[n, k, c] = xv.shape() else {
            return Err(shape_err(format!(
                "max_pool_set expects [N,K,C], got {:?}",
                xv.shape()
            )));
        };
        if valid.len() != n || valid.iter().any(|&v| v == 0 || v > k) {
            return Err(shape_err(format!(
                "max_pool_set: valid counts must be {n} values in 1..={k}"
            )));
        }
        let xd = xv.data();
        let mut out = Vec::with_capacity(n * c);
        let mut argmax = Vec::with_capacity(n * c);
        for (r, &kv) in valid.iter().enumerate() {
            let base = r * k * c;
            for j in 0..c {
                let mut best = base + j;
                for e in 1..kv {
                    let idx = base + e * c + j;
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
        let needs = self.needs(x);
        self.push(
            Tensor::new(vec![n, c], out)?,
            Op::MaxPool { x, argmax },
            needs,
            "max_pool_set",
        )
    }

    /// Rows of `x: [M, C]` picked by `idx`, giving `[idx.len(), C]`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        let c = xv.cols();
        let m = xv.rows();
        if xv.shape().len() != 2 {
            return Err(shape_err(format!(
                "gather_rows expects [M,C], got {:?}",
                xv.shape()
            )));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(shape_err(format!(
                "gather_rows: index {bad} out of {m} rows"
            )));
        }
        let xd = xv.data();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&xd[i * c..(i + 1) * c]);
        }
        let needs = self.needs(x);
        self.push(
            Tensor::new(vec![idx.len(), c], out)?,
            Op::Gather {
                x,
                idx: idx.to_vec(),
            },
            needs,
            "gather_rows",
        )
    }

    /// Column-wise concatenation of `[N, C_i]` tensors.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let Some(&first) = parts.first() else {
            return Err(shape_err("concat_cols of nothing".into()));
        };
        let n = self.value(first).rows();
        for &p in parts {
            let v = self.value(p);
            if v.shape().len() != 2 || v.rows() != n {
                return Err(shape_err(format!(
                    "concat_cols: part {:?} vs {n} rows",
                    v.shape()
                )));
            }
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(
            Tensor::new(vec![n, total], out)?,
            Op::Concat {
                parts: parts.to_vec(),
            },
            needs,
            "concat_cols",
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let t = self.value(x).clone().reshaped(shape)?;
        let needs = self.needs(x);
        self.push(t, Op::Reshape { x }, needs, "reshape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(format!(
                "add: {:?} vs {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        self.push(t, Op::Add { a, b }, needs, "add")
    }

    pub fn scale(&mut self, x: Var, s: S) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v * s).collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        let needs = self.needs(x);
        self.push(t, Op::Scale { x, s }, needs, "scale")
    }

    /// Scalar `Σ coef_i · x_i`.
    pub fn weighted_sum(&mut self, x: Var, coef: &[S]) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        if xv.len() != coef.len() {
            return Err(shape_err(format!(
                "weighted_sum: {} values, {} weights",
                xv.len(),
                coef.len()
            )));
        }
        let s = xv.data().iter().zip(coef).map(|(&a, &b)| a * b).sum();
        let needs = self.needs(x);
        self.push(
            Tensor::scalar(s),
            Op::WeightedSum {
                x,
                coef: coef.to_vec(),
            },
            needs,
            "weighted_sum",
        )
    }

    /// Mean absolute error over all entries of `pred` against `target`.
    /// The subgradient at an exact match is 0.
    pub fn mae(&mut self, pred: Var, target: &[S]) -> Result<Var, AutodiffError> {
        let pv = self.value(pred);
        if pv.len() != target.len() || target.is_empty() {
            return Err(shape_err(format!(
                "mae: {} predictions, {} targets",
                pv.len(),
                target.len()
            )));
        }
        let inv = S::ONE / S::of(target.len() as f64);
        let mut loss = S::ZERO;
        let mut sign = Vec::with_capacity(target.len());
        for (&p, &t) in pv.data().iter().zip(target) {
            loss += (p - t).abs();
            sign.push((p - t).signum_or_zero() * inv);
        }
        let needs = self.needs(pred);
        self.push(
            Tensor::scalar(loss * inv),
            Op::Mae { pred, sign },
            needs,
            "mae",
        )
    }

    /// Mean over rows of `1 − cos(target_row, pred_row)` restricted to `cols`.
    /// Rows where either vector has zero norm contribute 0.
    pub fn cos_dist(
        &mut self,
        pred: Var,
        target: &[S],
        cols: Range<usize>,
    ) -> Result<Var, AutodiffError> {
        let pv = self.value(pred);
        let w = pv.cols();
        if pv.len() != target.len() || cols.end > w || cols.is_empty() || pv.shape().len() != 2 {
            return Err(shape_err(format!(
                "cos_dist: pred {:?}, {} targets",
                pv.shape(),
                target.len()
            )));
        }
        let rows = pv.rows();
        let inv_rows = S::ONE / S::of(rows as f64);
        let pd = pv.data();
        let mut total = S::ZERO;
        let mut grad = vec![S::ZERO; pd.len()];
        for r in 0..rows {
            let p = &pd[r * w + cols.start..r * w + cols.end];
            let t = &target[r * w + cols.start..r * w + cols.end];
            let dot: S = p.iter().zip(t).map(|(&a, &b)| a * b).sum();
            let pp: S = p.iter().map(|&a| a * a).sum();
            let tt: S = t.iter().map(|&a| a * a).sum();
            if !(pp > S::ZERO && tt > S::ZERO) {
                continue;
            }
            let (np, nt) = (pp.sqrt(), tt.sqrt());
            total += S::ONE - dot / (np * nt);
            let g = &mut grad[r * w + cols.start..r * w + cols.end];
            for ((gj, &tj), &pj) in g.iter_mut().zip(t).zip(p) {
                *gj = -(tj / (np * nt) - dot * pj / (np * np * np * nt)) * inv_rows;
            }
        }
        let needs = self.needs(pred);
        self.push(
            Tensor::scalar(total * inv_rows),
            Op::CosDist { pred, grad },
            needs,
            "cos_dist",
        )
    }

    /// Identity forward whose backward is deliberately wrong by 10%.
    #[cfg(test)]
    pub(crate) fn corrupt(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let t = self.value(x).clone();
        let needs = self.needs(x);
        self.push(t, Op::Corrupt { x }, needs, "corrupt")
    }

    /// Reverse sweep from the scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients<S>, AutodiffError> {
        if self.value(root).len() != 1 {
            return Err(shape_err(format!(
                "backward root must be scalar, got {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::filled(self.value(root).shape(), S::ONE));
        for i in (0..=root.0).rev() {
            let Some(gy) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.propagate(node, &gy, &mut grads);
            }
            grads[i] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<S>>], v: Var, g: Tensor<S>) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn accumulate_with(&self, grads: &mut [Option<Tensor<S>>], v: Var, f: impl FnOnce(&mut [S])) {
        if !self.needs(v) {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.value(v).shape()));
        }
        f(slot.as_mut().unwrap().data_mut());
    }

    fn propagate(&self, node: &Node<S>, gy: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        let g = gy.data();
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (a, o) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.rows();
                let (xd, wd) = (xv.data(), wv.data());
                self.accumulate_with(grads, *x, |dx| {
                    for r in 0..rows {
                        let gr = &g[r * o..(r + 1) * o];
                        for k in 0..a {
                            let wk = &wd[k * o..(k + 1) * o];
                            let s: S = gr.iter().zip(wk).map(|(&p, &q)| p * q).sum();
                            dx[r * a + k] += s;
                        }
                    }
                });
                self.accumulate_with(grads, *w, |dw| {
                    for r in 0..rows {
                        let gr = &g[r * o..(r + 1) * o];
                        for k in 0..a {
                            let xk = xd[r * a + k];
                            let row = &mut dw[k * o..(k + 1) * o];
                            for (d, &gj) in row.iter_mut().zip(gr) {
                                *d += xk * gj;
                            }
                        }
                    }
                });
                self.accumulate_with(grads, *b, |db| {
                    for gr in g.chunks_exact(o) {
                        for (d, &gj) in db.iter_mut().zip(gr) {
                            *d += gj;
                        }
                    }
                });
            }
            Op::Relu { x } => {
                let xd = self.value(*x).data();
                let dx = xd
                    .iter()
                    .zip(g)
                    .map(|(&v, &gi)| if v > S::ZERO { gi } else { S::ZERO })
                    .collect();
                self.accumulate(
                    grads,
                    *x,
                    Tensor::new(self.value(*x).shape().to_vec(), dx).unwrap(),
                );
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let c = inv_std.len();
                let n = xhat.len() / c;
                let gam = self.value(*gamma).data();
                let mut sum_g = vec![S::ZERO; c];
                let mut sum_gx = vec![S::ZERO; c];
                for (gr, hr) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                    for j in 0..c {
                        sum_g[j] += gr[j];
                        sum_gx[j] += gr[j] * hr[j];
                    }
                }
                self.accumulate_with(grads, *beta, |d| {
                    for j in 0..c {
                        d[j] += sum_g[j];
                    }
                });
                self.accumulate_with(grads, *gamma, |d| {
                    for j in 0..c {
                        d[j] += sum_gx[j];
                    }
                });
                self.accumulate_with(grads, *x, |dx| {
                    if *train {
                        let inv_n = S::ONE / S::of(n as f64);
                        for (r, (gr, hr)) in g.chunks_exact(c).zip(xhat.chunks_exact(c)).enumerate()
                        {
                            for j in 0..c {
                                let dh = gam[j] * gr[j];
                                let mean_dh = gam[j] * sum_g[j] * inv_n;
                                let mean_dhh = gam[j] * sum_gx[j] * inv_n;
                                dx[r * c + j] += inv_std[j] * (dh - mean_dh - hr[j] * mean_dhh);
                            }
                        }
                    } else {
                        for (r, gr) in g.chunks_exact(c).enumerate() {
                            for j in 0..c {
                                dx[r * c + j] += gam[j] * inv_std[j] * gr[j];
                            }
                        }
                    }
                });
            }
            Op::MaxPool { x, argmax } => {
                self.accumulate_with(grads, *x, |dx| {
                    for (&src, &gi) in argmax.iter().zip(g) {
                        dx[src] += gi;
                    }
                });
            }
            Op::Gather { x, idx } => {
                let c = self.value(*x).cols();
                self.accumulate_with(grads, *x, |dx| {
                    for (r, &i) in idx.iter().enumerate() {
                        for j in 0..c {
                            dx[i * c + j] += g[r * c + j];
                        }
                    }
                });
            }
            Op::Concat { parts } => {
                let total = gy.cols();
                let n = gy.rows();
                let mut col = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    self.accumulate_with(grads, p, |dp| {
                        for r in 0..n {
                            for j in 0..w {
                                dp[r * w + j] += g[r * total + col + j];
                            }
                        }
                    });
                    col += w;
                }
            }
            Op::Reshape { x } => {
                let t = Tensor::new(self.value(*x).shape().to_vec(), g.to_vec()).unwrap();
                self.accumulate(grads, *x, t);
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, gy.clone());
                self.accumulate(grads, *b, gy.clone());
            }
            Op::Scale { x, s } => {
                let t =
                    Tensor::new(gy.shape().to_vec(), g.iter().map(|&v| v * *s).collect()).unwrap();
                self.accumulate(grads, *x, t);
            }
            Op::WeightedSum { x, coef } => {
                let gs = g[0];
                self.accumulate_with(grads, *x, |dx| {
                    for (d, &c) in dx.iter_mut().zip(coef) {
                        *d += gs * c;
                    }
                });
            }
            Op::Mae { pred, sign: coef } | Op::CosDist { pred, grad: coef } => {
                let gs = g[0];
                self.accumulate_with(grads, *pred, |dx| {
                    for (d, &c) in dx.iter_mut().zip(coef) {
                        *d += gs * c;
                    }
                });
            }
            #[cfg(test)]
            Op::Corrupt { x } => {
                let t = Tensor::new(
                    gy.shape().to_vec(),
                    g.iter().map(|&v| v * S::of(1.1)).collect(),
                )
                .unwrap();
                self.accumulate(grads, *x, t);
            }
        }
    }
}
