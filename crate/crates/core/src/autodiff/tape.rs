//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every op evaluates eagerly, checks its output for NaN/Inf, and (unless
//! the tape is in inference mode) records a closure mapping the output
//! gradient to gradient contributions for its inputs. Because inputs are
//! always recorded before outputs, the node list is already in topological
//! order and [`Tape::backward`] is a single reverse sweep.

use std::rc::Rc;

use super::param::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::graph::CsrAdjacency;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Maps the gradient of an op's output to `(input node, contribution)` pairs.
pub type BackwardFn = Box<dyn Fn(&Tensor) -> Vec<(usize, Tensor)>>;

struct Node {
    op: &'static str,
    value: Tensor,
    backward: Option<BackwardFn>,
    param: Option<ParamId>,
}

pub struct Tape {
    nodes: Vec<Node>,
    record: bool,
    fault: Option<(String, f64)>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of every node reached by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            record: true,
            fault: None,
        }
    }

    /// A tape that evaluates but records no backward closures.
    pub fn inference() -> Self {
        Self {
            record: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Scales every gradient contribution emitted by ops named `op`.
    /// Negative control for the gradient checker only.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, op: impl Into<String>, factor: f64) {
        self.fault = Some((op.into(), factor));
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Records an op result. `backward` is only invoked when recording.
    pub fn record(
        &mut self,
        op: &'static str,
        value: Tensor,
        backward: impl FnOnce() -> BackwardFn,
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op });
        }
        let backward = self.record.then(backward);
        self.nodes.push(Node {
            op,
            value,
            backward,
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Input or constant with no parents.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            op: "leaf",
            value,
            backward: None,
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Leaf bound to a parameter; its gradient is accumulated into the
    /// store by [`Tape::backward`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        let v = self.leaf(store.value(id).clone())?;
        self.nodes[v.0].param = Some(id);
        Ok(v)
    }

    /// Reverse sweep from a scalar `loss`. Parameter gradients are added
    /// (`+=`) into `store`, so several losses can be combined.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.gradients(loss)?;
        for (node, g) in self.nodes.iter().zip(&grads.grads) {
            if let (Some(id), Some(g)) = (node.param, g) {
                let p = store.get_mut(id);
                check_same_shape("backward", &p.grad, g)?;
                p.grad.add_assign(g);
            }
        }
        Ok(grads)
    }

    /// Reverse sweep without touching any parameter store.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        if !self.record {
            return Err(Error::validation("backward on an inference tape"));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::shape(
                "backward",
                format!("loss must be 1x1, got {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Some(bw) = &node.backward {
                for (parent, mut contrib) in bw(&g) {
                    debug_assert!(parent < i);
                    if let Some((op, factor)) = &self.fault {
                        if op == node.op {
                            contrib.data_mut().iter_mut().for_each(|v| *v *= factor);
                        }
                    }
                    match &mut grads[parent] {
                        Some(acc) => acc.add_assign(&contrib),
                        slot @ None => *slot = Some(contrib),
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    // ---- dense ops ---------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a).clone(), self.value(b).clone());
        let out = av.matmul(&bv)?;
        self.record("matmul", out, move || {
            Box::new(move |g| {
                vec![
                    (a.0, g.matmul(&bv.transpose()).expect("shapes checked")),
                    (b.0, av.transpose().matmul(g).expect("shapes checked")),
                ]
            })
        })
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        self.record("transpose", out, move || Box::new(move |g| vec![(a.0, g.transpose())]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same_shape("add", self.value(a), self.value(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.record("add", out, move || Box::new(move |g| vec![(a.0, g.clone()), (b.0, g.clone())]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same_shape("sub", self.value(a), self.value(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.record("sub", out, move || {
            Box::new(move |g| vec![(a.0, g.clone()), (b.0, g.map(|v| -v))])
        })
    }

    /// `a + row` with the `1×k` row broadcast over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (n, k) = self.shape(a);
        if self.shape(row) != (1, k) {
            return Err(Error::shape("add_row", format!("{:?} + {:?}", (n, k), self.shape(row))));
        }
        let r = self.value(row).data().to_vec();
        let mut out = self.value(a).clone();
        for i in 0..n {
            out.row_mut(i).iter_mut().zip(&r).for_each(|(o, b)| *o += b);
        }
        self.record("add_row", out, move || {
            Box::new(move |g| {
                let mut gr = Tensor::zeros(1, k);
                for i in 0..n {
                    gr.row_mut(0).iter_mut().zip(g.row(i)).for_each(|(o, v)| *o += v);
                }
                vec![(a.0, g.clone()), (row.0, gr)]
            })
        })
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same_shape("mul", self.value(a), self.value(b))?;
        let (av, bv) = (self.value(a).clone(), self.value(b).clone());
        let out = av.zip_map(&bv, |x, y| x * y);
        self.record("mul", out, move || {
            Box::new(move |g| vec![(a.0, g.zip_map(&bv, |x, y| x * y)), (b.0, g.zip_map(&av, |x, y| x * y))])
        })
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * c);
        self.record("scale", out, move || Box::new(move |g| vec![(a.0, g.map(|v| v * c))]))
    }

    /// Multiplication by a `1×1` tape value.
    pub fn scale_by(&mut self, s: Var, a: Var) -> Result<Var> {
        if !self.value(s).is_scalar() {
            return Err(Error::shape("scale_by", format!("scale has shape {:?}", self.shape(s))));
        }
        let sv = self.value(s).get(0, 0);
        let av = self.value(a).clone();
        let out = av.map(|x| x * sv);
        self.record("scale_by", out, move || {
            Box::new(move |g| {
                let gs: f64 = g.data().iter().zip(av.data()).map(|(x, y)| x * y).sum();
                vec![(s.0, Tensor::scalar(gs)), (a.0, g.map(|v| v * sv))]
            })
        })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat_cols", "no inputs"));
        };
        let n = self.shape(first).0;
        let widths: Vec<usize> = parts.iter().map(|&p| self.shape(p).1).collect();
        if let Some(&p) = parts.iter().find(|&&p| self.shape(p).0 != n) {
            return Err(Error::shape("concat_cols", format!("row counts {n} vs {}", self.shape(p).0)));
        }
        let total: usize = widths.iter().sum();
        let mut out = Tensor::zeros(n, total);
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let v = self.value(p);
            for i in 0..n {
                out.row_mut(i)[off..off + w].copy_from_slice(v.row(i));
            }
            off += w;
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.record("concat_cols", out, move || {
            Box::new(move |g| {
                let mut off = 0;
                ids.iter()
                    .zip(&widths)
                    .map(|(&id, &w)| {
                        let mut part = Tensor::zeros(n, w);
                        for i in 0..n {
                            part.row_mut(i).copy_from_slice(&g.row(i)[off..off + w]);
                        }
                        off += w;
                        (id, part)
                    })
                    .collect()
            })
        })
    }

    /// Output row `r` is input row `indices[r]` (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let (n, k) = self.shape(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::shape("gather_rows", format!("index {bad} out of {n} rows")));
        }
        let out = self.value(a).gather_rows(indices);
        let idx = indices.to_vec();
        self.record("gather_rows", out, move || {
            Box::new(move |g| {
                let mut ga = Tensor::zeros(n, k);
                for (r, &i) in idx.iter().enumerate() {
                    ga.row_mut(i).iter_mut().zip(g.row(r)).for_each(|(o, v)| *o += v);
                }
                vec![(a.0, ga)]
            })
        })
    }

    /// Copy of `base` with row `indices[r]` overwritten by row `r` of `src`.
    /// Indices must be distinct.
    pub fn scatter_rows(&mut self, base: Var, indices: &[usize], src: Var) -> Result<Var> {
        let (n, k) = self.shape(base);
        if self.shape(src) != (indices.len(), k) {
            return Err(Error::shape(
                "scatter_rows",
                format!("src {:?} for {} indices into {:?}", self.shape(src), indices.len(), (n, k)),
            ));
        }
        let mut seen = vec![false; n];
        for &i in indices {
            if i >= n {
                return Err(Error::validation(format!("scatter index {i} out of {n} rows")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::validation(format!("scatter index {i} repeated")));
            }
        }
        let mut out = self.value(base).clone();
        let sv = self.value(src);
        for (r, &i) in indices.iter().enumerate() {
            out.row_mut(i).copy_from_slice(sv.row(r));
        }
        let idx = indices.to_vec();
        self.record("scatter_rows", out, move || {
            Box::new(move |g| {
                let mut gb = g.clone();
                for &i in &idx {
                    gb.row_mut(i).iter_mut().for_each(|v| *v = 0.0);
                }
                vec![(base.0, gb), (src.0, g.gather_rows(&idx))]
            })
        })
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let (n, k) = self.shape(a);
        let s: f64 = self.value(a).data().iter().sum();
        self.record("sum", Tensor::scalar(s), move || {
            Box::new(move |g| vec![(a.0, Tensor::filled(n, k, g.get(0, 0)))])
        })
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let (n, k) = self.shape(a);
        if n * k == 0 {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let c = 1.0 / (n * k) as f64;
        let s: f64 = self.value(a).data().iter().sum::<f64>() * c;
        self.record("mean", Tensor::scalar(s), move || {
            Box::new(move |g| vec![(a.0, Tensor::filled(n, k, g.get(0, 0) * c))])
        })
    }

    /// Column sums as a `1×k` row.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let (n, k) = self.shape(a);
        let v = self.value(a);
        let mut out = Tensor::zeros(1, k);
        for i in 0..n {
            out.row_mut(0).iter_mut().zip(v.row(i)).for_each(|(o, x)| *o += x);
        }
        self.record("sum_rows", out, move || {
            Box::new(move |g| {
                let mut ga = Tensor::zeros(n, k);
                for i in 0..n {
                    ga.row_mut(i).copy_from_slice(g.row(0));
                }
                vec![(a.0, ga)]
            })
        })
    }

    /// Column means as a `1×k` row.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let n = self.shape(a).0;
        if n == 0 {
            return Err(Error::shape("mean_rows", "no rows"));
        }
        let s = self.sum_rows(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// `x^gamma` elementwise. Negative bases need an integer exponent.
    pub fn power(&mut self, a: Var, gamma: f64) -> Result<Var> {
        let av = self.value(a).clone();
        if gamma.fract() != 0.0 {
            if let Some(x) = av.data().iter().find(|&&x| x < 0.0) {
                return Err(Error::domain("power", format!("base {x} with exponent {gamma}")));
            }
        }
        let out = av.map(|x| x.powf(gamma));
        self.record("power", out, move || {
            Box::new(move |g| vec![(a.0, g.zip_map(&av, |gv, x| gv * gamma * x.powf(gamma - 1.0)))])
        })
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let av = self.value(a).clone();
        let out = av.map(|x| if x > 0.0 { x } else { slope * x });
        self.record("leaky_relu", out, move || {
            Box::new(move |g| vec![(a.0, g.zip_map(&av, |gv, x| if x > 0.0 { gv } else { slope * gv }))])
        })
    }

    /// PReLU with a learned per-column slope given as a `1×k` row.
    pub fn prelu(&mut self, a: Var, slope: Var) -> Result<Var> {
        let (n, k) = self.shape(a);
        if self.shape(slope) != (1, k) {
            return Err(Error::shape("prelu", format!("slope {:?} for width {k}", self.shape(slope))));
        }
        let av = self.value(a).clone();
        let sv = self.value(slope).data().to_vec();
        let mut out = av.clone();
        for i in 0..n {
            for (x, s) in out.row_mut(i).iter_mut().zip(&sv) {
                if *x <= 0.0 {
                    *x *= s;
                }
            }
        }
        self.record("prelu", out, move || {
            Box::new(move |g| {
                let mut ga = g.clone();
                let mut gs = Tensor::zeros(1, k);
                for i in 0..n {
                    for c in 0..k {
                        let x = av.get(i, c);
                        if x <= 0.0 {
                            ga.set(i, c, g.get(i, c) * sv[c]);
                            gs.data_mut()[c] += g.get(i, c) * x;
                        }
                    }
                }
                vec![(a.0, ga), (slope.0, gs)]
            })
        })
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::exp);
        let ov = out.clone();
        self.record("exp", out, move || Box::new(move |g| vec![(a.0, g.zip_map(&ov, |gv, y| gv * y))]))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a).clone();
        if let Some(x) = av.data().iter().find(|&&x| x <= 0.0) {
            return Err(Error::domain("log", format!("argument {x}")));
        }
        let out = av.map(f64::ln);
        self.record("log", out, move || Box::new(move |g| vec![(a.0, g.zip_map(&av, |gv, x| gv / x))]))
    }

    /// Row norms `max(‖x_i‖, eps)` as an `n×1` column.
    pub fn l2_norm_rows(&mut self, a: Var, eps: f64) -> Result<Var> {
        let (n, k) = self.shape(a);
        let av = self.value(a).clone();
        let norms: Vec<f64> = (0..n)
            .map(|i| av.row(i).iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        let out = Tensor::from_vec(n, 1, norms.iter().map(|&r| r.max(eps)).collect())?;
        self.record("l2_norm_rows", out, move || {
            Box::new(move |g| {
                let mut ga = Tensor::zeros(n, k);
                for i in 0..n {
                    if norms[i] > eps {
                        let s = g.get(i, 0) / norms[i];
                        ga.row_mut(i).iter_mut().zip(av.row(i)).for_each(|(o, x)| *o = s * x);
                    }
                }
                vec![(a.0, ga)]
            })
        })
    }

    // ---- graph ops ---------------------------------------------------------

    /// Sparse-dense product `adj · h` using the stored edge values.
    pub fn spmm(&mut self, adj: &CsrAdjacency, h: Var) -> Result<Var> {
        let n = self.shape(h).0;
        if adj.n() != n {
            return Err(Error::shape("spmm", format!("adjacency over {} nodes, h has {n} rows", adj.n())));
        }
        let out = spmm_raw(adj, adj.values(), self.value(h));
        let adj = Rc::new(adj.clone());
        self.record("spmm", out, move || {
            Box::new(move |g| {
                let t = adj.transpose();
                vec![(h.0, spmm_raw(&t, t.values(), g))]
            })
        })
    }

    /// Sparse-dense product over `adj`'s structure with per-arc weights
    /// taken from the `nnz×1` tape value `weights`; differentiable in both.
    pub fn edge_spmm(&mut self, adj: &CsrAdjacency, weights: Var, h: Var) -> Result<Var> {
        let (n, k) = self.shape(h);
        if adj.n() != n {
            return Err(Error::shape("edge_spmm", format!("adjacency over {} nodes, h has {n} rows", adj.n())));
        }
        if self.shape(weights) != (adj.nnz(), 1) {
            return Err(Error::shape(
                "edge_spmm",
                format!("weights {:?} for {} arcs", self.shape(weights), adj.nnz()),
            ));
        }
        let wv = self.value(weights).clone();
        let hv = self.value(h).clone();
        let out = spmm_raw(adj, wv.data(), &hv);
        let adj = Rc::new(adj.clone());
        self.record("edge_spmm", out, move || {
            Box::new(move |g| {
                let mut gw = Tensor::zeros(adj.nnz(), 1);
                let mut gh = Tensor::zeros(n, k);
                for (e, (i, j, _)) in adj.arcs().enumerate() {
                    let gi = g.row(i);
                    let dot: f64 = gi.iter().zip(hv.row(j)).map(|(x, y)| x * y).sum();
                    gw.data_mut()[e] = dot;
                    let w = wv.data()[e];
                    gh.row_mut(j).iter_mut().zip(gi).for_each(|(o, x)| *o += w * x);
                }
                vec![(weights.0, gw), (h.0, gh)]
            })
        })
    }

    /// Softmax of an `nnz×1` logit column within each CSR row segment.
    pub fn segment_softmax(&mut self, logits: Var, row_offsets: &[usize]) -> Result<Var> {
        let m = row_offsets.last().copied().unwrap_or(0);
        if self.shape(logits) != (m, 1) {
            return Err(Error::shape(
                "segment_softmax",
                format!("logits {:?} for {m} arcs", self.shape(logits)),
            ));
        }
        let y = Tensor::from_vec(m, 1, segment_softmax_raw(self.value(logits).data(), row_offsets))?;
        let yv = y.clone();
        let offsets = row_offsets.to_vec();
        self.record("segment_softmax", y, move || {
            Box::new(move |g| {
                let mut gx = Tensor::zeros(m, 1);
                for w in offsets.windows(2) {
                    let (lo, hi) = (w[0], w[1]);
                    let ys = &yv.data()[lo..hi];
                    let gs = &g.data()[lo..hi];
                    let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                    for e in lo..hi {
                        gx.data_mut()[e] = yv.data()[e] * (g.data()[e] - dot);
                    }
                }
                vec![(logits.0, gx)]
            })
        })
    }
}

/// `out[i] = Σ_e values[e] · h[col_e]` over row `i`'s arcs, in storage order.
pub fn spmm_raw(adj: &CsrAdjacency, values: &[f64], h: &Tensor) -> Tensor {
    let k = h.cols();
    let mut out = Tensor::zeros(adj.n(), k);
    let offsets = adj.row_offsets();
    let cols = adj.col_indices();
    for i in 0..adj.n() {
        let row = out.row_mut(i);
        for e in offsets[i]..offsets[i + 1] {
            let w = values[e];
            row.iter_mut().zip(h.row(cols[e])).for_each(|(o, x)| *o += w * x);
        }
    }
    out
}

/// Max-subtracted softmax within each segment `[offsets[s], offsets[s+1])`.
pub fn segment_softmax_raw(logits: &[f64], offsets: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    for w in offsets.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if lo == hi {
            continue;
        }
        let seg = &logits[lo..hi];
        let max = seg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (o, &x) in out[lo..hi].iter_mut().zip(seg) {
            *o = (x - max).exp();
            total += *o;
        }
        out[lo..hi].iter_mut().for_each(|o| *o /= total);
    }
    out
}
