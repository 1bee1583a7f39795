//! A small reverse-mode autodiff tape over row-major f64 matrices.
//!
//! One graph is built per optimization step. Batches of variable-length
//! sequences are stored as concatenated rows with `(start, len)` spans, so
//! no pad positions ever enter the math. Parameter leaves are memoized per
//! `(store, id)` pair, which is what makes the Siamese towers share
//! weights: encoding two batches in one graph reuses the same leaves and
//! their gradients accumulate.

use std::collections::HashMap;

use super::params::ParamStore;

/// Which parameter store a leaf belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StoreTag {
    Encoder,
    Decoder,
    Head,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Id(usize);

/// Byte span of one sequence inside a concatenated batch: (first row, rows).
pub type Span = (usize, usize);

const LN_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    Param { tag: StoreTag, pid: usize },
    MatMul { a: Id, b: Id },
    AddBias { x: Id, b: Id },
    Add { a: Id, b: Id },
    Scale { x: Id, c: f64 },
    Gelu { x: Id },
    LayerNorm { x: Id, gamma: Id, beta: Id },
    Embed { table: Id, ids: Vec<usize> },
    Attention { q: Id, k: Id, v: Id, spans: Vec<Span>, heads: usize, causal: bool, probs: Vec<f64> },
    MeanPoolSpans { x: Id, spans: Vec<Span> },
    BroadcastSpans { v: Id, spans: Vec<Span> },
    CosineRows { a: Id, b: Id },
    MseMean { x: Id, target: Vec<f64> },
    CeMean { logits: Id, targets: Vec<usize>, probs: Vec<f64> },
}

struct Node {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: HashMap<(StoreTag, usize), Id>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<f64>, op: Op) -> Id {
        debug_assert_eq!(data.len(), rows * cols);
        self.nodes.push(Node { rows, cols, data, op });
        Id(self.nodes.len() - 1)
    }

    pub fn rows(&self, id: Id) -> usize {
        self.nodes[id.0].rows
    }

    pub fn cols(&self, id: Id) -> usize {
        self.nodes[id.0].cols
    }

    pub fn value(&self, id: Id) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn scalar(&self, id: Id) -> f64 {
        debug_assert_eq!(self.nodes[id.0].data.len(), 1);
        self.nodes[id.0].data[0]
    }

    /// Gradient of the last backward pass w.r.t. this node, if it was reached.
    pub fn grad(&self, id: Id) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    // ── node constructors ──────────────────────────────────────────────

    pub fn leaf(&mut self, data: Vec<f64>, rows: usize, cols: usize) -> Id {
        self.push(rows, cols, data, Op::Leaf)
    }

    /// Parameter leaf; memoized so repeated references share gradients.
    pub fn param(&mut self, tag: StoreTag, store: &ParamStore, pid: usize) -> Id {
        if let Some(&id) = self.param_nodes.get(&(tag, pid)) {
            return id;
        }
        let p = store.get(pid);
        let id = self.push(p.rows, p.cols, p.data.clone(), Op::Param { tag, pid });
        self.param_nodes.insert((tag, pid), id);
        id
    }

    pub fn matmul(&mut self, a: Id, b: Id) -> Id {
        let (m, ka) = (self.rows(a), self.cols(a));
        let (kb, n) = (self.rows(b), self.cols(b));
        assert_eq!(ka, kb, "matmul inner dimension mismatch");
        let mut out = vec![0.0; m * n];
        matmul_nn(self.value(a), self.value(b), m, ka, n, &mut out);
        self.push(m, n, out, Op::MatMul { a, b })
    }

    /// Row-broadcast bias add: x [n, m] + b [1, m].
    pub fn add_bias(&mut self, x: Id, b: Id) -> Id {
        let (n, m) = (self.rows(x), self.cols(x));
        assert_eq!(self.rows(b), 1);
        assert_eq!(self.cols(b), m);
        let bv = self.value(b).to_vec();
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(m) {
            for (o, &bb) in row.iter_mut().zip(&bv) {
                *o += bb;
            }
        }
        self.push(n, m, out, Op::AddBias { x, b })
    }

    pub fn add(&mut self, a: Id, b: Id) -> Id {
        assert_eq!(self.rows(a), self.rows(b));
        assert_eq!(self.cols(a), self.cols(b));
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        self.push(self.rows(a), self.cols(a), out, Op::Add { a, b })
    }

    pub fn scale(&mut self, x: Id, c: f64) -> Id {
        let out: Vec<f64> = self.value(x).iter().map(|v| v * c).collect();
        self.push(self.rows(x), self.cols(x), out, Op::Scale { x, c })
    }

    /// Smooth GELU (tanh form), the nonlinearity everywhere in the stack.
    pub fn gelu(&mut self, x: Id) -> Id {
        let out: Vec<f64> = self.value(x).iter().map(|&v| gelu_fwd(v)).collect();
        self.push(self.rows(x), self.cols(x), out, Op::Gelu { x })
    }

    /// Per-row layer norm with learned gain/shift.
    pub fn layer_norm(&mut self, x: Id, gamma: Id, beta: Id) -> Id {
        let (n, m) = (self.rows(x), self.cols(x));
        assert_eq!(self.cols(gamma), m);
        assert_eq!(self.cols(beta), m);
        let g = self.value(gamma).to_vec();
        let b = self.value(beta).to_vec();
        let mut out = vec![0.0; n * m];
        for (row_in, row_out) in self.value(x).chunks(m).zip(out.chunks_mut(m)) {
            let mu = row_in.iter().sum::<f64>() / m as f64;
            let var = row_in.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for j in 0..m {
                row_out[j] = (row_in[j] - mu) * inv * g[j] + b[j];
            }
        }
        self.push(n, m, out, Op::LayerNorm { x, gamma, beta })
    }

    /// Gather rows of an embedding table.
    pub fn embed(&mut self, table: Id, ids: &[usize]) -> Id {
        let h = self.cols(table);
        let v = self.rows(table);
        let mut out = Vec::with_capacity(ids.len() * h);
        for &i in ids {
            assert!(i < v, "token id {i} outside table of {v}");
            out.extend_from_slice(&self.value(table)[i * h..(i + 1) * h]);
        }
        self.push(ids.len(), h, out, Op::Embed { table, ids: ids.to_vec() })
    }

    /// Multi-head scaled dot-product attention within each span.
    pub fn attention(&mut self, q: Id, k: Id, v: Id, spans: &[Span], heads: usize, causal: bool) -> Id {
        let (n, h) = (self.rows(q), self.cols(q));
        assert_eq!(self.rows(k), n);
        assert_eq!(self.rows(v), n);
        assert_eq!(h % heads, 0, "hidden dim must divide heads");
        let dh = h / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let probs_len: usize = spans.iter().map(|&(_, l)| l * l * heads).sum();
        let mut probs = vec![0.0; probs_len];
        let mut out = vec![0.0; n * h];
        let qd = self.value(q);
        let kd = self.value(k);
        let vd = self.value(v);

        let mut poff = 0;
        for &(start, len) in spans {
            for head in 0..heads {
                let hoff = head * dh;
                for i in 0..len {
                    let qi = &qd[(start + i) * h + hoff..(start + i) * h + hoff + dh];
                    let jmax = if causal { i + 1 } else { len };
                    // scores -> softmax in place
                    let mut row_max = f64::NEG_INFINITY;
                    for j in 0..jmax {
                        let kj = &kd[(start + j) * h + hoff..(start + j) * h + hoff + dh];
                        let s = dot(qi, kj) * scale;
                        probs[poff + i * len + j] = s;
                        row_max = row_max.max(s);
                    }
                    let mut z = 0.0;
                    for j in 0..jmax {
                        let e = (probs[poff + i * len + j] - row_max).exp();
                        probs[poff + i * len + j] = e;
                        z += e;
                    }
                    for j in 0..jmax {
                        probs[poff + i * len + j] /= z;
                        let p = probs[poff + i * len + j];
                        let vj = &vd[(start + j) * h + hoff..(start + j) * h + hoff + dh];
                        let oi = &mut out[(start + i) * h + hoff..(start + i) * h + hoff + dh];
                        for (o, &vv) in oi.iter_mut().zip(vj) {
                            *o += p * vv;
                        }
                    }
                }
                poff += len * len;
            }
        }
        self.push(n, h, out, Op::Attention { q, k, v, spans: spans.to_vec(), heads, causal, probs })
    }

    /// Mean over each span's rows: [N, H] -> [B, H].
    pub fn mean_pool_spans(&mut self, x: Id, spans: &[Span]) -> Id {
        let h = self.cols(x);
        let mut out = vec![0.0; spans.len() * h];
        for (b, &(start, len)) in spans.iter().enumerate() {
            assert!(len > 0, "empty span in mean pool");
            for i in 0..len {
                let row = &self.value(x)[(start + i) * h..(start + i + 1) * h];
                for (o, &v) in out[b * h..(b + 1) * h].iter_mut().zip(row) {
                    *o += v;
                }
            }
            for o in &mut out[b * h..(b + 1) * h] {
                *o /= len as f64;
            }
        }
        self.push(spans.len(), h, out, Op::MeanPoolSpans { x, spans: spans.to_vec() })
    }

    /// Repeat one row per span: [B, H] -> [N, H]. Inverse shape of mean pool.
    pub fn broadcast_spans(&mut self, v: Id, spans: &[Span]) -> Id {
        let h = self.cols(v);
        assert_eq!(self.rows(v), spans.len());
        let n: usize = spans.iter().map(|&(_, l)| l).sum();
        let mut out = vec![0.0; n * h];
        for (b, &(start, len)) in spans.iter().enumerate() {
            let src = &self.value(v)[b * h..(b + 1) * h];
            for i in 0..len {
                out[(start + i) * h..(start + i + 1) * h].copy_from_slice(src);
            }
        }
        self.push(n, h, out, Op::BroadcastSpans { v, spans: spans.to_vec() })
    }

    /// Row-wise cosine similarity of two [B, H] matrices -> [B, 1].
    pub fn cosine_rows(&mut self, a: Id, b: Id) -> Id {
        let (n, h) = (self.rows(a), self.cols(a));
        assert_eq!(self.rows(b), n);
        assert_eq!(self.cols(b), h);
        let mut out = vec![0.0; n];
        for i in 0..n {
            let u = &self.value(a)[i * h..(i + 1) * h];
            let v = &self.value(b)[i * h..(i + 1) * h];
            let nu = dot(u, u).sqrt().max(1e-30);
            let nv = dot(v, v).sqrt().max(1e-30);
            out[i] = dot(u, v) / (nu * nv);
        }
        self.push(n, 1, out, Op::CosineRows { a, b })
    }

    /// Mean squared error against a constant target, over all elements.
    pub fn mse_mean(&mut self, x: Id, target: Vec<f64>) -> Id {
        let n = self.value(x).len();
        assert_eq!(target.len(), n);
        let val = self
            .value(x)
            .iter()
            .zip(&target)
            .map(|(a, t)| (a - t) * (a - t))
            .sum::<f64>()
            / n as f64;
        self.push(1, 1, vec![val], Op::MseMean { x, target })
    }

    /// Mean softmax cross-entropy of logit rows against target ids.
    pub fn ce_mean(&mut self, logits: Id, targets: Vec<usize>) -> Id {
        let (n, v) = (self.rows(logits), self.cols(logits));
        assert_eq!(targets.len(), n);
        let mut probs = vec![0.0; n * v];
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            assert!(t < v, "target {t} outside vocab {v}");
            let row = &self.value(logits)[i * v..(i + 1) * v];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..v {
                let e = (row[j] - max).exp();
                probs[i * v + j] = e;
                z += e;
            }
            for j in 0..v {
                probs[i * v + j] /= z;
            }
            // a plain max() would swallow NaN and hide divergence
            let p = probs[i * v + t];
            let p = if p < 1e-300 { 1e-300 } else { p };
            total -= p.ln();
        }
        let val = total / n as f64;
        self.push(1, 1, vec![val], Op::CeMean { logits, targets, probs })
    }

    // ── backward ───────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss node. Gradients for every reached
    /// node are kept and can be read back with [`Graph::grad`].
    pub fn backward(&mut self, loss: Id) {
        assert_eq!(self.nodes[loss.0].data.len(), 1, "backward needs a scalar");
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(gout) = self.grads[idx].take() else { continue };
            self.backprop_node(idx, &gout);
            self.grads[idx] = Some(gout);
        }
    }

    fn accumulate(&mut self, id: Id, delta: &[f64]) {
        let slot = &mut self.grads[id.0];
        match slot {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(delta) {
                    *a += b;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    fn backprop_node(&mut self, idx: usize, gout: &[f64]) {
        // Ops are cheap to destructure; data stays in place.
        match &self.nodes[idx].op {
            Op::Leaf | Op::Param { .. } => {}
            &Op::MatMul { a, b } => {
                let (m, k) = (self.rows(a), self.cols(a));
                let n = self.cols(b);
                let mut da = vec![0.0; m * k];
                let mut db = vec![0.0; k * n];
                matmul_nt(gout, self.value(b), m, n, k, &mut da);
                matmul_tn(self.value(a), gout, m, k, n, &mut db);
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            &Op::AddBias { x, b } => {
                let m = self.cols(x);
                let mut db = vec![0.0; m];
                for row in gout.chunks(m) {
                    for (d, &g) in db.iter_mut().zip(row) {
                        *d += g;
                    }
                }
                self.accumulate(x, gout);
                self.accumulate(b, &db);
            }
            &Op::Add { a, b } => {
                self.accumulate(a, gout);
                self.accumulate(b, gout);
            }
            &Op::Scale { x, c } => {
                let dx: Vec<f64> = gout.iter().map(|g| g * c).collect();
                self.accumulate(x, &dx);
            }
            &Op::Gelu { x } => {
                let dx: Vec<f64> = self.value(x).iter().zip(gout).map(|(&v, &g)| g * gelu_bwd(v)).collect();
                self.accumulate(x, &dx);
            }
            &Op::LayerNorm { x, gamma, beta } => {
                let (n, m) = (self.rows(x), self.cols(x));
                let g = self.value(gamma).to_vec();
                let xd = self.value(x).to_vec();
                let mut dx = vec![0.0; n * m];
                let mut dg = vec![0.0; m];
                let mut db = vec![0.0; m];
                for r in 0..n {
                    let row = &xd[r * m..(r + 1) * m];
                    let grow = &gout[r * m..(r + 1) * m];
                    let mu = row.iter().sum::<f64>() / m as f64;
                    let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m as f64;
                    let inv = 1.0 / (var + LN_EPS).sqrt();
                    let xh: Vec<f64> = row.iter().map(|v| (v - mu) * inv).collect();
                    let dxh: Vec<f64> = grow.iter().zip(&g).map(|(gg, gam)| gg * gam).collect();
                    let mean_dxh = dxh.iter().sum::<f64>() / m as f64;
                    let mean_dxh_xh = dxh.iter().zip(&xh).map(|(a, b)| a * b).sum::<f64>() / m as f64;
                    for j in 0..m {
                        dg[j] += grow[j] * xh[j];
                        db[j] += grow[j];
                        dx[r * m + j] = inv * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh);
                    }
                }
                self.accumulate(x, &dx);
                self.accumulate(gamma, &dg);
                self.accumulate(beta, &db);
            }
            Op::Embed { table, ids } => {
                let table = *table;
                let ids = ids.clone();
                let (v, h) = (self.rows(table), self.cols(table));
                let mut dt = vec![0.0; v * h];
                for (r, &i) in ids.iter().enumerate() {
                    for j in 0..h {
                        dt[i * h + j] += gout[r * h + j];
                    }
                }
                self.accumulate(table, &dt);
            }
            Op::Attention { q, k, v, spans, heads, causal, probs } => {
                let (q, k, v) = (*q, *k, *v);
                let (heads, causal) = (*heads, *causal);
                let spans = spans.clone();
                let probs = probs.clone();
                let h = self.cols(q);
                let dh = h / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let n = self.rows(q);
                let qd = self.value(q).to_vec();
                let kd = self.value(k).to_vec();
                let vd = self.value(v).to_vec();
                let mut dq = vec![0.0; n * h];
                let mut dk = vec![0.0; n * h];
                let mut dv = vec![0.0; n * h];

                let mut poff = 0;
                for &(start, len) in &spans {
                    for head in 0..heads {
                        let hoff = head * dh;
                        for i in 0..len {
                            let jmax = if causal { i + 1 } else { len };
                            let gout_i = &gout[(start + i) * h + hoff..(start + i) * h + hoff + dh];
                            // dP and softmax backward
                            let mut dp = vec![0.0; jmax];
                            let mut dot_pp = 0.0;
                            for j in 0..jmax {
                                let vj = &vd[(start + j) * h + hoff..(start + j) * h + hoff + dh];
                                dp[j] = dot(gout_i, vj);
                                dot_pp += probs[poff + i * len + j] * dp[j];
                            }
                            for j in 0..jmax {
                                let p = probs[poff + i * len + j];
                                let ds = p * (dp[j] - dot_pp) * scale;
                                let kj = &kd[(start + j) * h + hoff..(start + j) * h + hoff + dh];
                                let qi = &qd[(start + i) * h + hoff..(start + i) * h + hoff + dh];
                                for d in 0..dh {
                                    dq[(start + i) * h + hoff + d] += ds * kj[d];
                                    dk[(start + j) * h + hoff + d] += ds * qi[d];
                                    dv[(start + j) * h + hoff + d] += p * gout_i[d];
                                }
                            }
                        }
                        poff += len * len;
                    }
                }
                self.accumulate(q, &dq);
                self.accumulate(k, &dk);
                self.accumulate(v, &dv);
            }
            Op::MeanPoolSpans { x, spans } => {
                let x = *x;
                let spans = spans.clone();
                let h = self.cols(x);
                let mut dx = vec![0.0; self.rows(x) * h];
                for (b, &(start, len)) in spans.iter().enumerate() {
                    let share = 1.0 / len as f64;
                    for i in 0..len {
                        for j in 0..h {
                            dx[(start + i) * h + j] += gout[b * h + j] * share;
                        }
                    }
                }
                self.accumulate(x, &dx);
            }
            Op::BroadcastSpans { v, spans } => {
                let v = *v;
                let spans = spans.clone();
                let h = self.cols(v);
                let mut dvv = vec![0.0; spans.len() * h];
                for (b, &(start, len)) in spans.iter().enumerate() {
                    for i in 0..len {
                        for j in 0..h {
                            dvv[b * h + j] += gout[(start + i) * h + j];
                        }
                    }
                }
                self.accumulate(v, &dvv);
            }
            &Op::CosineRows { a, b } => {
                let (n, h) = (self.rows(a), self.cols(a));
                let ad = self.value(a).to_vec();
                let bd = self.value(b).to_vec();
                let mut da = vec![0.0; n * h];
                let mut db = vec![0.0; n * h];
                for i in 0..n {
                    let u = &ad[i * h..(i + 1) * h];
                    let w = &bd[i * h..(i + 1) * h];
                    let nu = dot(u, u).sqrt().max(1e-30);
                    let nw = dot(w, w).sqrt().max(1e-30);
                    let cos = dot(u, w) / (nu * nw);
                    let g = gout[i];
                    for j in 0..h {
                        da[i * h + j] = g * (w[j] / (nu * nw) - cos * u[j] / (nu * nu));
                        db[i * h + j] = g * (u[j] / (nu * nw) - cos * w[j] / (nw * nw));
                    }
                }
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::MseMean { x, target } => {
                let x = *x;
                let target = target.clone();
                let n = target.len() as f64;
                let g = gout[0];
                let dx: Vec<f64> = self
                    .value(x)
                    .iter()
                    .zip(&target)
                    .map(|(a, t)| g * 2.0 * (a - t) / n)
                    .collect();
                self.accumulate(x, &dx);
            }
            Op::CeMean { logits, targets, probs } => {
                let logits = *logits;
                let targets = targets.clone();
                let probs = probs.clone();
                let (n, v) = (self.rows(logits), self.cols(logits));
                let g = gout[0] / n as f64;
                let mut dl = probs;
                for (i, &t) in targets.iter().enumerate() {
                    dl[i * v + t] -= 1.0;
                }
                for d in &mut dl {
                    *d *= g;
                }
                self.accumulate(logits, &dl);
            }
        }
    }

    /// Visit accumulated parameter gradients in deterministic creation order.
    pub fn for_each_param_grad(&self, mut f: impl FnMut(StoreTag, usize, &[f64])) {
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Param { tag, pid } = node.op {
                if let Some(Some(g)) = self.grads.get(idx) {
                    f(tag, pid, g);
                }
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// out[m,n] += a[m,k] @ b[k,n]
fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// out[m,k] += a[m,n] @ b[k,n]^T
fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for kk in 0..k {
            out[i * k + kk] += dot(arow, &b[kk * n..(kk + 1) * n]);
        }
    }
}

/// out[k,n] += a[m,k]^T @ b[m,n]
fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            let orow = &mut out[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu_fwd(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_bwd(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}
