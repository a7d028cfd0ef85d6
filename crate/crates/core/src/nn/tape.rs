//! Reverse-mode automatic differentiation over a recorded operation tape.
//!
//! A [`Tape`] owns every intermediate value of one forward pass. Ops append
//! nodes and return [`Var`] handles; since inputs always precede outputs on
//! the tape, reverse iteration is a valid topological order for backprop.
//! All arithmetic is 64-bit.

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatVec { w: Var, x: Var },
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    LeakyRelu { x: Var, slope: f64 },
    Clamp { x: Var, lo: f64, hi: f64 },
    Softmax(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Flatten(Var),
    Sum(Var),
    MaxMany { xs: Vec<Var>, winners: Vec<u32> },
    Conv2d { kernel: Var, input: Var },
    AddChannelBias { x: Var, bias: Var },
    MaxPool2d { x: Var, winners: Vec<u32> },
    SumPool2d { x: Var, window: (usize, usize), stride: (usize, usize) },
    GridScatter { states: Vec<Var>, cells: Vec<(usize, usize)> },
}

struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar output w.r.t. every node of a tape.
pub struct Grads {
    g: Vec<Vec<f64>>,
}

impl Grads {
    pub fn of(&self, v: Var) -> &[f64] {
        &self.g[v.0]
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn values(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].values
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].values.len(), 1);
        self.nodes[v.0].values[0]
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.nodes.push(Node { shape, values, op });
        Var(self.nodes.len() - 1)
    }

    // ---- leaves ------------------------------------------------------

    pub fn leaf(&mut self, shape: &[usize], values: Vec<f64>) -> Var {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "leaf values do not match shape"
        );
        self.push(shape.to_vec(), values, Op::Leaf)
    }

    pub fn leaf_vector(&mut self, values: Vec<f64>) -> Var {
        let n = values.len();
        self.push(vec![n], values, Op::Leaf)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        let n = shape.iter().product();
        self.push(shape.to_vec(), vec![0.0; n], Op::Leaf)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.push(vec![1], vec![v], Op::Leaf)
    }

    // ---- elementwise binary ------------------------------------------

    fn check_same_shape(&self, context: &str, a: Var, b: Var) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::shape(
                context,
                &self.nodes[a.0].shape,
                &self.nodes[b.0].shape,
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("add", a, b)?;
        let values = zip_with(&self.nodes[a.0].values, &self.nodes[b.0].values, |x, y| {
            x + y
        });
        Ok(self.push(self.nodes[a.0].shape.clone(), values, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("sub", a, b)?;
        let values = zip_with(&self.nodes[a.0].values, &self.nodes[b.0].values, |x, y| {
            x - y
        });
        Ok(self.push(self.nodes[a.0].shape.clone(), values, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("mul", a, b)?;
        let values = zip_with(&self.nodes[a.0].values, &self.nodes[b.0].values, |x, y| {
            x * y
        });
        Ok(self.push(self.nodes[a.0].shape.clone(), values, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("div", a, b)?;
        let values = zip_with(&self.nodes[a.0].values, &self.nodes[b.0].values, |x, y| {
            x / y
        });
        Ok(self.push(self.nodes[a.0].shape.clone(), values, Op::Div(a, b)))
    }

    // ---- elementwise unary -------------------------------------------

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let values = self.nodes[x.0].values.iter().map(|v| v * c).collect();
        self.push(self.nodes[x.0].shape.clone(), values, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let values = self.nodes[x.0].values.iter().map(|v| v + c).collect();
        self.push(self.nodes[x.0].shape.clone(), values, Op::AddScalar(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let values = self.nodes[x.0]
            .values
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        self.push(self.nodes[x.0].shape.clone(), values, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let values = self.nodes[x.0].values.iter().map(|v| v.tanh()).collect();
        self.push(self.nodes[x.0].shape.clone(), values, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let values = self.nodes[x.0].values.iter().map(|v| v.exp()).collect();
        self.push(self.nodes[x.0].shape.clone(), values, Op::Exp(x))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let values = self.nodes[x.0].values.iter().map(|v| v.ln()).collect();
        self.push(self.nodes[x.0].shape.clone(), values, Op::Ln(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let values = self.nodes[x.0]
            .values
            .iter()
            .map(|&v| if v >= 0.0 { v } else { slope * v })
            .collect();
        self.push(
            self.nodes[x.0].shape.clone(),
            values,
            Op::LeakyRelu { x, slope },
        )
    }

    /// Clamp values into [lo, hi]; the gradient is zero outside the band,
    /// matching the flat forward response there.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let values = self.nodes[x.0]
            .values
            .iter()
            .map(|v| v.clamp(lo, hi))
            .collect();
        self.push(self.nodes[x.0].shape.clone(), values, Op::Clamp { x, lo, hi })
    }

    /// Numerically stable softmax over a vector (max subtraction).
    pub fn softmax(&mut self, x: Var) -> Var {
        let xs = &self.nodes[x.0].values;
        let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = xs.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        let values = exps.iter().map(|e| e / z).collect();
        self.push(self.nodes[x.0].shape.clone(), values, Op::Softmax(x))
    }

    // ---- linear algebra ----------------------------------------------

    /// `w` is `[m, n]`, `x` is `[n]`; returns `w x` of shape `[m]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let ws = &self.nodes[w.0].shape;
        let xs = &self.nodes[x.0].shape;
        if ws.len() != 2 || xs.len() != 1 || ws[1] != xs[0] {
            return Err(Error::shape("matvec", ws, xs));
        }
        let (m, n) = (ws[0], ws[1]);
        let wv = &self.nodes[w.0].values;
        let xv = &self.nodes[x.0].values;
        let mut values = vec![0.0; m];
        for i in 0..m {
            let row = &wv[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += row[j] * xv[j];
            }
            values[i] = acc;
        }
        Ok(self.push(vec![m], values, Op::MatVec { w, x }))
    }

    /// Affine layer `w x + b`.
    pub fn affine(&mut self, w: Var, b: Var, x: Var) -> Result<Var> {
        let wx = self.matvec(w, x)?;
        self.add(wx, b)
    }

    // ---- structure ----------------------------------------------------

    /// Concatenate 1-D vectors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut values = Vec::new();
        for p in parts {
            let sh = &self.nodes[p.0].shape;
            if sh.len() != 1 {
                return Err(Error::shape("concat expects vectors", &[sh[0]], sh));
            }
            values.extend_from_slice(&self.nodes[p.0].values);
        }
        let n = values.len();
        Ok(self.push(vec![n], values, Op::Concat(parts.to_vec())))
    }

    /// Slice `len` elements of a 1-D vector starting at `start`.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let sh = &self.nodes[x.0].shape;
        if sh.len() != 1 || start + len > sh[0] {
            return Err(Error::shape("slice", &[start + len], sh));
        }
        let values = self.nodes[x.0].values[start..start + len].to_vec();
        Ok(self.push(vec![len], values, Op::Slice { x, start }))
    }

    /// View any tensor as a 1-D vector.
    pub fn flatten(&mut self, x: Var) -> Var {
        let n = self.nodes[x.0].values.len();
        let values = self.nodes[x.0].values.clone();
        self.push(vec![n], values, Op::Flatten(x))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.nodes[x.0].values.iter().sum();
        self.push(vec![1], vec![s], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.nodes[x.0].values.len();
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Elementwise maximum across same-shape vectors. Ties go to the
    /// earliest input, which keeps the gradient routing deterministic.
    pub fn max_many(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Usage("max_many over zero inputs".into()));
        }
        for x in &xs[1..] {
            self.check_same_shape("max_many", xs[0], *x)?;
        }
        let n = self.nodes[xs[0].0].values.len();
        let mut values = self.nodes[xs[0].0].values.clone();
        let mut winners = vec![0u32; n];
        for (k, x) in xs.iter().enumerate().skip(1) {
            for (i, v) in self.nodes[x.0].values.iter().enumerate() {
                if *v > values[i] {
                    values[i] = *v;
                    winners[i] = k as u32;
                }
            }
        }
        Ok(self.push(
            self.nodes[xs[0].0].shape.clone(),
            values,
            Op::MaxMany {
                xs: xs.to_vec(),
                winners,
            },
        ))
    }

    // ---- spatial ops ---------------------------------------------------

    /// Valid-mode stride-1 cross-correlation. `kernel` is
    /// `[c_out, c_in, kh, kw]`, `input` is `[c_in, h, w]`.
    pub fn conv2d(&mut self, kernel: Var, input: Var) -> Result<Var> {
        let ks = self.nodes[kernel.0].shape.clone();
        let is = self.nodes[input.0].shape.clone();
        if ks.len() != 4 || is.len() != 3 || ks[1] != is[0] {
            return Err(Error::shape("conv2d", &ks, &is));
        }
        let (co, ci, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        let (h, w) = (is[1], is[2]);
        if kh > h || kw > w {
            return Err(Error::shape("conv2d kernel larger than input", &ks, &is));
        }
        let (oh, ow) = (h - kh + 1, w - kw + 1);
        let kv = &self.nodes[kernel.0].values;
        let iv = &self.nodes[input.0].values;
        let mut values = vec![0.0; co * oh * ow];
        for c in 0..co {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for cc in 0..ci {
                        for p in 0..kh {
                            for q in 0..kw {
                                acc += kv[((c * ci + cc) * kh + p) * kw + q]
                                    * iv[(cc * h + i + p) * w + j + q];
                            }
                        }
                    }
                    values[(c * oh + i) * ow + j] = acc;
                }
            }
        }
        Ok(self.push(vec![co, oh, ow], values, Op::Conv2d { kernel, input }))
    }

    /// Add a per-channel bias `[c]` to a `[c, h, w]` tensor.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xs = self.nodes[x.0].shape.clone();
        let bs = self.nodes[bias.0].shape.clone();
        if xs.len() != 3 || bs.len() != 1 || bs[0] != xs[0] {
            return Err(Error::shape("add_channel_bias", &xs, &bs));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let bv = &self.nodes[bias.0].values;
        let mut values = self.nodes[x.0].values.clone();
        for cc in 0..c {
            for i in 0..h * w {
                values[cc * h * w + i] += bv[cc];
            }
        }
        Ok(self.push(xs, values, Op::AddChannelBias { x, bias }))
    }

    fn pool_out_shape(
        &self,
        context: &str,
        x: Var,
        window: (usize, usize),
        stride: (usize, usize),
    ) -> Result<(usize, usize, usize, usize, usize)> {
        let xs = &self.nodes[x.0].shape;
        if xs.len() != 3 {
            return Err(Error::shape(context, &[0, 0, 0], xs));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        if window.0 > h || window.1 > w || stride.0 == 0 || stride.1 == 0 {
            return Err(Error::shape(context, &[c, window.0, window.1], xs));
        }
        // Partial windows are dropped.
        let oh = (h - window.0) / stride.0 + 1;
        let ow = (w - window.1) / stride.1 + 1;
        Ok((c, h, w, oh, ow))
    }

    /// Per-window maximum over a `[c, h, w]` tensor; partial windows dropped.
    pub fn maxpool2d(&mut self, x: Var, window: (usize, usize), stride: (usize, usize)) -> Result<Var> {
        let (c, h, w, oh, ow) = self.pool_out_shape("maxpool2d", x, window, stride)?;
        let xv = &self.nodes[x.0].values;
        let mut values = vec![0.0; c * oh * ow];
        let mut winners = vec![0u32; c * oh * ow];
        for cc in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for p in 0..window.0 {
                        for q in 0..window.1 {
                            let idx = (cc * h + i * stride.0 + p) * w + j * stride.1 + q;
                            if xv[idx] > best {
                                best = xv[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    values[(cc * oh + i) * ow + j] = best;
                    winners[(cc * oh + i) * ow + j] = best_idx as u32;
                }
            }
        }
        Ok(self.push(
            vec![c, oh, ow],
            values,
            Op::MaxPool2d { x, winners },
        ))
    }

    /// Per-window sum over a `[c, h, w]` tensor; partial windows dropped.
    pub fn sumpool2d(&mut self, x: Var, window: (usize, usize), stride: (usize, usize)) -> Result<Var> {
        let (c, h, w, oh, ow) = self.pool_out_shape("sumpool2d", x, window, stride)?;
        let xv = &self.nodes[x.0].values;
        let mut values = vec![0.0; c * oh * ow];
        for cc in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for p in 0..window.0 {
                        for q in 0..window.1 {
                            acc += xv[(cc * h + i * stride.0 + p) * w + j * stride.1 + q];
                        }
                    }
                    values[(cc * oh + i) * ow + j] = acc;
                }
            }
        }
        Ok(self.push(
            vec![c, oh, ow],
            values,
            Op::SumPool2d { x, window, stride },
        ))
    }

    /// Scatter per-vehicle state vectors `[c]` into a `[c, rows, cols]` grid.
    /// Cells must be distinct and in range; unoccupied cells stay zero.
    pub fn grid_scatter(
        &mut self,
        states: &[Var],
        cells: &[(usize, usize)],
        rows: usize,
        cols: usize,
    ) -> Result<Var> {
        if states.len() != cells.len() {
            return Err(Error::Usage(format!(
                "grid_scatter: {} states for {} cells",
                states.len(),
                cells.len()
            )));
        }
        if states.is_empty() {
            return Err(Error::Usage("grid_scatter over zero states".into()));
        }
        let c = self.nodes[states[0].0].shape[0];
        for s in states {
            let sh = &self.nodes[s.0].shape;
            if sh.len() != 1 || sh[0] != c {
                return Err(Error::shape("grid_scatter state", &[c], sh));
            }
        }
        let mut seen = vec![false; rows * cols];
        for &(r, col) in cells {
            if r >= rows || col >= cols {
                return Err(Error::Usage(format!(
                    "grid_scatter: cell ({r}, {col}) outside {rows}x{cols} grid"
                )));
            }
            if seen[r * cols + col] {
                return Err(Error::Usage(format!(
                    "grid_scatter: duplicate cell ({r}, {col})"
                )));
            }
            seen[r * cols + col] = true;
        }
        let mut values = vec![0.0; c * rows * cols];
        for (s, &(r, col)) in states.iter().zip(cells) {
            for ch in 0..c {
                values[(ch * rows + r) * cols + col] = self.nodes[s.0].values[ch];
            }
        }
        Ok(self.push(
            vec![c, rows, cols],
            values,
            Op::GridScatter {
                states: states.to_vec(),
                cells: cells.to_vec(),
            },
        ))
    }

    // ---- backward -----------------------------------------------------

    /// Gradients of the scalar `loss` w.r.t. every node.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.nodes[loss.0].values.len() != 1 {
            return Err(Error::Usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut g: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.values.len()])
            .collect();
        g[loss.0][0] = 1.0;

        for id in (0..=loss.0).rev() {
            if g[id].iter().all(|v| *v == 0.0) {
                continue;
            }
            let out_g = g[id].clone();
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    axpy(&mut g[a.0], &out_g, 1.0);
                    axpy(&mut g[b.0], &out_g, 1.0);
                }
                Op::Sub(a, b) => {
                    axpy(&mut g[a.0], &out_g, 1.0);
                    axpy(&mut g[b.0], &out_g, -1.0);
                }
                Op::Mul(a, b) => {
                    for i in 0..out_g.len() {
                        g[a.0][i] += out_g[i] * self.nodes[b.0].values[i];
                    }
                    for i in 0..out_g.len() {
                        g[b.0][i] += out_g[i] * self.nodes[a.0].values[i];
                    }
                }
                Op::Div(a, b) => {
                    for i in 0..out_g.len() {
                        let bv = self.nodes[b.0].values[i];
                        g[a.0][i] += out_g[i] / bv;
                    }
                    for i in 0..out_g.len() {
                        let av = self.nodes[a.0].values[i];
                        let bv = self.nodes[b.0].values[i];
                        g[b.0][i] -= out_g[i] * av / (bv * bv);
                    }
                }
                Op::Scale(x, c) => axpy(&mut g[x.0], &out_g, *c),
                Op::AddScalar(x) => axpy(&mut g[x.0], &out_g, 1.0),
                Op::MatVec { w, x } => {
                    let n = self.nodes[x.0].values.len();
                    let xv = &self.nodes[x.0].values;
                    for (i, go) in out_g.iter().enumerate() {
                        let row = &mut g[w.0][i * n..(i + 1) * n];
                        for (dw, xj) in row.iter_mut().zip(xv) {
                            *dw += go * xj;
                        }
                    }
                    let wv = &self.nodes[w.0].values;
                    for (j, gx) in g[x.0].iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for (i, go) in out_g.iter().enumerate() {
                            acc += wv[i * n + j] * go;
                        }
                        *gx += acc;
                    }
                }
                Op::Sigmoid(x) => {
                    for i in 0..out_g.len() {
                        let y = self.nodes[id].values[i];
                        g[x.0][i] += out_g[i] * y * (1.0 - y);
                    }
                }
                Op::Tanh(x) => {
                    for i in 0..out_g.len() {
                        let y = self.nodes[id].values[i];
                        g[x.0][i] += out_g[i] * (1.0 - y * y);
                    }
                }
                Op::Exp(x) => {
                    for i in 0..out_g.len() {
                        g[x.0][i] += out_g[i] * self.nodes[id].values[i];
                    }
                }
                Op::Ln(x) => {
                    for i in 0..out_g.len() {
                        g[x.0][i] += out_g[i] / self.nodes[x.0].values[i];
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    for i in 0..out_g.len() {
                        let d = if self.nodes[x.0].values[i] >= 0.0 {
                            1.0
                        } else {
                            *slope
                        };
                        g[x.0][i] += out_g[i] * d;
                    }
                }
                Op::Clamp { x, lo, hi } => {
                    for i in 0..out_g.len() {
                        let v = self.nodes[x.0].values[i];
                        if v >= *lo && v <= *hi {
                            g[x.0][i] += out_g[i];
                        }
                    }
                }
                Op::Softmax(x) => {
                    let y = &self.nodes[id].values;
                    let dot: f64 = out_g.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
                    for i in 0..out_g.len() {
                        g[x.0][i] += y[i] * (out_g[i] - dot);
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.nodes[p.0].values.len();
                        for i in 0..n {
                            g[p.0][i] += out_g[off + i];
                        }
                        off += n;
                    }
                }
                Op::Slice { x, start } => {
                    for i in 0..out_g.len() {
                        g[x.0][start + i] += out_g[i];
                    }
                }
                Op::Flatten(x) => axpy(&mut g[x.0], &out_g, 1.0),
                Op::Sum(x) => {
                    let go = out_g[0];
                    for v in g[x.0].iter_mut() {
                        *v += go;
                    }
                }
                Op::MaxMany { xs, winners } => {
                    for (i, &w) in winners.iter().enumerate() {
                        g[xs[w as usize].0][i] += out_g[i];
                    }
                }
                Op::Conv2d { kernel, input } => {
                    let ks = self.nodes[kernel.0].shape.clone();
                    let is = self.nodes[input.0].shape.clone();
                    let (co, ci, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
                    let (h, w) = (is[1], is[2]);
                    let (oh, ow) = (h - kh + 1, w - kw + 1);
                    for c in 0..co {
                        for i in 0..oh {
                            for j in 0..ow {
                                let go = out_g[(c * oh + i) * ow + j];
                                if go == 0.0 {
                                    continue;
                                }
                                for cc in 0..ci {
                                    for p in 0..kh {
                                        for q in 0..kw {
                                            let kidx = ((c * ci + cc) * kh + p) * kw + q;
                                            let iidx = (cc * h + i + p) * w + j + q;
                                            g[kernel.0][kidx] +=
                                                go * self.nodes[input.0].values[iidx];
                                            g[input.0][iidx] +=
                                                go * self.nodes[kernel.0].values[kidx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Op::AddChannelBias { x, bias } => {
                    axpy(&mut g[x.0], &out_g, 1.0);
                    let sh = &self.nodes[x.0].shape;
                    let (c, hw) = (sh[0], sh[1] * sh[2]);
                    for cc in 0..c {
                        let mut acc = 0.0;
                        for i in 0..hw {
                            acc += out_g[cc * hw + i];
                        }
                        g[bias.0][cc] += acc;
                    }
                }
                Op::MaxPool2d { x, winners } => {
                    for (o, &iidx) in winners.iter().enumerate() {
                        g[x.0][iidx as usize] += out_g[o];
                    }
                }
                Op::SumPool2d { x, window, stride } => {
                    let sh = &self.nodes[x.0].shape;
                    let (c, h, w) = (sh[0], sh[1], sh[2]);
                    let oh = (h - window.0) / stride.0 + 1;
                    let ow = (w - window.1) / stride.1 + 1;
                    for cc in 0..c {
                        for i in 0..oh {
                            for j in 0..ow {
                                let go = out_g[(cc * oh + i) * ow + j];
                                if go == 0.0 {
                                    continue;
                                }
                                for p in 0..window.0 {
                                    for q in 0..window.1 {
                                        g[x.0][(cc * h + i * stride.0 + p) * w
                                            + j * stride.1
                                            + q] += go;
                                    }
                                }
                            }
                        }
                    }
                }
                Op::GridScatter { states, cells } => {
                    let sh = &self.nodes[id].shape;
                    let (rows, cols) = (sh[1], sh[2]);
                    let c = self.nodes[states[0].0].shape[0];
                    for (s, &(r, col)) in states.iter().zip(cells) {
                        for ch in 0..c {
                            g[s.0][ch] += out_g[(ch * rows + r) * cols + col];
                        }
                    }
                }
            }
        }
        Ok(Grads { g })
    }
}

fn zip_with(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
}

fn axpy(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let mut t = Tape::new();
        let x = t.leaf_vector(vec![0.0, 0.0, 0.0]);
        let y = t.softmax(x);
        for v in t.values(y) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_stable_under_large_logits() {
        let mut t = Tape::new();
        let x = t.leaf_vector(vec![1000.0, 0.0, 0.0]);
        let y = t.softmax(x);
        let v = t.values(y);
        assert!(v.iter().all(|p| p.is_finite()));
        assert!((v[0] - 1.0).abs() < 1e-12);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn softmax_shift_invariance() {
        let logits = vec![0.3, -1.2, 2.5, 0.0];
        let mut t = Tape::new();
        let a = t.leaf_vector(logits.clone());
        let b = t.leaf_vector(logits.iter().map(|v| v + 1000.0).collect());
        let ya = t.softmax(a);
        let yb = t.softmax(b);
        for (p, q) in t.values(ya).iter().zip(t.values(yb)) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut t = Tape::new();
        let x = t.leaf_vector(vec![0.1, 2.0, -3.0, 0.7, 1.1]);
        let y = t.softmax(x);
        assert!((t.values(y).iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn leaky_relu_values() {
        let mut t = Tape::new();
        let x = t.leaf_vector(vec![-2.0, 0.0, 3.0]);
        let y = t.leaky_relu(x, 0.1);
        assert_eq!(t.values(y), &[-0.2, 0.0, 3.0]);
    }

    #[test]
    fn conv2d_identity_kernel() {
        let mut t = Tape::new();
        let input: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let x = t.leaf(&[1, 3, 4], input.clone());
        let k = t.leaf(&[1, 1, 1, 1], vec![1.0]);
        let y = t.conv2d(k, x).unwrap();
        assert_eq!(t.values(y), input.as_slice());
        assert_eq!(t.shape(y), &[1, 3, 4]);
    }

    #[test]
    fn conv2d_kernel_too_large_errors() {
        let mut t = Tape::new();
        let x = t.leaf(&[1, 2, 2], vec![1.0; 4]);
        let k = t.leaf(&[1, 1, 3, 3], vec![1.0; 9]);
        assert!(t.conv2d(k, x).is_err());
    }

    #[test]
    fn maxpool_picks_single_positive() {
        let mut t = Tape::new();
        let mut vals = vec![0.0; 12];
        vals[7] = 4.5;
        let x = t.leaf(&[1, 3, 4], vals);
        let y = t.maxpool2d(x, (3, 4), (3, 4)).unwrap();
        assert_eq!(t.values(y), &[4.5]);
    }

    #[test]
    fn sumpool_window_shape_arithmetic() {
        // 13x3 input, window (4,3), stride (3,3) -> 4x1 spatial extent.
        let mut t = Tape::new();
        let x = t.leaf(&[2, 13, 3], vec![1.0; 2 * 13 * 3]);
        let y = t.sumpool2d(x, (4, 3), (3, 3)).unwrap();
        assert_eq!(t.shape(y), &[2, 4, 1]);
        assert!(t.values(y).iter().all(|v| *v == 12.0));
    }

    #[test]
    fn max_many_permutation_invariant() {
        let mut t = Tape::new();
        let a = t.leaf_vector(vec![1.0, 5.0, -2.0]);
        let b = t.leaf_vector(vec![3.0, 4.0, 0.0]);
        let m1 = t.max_many(&[a, b]).unwrap();
        let m2 = t.max_many(&[b, a]).unwrap();
        assert_eq!(t.values(m1), t.values(m2));
        assert_eq!(t.values(m1), &[3.0, 5.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let mut t = Tape::new();
        let a = t.leaf_vector(vec![1.0, 2.0]);
        let b = t.leaf_vector(vec![1.0, 2.0, 3.0]);
        let err = t.add(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2]") && msg.contains("[3]"), "{msg}");
    }

    #[test]
    fn backward_requires_scalar() {
        let mut t = Tape::new();
        let x = t.leaf_vector(vec![1.0, 2.0]);
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn backward_linear_exact() {
        // d/dx sum(w x) = column sums of w, exactly.
        let mut t = Tape::new();
        let w = t.leaf(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let x = t.leaf_vector(vec![0.5, -1.0, 2.0]);
        let y = t.matvec(w, x).unwrap();
        let s = t.sum(y);
        let grads = t.backward(s).unwrap();
        assert_eq!(grads.of(x), &[5.0, 7.0, 9.0]);
        assert_eq!(grads.of(w), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
    }

    #[test]
    fn grid_scatter_layout_and_grad() {
        let mut t = Tape::new();
        let s0 = t.leaf_vector(vec![1.0, 2.0]);
        let s1 = t.leaf_vector(vec![3.0, 4.0]);
        let grid = t.grid_scatter(&[s0, s1], &[(0, 1), (2, 0)], 3, 2).unwrap();
        assert_eq!(t.shape(grid), &[2, 3, 2]);
        let v = t.values(grid);
        let at = |ch: usize, row: usize, col: usize| v[(ch * 3 + row) * 2 + col];
        assert_eq!(at(0, 0, 1), 1.0);
        assert_eq!(at(0, 2, 0), 3.0);
        assert_eq!(at(1, 0, 1), 2.0);
        assert_eq!(at(1, 2, 0), 4.0);

        let s = t.sum(grid);
        let grads = t.backward(s).unwrap();
        assert_eq!(grads.of(s0), &[1.0, 1.0]);
        assert_eq!(grads.of(s1), &[1.0, 1.0]);
    }

    #[test]
    fn grid_scatter_rejects_duplicate_cell() {
        let mut t = Tape::new();
        let s0 = t.leaf_vector(vec![1.0]);
        let s1 = t.leaf_vector(vec![2.0]);
        assert!(t.grid_scatter(&[s0, s1], &[(1, 1), (1, 1)], 3, 3).is_err());
    }
}
