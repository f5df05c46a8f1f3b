//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records primitive operations eagerly: each call computes the
//! forward value immediately and pushes a node, so graph construction *is*
//! evaluation. [`Tape::backward`] then replays the record in reverse,
//! accumulating exact vector-Jacobian products into every leaf created with
//! `requires_grad`.
//!
//! All tensors are rank-2 (rows x cols); vectors are single rows and scalars
//! are 1x1. Shapes must match exactly; the only implicit expansion is the
//! explicit [`Tape::broadcast_rows`] operation.

mod adam;
mod params;

pub use adam::{adam_step, clip_global_norm, AdamHyper, AdamState};
pub use params::{GradSet, ParamEntry, ParamSet};

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Handle to a value on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

enum Op {
    Leaf,
    MatMul(TensorId, TensorId),
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Scale(TensorId, f64),
    Tanh(TensorId),
    Sigmoid(TensorId),
    Exp(TensorId),
    Log(TensorId),
    Abs(TensorId),
    SoftmaxRows(TensorId),
    LayerNorm {
        x: TensorId,
        gain: TensorId,
        bias: TensorId,
        normalized: Array2<f64>,
        inv_std: Vec<f64>,
    },
    ConcatRows(Vec<TensorId>),
    ConcatCols(Vec<TensorId>),
    SliceRows {
        x: TensorId,
        start: usize,
    },
    SliceCols {
        x: TensorId,
        start: usize,
    },
    Transpose(TensorId),
    /// `mask` is `None` when the op is an identity (eval mode or p = 0).
    Dropout {
        x: TensorId,
        mask: Option<Array2<f64>>,
    },
    Mean(TensorId),
    Sum(TensorId),
    BroadcastRows(TensorId),
    /// Chunk a 1 x M signal into zero-padded overlapping frames.
    SignalToFrames {
        x: TensorId,
        hop: usize,
    },
    /// Count-normalized overlap-add back to a 1 x M signal.
    FramesToSignal {
        x: TensorId,
        hop: usize,
        counts: Vec<f64>,
    },
}

struct Node {
    op: Op,
    value: Array2<f64>,
    needs_grad: bool,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Recorded computation: owns every intermediate value of one forward pass.
pub struct Tape {
    nodes: Vec<Node>,
    rng: ChaCha8Rng,
    fault: Option<String>,
}

impl Tape {
    /// `seed` drives dropout masks only.
    pub fn new(seed: u64) -> Self {
        Tape {
            nodes: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            fault: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// First non-finite-forward fault, if any op produced one.
    pub fn fault(&self) -> Option<&str> {
        self.fault.as_deref()
    }

    pub fn value(&self, id: TensorId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        self.nodes[id.0].value.dim()
    }

    /// Extract a scalar result, reporting any fault recorded during forward.
    pub fn scalar(&self, id: TensorId) -> Result<f64> {
        if let Some(fault) = &self.fault {
            return Err(Error::NonFiniteForward(fault.clone()));
        }
        let v = self.value(id);
        let (r, c) = v.dim();
        if (r, c) != (1, 1) {
            return Err(Error::NonScalarLoss(r, c));
        }
        Ok(v[[0, 0]])
    }

    fn push(&mut self, op: Op, value: Array2<f64>, needs_grad: bool, op_name: &str) -> TensorId {
        if self.fault.is_none() && !value.iter().all(|v| v.is_finite()) {
            self.fault = Some(format!("{op_name} at node {}", self.nodes.len()));
        }
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn needs(&self, id: TensorId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// A differentiable leaf (model parameter).
    pub fn param(&mut self, value: Array2<f64>) -> TensorId {
        self.push(Op::Leaf, value, true, "leaf")
    }

    /// A constant leaf: inputs, DFT bases, windows.
    pub fn constant(&mut self, value: Array2<f64>) -> TensorId {
        self.push(Op::Leaf, value, false, "leaf")
    }

    pub fn constant_row(&mut self, values: &[f64]) -> TensorId {
        let arr = Array2::from_shape_vec((1, values.len()), values.to_vec()).unwrap();
        self.constant(arr)
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert_eq!(ac, br, "matmul shape mismatch: {ar}x{ac} . {br}x{bc}");
        let value = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::MatMul(a, b), value, needs, "matmul")
    }

    fn binary_elementwise(
        &mut self,
        a: TensorId,
        b: TensorId,
        f: impl Fn(&Array2<f64>, &Array2<f64>) -> Array2<f64>,
        make: impl Fn(TensorId, TensorId) -> Op,
        name: &str,
    ) -> TensorId {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{name} shape mismatch: {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
        let value = f(&self.nodes[a.0].value, &self.nodes[b.0].value);
        let needs = self.needs(a) || self.needs(b);
        self.push(make(a, b), value, needs, name)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.binary_elementwise(a, b, |x, y| x + y, Op::Add, "add")
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.binary_elementwise(a, b, |x, y| x - y, Op::Sub, "sub")
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.binary_elementwise(a, b, |x, y| x * y, Op::Mul, "mul")
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let value = &self.nodes[a.0].value * c;
        let needs = self.needs(a);
        self.push(Op::Scale(a, c), value, needs, "scale")
    }

    fn unary(
        &mut self,
        a: TensorId,
        f: impl Fn(f64) -> f64,
        make: impl Fn(TensorId) -> Op,
        name: &str,
    ) -> TensorId {
        let value = self.nodes[a.0].value.mapv(f);
        let needs = self.needs(a);
        self.push(make(a), value, needs, name)
    }

    pub fn tanh(&mut self, a: TensorId) -> TensorId {
        self.unary(a, f64::tanh, Op::Tanh, "tanh")
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid, "sigmoid")
    }

    pub fn exp(&mut self, a: TensorId) -> TensorId {
        self.unary(a, f64::exp, Op::Exp, "exp")
    }

    pub fn log(&mut self, a: TensorId) -> TensorId {
        if self.fault.is_none() {
            if let Some(bad) = self.nodes[a.0].value.iter().find(|v| **v <= 0.0) {
                self.fault = Some(format!("log of non-positive value {bad}"));
            }
        }
        self.unary(a, f64::ln, Op::Log, "log")
    }

    pub fn abs(&mut self, a: TensorId) -> TensorId {
        self.unary(a, f64::abs, Op::Abs, "abs")
    }

    /// Row-wise softmax (last axis).
    pub fn softmax_rows(&mut self, a: TensorId) -> TensorId {
        let x = &self.nodes[a.0].value;
        let mut value = x.clone();
        for mut row in value.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let needs = self.needs(a);
        self.push(Op::SoftmaxRows(a), value, needs, "softmax")
    }

    /// Row-wise layer normalization with learnable gain and bias (both 1 x n).
    pub fn layer_norm(&mut self, x: TensorId, gain: TensorId, bias: TensorId) -> TensorId {
        let (rows, cols) = self.shape(x);
        assert_eq!(self.shape(gain), (1, cols), "layer_norm gain shape");
        assert_eq!(self.shape(bias), (1, cols), "layer_norm bias shape");
        let xv = &self.nodes[x.0].value;
        let mut normalized = Array2::zeros((rows, cols));
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.sum() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for c in 0..cols {
                normalized[[r, c]] = (xv[[r, c]] - mean) * is;
            }
        }
        let gv = &self.nodes[gain.0].value;
        let bv = &self.nodes[bias.0].value;
        let mut value = normalized.clone();
        for r in 0..rows {
            for c in 0..cols {
                value[[r, c]] = value[[r, c]] * gv[[0, c]] + bv[[0, c]];
            }
        }
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        self.push(
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
            value,
            needs,
            "layer_norm",
        )
    }

    pub fn concat_rows(&mut self, parts: &[TensorId]) -> TensorId {
        assert!(!parts.is_empty());
        let cols = self.shape(parts[0]).1;
        let rows: usize = parts.iter().map(|&p| self.shape(p).0).sum();
        let mut value = Array2::zeros((rows, cols));
        let mut at = 0;
        for &p in parts {
            let pv = &self.nodes[p.0].value;
            assert_eq!(pv.ncols(), cols, "concat_rows column mismatch");
            value.slice_mut(s![at..at + pv.nrows(), ..]).assign(pv);
            at += pv.nrows();
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(Op::ConcatRows(parts.to_vec()), value, needs, "concat_rows")
    }

    pub fn concat_cols(&mut self, parts: &[TensorId]) -> TensorId {
        assert!(!parts.is_empty());
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut value = Array2::zeros((rows, cols));
        let mut at = 0;
        for &p in parts {
            let pv = &self.nodes[p.0].value;
            assert_eq!(pv.nrows(), rows, "concat_cols row mismatch");
            value.slice_mut(s![.., at..at + pv.ncols()]).assign(pv);
            at += pv.ncols();
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(Op::ConcatCols(parts.to_vec()), value, needs, "concat_cols")
    }

    pub fn slice_rows(&mut self, x: TensorId, start: usize, len: usize) -> TensorId {
        let (rows, _) = self.shape(x);
        assert!(start + len <= rows, "slice_rows out of bounds");
        let value = self.nodes[x.0]
            .value
            .slice(s![start..start + len, ..])
            .to_owned();
        let needs = self.needs(x);
        self.push(Op::SliceRows { x, start }, value, needs, "slice_rows")
    }

    pub fn slice_cols(&mut self, x: TensorId, start: usize, len: usize) -> TensorId {
        let (_, cols) = self.shape(x);
        assert!(start + len <= cols, "slice_cols out of bounds");
        let value = self.nodes[x.0]
            .value
            .slice(s![.., start..start + len])
            .to_owned();
        let needs = self.needs(x);
        self.push(Op::SliceCols { x, start }, value, needs, "slice_cols")
    }

    pub fn transpose(&mut self, x: TensorId) -> TensorId {
        let value = self.nodes[x.0].value.t().to_owned();
        let needs = self.needs(x);
        self.push(Op::Transpose(x), value, needs, "transpose")
    }

    /// Inverted dropout: keeps elements with probability `1 - p` and rescales
    /// by `1 / (1 - p)`. Identity when `train` is false or `p` is zero.
    pub fn dropout(&mut self, x: TensorId, p: f64, train: bool) -> TensorId {
        assert!((0.0..1.0).contains(&p), "dropout probability {p}");
        let needs = self.needs(x);
        if !train || p == 0.0 {
            let value = self.nodes[x.0].value.clone();
            return self.push(Op::Dropout { x, mask: None }, value, needs, "dropout");
        }
        let keep = 1.0 - p;
        let shape = self.shape(x);
        let mask = {
            let rng = &mut self.rng;
            Array2::from_shape_simple_fn(shape, || {
                if rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
        };
        let value = &self.nodes[x.0].value * &mask;
        self.push(
            Op::Dropout {
                x,
                mask: Some(mask),
            },
            value,
            needs,
            "dropout",
        )
    }

    /// Mean over all elements, yielding a 1x1 scalar.
    pub fn mean(&mut self, x: TensorId) -> TensorId {
        let v = &self.nodes[x.0].value;
        let m = v.sum() / v.len() as f64;
        let needs = self.needs(x);
        self.push(Op::Mean(x), Array2::from_elem((1, 1), m), needs, "mean")
    }

    /// Sum over all elements, yielding a 1x1 scalar.
    pub fn sum(&mut self, x: TensorId) -> TensorId {
        let total = self.nodes[x.0].value.sum();
        let needs = self.needs(x);
        self.push(Op::Sum(x), Array2::from_elem((1, 1), total), needs, "sum")
    }

    /// Tile a 1 x n row into `rows` identical rows.
    pub fn broadcast_rows(&mut self, x: TensorId, rows: usize) -> TensorId {
        let (r, cols) = self.shape(x);
        assert_eq!(r, 1, "broadcast_rows expects a single row");
        let src = self.nodes[x.0].value.row(0).to_owned();
        let mut value = Array2::zeros((rows, cols));
        for mut row in value.rows_mut() {
            row.assign(&src);
        }
        let needs = self.needs(x);
        self.push(Op::BroadcastRows(x), value, needs, "broadcast_rows")
    }

    /// Differentiable framing of a 1 x M signal, zero-padding the tail.
    pub fn signal_to_frames(&mut self, x: TensorId, frame_len: usize, hop: usize) -> TensorId {
        let (r, len) = self.shape(x);
        assert_eq!(r, 1, "signal_to_frames expects a single row");
        assert!(len > 0 && hop > 0 && hop <= frame_len, "framing geometry");
        let num_frames = crate::dsp::frame_count(len, frame_len, hop);
        let xv = &self.nodes[x.0].value;
        let mut value = Array2::zeros((num_frames, frame_len));
        for t in 0..num_frames {
            for i in 0..frame_len {
                let j = t * hop + i;
                if j < len {
                    value[[t, i]] = xv[[0, j]];
                }
            }
        }
        let needs = self.needs(x);
        self.push(Op::SignalToFrames { x, hop }, value, needs, "signal_to_frames")
    }

    /// Differentiable count-normalized overlap-add, truncated to `orig_len`.
    pub fn frames_to_signal(&mut self, x: TensorId, hop: usize, orig_len: usize) -> TensorId {
        let (num_frames, frame_len) = self.shape(x);
        let counts: Vec<f64> = crate::dsp::overlap_counts(num_frames, frame_len, hop)
            .into_iter()
            .map(f64::from)
            .collect();
        let padded = counts.len();
        let keep = orig_len.min(padded);
        let xv = &self.nodes[x.0].value;
        let mut acc = vec![0.0; padded];
        for t in 0..num_frames {
            for i in 0..frame_len {
                acc[t * hop + i] += xv[[t, i]];
            }
        }
        let mut value = Array2::zeros((1, keep));
        for j in 0..keep {
            value[[0, j]] = acc[j] / counts[j];
        }
        let needs = self.needs(x);
        self.push(
            Op::FramesToSignal { x, hop, counts },
            value,
            needs,
            "frames_to_signal",
        )
    }

    /// Reverse sweep from a scalar loss. Returns per-node gradients; leaves
    /// that never influenced the loss keep `None` (read as zero).
    pub fn backward(&self, loss: TensorId) -> Result<Grads> {
        if let Some(fault) = &self.fault {
            return Err(Error::NonFiniteForward(fault.clone()));
        }
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(Error::NonScalarLoss(r, c));
        }

        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                grads[idx] = None;
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.accumulate(idx, &g, &mut grads);
            if matches!(self.nodes[idx].op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Ok(Grads { grads })
    }

    fn accumulate(&self, idx: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let add_to = |grads: &mut [Option<Array2<f64>>], id: TensorId, delta: Array2<f64>| {
            if !self.needs(id) {
                return;
            }
            match &mut grads[id.0] {
                Some(existing) => *existing += &delta,
                slot => *slot = Some(delta),
            }
        };

        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                if self.needs(*a) {
                    add_to(grads, *a, g.dot(&bv.t()));
                }
                if self.needs(*b) {
                    add_to(grads, *b, av.t().dot(g));
                }
            }
            Op::Add(a, b) => {
                add_to(grads, *a, g.clone());
                add_to(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                add_to(grads, *a, g.clone());
                add_to(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    add_to(grads, *a, g * &self.nodes[b.0].value);
                }
                if self.needs(*b) {
                    add_to(grads, *b, g * &self.nodes[a.0].value);
                }
            }
            Op::Scale(a, c) => add_to(grads, *a, g * *c),
            Op::Tanh(a) => {
                let y = &self.nodes[idx].value;
                add_to(grads, *a, g * &y.mapv(|v| 1.0 - v * v));
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[idx].value;
                add_to(grads, *a, g * &y.mapv(|v| v * (1.0 - v)));
            }
            Op::Exp(a) => add_to(grads, *a, g * &self.nodes[idx].value),
            Op::Log(a) => {
                let x = &self.nodes[a.0].value;
                add_to(grads, *a, g / x);
            }
            Op::Abs(a) => {
                // Subgradient 0 at exactly 0.
                let x = &self.nodes[a.0].value;
                let sign = x.mapv(|v| {
                    if v > 0.0 {
                        1.0
                    } else if v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                add_to(grads, *a, g * &sign);
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[idx].value;
                let mut dx = Array2::zeros(y.dim());
                for r in 0..y.nrows() {
                    let dot: f64 = (0..y.ncols()).map(|c| g[[r, c]] * y[[r, c]]).sum();
                    for c in 0..y.ncols() {
                        dx[[r, c]] = y[[r, c]] * (g[[r, c]] - dot);
                    }
                }
                add_to(grads, *a, dx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let (rows, cols) = normalized.dim();
                let gv = &self.nodes[gain.0].value;
                if self.needs(*gain) {
                    let mut dgain = Array2::zeros((1, cols));
                    for r in 0..rows {
                        for c in 0..cols {
                            dgain[[0, c]] += g[[r, c]] * normalized[[r, c]];
                        }
                    }
                    add_to(grads, *gain, dgain);
                }
                if self.needs(*bias) {
                    let mut dbias = Array2::zeros((1, cols));
                    for r in 0..rows {
                        for c in 0..cols {
                            dbias[[0, c]] += g[[r, c]];
                        }
                    }
                    add_to(grads, *bias, dbias);
                }
                if self.needs(*x) {
                    let mut dx = Array2::zeros((rows, cols));
                    for r in 0..rows {
                        let mut mean_dh = 0.0;
                        let mut mean_dh_xhat = 0.0;
                        for c in 0..cols {
                            let dh = g[[r, c]] * gv[[0, c]];
                            mean_dh += dh;
                            mean_dh_xhat += dh * normalized[[r, c]];
                        }
                        mean_dh /= cols as f64;
                        mean_dh_xhat /= cols as f64;
                        for c in 0..cols {
                            let dh = g[[r, c]] * gv[[0, c]];
                            dx[[r, c]] =
                                inv_std[r] * (dh - mean_dh - normalized[[r, c]] * mean_dh_xhat);
                        }
                    }
                    add_to(grads, *x, dx);
                }
            }
            Op::ConcatRows(parts) => {
                let mut at = 0;
                for &p in parts {
                    let rows = self.shape(p).0;
                    add_to(grads, p, g.slice(s![at..at + rows, ..]).to_owned());
                    at += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut at = 0;
                for &p in parts {
                    let cols = self.shape(p).1;
                    add_to(grads, p, g.slice(s![.., at..at + cols]).to_owned());
                    at += cols;
                }
            }
            Op::SliceRows { x, start } => {
                let mut dx = Array2::zeros(self.shape(*x));
                dx.slice_mut(s![*start..*start + g.nrows(), ..]).assign(g);
                add_to(grads, *x, dx);
            }
            Op::SliceCols { x, start } => {
                let mut dx = Array2::zeros(self.shape(*x));
                dx.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                add_to(grads, *x, dx);
            }
            Op::Transpose(x) => add_to(grads, *x, g.t().to_owned()),
            Op::Dropout { x, mask } => match mask {
                Some(m) => add_to(grads, *x, g * m),
                None => add_to(grads, *x, g.clone()),
            },
            Op::Mean(x) => {
                let shape = self.shape(*x);
                let scale = g[[0, 0]] / (shape.0 * shape.1) as f64;
                add_to(grads, *x, Array2::from_elem(shape, scale));
            }
            Op::Sum(x) => {
                let shape = self.shape(*x);
                add_to(grads, *x, Array2::from_elem(shape, g[[0, 0]]));
            }
            Op::BroadcastRows(x) => {
                let cols = self.shape(*x).1;
                let mut dx = Array2::zeros((1, cols));
                for r in 0..g.nrows() {
                    for c in 0..cols {
                        dx[[0, c]] += g[[r, c]];
                    }
                }
                add_to(grads, *x, dx);
            }
            Op::SignalToFrames { x, hop } => {
                let (_, len) = self.shape(*x);
                let mut dx = Array2::zeros((1, len));
                for t in 0..g.nrows() {
                    for i in 0..g.ncols() {
                        let j = t * hop + i;
                        if j < len {
                            dx[[0, j]] += g[[t, i]];
                        }
                    }
                }
                add_to(grads, *x, dx);
            }
            Op::FramesToSignal { x, hop, counts } => {
                let (num_frames, frame_len) = self.shape(*x);
                let keep = self.nodes[idx].value.ncols();
                let mut dx = Array2::zeros((num_frames, frame_len));
                for t in 0..num_frames {
                    for i in 0..frame_len {
                        let j = t * hop + i;
                        if j < keep {
                            dx[[t, i]] = g[[0, j]] / counts[j];
                        }
                    }
                }
                add_to(grads, *x, dx);
            }
        }
    }
}

/// Gradients from one [`Tape::backward`] sweep, indexed by tensor id.
pub struct Grads {
    grads: Vec<Option<Array2<f64>>>,
}

impl Grads {
    pub fn get(&self, id: TensorId) -> Option<&Array2<f64>> {
        self.grads[id.0].as_ref()
    }

    /// Gradient of a leaf, materializing zeros for unreached parameters.
    pub fn of(&self, tape: &Tape, id: TensorId) -> Array2<f64> {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Array2::zeros(tape.shape(id)),
        }
    }
}
