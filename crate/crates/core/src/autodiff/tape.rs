use super::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};
use crate::geom::{chamfer_pairs, rotation, RotationMode};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseKind {
    Add,
    Sub,
    Mul,
    Div,
    Log,
    Exp,
    Neg,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(ElementwiseKind, Var, Var),
    Unary(ElementwiseKind, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    ClampMin(Var, f64),
    Softmax(Var),
    /// Column-wise max over groups of consecutive rows; `argmax[o]` is the
    /// flat input index feeding output entry `o`.
    SegmentMax { input: Var, argmax: Vec<usize> },
    Concat(Vec<Var>),
    GatherRows { input: Var, index: Vec<usize> },
    AddRow(Var, Var),
    Sum(Var),
    Reshape(Var),
    SliceLast { input: Var, start: usize },
    Chamfer {
        a: Var,
        b: Var,
        nn_ab: Vec<usize>,
        nn_ba: Vec<usize>,
    },
    DecodeRotation { input: Var, mode: RotationMode },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only record of a computation, differentiated in reverse.
///
/// Every op takes handles to earlier nodes, so node order is a topological
/// order and [`Tape::backward`] is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient accumulated into `v` by the last backward sweep(s).
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0].as_ref().map(|g| {
            Tensor::new(self.nodes[v.0].value.shape().to_vec(), g.clone())
                .expect("gradient mirrors value shape")
        })
    }

    /// Clears all accumulated gradients.
    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.value(a).dims2("matmul")?;
        let (k2, p) = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("[{n}x{k}] · [{k2}x{p}]: inner dimensions differ"),
            ));
        }
        let mut out = vec![0.0; n * p];
        gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, n, k, p);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), Tensor::matrix(n, p, out)?, rg))
    }

    /// Entrywise op. Binary kinds accept equal shapes or a single-element operand.
    pub fn elementwise(&mut self, kind: ElementwiseKind, a: Var, b: Option<Var>) -> Result<Var> {
        use ElementwiseKind::*;
        match (kind, b) {
            (Add | Sub | Mul | Div, Some(b)) => self.binary(kind, a, b),
            (Log | Exp | Neg, None) => self.unary(kind, a),
            (Add | Sub | Mul | Div, None) => Err(Error::InvalidArgument(format!(
                "{kind:?} needs two operands"
            ))),
            (Log | Exp | Neg, Some(_)) => Err(Error::InvalidArgument(format!(
                "{kind:?} takes one operand"
            ))),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseKind::Div, a, b)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(ElementwiseKind::Log, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(ElementwiseKind::Exp, a)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(ElementwiseKind::Neg, a)
    }

    fn binary(&mut self, kind: ElementwiseKind, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let shape = if va.shape() == vb.shape() || vb.is_scalar() {
            va.shape().to_vec()
        } else if va.is_scalar() {
            vb.shape().to_vec()
        } else {
            return Err(Error::shape(
                "elementwise",
                format!("{:?} vs {:?} (only scalar broadcasting)", va.shape(), vb.shape()),
            ));
        };
        let n: usize = shape.iter().product();
        let at = |i: usize| va.data()[if va.is_scalar() { 0 } else { i }];
        let bt = |i: usize| vb.data()[if vb.is_scalar() { 0 } else { i }];
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let (x, y) = (at(i), bt(i));
            out.push(match kind {
                ElementwiseKind::Add => x + y,
                ElementwiseKind::Sub => x - y,
                ElementwiseKind::Mul => x * y,
                ElementwiseKind::Div => {
                    if y == 0.0 {
                        return Err(Error::Domain {
                            op: "div",
                            index: i,
                            detail: "division by zero".into(),
                        });
                    }
                    x / y
                }
                _ => unreachable!("unary kind routed to binary"),
            });
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Binary(kind, a, b), Tensor::new(shape, out)?, rg))
    }

    fn unary(&mut self, kind: ElementwiseKind, a: Var) -> Result<Var> {
        let va = self.value(a);
        let mut out = Vec::with_capacity(va.numel());
        for (i, &x) in va.data().iter().enumerate() {
            out.push(match kind {
                ElementwiseKind::Log => {
                    if x <= 0.0 {
                        return Err(Error::Domain {
                            op: "log",
                            index: i,
                            detail: format!("argument {x} is not positive"),
                        });
                    }
                    x.ln()
                }
                ElementwiseKind::Exp => x.exp(),
                ElementwiseKind::Neg => -x,
                _ => unreachable!("binary kind routed to unary"),
            });
        }
        let shape = va.shape().to_vec();
        let rg = self.rg(a);
        Ok(self.push(Op::Unary(kind, a), Tensor::new(shape, out)?, rg))
    }

    /// Multiplies by a fixed constant.
    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let va = self.value(a);
        let out = va.data().iter().map(|x| x * factor).collect();
        let shape = va.shape().to_vec();
        let rg = self.rg(a);
        Ok(self.push(Op::Scale(a, factor), Tensor::new(shape, out)?, rg))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&slope) {
            return Err(Error::InvalidArgument(format!(
                "leaky slope {slope} outside [0, 1)"
            )));
        }
        let vx = self.value(x);
        let out = vx
            .data()
            .iter()
            .map(|&v| if v >= 0.0 { v } else { slope * v })
            .collect();
        let shape = vx.shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Op::LeakyRelu(x, slope), Tensor::new(shape, out)?, rg))
    }

    /// `max(x, floor)` entrywise; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Result<Var> {
        let vx = self.value(x);
        let out = vx.data().iter().map(|&v| v.max(floor)).collect();
        let shape = vx.shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Op::ClampMin(x, floor), Tensor::new(shape, out)?, rg))
    }

    /// Max-shifted softmax over all entries.
    pub fn softmax(&mut self, v: Var) -> Result<Var> {
        let vv = self.value(v);
        let out = softmax_slice(vv.data());
        let shape = vv.shape().to_vec();
        let rg = self.rg(v);
        Ok(self.push(Op::Softmax(v), Tensor::new(shape, out)?, rg))
    }

    /// Column-wise maximum of a `[n×m]` matrix, returned as `[m]`.
    pub fn reduce_max(&mut self, rows: Var) -> Result<Var> {
        let (n, m) = self.value(rows).dims2("reduce_max")?;
        self.segment_max_impl(rows, n, vec![m])
            .map_err(|_| Error::shape("reduce_max", format!("empty input [{n}x{m}]")))
    }

    /// Column-wise maximum over consecutive groups of `group` rows:
    /// `[n·group × c] -> [n × c]`.
    pub fn segment_max(&mut self, rows: Var, group: usize) -> Result<Var> {
        let (r, c) = self.value(rows).dims2("segment_max")?;
        if group == 0 || r % group != 0 {
            return Err(Error::shape(
                "segment_max",
                format!("{r} rows do not split into groups of {group}"),
            ));
        }
        self.segment_max_impl(rows, group, vec![r / group, c])
    }

    /// `out[g, c] = max_j input[index[g·group + j], c]`, i.e. a row gather
    /// followed by [`Tape::segment_max`] without the gathered intermediate.
    pub fn gather_max(&mut self, input: Var, index: &[usize], group: usize) -> Result<Var> {
        let (n, c) = self.value(input).dims2("gather_max")?;
        if group == 0 || index.is_empty() || index.len() % group != 0 {
            return Err(Error::shape(
                "gather_max",
                format!("{} indices do not split into groups of {group}", index.len()),
            ));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(Error::shape("gather_max", format!("row {bad} out of range for {n} rows")));
        }
        let data = self.value(input).data();
        let n_out = index.len() / group;
        let mut out = Vec::with_capacity(n_out * c);
        let mut argmax = Vec::with_capacity(n_out * c);
        for members in index.chunks(group) {
            let start = out.len();
            out.extend_from_slice(&data[members[0] * c..(members[0] + 1) * c]);
            argmax.extend((0..c).map(|j| members[0] * c + j));
            for &row in &members[1..] {
                let src = &data[row * c..(row + 1) * c];
                for j in 0..c {
                    // strict comparison keeps the first member on ties
                    if src[j] > out[start + j] {
                        out[start + j] = src[j];
                        argmax[start + j] = row * c + j;
                    }
                }
            }
        }
        let rg = self.rg(input);
        Ok(self.push(Op::SegmentMax { input, argmax }, Tensor::matrix(n_out, c, out)?, rg))
    }

    fn segment_max_impl(&mut self, rows: Var, group: usize, out_shape: Vec<usize>) -> Result<Var> {
        let vr = self.value(rows);
        let c = vr.last_dim();
        let r = vr.outer_len();
        if r == 0 || group == 0 {
            return Err(Error::shape("segment_max", "empty input"));
        }
        let data = vr.data();
        let n_out = r / group;
        let mut out = Vec::with_capacity(n_out * c);
        let mut argmax = Vec::with_capacity(n_out * c);
        for g in 0..n_out {
            let base = g * group;
            let mut best: Vec<usize> = (0..c).map(|j| base * c + j).collect();
            for row in base + 1..base + group {
                for (j, b) in best.iter_mut().enumerate() {
                    let idx = row * c + j;
                    // strict comparison keeps the lowest row on ties
                    if data[idx] > data[*b] {
                        *b = idx;
                    }
                }
            }
            out.extend(best.iter().map(|&i| data[i]));
            argmax.extend(best);
        }
        let rg = self.rg(rows);
        Ok(self.push(
            Op::SegmentMax {
                input: rows,
                argmax,
            },
            Tensor::new(out_shape, out)?,
            rg,
        ))
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no parts"))?;
        let lead = {
            let s = self.value(*first).shape();
            s[..s.len() - 1].to_vec()
        };
        for p in parts {
            let s = self.value(*p).shape();
            if s[..s.len() - 1] != lead[..] {
                return Err(Error::shape(
                    "concat",
                    format!("leading dims {:?} vs {:?}", &s[..s.len() - 1], lead),
                ));
            }
        }
        let rows: usize = lead.iter().product();
        let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).last_dim()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(*p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(Op::Concat(parts.to_vec()), Tensor::new(shape, out)?, rg))
    }

    /// Selects rows of a matrix by index (repeats allowed).
    pub fn gather_rows(&mut self, input: Var, index: &[usize]) -> Result<Var> {
        let (r, c) = self.value(input).dims2("gather_rows")?;
        if index.is_empty() {
            return Err(Error::shape("gather_rows", "empty index"));
        }
        if let Some((pos, &bad)) = index.iter().enumerate().find(|(_, &i)| i >= r) {
            return Err(Error::shape(
                "gather_rows",
                format!("index {bad} at position {pos} out of range for {r} rows"),
            ));
        }
        let data = self.value(input).data();
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index {
            out.extend_from_slice(&data[i * c..(i + 1) * c]);
        }
        let rg = self.rg(input);
        Ok(self.push(
            Op::GatherRows {
                input,
                index: index.to_vec(),
            },
            Tensor::matrix(index.len(), c, out)?,
            rg,
        ))
    }

    /// Adds a length-`c` vector to every row of a `[.. × c]` tensor.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vr) = (self.value(a), self.value(row));
        let c = va.last_dim();
        if vr.numel() != c {
            return Err(Error::shape(
                "add_row",
                format!("row of {} values for width {c}", vr.numel()),
            ));
        }
        let out = va
            .data()
            .chunks(c)
            .flat_map(|chunk| chunk.iter().zip(vr.data()).map(|(x, y)| x + y))
            .collect();
        let shape = va.shape().to_vec();
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(Op::AddRow(a, row), Tensor::new(shape, out)?, rg))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        Ok(self.push(Op::Sum(a), Tensor::scalar(s), rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let v = self.value(a).reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(Op::Reshape(a), v, rg))
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice_last(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(input);
        let w = v.last_dim();
        if len == 0 || start + len > w {
            return Err(Error::shape(
                "slice_last",
                format!("columns {start}..{} of width {w}", start + len),
            ));
        }
        let out = v
            .data()
            .chunks(w)
            .flat_map(|chunk| chunk[start..start + len].iter().copied())
            .collect();
        let mut shape = v.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = len;
        let rg = self.rg(input);
        Ok(self.push(Op::SliceLast { input, start }, Tensor::new(shape, out)?, rg))
    }

    /// Symmetric Chamfer distance between two `[n×3]` point sets: mean squared
    /// nearest-neighbour distance in each direction, summed.
    pub fn chamfer(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, da) = self.value(a).dims2("chamfer")?;
        let (nb, db) = self.value(b).dims2("chamfer")?;
        if da != 3 || db != 3 {
            return Err(Error::shape("chamfer", "points must be [n x 3]"));
        }
        if na == 0 || nb == 0 {
            return Err(Error::shape("chamfer", "empty cloud"));
        }
        let (value, nn_ab, nn_ba) = chamfer_pairs(self.value(a).data(), self.value(b).data());
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Op::Chamfer { a, b, nn_ab, nn_ba },
            Tensor::scalar(value),
            rg,
        ))
    }

    /// Decodes rotation parameters into a `[3×3]` rotation matrix.
    pub fn decode_rotation(&mut self, input: Var, mode: RotationMode) -> Result<Var> {
        let v = self.value(input);
        if v.numel() != mode.dim() {
            return Err(Error::shape(
                "decode_rotation",
                format!("{mode} expects {} values, got {}", mode.dim(), v.numel()),
            ));
        }
        let r = rotation::decode_raw(mode, v.data())?;
        let data = (0..9).map(|i| r[(i / 3, i % 3)]).collect();
        let rg = self.rg(input);
        Ok(self.push(
            Op::DecodeRotation { input, mode },
            Tensor::matrix(3, 3, data)?,
            rg,
        ))
    }

    /// Reverse sweep from a scalar. Leaf gradients accumulate across calls;
    /// intermediate gradients are recomputed each call.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        for (node, g) in self.nodes.iter().zip(self.grads.iter_mut()) {
            if !matches!(node.op, Op::Leaf) {
                *g = None;
            }
        }
        if !self.rg(loss) {
            return Ok(());
        }
        accumulate(&mut self.grads, loss.0, &[1.0]);
        for i in (0..=loss.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) || !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            propagate(&self.nodes, &mut self.grads, i, &g)?;
            self.grads[i] = Some(g);
        }
        Ok(())
    }
}

pub(crate) fn softmax_slice(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn accumulate(grads: &mut [Option<Vec<f64>>], idx: usize, g: &[f64]) {
    match &mut grads[idx] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn propagate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], i: usize, g: &[f64]) -> Result<()> {
    let node = &nodes[i];
    let rg = |v: &Var| nodes[v.0].requires_grad;
    let val = |v: &Var| &nodes[v.0].value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (n, k) = val(a).dims2("matmul")?;
            let (_, p) = val(b).dims2("matmul")?;
            if rg(a) {
                let mut ga = vec![0.0; n * k];
                gemm_nt_acc(g, val(b).data(), &mut ga, n, k, p);
                accumulate(grads, a.0, &ga);
            }
            if rg(b) {
                let mut gb = vec![0.0; k * p];
                gemm_tn_acc(val(a).data(), g, &mut gb, n, k, p);
                accumulate(grads, b.0, &gb);
            }
        }
        Op::Binary(kind, a, b) => {
            let (va, vb) = (val(a), val(b));
            let at = |j: usize| va.data()[if va.is_scalar() { 0 } else { j }];
            let bt = |j: usize| vb.data()[if vb.is_scalar() { 0 } else { j }];
            let (da, db): (Vec<f64>, Vec<f64>) = g
                .iter()
                .enumerate()
                .map(|(j, &gj)| match kind {
                    ElementwiseKind::Add => (gj, gj),
                    ElementwiseKind::Sub => (gj, -gj),
                    ElementwiseKind::Mul => (gj * bt(j), gj * at(j)),
                    ElementwiseKind::Div => {
                        let y = bt(j);
                        (gj / y, -gj * at(j) / (y * y))
                    }
                    _ => unreachable!(),
                })
                .unzip();
            let reduce = |d: Vec<f64>, scalar: bool| {
                if scalar {
                    vec![d.iter().sum()]
                } else {
                    d
                }
            };
            if rg(a) {
                let d = reduce(da, va.is_scalar() && va.numel() != g.len());
                accumulate(grads, a.0, &d);
            }
            if rg(b) {
                let d = reduce(db, vb.is_scalar() && vb.numel() != g.len());
                accumulate(grads, b.0, &d);
            }
        }
        Op::Unary(kind, a) => {
            if rg(a) {
                let x = val(a).data();
                let y = node.value.data();
                let d: Vec<f64> = match kind {
                    ElementwiseKind::Log => g.iter().zip(x).map(|(g, x)| g / x).collect(),
                    ElementwiseKind::Exp => g.iter().zip(y).map(|(g, y)| g * y).collect(),
                    ElementwiseKind::Neg => g.iter().map(|g| -g).collect(),
                    _ => unreachable!(),
                };
                accumulate(grads, a.0, &d);
            }
        }
        Op::Scale(a, f) => {
            if rg(a) {
                let d: Vec<f64> = g.iter().map(|g| g * f).collect();
                accumulate(grads, a.0, &d);
            }
        }
        Op::LeakyRelu(x, slope) => {
            if rg(x) {
                let d: Vec<f64> = g
                    .iter()
                    .zip(val(x).data())
                    .map(|(g, &x)| if x >= 0.0 { *g } else { slope * g })
                    .collect();
                accumulate(grads, x.0, &d);
            }
        }
        Op::ClampMin(x, floor) => {
            if rg(x) {
                let d: Vec<f64> = g
                    .iter()
                    .zip(val(x).data())
                    .map(|(g, &x)| if x >= *floor { *g } else { 0.0 })
                    .collect();
                accumulate(grads, x.0, &d);
            }
        }
        Op::Softmax(v) => {
            if rg(v) {
                let y = node.value.data();
                let dot: f64 = g.iter().zip(y).map(|(g, y)| g * y).sum();
                let d: Vec<f64> = g.iter().zip(y).map(|(g, y)| y * (g - dot)).collect();
                accumulate(grads, v.0, &d);
            }
        }
        Op::SegmentMax { input, argmax } => {
            if rg(input) {
                let mut d = vec![0.0; val(input).numel()];
                for (&src, &gj) in argmax.iter().zip(g) {
                    d[src] += gj;
                }
                accumulate(grads, input.0, &d);
            }
        }
        Op::Concat(parts) => {
            let widths: Vec<usize> = parts.iter().map(|p| val(p).last_dim()).collect();
            let total: usize = widths.iter().sum();
            let rows = g.len() / total;
            let mut offset = 0;
            for (p, &w) in parts.iter().zip(&widths) {
                if rg(p) {
                    let mut d = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        d.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                    }
                    accumulate(grads, p.0, &d);
                }
                offset += w;
            }
        }
        Op::GatherRows { input, index } => {
            if rg(input) {
                let c = val(input).last_dim();
                let mut d = vec![0.0; val(input).numel()];
                for (row, &src) in index.iter().enumerate() {
                    let dst = &mut d[src * c..(src + 1) * c];
                    dst.iter_mut()
                        .zip(&g[row * c..(row + 1) * c])
                        .for_each(|(a, b)| *a += b);
                }
                accumulate(grads, input.0, &d);
            }
        }
        Op::AddRow(a, row) => {
            if rg(a) {
                accumulate(grads, a.0, g);
            }
            if rg(row) {
                let c = val(row).numel();
                let mut d = vec![0.0; c];
                for chunk in g.chunks(c) {
                    d.iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
                }
                accumulate(grads, row.0, &d);
            }
        }
        Op::Sum(a) => {
            if rg(a) {
                let d = vec![g[0]; val(a).numel()];
                accumulate(grads, a.0, &d);
            }
        }
        Op::Reshape(a) => {
            if rg(a) {
                accumulate(grads, a.0, g);
            }
        }
        Op::SliceLast { input, start } => {
            if rg(input) {
                let w = val(input).last_dim();
                let len = node.value.last_dim();
                let mut d = vec![0.0; val(input).numel()];
                for (r, chunk) in g.chunks(len).enumerate() {
                    d[r * w + start..r * w + start + len].copy_from_slice(chunk);
                }
                accumulate(grads, input.0, &d);
            }
        }
        Op::Chamfer { a, b, nn_ab, nn_ba } => {
            let (pa, pb) = (val(a).data(), val(b).data());
            let (na, nb) = (nn_ab.len() as f64, nn_ba.len() as f64);
            let mut da = vec![0.0; pa.len()];
            let mut db = vec![0.0; pb.len()];
            for (i, &j) in nn_ab.iter().enumerate() {
                for c in 0..3 {
                    let diff = 2.0 * g[0] * (pa[3 * i + c] - pb[3 * j + c]) / na;
                    da[3 * i + c] += diff;
                    db[3 * j + c] -= diff;
                }
            }
            for (j, &i) in nn_ba.iter().enumerate() {
                for c in 0..3 {
                    let diff = 2.0 * g[0] * (pb[3 * j + c] - pa[3 * i + c]) / nb;
                    db[3 * j + c] += diff;
                    da[3 * i + c] -= diff;
                }
            }
            if rg(a) {
                accumulate(grads, a.0, &da);
            }
            if rg(b) {
                accumulate(grads, b.0, &db);
            }
        }
        Op::DecodeRotation { input, mode } => {
            if rg(input) {
                let upstream = nalgebra::Matrix3::from_row_slice(g);
                let d = rotation::decode_vjp(*mode, val(input).data(), &upstream)?;
                accumulate(grads, input.0, &d);
            }
        }
    }
    Ok(())
}
