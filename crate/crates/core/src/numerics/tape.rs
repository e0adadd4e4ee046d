//! Reverse-mode differentiation tape.
//!
//! Ops append nodes to a flat arena; values are computed eagerly on record.
//! `backward` replays the arena once in reverse, accumulating each node's
//! gradient exactly once per downstream use, in tape insertion order, so
//! gradients are bitwise deterministic for identical inputs.

use super::{NumericsError, Result, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    /// Multiply by a compile-time constant scalar.
    Scale(NodeId, f64),
    /// Multiply a tensor node by a scalar node.
    ScaleBy(NodeId, NodeId),
    /// Elementwise multiply by a constant tensor (dropout masks).
    MulConst(NodeId, Tensor),
    MatMul(NodeId, NodeId),
    MatVec(NodeId, NodeId),
    Dot(NodeId, NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Tanh(NodeId),
    Sqrt(NodeId),
    GatherRow(NodeId, usize),
    Index(NodeId, usize),
    Slice(NodeId, usize, usize),
    FromScalars(Vec<NodeId>),
    LogSumExp(NodeId),
    Softmax(NodeId),
    /// Constant-weighted reduction of a vector to a scalar.
    WeightedSum(NodeId, Vec<f64>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Accumulated gradients from one backward pass, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root w.r.t. the given node, if any flowed into it.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient as a tensor, zero-filled when nothing flowed into the node.
    pub fn get_or_zeros(&self, id: NodeId, shape: &[usize]) -> Tensor {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable leaf (a parameter or an anchor representation).
    pub fn var(&mut self, value: Tensor) -> NodeId {
        self.push_unchecked(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf; backward never accumulates into it.
    /// Queue contents enter the tape through here.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_unchecked(value, Op::Leaf, false)
    }

    pub fn scalar_const(&mut self, v: f64) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Value of a scalar node.
    pub fn item(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.item()
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(
        &mut self,
        name: &'static str,
        value: Tensor,
        op: Op,
        needs_grad: bool,
    ) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(NumericsError::NonFinite { op: name });
        }
        Ok(self.push_unchecked(value, op, needs_grad))
    }

    fn binary_elementwise(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: name,
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let data: Vec<f64> = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        self.push(name, value, op, needs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let data: Vec<f64> = self.value(a).data().iter().map(|x| x * c).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let needs = self.needs(a);
        self.push("scale", value, Op::Scale(a, c), needs)
    }

    /// `a * s` where `s` is a scalar node.
    pub fn scale_by(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        let sv = self.value(s);
        if !sv.is_scalar() {
            return Err(NumericsError::BadShape {
                op: "scale_by",
                expected: "scalar second operand",
                got: sv.shape().to_vec(),
            });
        }
        let sval = sv.item();
        let data: Vec<f64> = self.value(a).data().iter().map(|x| x * sval).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(s);
        self.push("scale_by", value, Op::ScaleBy(a, s), needs)
    }

    /// Elementwise product with a constant tensor of identical shape.
    pub fn mul_const(&mut self, a: NodeId, mask: Tensor) -> Result<NodeId> {
        let va = self.value(a);
        if va.shape() != mask.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "mul_const",
                lhs: va.shape().to_vec(),
                rhs: mask.shape().to_vec(),
            });
        }
        let data: Vec<f64> = va
            .data()
            .iter()
            .zip(mask.data())
            .map(|(x, m)| x * m)
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let needs = self.needs(a);
        self.push("mul_const", value, Op::MulConst(a, mask), needs)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if !va.is_matrix() || !vb.is_matrix() || va.cols() != vb.rows() {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let (m, k, n) = (va.rows(), va.cols(), vb.cols());
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = va.at(i, p);
                for j in 0..n {
                    data[i * n + j] += aip * vb.at(p, j);
                }
            }
        }
        let value = Tensor::new(vec![m, n], data)?;
        let needs = self.needs(a) || self.needs(b);
        self.push("matmul", value, Op::MatMul(a, b), needs)
    }

    /// Matrix `[r x c]` times vector `[c]` -> vector `[r]`.
    pub fn matvec(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        let (vm, vv) = (self.value(m), self.value(v));
        if !vm.is_matrix() || !vv.is_vector() || vm.cols() != vv.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "matvec",
                lhs: vm.shape().to_vec(),
                rhs: vv.shape().to_vec(),
            });
        }
        let (r, c) = (vm.rows(), vm.cols());
        let mut data = vec![0.0; r];
        for (i, out) in data.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..c {
                acc += vm.at(i, j) * vv.data()[j];
            }
            *out = acc;
        }
        let _ = r;
        let value = Tensor::vector(data);
        let needs = self.needs(m) || self.needs(v);
        self.push("matvec", value, Op::MatVec(m, v), needs)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if !va.is_vector() || va.shape() != vb.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "dot",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let value = Tensor::scalar(va.dot(vb)?);
        let needs = self.needs(a) || self.needs(b);
        self.push("dot", value, Op::Dot(a, b), needs)
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        let needs = self.needs(a);
        self.push("sum", value, Op::Sum(a), needs)
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        if va.is_empty() {
            return Err(NumericsError::EmptyInput { op: "mean" });
        }
        let value = Tensor::scalar(va.data().iter().sum::<f64>() / va.len() as f64);
        let needs = self.needs(a);
        self.push("mean", value, Op::Mean(a), needs)
    }

    fn unary_elementwise(
        &mut self,
        name: &'static str,
        a: NodeId,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let va = self.value(a);
        let data: Vec<f64> = va.data().iter().map(|x| f(*x)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let needs = self.needs(a);
        self.push(name, value, op, needs)
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary_elementwise("exp", a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary_elementwise("ln", a, f64::ln, Op::Ln(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary_elementwise("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary_elementwise("sqrt", a, f64::sqrt, Op::Sqrt(a))
    }

    /// Row `i` of a matrix node, as a vector.
    pub fn gather_row(&mut self, m: NodeId, i: usize) -> Result<NodeId> {
        let vm = self.value(m);
        if !vm.is_matrix() {
            return Err(NumericsError::BadShape {
                op: "gather_row",
                expected: "matrix input",
                got: vm.shape().to_vec(),
            });
        }
        if i >= vm.rows() {
            return Err(NumericsError::IndexOutOfBounds {
                op: "gather_row",
                index: i,
                len: vm.rows(),
            });
        }
        let c = vm.cols();
        let value = Tensor::vector(vm.data()[i * c..(i + 1) * c].to_vec());
        let needs = self.needs(m);
        self.push("gather_row", value, Op::GatherRow(m, i), needs)
    }

    /// Element `i` of a vector node, as a scalar.
    pub fn index(&mut self, v: NodeId, i: usize) -> Result<NodeId> {
        let vv = self.value(v);
        if !vv.is_vector() {
            return Err(NumericsError::BadShape {
                op: "index",
                expected: "vector input",
                got: vv.shape().to_vec(),
            });
        }
        if i >= vv.len() {
            return Err(NumericsError::IndexOutOfBounds {
                op: "index",
                index: i,
                len: vv.len(),
            });
        }
        let value = Tensor::scalar(vv.data()[i]);
        let needs = self.needs(v);
        self.push("index", value, Op::Index(v, i), needs)
    }

    /// Contiguous sub-vector `[start, start+len)` of a vector node.
    pub fn slice(&mut self, v: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let vv = self.value(v);
        if !vv.is_vector() {
            return Err(NumericsError::BadShape {
                op: "slice",
                expected: "vector input",
                got: vv.shape().to_vec(),
            });
        }
        if start + len > vv.len() {
            return Err(NumericsError::IndexOutOfBounds {
                op: "slice",
                index: start + len,
                len: vv.len(),
            });
        }
        let value = Tensor::vector(vv.data()[start..start + len].to_vec());
        let needs = self.needs(v);
        self.push("slice", value, Op::Slice(v, start, len), needs)
    }

    /// Stack scalar nodes into a vector node.
    pub fn from_scalars(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(NumericsError::EmptyInput { op: "from_scalars" });
        }
        let mut data = Vec::with_capacity(parts.len());
        let mut needs = false;
        for &p in parts {
            let vp = self.value(p);
            if !vp.is_scalar() {
                return Err(NumericsError::BadShape {
                    op: "from_scalars",
                    expected: "scalar parts",
                    got: vp.shape().to_vec(),
                });
            }
            data.push(vp.item());
            needs |= self.needs(p);
        }
        self.push(
            "from_scalars",
            Tensor::vector(data),
            Op::FromScalars(parts.to_vec()),
            needs,
        )
    }

    /// `max(v) + ln(sum exp(v - max(v)))`; never overflows for |v_i| <= 1e6.
    pub fn log_sum_exp(&mut self, v: NodeId) -> Result<NodeId> {
        let vv = self.value(v);
        if !vv.is_vector() || vv.is_empty() {
            return Err(NumericsError::EmptyInput { op: "log_sum_exp" });
        }
        let m = vv.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = vv.data().iter().map(|x| (x - m).exp()).sum();
        let value = Tensor::scalar(m + s.ln());
        let needs = self.needs(v);
        self.push("log_sum_exp", value, Op::LogSumExp(v), needs)
    }

    pub fn softmax(&mut self, v: NodeId) -> Result<NodeId> {
        let vv = self.value(v);
        if !vv.is_vector() || vv.is_empty() {
            return Err(NumericsError::EmptyInput { op: "softmax" });
        }
        let m = vv.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = vv.data().iter().map(|x| (x - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        let value = Tensor::vector(exps.iter().map(|e| e / z).collect());
        let needs = self.needs(v);
        self.push("softmax", value, Op::Softmax(v), needs)
    }

    /// `sum_i w_i * v_i` with constant weights.
    pub fn weighted_sum(&mut self, v: NodeId, weights: Vec<f64>) -> Result<NodeId> {
        let vv = self.value(v);
        if !vv.is_vector() || vv.len() != weights.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "weighted_sum",
                lhs: vv.shape().to_vec(),
                rhs: vec![weights.len()],
            });
        }
        let acc: f64 = vv.data().iter().zip(&weights).map(|(x, w)| x * w).sum();
        let needs = self.needs(v);
        self.push(
            "weighted_sum",
            Tensor::scalar(acc),
            Op::WeightedSum(v, weights),
            needs,
        )
    }

    /// Cosine similarity with temperature: `(a.b) / (|a| |b| tau_prime)`.
    ///
    /// Composite of primitive ops, so it is differentiable w.r.t. both
    /// inputs. Zero-norm inputs are rejected rather than mapped to 0.
    pub fn cosine_sim(&mut self, a: NodeId, b: NodeId, tau_prime: f64) -> Result<NodeId> {
        let na = self.norm(a)?;
        let nb = self.norm(b)?;
        self.cosine_sim_cached(a, b, na, nb, tau_prime)
    }

    /// Euclidean norm of a vector node as a scalar node.
    pub fn norm(&mut self, a: NodeId) -> Result<NodeId> {
        let sq = self.dot(a, a)?;
        self.sqrt(sq)
    }

    /// Cosine similarity reusing precomputed norm nodes (queue norms are
    /// shared across anchors within one step).
    pub fn cosine_sim_cached(
        &mut self,
        a: NodeId,
        b: NodeId,
        norm_a: NodeId,
        norm_b: NodeId,
        tau_prime: f64,
    ) -> Result<NodeId> {
        if self.item(norm_a) == 0.0 || self.item(norm_b) == 0.0 {
            return Err(NumericsError::DegenerateVector { op: "cosine_sim" });
        }
        let num = self.dot(a, b)?;
        let nn = self.mul(norm_a, norm_b)?;
        let denom = self.scale(nn, tau_prime)?;
        self.div(num, denom)
    }

    /// Gradients of a scalar root w.r.t. every differentiable node.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let rv = &self.nodes[root.0].value;
        if !rv.is_scalar() {
            return Err(NumericsError::NonScalarRoot {
                got: rv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if self.nodes[root.0].needs_grad {
            grads[root.0] = Some(Tensor::scalar(1.0));
        }
        for i in (0..=root.0).rev() {
            if grads[i].is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let g = grads[i].clone().unwrap();
            self.push_input_grads(i, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn accum(&self, grads: &mut [Option<Tensor>], target: NodeId, update: &[f64], scale: f64) {
        if !self.nodes[target.0].needs_grad {
            return;
        }
        let slot = grads[target.0]
            .get_or_insert_with(|| Tensor::zeros(self.nodes[target.0].value.shape()));
        for (dst, src) in slot.data_mut().iter_mut().zip(update) {
            *dst += src * scale;
        }
    }

    fn accum_at(
        &self,
        grads: &mut [Option<Tensor>],
        target: NodeId,
        offset: usize,
        update: &[f64],
    ) {
        if !self.nodes[target.0].needs_grad {
            return;
        }
        let slot = grads[target.0]
            .get_or_insert_with(|| Tensor::zeros(self.nodes[target.0].value.shape()));
        for (k, src) in update.iter().enumerate() {
            slot.data_mut()[offset + k] += src;
        }
    }

    fn push_input_grads(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let vi = |id: NodeId| self.nodes[id.0].value.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accum(grads, *a, g.data(), 1.0);
                self.accum(grads, *b, g.data(), 1.0);
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, g.data(), 1.0);
                self.accum(grads, *b, g.data(), -1.0);
            }
            Op::Mul(a, b) => {
                let da: Vec<f64> = g.data().iter().zip(vi(*b)).map(|(g, y)| g * y).collect();
                let db: Vec<f64> = g.data().iter().zip(vi(*a)).map(|(g, x)| g * x).collect();
                self.accum(grads, *a, &da, 1.0);
                self.accum(grads, *b, &db, 1.0);
            }
            Op::Div(a, b) => {
                let da: Vec<f64> = g.data().iter().zip(vi(*b)).map(|(g, y)| g / y).collect();
                let db: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(vi(*a).iter().zip(vi(*b)))
                    .map(|(g, (x, y))| -g * x / (y * y))
                    .collect();
                self.accum(grads, *a, &da, 1.0);
                self.accum(grads, *b, &db, 1.0);
            }
            Op::Scale(a, c) => self.accum(grads, *a, g.data(), *c),
            Op::ScaleBy(a, s) => {
                let sval = self.nodes[s.0].value.item();
                self.accum(grads, *a, g.data(), sval);
                let ds: f64 = g.data().iter().zip(vi(*a)).map(|(g, x)| g * x).sum();
                self.accum(grads, *s, &[ds], 1.0);
            }
            Op::MulConst(a, mask) => {
                let da: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(mask.data())
                    .map(|(g, m)| g * m)
                    .collect();
                self.accum(grads, *a, &da, 1.0);
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                if self.nodes[a.0].needs_grad {
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g.data()[i * n + j] * vb.at(p, j);
                            }
                            da[i * k + p] = acc;
                        }
                    }
                    self.accum(grads, *a, &da, 1.0);
                }
                if self.nodes[b.0].needs_grad {
                    let mut db = vec![0.0; k * n];
                    for p in 0..k {
                        for j in 0..n {
                            let mut acc = 0.0;
                            for i in 0..m {
                                acc += va.at(i, p) * g.data()[i * n + j];
                            }
                            db[p * n + j] = acc;
                        }
                    }
                    self.accum(grads, *b, &db, 1.0);
                }
            }
            Op::MatVec(m, v) => {
                let (vm, vv) = (&self.nodes[m.0].value, &self.nodes[v.0].value);
                let (r, c) = (vm.rows(), vm.cols());
                if self.nodes[m.0].needs_grad {
                    let mut dm = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            dm[i * c + j] = g.data()[i] * vv.data()[j];
                        }
                    }
                    self.accum(grads, *m, &dm, 1.0);
                }
                if self.nodes[v.0].needs_grad {
                    let mut dv = vec![0.0; c];
                    for (j, out) in dv.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for i in 0..r {
                            acc += vm.at(i, j) * g.data()[i];
                        }
                        *out = acc;
                    }
                    self.accum(grads, *v, &dv, 1.0);
                }
            }
            Op::Dot(a, b) => {
                let gs = g.item();
                let da: Vec<f64> = vi(*b).iter().map(|y| gs * y).collect();
                let db: Vec<f64> = vi(*a).iter().map(|x| gs * x).collect();
                self.accum(grads, *a, &da, 1.0);
                self.accum(grads, *b, &db, 1.0);
            }
            Op::Sum(a) => {
                let gs = g.item();
                let da = vec![gs; self.nodes[a.0].value.len()];
                self.accum(grads, *a, &da, 1.0);
            }
            Op::Mean(a) => {
                let len = self.nodes[a.0].value.len();
                let gs = g.item() / len as f64;
                let da = vec![gs; len];
                self.accum(grads, *a, &da, 1.0);
            }
            Op::Exp(a) => {
                let da: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(self.nodes[i].value.data())
                    .map(|(g, out)| g * out)
                    .collect();
                self.accum(grads, *a, &da, 1.0);
            }
            Op::Ln(a) => {
                let da: Vec<f64> = g.data().iter().zip(vi(*a)).map(|(g, x)| g / x).collect();
                self.accum(grads, *a, &da, 1.0);
            }
            Op::Tanh(a) => {
                let da: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(self.nodes[i].value.data())
                    .map(|(g, out)| g * (1.0 - out * out))
                    .collect();
                self.accum(grads, *a, &da, 1.0);
            }
            Op::Sqrt(a) => {
                let da: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(self.nodes[i].value.data())
                    .map(|(g, out)| g / (2.0 * out))
                    .collect();
                self.accum(grads, *a, &da, 1.0);
            }
            Op::GatherRow(m, row) => {
                let c = self.nodes[m.0].value.cols();
                self.accum_at(grads, *m, row * c, g.data());
            }
            Op::Index(v, idx) => {
                self.accum_at(grads, *v, *idx, g.data());
            }
            Op::Slice(v, start, _len) => {
                self.accum_at(grads, *v, *start, g.data());
            }
            Op::FromScalars(parts) => {
                for (k, p) in parts.iter().enumerate() {
                    self.accum(grads, *p, &[g.data()[k]], 1.0);
                }
            }
            Op::LogSumExp(v) => {
                let out = self.nodes[i].value.item();
                let gs = g.item();
                let da: Vec<f64> = vi(*v).iter().map(|x| gs * (x - out).exp()).collect();
                self.accum(grads, *v, &da, 1.0);
            }
            Op::Softmax(v) => {
                let out = self.nodes[i].value.data();
                let inner: f64 = g.data().iter().zip(out).map(|(g, o)| g * o).sum();
                let da: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(out)
                    .map(|(g, o)| o * (g - inner))
                    .collect();
                self.accum(grads, *v, &da, 1.0);
            }
            Op::WeightedSum(v, weights) => {
                let gs = g.item();
                let da: Vec<f64> = weights.iter().map(|w| gs * w).collect();
                self.accum(grads, *v, &da, 1.0);
            }
        }
    }
}
