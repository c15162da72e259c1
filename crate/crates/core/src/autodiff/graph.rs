use std::collections::HashMap;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::{self, Tensor};
use super::AutodiffError;

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    id: usize,
}

impl Var {
    pub fn id(self) -> usize {
        self.id
    }
}

/// Operation kinds accepted by [`Graph::build`].
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    MatMul,
    Sum,
    Mean,
    Neg,
    Log,
    Exp,
    Softplus,
    Relu,
    Div,
    ScalarMul(f64),
    IndexSelect(Vec<usize>),
    Concat,
}

impl FromStr for OpKind {
    type Err = AutodiffError;

    /// Parses the parameter-free kinds by name.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "add" => OpKind::Add,
            "sub" => OpKind::Sub,
            "mul" => OpKind::Mul,
            "matmul" => OpKind::MatMul,
            "sum" => OpKind::Sum,
            "mean" => OpKind::Mean,
            "neg" => OpKind::Neg,
            "log" => OpKind::Log,
            "exp" => OpKind::Exp,
            "softplus" => OpKind::Softplus,
            "relu" => OpKind::Relu,
            "div" => OpKind::Div,
            "concat" => OpKind::Concat,
            other => return Err(AutodiffError::UnsupportedOp(other.to_string())),
        })
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    ScalarMul(f64),
    AddScalar,
    Log,
    Exp,
    Softplus,
    Sigmoid,
    Relu,
    Abs,
    MatMul,
    Transpose,
    Sum,
    SumAxis,
    Mean,
    BroadcastTo,
    SumTo,
    IndexSelect(Vec<usize>),
    ScatterRows(Vec<usize>),
    Concat(Vec<usize>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::ScalarMul(_) => "scalar-mul",
            Op::AddScalar => "add-scalar",
            Op::Log => "log",
            Op::Exp => "exp",
            Op::Softplus => "softplus",
            Op::Sigmoid => "sigmoid",
            Op::Relu => "relu",
            Op::Abs => "abs",
            Op::MatMul => "matmul",
            Op::Transpose => "transpose",
            Op::Sum => "sum",
            Op::SumAxis => "sum-axis",
            Op::Mean => "mean",
            Op::BroadcastTo => "broadcast",
            Op::SumTo => "sum-to",
            Op::IndexSelect(_) => "index-select",
            Op::ScatterRows(_) => "scatter-rows",
            Op::Concat(_) => "concat",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    parents: Vec<usize>,
    requires_grad: bool,
}

/// Gradients returned by [`Graph::grad`], keyed by the differentiated node.
#[derive(Clone, Debug, Default)]
pub struct GradMap {
    entries: Vec<(Var, Var)>,
}

impl GradMap {
    pub fn get(&self, wrt: Var) -> Option<Var> {
        self.entries.iter().find(|(k, _)| *k == wrt).map(|(_, g)| *g)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, Var)> + '_ {
        self.entries.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Gradient values in the order the `wrt` nodes were requested.
    pub fn tensors(&self, graph: &Graph) -> Vec<Tensor> {
        self.entries.iter().map(|(_, g)| graph.value(*g).clone()).collect()
    }
}

/// A reverse-mode tape. Nodes are appended in evaluation order, so node ids
/// are a topological order of the graph.
///
/// Gradients are themselves computed with graph operations; with
/// `create_graph` set they are recorded and can be differentiated again.
#[derive(Debug)]
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
    recording: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

type Result<T> = std::result::Result<T, AutodiffError>;

impl Graph {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            recording: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, vec![], true)
    }

    /// A constant leaf; gradients never flow into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, vec![], false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.id].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.id].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.id].requires_grad
    }

    /// Number of recorded parents (zero for leaves and constants).
    pub fn parent_count(&self, v: Var) -> usize {
        self.nodes[v.id].parents.len()
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.id].op.name()
    }

    /// Value-identical copy with no parents.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        self.check(v)?;
        let value = self.nodes[v.id].value.clone();
        Ok(self.constant(value))
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.graph != self.id || v.id >= self.nodes.len() {
            return Err(AutodiffError::NodeNotInGraph(v.id));
        }
        Ok(())
    }

    fn push_raw(&mut self, value: Tensor, op: Op, parents: Vec<usize>, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node { value, op, parents, requires_grad });
        Var { graph: self.id, id }
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite(op.name().to_string()));
        }
        let requires_grad = self.recording && parents.iter().any(|p| self.nodes[p.id].requires_grad);
        if requires_grad {
            let ids = parents.iter().map(|p| p.id).collect();
            Ok(self.push_raw(value, op, ids, true))
        } else {
            Ok(self.push_raw(value, op, vec![], false))
        }
    }

    /// Generic entry point mirroring the named operation methods.
    pub fn build(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() != n {
                return Err(AutodiffError::ShapeMismatch(format!(
                    "{kind:?} takes {n} input(s), got {}",
                    inputs.len()
                )));
            }
            Ok(())
        };
        match kind {
            OpKind::Add => arity(2).and_then(|_| self.add(inputs[0], inputs[1])),
            OpKind::Sub => arity(2).and_then(|_| self.sub(inputs[0], inputs[1])),
            OpKind::Mul => arity(2).and_then(|_| self.mul(inputs[0], inputs[1])),
            OpKind::Div => arity(2).and_then(|_| self.div(inputs[0], inputs[1])),
            OpKind::MatMul => arity(2).and_then(|_| self.matmul(inputs[0], inputs[1])),
            OpKind::Sum => arity(1).and_then(|_| self.sum(inputs[0])),
            OpKind::Mean => arity(1).and_then(|_| self.mean(inputs[0])),
            OpKind::Neg => arity(1).and_then(|_| self.neg(inputs[0])),
            OpKind::Log => arity(1).and_then(|_| self.log(inputs[0])),
            OpKind::Exp => arity(1).and_then(|_| self.exp(inputs[0])),
            OpKind::Softplus => arity(1).and_then(|_| self.softplus(inputs[0])),
            OpKind::Relu => arity(1).and_then(|_| self.relu(inputs[0])),
            OpKind::ScalarMul(c) => arity(1).and_then(|_| self.scalar_mul(inputs[0], c)),
            OpKind::IndexSelect(ref idx) => arity(1).and_then(|_| self.index_select(inputs[0], idx)),
            OpKind::Concat => self.concat(inputs),
        }
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (va, vb) = (&self.nodes[a.id].value, &self.nodes[b.id].value);
        let shape = tensor::broadcast_shape(va.shape(), vb.shape()).ok_or_else(|| {
            AutodiffError::ShapeMismatch(format!(
                "{}: cannot broadcast {:?} with {:?}",
                op.name(),
                va.shape(),
                vb.shape()
            ))
        })?;
        let out = tensor::zip_broadcast(va, vb, &shape, f);
        self.push(out, op, &[a, b])
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        self.check(a)?;
        let out = self.nodes[a.id].value.map(f);
        self.push(out, op, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul, |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Div, |x, y| x / y)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Neg, |x| -x)
    }

    pub fn scalar_mul(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, Op::ScalarMul(c), |x| c * x)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, Op::AddScalar, |x| x + c)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Log, f64::ln)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Exp, f64::exp)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Softplus, softplus)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sigmoid, sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Relu, |x| x.max(0.0))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Abs, f64::abs)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(AutodiffError::ShapeMismatch(format!("matmul: {sa:?} x {sb:?}")));
        }
        let out = tensor::matmul(&self.nodes[a.id].value, &self.nodes[b.id].value);
        self.push(out, Op::MatMul, &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        if self.shape(a).len() != 2 {
            return Err(AutodiffError::ShapeMismatch(format!(
                "transpose needs a matrix, got {:?}",
                self.shape(a)
            )));
        }
        let out = tensor::transpose(&self.nodes[a.id].value);
        self.push(out, Op::Transpose, &[a])
    }

    /// Sum of all entries, as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let s = self.nodes[a.id].value.data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum, &[a])
    }

    /// Sum along `axis`, keeping it with extent 1.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check(a)?;
        if axis >= self.shape(a).len() {
            return Err(AutodiffError::ShapeMismatch(format!(
                "sum-axis {axis} out of range for {:?}",
                self.shape(a)
            )));
        }
        let out = tensor::sum_axis(&self.nodes[a.id].value, axis);
        self.push(out, Op::SumAxis, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let v = &self.nodes[a.id].value;
        if v.numel() == 0 {
            return Err(AutodiffError::ShapeMismatch("mean of an empty tensor".into()));
        }
        let m = v.data().iter().sum::<f64>() / v.numel() as f64;
        self.push(Tensor::scalar(m), Op::Mean, &[a])
    }

    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.check(a)?;
        match tensor::broadcast_shape(self.shape(a), shape) {
            Some(s) if s == shape => {}
            _ => {
                return Err(AutodiffError::ShapeMismatch(format!(
                    "cannot broadcast {:?} to {shape:?}",
                    self.shape(a)
                )))
            }
        }
        let out = tensor::broadcast_to(&self.nodes[a.id].value, shape);
        self.push(out, Op::BroadcastTo, &[a])
    }

    pub fn sum_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.check(a)?;
        match tensor::broadcast_shape(self.shape(a), shape) {
            Some(s) if s == self.shape(a) => {}
            _ => {
                return Err(AutodiffError::ShapeMismatch(format!(
                    "cannot reduce {:?} to {shape:?}",
                    self.shape(a)
                )))
            }
        }
        let out = tensor::sum_to(&self.nodes[a.id].value, shape);
        self.push(out, Op::SumTo, &[a])
    }

    /// Selects rows (entries along the first axis).
    pub fn index_select(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        self.check(a)?;
        let shape = self.shape(a);
        if shape.is_empty() || indices.iter().any(|&i| i >= shape[0]) {
            return Err(AutodiffError::ShapeMismatch(format!(
                "index-select {indices:?} out of range for {shape:?}"
            )));
        }
        let out = tensor::index_select_rows(&self.nodes[a.id].value, indices);
        self.push(out, Op::IndexSelect(indices.to_vec()), &[a])
    }

    fn scatter_rows(&mut self, a: Var, indices: &[usize], rows: usize) -> Result<Var> {
        let out = tensor::scatter_add_rows(&self.nodes[a.id].value, indices, rows);
        self.push(out, Op::ScatterRows(indices.to_vec()), &[a])
    }

    /// Concatenates along the first axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(AutodiffError::ShapeMismatch("concat of zero inputs".into()));
        }
        for &p in parts {
            self.check(p)?;
        }
        let first = self.shape(parts[0]).to_vec();
        if first.is_empty() {
            return Err(AutodiffError::ShapeMismatch("concat needs rank >= 1".into()));
        }
        let mut rows = Vec::with_capacity(parts.len());
        let mut data = Vec::new();
        for &p in parts {
            let v = &self.nodes[p.id].value;
            if v.shape()[1..] != first[1..] || v.rank() != first.len() {
                return Err(AutodiffError::ShapeMismatch(format!(
                    "concat: {:?} incompatible with {:?}",
                    v.shape(),
                    first
                )));
            }
            rows.push(v.shape()[0]);
            data.extend_from_slice(v.data());
        }
        let mut shape = first;
        shape[0] = rows.iter().sum();
        self.push(Tensor::from_parts(shape, data), Op::Concat(rows), parts)
    }

    /// Gradients of the scalar `output` with respect to each node in `wrt`.
    ///
    /// With `create_graph` the gradient computation is recorded so the
    /// returned gradients can be differentiated again. Nodes in `wrt` that
    /// `output` does not depend on receive zero gradients.
    pub fn grad(&mut self, output: Var, wrt: &[Var], create_graph: bool) -> Result<GradMap> {
        self.check(output)?;
        for &w in wrt {
            self.check(w)?;
            if !self.nodes[w.id].requires_grad {
                return Err(AutodiffError::NotDifferentiable(w.id));
            }
        }
        if self.nodes[output.id].value.numel() != 1 {
            return Err(AutodiffError::NonScalarOutput(self.nodes[output.id].value.shape().to_vec()));
        }

        let was_recording = self.recording;
        self.recording = create_graph;
        let result = self.backward(output, wrt);
        self.recording = was_recording;
        result
    }

    fn backward(&mut self, output: Var, wrt: &[Var]) -> Result<GradMap> {
        let end = output.id + 1;
        // nodes on some path from a wrt node to the output
        let mut relevant = vec![false; end];
        for &w in wrt {
            if w.id < end {
                relevant[w.id] = true;
            }
        }
        let start = wrt.iter().map(|w| w.id).min().unwrap_or(end);
        for i in start..end {
            if !relevant[i] && self.nodes[i].parents.iter().any(|&p| relevant[p]) {
                relevant[i] = true;
            }
        }

        let mut grads: HashMap<usize, Var> = HashMap::new();
        if relevant[output.id] {
            let seed = Tensor::full(self.nodes[output.id].value.shape(), 1.0);
            let seed = self.constant(seed);
            grads.insert(output.id, seed);
        }

        for i in (start..end).rev() {
            let Some(&g) = grads.get(&i) else { continue };
            if self.nodes[i].parents.is_empty() {
                continue;
            }
            let node = Var { graph: self.id, id: i };
            let contributions = self.vjp(node, g)?;
            let parents = self.nodes[i].parents.clone();
            for (p, contrib) in parents.into_iter().zip(contributions) {
                if !relevant[p] {
                    continue;
                }
                let Some(c) = contrib else { continue };
                let acc = match grads.get(&p) {
                    Some(&prev) => self.add(prev, c)?,
                    None => c,
                };
                grads.insert(p, acc);
            }
        }

        let mut entries = Vec::with_capacity(wrt.len());
        for &w in wrt {
            let g = match grads.get(&w.id) {
                Some(&g) => g,
                None => {
                    let z = Tensor::zeros(self.nodes[w.id].value.shape());
                    self.constant(z)
                }
            };
            entries.push((w, g));
        }
        Ok(GradMap { entries })
    }

    /// Vector-Jacobian products of `node` for each of its parents, expressed
    /// as graph operations.
    fn vjp(&mut self, node: Var, g: Var) -> Result<Vec<Option<Var>>> {
        let op = self.nodes[node.id].op.clone();
        let parents: Vec<Var> = self.nodes[node.id]
            .parents
            .iter()
            .map(|&id| Var { graph: self.id, id })
            .collect();
        let shape_of = |graph: &Graph, v: Var| graph.nodes[v.id].value.shape().to_vec();

        let out = match op {
            Op::Leaf => vec![],
            Op::Add => {
                let (a, b) = (parents[0], parents[1]);
                let (sa, sb) = (shape_of(self, a), shape_of(self, b));
                vec![Some(self.sum_to(g, &sa)?), Some(self.sum_to(g, &sb)?)]
            }
            Op::Sub => {
                let (a, b) = (parents[0], parents[1]);
                let (sa, sb) = (shape_of(self, a), shape_of(self, b));
                let ng = self.neg(g)?;
                vec![Some(self.sum_to(g, &sa)?), Some(self.sum_to(ng, &sb)?)]
            }
            Op::Mul => {
                let (a, b) = (parents[0], parents[1]);
                let (sa, sb) = (shape_of(self, a), shape_of(self, b));
                let gb = self.mul(g, b)?;
                let ga = self.mul(g, a)?;
                vec![Some(self.sum_to(gb, &sa)?), Some(self.sum_to(ga, &sb)?)]
            }
            Op::Div => {
                let (a, b) = (parents[0], parents[1]);
                let (sa, sb) = (shape_of(self, a), shape_of(self, b));
                let da = self.div(g, b)?;
                // d(a/b)/db = -(a/b)/b
                let t = self.mul(da, node)?;
                let db = self.neg(t)?;
                vec![Some(self.sum_to(da, &sa)?), Some(self.sum_to(db, &sb)?)]
            }
            Op::Neg => vec![Some(self.neg(g)?)],
            Op::ScalarMul(c) => vec![Some(self.scalar_mul(g, c)?)],
            Op::AddScalar => vec![Some(g)],
            Op::Log => vec![Some(self.div(g, parents[0])?)],
            Op::Exp => vec![Some(self.mul(g, node)?)],
            Op::Softplus => {
                let s = self.sigmoid(parents[0])?;
                vec![Some(self.mul(g, s)?)]
            }
            Op::Sigmoid => {
                // s * (1 - s)
                let ns = self.neg(node)?;
                let one_minus = self.add_scalar(ns, 1.0)?;
                let ds = self.mul(node, one_minus)?;
                vec![Some(self.mul(g, ds)?)]
            }
            Op::Relu => {
                let mask = self.nodes[parents[0].id].value.map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                let mask = self.constant(mask);
                vec![Some(self.mul(g, mask)?)]
            }
            Op::Abs => {
                let sign = self.nodes[parents[0].id].value.map(|x| {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                let sign = self.constant(sign);
                vec![Some(self.mul(g, sign)?)]
            }
            Op::MatMul => {
                let (a, b) = (parents[0], parents[1]);
                let bt = self.transpose(b)?;
                let at = self.transpose(a)?;
                vec![Some(self.matmul(g, bt)?), Some(self.matmul(at, g)?)]
            }
            Op::Transpose => vec![Some(self.transpose(g)?)],
            Op::Sum | Op::SumAxis => {
                let sa = shape_of(self, parents[0]);
                vec![Some(self.broadcast_to(g, &sa)?)]
            }
            Op::Mean => {
                let sa = shape_of(self, parents[0]);
                let n: usize = sa.iter().product();
                let b = self.broadcast_to(g, &sa)?;
                vec![Some(self.scalar_mul(b, 1.0 / n as f64)?)]
            }
            Op::BroadcastTo => {
                let sa = shape_of(self, parents[0]);
                vec![Some(self.sum_to(g, &sa)?)]
            }
            Op::SumTo => {
                let sa = shape_of(self, parents[0]);
                vec![Some(self.broadcast_to(g, &sa)?)]
            }
            Op::IndexSelect(idx) => {
                let rows = shape_of(self, parents[0])[0];
                vec![Some(self.scatter_rows(g, &idx, rows)?)]
            }
            Op::ScatterRows(idx) => vec![Some(self.index_select(g, &idx)?)],
            Op::Concat(rows) => {
                let mut offset = 0;
                let mut out = Vec::with_capacity(rows.len());
                for r in rows {
                    let idx: Vec<usize> = (offset..offset + r).collect();
                    out.push(Some(self.index_select(g, &idx)?));
                    offset += r;
                }
                out
            }
        };
        Ok(out)
    }
}

/// `ln(1 + e^z)`, returning `z` itself once `z > 30`.
pub fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_examples() {
        let mut g = Graph::new();
        let z = g.scalar(0.0);
        let s = g.build(OpKind::Softplus, &[z]).unwrap();
        assert!((g.value(s).item().unwrap() - std::f64::consts::LN_2).abs() < 1e-15);

        let a = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = g.constant(Tensor::vector(vec![3.0, 4.0]));
        let c = g.build(OpKind::Add, &[a, b]).unwrap();
        assert_eq!(g.value(c).data(), &[4.0, 6.0]);

        let m = g.constant(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let zeros = g.constant(Tensor::zeros(&[3, 1]));
        let p = g.build(OpKind::MatMul, &[m, zeros]).unwrap();
        assert_eq!(g.value(p).shape(), &[2, 1]);
        assert_eq!(g.value(p).data(), &[0.0, 0.0]);
    }

    #[test]
    fn build_errors() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let b = g.constant(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(g.build(OpKind::Add, &[a, b]), Err(AutodiffError::ShapeMismatch(_))));
        assert!(matches!(g.build(OpKind::MatMul, &[a, b]), Err(AutodiffError::ShapeMismatch(_))));
        assert!(matches!(g.build(OpKind::Neg, &[a, b]), Err(AutodiffError::ShapeMismatch(_))));
        assert!(matches!("conv2d".parse::<OpKind>(), Err(AutodiffError::UnsupportedOp(_))));
        assert_eq!("softplus".parse::<OpKind>().unwrap(), OpKind::Softplus);
    }

    #[test]
    fn non_finite_results_are_errors() {
        let mut g = Graph::new();
        let z = g.scalar(0.0);
        assert!(matches!(g.log(z), Err(AutodiffError::NonFinite(_))));
        let one = g.scalar(1.0);
        assert!(matches!(g.div(one, z), Err(AutodiffError::NonFinite(_))));
        let big = g.scalar(1000.0);
        assert!(matches!(g.exp(big), Err(AutodiffError::NonFinite(_))));
    }

    #[test]
    fn grad_errors() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0]));
        let c = g.constant(Tensor::scalar(1.0));
        let y = g.mul(x, x).unwrap();
        assert!(matches!(g.grad(y, &[x], false), Err(AutodiffError::NonScalarOutput(_))));
        let s = g.sum(y).unwrap();
        assert!(matches!(g.grad(s, &[c], false), Err(AutodiffError::NotDifferentiable(_))));

        let mut other = Graph::new();
        let foreign = other.param(Tensor::scalar(1.0));
        assert!(matches!(g.grad(s, &[foreign], false), Err(AutodiffError::NodeNotInGraph(_))));
    }

    #[test]
    fn constants_have_no_parents() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::scalar(2.0));
        let b = g.exp(a).unwrap();
        assert_eq!(g.parent_count(b), 0);
        assert!(!g.requires_grad(b));
        let x = g.param(Tensor::scalar(2.0));
        let y = g.mul(x, b).unwrap();
        assert_eq!(g.parent_count(y), 2);
    }

    #[test]
    fn stable_scalar_helpers() {
        assert_eq!(softplus(40.0), 40.0);
        assert!((softplus(-40.0) - (-40.0f64).exp()).abs() < 1e-25);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-16);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }
}
