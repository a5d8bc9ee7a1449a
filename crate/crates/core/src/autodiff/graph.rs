use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use super::params::{ParamId, ParamStore};
use super::tensor::{matmul_acc, matmul_vjp, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Param,
    MatMul,
    Add,
    Sub,
    BiasAdd,
    Scale,
    AddScalar,
    ConcatCols,
    ConcatRows,
    Relu,
    LeakyRelu,
    MaxRows,
    GatherRows,
    Mean,
    Sum,
    RowSum,
    Square,
    Sqrt,
    Reshape,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    BiasAdd(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    Relu(NodeId),
    LeakyRelu(NodeId, f64),
    MaxRows(NodeId, Vec<usize>),
    GatherRows(NodeId, Vec<usize>),
    Mean(NodeId),
    Sum(NodeId),
    RowSum(NodeId),
    Square(NodeId),
    Sqrt(NodeId),
    Reshape(NodeId),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Param => OpKind::Param,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::BiasAdd(..) => OpKind::BiasAdd,
            Op::Scale(..) => OpKind::Scale,
            Op::AddScalar(..) => OpKind::AddScalar,
            Op::ConcatCols(_) => OpKind::ConcatCols,
            Op::ConcatRows(_) => OpKind::ConcatRows,
            Op::Relu(_) => OpKind::Relu,
            Op::LeakyRelu(..) => OpKind::LeakyRelu,
            Op::MaxRows(..) => OpKind::MaxRows,
            Op::GatherRows(..) => OpKind::GatherRows,
            Op::Mean(_) => OpKind::Mean,
            Op::Sum(_) => OpKind::Sum,
            Op::RowSum(_) => OpKind::RowSum,
            Op::Square(_) => OpKind::Square,
            Op::Sqrt(_) => OpKind::Sqrt,
            Op::Reshape(_) => OpKind::Reshape,
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Define-by-run computation graph. Build a fresh graph per step, call
/// [`Graph::backward`], fold the result into the store with
/// [`ParamStore::accumulate`], then drop the graph before updating parameters.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, NodeId>,
    param_names: BTreeSet<String>,
    fault: Option<OpKind>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    /// Negative-control hook: scales every vector-Jacobian product of `kind`
    /// by 1.5 so that gradient checks have something to catch.
    pub fn inject_vjp_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            needs_grad,
        });
        id
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> [usize; 2] {
        self.nodes[id.0].value.shape()
    }

    pub fn op_kind(&self, id: NodeId) -> OpKind {
        self.nodes[id.0].op.kind()
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// A free input that does receive a gradient.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf bound to the named store entry. Repeated lookups return the same node,
    /// so every use of a shared parameter accumulates into one gradient.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<NodeId> {
        let id = store
            .id(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name:?}")))?;
        if let Some(&node) = self.params.get(&id) {
            return Ok(node);
        }
        let value = store.shared_value(id);
        let node = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            op: Op::Param,
            needs_grad: true,
        });
        self.params.insert(id, node);
        self.param_names.insert(name.to_string());
        Ok(node)
    }

    /// Names of every parameter this graph has read.
    pub fn touched_params(&self) -> &BTreeSet<String> {
        &self.param_names
    }

    pub fn param_node(&self, id: ParamId) -> Option<NodeId> {
        self.params.get(&id).copied()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(Error::shape("matmul", &va.shape(), &vb.shape()));
        }
        let mut out = Tensor::zeros(va.rows(), vb.cols());
        matmul_acc(va, vb, &mut out);
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, &sa, &sb));
        }
        Ok(())
    }

    fn zip_map(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(va.rows(), va.cols(), data).expect("shape checked")
    }

    fn map(&self, x: NodeId, f: impl Fn(f64) -> f64) -> Tensor {
        let v = self.value(x);
        Tensor::from_vec(v.rows(), v.cols(), v.data().iter().map(|&e| f(e)).collect())
            .expect("shape preserved")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let out = self.zip_map(a, b, |x, y| x + y);
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_map(a, b, |x, y| x - y);
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    /// Adds the `1 x c` row `bias` to every row of `x`.
    pub fn bias_add(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if vb.rows() != 1 || vb.cols() != vx.cols() {
            return Err(Error::shape("bias_add", &vx.shape(), &vb.shape()));
        }
        let mut out = vx.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(vb.data()) {
                *o += b;
            }
        }
        let ng = self.needs(&[x, bias]);
        Ok(self.push(out, Op::BiasAdd(x, bias), ng))
    }

    /// `x * w + b` for row-batched inputs.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let h = self.matmul(x, w)?;
        self.bias_add(h, b)
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> Result<NodeId> {
        let out = self.map(x, |v| v * s);
        let ng = self.needs(&[x]);
        Ok(self.push(out, Op::Scale(x, s), ng))
    }

    pub fn add_scalar(&mut self, x: NodeId, s: f64) -> Result<NodeId> {
        let out = self.map(x, |v| v + s);
        let ng = self.needs(&[x]);
        Ok(self.push(out, Op::AddScalar(x), ng))
    }

    /// Concatenation along the channel (column) axis.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("concat_cols of nothing"))?;
        let rows = self.value(first).rows();
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s[0] != rows {
                return Err(Error::shape("concat_cols", &self.shape(first), &s));
            }
            cols += s[1];
        }
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let ng = self.needs(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Stacks row blocks with equal column counts.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("concat_rows of nothing"))?;
        let cols = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(Error::shape("concat_rows", &self.shape(first), &v.shape()));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        let ng = self.needs(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.map(x, |v| if v > 0.0 { v } else { 0.0 });
        let ng = self.needs(&[x]);
        Ok(self.push(out, Op::Relu(x), ng))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> Result<NodeId> {
        let out = self.map(x, |v| if v > 0.0 { v } else { slope * v });
        let ng = self.needs(&[x]);
        Ok(self.push(out, Op::LeakyRelu(x, slope), ng))
    }

    /// Column-wise maximum over rows (the point axis); `1 x c`. Ties go to the first row.
    pub fn max_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        if v.rows() == 0 {
            return Err(Error::shape("max_rows", &v.shape(), &[1, v.cols()]));
        }
        let cols = v.cols();
        let mut best = v.row(0).to_vec();
        let mut arg = vec![0usize; cols];
        for r in 1..v.rows() {
            for (c, &e) in v.row(r).iter().enumerate() {
                if e > best[c] {
                    best[c] = e;
                    arg[c] = r;
                }
            }
        }
        let ng = self.needs(&[x]);
        Ok(self.push(Tensor::row_vector(best), Op::MaxRows(x, arg), ng))
    }

    pub fn gather_rows(&mut self, x: NodeId, indices: &[usize]) -> Result<NodeId> {
        let v = self.value(x);
        let cols = v.cols();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= v.rows() {
                return Err(Error::invalid(format!(
                    "gather index {i} out of range for {} rows",
                    v.rows()
                )));
            }
            data.extend_from_slice(v.row(i));
        }
        let out = Tensor::from_vec(indices.len(), cols, data)?;
        let ng = self.needs(&[x]);
        Ok(self.push(out, Op::GatherRows(x, indices.to_vec()), ng))
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        if v.is_empty() {
            return Err(Error::invalid("mean of an empty tensor"));
        }
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let ng = self.needs(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::Mean(x), ng))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.value(x).data().iter().sum::<f64>();
        let ng = self.needs(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), ng))
    }

    /// Per-row sum; `r x 1`.
    pub fn row_sum(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let data = (0..v.rows()).map(|r| v.row(r).iter().sum()).collect();
        let out = Tensor::from_vec(v.rows(), 1, data)?;
        let ng = self.needs(&[x]);
        Ok(self.push(out, Op::RowSum(x), ng))
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.map(x, |v| v * v);
        let ng = self.needs(&[x]);
        Ok(self.push(out, Op::Square(x), ng))
    }

    /// Square root; the gradient at zero is taken as zero.
    pub fn sqrt(&mut self, x: NodeId) -> Result<NodeId> {
        if let Some(v) = self.value(x).data().iter().find(|v| **v < 0.0) {
            return Err(Error::NonFinite(format!("sqrt of negative value {v}")));
        }
        let out = self.map(x, f64::sqrt);
        let ng = self.needs(&[x]);
        Ok(self.push(out, Op::Sqrt(x), ng))
    }

    pub fn reshape(&mut self, x: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let v = self.value(x);
        if rows * cols != v.len() {
            return Err(Error::shape("reshape", &v.shape(), &[rows, cols]));
        }
        let out = Tensor::from_vec(rows, cols, v.data().to_vec())?;
        let ng = self.needs(&[x]);
        Ok(self.push(out, Op::Reshape(x), ng))
    }

    /// Reverse-mode sweep from a `1 x 1` loss.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != [1, 1] {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if !lv.item().is_finite() {
            return Err(Error::NonFinite(format!("loss is {}", lv.item())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(mut g) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if self.fault == Some(node.op.kind()) {
                g.data_mut().iter_mut().for_each(|v| *v *= 1.5);
            }
            self.vjp(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let params = self.params.iter().map(|(&p, &n)| (p, n)).collect();
        Ok(Gradients { grads, params })
    }

    fn vjp(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (&*nodes[a.0].value, &*nodes[b.0].value);
                if let Some(d) = slot(nodes, grads, *a) {
                    matmul_vjp(va, vb, g, Some(d), None);
                }
                if let Some(d) = slot(nodes, grads, *b) {
                    matmul_vjp(va, vb, g, None, Some(d));
                }
            }
            Op::Add(a, b) => {
                for p in [a, b] {
                    if let Some(d) = slot(nodes, grads, *p) {
                        d.add_assign(g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = slot(nodes, grads, *a) {
                    d.add_assign(g);
                }
                if let Some(d) = slot(nodes, grads, *b) {
                    for (x, y) in d.data_mut().iter_mut().zip(g.data()) {
                        *x -= y;
                    }
                }
            }
            Op::BiasAdd(x, b) => {
                if let Some(d) = slot(nodes, grads, *x) {
                    d.add_assign(g);
                }
                if let Some(d) = slot(nodes, grads, *b) {
                    for r in 0..g.rows() {
                        for (x, y) in d.data_mut().iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                }
            }
            Op::Scale(x, s) => {
                if let Some(d) = slot(nodes, grads, *x) {
                    for (x, y) in d.data_mut().iter_mut().zip(g.data()) {
                        *x += s * y;
                    }
                }
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                if let Some(d) = slot(nodes, grads, *x) {
                    for (x, y) in d.data_mut().iter_mut().zip(g.data()) {
                        *x += y;
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(d) = slot(nodes, grads, *x) {
                    let gv = g.item();
                    d.data_mut().iter_mut().for_each(|v| *v += gv);
                }
            }
            Op::Mean(x) => {
                if let Some(d) = slot(nodes, grads, *x) {
                    let gv = g.item() / d.len() as f64;
                    d.data_mut().iter_mut().for_each(|v| *v += gv);
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = nodes[p.0].value.cols();
                    if let Some(d) = slot(nodes, grads, *p) {
                        for r in 0..g.rows() {
                            for (x, y) in d.row_mut(r).iter_mut().zip(&g.row(r)[off..off + w]) {
                                *x += y;
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut off = 0;
                for p in parts {
                    let h = nodes[p.0].value.rows();
                    if let Some(d) = slot(nodes, grads, *p) {
                        let src = &g.data()[off * c..(off + h) * c];
                        for (x, y) in d.data_mut().iter_mut().zip(src) {
                            *x += y;
                        }
                    }
                    off += h;
                }
            }
            Op::Relu(x) => {
                let vx = &nodes[x.0].value;
                if let Some(d) = slot(nodes, grads, *x) {
                    for ((dv, gv), xv) in d.data_mut().iter_mut().zip(g.data()).zip(vx.data()) {
                        if *xv > 0.0 {
                            *dv += gv;
                        }
                    }
                }
            }
            Op::LeakyRelu(x, slope) => {
                let vx = &nodes[x.0].value;
                if let Some(d) = slot(nodes, grads, *x) {
                    for ((dv, gv), xv) in d.data_mut().iter_mut().zip(g.data()).zip(vx.data()) {
                        *dv += if *xv > 0.0 { *gv } else { slope * gv };
                    }
                }
            }
            Op::MaxRows(x, arg) => {
                if let Some(d) = slot(nodes, grads, *x) {
                    let cols = d.cols();
                    for (c, &r) in arg.iter().enumerate() {
                        d.data_mut()[r * cols + c] += g.data()[c];
                    }
                }
            }
            Op::GatherRows(x, idx) => {
                if let Some(d) = slot(nodes, grads, *x) {
                    for (r, &i) in idx.iter().enumerate() {
                        for (x, y) in d.row_mut(i).iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                }
            }
            Op::RowSum(x) => {
                if let Some(d) = slot(nodes, grads, *x) {
                    for r in 0..d.rows() {
                        let gv = g.data()[r];
                        d.row_mut(r).iter_mut().for_each(|v| *v += gv);
                    }
                }
            }
            Op::Square(x) => {
                let vx = &nodes[x.0].value;
                if let Some(d) = slot(nodes, grads, *x) {
                    for ((dv, gv), xv) in d.data_mut().iter_mut().zip(g.data()).zip(vx.data()) {
                        *dv += 2.0 * xv * gv;
                    }
                }
            }
            Op::Sqrt(x) => {
                let y = &node.value;
                if let Some(d) = slot(nodes, grads, *x) {
                    for ((dv, gv), yv) in d.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        if *yv > 0.0 {
                            *dv += 0.5 * gv / yv;
                        }
                    }
                }
            }
        }
    }
}

fn slot<'g>(nodes: &[Node], grads: &'g mut [Option<Tensor>], id: NodeId) -> Option<&'g mut Tensor> {
    let node = &nodes[id.0];
    if !node.needs_grad {
        return None;
    }
    let [r, c] = node.value.shape();
    Some(grads[id.0].get_or_insert_with(|| Tensor::zeros(r, c)))
}

/// Per-node gradients produced by one backward sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, NodeId)>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, Option<&Tensor>)> + '_ {
        self.params.iter().map(|&(p, n)| (p, self.get(n)))
    }
}
