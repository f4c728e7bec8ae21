//! Append-only computation graph with reverse-mode gradients and a
//! forward-mode tangent pass that records onto the same graph.
//!
//! Because tangents are ordinary nodes, `backward` differentiates through
//! them (forward-over-reverse). The latent model relies on this to train
//! losses that contain the encoder's action Jacobian.

use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::{dim_err, Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Identifies a trainable tensor across graphs; owned by whoever stores parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf(Option<ParamId>),
    /// `x·Wᵀ + b` with inputs `[w, b, x]`.
    Affine,
    /// `x·Wᵀ` with inputs `[w, x]`.
    Linear,
    Relu,
    /// `(z > 0) ⊙ t` with inputs `[z, t]`; no gradient flows to `z`.
    ReluMask,
    Add,
    Sub,
    Mul,
    Scale(T),
    Square,
    Exp,
    Sin,
    Cos,
    /// Scales row `i` of `x` by `c[i]`, inputs `[x, c]`.
    MulCol,
    /// Row-wise inner product, inputs `[a, b]`.
    RowDot,
    Mse,
    Sum,
    SumSquares,
    /// Applies `P` scaled rotations `[[a, -b], [b, a]]` to consecutive coordinate
    /// pairs of each row of `s`, inputs `[a, b, s]`.
    BlockRot,
    ConcatCols,
    ConcatRows,
    SliceRows { start: usize, len: usize },
    SliceCols { start: usize, len: usize },
}

#[derive(Clone, Debug)]
struct Node<T> {
    op: Op<T>,
    inputs: Vec<NodeId>,
    value: Tensor<T>,
}

/// Parameter gradients produced by [`Graph::backward`].
#[derive(Clone, Debug, Default)]
pub struct Gradients<T> {
    by_param: BTreeMap<ParamId, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.by_param.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamId, &Tensor<T>)> {
        self.by_param.iter()
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }

    /// `self += weight · other`, entry by entry in parameter order.
    pub fn accumulate(&mut self, other: &Self, weight: T) {
        for (id, g) in &other.by_param {
            let scaled = g.map(|v| v * weight);
            match self.by_param.get_mut(id) {
                Some(acc) => acc.add_assign(&scaled),
                None => {
                    self.by_param.insert(*id, scaled);
                }
            }
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

fn same_shape<T: Real>(ctx: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(dim_err(ctx, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, op: Op<T>, inputs: Vec<NodeId>, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node { op, inputs, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, id: ParamId, value: Tensor<T>) -> NodeId {
        self.push(Op::Leaf(Some(id)), Vec::new(), value)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Leaf(None), Vec::new(), value)
    }

    pub fn affine(&mut self, w: NodeId, b: NodeId, x: NodeId) -> Result<NodeId> {
        let (wt, bt, xt) = (self.value(w), self.value(b), self.value(x));
        if wt.rank() != 2 {
            return Err(dim_err("affine", format!("W must be a matrix, got {:?}", wt.shape())));
        }
        let (out, inp) = wt.rows_cols();
        if bt.shape() != [out] {
            return Err(dim_err("affine", format!("W is {out}x{inp} but b has shape {:?}", bt.shape())));
        }
        if xt.rank() == 0 || xt.rows_cols().1 != inp {
            return Err(dim_err("affine", format!("W is {out}x{inp} but x has shape {:?}", xt.shape())));
        }
        let mut v = matmul_nt(xt, wt);
        let (rows, _) = v.rows_cols();
        let bias = bt.data();
        let d = v.data_mut();
        for r in 0..rows {
            for (o, &bb) in d[r * out..(r + 1) * out].iter_mut().zip(bias) {
                *o += bb;
            }
        }
        Ok(self.push(Op::Affine, vec![w, b, x], v))
    }

    pub fn linear(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        let (wt, xt) = (self.value(w), self.value(x));
        if wt.rank() != 2 || xt.rank() == 0 || xt.rows_cols().1 != wt.rows_cols().1 {
            return Err(dim_err("linear", format!("W {:?} with x {:?}", wt.shape(), xt.shape())));
        }
        let v = matmul_nt(xt, wt);
        Ok(self.push(Op::Linear, vec![w, x], v))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|a| if a > T::zero() { a } else { T::zero() });
        self.push(Op::Relu, vec![x], v)
    }

    fn relu_mask(&mut self, z: NodeId, t: NodeId) -> NodeId {
        let v = self
            .value(z)
            .zip_map(self.value(t), |zz, tt| if zz > T::zero() { tt } else { T::zero() });
        self.push(Op::ReluMask, vec![z, t], v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape("add", self.value(a), self.value(b))?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(Op::Add, vec![a, b], v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape("sub", self.value(a), self.value(b))?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(Op::Sub, vec![a, b], v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape("mul", self.value(a), self.value(b))?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(Op::Mul, vec![a, b], v))
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> NodeId {
        let v = self.value(a).map(|x| x * c);
        self.push(Op::Scale(c), vec![a], v)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x * x);
        self.push(Op::Square, vec![a], v)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(T::exp);
        self.push(Op::Exp, vec![a], v)
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(T::sin);
        self.push(Op::Sin, vec![a], v)
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(T::cos);
        self.push(Op::Cos, vec![a], v)
    }

    pub fn mul_col(&mut self, x: NodeId, c: NodeId) -> Result<NodeId> {
        let (xt, ct) = (self.value(x), self.value(c));
        let (rows, cols) = xt.rows_cols();
        if ct.len() != rows || ct.rank() > 1 {
            return Err(dim_err("mul_col", format!("x {:?} with column {:?}", xt.shape(), ct.shape())));
        }
        let mut v = xt.clone();
        for (r, &s) in ct.data().iter().enumerate() {
            for e in &mut v.data_mut()[r * cols..(r + 1) * cols] {
                *e *= s;
            }
        }
        Ok(self.push(Op::MulCol, vec![x, c], v))
    }

    pub fn row_dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape("row_dot", self.value(a), self.value(b))?;
        let at = self.value(a);
        let bt = self.value(b);
        let (rows, _) = at.rows_cols();
        let data: Vec<T> = (0..rows)
            .map(|r| at.row(r).iter().zip(bt.row(r)).map(|(&x, &y)| x * y).sum())
            .collect();
        let v = if at.rank() == 2 { Tensor::vector(data) } else { Tensor::scalar(data[0]) };
        Ok(self.push(Op::RowDot, vec![a, b], v))
    }

    /// Mean of squared elementwise differences.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape("mse", self.value(a), self.value(b))?;
        let n = self.value(a).len().max(1);
        let s: T = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        let v = Tensor::scalar(s / T::from_usize_lossy(n));
        Ok(self.push(Op::Mse, vec![a, b], v))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: T = self.value(a).data().iter().copied().sum();
        self.push(Op::Sum, vec![a], Tensor::scalar(s))
    }

    pub fn sum_squares(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).sum_squares();
        self.push(Op::SumSquares, vec![a], Tensor::scalar(s))
    }

    pub fn block_rot(&mut self, a: NodeId, b: NodeId, s: NodeId) -> Result<NodeId> {
        let (at, bt, st) = (self.value(a), self.value(b), self.value(s));
        let p = at.len();
        let (rows, cols) = st.rows_cols();
        if at.rank() != 1 || bt.shape() != at.shape() || st.rank() == 0 || cols != 2 * p {
            return Err(dim_err(
                "block_rot",
                format!("a {:?}, b {:?}, s {:?}", at.shape(), bt.shape(), st.shape()),
            ));
        }
        let mut v = Tensor::zeros(st.shape());
        let (ad, bd, sd) = (at.data(), bt.data(), st.data());
        let out = v.data_mut();
        for r in 0..rows {
            let base = r * cols;
            for j in 0..p {
                let (x, y) = (sd[base + 2 * j], sd[base + 2 * j + 1]);
                out[base + 2 * j] = ad[j] * x - bd[j] * y;
                out[base + 2 * j + 1] = bd[j] * x + ad[j] * y;
            }
        }
        Ok(self.push(Op::BlockRot, vec![a, b, s], v))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (at, bt) = (self.value(a), self.value(b));
        let ((ra, ca), (rb, cb)) = (at.rows_cols(), bt.rows_cols());
        if ra != rb || at.rank() != bt.rank() || at.rank() == 0 {
            return Err(dim_err("concat_cols", format!("{:?} with {:?}", at.shape(), bt.shape())));
        }
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            data.extend_from_slice(at.row(r));
            data.extend_from_slice(bt.row(r));
        }
        let shape = if at.rank() == 1 { vec![ca + cb] } else { vec![ra, ca + cb] };
        let v = Tensor::new(shape, data)?;
        Ok(self.push(Op::ConcatCols, vec![a, b], v))
    }

    /// Stacks inputs viewed as `(rows, cols)` blocks into one rank-2 tensor.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            return Err(Error::Contract("concat_rows of zero parts".into()));
        };
        let cols = self.value(first).rows_cols().1;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            let (r, c) = t.rows_cols();
            if c != cols {
                return Err(dim_err("concat_rows", format!("{:?} does not have {cols} columns", t.shape())));
            }
            rows += r;
            data.extend_from_slice(t.data());
        }
        let v = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(Op::ConcatRows, parts.to_vec(), v))
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let xt = self.value(x);
        let (rows, cols) = xt.rows_cols();
        if xt.rank() != 2 || start + len > rows {
            return Err(dim_err("slice_rows", format!("rows {start}..{} of {:?}", start + len, xt.shape())));
        }
        let v = Tensor::matrix(len, cols, xt.data()[start * cols..(start + len) * cols].to_vec())?;
        Ok(self.push(Op::SliceRows { start, len }, vec![x], v))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let xt = self.value(x);
        let (rows, cols) = xt.rows_cols();
        if xt.rank() == 0 || start + len > cols {
            return Err(dim_err("slice_cols", format!("cols {start}..{} of {:?}", start + len, xt.shape())));
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&xt.row(r)[start..start + len]);
        }
        let shape = if xt.rank() == 1 { vec![len] } else { vec![rows, len] };
        let v = Tensor::new(shape, data)?;
        Ok(self.push(Op::SliceCols { start, len }, vec![x], v))
    }

    /// Reverse pass from a one-element root. Gradients of every trainable leaf
    /// are returned; parameters that do not influence the root get zeros.
    pub fn backward(&self, root: NodeId) -> Result<Gradients<T>> {
        let grads = self.node_grads(root)?;
        let mut out: BTreeMap<ParamId, Tensor<T>> = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate().take(root.0 + 1) {
            if let Op::Leaf(Some(pid)) = node.op {
                let g = grads[i].clone().unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                match out.get_mut(&pid) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        out.insert(pid, g);
                    }
                }
            }
        }
        Ok(Gradients { by_param: out })
    }

    /// Gradient of the root w.r.t. an arbitrary node (zeros if unreachable).
    pub fn grad_wrt(&self, root: NodeId, node: NodeId) -> Result<Tensor<T>> {
        let grads = self.node_grads(root)?;
        Ok(grads
            .get(node.0)
            .cloned()
            .flatten()
            .unwrap_or_else(|| Tensor::zeros(self.shape(node))))
    }

    fn node_grads(&self, root: NodeId) -> Result<Vec<Option<Tensor<T>>>> {
        if self.value(root).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::filled(self.shape(root), T::one()));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            for (slot, contrib) in self.local_grads(node, &g).into_iter().enumerate() {
                if let Some(c) = contrib {
                    let target = node.inputs[slot].0;
                    match &mut grads[target] {
                        Some(acc) => acc.add_assign(&c),
                        empty => *empty = Some(c),
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    fn local_grads(&self, node: &Node<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let val = |k: usize| &self.nodes[node.inputs[k].0].value;
        let zero = T::zero();
        match &node.op {
            Op::Leaf(_) => Vec::new(),
            Op::Affine | Op::Linear => {
                let (w, x) = if matches!(node.op, Op::Affine) { (val(0), val(2)) } else { (val(0), val(1)) };
                let (out, inp) = w.rows_cols();
                let (rows, _) = x.rows_cols();
                let gd = g.data();
                let mut gw = Tensor::zeros(w.shape());
                let mut gx = Tensor::zeros(x.shape());
                {
                    let gwd = gw.data_mut();
                    for r in 0..rows {
                        let xr = x.row(r);
                        for o in 0..out {
                            let go = gd[r * out + o];
                            if go != zero {
                                for (acc, &xv) in gwd[o * inp..(o + 1) * inp].iter_mut().zip(xr) {
                                    *acc += go * xv;
                                }
                            }
                        }
                    }
                }
                {
                    let gxd = gx.data_mut();
                    let wd = w.data();
                    for r in 0..rows {
                        let dst = &mut gxd[r * inp..(r + 1) * inp];
                        for o in 0..out {
                            let go = gd[r * out + o];
                            if go != zero {
                                for (acc, &wv) in dst.iter_mut().zip(&wd[o * inp..(o + 1) * inp]) {
                                    *acc += go * wv;
                                }
                            }
                        }
                    }
                }
                if matches!(node.op, Op::Affine) {
                    let mut gb = Tensor::zeros(&[out]);
                    for r in 0..rows {
                        for (acc, &v) in gb.data_mut().iter_mut().zip(&gd[r * out..(r + 1) * out]) {
                            *acc += v;
                        }
                    }
                    vec![Some(gw), Some(gb), Some(gx)]
                } else {
                    vec![Some(gw), Some(gx)]
                }
            }
            Op::Relu => vec![Some(val(0).zip_map(g, |x, gg| if x > zero { gg } else { zero }))],
            Op::ReluMask => vec![None, Some(val(0).zip_map(g, |z, gg| if z > zero { gg } else { zero }))],
            Op::Add => vec![Some(g.clone()), Some(g.clone())],
            Op::Sub => vec![Some(g.clone()), Some(g.map(|v| -v))],
            Op::Mul => vec![Some(g.zip_map(val(1), |a, b| a * b)), Some(g.zip_map(val(0), |a, b| a * b))],
            Op::Scale(c) => {
                let c = *c;
                vec![Some(g.map(|v| v * c))]
            }
            Op::Square => {
                let two = T::lit(2.0);
                vec![Some(val(0).zip_map(g, |x, gg| two * x * gg))]
            }
            Op::Exp => vec![Some(node.value.zip_map(g, |y, gg| y * gg))],
            Op::Sin => vec![Some(val(0).zip_map(g, |x, gg| x.cos() * gg))],
            Op::Cos => vec![Some(val(0).zip_map(g, |x, gg| -x.sin() * gg))],
            Op::MulCol => {
                let (x, c) = (val(0), val(1));
                let (rows, cols) = x.rows_cols();
                let mut gx = g.clone();
                let mut gc = Tensor::zeros(c.shape());
                for r in 0..rows {
                    let s = c.data()[r];
                    let mut acc = zero;
                    for k in r * cols..(r + 1) * cols {
                        acc += g.data()[k] * x.data()[k];
                        gx.data_mut()[k] *= s;
                    }
                    gc.data_mut()[r] = acc;
                }
                vec![Some(gx), Some(gc)]
            }
            Op::RowDot => {
                let (a, b) = (val(0), val(1));
                let (rows, cols) = a.rows_cols();
                let mut ga = Tensor::zeros(a.shape());
                let mut gb = Tensor::zeros(b.shape());
                for r in 0..rows {
                    let gr = g.data()[r];
                    for k in r * cols..(r + 1) * cols {
                        ga.data_mut()[k] = gr * b.data()[k];
                        gb.data_mut()[k] = gr * a.data()[k];
                    }
                }
                vec![Some(ga), Some(gb)]
            }
            Op::Mse => {
                let (a, b) = (val(0), val(1));
                let n = T::from_usize_lossy(a.len().max(1));
                let k = T::lit(2.0) * g.item() / n;
                let ga = a.zip_map(b, |x, y| k * (x - y));
                let gb = ga.map(|v| -v);
                vec![Some(ga), Some(gb)]
            }
            Op::Sum => vec![Some(Tensor::filled(val(0).shape(), g.item()))],
            Op::SumSquares => {
                let k = T::lit(2.0) * g.item();
                vec![Some(val(0).map(|x| k * x))]
            }
            Op::BlockRot => {
                let (a, b, s) = (val(0), val(1), val(2));
                let p = a.len();
                let (rows, cols) = s.rows_cols();
                let mut ga = Tensor::zeros(a.shape());
                let mut gb = Tensor::zeros(b.shape());
                let mut gs = Tensor::zeros(s.shape());
                let (ad, bd, sd, gd) = (a.data(), b.data(), s.data(), g.data());
                for r in 0..rows {
                    let base = r * cols;
                    for j in 0..p {
                        let (x, y) = (sd[base + 2 * j], sd[base + 2 * j + 1]);
                        let (gx, gy) = (gd[base + 2 * j], gd[base + 2 * j + 1]);
                        ga.data_mut()[j] += gx * x + gy * y;
                        gb.data_mut()[j] += gy * x - gx * y;
                        gs.data_mut()[base + 2 * j] = ad[j] * gx + bd[j] * gy;
                        gs.data_mut()[base + 2 * j + 1] = ad[j] * gy - bd[j] * gx;
                    }
                }
                vec![Some(ga), Some(gb), Some(gs)]
            }
            Op::ConcatCols => {
                let (a, b) = (val(0), val(1));
                let ((rows, ca), (_, cb)) = (a.rows_cols(), b.rows_cols());
                let mut da = Vec::with_capacity(rows * ca);
                let mut db = Vec::with_capacity(rows * cb);
                for r in 0..rows {
                    let gr = g.row(r);
                    da.extend_from_slice(&gr[..ca]);
                    db.extend_from_slice(&gr[ca..]);
                }
                vec![
                    Some(Tensor::new(a.shape().to_vec(), da).expect("shape")),
                    Some(Tensor::new(b.shape().to_vec(), db).expect("shape")),
                ]
            }
            Op::ConcatRows => {
                let mut off = 0;
                node.inputs
                    .iter()
                    .map(|&id| {
                        let t = &self.nodes[id.0].value;
                        let n = t.len();
                        let part = Tensor::new(t.shape().to_vec(), g.data()[off..off + n].to_vec()).expect("shape");
                        off += n;
                        Some(part)
                    })
                    .collect()
            }
            Op::SliceRows { start, .. } => {
                let x = val(0);
                let cols = x.rows_cols().1;
                let mut gx = Tensor::zeros(x.shape());
                gx.data_mut()[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                vec![Some(gx)]
            }
            Op::SliceCols { start, len } => {
                let x = val(0);
                let (rows, cols) = x.rows_cols();
                let mut gx = Tensor::zeros(x.shape());
                for r in 0..rows {
                    gx.data_mut()[r * cols + start..r * cols + start + len].copy_from_slice(g.row(r));
                }
                vec![Some(gx)]
            }
        }
    }

    /// Records the directional derivative of `output` along `seeds` (pairs of
    /// input node and tangent node) as new graph nodes and returns the tangent
    /// of `output`. Nodes outside the dependency cone of the seeds have zero tangent.
    pub fn jvp(&mut self, seeds: &[(NodeId, NodeId)], output: NodeId) -> Result<NodeId> {
        let mut tangents: BTreeMap<usize, NodeId> = BTreeMap::new();
        for &(input, tangent) in seeds {
            if self.shape(input) != self.shape(tangent) {
                return Err(dim_err(
                    "jvp",
                    format!("tangent {:?} for input {:?}", self.shape(tangent), self.shape(input)),
                ));
            }
            tangents.insert(input.0, tangent);
        }
        let Some(&start) = tangents.keys().next() else {
            return Ok(self.constant(Tensor::zeros(self.shape(output))));
        };
        for i in start + 1..=output.0 {
            if tangents.contains_key(&i) {
                continue;
            }
            let node = self.nodes[i].clone();
            let ins: Vec<Option<NodeId>> = node.inputs.iter().map(|id| tangents.get(&id.0).copied()).collect();
            if ins.iter().all(Option::is_none) {
                continue;
            }
            if let Some(t) = self.tangent_rule(NodeId(i), &node, &ins)? {
                tangents.insert(i, t);
            }
        }
        match tangents.get(&output.0) {
            Some(&t) => Ok(t),
            None => Ok(self.constant(Tensor::zeros(self.shape(output)))),
        }
    }

    fn zeros_like(&mut self, id: NodeId) -> NodeId {
        let z = Tensor::zeros(self.shape(id));
        self.constant(z)
    }

    fn or_zeros(&mut self, t: Option<NodeId>, like: NodeId) -> NodeId {
        match t {
            Some(t) => t,
            None => self.zeros_like(like),
        }
    }

    fn add_opt(&mut self, a: Option<NodeId>, b: Option<NodeId>) -> Result<Option<NodeId>> {
        Ok(match (a, b) {
            (Some(a), Some(b)) => Some(self.add(a, b)?),
            (a, None) => a,
            (None, b) => b,
        })
    }

    fn tangent_rule(&mut self, me: NodeId, node: &Node<T>, dt: &[Option<NodeId>]) -> Result<Option<NodeId>> {
        let inp = &node.inputs;
        let t = match node.op {
            Op::Leaf(_) => None,
            Op::Affine => {
                let (w, b, x) = (inp[0], inp[1], inp[2]);
                let through_x = match dt[2] {
                    Some(dx) => Some(self.linear(w, dx)?),
                    None => None,
                };
                let through_params = if dt[0].is_some() || dt[1].is_some() {
                    let dw = self.or_zeros(dt[0], w);
                    let db = self.or_zeros(dt[1], b);
                    Some(self.affine(dw, db, x)?)
                } else {
                    None
                };
                self.add_opt(through_x, through_params)?
            }
            Op::Linear => {
                let (w, x) = (inp[0], inp[1]);
                let tx = match dt[1] {
                    Some(dx) => Some(self.linear(w, dx)?),
                    None => None,
                };
                let tw = match dt[0] {
                    Some(dw) => Some(self.linear(dw, x)?),
                    None => None,
                };
                self.add_opt(tx, tw)?
            }
            Op::Relu => dt[0].map(|dz| self.relu_mask(inp[0], dz)),
            Op::ReluMask => dt[1].map(|d| self.relu_mask(inp[0], d)),
            Op::Add => self.add_opt(dt[0], dt[1])?,
            Op::Sub => match (dt[0], dt[1]) {
                (Some(a), Some(b)) => Some(self.sub(a, b)?),
                (Some(a), None) => Some(a),
                (None, Some(b)) => Some(self.scale(b, -T::one())),
                (None, None) => None,
            },
            Op::Mul => {
                let l = match dt[0] {
                    Some(da) => Some(self.mul(da, inp[1])?),
                    None => None,
                };
                let r = match dt[1] {
                    Some(db) => Some(self.mul(inp[0], db)?),
                    None => None,
                };
                self.add_opt(l, r)?
            }
            Op::Scale(c) => dt[0].map(|d| self.scale(d, c)),
            Op::Square => match dt[0] {
                Some(d) => {
                    let two_x = self.scale(inp[0], T::lit(2.0));
                    Some(self.mul(two_x, d)?)
                }
                None => None,
            },
            Op::Exp => match dt[0] {
                Some(d) => Some(self.mul(me, d)?),
                None => None,
            },
            Op::Sin => match dt[0] {
                Some(d) => {
                    let c = self.cos(inp[0]);
                    Some(self.mul(c, d)?)
                }
                None => None,
            },
            Op::Cos => match dt[0] {
                Some(d) => {
                    let s = self.sin(inp[0]);
                    let ns = self.scale(s, -T::one());
                    Some(self.mul(ns, d)?)
                }
                None => None,
            },
            Op::MulCol => {
                let l = match dt[0] {
                    Some(dx) => Some(self.mul_col(dx, inp[1])?),
                    None => None,
                };
                let r = match dt[1] {
                    Some(dc) => Some(self.mul_col(inp[0], dc)?),
                    None => None,
                };
                self.add_opt(l, r)?
            }
            Op::RowDot => {
                let l = match dt[0] {
                    Some(da) => Some(self.row_dot(da, inp[1])?),
                    None => None,
                };
                let r = match dt[1] {
                    Some(db) => Some(self.row_dot(inp[0], db)?),
                    None => None,
                };
                self.add_opt(l, r)?
            }
            Op::Mse => {
                let n = T::from_usize_lossy(self.value(inp[0]).len().max(1));
                let diff = self.sub(inp[0], inp[1])?;
                let ddiff = match (dt[0], dt[1]) {
                    (Some(a), Some(b)) => self.sub(a, b)?,
                    (Some(a), None) => a,
                    (None, Some(b)) => self.scale(b, -T::one()),
                    (None, None) => unreachable!(),
                };
                let prod = self.mul(diff, ddiff)?;
                let s = self.sum(prod);
                Some(self.scale(s, T::lit(2.0) / n))
            }
            Op::Sum => dt[0].map(|d| self.sum(d)),
            Op::SumSquares => match dt[0] {
                Some(d) => {
                    let prod = self.mul(inp[0], d)?;
                    let s = self.sum(prod);
                    Some(self.scale(s, T::lit(2.0)))
                }
                None => None,
            },
            Op::BlockRot => {
                let (a, b, s) = (inp[0], inp[1], inp[2]);
                let through_s = match dt[2] {
                    Some(ds) => Some(self.block_rot(a, b, ds)?),
                    None => None,
                };
                let through_ab = if dt[0].is_some() || dt[1].is_some() {
                    let da = self.or_zeros(dt[0], a);
                    let db = self.or_zeros(dt[1], b);
                    Some(self.block_rot(da, db, s)?)
                } else {
                    None
                };
                self.add_opt(through_s, through_ab)?
            }
            Op::ConcatCols => {
                let da = self.or_zeros(dt[0], inp[0]);
                let db = self.or_zeros(dt[1], inp[1]);
                Some(self.concat_cols(da, db)?)
            }
            Op::ConcatRows => {
                let parts: Vec<NodeId> = inp
                    .iter()
                    .zip(dt)
                    .map(|(&x, &d)| self.or_zeros(d, x))
                    .collect();
                Some(self.concat_rows(&parts)?)
            }
            Op::SliceRows { start, len } => match dt[0] {
                Some(d) => Some(self.slice_rows(d, start, len)?),
                None => None,
            },
            Op::SliceCols { start, len } => match dt[0] {
                Some(d) => Some(self.slice_cols(d, start, len)?),
                None => None,
            },
        };
        Ok(t)
    }
}

/// `x·Wᵀ` keeping the rank of `x`.
fn matmul_nt<T: Real>(x: &Tensor<T>, w: &Tensor<T>) -> Tensor<T> {
    let (rows, inp) = x.rows_cols();
    let (out, _) = w.rows_cols();
    let mut data = vec![T::zero(); rows * out];
    let (xd, wd) = (x.data(), w.data());
    for r in 0..rows {
        let xr = &xd[r * inp..(r + 1) * inp];
        for o in 0..out {
            let wr = &wd[o * inp..(o + 1) * inp];
            let mut acc = T::zero();
            for k in 0..inp {
                acc += xr[k] * wr[k];
            }
            data[r * out + o] = acc;
        }
    }
    let shape = if x.rank() == 1 { vec![out] } else { vec![rows, out] };
    Tensor::new(shape, data).expect("matmul shape")
}
