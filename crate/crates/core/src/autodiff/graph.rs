use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use super::kernels::{self, ConvGeom, LinearMap};
use super::tensor::{inner_size, outer_size, Tensor};
use crate::error::{Error, Result};
use crate::real::Real;

type Id = usize;

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add(Id, Id),
    Sub(Id, Id),
    Mul(Id, Id),
    Scale(Id, f64),
    AddScalar(Id),
    Square(Id),
    Sqrt(Id),
    Recip(Id),
    Exp(Id),
    Log(Id),
    LeakyRelu(Id, f64),
    MaxConst(Id, f64),
    MatMul { a: Id, b: Id, ta: bool, tb: bool },
    Conv { x: Id, w: Id, stride: usize },
    ConvInputGrad { g: Id, w: Id, stride: usize },
    ConvWeightGrad { x: Id, g: Id, stride: usize },
    Resample(Id, Rc<LinearMap>),
    BroadcastTo(Id),
    SumTo(Id),
    Reshape(Id),
    Slice { a: Id, axis: usize, start: usize },
    Pad { a: Id, axis: usize, before: usize },
}

impl Op {
    fn inputs(&self) -> Vec<Id> {
        use Op::*;
        match *self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) => vec![a, b],
            Scale(a, _) | AddScalar(a) | Square(a) | Sqrt(a) | Recip(a) | Exp(a) | Log(a) => {
                vec![a]
            }
            LeakyRelu(a, _) | MaxConst(a, _) => vec![a],
            MatMul { a, b, .. } => vec![a, b],
            Conv { x, w, .. } => vec![x, w],
            ConvInputGrad { g, w, .. } => vec![g, w],
            ConvWeightGrad { x, g, .. } => vec![x, g],
            Resample(a, _) | BroadcastTo(a) | SumTo(a) | Reshape(a) => vec![a],
            Slice { a, .. } | Pad { a, .. } => vec![a],
        }
    }
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op,
    requires_grad: bool,
}

/// An append-only record of tensor operations supporting reverse-mode
/// differentiation, including differentiation of recorded backward passes.
pub struct Graph<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    recording: Cell<bool>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> fmt::Debug for Graph<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph").field("nodes", &self.len()).finish()
    }
}

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T: Real> {
    graph: &'g Graph<T>,
    id: Id,
}

impl<T: Real> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.shape())
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            recording: Cell::new(true),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Input that gradients can be taken with respect to.
    pub fn variable(&self, value: Tensor<T>) -> Result<Var<'_, T>> {
        self.leaf(value, true)
    }

    /// Input that is never differentiated.
    pub fn constant(&self, value: Tensor<T>) -> Result<Var<'_, T>> {
        self.leaf(value, false)
    }

    pub fn scalar(&self, value: f64) -> Result<Var<'_, T>> {
        self.constant(Tensor::scalar(T::from_f64(value)))
    }

    fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Result<Var<'_, T>> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: "input" });
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var {
            graph: self,
            id: nodes.len() - 1,
        })
    }

    fn push(&self, name: &'static str, value: Tensor<T>, op: Op) -> Result<Var<'_, T>> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad =
            self.recording.get() && op.inputs().iter().any(|&i| nodes[i].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Ok(Var {
            graph: self,
            id: nodes.len() - 1,
        })
    }

    fn value(&self, id: Id) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn var(&self, id: Id) -> Var<'_, T> {
        Var { graph: self, id }
    }

    fn release(&self, id: Id) {
        self.nodes.borrow_mut()[id].value = Rc::new(Tensor::empty());
    }

    /// Gradients of the scalar `output` with respect to each of `wrt`.
    ///
    /// With `create_graph` the backward pass is itself recorded, so the returned
    /// gradients can be differentiated again. Inputs that do not influence
    /// `output` receive zero gradients.
    pub fn grad<'g>(
        &'g self,
        output: Var<'g, T>,
        wrt: &[Var<'g, T>],
        create_graph: bool,
    ) -> Result<Vec<Var<'g, T>>> {
        if !std::ptr::eq(output.graph, self) {
            return Err(Error::Gradient(
                "output belongs to a different graph".into(),
            ));
        }
        if !output.value().is_scalar() {
            return Err(Error::Gradient(format!(
                "output must be scalar, has shape {:?}",
                output.shape()
            )));
        }
        for w in wrt {
            if !std::ptr::eq(w.graph, self) {
                return Err(Error::Gradient("wrt tensor is not in this graph".into()));
            }
            if !self.nodes.borrow()[w.id].requires_grad {
                return Err(Error::Gradient(format!(
                    "wrt tensor #{} does not require grad",
                    w.id
                )));
            }
        }

        let end = output.id + 1;
        let (ops, requires): (Vec<Op>, Vec<bool>) = {
            let nodes = self.nodes.borrow();
            nodes[..end]
                .iter()
                .map(|n| (n.op.clone(), n.requires_grad))
                .unzip()
        };
        let mut reach = vec![false; end];
        for w in wrt {
            if w.id < end {
                reach[w.id] = true;
            }
        }
        for id in 0..end {
            if !reach[id] && requires[id] {
                reach[id] = ops[id].inputs().iter().any(|&i| reach[i]);
            }
        }

        let previous = self.recording.replace(create_graph);
        let result = self.backward_pass(output, wrt, &ops, &requires, &reach, create_graph);
        self.recording.set(previous);
        result
    }

    fn backward_pass<'g>(
        &'g self,
        output: Var<'g, T>,
        wrt: &[Var<'g, T>],
        ops: &[Op],
        requires: &[bool],
        reach: &[bool],
        create_graph: bool,
    ) -> Result<Vec<Var<'g, T>>> {
        let end = ops.len();
        let mut adj: Vec<Option<Id>> = vec![None; end];
        // References from adjoint slots to grad nodes; only used to free memory
        // when the backward pass is not recorded.
        let mut held: HashMap<Id, usize> = HashMap::new();
        let keep: Vec<Id> = wrt.iter().map(|w| w.id).collect();

        if reach[output.id] {
            let seed = self.constant(Tensor::full(output.value().shape(), T::one()))?;
            adj[output.id] = Some(seed.id);
            *held.entry(seed.id).or_default() += 1;
        }

        for id in (0..end).rev() {
            let Some(gid) = adj[id] else { continue };
            if matches!(ops[id], Op::Leaf) || !reach[id] {
                continue;
            }
            let mark = self.len();
            let contributions = self.backward_rule(id, &ops[id], self.var(gid), requires, reach)?;
            let mut fresh = Vec::with_capacity(contributions.len());
            for (input, g) in contributions {
                let next = match adj[input] {
                    None => g,
                    Some(prev) => {
                        let sum = self.var(prev).add(g)?;
                        if !create_graph {
                            release_held(self, &mut held, prev, end, &keep);
                        }
                        sum
                    }
                };
                adj[input] = Some(next.id);
                *held.entry(next.id).or_default() += 1;
                fresh.push(next.id);
            }
            if !create_graph {
                if !keep.contains(&id) {
                    release_held(self, &mut held, gid, end, &keep);
                    adj[id] = None;
                }
                for tmp in mark..self.len() {
                    if !held.contains_key(&tmp) && !keep.contains(&tmp) {
                        self.release(tmp);
                    }
                }
            }
        }

        wrt.iter()
            .map(|w| match adj.get(w.id).copied().flatten() {
                Some(g) => Ok(self.var(g)),
                None => self.constant(Tensor::zeros(w.value().shape())),
            })
            .collect()
    }

    fn backward_rule<'g>(
        &'g self,
        id: Id,
        op: &Op,
        g: Var<'g, T>,
        requires: &[bool],
        reach: &[bool],
    ) -> Result<Vec<(Id, Var<'g, T>)>> {
        let wants = |i: Id| requires[i] && reach[i];
        let v = |i: Id| self.var(i);
        let mut out = Vec::new();
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if wants(a) {
                    out.push((a, g));
                }
                if wants(b) {
                    out.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if wants(a) {
                    out.push((a, g));
                }
                if wants(b) {
                    out.push((b, g.scale(-1.0)?));
                }
            }
            Op::Mul(a, b) => {
                if wants(a) {
                    out.push((a, g.mul(v(b))?));
                }
                if wants(b) {
                    out.push((b, g.mul(v(a))?));
                }
            }
            Op::Scale(a, c) => out.push((a, g.scale(c)?)),
            Op::AddScalar(a) => out.push((a, g)),
            Op::Square(a) => out.push((a, g.mul(v(a))?.scale(2.0)?)),
            Op::Sqrt(a) => out.push((a, g.mul(v(id).recip()?)?.scale(0.5)?)),
            Op::Recip(a) => out.push((a, g.mul(v(id).square()?)?.scale(-1.0)?)),
            Op::Exp(a) => out.push((a, g.mul(v(id))?)),
            Op::Log(a) => out.push((a, g.mul(v(a).recip()?)?)),
            Op::LeakyRelu(a, slope) => {
                let s = T::from_f64(slope);
                let mask = v(a)
                    .value()
                    .map(|x| if x >= T::zero() { T::one() } else { s });
                out.push((a, g.mul(self.constant(mask)?)?));
            }
            Op::MaxConst(a, c) => {
                let c = T::from_f64(c);
                let mask = v(a)
                    .value()
                    .map(|x| if x >= c { T::one() } else { T::zero() });
                out.push((a, g.mul(self.constant(mask)?)?));
            }
            Op::MatMul { a, b, ta, tb } => {
                if wants(a) {
                    let da = if ta {
                        v(b).matmul_t(g, tb, true)?
                    } else {
                        g.matmul_t(v(b), false, !tb)?
                    };
                    out.push((a, da));
                }
                if wants(b) {
                    let db = if tb {
                        g.matmul_t(v(a), true, ta)?
                    } else {
                        v(a).matmul_t(g, !ta, false)?
                    };
                    out.push((b, db));
                }
            }
            Op::Conv { x, w, stride } => {
                if wants(x) {
                    let in_len = v(x).shape()[2];
                    out.push((x, g.conv1d_input_grad(v(w), stride, in_len)?));
                }
                if wants(w) {
                    let kernel = v(w).shape()[2];
                    out.push((w, v(x).conv1d_weight_grad(g, stride, kernel)?));
                }
            }
            Op::ConvInputGrad { g: gin, w, stride } => {
                if wants(gin) {
                    out.push((gin, g.conv1d(v(w), stride)?));
                }
                if wants(w) {
                    let kernel = v(w).shape()[2];
                    out.push((w, g.conv1d_weight_grad(v(gin), stride, kernel)?));
                }
            }
            Op::ConvWeightGrad { x, g: gin, stride } => {
                if wants(x) {
                    let in_len = v(x).shape()[2];
                    out.push((x, v(gin).conv1d_input_grad(g, stride, in_len)?));
                }
                if wants(gin) {
                    out.push((gin, v(x).conv1d(g, stride)?));
                }
            }
            Op::Resample(a, ref map) => out.push((a, g.resample(&Rc::new(map.transpose()))?)),
            Op::BroadcastTo(a) => out.push((a, g.sum_to(&v(a).shape())?)),
            Op::SumTo(a) => out.push((a, g.broadcast_to(&v(a).shape())?)),
            Op::Reshape(a) => out.push((a, g.reshape(&v(a).shape())?)),
            Op::Slice { a, axis, start } => {
                let full = v(a).shape()[axis];
                let len = g.shape()[axis];
                out.push((a, g.pad(axis, start, full - start - len)?));
            }
            Op::Pad { a, axis, before } => {
                let len = v(a).shape()[axis];
                out.push((a, g.slice(axis, before, len)?));
            }
        }
        Ok(out)
    }
}

fn release_held<T: Real>(
    graph: &Graph<T>,
    held: &mut HashMap<Id, usize>,
    id: Id,
    first_grad_node: Id,
    keep: &[Id],
) {
    if let Some(count) = held.get_mut(&id) {
        *count -= 1;
        if *count == 0 {
            held.remove(&id);
            if id >= first_grad_node && !keep.contains(&id) {
                graph.release(id);
            }
        }
    }
}

fn broadcast_compatible(from: &[usize], to: &[usize]) -> bool {
    from.len() == to.len() && from.iter().zip(to).all(|(&f, &t)| f == t || f == 1)
}

/// For each element of `big` (row-major), the flat index into the
/// broadcast-compatible `small`.
fn broadcast_indices(small: &[usize], big: &[usize]) -> Vec<usize> {
    let nd = big.len();
    let mut strides = vec![0usize; nd];
    let mut acc = 1;
    for d in (0..nd).rev() {
        strides[d] = if small[d] == 1 { 0 } else { acc };
        acc *= small[d];
    }
    let total: usize = big.iter().product();
    let mut idx = vec![0usize; nd];
    let mut out = Vec::with_capacity(total);
    let mut flat = 0usize;
    for _ in 0..total {
        out.push(flat);
        for d in (0..nd).rev() {
            idx[d] += 1;
            flat += strides[d];
            if idx[d] < big[d] {
                break;
            }
            flat -= strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    out
}

impl<'g, T: Real> Var<'g, T> {
    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.graph.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// First element as f64.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    /// Same value, cut from the recorded history.
    pub fn detach(&self) -> Result<Var<'g, T>> {
        self.graph.constant((*self.value()).clone())
    }

    fn same_shape(
        &self,
        other: &Var<'g, T>,
        op: &'static str,
    ) -> Result<(Rc<Tensor<T>>, Rc<Tensor<T>>)> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", a.shape(), b.shape()),
            ));
        }
        Ok((a, b))
    }

    fn binary(
        &self,
        other: Var<'g, T>,
        name: &'static str,
        op: Op,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var<'g, T>> {
        let (a, b) = self.same_shape(&other, name)?;
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.graph.push(name, Tensor::new(a.shape(), data)?, op)
    }

    fn unary(&self, name: &'static str, op: Op, f: impl Fn(T) -> T) -> Result<Var<'g, T>> {
        let value = self.value().map(f);
        self.graph.push(name, value, op)
    }

    pub fn add(&self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(&self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Result<Var<'g, T>> {
        let k = T::from_f64(c);
        self.unary("scale", Op::Scale(self.id, c), |x| x * k)
    }

    pub fn neg(&self) -> Result<Var<'g, T>> {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Result<Var<'g, T>> {
        let k = T::from_f64(c);
        self.unary("add_scalar", Op::AddScalar(self.id), |x| x + k)
    }

    pub fn square(&self) -> Result<Var<'g, T>> {
        self.unary("square", Op::Square(self.id), |x| x * x)
    }

    pub fn sqrt(&self) -> Result<Var<'g, T>> {
        if self.value().data().iter().any(|&x| x < T::zero()) {
            return Err(Error::Numeric("sqrt of negative value".into()));
        }
        self.unary("sqrt", Op::Sqrt(self.id), |x| x.sqrt())
    }

    /// `1/x`, with `1/0` defined as 0 so that the gradient of a norm at the
    /// origin is zero rather than infinite.
    pub fn recip(&self) -> Result<Var<'g, T>> {
        self.unary("recip", Op::Recip(self.id), |x| {
            if x == T::zero() {
                T::zero()
            } else {
                T::one() / x
            }
        })
    }

    pub fn exp(&self) -> Result<Var<'g, T>> {
        self.unary("exp", Op::Exp(self.id), |x| x.exp())
    }

    pub fn log(&self) -> Result<Var<'g, T>> {
        self.unary("log", Op::Log(self.id), |x| x.ln())
    }

    /// `x` for `x >= 0`, `slope * x` otherwise; the derivative at 0 is 1.
    pub fn leaky_relu(&self, slope: f64) -> Result<Var<'g, T>> {
        let s = T::from_f64(slope);
        self.unary("leaky_relu", Op::LeakyRelu(self.id, slope), |x| {
            if x >= T::zero() {
                x
            } else {
                s * x
            }
        })
    }

    /// `max(x, c)`; the derivative at `x == c` is 1.
    pub fn max_const(&self, c: f64) -> Result<Var<'g, T>> {
        let k = T::from_f64(c);
        self.unary("max_const", Op::MaxConst(self.id, c), |x| {
            if x >= k {
                x
            } else {
                k
            }
        })
    }

    pub fn matmul(&self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.matmul_t(other, false, false)
    }

    /// `op(self) * op(other)` where `op` transposes when the flag is set.
    pub fn matmul_t(&self, other: Var<'g, T>, ta: bool, tb: bool) -> Result<Var<'g, T>> {
        let (a, b) = (self.value(), other.value());
        if a.shape().len() != 2 || b.shape().len() != 2 {
            return Err(Error::shape("matmul", "operands must be 2-D"));
        }
        let sa = [a.shape()[0], a.shape()[1]];
        let sb = [b.shape()[0], b.shape()[1]];
        let inner_a = if ta { sa[0] } else { sa[1] };
        let inner_b = if tb { sb[1] } else { sb[0] };
        if inner_a != inner_b {
            return Err(Error::shape(
                "matmul",
                format!("{sa:?} x {sb:?} (ta={ta}, tb={tb})"),
            ));
        }
        let (data, shape) = kernels::matmul(a.data(), sa, ta, b.data(), sb, tb);
        self.graph.push(
            "matmul",
            Tensor::new(&shape, data)?,
            Op::MatMul {
                a: self.id,
                b: other.id,
                ta,
                tb,
            },
        )
    }

    fn conv_geom(x: &[usize], w: &[usize], stride: usize, op: &'static str) -> Result<ConvGeom> {
        if x.len() != 3 || w.len() != 3 {
            return Err(Error::shape(
                op,
                "expected batch x channels x length input and out x in x kernel weights",
            ));
        }
        if x[1] != w[1] {
            return Err(Error::shape(
                op,
                format!(
                    "channel mismatch: input has {}, weights expect {}",
                    x[1], w[1]
                ),
            ));
        }
        if stride == 0 || w[2] % 2 == 0 {
            return Err(Error::shape(op, "stride must be >= 1 and kernel width odd"));
        }
        Ok(ConvGeom {
            batch: x[0],
            in_ch: x[1],
            out_ch: w[0],
            kernel: w[2],
            stride,
            in_len: x[2],
        })
    }

    /// Cross-correlation with "same" zero padding, sampled every `stride` steps
    /// starting at index 0.
    pub fn conv1d(&self, w: Var<'g, T>, stride: usize) -> Result<Var<'g, T>> {
        let (x, wv) = (self.value(), w.value());
        let geom = Self::conv_geom(x.shape(), wv.shape(), stride, "conv1d")?;
        let y = kernels::conv_forward(x.data(), wv.data(), &geom);
        let shape = [geom.batch, geom.out_ch, geom.out_len()];
        self.graph.push(
            "conv1d",
            Tensor::new(&shape, y)?,
            Op::Conv {
                x: self.id,
                w: w.id,
                stride,
            },
        )
    }

    /// Adjoint of [`Var::conv1d`] in its input (`self` is output-shaped).
    pub fn conv1d_input_grad(
        &self,
        w: Var<'g, T>,
        stride: usize,
        in_len: usize,
    ) -> Result<Var<'g, T>> {
        let (g, wv) = (self.value(), w.value());
        let (gs, ws) = (g.shape(), wv.shape());
        if gs.len() != 3 || ws.len() != 3 || gs[1] != ws[0] {
            return Err(Error::shape(
                "conv1d_input_grad",
                format!("{gs:?} vs weights {ws:?}"),
            ));
        }
        let geom = ConvGeom {
            batch: gs[0],
            in_ch: ws[1],
            out_ch: ws[0],
            kernel: ws[2],
            stride,
            in_len,
        };
        if geom.out_len() != gs[2] {
            return Err(Error::shape(
                "conv1d_input_grad",
                "output length inconsistent with in_len",
            ));
        }
        let dx = kernels::conv_input_grad(g.data(), wv.data(), &geom);
        self.graph.push(
            "conv1d_input_grad",
            Tensor::new(&[geom.batch, geom.in_ch, in_len], dx)?,
            Op::ConvInputGrad {
                g: self.id,
                w: w.id,
                stride,
            },
        )
    }

    /// Adjoint of [`Var::conv1d`] in its weights (`self` is the input, `g` output-shaped).
    pub fn conv1d_weight_grad(
        &self,
        g: Var<'g, T>,
        stride: usize,
        kernel: usize,
    ) -> Result<Var<'g, T>> {
        let (x, gv) = (self.value(), g.value());
        let (xs, gs) = (x.shape(), gv.shape());
        if xs.len() != 3 || gs.len() != 3 || xs[0] != gs[0] {
            return Err(Error::shape(
                "conv1d_weight_grad",
                format!("{xs:?} vs {gs:?}"),
            ));
        }
        let geom = ConvGeom {
            batch: xs[0],
            in_ch: xs[1],
            out_ch: gs[1],
            kernel,
            stride,
            in_len: xs[2],
        };
        if geom.out_len() != gs[2] {
            return Err(Error::shape(
                "conv1d_weight_grad",
                "output length inconsistent with input",
            ));
        }
        let dw = kernels::conv_weight_grad(x.data(), gv.data(), &geom);
        self.graph.push(
            "conv1d_weight_grad",
            Tensor::new(&[geom.out_ch, geom.in_ch, kernel], dw)?,
            Op::ConvWeightGrad {
                x: self.id,
                g: g.id,
                stride,
            },
        )
    }

    /// Apply a fixed linear map along the last axis.
    pub fn resample(&self, map: &Rc<LinearMap>) -> Result<Var<'g, T>> {
        let v = self.value();
        let mut shape = v.shape().to_vec();
        let last = shape.len() - 1;
        if shape[last] != map.in_len {
            return Err(Error::shape(
                "resample",
                format!("length {} but map expects {}", shape[last], map.in_len),
            ));
        }
        shape[last] = map.out_len;
        let y = map.apply(v.data());
        self.graph.push(
            "resample",
            Tensor::new(&shape, y)?,
            Op::Resample(self.id, Rc::clone(map)),
        )
    }

    /// Repeat along axes where `self` has extent 1.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Var<'g, T>> {
        let v = self.value();
        if !broadcast_compatible(v.shape(), shape) {
            return Err(Error::shape(
                "broadcast_to",
                format!("{:?} -> {shape:?}", v.shape()),
            ));
        }
        if v.shape() == shape {
            return Ok(*self);
        }
        let src = v.data();
        let data = broadcast_indices(v.shape(), shape)
            .into_iter()
            .map(|i| src[i])
            .collect();
        self.graph.push(
            "broadcast_to",
            Tensor::new(shape, data)?,
            Op::BroadcastTo(self.id),
        )
    }

    /// Sum over the axes where `shape` has extent 1.
    pub fn sum_to(&self, shape: &[usize]) -> Result<Var<'g, T>> {
        let v = self.value();
        if !broadcast_compatible(shape, v.shape()) {
            return Err(Error::shape(
                "sum_to",
                format!("{:?} -> {shape:?}", v.shape()),
            ));
        }
        if v.shape() == shape {
            return Ok(*self);
        }
        let mut data = vec![T::zero(); shape.iter().product()];
        for (&x, i) in v.data().iter().zip(broadcast_indices(shape, v.shape())) {
            data[i] += x;
        }
        self.graph
            .push("sum_to", Tensor::new(shape, data)?, Op::SumTo(self.id))
    }

    pub fn sum_all(&self) -> Result<Var<'g, T>> {
        let ones = vec![1; self.shape().len()];
        self.sum_to(&ones)?.reshape(&[1])
    }

    pub fn mean_all(&self) -> Result<Var<'g, T>> {
        let n = self.value().len();
        self.sum_all()?.scale(1.0 / n as f64)
    }

    /// Mean over one axis, keeping it with extent 1.
    pub fn mean_axis(&self, axis: usize) -> Result<Var<'g, T>> {
        let mut shape = self.shape();
        let n = shape[axis];
        shape[axis] = 1;
        self.sum_to(&shape)?.scale(1.0 / n as f64)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'g, T>> {
        let v = self.value();
        if v.shape() == shape {
            return Ok(*self);
        }
        let value = (*v).clone().reshaped(shape)?;
        self.graph.push("reshape", value, Op::Reshape(self.id))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Var<'g, T>> {
        let v = self.value();
        let shape = v.shape();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::shape(
                "slice",
                format!("{start}+{len} on axis {axis} of {shape:?}"),
            ));
        }
        let (outer, inner, dim) = (
            outer_size(shape, axis),
            inner_size(shape, axis),
            shape[axis],
        );
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            data.extend_from_slice(&v.data()[base..base + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        self.graph.push(
            "slice",
            Tensor::new(&out_shape, data)?,
            Op::Slice {
                a: self.id,
                axis,
                start,
            },
        )
    }

    /// Zero-pad `axis` with `before` leading and `after` trailing entries.
    pub fn pad(&self, axis: usize, before: usize, after: usize) -> Result<Var<'g, T>> {
        let v = self.value();
        let shape = v.shape();
        if axis >= shape.len() {
            return Err(Error::shape("pad", format!("axis {axis} of {shape:?}")));
        }
        let (outer, inner, dim) = (
            outer_size(shape, axis),
            inner_size(shape, axis),
            shape[axis],
        );
        let new_dim = before + dim + after;
        let mut data = vec![T::zero(); outer * new_dim * inner];
        for o in 0..outer {
            let src = &v.data()[o * dim * inner..(o + 1) * dim * inner];
            let dst = (o * new_dim + before) * inner;
            data[dst..dst + dim * inner].copy_from_slice(src);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = new_dim;
        self.graph.push(
            "pad",
            Tensor::new(&out_shape, data)?,
            Op::Pad {
                a: self.id,
                axis,
                before,
            },
        )
    }

    /// Concatenate along `axis`.
    pub fn concat(&self, other: Var<'g, T>, axis: usize) -> Result<Var<'g, T>> {
        let (a, b) = (self.shape(), other.shape());
        let compatible = a.len() == b.len() && (0..a.len()).all(|d| d == axis || a[d] == b[d]);
        if !compatible {
            return Err(Error::shape(
                "concat",
                format!("{a:?} with {b:?} on axis {axis}"),
            ));
        }
        self.pad(axis, 0, b[axis])?
            .add(other.pad(axis, a[axis], 0)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn square_forward_and_grad() {
        let g = Graph::<f64>::new();
        let x = g.variable(t(&[1], &[3.0])).unwrap();
        let y = x.square().unwrap();
        assert_eq!(y.item(), 9.0);
        let dx = g.grad(y, &[x], false).unwrap();
        assert_eq!(dx[0].item(), 6.0);
    }

    #[test]
    fn leaky_relu_values_and_slopes() {
        let g = Graph::<f64>::new();
        let x = g.variable(t(&[1], &[-2.0])).unwrap();
        let y = x.leaky_relu(0.2).unwrap();
        assert!((y.item() + 0.4).abs() < 1e-15);
        let x = g.variable(t(&[1], &[-1.0])).unwrap();
        let d = g.grad(x.leaky_relu(0.2).unwrap(), &[x], false).unwrap();
        assert!((d[0].item() - 0.2).abs() < 1e-15);
        // the kink takes the positive-side slope
        let x = g.variable(t(&[1], &[0.0])).unwrap();
        let d = g.grad(x.leaky_relu(0.2).unwrap(), &[x], false).unwrap();
        assert_eq!(d[0].item(), 1.0);
    }

    #[test]
    fn mean_of_three() {
        let g = Graph::<f64>::new();
        let x = g.constant(t(&[3], &[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(x.mean_all().unwrap().item(), 2.0);
    }

    #[test]
    fn double_backprop_through_product() {
        // f = w*x; (df/dx)^2 = w^2; d/dw = 2w = 4 at w = 2
        let g = Graph::<f64>::new();
        let w = g.variable(t(&[1], &[2.0])).unwrap();
        let x = g.variable(t(&[1], &[5.0])).unwrap();
        let f = w.mul(x).unwrap();
        let dx = g.grad(f, &[x], true).unwrap()[0];
        assert_eq!(dx.item(), 2.0);
        let gg = dx.square().unwrap();
        let dw = g.grad(gg, &[w], false).unwrap()[0];
        assert_eq!(dw.item(), 4.0);
    }

    #[test]
    fn fourth_power_second_derivative() {
        for &x0 in &[-1.5, 0.3, 2.0] {
            let g = Graph::<f64>::new();
            let x = g.variable(t(&[1], &[x0])).unwrap();
            let f = x.square().unwrap().square().unwrap();
            let d1 = g.grad(f, &[x], true).unwrap()[0];
            let d2 = g.grad(d1, &[x], false).unwrap()[0];
            assert!((d2.item() - 12.0 * x0 * x0).abs() < 1e-6);
        }
    }

    #[test]
    fn leaky_relu_second_derivative_is_zero_even_at_kink() {
        for &x0 in &[-1.0, 0.0, 1.0] {
            let g = Graph::<f64>::new();
            let x = g.variable(t(&[1], &[x0])).unwrap();
            let d1 = g.grad(x.leaky_relu(0.2).unwrap(), &[x], true).unwrap()[0];
            // d1 is constant in x; try to differentiate it anyway.
            let y = d1.mul(x).unwrap();
            let d2 = g.grad(y, &[x], false).unwrap()[0];
            assert!(d2.item().is_finite());
            assert_eq!(d2.item(), d1.item());
        }
    }

    #[test]
    fn errors_on_non_scalar_output_and_foreign_vars() {
        let g = Graph::<f64>::new();
        let x = g.variable(t(&[2], &[1.0, 2.0])).unwrap();
        assert!(g.grad(x.square().unwrap(), &[x], false).is_err());
        let other = Graph::<f64>::new();
        let z = other.variable(t(&[1], &[1.0])).unwrap();
        let y = x.sum_all().unwrap();
        assert!(g.grad(y, &[z], false).is_err());
        let c = g.constant(t(&[1], &[1.0])).unwrap();
        assert!(g.grad(y, &[c], false).is_err());
    }

    #[test]
    fn unused_input_gets_zero_grad() {
        let g = Graph::<f64>::new();
        let x = g.variable(t(&[1], &[1.0])).unwrap();
        let z = g.variable(t(&[2], &[1.0, 1.0])).unwrap();
        let d = g.grad(x.square().unwrap(), &[x, z], false).unwrap();
        assert_eq!(d[1].value().data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_finite_and_shape_errors() {
        let g = Graph::<f64>::new();
        let x = g.variable(t(&[1], &[0.0])).unwrap();
        assert!(matches!(x.log(), Err(Error::NonFinite { op: "log" })));
        let y = g.variable(t(&[2], &[1.0, 2.0])).unwrap();
        assert!(matches!(x.add(y), Err(Error::Shape { .. })));
        assert!(g.constant(t(&[1], &[f64::NAN])).is_err());
    }

    #[test]
    fn concat_and_slice_roundtrip() {
        let g = Graph::<f64>::new();
        let a = g.constant(t(&[1, 2, 2], &[1., 2., 3., 4.])).unwrap();
        let b = g.constant(t(&[1, 1, 2], &[5., 6.])).unwrap();
        let c = a.concat(b, 1).unwrap();
        assert_eq!(c.shape(), vec![1, 3, 2]);
        assert_eq!(c.value().data(), &[1., 2., 3., 4., 5., 6.]);
        assert_eq!(c.slice(1, 2, 1).unwrap().value().data(), &[5., 6.]);
    }

    #[test]
    fn broadcast_and_sum_to_are_consistent() {
        let g = Graph::<f64>::new();
        let a = g
            .constant(t(&[2, 1, 3], &[1., 2., 3., 4., 5., 6.]))
            .unwrap();
        let b = a.broadcast_to(&[2, 2, 3]).unwrap();
        assert_eq!(
            b.value().data(),
            &[1., 2., 3., 1., 2., 3., 4., 5., 6., 4., 5., 6.]
        );
        let s = b.sum_to(&[1, 2, 1]).unwrap();
        assert_eq!(s.value().data(), &[21., 21.]);
    }
}
