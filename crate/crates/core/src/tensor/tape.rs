use std::cell::RefCell;
use std::rc::Rc;

use super::kernels::{self, ConvGeom};
use super::{ParamId, Params, Tensor};
use crate::error::TensorError;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Reshape(usize),
    Concat { parts: Vec<usize>, axis: usize },
    CumSum { input: usize, axis: usize },
    GatherRows { input: usize, index: Rc<Vec<usize>> },
    Conv2d { x: usize, w: usize, b: usize, geom: ConvGeom },
    Sum(usize),
    SquaredErrorSum(usize, usize),
    Mse(usize, usize),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Rc<Vec<f64>>,
    op: Op,
    needs_grad: bool,
    param: Option<ParamId>,
}

/// Records a forward computation so that [`Tape::backward`] can replay it in reverse.
///
/// A tape is single-threaded and meant to live for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

type TResult<T> = Result<T, TensorError>;

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::ShapeMismatch { op, left: a.to_vec(), right: b.to_vec() }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool, param: Option<ParamId>) -> Var<'_> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { shape, value: Rc::new(value), op, needs_grad, param });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn info(&self, id: usize) -> (Vec<usize>, Rc<Vec<f64>>, bool) {
        let nodes = self.nodes.borrow();
        let n = &nodes[id];
        (n.shape.clone(), Rc::clone(&n.value), n.needs_grad)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, shape: &[usize], data: Vec<f64>) -> TResult<Var<'_>> {
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t.shape, t.data, Op::Leaf, false, None))
    }

    /// A leaf whose gradient is tracked, e.g. an input under a finite-difference check.
    pub fn input(&self, shape: &[usize], data: Vec<f64>) -> TResult<Var<'_>> {
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t.shape, t.data, Op::Leaf, true, None))
    }

    /// A leaf bound to a model parameter; [`Gradients::accumulate_into`] routes its gradient back.
    pub fn param(&self, params: &Params, id: ParamId) -> Var<'_> {
        let t = params.get(id);
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true, Some(id))
    }

    /// Same as [`Tape::param`] but without gradient tracking (inference).
    pub fn frozen_param(&self, params: &Params, id: ParamId) -> Var<'_> {
        let t = params.get(id);
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false, None)
    }

    pub fn backward(&self, loss: Var<'_>) -> TResult<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(TensorError::NotScalar(root.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![1.0]);

        fn acc<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node], id: usize) -> Option<&'g mut Vec<f64>> {
            if !nodes[id].needs_grad {
                return None;
            }
            let n = nodes[id].value.len();
            Some(grads[id].get_or_insert_with(|| vec![0.0; n]))
        }

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (sa, sb) = (&nodes[*a].shape, &nodes[*b].shape);
                    let (n, k, m) = (sa[0], sa[1], sb[1]);
                    let (va, vb) = (Rc::clone(&nodes[*a].value), Rc::clone(&nodes[*b].value));
                    if let Some(ga) = acc(&mut grads, &nodes, *a) {
                        kernels::matmul_grad_a(&g, &vb, n, k, m, ga);
                    }
                    if let Some(gb) = acc(&mut grads, &nodes, *b) {
                        kernels::matmul_grad_b(&va, &g, n, k, m, gb);
                    }
                }
                Op::Add(a, b) => {
                    for p in [*a, *b] {
                        if let Some(gp) = acc(&mut grads, &nodes, p) {
                            gp.iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                        }
                    }
                }
                Op::AddRow(a, b) => {
                    if let Some(ga) = acc(&mut grads, &nodes, *a) {
                        ga.iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                    }
                    if let Some(gb) = acc(&mut grads, &nodes, *b) {
                        let m = gb.len();
                        for row in g.chunks_exact(m) {
                            gb.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (Rc::clone(&nodes[*a].value), Rc::clone(&nodes[*b].value));
                    if let Some(ga) = acc(&mut grads, &nodes, *a) {
                        for i in 0..g.len() {
                            ga[i] += g[i] * vb[i];
                        }
                    }
                    if let Some(gb) = acc(&mut grads, &nodes, *b) {
                        for i in 0..g.len() {
                            gb[i] += g[i] * va[i];
                        }
                    }
                }
                Op::Scale(a, c) => {
                    if let Some(ga) = acc(&mut grads, &nodes, *a) {
                        ga.iter_mut().zip(&g).for_each(|(x, y)| *x += c * y);
                    }
                }
                Op::Relu(a) => {
                    let y = Rc::clone(&node.value);
                    if let Some(ga) = acc(&mut grads, &nodes, *a) {
                        for i in 0..g.len() {
                            if y[i] > 0.0 {
                                ga[i] += g[i];
                            }
                        }
                    }
                }
                Op::Tanh(a) => {
                    let y = Rc::clone(&node.value);
                    if let Some(ga) = acc(&mut grads, &nodes, *a) {
                        for i in 0..g.len() {
                            ga[i] += g[i] * (1.0 - y[i] * y[i]);
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let y = Rc::clone(&node.value);
                    if let Some(ga) = acc(&mut grads, &nodes, *a) {
                        for i in 0..g.len() {
                            ga[i] += g[i] * y[i] * (1.0 - y[i]);
                        }
                    }
                }
                Op::Reshape(a) => {
                    if let Some(ga) = acc(&mut grads, &nodes, *a) {
                        ga.iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                    }
                }
                Op::Concat { parts, axis } => {
                    let (outer, _, inner) = kernels::axis_split(&node.shape, *axis);
                    let total = node.shape[*axis] * inner;
                    let mut offset = 0;
                    for &p in parts {
                        let width = nodes[p].shape[*axis] * inner;
                        if let Some(gp) = acc(&mut grads, &nodes, p) {
                            for o in 0..outer {
                                let src = &g[o * total + offset..o * total + offset + width];
                                gp[o * width..(o + 1) * width].iter_mut().zip(src).for_each(|(x, y)| *x += y);
                            }
                        }
                        offset += width;
                    }
                }
                Op::CumSum { input, axis } => {
                    let back = kernels::cumsum(&g, &node.shape, *axis, true);
                    if let Some(ga) = acc(&mut grads, &nodes, *input) {
                        ga.iter_mut().zip(&back).for_each(|(x, y)| *x += y);
                    }
                }
                Op::GatherRows { input, index } => {
                    let row = node.value.len() / index.len().max(1);
                    if let Some(ga) = acc(&mut grads, &nodes, *input) {
                        for (r, &src) in index.iter().enumerate() {
                            ga[src * row..(src + 1) * row].iter_mut().zip(&g[r * row..(r + 1) * row]).for_each(|(x, y)| *x += y);
                        }
                    }
                }
                Op::Conv2d { x, w, b, geom } => {
                    let (vx, vw) = (Rc::clone(&nodes[*x].value), Rc::clone(&nodes[*w].value));
                    let mut gx = nodes[*x].needs_grad.then(|| vec![0.0; vx.len()]);
                    let mut gw = nodes[*w].needs_grad.then(|| vec![0.0; vw.len()]);
                    let mut gb = nodes[*b].needs_grad.then(|| vec![0.0; nodes[*b].value.len()]);
                    kernels::conv2d_backward(&vx, &vw, &g, geom, gx.as_deref_mut(), gw.as_deref_mut(), gb.as_deref_mut());
                    for (p, part) in [(*x, gx), (*w, gw), (*b, gb)] {
                        if let (Some(dst), Some(part)) = (acc(&mut grads, &nodes, p), part) {
                            dst.iter_mut().zip(&part).for_each(|(d, s)| *d += s);
                        }
                    }
                }
                Op::Sum(a) => {
                    if let Some(ga) = acc(&mut grads, &nodes, *a) {
                        ga.iter_mut().for_each(|x| *x += g[0]);
                    }
                }
                Op::SquaredErrorSum(a, b) | Op::Mse(a, b) => {
                    let (va, vb) = (Rc::clone(&nodes[*a].value), Rc::clone(&nodes[*b].value));
                    let scale = match node.op {
                        Op::Mse(..) => 2.0 * g[0] / va.len() as f64,
                        _ => 2.0 * g[0],
                    };
                    if let Some(ga) = acc(&mut grads, &nodes, *a) {
                        for i in 0..va.len() {
                            ga[i] += scale * (va[i] - vb[i]);
                        }
                    }
                    if let Some(gb) = acc(&mut grads, &nodes, *b) {
                        for i in 0..va.len() {
                            gb[i] -= scale * (va[i] - vb[i]);
                        }
                    }
                }
            }
        }
        let params = nodes.iter().enumerate().filter_map(|(i, n)| n.param.map(|p| (i, p))).collect();
        Ok(Gradients { grads, params })
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].shape.clone()
    }

    pub fn value(&self) -> Rc<Vec<f64>> {
        Rc::clone(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn to_tensor(&self) -> Tensor {
        let (shape, value, _) = self.tape.info(self.id);
        Tensor { shape, data: value.as_ref().clone(), grad: None }
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let (shape, v, ng) = self.tape.info(self.id);
        let out = v.iter().map(|&x| f(x)).collect();
        self.tape.push(shape, out, op, ng, None)
    }

    /// `[n,k] · [k,m] -> [n,m]`
    pub fn matmul(&self, rhs: &Var<'t>) -> TResult<Var<'t>> {
        self.same_tape(rhs);
        let (sa, va, na) = self.tape.info(self.id);
        let (sb, vb, nb) = self.tape.info(rhs.id);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", &sa, &sb));
        }
        let out = kernels::matmul(&va, &vb, sa[0], sa[1], sb[1]);
        Ok(self.tape.push(vec![sa[0], sb[1]], out, Op::MatMul(self.id, rhs.id), na || nb, None))
    }

    fn zip(&self, rhs: &Var<'t>, name: &'static str, op: Op, f: impl Fn(f64, f64) -> f64) -> TResult<Var<'t>> {
        self.same_tape(rhs);
        let (sa, va, na) = self.tape.info(self.id);
        let (sb, vb, nb) = self.tape.info(rhs.id);
        if sa != sb {
            return Err(mismatch(name, &sa, &sb));
        }
        let out = va.iter().zip(vb.iter()).map(|(&x, &y)| f(x, y)).collect();
        Ok(self.tape.push(sa, out, op, na || nb, None))
    }

    pub fn add(&self, rhs: &Var<'t>) -> TResult<Var<'t>> {
        self.zip(rhs, "add", Op::Add(self.id, rhs.id), |a, b| a + b)
    }

    pub fn mul(&self, rhs: &Var<'t>) -> TResult<Var<'t>> {
        self.zip(rhs, "mul", Op::Mul(self.id, rhs.id), |a, b| a * b)
    }

    /// Adds a `[m]` row vector to every row of a `[n,m]` matrix.
    pub fn add_row(&self, row: &Var<'t>) -> TResult<Var<'t>> {
        self.same_tape(row);
        let (sa, va, na) = self.tape.info(self.id);
        let (sb, vb, nb) = self.tape.info(row.id);
        if sa.len() != 2 || sb.len() != 1 || sa[1] != sb[0] {
            return Err(mismatch("add_row", &sa, &sb));
        }
        let m = sb[0];
        let mut out = va.as_ref().clone();
        for r in out.chunks_exact_mut(m) {
            r.iter_mut().zip(vb.iter()).for_each(|(x, y)| *x += y);
        }
        Ok(self.tape.push(sa, out, Op::AddRow(self.id, row.id), na || nb, None))
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |x| c * x)
    }

    pub fn neg(&self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |x| x.max(0.0))
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), f64::tanh)
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), kernels::sigmoid)
    }

    pub fn reshape(&self, shape: &[usize]) -> TResult<Var<'t>> {
        let (s, v, ng) = self.tape.info(self.id);
        if shape.iter().product::<usize>() != v.len() {
            return Err(mismatch("reshape", &s, shape));
        }
        Ok(self.tape.push(shape.to_vec(), v.as_ref().clone(), Op::Reshape(self.id), ng, None))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[Var<'t>], axis: usize) -> TResult<Var<'t>> {
        let first = parts.first().ok_or(TensorError::InvalidArgument { op: "concat", message: "no inputs".into() })?;
        let tape = first.tape;
        let infos: Vec<_> = parts
            .iter()
            .map(|p| {
                first.same_tape(p);
                tape.info(p.id)
            })
            .collect();
        let s0 = &infos[0].0;
        if axis >= s0.len() {
            return Err(TensorError::InvalidArgument { op: "concat", message: format!("axis {axis} out of range for {s0:?}") });
        }
        for (s, _, _) in &infos[1..] {
            let ok = s.len() == s0.len() && s.iter().zip(s0).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                return Err(mismatch("concat", s0, s));
            }
        }
        let (outer, _, inner) = kernels::axis_split(s0, axis);
        let total_len: usize = infos.iter().map(|(s, _, _)| s[axis]).sum();
        let mut out = Vec::with_capacity(outer * total_len * inner);
        for o in 0..outer {
            for (s, v, _) in &infos {
                let w = s[axis] * inner;
                out.extend_from_slice(&v[o * w..(o + 1) * w]);
            }
        }
        let mut shape = s0.clone();
        shape[axis] = total_len;
        let ng = infos.iter().any(|i| i.2);
        Ok(tape.push(shape, out, Op::Concat { parts: parts.iter().map(|p| p.id).collect(), axis }, ng, None))
    }

    pub fn cumsum(&self, axis: usize) -> TResult<Var<'t>> {
        let (s, v, ng) = self.tape.info(self.id);
        if axis >= s.len() {
            return Err(TensorError::InvalidArgument { op: "cumsum", message: format!("axis {axis} out of range for {s:?}") });
        }
        let out = kernels::cumsum(&v, &s, axis, false);
        Ok(self.tape.push(s, out, Op::CumSum { input: self.id, axis }, ng, None))
    }

    /// Selects rows (first-axis slices) by index; rows may repeat.
    pub fn gather_rows(&self, index: Vec<usize>) -> TResult<Var<'t>> {
        let (s, v, ng) = self.tape.info(self.id);
        if s.is_empty() {
            return Err(TensorError::InvalidArgument { op: "gather_rows", message: "scalar input".into() });
        }
        let row: usize = s[1..].iter().product();
        if let Some(&bad) = index.iter().find(|&&i| i >= s[0]) {
            return Err(TensorError::InvalidArgument { op: "gather_rows", message: format!("row {bad} out of range for {s:?}") });
        }
        let mut out = Vec::with_capacity(index.len() * row);
        for &i in &index {
            out.extend_from_slice(&v[i * row..(i + 1) * row]);
        }
        let mut shape = s.clone();
        shape[0] = index.len();
        Ok(self.tape.push(shape, out, Op::GatherRows { input: self.id, index: Rc::new(index) }, ng, None))
    }

    /// NCHW convolution with a `[out, in, k, k]` kernel and `[out]` bias.
    pub fn conv2d(&self, w: &Var<'t>, b: &Var<'t>, stride: usize, pad: usize) -> TResult<Var<'t>> {
        self.same_tape(w);
        self.same_tape(b);
        let (sx, vx, nx) = self.tape.info(self.id);
        let (sw, vw, nw) = self.tape.info(w.id);
        let (sb, vb, nb) = self.tape.info(b.id);
        if sx.len() != 4 || sw.len() != 4 || sw[1] != sx[1] || sw[2] != sw[3] {
            return Err(mismatch("conv2d", &sx, &sw));
        }
        if sb != [sw[0]] {
            return Err(mismatch("conv2d bias", &sw, &sb));
        }
        if stride == 0 || sx[2] + 2 * pad < sw[2] || sx[3] + 2 * pad < sw[3] {
            return Err(TensorError::InvalidArgument {
                op: "conv2d",
                message: format!("kernel {sw:?} with stride {stride}, padding {pad} does not fit input {sx:?}"),
            });
        }
        let geom = ConvGeom { batch: sx[0], in_ch: sx[1], in_h: sx[2], in_w: sx[3], out_ch: sw[0], kernel: sw[2], stride, pad };
        let out = kernels::conv2d(&vx, &vw, &vb, &geom);
        let shape = vec![geom.batch, geom.out_ch, geom.out_h(), geom.out_w()];
        Ok(self.tape.push(shape, out, Op::Conv2d { x: self.id, w: w.id, b: b.id, geom }, nx || nw || nb, None))
    }

    pub fn sum(&self) -> Var<'t> {
        let (_, v, ng) = self.tape.info(self.id);
        let s = v.iter().sum();
        self.tape.push(vec![1], vec![s], Op::Sum(self.id), ng, None)
    }

    /// `Σ (self - target)²`
    pub fn squared_error_sum(&self, target: &Var<'t>) -> TResult<Var<'t>> {
        self.loss(target, "squared_error_sum", false)
    }

    /// `mean((self - target)²)`
    pub fn mse(&self, target: &Var<'t>) -> TResult<Var<'t>> {
        self.loss(target, "mse", true)
    }

    fn loss(&self, target: &Var<'t>, name: &'static str, mean: bool) -> TResult<Var<'t>> {
        self.same_tape(target);
        let (sa, va, na) = self.tape.info(self.id);
        let (sb, vb, nb) = self.tape.info(target.id);
        if sa != sb {
            return Err(mismatch(name, &sa, &sb));
        }
        let mut s: f64 = va.iter().zip(vb.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        let op = if mean {
            s /= va.len().max(1) as f64;
            Op::Mse(self.id, target.id)
        } else {
            Op::SquaredErrorSum(self.id, target.id)
        };
        Ok(self.tape.push(vec![1], vec![s], op, na || nb, None))
    }

    pub fn item(&self) -> f64 {
        self.value()[0]
    }
}

/// Result of a backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(usize, ParamId)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; `None` for constants and nodes
    /// the loss does not depend on.
    pub fn wrt(&self, v: Var<'_>) -> Option<&[f64]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }

    /// Adds every parameter leaf's gradient into the matching tensor's `grad`.
    pub fn accumulate_into(&self, params: &mut Params) {
        for &(node, pid) in &self.params {
            if let Some(g) = &self.grads[node] {
                let dst = params.get_mut(pid).grad_mut();
                dst.iter_mut().zip(g).for_each(|(d, s)| *d += s);
            }
        }
    }
}
