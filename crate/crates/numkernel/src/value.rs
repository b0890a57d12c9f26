use std::cell::{Ref, RefCell, RefMut};
use std::collections::HashSet;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayD, Axis, Ix1, Ix2, Ix3, IxDyn};
use rand::Rng;

use crate::error::KernelError;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// A dense f64 array participating in reverse-mode gradient computation.
///
/// Cloning a `Value` clones the handle, not the storage; the backward graph
/// is acyclic by construction because ops only reference already-built
/// values.
#[derive(Clone)]
pub struct Value(Rc<Node>);

struct Node {
    id: u64,
    name: Option<String>,
    trainable: bool,
    needs_grad: bool,
    data: RefCell<ArrayD<f64>>,
    grad: RefCell<Option<ArrayD<f64>>>,
    op: Option<Op>,
}

enum Op {
    Add(Value, Value),
    AddRow(Value, Value),
    AddCol(Value, Value),
    AddScalar(Value, Value),
    Offset(Value),
    Sub(Value, Value),
    Mul(Value, Value),
    MulMask(Value, ArrayD<f64>),
    Scale(Value, f64),
    MatMul(Value, Value),
    Transpose(Value),
    Concat1(Vec<Value>),
    ConcatRows(Vec<Value>),
    ConcatCols(Vec<Value>),
    StackRows(Vec<Value>),
    Row(Value, usize),
    Rows(Value, usize),
    Slice1(Value, usize),
    SelectRows(Value, Vec<usize>),
    IndexAxis0(Value, usize),
    Reshape(Value),
    Tanh(Value),
    Sigmoid(Value),
    Relu(Value),
    Log(Value),
    Softmax(Value),
    LogSoftmax(Value),
    GatherRows(Value, Vec<usize>),
    Sum(Value),
    Mean(Value),
    MeanAxis0(Value),
    SumAxis1(Value),
    MaxAxis0(Value),
    EmbedLookup(Value, Vec<usize>),
}

impl Op {
    fn inputs(&self) -> Vec<&Value> {
        use Op::*;
        match self {
            Add(a, b) | AddRow(a, b) | AddCol(a, b) | AddScalar(a, b) | Sub(a, b)
            | Mul(a, b) | MatMul(a, b) => vec![a, b],
            Offset(a) | MulMask(a, _) | Scale(a, _) | Transpose(a) | Row(a, _)
            | Rows(a, _) | Slice1(a, _) | SelectRows(a, _) | IndexAxis0(a, _)
            | Reshape(a) | Tanh(a) | Sigmoid(a) | Relu(a) | Log(a) | Softmax(a)
            | LogSoftmax(a) | GatherRows(a, _) | Sum(a) | Mean(a) | MeanAxis0(a)
            | SumAxis1(a) | MaxAxis0(a) | EmbedLookup(a, _) => vec![a],
            Concat1(vs) | ConcatRows(vs) | ConcatCols(vs) | StackRows(vs) => {
                vs.iter().collect()
            }
        }
    }
}

pub(crate) fn as1(v: &ArrayD<f64>) -> ndarray::ArrayView1<'_, f64> {
    v.view().into_dimensionality::<Ix1>().unwrap()
}

pub(crate) fn as2(v: &ArrayD<f64>) -> ndarray::ArrayView2<'_, f64> {
    v.view().into_dimensionality::<Ix2>().unwrap()
}

fn dyn1(a: Array1<f64>) -> ArrayD<f64> {
    a.into_dyn()
}

fn dyn2(a: Array2<f64>) -> ArrayD<f64> {
    a.into_dyn()
}

fn shape_panic(op: &str, shapes: &[&[usize]]) -> ! {
    panic!("{op}: shape mismatch: {shapes:?}");
}

impl Value {
    fn new(data: ArrayD<f64>, op: Option<Op>, trainable: bool, name: Option<String>) -> Value {
        let needs_grad = trainable
            || op
                .as_ref()
                .map(|o| o.inputs().iter().any(|v| v.0.needs_grad))
                .unwrap_or(false);
        Value(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            name,
            trainable,
            needs_grad,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            op,
        }))
    }

    /// A leaf that does not receive gradients.
    pub fn constant(data: ArrayD<f64>) -> Value {
        Value::new(data, None, false, None)
    }

    /// A named trainable leaf; gradients accumulate here across backward
    /// passes until [`Value::zero_grad`] is called.
    pub fn param(name: impl Into<String>, data: ArrayD<f64>) -> Value {
        Value::new(data, None, true, Some(name.into()))
    }

    pub fn scalar(v: f64) -> Value {
        Value::constant(ArrayD::from_elem(IxDyn(&[]), v))
    }

    pub fn vector(v: &[f64]) -> Value {
        Value::constant(dyn1(Array1::from_vec(v.to_vec())))
    }

    pub fn from2(m: Array2<f64>) -> Value {
        Value::constant(dyn2(m))
    }

    pub fn zeros(shape: &[usize]) -> Value {
        Value::constant(ArrayD::zeros(IxDyn(shape)))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn name(&self) -> Option<&str> {
        self.0.name.as_deref()
    }

    pub fn is_trainable(&self) -> bool {
        self.0.trainable
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.data.borrow().shape().to_vec()
    }

    pub fn data(&self) -> Ref<'_, ArrayD<f64>> {
        self.0.data.borrow()
    }

    /// Mutable access to the stored array; used by optimizers and by
    /// finite-difference checks. Shape must be preserved by the caller.
    pub fn data_mut(&self) -> RefMut<'_, ArrayD<f64>> {
        self.0.data.borrow_mut()
    }

    pub fn to_array(&self) -> ArrayD<f64> {
        self.0.data.borrow().clone()
    }

    /// The contained scalar; panics when the value is not 0-dimensional.
    pub fn item(&self) -> f64 {
        let d = self.0.data.borrow();
        if d.ndim() != 0 {
            panic!("item: value has shape {:?}, expected a scalar", d.shape());
        }
        *d.iter().next().unwrap()
    }

    pub fn grad(&self) -> Option<ArrayD<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        let shape = self.0.data.borrow().raw_dim();
        *self.0.grad.borrow_mut() = Some(ArrayD::zeros(shape));
    }

    pub fn set_data(&self, data: ArrayD<f64>) {
        let mut d = self.0.data.borrow_mut();
        if d.shape() != data.shape() {
            shape_panic("set_data", &[d.shape(), data.shape()]);
        }
        *d = data;
    }

    // ---- elementwise and broadcast arithmetic ----

    pub fn add(&self, other: &Value) -> Value {
        let a = self.data();
        let b = other.data();
        if a.shape() == b.shape() {
            let out = &*a + &*b;
            drop(a);
            drop(b);
            return Value::new(out, Some(Op::Add(self.clone(), other.clone())), false, None);
        }
        // (m, n) + (n): broadcast over rows.
        if a.ndim() == 2 && b.ndim() == 1 && a.shape()[1] == b.shape()[0] {
            let out = dyn2(&as2(&a) + &as1(&b));
            drop(a);
            drop(b);
            return Value::new(out, Some(Op::AddRow(self.clone(), other.clone())), false, None);
        }
        shape_panic("add", &[a.shape(), b.shape()]);
    }

    /// (m, n) + column vector (m), broadcast over columns.
    pub fn add_col(&self, col: &Value) -> Value {
        let a = self.data();
        let b = col.data();
        if a.ndim() != 2 || b.ndim() != 1 || a.shape()[0] != b.shape()[0] {
            shape_panic("add_col", &[a.shape(), b.shape()]);
        }
        let mut out = as2(&a).to_owned();
        for (mut row, c) in out.rows_mut().into_iter().zip(as1(&b).iter()) {
            row += *c;
        }
        drop(a);
        drop(b);
        Value::new(dyn2(out), Some(Op::AddCol(self.clone(), col.clone())), false, None)
    }

    pub fn add_scalar(&self, s: &Value) -> Value {
        let a = self.data();
        let b = s.data();
        if b.ndim() != 0 {
            shape_panic("add_scalar", &[a.shape(), b.shape()]);
        }
        let sv = *b.iter().next().unwrap();
        let out = &*a + sv;
        drop(a);
        drop(b);
        Value::new(out, Some(Op::AddScalar(self.clone(), s.clone())), false, None)
    }

    /// Add a constant array (used for additive masks such as -inf entries).
    pub fn offset(&self, c: ArrayD<f64>) -> Value {
        let a = self.data();
        if a.shape() != c.shape() {
            shape_panic("offset", &[a.shape(), c.shape()]);
        }
        let out = &*a + &c;
        drop(a);
        Value::new(out, Some(Op::Offset(self.clone())), false, None)
    }

    pub fn sub(&self, other: &Value) -> Value {
        let a = self.data();
        let b = other.data();
        if a.shape() != b.shape() {
            shape_panic("sub", &[a.shape(), b.shape()]);
        }
        let out = &*a - &*b;
        drop(a);
        drop(b);
        Value::new(out, Some(Op::Sub(self.clone(), other.clone())), false, None)
    }

    pub fn mul(&self, other: &Value) -> Value {
        let a = self.data();
        let b = other.data();
        if a.shape() != b.shape() {
            shape_panic("mul", &[a.shape(), b.shape()]);
        }
        let out = &*a * &*b;
        drop(a);
        drop(b);
        Value::new(out, Some(Op::Mul(self.clone(), other.clone())), false, None)
    }

    /// Elementwise product with a constant mask (dropout and friends).
    pub fn mul_mask(&self, mask: ArrayD<f64>) -> Value {
        let a = self.data();
        if a.shape() != mask.shape() {
            shape_panic("mul_mask", &[a.shape(), mask.shape()]);
        }
        let out = &*a * &mask;
        drop(a);
        Value::new(out, Some(Op::MulMask(self.clone(), mask)), false, None)
    }

    pub fn scale(&self, k: f64) -> Value {
        let out = self.data().mapv(|v| v * k);
        Value::new(out, Some(Op::Scale(self.clone(), k)), false, None)
    }

    pub fn neg(&self) -> Value {
        self.scale(-1.0)
    }

    // ---- linear algebra ----

    /// Matrix product. Supported cases: (m,k)x(k,n) -> (m,n),
    /// (k)x(k,n) -> (n), and (m,k)x(k) -> (m).
    pub fn matmul(&self, other: &Value) -> Value {
        let a = self.data();
        let b = other.data();
        let out = match (a.ndim(), b.ndim()) {
            (2, 2) if a.shape()[1] == b.shape()[0] => dyn2(as2(&a).dot(&as2(&b))),
            (1, 2) if a.shape()[0] == b.shape()[0] => dyn1(as1(&a).dot(&as2(&b))),
            (2, 1) if a.shape()[1] == b.shape()[0] => dyn1(as2(&a).dot(&as1(&b))),
            _ => shape_panic("matmul", &[a.shape(), b.shape()]),
        };
        drop(a);
        drop(b);
        Value::new(out, Some(Op::MatMul(self.clone(), other.clone())), false, None)
    }

    pub fn transpose(&self) -> Value {
        let a = self.data();
        if a.ndim() != 2 {
            shape_panic("transpose", &[a.shape()]);
        }
        let out = dyn2(as2(&a).t().to_owned());
        drop(a);
        Value::new(out, Some(Op::Transpose(self.clone())), false, None)
    }

    // ---- shape manipulation ----

    pub fn row(&self, i: usize) -> Value {
        let a = self.data();
        if a.ndim() != 2 || i >= a.shape()[0] {
            shape_panic("row", &[a.shape(), &[i]]);
        }
        let out = dyn1(as2(&a).row(i).to_owned());
        drop(a);
        Value::new(out, Some(Op::Row(self.clone(), i)), false, None)
    }

    pub fn rows(&self, r0: usize, r1: usize) -> Value {
        let a = self.data();
        if a.ndim() != 2 || r0 > r1 || r1 > a.shape()[0] {
            shape_panic("rows", &[a.shape(), &[r0, r1]]);
        }
        let out = dyn2(as2(&a).slice(ndarray::s![r0..r1, ..]).to_owned());
        drop(a);
        Value::new(out, Some(Op::Rows(self.clone(), r0)), false, None)
    }

    pub fn slice1(&self, s0: usize, s1: usize) -> Value {
        let a = self.data();
        if a.ndim() != 1 || s0 > s1 || s1 > a.shape()[0] {
            shape_panic("slice1", &[a.shape(), &[s0, s1]]);
        }
        let out = dyn1(as1(&a).slice(ndarray::s![s0..s1]).to_owned());
        drop(a);
        Value::new(out, Some(Op::Slice1(self.clone(), s0)), false, None)
    }

    /// Gather whole rows of a 2-d value; duplicate indices are allowed and
    /// their gradients accumulate.
    pub fn select_rows(&self, idx: &[usize]) -> Value {
        let a = self.data();
        if a.ndim() != 2 || idx.iter().any(|&i| i >= a.shape()[0]) {
            shape_panic("select_rows", &[a.shape(), &[idx.len()]]);
        }
        let m = as2(&a);
        let mut out = Array2::zeros((idx.len(), a.shape()[1]));
        for (k, &i) in idx.iter().enumerate() {
            out.row_mut(k).assign(&m.row(i));
        }
        drop(a);
        Value::new(
            dyn2(out),
            Some(Op::SelectRows(self.clone(), idx.to_vec())),
            false,
            None,
        )
    }

    /// Select one 2-d slice of a 3-d value along axis 0.
    pub fn index_axis0(&self, i: usize) -> Value {
        let a = self.data();
        if a.ndim() != 3 || i >= a.shape()[0] {
            shape_panic("index_axis0", &[a.shape(), &[i]]);
        }
        let out = a.index_axis(Axis(0), i).to_owned();
        drop(a);
        Value::new(out, Some(Op::IndexAxis0(self.clone(), i)), false, None)
    }

    pub fn reshape(&self, shape: &[usize]) -> Value {
        let a = self.data();
        let n: usize = shape.iter().product();
        if a.len() != n {
            shape_panic("reshape", &[a.shape(), shape]);
        }
        let flat: Vec<f64> = a.iter().copied().collect();
        let out = ArrayD::from_shape_vec(IxDyn(shape), flat).unwrap();
        drop(a);
        Value::new(out, Some(Op::Reshape(self.clone())), false, None)
    }

    // ---- nonlinearities ----

    pub fn tanh(&self) -> Value {
        let out = self.data().mapv(f64::tanh);
        Value::new(out, Some(Op::Tanh(self.clone())), false, None)
    }

    pub fn sigmoid(&self) -> Value {
        let out = self.data().mapv(|v| 1.0 / (1.0 + (-v).exp()));
        Value::new(out, Some(Op::Sigmoid(self.clone())), false, None)
    }

    pub fn relu(&self) -> Value {
        let out = self.data().mapv(|v| v.max(0.0));
        Value::new(out, Some(Op::Relu(self.clone())), false, None)
    }

    pub fn log(&self) -> Value {
        let out = self.data().mapv(f64::ln);
        Value::new(out, Some(Op::Log(self.clone())), false, None)
    }

    /// Softmax along the last axis (rows of a matrix, or a whole vector).
    /// Entries of -inf get probability exactly 0.
    pub fn softmax(&self) -> Value {
        let a = self.data();
        if a.ndim() == 0 {
            shape_panic("softmax", &[a.shape()]);
        }
        let mut out = a.clone();
        drop(a);
        let last = Axis(out.ndim() - 1);
        for mut lane in out.lanes_mut(last) {
            softmax_lane(lane.as_slice_mut().expect("contiguous lane"));
        }
        Value::new(out, Some(Op::Softmax(self.clone())), false, None)
    }

    /// Log-softmax along the last axis; numerically stable companion to
    /// [`Value::softmax`] for NLL losses.
    pub fn log_softmax(&self) -> Value {
        let a = self.data();
        if a.ndim() == 0 {
            shape_panic("log_softmax", &[a.shape()]);
        }
        let mut out = a.clone();
        drop(a);
        let last = Axis(out.ndim() - 1);
        for mut lane in out.lanes_mut(last) {
            let s = lane.as_slice_mut().expect("contiguous lane");
            let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + s.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for v in s.iter_mut() {
                *v -= lse;
            }
        }
        Value::new(out, Some(Op::LogSoftmax(self.clone())), false, None)
    }

    /// out[k] = self[k, idx[k]] for a 2-d value.
    pub fn gather_rows(&self, idx: &[usize]) -> Value {
        let a = self.data();
        if a.ndim() != 2 || idx.len() != a.shape()[0] || idx.iter().any(|&i| i >= a.shape()[1]) {
            shape_panic("gather_rows", &[a.shape(), &[idx.len()]]);
        }
        let m = as2(&a);
        let out = Array1::from_iter(idx.iter().enumerate().map(|(k, &i)| m[(k, i)]));
        drop(a);
        Value::new(
            dyn1(out),
            Some(Op::GatherRows(self.clone(), idx.to_vec())),
            false,
            None,
        )
    }

    // ---- reductions ----

    pub fn sum(&self) -> Value {
        let s = self.data().sum();
        Value::new(
            ArrayD::from_elem(IxDyn(&[]), s),
            Some(Op::Sum(self.clone())),
            false,
            None,
        )
    }

    pub fn mean(&self) -> Value {
        let a = self.data();
        if a.is_empty() {
            shape_panic("mean", &[a.shape()]);
        }
        let m = a.sum() / a.len() as f64;
        drop(a);
        Value::new(
            ArrayD::from_elem(IxDyn(&[]), m),
            Some(Op::Mean(self.clone())),
            false,
            None,
        )
    }

    pub fn mean_axis0(&self) -> Value {
        let a = self.data();
        if a.ndim() != 2 || a.shape()[0] == 0 {
            shape_panic("mean_axis0", &[a.shape()]);
        }
        let out = dyn1(as2(&a).mean_axis(Axis(0)).unwrap());
        drop(a);
        Value::new(out, Some(Op::MeanAxis0(self.clone())), false, None)
    }

    pub fn sum_axis1(&self) -> Value {
        let a = self.data();
        if a.ndim() != 2 {
            shape_panic("sum_axis1", &[a.shape()]);
        }
        let out = dyn1(as2(&a).sum_axis(Axis(1)));
        drop(a);
        Value::new(out, Some(Op::SumAxis1(self.clone())), false, None)
    }

    /// Column-wise maximum of a 2-d value; gradient flows to the first
    /// maximal entry of each column.
    pub fn max_axis0(&self) -> Value {
        let a = self.data();
        if a.ndim() != 2 || a.shape()[0] == 0 {
            shape_panic("max_axis0", &[a.shape()]);
        }
        let m = as2(&a);
        let out = Array1::from_iter(
            m.columns()
                .into_iter()
                .map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        );
        drop(a);
        Value::new(dyn1(out), Some(Op::MaxAxis0(self.clone())), false, None)
    }

    // ---- backward ----

    /// Reverse-mode sweep from a scalar loss. Gradients of trainable leaves
    /// are accumulated; intermediate gradients are freed as the sweep passes
    /// them.
    pub fn backward(&self) -> Result<(), KernelError> {
        if self.0.data.borrow().ndim() != 0 {
            return Err(KernelError::NonScalarLoss(self.shape()));
        }
        if !self.0.needs_grad {
            return Ok(());
        }

        // Post-order DFS: inputs precede the nodes that consume them.
        let mut order: Vec<Value> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Value, bool)> = vec![(self.clone(), false)];
        while let Some((v, expanded)) = stack.pop() {
            if expanded {
                order.push(v);
                continue;
            }
            if !visited.insert(v.0.id) {
                continue;
            }
            stack.push((v.clone(), true));
            if let Some(op) = &v.0.op {
                for inp in op.inputs() {
                    if inp.0.needs_grad && !visited.contains(&inp.0.id) {
                        stack.push((inp.clone(), false));
                    }
                }
            }
        }

        accum(self, ArrayD::from_elem(IxDyn(&[]), 1.0));
        for v in order.iter().rev() {
            let node = &v.0;
            let Some(op) = &node.op else { continue };
            let g = if node.trainable {
                node.grad.borrow().clone()
            } else {
                node.grad.borrow_mut().take()
            };
            let Some(g) = g else { continue };
            backprop(op, &node.data.borrow(), &g);
        }
        Ok(())
    }
}

fn softmax_lane(s: &mut [f64]) {
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in s.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    for v in s.iter_mut() {
        *v /= z;
    }
}

fn accum(v: &Value, delta: ArrayD<f64>) {
    if !v.0.needs_grad {
        return;
    }
    let mut g = v.0.grad.borrow_mut();
    match &mut *g {
        Some(a) => *a += &delta,
        slot => *slot = Some(delta),
    }
}

fn backprop(op: &Op, out_data: &ArrayD<f64>, g: &ArrayD<f64>) {
    use Op::*;
    match op {
        Add(a, b) => {
            accum(a, g.clone());
            accum(b, g.clone());
        }
        AddRow(a, b) => {
            accum(a, g.clone());
            accum(b, dyn1(as2(g).sum_axis(Axis(0))));
        }
        AddCol(a, b) => {
            accum(a, g.clone());
            accum(b, dyn1(as2(g).sum_axis(Axis(1))));
        }
        AddScalar(a, b) => {
            accum(a, g.clone());
            accum(b, ArrayD::from_elem(IxDyn(&[]), g.sum()));
        }
        Offset(a) => accum(a, g.clone()),
        Sub(a, b) => {
            accum(a, g.clone());
            accum(b, g.mapv(|v| -v));
        }
        Mul(a, b) => {
            accum(a, g * &*b.data());
            accum(b, g * &*a.data());
        }
        MulMask(a, mask) => accum(a, g * mask),
        Scale(a, k) => accum(a, g.mapv(|v| v * k)),
        MatMul(a, b) => {
            let ad = a.data();
            let bd = b.data();
            match (ad.ndim(), bd.ndim()) {
                (2, 2) => {
                    let g2 = as2(g);
                    accum(a, dyn2(g2.dot(&as2(&bd).t())));
                    accum(b, dyn2(as2(&ad).t().dot(&g2)));
                }
                (1, 2) => {
                    let g1 = as1(g);
                    accum(a, dyn1(as2(&bd).dot(&g1)));
                    let ga = as1(&ad);
                    accum(
                        b,
                        dyn2(ga.insert_axis(Axis(1)).dot(&g1.insert_axis(Axis(0)))),
                    );
                }
                (2, 1) => {
                    let g1 = as1(g);
                    accum(
                        a,
                        dyn2(g1.insert_axis(Axis(1)).dot(&as1(&bd).insert_axis(Axis(0)))),
                    );
                    accum(b, dyn1(as2(&ad).t().dot(&g1)));
                }
                _ => unreachable!("matmul shapes validated in forward"),
            }
        }
        Transpose(a) => accum(a, dyn2(as2(g).t().to_owned())),
        Concat1(parts) => {
            let g1 = as1(g);
            let mut at = 0;
            for p in parts {
                let n = p.shape()[0];
                accum(p, dyn1(g1.slice(ndarray::s![at..at + n]).to_owned()));
                at += n;
            }
        }
        ConcatRows(parts) => {
            let g2 = as2(g);
            let mut at = 0;
            for p in parts {
                let n = p.shape()[0];
                accum(p, dyn2(g2.slice(ndarray::s![at..at + n, ..]).to_owned()));
                at += n;
            }
        }
        ConcatCols(parts) => {
            let g2 = as2(g);
            let mut at = 0;
            for p in parts {
                let n = p.shape()[1];
                accum(p, dyn2(g2.slice(ndarray::s![.., at..at + n]).to_owned()));
                at += n;
            }
        }
        StackRows(parts) => {
            let g2 = as2(g);
            for (k, p) in parts.iter().enumerate() {
                accum(p, dyn1(g2.row(k).to_owned()));
            }
        }
        Row(a, i) => {
            let mut ga = ArrayD::zeros(a.data().raw_dim());
            {
                let mut ga2 = ga.view_mut().into_dimensionality::<Ix2>().unwrap();
                ga2.row_mut(*i).assign(&as1(g));
            }
            accum(a, ga);
        }
        Rows(a, r0) => {
            let mut ga = ArrayD::zeros(a.data().raw_dim());
            {
                let mut ga2 = ga.view_mut().into_dimensionality::<Ix2>().unwrap();
                let g2 = as2(g);
                for (k, row) in g2.rows().into_iter().enumerate() {
                    ga2.row_mut(r0 + k).assign(&row);
                }
            }
            accum(a, ga);
        }
        Slice1(a, s0) => {
            let mut ga = ArrayD::zeros(a.data().raw_dim());
            {
                let mut ga1 = ga.view_mut().into_dimensionality::<Ix1>().unwrap();
                for (k, v) in as1(g).iter().enumerate() {
                    ga1[s0 + k] = *v;
                }
            }
            accum(a, ga);
        }
        SelectRows(a, idx) => {
            let mut ga = ArrayD::zeros(a.data().raw_dim());
            {
                let mut ga2 = ga.view_mut().into_dimensionality::<Ix2>().unwrap();
                let g2 = as2(g);
                for (k, &i) in idx.iter().enumerate() {
                    let mut row = ga2.row_mut(i);
                    row += &g2.row(k);
                }
            }
            accum(a, ga);
        }
        IndexAxis0(a, i) => {
            let mut ga = ArrayD::zeros(a.data().raw_dim());
            {
                let mut slice = ga.view_mut().into_dimensionality::<Ix3>().unwrap();
                let mut slice = slice.index_axis_mut(Axis(0), *i);
                slice += &as2(g);
            }
            accum(a, ga);
        }
        Reshape(a) => {
            let shape = a.data().raw_dim();
            let flat: Vec<f64> = g.iter().copied().collect();
            accum(a, ArrayD::from_shape_vec(shape, flat).unwrap());
        }
        Tanh(a) => accum(a, g * &out_data.mapv(|y| 1.0 - y * y)),
        Sigmoid(a) => accum(a, g * &out_data.mapv(|y| y * (1.0 - y))),
        Relu(a) => {
            let mask = a.data().mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
            accum(a, g * &mask);
        }
        Log(a) => accum(a, g / &*a.data()),
        Softmax(a) => {
            // dL/dx_i = y_i * (g_i - sum_j g_j y_j) per lane.
            let mut ga = g * out_data;
            let last = Axis(ga.ndim() - 1);
            for (mut lane, ylane) in ga.lanes_mut(last).into_iter().zip(out_data.lanes(last)) {
                let dot: f64 = lane.sum();
                for (d, y) in lane.iter_mut().zip(ylane.iter()) {
                    // lane currently holds g_i*y_i; rewrite in place.
                    *d -= dot * y;
                }
            }
            accum(a, ga);
        }
        LogSoftmax(a) => {
            // dL/dx_i = g_i - p_i * sum_j g_j with p = exp(out).
            let mut ga = g.clone();
            let last = Axis(ga.ndim() - 1);
            for (mut lane, olane) in ga.lanes_mut(last).into_iter().zip(out_data.lanes(last)) {
                let gsum: f64 = lane.sum();
                for (d, o) in lane.iter_mut().zip(olane.iter()) {
                    *d -= o.exp() * gsum;
                }
            }
            accum(a, ga);
        }
        GatherRows(a, idx) => {
            let mut ga = ArrayD::zeros(a.data().raw_dim());
            {
                let mut ga2 = ga.view_mut().into_dimensionality::<Ix2>().unwrap();
                for (k, &i) in idx.iter().enumerate() {
                    ga2[(k, i)] += as1(g)[k];
                }
            }
            accum(a, ga);
        }
        Sum(a) => {
            let gv = *g.iter().next().unwrap();
            accum(a, ArrayD::from_elem(a.data().raw_dim(), gv));
        }
        Mean(a) => {
            let n = a.data().len() as f64;
            let gv = *g.iter().next().unwrap() / n;
            accum(a, ArrayD::from_elem(a.data().raw_dim(), gv));
        }
        MeanAxis0(a) => {
            let m = a.data().shape()[0] as f64;
            let mut ga = ArrayD::zeros(a.data().raw_dim());
            {
                let mut ga2 = ga.view_mut().into_dimensionality::<Ix2>().unwrap();
                let g1 = as1(g);
                for mut row in ga2.rows_mut() {
                    row.assign(&g1.mapv(|v| v / m));
                }
            }
            accum(a, ga);
        }
        SumAxis1(a) => {
            let mut ga = ArrayD::zeros(a.data().raw_dim());
            {
                let mut ga2 = ga.view_mut().into_dimensionality::<Ix2>().unwrap();
                let g1 = as1(g);
                for (k, mut row) in ga2.rows_mut().into_iter().enumerate() {
                    row.fill(g1[k]);
                }
            }
            accum(a, ga);
        }
        MaxAxis0(a) => {
            let ad = a.data();
            let m = as2(&ad);
            let mut ga = Array2::zeros((m.nrows(), m.ncols()));
            let g1 = as1(g);
            for j in 0..m.ncols() {
                let col = m.column(j);
                let mut best = 0;
                for i in 1..col.len() {
                    if col[i] > col[best] {
                        best = i;
                    }
                }
                ga[(best, j)] = g1[j];
            }
            drop(ad);
            accum(a, dyn2(ga));
        }
        EmbedLookup(table, idx) => {
            let mut gt = ArrayD::zeros(table.data().raw_dim());
            {
                let mut gt2 = gt.view_mut().into_dimensionality::<Ix2>().unwrap();
                let g2 = as2(g);
                for (k, &i) in idx.iter().enumerate() {
                    let mut row = gt2.row_mut(i);
                    row += &g2.row(k);
                }
            }
            accum(table, gt);
        }
    }
}

// ---- free-standing constructors over several inputs ----

pub fn concat1(parts: &[Value]) -> Value {
    assert!(!parts.is_empty(), "concat1: empty input");
    let mut out = Vec::new();
    for p in parts {
        let d = p.data();
        if d.ndim() != 1 {
            shape_panic("concat1", &[d.shape()]);
        }
        out.extend(d.iter().copied());
    }
    Value::new(
        dyn1(Array1::from_vec(out)),
        Some(Op::Concat1(parts.to_vec())),
        false,
        None,
    )
}

pub fn concat_rows(parts: &[Value]) -> Value {
    assert!(!parts.is_empty(), "concat_rows: empty input");
    let ncols = parts[0].shape()[1];
    let nrows: usize = parts.iter().map(|p| p.shape()[0]).sum();
    let mut out = Array2::zeros((nrows, ncols));
    let mut at = 0;
    for p in parts {
        let d = p.data();
        if d.ndim() != 2 || d.shape()[1] != ncols {
            shape_panic("concat_rows", &[d.shape(), &[nrows, ncols]]);
        }
        let m = as2(&d);
        for row in m.rows() {
            out.row_mut(at).assign(&row);
            at += 1;
        }
    }
    Value::new(
        dyn2(out),
        Some(Op::ConcatRows(parts.to_vec())),
        false,
        None,
    )
}

pub fn concat_cols(parts: &[Value]) -> Value {
    assert!(!parts.is_empty(), "concat_cols: empty input");
    let nrows = parts[0].shape()[0];
    let ncols: usize = parts.iter().map(|p| p.shape()[1]).sum();
    let mut out = Array2::zeros((nrows, ncols));
    let mut at = 0;
    for p in parts {
        let d = p.data();
        if d.ndim() != 2 || d.shape()[0] != nrows {
            shape_panic("concat_cols", &[d.shape(), &[nrows, ncols]]);
        }
        let m = as2(&d);
        out.slice_mut(ndarray::s![.., at..at + m.ncols()]).assign(&m);
        at += m.ncols();
    }
    Value::new(
        dyn2(out),
        Some(Op::ConcatCols(parts.to_vec())),
        false,
        None,
    )
}

/// Stack 1-d values of equal length into the rows of a matrix.
pub fn stack_rows(parts: &[Value]) -> Value {
    assert!(!parts.is_empty(), "stack_rows: empty input");
    let n = parts[0].shape()[0];
    let mut out = Array2::zeros((parts.len(), n));
    for (k, p) in parts.iter().enumerate() {
        let d = p.data();
        if d.ndim() != 1 || d.shape()[0] != n {
            shape_panic("stack_rows", &[d.shape(), &[n]]);
        }
        out.row_mut(k).assign(&as1(&d));
    }
    Value::new(
        dyn2(out),
        Some(Op::StackRows(parts.to_vec())),
        false,
        None,
    )
}

/// Look up rows of an embedding table (a 2-d trainable value); gradients
/// scatter-add back into the table rows.
pub fn embed_lookup(table: &Value, idx: &[usize]) -> Value {
    let t = table.data();
    if t.ndim() != 2 || idx.iter().any(|&i| i >= t.shape()[0]) {
        shape_panic("embed_lookup", &[t.shape(), &[idx.len()]]);
    }
    let m = as2(&t);
    let mut out = Array2::zeros((idx.len(), t.shape()[1]));
    for (k, &i) in idx.iter().enumerate() {
        out.row_mut(k).assign(&m.row(i));
    }
    drop(t);
    Value::new(
        dyn2(out),
        Some(Op::EmbedLookup(table.clone(), idx.to_vec())),
        false,
        None,
    )
}

/// Inverted dropout: at training time zero entries with probability `rate`
/// and scale survivors by 1/(1-rate); identity at inference or rate 0.
pub fn dropout(x: &Value, rate: f64, rng: &mut impl Rng, training: bool) -> Value {
    assert!((0.0..1.0).contains(&rate), "dropout: rate {rate} outside [0, 1)");
    if !training || rate == 0.0 {
        return x.clone();
    }
    let keep = 1.0 - rate;
    let shape = x.data().raw_dim();
    let mask = ArrayD::from_shape_simple_fn(shape, || {
        if rng.gen::<f64>() < rate {
            0.0
        } else {
            1.0 / keep
        }
    });
    x.mul_mask(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_symmetry() {
        let v = Value::vector(&[0.0, 0.0]);
        let p = v.softmax();
        let d = p.to_array();
        assert_eq!(d[[0]], 0.5);
        assert_eq!(d[[1]], 0.5);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let m = Value::from2(array![[1.0, -2.0, 0.3], [4.0, 4.0, -1.0]]);
        let p = m.softmax().to_array();
        for row in as2(&p).rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn relu_definition() {
        let v = Value::vector(&[-1.0, 2.0]);
        let r = v.relu().to_array();
        assert_eq!(r[[0]], 0.0);
        assert_eq!(r[[1]], 2.0);
    }

    #[test]
    fn dropout_rate_zero_is_identity() {
        let mut rng = rand::rngs::mock::StepRng::new(0, 1);
        let v = Value::vector(&[1.0, 2.0, 3.0]);
        let d = dropout(&v, 0.0, &mut rng, true);
        assert_eq!(d.to_array(), v.to_array());
        let e = dropout(&v, 0.5, &mut rng, false);
        assert_eq!(e.to_array(), v.to_array());
    }

    #[test]
    fn square_sum_gradient() {
        let w = Value::param("w", dyn1(Array1::from_vec(vec![3.0])));
        let loss = w.mul(&w).sum();
        loss.backward().unwrap();
        let g = w.grad().unwrap();
        assert_eq!(g[[0]], 6.0);
    }

    #[test]
    fn constant_loss_leaves_grads_zero() {
        let w = Value::param("w", dyn1(Array1::from_vec(vec![1.0, 2.0])));
        w.zero_grad();
        let loss = Value::scalar(5.0).add(&Value::scalar(0.0).mul(&w.sum()));
        loss.backward().unwrap();
        let g = w.grad().unwrap();
        assert_eq!(g.iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let w = Value::param("w", dyn1(Array1::from_vec(vec![1.0, 2.0])));
        let e = w.mul(&w).backward();
        assert!(matches!(e, Err(KernelError::NonScalarLoss(_))));
    }

    #[test]
    fn grads_accumulate_until_zeroed() {
        let w = Value::param("w", dyn1(Array1::from_vec(vec![2.0])));
        for _ in 0..2 {
            let loss = w.mul(&w).sum();
            loss.backward().unwrap();
        }
        assert_eq!(w.grad().unwrap()[[0]], 8.0);
        w.zero_grad();
        assert_eq!(w.grad().unwrap()[[0]], 0.0);
    }

    #[test]
    #[should_panic(expected = "matmul: shape mismatch")]
    fn matmul_shape_mismatch_names_op() {
        let a = Value::from2(array![[1.0, 2.0]]);
        let b = Value::from2(array![[1.0, 2.0]]);
        let _ = a.matmul(&b);
    }

    #[test]
    fn shared_subexpression_grads_add() {
        // loss = x*x + x => d/dx = 2x + 1
        let x = Value::param("x", ArrayD::from_elem(IxDyn(&[]), 3.0));
        let loss = x.mul(&x).add(&x);
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap()[[]], 7.0);
    }
}
