//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Operations are recorded on a [`Tape`] in topological order. [`Tape::backward`]
//! replays the tape in reverse and emits the adjoint computation *as ordinary
//! tape nodes*, so gradients are themselves differentiable: calling `backward`
//! on an expression built from [`Tape::input_gradient`] yields second-order
//! derivatives (needed for the gradient penalty).
//!
//! Convention for kinked primitives: `leaky_relu` uses its left derivative
//! (the slope) at 0, and `abs` uses -1 at 0.

use std::cell::{Ref, RefCell};
use std::collections::HashMap;
use std::rc::Rc;

use ndarray::Array2;

use crate::error::AutodiffError;

pub type NodeId = usize;

type Result<T> = std::result::Result<T, AutodiffError>;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    /// `(m x n) + (1 x n)`, bias broadcast over rows.
    AddBias(NodeId, NodeId),
    Sub(NodeId, NodeId),
    MulElem(NodeId, NodeId),
    Neg(NodeId),
    ScalarMul(f64, NodeId),
    LeakyRelu { slope: f64, input: NodeId },
    Sigmoid(NodeId),
    Log(NodeId),
    Recip(NodeId),
    Square(NodeId),
    Abs(NodeId),
    Sqrt(NodeId),
    /// Reduce to `1 x 1`.
    Sum(NodeId),
    /// Expand a `1 x 1` scalar to `rows x cols`.
    BroadcastScalar {
        input: NodeId,
        rows: usize,
        cols: usize,
    },
}

impl Op {
    fn inputs(&self) -> [Option<NodeId>; 2] {
        use Op::*;
        match *self {
            Leaf => [None, None],
            MatMul(a, b) | Add(a, b) | AddBias(a, b) | Sub(a, b) | MulElem(a, b) => {
                [Some(a), Some(b)]
            }
            Transpose(a)
            | Neg(a)
            | ScalarMul(_, a)
            | LeakyRelu { input: a, .. }
            | Sigmoid(a)
            | Log(a)
            | Recip(a)
            | Square(a)
            | Abs(a)
            | Sqrt(a)
            | Sum(a)
            | BroadcastScalar { input: a, .. } => [Some(a), None],
        }
    }
}

struct Node {
    op: Op,
    value: Array2<f64>,
    requires_grad: bool,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
}

/// A recording of primitive operations. Cheap to clone (shared handle).
///
/// A tape and its [`Var`]s are confined to one thread; independent tapes may
/// run in parallel threads.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

/// A tensor registered on a tape. Cloning is cheap; both clones refer to the
/// same node.
#[derive(Clone)]
pub struct Var {
    tape: Tape,
    id: NodeId,
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (r, c) = self.shape();
        write!(f, "Var(#{}, {}x{})", self.id, r, c)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, value: Array2<f64>, requires_grad: bool) -> Var {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var {
            tape: self.clone(),
            id,
        }
    }

    /// Register an input that gradients should flow into.
    pub fn leaf(&self, value: Array2<f64>) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Register an input treated as a constant by `backward`.
    pub fn constant(&self, value: Array2<f64>) -> Var {
        self.push(Op::Leaf, value, false)
    }

    /// A `rows x cols` constant with every entry equal to `fill`.
    pub fn constant_full(&self, rows: usize, cols: usize, fill: f64) -> Var {
        self.push(Op::Leaf, Array2::from_elem((rows, cols), fill), false)
    }

    fn same_tape(&self, other: &Tape) -> Result<()> {
        if Rc::ptr_eq(&self.inner, &other.inner) {
            Ok(())
        } else {
            Err(AutodiffError::TapeMismatch)
        }
    }
}

impl Var {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn shape(&self) -> (usize, usize) {
        let inner = self.tape.inner.borrow();
        let d = inner.nodes[self.id].value.dim();
        d
    }

    /// Borrow the forward value without copying.
    pub fn value_ref(&self) -> Ref<'_, Array2<f64>> {
        Ref::map(self.tape.inner.borrow(), |inner| {
            &inner.nodes[self.id].value
        })
    }

    /// Copy of the forward value.
    pub fn value(&self) -> Array2<f64> {
        self.value_ref().clone()
    }

    /// Forward value of a `1 x 1` tensor.
    pub fn scalar_value(&self) -> f64 {
        self.value_ref()[(0, 0)]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].requires_grad
    }
}

fn shape_err(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, lhs, rhs }
}

macro_rules! binary_op {
    ($name:ident, $opname:literal, $variant:ident, $f:expr) => {
        pub fn $name(&self, other: &Var) -> Result<Var> {
            self.tape.same_tape(&other.tape)?;
            let (value, rg) = {
                let inner = self.tape.inner.borrow();
                let a = &inner.nodes[self.id];
                let b = &inner.nodes[other.id];
                if a.value.dim() != b.value.dim() {
                    return Err(shape_err($opname, a.value.dim(), b.value.dim()));
                }
                #[allow(clippy::redundant_closure_call)]
                (
                    ($f)(&a.value, &b.value),
                    a.requires_grad || b.requires_grad,
                )
            };
            Ok(self.tape.push(Op::$variant(self.id, other.id), value, rg))
        }
    };
}

macro_rules! unary_map {
    ($name:ident, $variant:ident, $f:expr) => {
        pub fn $name(&self) -> Var {
            let (value, rg) = {
                let inner = self.tape.inner.borrow();
                let n = &inner.nodes[self.id];
                (n.value.mapv($f), n.requires_grad)
            };
            self.tape.push(Op::$variant(self.id), value, rg)
        }
    };
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn leaky_relu_scalar(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

impl Var {
    /// Matrix product `self (m x k) . other (k x n)`.
    pub fn matmul(&self, other: &Var) -> Result<Var> {
        self.tape.same_tape(&other.tape)?;
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id];
            let b = &inner.nodes[other.id];
            if a.value.ncols() != b.value.nrows() {
                return Err(shape_err("matmul", a.value.dim(), b.value.dim()));
            }
            (a.value.dot(&b.value), a.requires_grad || b.requires_grad)
        };
        Ok(self.tape.push(Op::MatMul(self.id, other.id), value, rg))
    }

    pub fn transpose(&self) -> Var {
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let n = &inner.nodes[self.id];
            (n.value.t().to_owned(), n.requires_grad)
        };
        self.tape.push(Op::Transpose(self.id), value, rg)
    }

    binary_op!(add, "add", Add, |a: &Array2<f64>, b: &Array2<f64>| a + b);
    binary_op!(sub, "sub", Sub, |a: &Array2<f64>, b: &Array2<f64>| a - b);
    binary_op!(mul, "mul_elementwise", MulElem, |a: &Array2<f64>,
                                                 b: &Array2<f64>| {
        a * b
    });

    /// `(m x n) + (1 x n)` with the bias row broadcast over rows.
    pub fn add_bias(&self, bias: &Var) -> Result<Var> {
        self.tape.same_tape(&bias.tape)?;
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let x = &inner.nodes[self.id];
            let b = &inner.nodes[bias.id];
            if b.value.nrows() != 1 || b.value.ncols() != x.value.ncols() {
                return Err(shape_err("add_broadcast_bias", x.value.dim(), b.value.dim()));
            }
            let value = &x.value + &b.value.row(0);
            (value, x.requires_grad || b.requires_grad)
        };
        Ok(self.tape.push(Op::AddBias(self.id, bias.id), value, rg))
    }

    unary_map!(neg, Neg, |x| -x);
    unary_map!(square, Square, |x| x * x);
    unary_map!(abs, Abs, f64::abs);
    unary_map!(sigmoid, Sigmoid, sigmoid_scalar);

    pub fn scalar_mul(&self, c: f64) -> Var {
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let n = &inner.nodes[self.id];
            (n.value.mapv(|x| c * x), n.requires_grad)
        };
        self.tape.push(Op::ScalarMul(c, self.id), value, rg)
    }

    pub fn leaky_relu(&self, slope: f64) -> Var {
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let n = &inner.nodes[self.id];
            (
                n.value.mapv(|x| leaky_relu_scalar(x, slope)),
                n.requires_grad,
            )
        };
        self.tape.push(
            Op::LeakyRelu {
                slope,
                input: self.id,
            },
            value,
            rg,
        )
    }

    /// `max(0, x)`, i.e. leaky_relu with slope 0.
    pub fn relu(&self) -> Var {
        self.leaky_relu(0.0)
    }

    /// Natural log; every entry must be strictly positive.
    pub fn log(&self) -> Result<Var> {
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let n = &inner.nodes[self.id];
            if let Some(&bad) = n.value.iter().find(|v| **v <= 0.0 || !v.is_finite()) {
                return Err(AutodiffError::DomainViolation {
                    op: "log",
                    value: bad,
                });
            }
            (n.value.mapv(f64::ln), n.requires_grad)
        };
        Ok(self.tape.push(Op::Log(self.id), value, rg))
    }

    /// Elementwise reciprocal; every entry must be nonzero.
    pub fn recip(&self) -> Result<Var> {
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let n = &inner.nodes[self.id];
            if n.value.iter().any(|v| *v == 0.0) {
                return Err(AutodiffError::DomainViolation {
                    op: "recip",
                    value: 0.0,
                });
            }
            (n.value.mapv(f64::recip), n.requires_grad)
        };
        Ok(self.tape.push(Op::Recip(self.id), value, rg))
    }

    /// Elementwise square root; every entry must be non-negative.
    pub fn sqrt(&self) -> Result<Var> {
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let n = &inner.nodes[self.id];
            if let Some(&bad) = n.value.iter().find(|v| **v < 0.0) {
                return Err(AutodiffError::DomainViolation {
                    op: "sqrt",
                    value: bad,
                });
            }
            (n.value.mapv(f64::sqrt), n.requires_grad)
        };
        Ok(self.tape.push(Op::Sqrt(self.id), value, rg))
    }

    /// Sum of all entries, as a `1 x 1` tensor.
    pub fn sum(&self) -> Var {
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let n = &inner.nodes[self.id];
            (
                Array2::from_elem((1, 1), n.value.sum()),
                n.requires_grad,
            )
        };
        self.tape.push(Op::Sum(self.id), value, rg)
    }

    /// Mean of all entries, as a `1 x 1` tensor.
    pub fn mean(&self) -> Var {
        let (rows, cols) = self.shape();
        self.sum().scalar_mul(1.0 / (rows * cols) as f64)
    }

    /// Expand a `1 x 1` tensor to `rows x cols`.
    pub fn broadcast_scalar(&self, rows: usize, cols: usize) -> Result<Var> {
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let n = &inner.nodes[self.id];
            if n.value.dim() != (1, 1) {
                return Err(shape_err("broadcast_scalar", n.value.dim(), (1, 1)));
            }
            (
                Array2::from_elem((rows, cols), n.value[(0, 0)]),
                n.requires_grad,
            )
        };
        Ok(self.tape.push(
            Op::BroadcastScalar {
                input: self.id,
                rows,
                cols,
            },
            value,
            rg,
        ))
    }

    /// Elementwise `x + c`.
    pub fn add_scalar(&self, c: f64) -> Result<Var> {
        let (rows, cols) = self.shape();
        self.add(&self.tape.constant_full(rows, cols, c))
    }

    /// Elementwise `sqrt(x^2 + 1) - 1` (unit pseudo-Huber).
    pub fn pseudo_huber_unit(&self) -> Result<Var> {
        self.square().add_scalar(1.0)?.sqrt()?.add_scalar(-1.0)
    }

    /// Row-wise sum, `m x n -> m x 1`, via matmul with a ones column.
    pub fn sum_rows(&self) -> Result<Var> {
        let (_, cols) = self.shape();
        self.matmul(&self.tape.constant_full(cols, 1, 1.0))
    }
}

/// Adjoints produced by [`Tape::backward`], keyed by node.
pub struct Gradients {
    grads: HashMap<NodeId, Var>,
}

impl Gradients {
    /// Adjoint of `v`, as a tensor still on the tape.
    pub fn wrt(&self, v: &Var) -> Option<Var> {
        self.grads.get(&v.id).cloned()
    }

    /// Adjoint of `v` copied out of the tape; zeros if `v` did not
    /// contribute to the loss.
    pub fn value(&self, v: &Var) -> Array2<f64> {
        match self.grads.get(&v.id) {
            Some(g) => g.value(),
            None => {
                let (r, c) = v.shape();
                Array2::zeros((r, c))
            }
        }
    }
}

impl Tape {
    /// Reverse sweep from a scalar loss. Returns the adjoint of every
    /// gradient-requiring node that the loss depends on; adjoints over
    /// fan-out accumulate by summation.
    pub fn backward(&self, loss: &Var) -> Result<Gradients> {
        self.same_tape(&loss.tape)?;
        if loss.shape() != (1, 1) {
            return Err(AutodiffError::NonScalarLoss {
                shape: loss.shape(),
            });
        }
        let mask = self.requires_grad_mask(loss.id);
        let grads = self.reverse_sweep(loss.id, &mask)?;
        Ok(Gradients { grads })
    }

    /// Gradient of a scalar `output` with respect to one earlier tensor.
    /// The result is itself on the tape, so a later `backward` call
    /// differentiates through it (double backprop).
    pub fn input_gradient(&self, output: &Var, input: &Var) -> Result<Var> {
        self.same_tape(&output.tape)?;
        self.same_tape(&input.tape)?;
        if output.shape() != (1, 1) {
            return Err(AutodiffError::NonScalarLoss {
                shape: output.shape(),
            });
        }
        let mask = self.ancestry_mask(output.id, input.id);
        if !mask[output.id] {
            return Err(AutodiffError::NotAnAncestor);
        }
        let grads = self.reverse_sweep(output.id, &mask)?;
        grads
            .get(&input.id)
            .cloned()
            .ok_or(AutodiffError::NotAnAncestor)
    }

    /// `mask[i]`: node i transitively depends on a gradient-requiring leaf.
    fn requires_grad_mask(&self, upto: NodeId) -> Vec<bool> {
        let inner = self.inner.borrow();
        let mut mask = vec![false; upto + 1];
        for i in 0..=upto {
            let node = &inner.nodes[i];
            mask[i] = match node.op {
                Op::Leaf => node.requires_grad,
                _ => node
                    .op
                    .inputs()
                    .into_iter()
                    .flatten()
                    .any(|j| mask[j]),
            };
        }
        mask
    }

    /// `mask[i]`: node i transitively depends on `target`.
    fn ancestry_mask(&self, upto: NodeId, target: NodeId) -> Vec<bool> {
        let inner = self.inner.borrow();
        let mut mask = vec![false; upto + 1];
        if target <= upto {
            mask[target] = true;
        }
        for i in (target + 1)..=upto {
            mask[i] = inner.nodes[i]
                .op
                .inputs()
                .into_iter()
                .flatten()
                .any(|j| mask[j]);
        }
        mask
    }

    fn node_var(&self, id: NodeId) -> Var {
        Var {
            tape: self.clone(),
            id,
        }
    }

    /// Emit adjoint nodes for every masked ancestor of `root`, reverse
    /// topological order. `mask` limits propagation to nodes on a path to
    /// the differentiation targets.
    fn reverse_sweep(&self, root: NodeId, mask: &[bool]) -> Result<HashMap<NodeId, Var>> {
        let mut adjoint: Vec<Option<Var>> = vec![None; root + 1];
        adjoint[root] = Some(self.constant_full(1, 1, 1.0));

        let accumulate = |slot: &mut Option<Var>, g: Var| -> Result<()> {
            *slot = Some(match slot.take() {
                None => g,
                Some(prev) => prev.add(&g)?,
            });
            Ok(())
        };

        for i in (0..=root).rev() {
            if !mask[i] {
                continue;
            }
            let Some(g) = adjoint[i].clone() else {
                continue;
            };
            let op = {
                let inner = self.inner.borrow();
                inner.nodes[i].op.clone()
            };
            let out = self.node_var(i);
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if mask[a] {
                        let da = g.matmul(&self.node_var(b).transpose())?;
                        accumulate(&mut adjoint[a], da)?;
                    }
                    if mask[b] {
                        let db = self.node_var(a).transpose().matmul(&g)?;
                        accumulate(&mut adjoint[b], db)?;
                    }
                }
                Op::Transpose(a) => {
                    if mask[a] {
                        accumulate(&mut adjoint[a], g.transpose())?;
                    }
                }
                Op::Add(a, b) => {
                    if mask[a] {
                        accumulate(&mut adjoint[a], g.clone())?;
                    }
                    if mask[b] {
                        accumulate(&mut adjoint[b], g)?;
                    }
                }
                Op::AddBias(x, b) => {
                    if mask[x] {
                        accumulate(&mut adjoint[x], g.clone())?;
                    }
                    if mask[b] {
                        // Column sums via ones(1, m) . g.
                        let m = g.shape().0;
                        let ones = self.constant_full(1, m, 1.0);
                        accumulate(&mut adjoint[b], ones.matmul(&g)?)?;
                    }
                }
                Op::Sub(a, b) => {
                    if mask[a] {
                        accumulate(&mut adjoint[a], g.clone())?;
                    }
                    if mask[b] {
                        accumulate(&mut adjoint[b], g.neg())?;
                    }
                }
                Op::MulElem(a, b) => {
                    if mask[a] {
                        accumulate(&mut adjoint[a], g.mul(&self.node_var(b))?)?;
                    }
                    if mask[b] {
                        accumulate(&mut adjoint[b], g.mul(&self.node_var(a))?)?;
                    }
                }
                Op::Neg(a) => {
                    if mask[a] {
                        accumulate(&mut adjoint[a], g.neg())?;
                    }
                }
                Op::ScalarMul(c, a) => {
                    if mask[a] {
                        accumulate(&mut adjoint[a], g.scalar_mul(c))?;
                    }
                }
                Op::LeakyRelu { slope, input } => {
                    if mask[input] {
                        // Piecewise-constant derivative; a constant w.r.t.
                        // every differentiation target, so safe to bake in.
                        let deriv = {
                            let inner = self.inner.borrow();
                            inner.nodes[input]
                                .value
                                .mapv(|x| if x > 0.0 { 1.0 } else { slope })
                        };
                        let d = self.constant(deriv);
                        accumulate(&mut adjoint[input], g.mul(&d)?)?;
                    }
                }
                Op::Sigmoid(a) => {
                    if mask[a] {
                        // g * s * (1 - s), with s the node's own output so
                        // higher-order sweeps see the dependency.
                        let (r, c) = out.shape();
                        let one = self.constant_full(r, c, 1.0);
                        let da = g.mul(&out)?.mul(&one.sub(&out)?)?;
                        accumulate(&mut adjoint[a], da)?;
                    }
                }
                Op::Log(a) => {
                    if mask[a] {
                        accumulate(&mut adjoint[a], g.mul(&self.node_var(a).recip()?)?)?;
                    }
                }
                Op::Recip(a) => {
                    if mask[a] {
                        // -g / x^2 = -g * out^2
                        accumulate(&mut adjoint[a], g.mul(&out.square())?.neg())?;
                    }
                }
                Op::Square(a) => {
                    if mask[a] {
                        let da = g.mul(&self.node_var(a))?.scalar_mul(2.0);
                        accumulate(&mut adjoint[a], da)?;
                    }
                }
                Op::Abs(a) => {
                    if mask[a] {
                        let sign = {
                            let inner = self.inner.borrow();
                            inner.nodes[a]
                                .value
                                .mapv(|x| if x > 0.0 { 1.0 } else { -1.0 })
                        };
                        let d = self.constant(sign);
                        accumulate(&mut adjoint[a], g.mul(&d)?)?;
                    }
                }
                Op::Sqrt(a) => {
                    if mask[a] {
                        // g / (2 sqrt(x)) via the node's own output.
                        let da = g.mul(&out.scalar_mul(2.0).recip()?)?;
                        accumulate(&mut adjoint[a], da)?;
                    }
                }
                Op::Sum(a) => {
                    if mask[a] {
                        let (r, c) = self.node_var(a).shape();
                        accumulate(&mut adjoint[a], g.broadcast_scalar(r, c)?)?;
                    }
                }
                Op::BroadcastScalar { input, .. } => {
                    if mask[input] {
                        accumulate(&mut adjoint[input], g.sum())?;
                    }
                }
            }
        }

        let mut grads = HashMap::new();
        for (i, adj) in adjoint.into_iter().enumerate() {
            if let (true, Some(v)) = (mask[i], adj) {
                grads.insert(i, v);
            }
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn scalar(tape: &Tape, x: f64) -> Var {
        tape.leaf(Array2::from_elem((1, 1), x))
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let tape = Tape::new();
        let x = scalar(&tape, 0.0);
        assert_eq!(x.sigmoid().scalar_value(), 0.5);
    }

    #[test]
    fn leaky_relu_example() {
        let tape = Tape::new();
        let x = tape.leaf(array![[-1.0, 2.0]]);
        let y = x.leaky_relu(0.2);
        assert_eq!(y.value(), array![[-0.2, 2.0]]);
    }

    #[test]
    fn pseudo_huber_identity_case() {
        let tape = Tape::new();
        let x = scalar(&tape, 0.0);
        assert_eq!(x.pseudo_huber_unit().unwrap().scalar_value(), 0.0);
    }

    #[test]
    fn backward_of_sum_of_squares() {
        let tape = Tape::new();
        let w = tape.leaf(array![[1.0, 2.0, 3.0]]);
        let loss = w.mul(&w).unwrap().sum();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.value(&w), array![[2.0, 4.0, 6.0]]);
    }

    #[test]
    fn backward_of_mean() {
        let tape = Tape::new();
        let x = tape.leaf(array![[1.0, 2.0, 3.0, 4.0]]);
        let loss = x.mean();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.value(&x), array![[0.25, 0.25, 0.25, 0.25]]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let tape = Tape::new();
        let x = tape.leaf(array![[1.0, 2.0]]);
        let err = tape.backward(&x).unwrap_err();
        assert_eq!(err, AutodiffError::NonScalarLoss { shape: (1, 2) });
    }

    #[test]
    fn matmul_shape_mismatch_names_op() {
        let tape = Tape::new();
        let a = tape.leaf(array![[1.0, 2.0]]);
        let b = tape.leaf(array![[1.0, 2.0]]);
        match a.matmul(&b) {
            Err(AutodiffError::ShapeMismatch { op, .. }) => assert_eq!(op, "matmul"),
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn log_domain_violation() {
        let tape = Tape::new();
        let x = tape.leaf(array![[0.5, -0.25]]);
        match x.log() {
            Err(AutodiffError::DomainViolation { op, value }) => {
                assert_eq!(op, "log");
                assert_eq!(value, -0.25);
            }
            other => panic!("expected domain violation, got {other:?}"),
        }
    }

    #[test]
    fn input_gradient_of_sum_of_squares() {
        let tape = Tape::new();
        let x = tape.leaf(array![[1.0, 2.0]]);
        let d = x.square().sum();
        let gx = tape.input_gradient(&d, &x).unwrap();
        assert_eq!(gx.value(), array![[2.0, 4.0]]);
    }

    #[test]
    fn input_gradient_of_linear_map_is_constant() {
        let tape = Tape::new();
        let a = tape.constant(array![[2.0], [-3.0]]);
        for xv in [array![[1.0, 5.0]], array![[-4.0, 0.5]]] {
            let x = tape.leaf(xv);
            let y = x.matmul(&a).unwrap().sum();
            let gx = tape.input_gradient(&y, &x).unwrap();
            assert_eq!(gx.value(), array![[2.0, -3.0]]);
        }
    }

    #[test]
    fn input_gradient_requires_ancestry() {
        let tape = Tape::new();
        let x = tape.leaf(array![[1.0]]);
        let y = tape.leaf(array![[2.0]]);
        let loss = x.square().sum();
        assert_eq!(
            tape.input_gradient(&loss, &y).unwrap_err(),
            AutodiffError::NotAnAncestor
        );
    }

    #[test]
    fn fan_out_accumulates_by_summation() {
        let tape = Tape::new();
        let x = scalar(&tape, 3.0);
        // y = x*x + x  =>  dy/dx = 2x + 1 = 7
        let y = x.mul(&x).unwrap().add(&x).unwrap();
        let grads = tape.backward(&y).unwrap();
        assert_eq!(grads.value(&x), array![[7.0]]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(array![[2.0]]);
        let c = tape.constant(array![[5.0]]);
        let y = x.mul(&c).unwrap().sum();
        let grads = tape.backward(&y).unwrap();
        assert_eq!(grads.value(&x), array![[5.0]]);
        assert!(grads.wrt(&c).is_none());
    }

    #[test]
    fn second_order_through_input_gradient() {
        // f(x) = x^3 (as x * x * x); s = df/dx = 3x^2; d(s)/dx = 6x.
        let tape = Tape::new();
        let x = scalar(&tape, 3.0);
        let y = x.mul(&x).unwrap().mul(&x).unwrap().sum();
        let gx = tape.input_gradient(&y, &x).unwrap();
        assert_eq!(gx.scalar_value(), 27.0);
        let second = tape.backward(&gx.sum()).unwrap();
        assert_eq!(second.value(&x), array![[18.0]]);
    }

    #[test]
    fn tape_mismatch_detected() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let a = scalar(&t1, 1.0);
        let b = scalar(&t2, 1.0);
        assert_eq!(a.add(&b).unwrap_err(), AutodiffError::TapeMismatch);
    }

    #[test]
    fn tape_is_deterministic() {
        let run = || {
            let tape = Tape::new();
            let x = tape.leaf(array![[0.3, -1.7], [2.2, 0.9]]);
            let w = tape.leaf(array![[0.5, -0.25], [1.5, 0.75]]);
            let y = x
                .matmul(&w)
                .unwrap()
                .leaky_relu(0.2)
                .sigmoid()
                .log()
                .unwrap()
                .mean();
            let g = tape.backward(&y).unwrap();
            (y.scalar_value(), g.value(&w), g.value(&x))
        };
        let (y1, gw1, gx1) = run();
        let (y2, gw2, gx2) = run();
        assert_eq!(y1.to_bits(), y2.to_bits());
        assert_eq!(gw1, gw2);
        assert_eq!(gx1, gx2);
    }
}
