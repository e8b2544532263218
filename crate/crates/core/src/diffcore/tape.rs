//! Wengert-list tape for reverse-mode differentiation.
//!
//! Every node stores its value and the local partial derivatives with respect
//! to its inputs. Values are computed eagerly when a node is recorded, so the
//! tape is always in topological order. Nodes that do not depend on any leaf
//! are recorded as inactive and carry no edges; this keeps data-only
//! sub-expressions (feature inputs, fixed basis values) off the reverse sweep.

use std::cell::RefCell;
use std::f64::consts::PI;

use thiserror::Error;

pub type NodeId = u32;

/// Scalar operation recorded on the tape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Leaf,
    Const,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Ln,
    Tanh,
    Relu,
    Softplus,
    Sigmoid,
    Erf,
    Sqrt,
    Powf(f64),
    /// Node built from precomputed partials (dot products, spline pieces, ...).
    Fused,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Const => "const",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::Exp => "exp",
            Op::Ln => "ln",
            Op::Tanh => "tanh",
            Op::Relu => "relu",
            Op::Softplus => "softplus",
            Op::Sigmoid => "sigmoid",
            Op::Erf => "erf",
            Op::Sqrt => "sqrt",
            Op::Powf(_) => "powf",
            Op::Fused => "fused",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Op::Leaf | Op::Const => Some(0),
            Op::Add | Op::Sub | Op::Mul | Op::Div => Some(2),
            Op::Fused => None,
            _ => Some(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiffError {
    #[error("domain error in `{op}` at node {node}: operand {operand}")]
    Domain {
        node: NodeId,
        op: &'static str,
        operand: f64,
    },
    #[error("node {node} is not on this tape (length {len})")]
    UnknownNode { node: NodeId, len: usize },
    #[error("`{op}` takes {expected} inputs, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("`{0}` must be recorded through its dedicated constructor")]
    NotRecordable(&'static str),
}

#[derive(Debug, Clone, Copy)]
struct Edge {
    input: NodeId,
    partial: f64,
}

#[derive(Debug, Default)]
struct Inner {
    values: Vec<f64>,
    active: Vec<bool>,
    ops: Vec<Op>,
    /// `edge_end[i]` is one past the last edge of node `i`.
    edge_end: Vec<u32>,
    edges: Vec<Edge>,
    error: Option<DiffError>,
}

impl Inner {
    fn edges_of(&self, node: usize) -> &[Edge] {
        let start = if node == 0 {
            0
        } else {
            self.edge_end[node - 1] as usize
        };
        &self.edges[start..self.edge_end[node] as usize]
    }

    fn push_node(&mut self, op: Op, value: f64, parts: &[(NodeId, f64)]) -> NodeId {
        let id = self.values.len() as NodeId;
        let mut active = false;
        for &(input, partial) in parts {
            if self.active[input as usize] {
                active = true;
                self.edges.push(Edge { input, partial });
            }
        }
        self.values.push(value);
        self.active.push(active || op == Op::Leaf);
        self.ops.push(op);
        self.edge_end.push(self.edges.len() as u32);
        id
    }

    fn note_error(&mut self, err: DiffError) {
        if self.error.is_none() {
            self.error = Some(err);
        }
    }
}

/// Gradient tape. Single-threaded; create one per worker.
#[derive(Debug, Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize, edges: usize) -> Self {
        Tape {
            inner: RefCell::new(Inner {
                values: Vec::with_capacity(nodes),
                active: Vec::with_capacity(nodes),
                ops: Vec::with_capacity(nodes),
                edge_end: Vec::with_capacity(nodes),
                edges: Vec::with_capacity(edges),
                error: None,
            }),
        }
    }

    /// Differentiable input.
    pub fn leaf(&self, value: f64) -> Var<'_> {
        let id = self.inner.borrow_mut().push_node(Op::Leaf, value, &[]);
        Var { tape: self, id }
    }

    /// Non-differentiable input.
    pub fn constant(&self, value: f64) -> Var<'_> {
        let id = self.inner.borrow_mut().push_node(Op::Const, value, &[]);
        Var { tape: self, id }
    }

    pub fn var(&self, id: NodeId) -> Result<Var<'_>, DiffError> {
        self.check(id)?;
        Ok(Var { tape: self, id })
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, id: NodeId) -> f64 {
        self.inner.borrow().values[id as usize]
    }

    pub fn op(&self, id: NodeId) -> Op {
        self.inner.borrow().ops[id as usize]
    }

    pub fn is_active(&self, id: NodeId) -> bool {
        self.inner.borrow().active[id as usize]
    }

    /// Local partials of node `id` with respect to its active inputs.
    pub fn partials(&self, id: NodeId) -> Vec<(NodeId, f64)> {
        self.inner
            .borrow()
            .edges_of(id as usize)
            .iter()
            .map(|e| (e.input, e.partial))
            .collect()
    }

    /// First domain error raised by an operator-overloaded expression, if any.
    pub fn error(&self) -> Option<DiffError> {
        self.inner.borrow().error.clone()
    }

    /// Drop every node recorded at or after `len`.
    pub fn truncate(&self, len: usize) {
        let mut inner = self.inner.borrow_mut();
        if len >= inner.values.len() {
            return;
        }
        let edge_len = if len == 0 {
            0
        } else {
            inner.edge_end[len - 1] as usize
        };
        inner.values.truncate(len);
        inner.active.truncate(len);
        inner.ops.truncate(len);
        inner.edge_end.truncate(len);
        inner.edges.truncate(edge_len);
        if let Some(DiffError::Domain { node, .. }) = inner.error {
            if node as usize >= len {
                inner.error = None;
            }
        }
    }

    pub fn clear(&self) {
        self.truncate(0);
        self.inner.borrow_mut().error = None;
    }

    fn check(&self, id: NodeId) -> Result<(), DiffError> {
        let len = self.len();
        if (id as usize) < len {
            Ok(())
        } else {
            Err(DiffError::UnknownNode { node: id, len })
        }
    }

    /// Record `op` applied to `inputs`; the value is computed immediately.
    pub fn record(&self, op: Op, inputs: &[NodeId]) -> Result<NodeId, DiffError> {
        match op.arity() {
            None => return Err(DiffError::NotRecordable(op.name())),
            Some(0) => return Err(DiffError::NotRecordable(op.name())),
            Some(n) if n != inputs.len() => {
                return Err(DiffError::Arity {
                    op: op.name(),
                    expected: n,
                    got: inputs.len(),
                })
            }
            _ => {}
        }
        for &i in inputs {
            self.check(i)?;
        }
        let mut inner = self.inner.borrow_mut();
        let next = inner.values.len() as NodeId;
        let a = inner.values[inputs[0] as usize];
        let domain = |operand: f64| DiffError::Domain {
            node: next,
            op: op.name(),
            operand,
        };
        let (value, pa, pb) = match op {
            Op::Add => (a + inner.values[inputs[1] as usize], 1.0, 1.0),
            Op::Sub => (a - inner.values[inputs[1] as usize], 1.0, -1.0),
            Op::Mul => {
                let b = inner.values[inputs[1] as usize];
                (a * b, b, a)
            }
            Op::Div => {
                let b = inner.values[inputs[1] as usize];
                if b == 0.0 {
                    return Err(domain(b));
                }
                (a / b, 1.0 / b, -a / (b * b))
            }
            Op::Neg => (-a, -1.0, 0.0),
            Op::Exp => {
                let e = a.exp();
                (e, e, 0.0)
            }
            Op::Ln => {
                if a <= 0.0 {
                    return Err(domain(a));
                }
                (a.ln(), 1.0 / a, 0.0)
            }
            Op::Tanh => {
                let t = a.tanh();
                (t, 1.0 - t * t, 0.0)
            }
            Op::Relu => {
                if a > 0.0 {
                    (a, 1.0, 0.0)
                } else {
                    (0.0, 0.0, 0.0)
                }
            }
            Op::Softplus => (softplus(a), sigmoid(a), 0.0),
            Op::Sigmoid => {
                let s = sigmoid(a);
                (s, s * (1.0 - s), 0.0)
            }
            Op::Erf => (libm::erf(a), 2.0 / PI.sqrt() * (-a * a).exp(), 0.0),
            Op::Sqrt => {
                if a < 0.0 {
                    return Err(domain(a));
                }
                let s = a.sqrt();
                (s, 0.5 / s, 0.0)
            }
            Op::Powf(p) => {
                if (a < 0.0 && p.fract() != 0.0) || (a == 0.0 && p < 0.0) {
                    return Err(domain(a));
                }
                (a.powf(p), p * a.powf(p - 1.0), 0.0)
            }
            Op::Leaf | Op::Const | Op::Fused => unreachable!(),
        };
        let parts = [(inputs[0], pa), (*inputs.get(1).unwrap_or(&inputs[0]), pb)];
        Ok(inner.push_node(op, value, &parts[..inputs.len()]))
    }

    /// Record a node whose value and partials were computed by the caller.
    pub fn record_fused(&self, value: f64, parts: &[(NodeId, f64)]) -> NodeId {
        self.inner.borrow_mut().push_node(Op::Fused, value, parts)
    }

    fn record_or_nan(&self, op: Op, inputs: &[NodeId]) -> NodeId {
        match self.record(op, inputs) {
            Ok(id) => id,
            Err(err) => {
                let mut inner = self.inner.borrow_mut();
                inner.note_error(err);
                inner.push_node(Op::Fused, f64::NAN, &[])
            }
        }
    }

    /// Full reverse sweep from `output`; returns adjoints for every node.
    pub fn adjoints(&self, output: NodeId) -> Result<Vec<f64>, DiffError> {
        self.check(output)?;
        let inner = self.inner.borrow();
        let mut adj = vec![0.0; output as usize + 1];
        adj[output as usize] = 1.0;
        for node in (0..=output as usize).rev() {
            let a = adj[node];
            if a == 0.0 {
                continue;
            }
            for e in inner.edges_of(node) {
                adj[e.input as usize] += a * e.partial;
            }
        }
        Ok(adj)
    }

    /// Gradient of `output` with respect to `wrt`.
    pub fn gradient(&self, output: NodeId, wrt: &[NodeId]) -> Result<Vec<f64>, DiffError> {
        let adj = self.adjoints(output)?;
        wrt.iter()
            .map(|&w| {
                self.check(w)?;
                Ok(adj.get(w as usize).copied().unwrap_or(0.0))
            })
            .collect()
    }

    /// Reverse sweep restricted to nodes in `[mark, output]`.
    ///
    /// `seed` is the adjoint of `output`. Contributions reaching nodes below
    /// `mark` are added into `prefix`. `scratch` is reused between calls.
    pub fn backward_segment(
        &self,
        output: NodeId,
        seed: f64,
        mark: usize,
        prefix: &mut [f64],
        scratch: &mut Vec<f64>,
    ) -> Result<(), DiffError> {
        self.check(output)?;
        let out = output as usize;
        if out < mark {
            prefix[out] += seed;
            return Ok(());
        }
        let inner = self.inner.borrow();
        scratch.clear();
        scratch.resize(out + 1 - mark, 0.0);
        scratch[out - mark] = seed;
        for node in (mark..=out).rev() {
            let a = scratch[node - mark];
            if a == 0.0 {
                continue;
            }
            for e in inner.edges_of(node) {
                let i = e.input as usize;
                if i >= mark {
                    scratch[i - mark] += a * e.partial;
                } else {
                    prefix[i] += a * e.partial;
                }
            }
        }
        Ok(())
    }

    /// Propagate adjoints held in `adj` (indexed by node, covering `0..adj.len()`)
    /// down to the leaves.
    pub fn backward_prefix(&self, adj: &mut [f64]) {
        let inner = self.inner.borrow();
        for node in (0..adj.len()).rev() {
            let a = adj[node];
            if a == 0.0 {
                continue;
            }
            for e in inner.edges_of(node) {
                adj[e.input as usize] += a * e.partial;
            }
        }
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    (-x.abs()).exp().ln_1p() + x.max(0.0)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{} = {})", self.id, self.val())
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn val(&self) -> f64 {
        self.tape.value(self.id)
    }

    pub(crate) fn unary(self, op: Op) -> Self {
        Var {
            tape: self.tape,
            id: self.tape.record_or_nan(op, &[self.id]),
        }
    }

    pub(crate) fn binary(self, other: Self, op: Op) -> Self {
        debug_assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars from different tapes"
        );
        Var {
            tape: self.tape,
            id: self.tape.record_or_nan(op, &[self.id, other.id]),
        }
    }

    pub(crate) fn fused(tape: &'t Tape, value: f64, parts: &[(NodeId, f64)]) -> Self {
        Var {
            tape,
            id: tape.record_fused(value, parts),
        }
    }

    fn affine1(self, scale: f64, offset: f64) -> Self {
        let v = self.val();
        Self::fused(self.tape, scale * v + offset, &[(self.id, scale)])
    }

    /// Gradient of this node with respect to `wrt`.
    pub fn gradient(&self, wrt: &[Var<'t>]) -> Result<Vec<f64>, DiffError> {
        let ids: Vec<NodeId> = wrt.iter().map(|v| v.id).collect();
        self.tape.gradient(self.id, &ids)
    }
}

macro_rules! var_binop {
    ($trait:ident, $method:ident, $op:expr) => {
        impl<'t> std::ops::$trait for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                self.binary(rhs, $op)
            }
        }
    };
}

var_binop!(Add, add, Op::Add);
var_binop!(Sub, sub, Op::Sub);
var_binop!(Mul, mul, Op::Mul);
var_binop!(Div, div, Op::Div);

impl<'t> std::ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(Op::Neg)
    }
}

impl<'t> std::ops::Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.affine1(1.0, rhs)
    }
}

impl<'t> std::ops::Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self.affine1(1.0, -rhs)
    }
}

impl<'t> std::ops::Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.affine1(rhs, 0.0)
    }
}

impl<'t> std::ops::Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Var<'t> {
        if rhs == 0.0 {
            let mut inner = self.tape.inner.borrow_mut();
            let node = inner.values.len() as NodeId;
            inner.note_error(DiffError::Domain {
                node,
                op: "div",
                operand: rhs,
            });
            let id = inner.push_node(Op::Fused, f64::NAN, &[]);
            return Var {
                tape: self.tape,
                id,
            };
        }
        let v = self.val();
        Self::fused(self.tape, v / rhs, &[(self.id, 1.0 / rhs)])
    }
}

impl<'t> std::ops::Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        rhs + self
    }
}

impl<'t> std::ops::Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        rhs.affine1(-1.0, self)
    }
}

impl<'t> std::ops::Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        rhs * self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let tape = Tape::new();
        let a = tape.leaf(2.0);
        let b = tape.leaf(3.0);
        let f = a * b;
        assert_eq!(f.val(), 6.0);
        assert_eq!(f.gradient(&[a, b]).unwrap(), vec![3.0, 2.0]);
    }

    #[test]
    fn softplus_at_zero() {
        let tape = Tape::new();
        let a = tape.leaf(0.0);
        let f = a.unary(Op::Softplus);
        assert!((f.val() - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(f.gradient(&[a]).unwrap(), vec![0.5]);
    }

    #[test]
    fn exp_plus_square() {
        let tape = Tape::new();
        let a = tape.leaf(1.0);
        let f = a.unary(Op::Exp) + a * a;
        let g = f.gradient(&[a]).unwrap()[0];
        assert!((g - (std::f64::consts::E + 2.0)).abs() < 1e-12);
        assert!((g - 4.718282).abs() < 1e-6);
    }

    #[test]
    fn explicit_record_reports_domain_errors() {
        let tape = Tape::new();
        let a = tape.leaf(-1.0);
        let z = tape.leaf(0.0);
        let err = tape.record(Op::Ln, &[a.id()]).unwrap_err();
        assert!(matches!(
            err,
            DiffError::Domain {
                op: "ln",
                node: 2,
                ..
            }
        ));
        let err = tape.record(Op::Div, &[a.id(), z.id()]).unwrap_err();
        assert!(matches!(err, DiffError::Domain { op: "div", .. }));
        assert!(tape.record(Op::Ln, &[z.id()]).is_err());
    }

    #[test]
    fn overloaded_domain_error_is_kept_on_tape() {
        let tape = Tape::new();
        let a = tape.leaf(-2.0);
        let f = a.unary(Op::Ln) + a;
        assert!(f.val().is_nan());
        match tape.error() {
            Some(DiffError::Domain { node, op, operand }) => {
                assert_eq!(node, 1);
                assert_eq!(op, "ln");
                assert_eq!(operand, -2.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn record_checks_arity_and_ids() {
        let tape = Tape::new();
        let a = tape.leaf(1.0);
        assert!(matches!(
            tape.record(Op::Add, &[a.id()]),
            Err(DiffError::Arity { .. })
        ));
        assert!(matches!(
            tape.record(Op::Exp, &[7]),
            Err(DiffError::UnknownNode { node: 7, .. })
        ));
        assert!(tape.adjoints(99).is_err());
    }

    #[test]
    fn constants_carry_no_edges() {
        let tape = Tape::new();
        let c = tape.constant(3.0);
        let d = c.unary(Op::Exp) * c;
        assert!(!tape.is_active(d.id()));
        assert!(tape.partials(d.id()).is_empty());
        let a = tape.leaf(1.0);
        let e = a * d;
        assert_eq!(tape.partials(e.id()).len(), 1);
    }

    #[test]
    fn segmented_backward_matches_full_sweep() {
        let tape = Tape::new();
        let w = tape.leaf(0.7);
        let b = tape.leaf(-0.2);
        let shared = (w * w).unary(Op::Softplus);
        let mark = tape.len();
        let mut prefix = vec![0.0; mark];
        let mut scratch = Vec::new();
        let mut total = 0.0;
        for x in [0.5, -1.0, 2.0] {
            let out = (shared * x + b).unary(Op::Tanh);
            total += out.val();
            tape.backward_segment(out.id(), 1.0, mark, &mut prefix, &mut scratch)
                .unwrap();
            tape.truncate(mark);
        }
        tape.backward_prefix(&mut prefix);

        let full = Tape::new();
        let w2 = full.leaf(0.7);
        let b2 = full.leaf(-0.2);
        let shared2 = (w2 * w2).unary(Op::Softplus);
        let mut acc = None;
        for x in [0.5, -1.0, 2.0] {
            let out = (shared2 * x + b2).unary(Op::Tanh);
            acc = Some(match acc {
                None => out,
                Some(s) => s + out,
            });
        }
        let acc = acc.unwrap();
        assert!((acc.val() - total).abs() < 1e-15);
        let g = acc.gradient(&[w2, b2]).unwrap();
        assert!((g[0] - prefix[0]).abs() < 1e-14);
        assert!((g[1] - prefix[1]).abs() < 1e-14);
    }
}
