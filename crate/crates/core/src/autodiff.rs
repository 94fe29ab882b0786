//! Vector-valued reverse-mode differentiation tape.
//!
//! Each node holds a dense `f64` vector (scalars are length-1 vectors).
//! Leaves may borrow their values, so model parameters are bound to a tape
//! without copying. Nodes are appended in evaluation order, which makes the
//! reverse sweep a single pass over the node list.
//!
//! Kinks use zero subgradients: `|x|`, `max(x, 0)` and `‖x‖₂` all have
//! derivative 0 at the origin.

use std::borrow::Cow;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    /// `w · x + b` with `w` stored row-major `rows × cols`.
    Affine {
        w: Var,
        b: Var,
        x: Var,
        rows: usize,
        cols: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Tanh(Var),
    Exp(Var),
    Abs(Var),
    Relu(Var),
    Concat(Var, Var),
    AvgPool { x: Var, group: usize },
    Sum(Var),
    Norm2(Var),
}

struct Node<'p> {
    value: Cow<'p, [f64]>,
    op: Op,
}

#[derive(Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'p, [f64]>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Vec<f64>) -> Var {
        self.push(Cow::Owned(value), Op::Leaf)
    }

    pub fn leaf_ref(&mut self, value: &'p [f64]) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf)
    }

    pub fn scalar_leaf(&mut self, value: f64) -> Var {
        self.leaf(vec![value])
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    /// Value of a length-1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let value = self.value(v);
        debug_assert_eq!(value.len(), 1);
        value[0]
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value: Vec<f64> = self.value(a).iter().map(|x| f(*x)).collect();
        self.push(Cow::Owned(value), op)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.len(), vb.len(), "elementwise operands differ in length");
        let value: Vec<f64> = va.iter().zip(vb).map(|(x, y)| f(*x, *y)).collect();
        self.push(Cow::Owned(value), op)
    }

    pub fn affine(&mut self, w: Var, b: Var, x: Var, rows: usize, cols: usize) -> Var {
        let (wv, bv, xv) = (self.value(w), self.value(b), self.value(x));
        assert_eq!(wv.len(), rows * cols, "weight shape");
        assert_eq!(bv.len(), rows, "bias shape");
        assert_eq!(xv.len(), cols, "input shape");
        let value = affine_forward(wv, bv, xv);
        self.push(
            Cow::Owned(value),
            Op::Affine {
                w,
                b,
                x,
                rows,
                cols,
            },
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Offset(a), |x| x + c)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), f64::abs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).to_vec();
        value.extend_from_slice(self.value(b));
        self.push(Cow::Owned(value), Op::Concat(a, b))
    }

    /// Means over consecutive groups of `group` elements.
    pub fn avg_pool(&mut self, x: Var, group: usize) -> Var {
        let xv = self.value(x);
        assert!(group > 0 && xv.len() % group == 0, "pool group must divide length");
        let value = avg_pool_forward(xv, group);
        self.push(Cow::Owned(value), Op::AvgPool { x, group })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(Cow::Owned(vec![s]), Op::Sum(a))
    }

    pub fn norm2(&mut self, a: Var) -> Var {
        let n = self.value(a).iter().map(|x| x * x).sum::<f64>().sqrt();
        self.push(Cow::Owned(vec![n]), Op::Norm2(a))
    }

    /// `‖a − b‖₁`
    pub fn l1_distance(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let d = self.abs(d);
        self.sum(d)
    }

    /// `‖a − b‖₂`
    pub fn l2_distance(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        self.norm2(d)
    }

    /// Gradients of the scalar node `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.value(output).len(), 1, "backward needs a scalar output");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match node.op {
                Op::Leaf => {}
                Op::Affine {
                    w,
                    b,
                    x,
                    rows,
                    cols,
                } => {
                    let wv = self.value(w);
                    let xv = self.value(x);
                    let gw = slot(&mut grads, w, rows * cols);
                    for r in 0..rows {
                        if g[r] == 0.0 {
                            continue;
                        }
                        let row = &mut gw[r * cols..(r + 1) * cols];
                        for (dst, xj) in row.iter_mut().zip(xv) {
                            *dst += g[r] * xj;
                        }
                    }
                    accumulate(slot(&mut grads, b, rows), &g);
                    let gx = slot(&mut grads, x, cols);
                    for r in 0..rows {
                        if g[r] == 0.0 {
                            continue;
                        }
                        for (dst, wj) in gx.iter_mut().zip(&wv[r * cols..(r + 1) * cols]) {
                            *dst += g[r] * wj;
                        }
                    }
                }
                Op::Add(a, b) => {
                    accumulate(slot(&mut grads, a, g.len()), &g);
                    accumulate(slot(&mut grads, b, g.len()), &g);
                }
                Op::Sub(a, b) => {
                    accumulate(slot(&mut grads, a, g.len()), &g);
                    for (dst, gi) in slot(&mut grads, b, g.len()).iter_mut().zip(&g) {
                        *dst -= gi;
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(a), self.value(b));
                    for ((dst, gi), y) in slot(&mut grads, a, g.len()).iter_mut().zip(&g).zip(vb) {
                        *dst += gi * y;
                    }
                    for ((dst, gi), x) in slot(&mut grads, b, g.len()).iter_mut().zip(&g).zip(va) {
                        *dst += gi * x;
                    }
                }
                Op::Scale(a, c) => {
                    for (dst, gi) in slot(&mut grads, a, g.len()).iter_mut().zip(&g) {
                        *dst += c * gi;
                    }
                }
                Op::Offset(a) => accumulate(slot(&mut grads, a, g.len()), &g),
                Op::Tanh(a) => {
                    let y = &node.value;
                    for ((dst, gi), yi) in slot(&mut grads, a, g.len()).iter_mut().zip(&g).zip(y.iter()) {
                        *dst += gi * (1.0 - yi * yi);
                    }
                }
                Op::Exp(a) => {
                    let y = &node.value;
                    for ((dst, gi), yi) in slot(&mut grads, a, g.len()).iter_mut().zip(&g).zip(y.iter()) {
                        *dst += gi * yi;
                    }
                }
                Op::Abs(a) => {
                    let xv = self.value(a);
                    for ((dst, gi), x) in slot(&mut grads, a, g.len()).iter_mut().zip(&g).zip(xv) {
                        *dst += gi * sign(*x);
                    }
                }
                Op::Relu(a) => {
                    let xv = self.value(a);
                    for ((dst, gi), x) in slot(&mut grads, a, g.len()).iter_mut().zip(&g).zip(xv) {
                        if *x > 0.0 {
                            *dst += gi;
                        }
                    }
                }
                Op::Concat(a, b) => {
                    let na = self.value(a).len();
                    let nb = self.value(b).len();
                    accumulate(slot(&mut grads, a, na), &g[..na]);
                    accumulate(slot(&mut grads, b, nb), &g[na..]);
                }
                Op::AvgPool { x, group } => {
                    let n = self.value(x).len();
                    let inv = 1.0 / group as f64;
                    for (k, dst) in slot(&mut grads, x, n).iter_mut().enumerate() {
                        *dst += g[k / group] * inv;
                    }
                }
                Op::Sum(a) => {
                    let n = self.value(a).len();
                    for dst in slot(&mut grads, a, n).iter_mut() {
                        *dst += g[0];
                    }
                }
                Op::Norm2(a) => {
                    let norm = node.value[0];
                    let xv = self.value(a);
                    let gx = slot(&mut grads, a, xv.len());
                    if norm > 0.0 {
                        for (dst, x) in gx.iter_mut().zip(xv) {
                            *dst += g[0] * x / norm;
                        }
                    }
                }
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn affine_forward(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    b.iter()
        .enumerate()
        .map(|(r, bias)| {
            bias + w[r * cols..(r + 1) * cols]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        })
        .collect()
}

pub(crate) fn avg_pool_forward(x: &[f64], group: usize) -> Vec<f64> {
    x.chunks(group)
        .map(|c| c.iter().sum::<f64>() / group as f64)
        .collect()
}

/// Per-node gradients from [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}
