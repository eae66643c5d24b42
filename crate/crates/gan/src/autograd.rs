//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Backward passes are themselves recorded on the tape, so a gradient can be
//! differentiated again. The gradient penalty relies on this: it needs the
//! parameter gradient of a norm of an input gradient.

use std::cell::RefCell;
use std::rc::Rc;

use crate::tensor::{col2im, im2col, matmul, ConvGeom, Real, Tensor};

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Affine(usize, T),
    MulConst(usize, Rc<Tensor<T>>),
    MatMul(usize, usize, bool, bool),
    AddRow(usize, usize),
    SumRows(usize),
    BroadcastRows(usize),
    SumCols(usize),
    BroadcastCols(usize),
    SumAll(usize),
    Expand(usize),
    Reshape(usize),
    Powf(usize, T),
    Tanh(usize),
    Im2col(usize, ConvGeom),
    Col2im(usize, ConvGeom),
    ConcatCols(usize, usize),
    SliceCols(usize, usize),
    PadCols(usize, usize),
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// A recording tape. Create one per forward/backward pass.
pub struct Graph<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T: Real> {
    graph: &'g Graph<T>,
    id: usize,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// A trainable input.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    fn value(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn var(&self, id: usize) -> Var<'_, T> {
        Var { graph: self, id }
    }

    /// Gradients of scalar `y` with respect to each of `wrt`.
    ///
    /// The returned vars are recorded on the tape and can be differentiated
    /// again. Inputs `y` does not depend on get a zero gradient.
    pub fn grad<'g>(&'g self, y: Var<'g, T>, wrt: &[Var<'g, T>]) -> Vec<Var<'g, T>> {
        assert_eq!(y.shape(), (1, 1), "grad() needs a scalar output");
        let mut grads: Vec<Option<usize>> = vec![None; y.id + 1];
        grads[y.id] = Some(self.constant(Tensor::scalar(T::ONE)).id);
        for id in (0..=y.id).rev() {
            let Some(g) = grads[id] else { continue };
            if !self.needs(id) {
                continue;
            }
            for (input, contrib) in self.vjp(id, self.var(g)) {
                grads[input] = Some(match grads[input] {
                    None => contrib.id,
                    Some(prev) => self.var(prev).add(contrib).id,
                });
            }
        }
        wrt.iter()
            .map(|w| match grads.get(w.id).copied().flatten() {
                Some(g) => self.var(g),
                None => {
                    let (r, c) = w.shape();
                    self.constant(Tensor::zeros(r, c))
                }
            })
            .collect()
    }

    /// Vector-Jacobian products of node `id` for each input needing a gradient.
    fn vjp<'g>(&'g self, id: usize, g: Var<'g, T>) -> Vec<(usize, Var<'g, T>)> {
        let op = self.nodes.borrow()[id].op.clone();
        let mut out = Vec::with_capacity(2);
        let mut emit = |input: usize, f: &dyn Fn() -> Var<'g, T>| {
            if self.needs(input) {
                out.push((input, f()));
            }
        };
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                emit(a, &|| g);
                emit(b, &|| g);
            }
            Op::Sub(a, b) => {
                emit(a, &|| g);
                emit(b, &|| g.scale(-T::ONE));
            }
            Op::Mul(a, b) => {
                emit(a, &|| g.mul(self.var(b)));
                emit(b, &|| g.mul(self.var(a)));
            }
            Op::Affine(a, m) => emit(a, &|| g.scale(m)),
            Op::MulConst(a, ref c) => emit(a, &|| g.mul_const(Rc::clone(c))),
            Op::MatMul(a, b, ta, tb) => {
                let (va, vb) = (self.var(a), self.var(b));
                // C = op(A) op(B)
                emit(a, &|| match ta {
                    false => g.matmul(vb, false, !tb),
                    true => vb.matmul(g, tb, true),
                });
                emit(b, &|| match tb {
                    false => va.matmul(g, !ta, false),
                    true => g.matmul(va, true, ta),
                });
            }
            Op::AddRow(x, b) => {
                emit(x, &|| g);
                emit(b, &|| g.sum_rows());
            }
            Op::SumRows(x) => {
                let rows = self.value(x).rows;
                emit(x, &|| g.broadcast_rows(rows));
            }
            Op::BroadcastRows(x) => emit(x, &|| g.sum_rows()),
            Op::SumCols(x) => {
                let cols = self.value(x).cols;
                emit(x, &|| g.broadcast_cols(cols));
            }
            Op::BroadcastCols(x) => emit(x, &|| g.sum_cols()),
            Op::SumAll(x) => {
                let (r, c) = self.value(x).shape();
                emit(x, &|| g.expand(r, c));
            }
            Op::Expand(x) => emit(x, &|| g.sum_all()),
            Op::Reshape(x) => {
                let (r, c) = self.value(x).shape();
                emit(x, &|| g.reshape(r, c));
            }
            Op::Powf(x, p) => {
                let vx = self.var(x);
                emit(x, &|| {
                    if p == T::ONE {
                        g
                    } else {
                        g.mul(vx.powf(p - T::ONE).scale(p))
                    }
                });
            }
            Op::Tanh(x) => {
                let y = self.var(id);
                emit(x, &|| g.mul(y.mul(y).affine(-T::ONE, T::ONE)));
            }
            Op::Im2col(x, geom) => emit(x, &|| g.col2im(geom)),
            Op::Col2im(x, geom) => emit(x, &|| g.im2col(geom)),
            Op::ConcatCols(a, b) => {
                let (ca, cb) = (self.value(a).cols, self.value(b).cols);
                emit(a, &|| g.slice_cols(0, ca));
                emit(b, &|| g.slice_cols(ca, cb));
            }
            Op::SliceCols(x, start) => {
                let total = self.value(x).cols;
                emit(x, &|| g.pad_cols(start, total));
            }
            Op::PadCols(x, start) => {
                let cols = self.value(x).cols;
                emit(x, &|| g.slice_cols(start, cols));
            }
        }
        out
    }
}

impl<'g, T: Real> Var<'g, T> {
    pub fn value(&self) -> Rc<Tensor<T>> {
        self.graph.value(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.graph.nodes.borrow()[self.id].value.shape()
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.needs(self.id)
    }

    fn unary(self, value: Tensor<T>, op: Op<T>) -> Self {
        self.graph.push(value, op, self.requires_grad())
    }

    fn binary(self, other: Self, value: Tensor<T>, op: Op<T>) -> Self {
        let rg = self.requires_grad() || other.requires_grad();
        self.graph.push(value, op, rg)
    }

    pub fn add(self, o: Self) -> Self {
        let v = self.value().zip(&o.value(), |a, b| a + b);
        self.binary(o, v, Op::Add(self.id, o.id))
    }

    pub fn sub(self, o: Self) -> Self {
        let v = self.value().zip(&o.value(), |a, b| a - b);
        self.binary(o, v, Op::Sub(self.id, o.id))
    }

    pub fn mul(self, o: Self) -> Self {
        let v = self.value().zip(&o.value(), |a, b| a * b);
        self.binary(o, v, Op::Mul(self.id, o.id))
    }

    /// `m·x + c` elementwise.
    pub fn affine(self, m: T, c: T) -> Self {
        let v = self.value().map(|x| m * x + c);
        self.unary(v, Op::Affine(self.id, m))
    }

    pub fn scale(self, m: T) -> Self {
        self.affine(m, T::ZERO)
    }

    /// Elementwise product with a fixed tensor.
    pub fn mul_const(self, c: Rc<Tensor<T>>) -> Self {
        let v = self.value().zip(&c, |a, b| a * b);
        self.unary(v, Op::MulConst(self.id, c))
    }

    pub fn matmul(self, o: Self, ta: bool, tb: bool) -> Self {
        let v = matmul(&self.value(), ta, &o.value(), tb);
        self.binary(o, v, Op::MatMul(self.id, o.id, ta, tb))
    }

    /// Adds a `[1, cols]` row to every row.
    pub fn add_row(self, b: Self) -> Self {
        let x = self.value();
        let bv = b.value();
        assert_eq!(bv.shape(), (1, x.cols), "add_row bias shape");
        let mut v = (*x).clone();
        for row in v.data.chunks_mut(x.cols) {
            for (o, &bb) in row.iter_mut().zip(&bv.data) {
                *o += bb;
            }
        }
        self.binary(b, v, Op::AddRow(self.id, b.id))
    }

    /// Column sums, `[rows, cols] → [1, cols]`.
    pub fn sum_rows(self) -> Self {
        let x = self.value();
        let mut v = Tensor::zeros(1, x.cols);
        for row in x.data.chunks(x.cols.max(1)) {
            for (o, &a) in v.data.iter_mut().zip(row) {
                *o += a;
            }
        }
        self.unary(v, Op::SumRows(self.id))
    }

    /// `[1, cols] → [rows, cols]`.
    pub fn broadcast_rows(self, rows: usize) -> Self {
        let x = self.value();
        assert_eq!(x.rows, 1, "broadcast_rows needs a single row");
        let v = Tensor::new(rows, x.cols, x.data.repeat(rows));
        self.unary(v, Op::BroadcastRows(self.id))
    }

    /// Row sums, `[rows, cols] → [rows, 1]`.
    pub fn sum_cols(self) -> Self {
        let x = self.value();
        let data = x.data.chunks(x.cols.max(1)).map(|r| r.iter().copied().sum()).collect();
        let v = Tensor::new(x.rows, 1, data);
        self.unary(v, Op::SumCols(self.id))
    }

    /// `[rows, 1] → [rows, cols]`.
    pub fn broadcast_cols(self, cols: usize) -> Self {
        let x = self.value();
        assert_eq!(x.cols, 1, "broadcast_cols needs a single column");
        let data = x.data.iter().flat_map(|&a| std::iter::repeat(a).take(cols)).collect();
        self.unary(Tensor::new(x.rows, cols, data), Op::BroadcastCols(self.id))
    }

    pub fn sum_all(self) -> Self {
        let v = Tensor::scalar(self.value().data.iter().copied().sum());
        self.unary(v, Op::SumAll(self.id))
    }

    pub fn mean_all(self) -> Self {
        let n = self.value().len();
        self.sum_all().scale(T::ONE / T::from_f64(n as f64))
    }

    /// Scalar → `[rows, cols]`.
    pub fn expand(self, rows: usize, cols: usize) -> Self {
        let v = Tensor::filled(rows, cols, self.value().item());
        self.unary(v, Op::Expand(self.id))
    }

    pub fn reshape(self, rows: usize, cols: usize) -> Self {
        let v = self.value().reshaped(rows, cols);
        self.unary(v, Op::Reshape(self.id))
    }

    /// `x^p` elementwise; callers keep `x` positive when `p < 1`.
    pub fn powf(self, p: T) -> Self {
        let v = self.value().map(|x| x.powf(p));
        self.unary(v, Op::Powf(self.id, p))
    }

    pub fn sqrt(self) -> Self {
        self.powf(T::from_f64(0.5))
    }

    pub fn tanh(self) -> Self {
        let v = self.value().map(Real::tanh);
        self.unary(v, Op::Tanh(self.id))
    }

    /// `max(x, slope·x)` for `0 < slope < 1`, as a mask product so it stays
    /// twice differentiable (almost everywhere).
    pub fn leaky_relu(self, slope: T) -> Self {
        let mask = Rc::new(self.value().map(|x| if x > T::ZERO { T::ONE } else { slope }));
        self.mul_const(mask)
    }

    /// `|x|`, as a sign-mask product.
    pub fn abs(self) -> Self {
        let mask = Rc::new(self.value().map(|x| if x < T::ZERO { -T::ONE } else { T::ONE }));
        self.mul_const(mask)
    }

    pub fn im2col(self, geom: ConvGeom) -> Self {
        let v = im2col(&self.value(), &geom);
        self.unary(v, Op::Im2col(self.id, geom))
    }

    pub fn col2im(self, geom: ConvGeom) -> Self {
        let v = col2im(&self.value(), &geom);
        self.unary(v, Op::Col2im(self.id, geom))
    }

    pub fn concat_cols(self, o: Self) -> Self {
        let (a, b) = (self.value(), o.value());
        assert_eq!(a.rows, b.rows, "concat_cols row mismatch");
        let mut data = Vec::with_capacity(a.len() + b.len());
        for r in 0..a.rows {
            data.extend_from_slice(a.row(r));
            data.extend_from_slice(b.row(r));
        }
        self.binary(o, Tensor::new(a.rows, a.cols + b.cols, data), Op::ConcatCols(self.id, o.id))
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Self {
        let x = self.value();
        assert!(start + len <= x.cols, "slice_cols out of range");
        let data = (0..x.rows).flat_map(|r| x.row(r)[start..start + len].iter().copied()).collect();
        self.unary(Tensor::new(x.rows, len, data), Op::SliceCols(self.id, start))
    }

    /// Embeds `x` at column `start` of a zero tensor `total` columns wide.
    pub fn pad_cols(self, start: usize, total: usize) -> Self {
        let x = self.value();
        assert!(start + x.cols <= total, "pad_cols out of range");
        let mut v = Tensor::zeros(x.rows, total);
        for r in 0..x.rows {
            v.data[r * total + start..r * total + start + x.cols].copy_from_slice(x.row(r));
        }
        self.unary(v, Op::PadCols(self.id, start))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rand_t(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor<f64> {
        Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Central differences of scalar `f` at every coordinate of `x`.
    fn numeric(f: &dyn Fn(&Tensor<f64>) -> f64, x: &Tensor<f64>) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut p = x.clone();
                p.data[i] += h;
                let mut m = x.clone();
                m.data[i] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    fn check(build: &dyn for<'g> Fn(Var<'g, f64>) -> Var<'g, f64>, x: Tensor<f64>) {
        let f = |t: &Tensor<f64>| {
            let g = Graph::new();
            build(g.param(t.clone())).value().item()
        };
        let g = Graph::new();
        let xv = g.param(x.clone());
        let y = build(xv);
        let an = g.grad(y, &[xv])[0].value();
        let nu = numeric(&f, &x);
        for (a, n) in an.data.iter().zip(&nu) {
            assert!((a - n).abs() < 1e-6 * (1.0 + n.abs()), "analytic {a} numeric {n}");
        }
    }

    #[test]
    fn first_order_ops() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let w = rand_t(4, 3, &mut rng);
        let b = rand_t(1, 3, &mut rng);
        check(
            &|x| {
                let g = x.graph();
                let h = x.matmul(g.constant(w.clone()), false, false).add_row(g.constant(b.clone()));
                h.tanh().mul(h).sum_rows().sum_all()
            },
            rand_t(5, 4, &mut rng),
        );
        check(&|x| x.matmul(x, true, false).sum_all(), rand_t(3, 3, &mut rng));
        check(&|x| x.matmul(x, false, true).leaky_relu(0.2).sum_all(), rand_t(3, 4, &mut rng));
        check(
            &|x| x.concat_cols(x.scale(2.0)).slice_cols(2, 4).sum_cols().powf(2.0).sum_all(),
            rand_t(3, 3, &mut rng),
        );
        check(&|x| x.mul(x).affine(1.0, 1.0).sqrt().mean_all(), rand_t(2, 5, &mut rng));
        check(&|x| x.reshape(6, 2).abs().sum_all(), rand_t(3, 4, &mut rng));
        let geom = ConvGeom::new(2, 4, 2, 3, 1, 1);
        let k = rand_t(geom.patch_cols(), 2, &mut rng);
        check(
            &|x| {
                let y = x.im2col(geom).matmul(x.graph().constant(k.clone()), false, false);
                y.tanh().sum_all()
            },
            rand_t(geom.image_rows(), 2, &mut rng),
        );
        let tg = ConvGeom::transposed(1, 2, 2, 4, 2, 1);
        check(&|x| x.col2im(tg).powf(2.0).sum_all(), rand_t(tg.patch_rows(), tg.patch_cols(), &mut rng));
    }

    #[test]
    fn second_order_through_gradient() {
        // f(x) = sum(tanh(x W)); d/dx ||∇_x f||² checked numerically.
        fn build(x: Var<'_, f64>) -> Var<'_, f64> {
            let g = x.graph();
            let w = Tensor::new(3, 2, vec![0.3, -0.7, 1.1, 0.2, -0.4, 0.9]);
            let y = x.matmul(g.constant(w), false, false).tanh().sum_all();
            let gx = g.grad(y, &[x])[0];
            gx.mul(gx).sum_all()
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        check(&build, rand_t(2, 3, &mut rng));
    }

    #[test]
    fn unrelated_inputs_get_zero_gradient() {
        let g = Graph::<f64>::new();
        let a = g.param(Tensor::scalar(2.0));
        let b = g.param(Tensor::new(1, 2, vec![1.0, 1.0]));
        let y = a.mul(a);
        let gr = g.grad(y, &[a, b]);
        assert_eq!(gr[0].value().item(), 4.0);
        assert_eq!(gr[1].value().data, vec![0.0, 0.0]);
    }
}
