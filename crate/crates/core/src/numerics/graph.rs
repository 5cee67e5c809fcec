//! Tape-based reverse-mode differentiation over small dense matrices.
//!
//! Every node holds a `[rows, cols]` value. The primitive set is closed:
//! affine maps (`matmul_t` + `add_bias`), the four activations, `log`,
//! `square`, `clamp`, elementwise `add`/`sub`/`mul`, scalar affine
//! `scale_shift`, row sums, `mean` and column-wise `concat`.

use super::array::{matmul_transposed, DenseArray};
use super::NumericsError;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMulT(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScaleShift(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    SumCols(Var),
    Mean(Var),
    Concat(Var, Var),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    needs_grad: bool,
}

/// Computation tape. Build a loss with the op methods, then call
/// [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node that depends on a
/// trainable leaf. Nodes without such a dependency have no entry.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<DenseArray> {
        let (r, c) = self.shapes[v.0];
        self.grads[v.0]
            .as_ref()
            .map(|g| DenseArray::matrix(r, c, g.clone()).expect("gradient shape"))
    }

    pub(crate) fn raw(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>, needs_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node { op, rows, cols, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    /// Trainable leaf: gradients flow into it.
    pub fn param(&mut self, value: &DenseArray) -> Var {
        let (r, c) = (value.rows(), value.cols());
        self.push(Op::Leaf, r, c, value.data().to_vec(), true)
    }

    /// Constant leaf: never receives a gradient.
    pub fn constant(&mut self, value: &DenseArray) -> Var {
        let (r, c) = (value.rows(), value.cols());
        self.push(Op::Leaf, r, c, value.data().to_vec(), false)
    }

    pub fn constant_matrix(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        assert_eq!(rows * cols, data.len(), "constant matrix shape");
        self.push(Op::Leaf, rows, cols, data, false)
    }

    pub fn value(&self, v: Var) -> DenseArray {
        let n = self.node(v);
        DenseArray::matrix(n.rows, n.cols, n.value.clone()).expect("node shape")
    }

    pub fn values(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    /// Scalar value of a `[1, 1]` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let n = self.node(v);
        assert_eq!(n.value.len(), 1, "node {} is not scalar", v.0);
        n.value[0]
    }

    fn ng(&self, a: Var) -> bool {
        self.node(a).needs_grad
    }

    /// `x · wᵀ` for `x: [b, in]`, `w: [out, in]`.
    pub fn matmul_t(&mut self, x: Var, w: Var) -> Result<Var, NumericsError> {
        let (b, inner) = self.shape(x);
        let (out, w_in) = self.shape(w);
        if inner != w_in {
            return Err(NumericsError::Dimension(format!(
                "input width {inner} does not match weight columns {w_in}"
            )));
        }
        let value = matmul_transposed(&self.node(x).value, b, inner, &self.node(w).value, out);
        let ng = self.ng(x) || self.ng(w);
        Ok(self.push(Op::MatMulT(x, w), b, out, value, ng))
    }

    /// Adds a `[1, cols]` (or `[cols]`) bias to every row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, NumericsError> {
        let (b, c) = self.shape(x);
        let (br, bc) = self.shape(bias);
        if br != 1 || bc != c {
            return Err(NumericsError::Dimension(format!(
                "bias shape [{br}, {bc}] cannot broadcast over [{b}, {c}]"
            )));
        }
        let bv = &self.node(bias).value;
        let value: Vec<f64> =
            self.node(x).value.iter().enumerate().map(|(i, v)| v + bv[i % c]).collect();
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(Op::AddBias(x, bias), b, c, value, ng))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(usize, usize), NumericsError> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(NumericsError::Dimension(format!(
                "{what}: shapes {:?} and {:?} differ",
                sa, sb
            )));
        }
        Ok(sa)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        what: &str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, NumericsError> {
        let (r, c) = self.same_shape(a, b, what)?;
        let value: Vec<f64> = self
            .node(a)
            .value
            .iter()
            .zip(&self.node(b).value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(op, r, c, value, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let (r, c) = self.shape(x);
        let value = self.node(x).value.iter().map(|&v| f(v)).collect();
        let ng = self.ng(x);
        self.push(op, r, c, value, ng)
    }

    /// `scale * x + shift`.
    pub fn scale_shift(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let (r, c) = self.shape(x);
        let value = self.node(x).value.iter().map(|&v| scale * v + shift).collect();
        let ng = self.ng(x);
        // shift is folded into the forward value; backward only needs scale
        self.push(Op::ScaleShift(x, scale), r, c, value, ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero wherever the clamp binds.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Op::Clamp(x, lo, hi), |v| v.clamp(lo, hi))
    }

    /// Natural log. Fails if any entry is not strictly positive.
    pub fn log(&mut self, x: Var) -> Result<Var, NumericsError> {
        if let Some(pos) = self.node(x).value.iter().position(|&v| v <= 0.0 || !v.is_finite()) {
            return Err(NumericsError::Domain {
                node: x.0,
                detail: format!("log of {} at entry {pos}", self.node(x).value[pos]),
            });
        }
        Ok(self.unary(x, Op::Log(x), f64::ln))
    }

    /// Row-wise sum, `[b, c] -> [b, 1]`.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let v = &self.node(x).value;
        let value = (0..r).map(|i| v[i * c..(i + 1) * c].iter().sum()).collect();
        let ng = self.ng(x);
        self.push(Op::SumCols(x), r, 1, value, ng)
    }

    /// Mean of all entries, `[b, c] -> [1, 1]`.
    pub fn mean(&mut self, x: Var) -> Var {
        let v = &self.node(x).value;
        let m = v.iter().sum::<f64>() / v.len().max(1) as f64;
        let ng = self.ng(x);
        self.push(Op::Mean(x), 1, 1, vec![m], ng)
    }

    /// Column-wise concatenation `[b, p] ++ [b, q] -> [b, p + q]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if ra != rb {
            return Err(NumericsError::Dimension(format!(
                "concat: row counts {ra} and {rb} differ"
            )));
        }
        let av = &self.node(a).value;
        let bv = &self.node(b).value;
        let mut value = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            value.extend_from_slice(&av[i * ca..(i + 1) * ca]);
            value.extend_from_slice(&bv[i * cb..(i + 1) * cb]);
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Op::Concat(a, b), ra, ca + cb, value, ng))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        let root = self.node(loss);
        if root.value.len() != 1 {
            return Err(NumericsError::Dimension(format!(
                "backward needs a scalar root, node {} has {} entries",
                loss.0,
                root.value.len()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        if root.needs_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match node.op {
                Op::Leaf => {
                    // leaves keep their gradient; intermediates are dropped once consumed
                    grads[idx] = Some(g);
                }
                Op::MatMulT(x, w) => {
                    let (b, inner) = self.shape(x);
                    let out = node.cols;
                    if self.ng(x) {
                        let wv = &self.node(w).value;
                        let mut gx = vec![0.0; b * inner];
                        for r in 0..b {
                            for o in 0..out {
                                let go = g[r * out + o];
                                if go == 0.0 {
                                    continue;
                                }
                                let wr = &wv[o * inner..(o + 1) * inner];
                                let gr = &mut gx[r * inner..(r + 1) * inner];
                                for (s, wv) in gr.iter_mut().zip(wr) {
                                    *s += go * wv;
                                }
                            }
                        }
                        accumulate(&mut grads, x, gx);
                    }
                    if self.ng(w) {
                        let xv = &self.node(x).value;
                        let mut gw = vec![0.0; out * inner];
                        for r in 0..b {
                            let xr = &xv[r * inner..(r + 1) * inner];
                            for o in 0..out {
                                let go = g[r * out + o];
                                if go == 0.0 {
                                    continue;
                                }
                                let gr = &mut gw[o * inner..(o + 1) * inner];
                                for (s, xv) in gr.iter_mut().zip(xr) {
                                    *s += go * xv;
                                }
                            }
                        }
                        accumulate(&mut grads, w, gw);
                    }
                }
                Op::AddBias(x, bias) => {
                    let c = node.cols;
                    if self.ng(bias) {
                        let mut gb = vec![0.0; c];
                        for (i, v) in g.iter().enumerate() {
                            gb[i % c] += v;
                        }
                        accumulate(&mut grads, bias, gb);
                    }
                    if self.ng(x) {
                        accumulate(&mut grads, x, g);
                    }
                }
                Op::Add(a, b) => {
                    if self.ng(a) {
                        accumulate(&mut grads, a, g.clone());
                    }
                    if self.ng(b) {
                        accumulate(&mut grads, b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.ng(a) {
                        accumulate(&mut grads, a, g.clone());
                    }
                    if self.ng(b) {
                        accumulate(&mut grads, b, g.iter().map(|v| -v).collect());
                    }
                }
                Op::Mul(a, b) => {
                    if self.ng(a) {
                        let bv = &self.node(b).value;
                        accumulate(&mut grads, a, g.iter().zip(bv).map(|(g, y)| g * y).collect());
                    }
                    if self.ng(b) {
                        let av = &self.node(a).value;
                        accumulate(&mut grads, b, g.iter().zip(av).map(|(g, x)| g * x).collect());
                    }
                }
                Op::ScaleShift(x, scale) => {
                    accumulate(&mut grads, x, g.iter().map(|v| v * scale).collect());
                }
                Op::Relu(x) => {
                    let xv = &self.node(x).value;
                    let gx = g.iter().zip(xv).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect();
                    accumulate(&mut grads, x, gx);
                }
                Op::Tanh(x) => {
                    let yv = &node.value;
                    let gx = g.iter().zip(yv).map(|(g, y)| g * (1.0 - y * y)).collect();
                    accumulate(&mut grads, x, gx);
                }
                Op::Sigmoid(x) => {
                    let yv = &node.value;
                    let gx = g.iter().zip(yv).map(|(g, y)| g * y * (1.0 - y)).collect();
                    accumulate(&mut grads, x, gx);
                }
                Op::Log(x) => {
                    let xv = &self.node(x).value;
                    let gx = g.iter().zip(xv).map(|(g, v)| g / v).collect();
                    accumulate(&mut grads, x, gx);
                }
                Op::Square(x) => {
                    let xv = &self.node(x).value;
                    let gx = g.iter().zip(xv).map(|(g, v)| 2.0 * g * v).collect();
                    accumulate(&mut grads, x, gx);
                }
                Op::Clamp(x, lo, hi) => {
                    let xv = &self.node(x).value;
                    let gx = g
                        .iter()
                        .zip(xv)
                        .map(|(g, &v)| if v > lo && v < hi { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, x, gx);
                }
                Op::SumCols(x) => {
                    let (r, c) = self.shape(x);
                    let mut gx = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] = g[i];
                        }
                    }
                    accumulate(&mut grads, x, gx);
                }
                Op::Mean(x) => {
                    let len = self.node(x).value.len();
                    let share = g[0] / len.max(1) as f64;
                    accumulate(&mut grads, x, vec![share; len]);
                }
                Op::Concat(a, b) => {
                    let (r, ca) = self.shape(a);
                    let cb = self.shape(b).1;
                    let c = ca + cb;
                    if self.ng(a) {
                        let mut ga = Vec::with_capacity(r * ca);
                        for i in 0..r {
                            ga.extend_from_slice(&g[i * c..i * c + ca]);
                        }
                        accumulate(&mut grads, a, ga);
                    }
                    if self.ng(b) {
                        let mut gb = Vec::with_capacity(r * cb);
                        for i in 0..r {
                            gb.extend_from_slice(&g[i * c + ca..(i + 1) * c]);
                        }
                        accumulate(&mut grads, b, gb);
                    }
                }
            }
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(NumericsError::NonFinite(format!("gradient of node {i}")));
                }
            }
        }
        let shapes = self.nodes.iter().map(|n| (n.rows, n.cols)).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.iter_mut().zip(g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
