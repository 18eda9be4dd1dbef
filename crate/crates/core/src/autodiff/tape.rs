use crate::error::{Error, Result};
use crate::numerics::sinkhorn::{self, HalfStep, SinkhornConfig};
use crate::numerics::Matrix;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    ConcatCols(Var, Var),
    GatherSum(Var, Vec<Vec<usize>>),
    Affine(Var, f64),
    DivScalar(Var, f64),
    Exp(Var),
    Relu(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Sinkhorn(Var, Vec<HalfStep>),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
    /// Accumulated gradient; only kept for trainable leaves.
    grad: Option<Matrix>,
}

/// Eagerly evaluated expression graph with reverse-mode gradients.
///
/// Values are computed as operations are recorded. [`Tape::backward`]
/// propagates from a scalar root and adds the result into the gradient of
/// every trainable leaf; gradients accumulate across calls until
/// [`Tape::zero_grad`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        let grad = Some(Matrix::zeros(value.rows(), value.cols()));
        self.push_node(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
            grad,
        })
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push_node(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
            grad: None,
        })
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a trainable leaf.
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            if let Some(g) = &mut node.grad {
                g.as_mut_slice().fill(0.0);
            }
        }
    }

    fn push_node(&mut self, node: Node) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Matrix, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push_node(Node {
            value,
            op,
            needs_grad,
            grad: None,
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_t(self.value(b))?;
        Ok(self.push(value, Op::MatMulT(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    /// Adds the `1 × cols` row `bias` to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::shape(format!(
                "row broadcast of {}x{} onto {}x{}",
                bv.rows(),
                bv.cols(),
                xv.rows(),
                xv.cols()
            )));
        }
        let mut value = xv.clone();
        for i in 0..value.rows() {
            for (o, b) in value.row_mut(i).iter_mut().zip(bv.as_slice()) {
                *o += b;
            }
        }
        Ok(self.push(value, Op::AddRow(x, bias), &[x, bias]))
    }

    /// `[a | b]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hcat(self.value(b))?;
        Ok(self.push(value, Op::ConcatCols(a, b), &[a, b]))
    }

    /// Row `i` of the output is the sum of the rows of `x` listed in
    /// `sets[i]` (zero when the set is empty).
    pub fn gather_sum(&mut self, x: Var, sets: &[Vec<usize>]) -> Result<Var> {
        let xv = self.value(x);
        if let Some(bad) = sets.iter().flatten().find(|&&j| j >= xv.rows()) {
            return Err(Error::shape(format!(
                "gather index {bad} out of range for {} rows",
                xv.rows()
            )));
        }
        let mut value = Matrix::zeros(sets.len(), xv.cols());
        for (i, set) in sets.iter().enumerate() {
            let out = value.row_mut(i);
            for &j in set {
                for (o, v) in out.iter_mut().zip(xv.row(j)) {
                    *o += v;
                }
            }
        }
        Ok(self.push(value, Op::GatherSum(x, sets.to_vec()), &[x]))
    }

    /// `scale · x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(x).map(|v| scale * v + shift);
        self.push(value, Op::Affine(x, scale), &[x])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.affine(x, s, 0.0)
    }

    pub fn div_scalar(&mut self, x: Var, d: f64) -> Result<Var> {
        if d == 0.0 || !d.is_finite() {
            return Err(Error::contract(format!("division by {d}")));
        }
        let value = self.value(x).map(|v| v / d);
        Ok(self.push(value, Op::DivScalar(x, d), &[x]))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::exp);
        self.push(value, Op::Exp(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(value, Op::Relu(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::ln);
        self.push(value, Op::Log(x), &[x])
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(x).map(|v| v.clamp(lo, hi));
        self.push(value, Op::Clamp(x, lo, hi), &[x])
    }

    /// Sum of all entries, as a `1 × 1` matrix.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(x).sum());
        self.push(value, Op::Sum(x), &[x])
    }

    /// Sinkhorn normalization, differentiated through every executed
    /// iteration.
    pub fn sinkhorn(&mut self, x: Var, config: SinkhornConfig) -> Result<Var> {
        let record = self.nodes[x.0].needs_grad;
        let (value, steps) = sinkhorn::run(self.value(x), config, record)?;
        Ok(self.push(value, Op::Sinkhorn(x, steps), &[x]))
    }

    /// Reverse pass from a `1 × 1` root.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.shape(root) != (1, 1) {
            let (r, c) = self.shape(root);
            return Err(Error::shape(format!(
                "backward needs a scalar root, got {r}x{c}"
            )));
        }
        let mut adj: Vec<Option<Matrix>> = (0..=root.0).map(|_| None).collect();
        adj[root.0] = Some(Matrix::filled(1, 1, 1.0));

        for k in (0..=root.0).rev() {
            let Some(g) = adj[k].take() else { continue };
            if !self.nodes[k].needs_grad {
                continue;
            }
            let nodes = &self.nodes;
            let val = |v: Var| &nodes[v.0].value;
            let mut contributions: Vec<(Var, Matrix)> = Vec::with_capacity(2);
            match &nodes[k].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if nodes[a.0].needs_grad {
                        contributions.push((*a, g.matmul_t(val(*b))?));
                    }
                    if nodes[b.0].needs_grad {
                        contributions.push((*b, val(*a).t_matmul(&g)?));
                    }
                }
                Op::MatMulT(a, b) => {
                    if nodes[a.0].needs_grad {
                        contributions.push((*a, g.matmul(val(*b))?));
                    }
                    if nodes[b.0].needs_grad {
                        contributions.push((*b, g.t_matmul(val(*a))?));
                    }
                }
                Op::Transpose(a) => contributions.push((*a, g.transpose())),
                Op::Add(a, b) => {
                    contributions.push((*a, g.clone()));
                    contributions.push((*b, g.clone()));
                }
                Op::Mul(a, b) => {
                    contributions.push((*a, g.zip_map(val(*b), |x, y| x * y)?));
                    contributions.push((*b, g.zip_map(val(*a), |x, y| x * y)?));
                }
                Op::AddRow(x, b) => {
                    contributions.push((*b, Matrix::row_vector(&g.col_sums())));
                    contributions.push((*x, g.clone()));
                }
                Op::ConcatCols(a, b) => {
                    let ca = val(*a).cols();
                    let cb = val(*b).cols();
                    contributions.push((*a, g.block(0, 0, g.rows(), ca)));
                    contributions.push((*b, g.block(0, ca, g.rows(), cb)));
                }
                Op::GatherSum(x, sets) => {
                    let xv = val(*x);
                    let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                    for (i, set) in sets.iter().enumerate() {
                        for &j in set {
                            for (o, v) in gx.row_mut(j).iter_mut().zip(g.row(i)) {
                                *o += v;
                            }
                        }
                    }
                    contributions.push((*x, gx));
                }
                Op::Affine(x, s) => contributions.push((*x, g.scale(*s))),
                Op::DivScalar(x, d) => contributions.push((*x, g.map(|v| v / d))),
                Op::Exp(x) => {
                    contributions.push((*x, g.zip_map(&nodes[k].value, |a, b| a * b)?))
                }
                Op::Relu(x) => contributions.push((
                    *x,
                    g.zip_map(val(*x), |a, v| if v > 0.0 { a } else { 0.0 })?,
                )),
                Op::Log(x) => contributions.push((*x, g.zip_map(val(*x), |a, v| a / v)?)),
                Op::Clamp(x, lo, hi) => contributions.push((
                    *x,
                    g.zip_map(val(*x), |a, v| if v >= *lo && v <= *hi { a } else { 0.0 })?,
                )),
                Op::Sum(x) => {
                    let (r, c) = val(*x).shape();
                    contributions.push((*x, Matrix::filled(r, c, g[(0, 0)])));
                }
                Op::Sinkhorn(x, steps) => contributions.push((*x, sinkhorn::backward(steps, &g))),
            }

            if let Some(acc) = &mut self.nodes[k].grad {
                acc.add_assign(&g);
            }
            for (v, c) in contributions {
                if !self.nodes[v.0].needs_grad {
                    continue;
                }
                match &mut adj[v.0] {
                    Some(existing) => existing.add_assign(&c),
                    slot @ None => *slot = Some(c),
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn linear_gradient() {
        let mut t = Tape::new();
        let w = t.param(Matrix::identity(2));
        let x = t.constant(m(&[&[1.0], &[2.0]]));
        let y = t.matmul(w, x).unwrap();
        let loss = t.sum(y);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(w).unwrap(), &m(&[&[1.0, 2.0], &[1.0, 2.0]]));
        assert!(t.grad(x).is_none());
    }

    #[test]
    fn dead_relu() {
        let mut t = Tape::new();
        let x = t.param(m(&[&[0.5, 2.0, 1e-3]]));
        let neg = t.scale(x, -1.0);
        let r = t.relu(neg);
        let loss = t.sum(r);
        t.backward(loss).unwrap();
        assert!(t.grad(x).unwrap().as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_needs_scalar_root() {
        let mut t = Tape::new();
        let x = t.param(Matrix::zeros(2, 2));
        assert!(matches!(t.backward(x), Err(Error::Shape(_))));
        let y = t.param(Matrix::zeros(3, 3));
        assert!(t.matmul(x, y).is_err());
        assert!(t.add(x, y).is_err());
    }

    #[test]
    fn gradients_accumulate_until_zeroed() {
        let mut t = Tape::new();
        let x = t.param(m(&[&[1.0, -2.0], &[0.5, 3.0]]));
        let e = t.exp(x);
        let p = t.mul(e, x).unwrap();
        let loss = t.sum(p);
        t.backward(loss).unwrap();
        let once = t.grad(x).unwrap().clone();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap(), &once.scale(2.0));
        t.zero_grad();
        assert_eq!(t.grad(x).unwrap().sum(), 0.0);
    }

    /// Builds a scalar expression of five parameters touching every
    /// primitive, returning (tape, params, loss).
    fn expression(values: &[Matrix]) -> (Tape, Vec<Var>, Var) {
        let mut t = Tape::new();
        let p: Vec<Var> = values.iter().map(|v| t.param(v.clone())).collect();
        let (a, b, c, bias, w) = (p[0], p[1], p[2], p[3], p[4]);
        let ab = t.matmul(a, b).unwrap(); // 3x3
        let abt = t.transpose(ab);
        let s = t.add(ab, abt).unwrap();
        let sets = vec![vec![1, 2], vec![0], vec![]];
        let g = t.gather_sum(s, &sets).unwrap();
        let cat = t.concat_cols(g, s).unwrap(); // 3x6
        let lin = t.matmul_t(cat, c).unwrap(); // 3x3
        let lin = t.add_row(lin, bias).unwrap();
        let r = t.relu(lin);
        let r = t.affine(r, 0.7, 0.1);
        let r = t.div_scalar(r, 1.7).unwrap();
        let e = t.exp(r);
        let sk = t.sinkhorn(e, SinkhornConfig { max_iter: 10, tol: 0.0 }).unwrap();
        let cl = t.clamp(sk, 1e-7, 1.0 - 1e-7);
        let lg = t.log(cl);
        let prod = t.mul(lg, w).unwrap();
        let loss = t.sum(prod);
        (t, p, loss)
    }

    #[test]
    fn random_expression_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let mut gen = |r, c| Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
            let values = vec![gen(3, 2), gen(2, 3), gen(3, 6), gen(1, 3), gen(3, 3)];
            let (mut t, p, loss) = expression(&values);
            t.backward(loss).unwrap();
            let h = 1e-5;
            for (k, v) in values.iter().enumerate() {
                let analytic = t.grad(p[k]).unwrap();
                for idx in 0..v.as_slice().len() {
                    let mut plus = values.clone();
                    plus[k].as_mut_slice()[idx] += h;
                    let mut minus = values.clone();
                    minus[k].as_mut_slice()[idx] -= h;
                    let (tp, _, lp) = expression(&plus);
                    let (tm, _, lm) = expression(&minus);
                    let fd = (tp.value(lp)[(0, 0)] - tm.value(lm)[(0, 0)]) / (2.0 * h);
                    let a = analytic.as_slice()[idx];
                    let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                    assert!(rel < 1e-4, "param {k}[{idx}]: analytic {a} vs fd {fd}");
                }
            }
        }
    }
}
