//! Vector-valued reverse-mode tape.
//!
//! Every node holds a dense `Vec<f64>`; matrices are stored row-major in a
//! single node and consumed by [`Tape::matvec`]. A forward pass records nodes
//! in topological order, so the backward sweep is a single reverse loop.

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
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a * x + b`, elementwise; only the slope matters for the adjoint.
    Affine(Var, f64),
    /// `Σ c_k x_k`, all operands of equal length.
    LinComb(Vec<(f64, Var)>),
    MatVec { w: Var, x: Var, rows: usize, cols: usize },
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Ln(Var),
    Square(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Dot(Var, Var),
    Sum(Var),
    Softmax(Var),
    /// `Σ_j w[j] * v_j`.
    WeightedSum(Var, Vec<Var>),
}

#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<Vec<f64>>,
    ops: Vec<Op>,
}

/// Overflow-safe `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.values[v.0]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.values[v.0].len(), 1);
        self.values[v.0][0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    /// Leaf node (parameter or constant input).
    pub fn leaf(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: &[f64]) -> Var {
        self.leaf(value.to_vec())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = zip(&self.values[a.0], &self.values[b.0], |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = zip(&self.values[a.0], &self.values[b.0], |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = zip(&self.values[a.0], &self.values[b.0], |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn affine(&mut self, x: Var, a: f64, b: f64) -> Var {
        let v = self.values[x.0].iter().map(|&e| a * e + b).collect();
        self.push(v, Op::Affine(x, a))
    }

    pub fn scale(&mut self, x: Var, a: f64) -> Var {
        self.affine(x, a, 0.0)
    }

    /// `1 - x`
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -1.0, 1.0)
    }

    pub fn lin_comb(&mut self, terms: &[(f64, Var)]) -> Var {
        assert!(!terms.is_empty(), "empty linear combination");
        let n = self.values[terms[0].1 .0].len();
        let mut out = vec![0.0; n];
        for &(c, v) in terms {
            let src = &self.values[v.0];
            assert_eq!(src.len(), n, "length mismatch in lin_comb");
            for (o, &s) in out.iter_mut().zip(src) {
                *o += c * s;
            }
        }
        self.push(out, Op::LinComb(terms.to_vec()))
    }

    /// `W x` with `W` stored row-major as `rows × cols`.
    pub fn matvec(&mut self, w: Var, x: Var, rows: usize, cols: usize) -> Var {
        let wv = &self.values[w.0];
        let xv = &self.values[x.0];
        assert_eq!(wv.len(), rows * cols, "matrix size");
        assert_eq!(xv.len(), cols, "matvec input width");
        let out = wv
            .chunks_exact(cols)
            .map(|row| row.iter().zip(xv).map(|(a, b)| a * b).sum())
            .collect();
        self.push(out, Op::MatVec { w, x, rows, cols })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.values[x.0].iter().map(|e| e.tanh()).collect();
        self.push(v, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.values[x.0].iter().map(|&e| sigmoid(e)).collect();
        self.push(v, Op::Sigmoid(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let v = self.values[x.0].iter().map(|&e| softplus(e)).collect();
        self.push(v, Op::Softplus(x))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let v = self.values[x.0].iter().map(|e| e.ln()).collect();
        self.push(v, Op::Ln(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.values[x.0].iter().map(|e| e * e).collect();
        self.push(v, Op::Square(x))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let v = parts
            .iter()
            .flat_map(|p| self.values[p.0].iter().copied())
            .collect();
        self.push(v, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.values[x.0][start..start + len].to_vec();
        self.push(v, Op::Slice(x, start))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.values[a.0], &self.values[b.0]);
        assert_eq!(av.len(), bv.len(), "dot length mismatch");
        let s = av.iter().zip(bv).map(|(x, y)| x * y).sum();
        self.push(vec![s], Op::Dot(a, b))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.values[x.0].iter().sum();
        self.push(vec![s], Op::Sum(x))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = &self.values[x.0];
        let m = xv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = xv.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = e.iter().sum();
        let v = e.into_iter().map(|x| x / z).collect();
        self.push(v, Op::Softmax(x))
    }

    pub fn weighted_sum(&mut self, weights: Var, vectors: &[Var]) -> Var {
        let w = &self.values[weights.0];
        assert_eq!(w.len(), vectors.len(), "weighted_sum arity");
        let n = self.values[vectors[0].0].len();
        let mut out = vec![0.0; n];
        for (&c, v) in w.iter().zip(vectors) {
            for (o, &s) in out.iter_mut().zip(&self.values[v.0]) {
                *o += c * s;
            }
        }
        self.push(out, Op::WeightedSum(weights, vectors.to_vec()))
    }

    /// Reverse sweep from a scalar output. Returns one gradient buffer per
    /// node (empty for nodes the output does not depend on).
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.values[output.0].len(), 1, "backward from non-scalar");
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); output.0 + 1];
        grads[output.0] = vec![1.0];

        for i in (0..=output.0).rev() {
            if grads[i].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut grads[i]);
            match &self.ops[i] {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &self.values, |k| g[k]);
                    accumulate(&mut grads, *b, &self.values, |k| g[k]);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, &self.values, |k| g[k]);
                    accumulate(&mut grads, *b, &self.values, |k| -g[k]);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.values[a.0], &self.values[b.0]);
                    accumulate(&mut grads, *a, &self.values, |k| g[k] * bv[k]);
                    accumulate(&mut grads, *b, &self.values, |k| g[k] * av[k]);
                }
                Op::Affine(x, a) => {
                    accumulate(&mut grads, *x, &self.values, |k| a * g[k]);
                }
                Op::LinComb(terms) => {
                    for &(c, v) in terms {
                        accumulate(&mut grads, v, &self.values, |k| c * g[k]);
                    }
                }
                Op::MatVec { w, x, rows, cols } => {
                    let (rows, cols) = (*rows, *cols);
                    let wv = &self.values[w.0];
                    let xv = &self.values[x.0];
                    // dW = g xᵀ
                    let gw = ensure(&mut grads, *w, rows * cols);
                    for r in 0..rows {
                        let gr = g[r];
                        if gr != 0.0 {
                            for (o, &xc) in gw[r * cols..(r + 1) * cols].iter_mut().zip(xv) {
                                *o += gr * xc;
                            }
                        }
                    }
                    // dx = Wᵀ g
                    let gx = ensure(&mut grads, *x, cols);
                    for (r, row) in wv.chunks_exact(cols).enumerate() {
                        let gr = g[r];
                        if gr != 0.0 {
                            for (o, &wc) in gx.iter_mut().zip(row) {
                                *o += gr * wc;
                            }
                        }
                    }
                }
                Op::Tanh(x) => {
                    let y = &self.values[i];
                    accumulate(&mut grads, *x, &self.values, |k| g[k] * (1.0 - y[k] * y[k]));
                }
                Op::Sigmoid(x) => {
                    let y = &self.values[i];
                    accumulate(&mut grads, *x, &self.values, |k| g[k] * y[k] * (1.0 - y[k]));
                }
                Op::Softplus(x) => {
                    let xv = &self.values[x.0];
                    accumulate(&mut grads, *x, &self.values, |k| g[k] * sigmoid(xv[k]));
                }
                Op::Ln(x) => {
                    let xv = &self.values[x.0];
                    accumulate(&mut grads, *x, &self.values, |k| g[k] / xv[k]);
                }
                Op::Square(x) => {
                    let xv = &self.values[x.0];
                    accumulate(&mut grads, *x, &self.values, |k| 2.0 * g[k] * xv[k]);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.values[p.0].len();
                        accumulate(&mut grads, *p, &self.values, |k| g[off + k]);
                        off += n;
                    }
                }
                Op::Slice(x, start) => {
                    let start = *start;
                    let n = self.values[x.0].len();
                    let gx = ensure(&mut grads, *x, n);
                    for (k, &gk) in g.iter().enumerate() {
                        gx[start + k] += gk;
                    }
                }
                Op::Dot(a, b) => {
                    let (av, bv) = (&self.values[a.0], &self.values[b.0]);
                    let s = g[0];
                    accumulate(&mut grads, *a, &self.values, |k| s * bv[k]);
                    accumulate(&mut grads, *b, &self.values, |k| s * av[k]);
                }
                Op::Sum(x) => {
                    let s = g[0];
                    accumulate(&mut grads, *x, &self.values, |_| s);
                }
                Op::Softmax(x) => {
                    let y = &self.values[i];
                    let gy: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                    accumulate(&mut grads, *x, &self.values, |k| y[k] * (g[k] - gy));
                }
                Op::WeightedSum(w, vs) => {
                    let wv = &self.values[w.0];
                    let gw: Vec<f64> = vs
                        .iter()
                        .map(|v| self.values[v.0].iter().zip(&g).map(|(a, b)| a * b).sum())
                        .collect();
                    accumulate(&mut grads, *w, &self.values, |k| gw[k]);
                    for (j, v) in vs.iter().enumerate() {
                        let c = wv[j];
                        accumulate(&mut grads, *v, &self.values, |k| c * g[k]);
                    }
                }
            }
            grads[i] = g;
        }
        Gradients(grads)
    }
}

fn zip(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "elementwise length mismatch");
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn ensure(grads: &mut [Vec<f64>], v: Var, n: usize) -> &mut Vec<f64> {
    let g = &mut grads[v.0];
    if g.is_empty() {
        *g = vec![0.0; n];
    }
    g
}

fn accumulate(grads: &mut [Vec<f64>], v: Var, values: &[Vec<f64>], f: impl Fn(usize) -> f64) {
    let n = values[v.0].len();
    let g = ensure(grads, v, n);
    for (k, o) in g.iter_mut().enumerate() {
        *o += f(k);
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients(Vec<Vec<f64>>);

impl Gradients {
    /// Gradient with respect to `v`; `None` if the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.0.get(v.0).filter(|g| !g.is_empty()).map(Vec::as_slice)
    }

    /// Gradient with respect to `v`, zero-filled when absent.
    pub fn dense(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; len])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central-difference gradient of a scalar function built on a fresh tape.
    fn numeric_grad(x0: &[f64], f: impl Fn(&mut Tape, Var) -> Var) -> Vec<f64> {
        let eps = 1e-6;
        (0..x0.len())
            .map(|k| {
                let mut xp = x0.to_vec();
                xp[k] += eps;
                let mut xm = x0.to_vec();
                xm[k] -= eps;
                let mut t = Tape::new();
                let v = t.leaf(xp);
                let fp = f(&mut t, v);
                let fp = t.scalar(fp);
                let mut t = Tape::new();
                let v = t.leaf(xm);
                let fm = f(&mut t, v);
                let fm = t.scalar(fm);
                (fp - fm) / (2.0 * eps)
            })
            .collect()
    }

    fn check(x0: &[f64], f: impl Fn(&mut Tape, Var) -> Var) {
        let mut t = Tape::new();
        let x = t.leaf(x0.to_vec());
        let out = f(&mut t, x);
        let g = t.backward(out).dense(x, x0.len());
        let n = numeric_grad(x0, &f);
        for (a, b) in g.iter().zip(&n) {
            assert!((a - b).abs() < 1e-6 * (1.0 + b.abs()), "analytic {a} vs numeric {b}");
        }
    }

    #[test]
    fn elementwise_ops() {
        let x0 = [0.3, -1.2, 0.7];
        check(&x0, |t, x| {
            let a = t.tanh(x);
            let b = t.sigmoid(x);
            let c = t.mul(a, b);
            let d = t.softplus(c);
            let e = t.affine(d, 2.0, 1.0);
            let f = t.ln(e);
            let g = t.square(f);
            let h = t.sub(g, x);
            t.sum(h)
        });
    }

    #[test]
    fn matvec_and_structure() {
        let x0 = [0.5, -0.25, 1.5, 0.1, 0.2, -0.3];
        check(&x0, |t, x| {
            let w = t.slice(x, 0, 4);
            let v = t.slice(x, 4, 2);
            let y = t.matvec(w, v, 2, 2);
            let z = t.concat(&[y, v]);
            let lc = t.lin_comb(&[(0.5, z), (-2.0, z)]);
            let s = t.softmax(lc);
            let d = t.dot(s, z);
            t.add(d, d)
        });
    }

    #[test]
    fn weighted_sum_grad() {
        let x0 = [0.2, 0.9, -0.4, 1.0, 0.5];
        check(&x0, |t, x| {
            let w = t.slice(x, 0, 2);
            let w = t.softmax(w);
            let a = t.slice(x, 2, 2);
            let b = t.slice(x, 3, 2);
            let s = t.weighted_sum(w, &[a, b]);
            let s = t.square(s);
            t.sum(s)
        });
    }

    #[test]
    fn softplus_is_overflow_safe() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(softplus(-40.0) > 0.0 && softplus(-40.0) < 1e-17);
        assert!((softplus(50.0) - 50.0).abs() < 1e-9);
        assert!(softplus(1000.0).is_finite());
    }

    #[test]
    fn unused_leaf_has_no_gradient() {
        let mut t = Tape::new();
        let a = t.leaf(vec![1.0]);
        let b = t.leaf(vec![2.0]);
        let y = t.square(a);
        let g = t.backward(y);
        assert!(g.get(b).is_none());
        assert_eq!(g.dense(b, 1), vec![0.0]);
        assert_eq!(g.get(a), Some(&[2.0][..]));
    }
}
