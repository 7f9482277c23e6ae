//! Tape-based reverse-mode automatic differentiation over `f64` vectors.
//!
//! A forward pass pushes nodes onto the [`Tape`]; each node stores its
//! value and the operation that produced it. [`Tape::backward`] seeds the
//! loss node with a unit co-tangent and walks the tape in reverse, so a
//! node's parents always receive their full adjoint before being visited.
//!
//! Matrices are row-major. Vectors are column vectors.

use super::{sigmoid, softplus, NeuralError, Tensor};

/// Handle to a node on a [`Tape`]. Only valid for the tape that created
/// it; using a stale or foreign id is reported as `GraphNotBuilt`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Concat(VarId, VarId),
    MatVec { w: VarId, x: VarId },
    Add(VarId, VarId),
    Mul(VarId, VarId),
    OneMinus(VarId),
    Sigmoid(VarId),
    Tanh(VarId),
    Softplus(VarId),
    Slice { src: VarId, start: usize },
    Scale(VarId, f64),
    Dropout { src: VarId, mask: Vec<f64> },
    GaussianNll { mu: VarId, sigma: VarId, y: Vec<f64> },
}

#[derive(Default)]
pub struct Tape {
    rows: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<Vec<f64>>,
    grads: Vec<Vec<f64>>,
    ops: Vec<Op>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Drops all recorded nodes; previously issued ids become invalid.
    pub fn clear(&mut self) {
        self.rows.clear();
        self.cols.clear();
        self.values.clear();
        self.grads.clear();
        self.ops.clear();
    }

    fn push(&mut self, rows: usize, cols: usize, values: Vec<f64>, op: Op) -> VarId {
        debug_assert_eq!(values.len(), rows * cols);
        self.rows.push(rows);
        self.cols.push(cols);
        self.grads.push(vec![0.0; values.len()]);
        self.values.push(values);
        self.ops.push(op);
        VarId(self.ops.len() - 1)
    }

    fn check(&self, id: VarId) -> Result<usize, NeuralError> {
        if id.0 < self.ops.len() {
            Ok(id.0)
        } else {
            Err(NeuralError::GraphNotBuilt)
        }
    }

    fn vec_len(&self, id: VarId) -> usize {
        self.values[id.0].len()
    }

    pub fn value(&self, id: VarId) -> &[f64] {
        &self.values[id.0]
    }

    pub fn grad(&self, id: VarId) -> &[f64] {
        &self.grads[id.0]
    }

    /// A leaf vector node (input or parameter).
    pub fn leaf(&mut self, values: &[f64]) -> VarId {
        self.push(values.len(), 1, values.to_vec(), Op::Leaf)
    }

    /// A leaf carrying a tensor's shape; matrices stay row-major.
    pub fn leaf_tensor(&mut self, t: &Tensor) -> VarId {
        self.push(t.rows(), t.cols(), t.values.clone(), Op::Leaf)
    }

    pub fn concat(&mut self, a: VarId, b: VarId) -> Result<VarId, NeuralError> {
        self.check(a)?;
        self.check(b)?;
        let mut values = self.values[a.0].clone();
        values.extend_from_slice(&self.values[b.0]);
        let n = values.len();
        Ok(self.push(n, 1, values, Op::Concat(a, b)))
    }

    /// Matrix-vector product; `w` must be a matrix node with as many
    /// columns as `x` has elements.
    pub fn matvec(&mut self, w: VarId, x: VarId) -> Result<VarId, NeuralError> {
        self.check(w)?;
        self.check(x)?;
        let (m, n) = (self.rows[w.0], self.cols[w.0]);
        if n != self.vec_len(x) {
            return Err(NeuralError::ShapeMismatch {
                context: "matvec input",
                expected: n,
                got: self.vec_len(x),
            });
        }
        let wv = &self.values[w.0];
        let xv = &self.values[x.0];
        let mut out = vec![0.0; m];
        for r in 0..m {
            let row = &wv[r * n..(r + 1) * n];
            out[r] = row.iter().zip(xv).map(|(a, b)| a * b).sum();
        }
        Ok(self.push(m, 1, out, Op::MatVec { w, x }))
    }

    fn binary_elementwise(
        &mut self,
        a: VarId,
        b: VarId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<VarId, NeuralError> {
        self.check(a)?;
        self.check(b)?;
        if self.vec_len(a) != self.vec_len(b) {
            return Err(NeuralError::ShapeMismatch {
                context: "elementwise operands",
                expected: self.vec_len(a),
                got: self.vec_len(b),
            });
        }
        let values = self.values[a.0]
            .iter()
            .zip(&self.values[b.0])
            .map(|(x, y)| f(*x, *y))
            .collect::<Vec<_>>();
        let n = values.len();
        Ok(self.push(n, 1, values, op))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId, NeuralError> {
        self.binary_elementwise(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId, NeuralError> {
        self.binary_elementwise(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(
        &mut self,
        a: VarId,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<VarId, NeuralError> {
        self.check(a)?;
        let values: Vec<f64> = self.values[a.0].iter().map(|x| f(*x)).collect();
        let n = values.len();
        Ok(self.push(n, 1, values, op))
    }

    /// `1 - x`, elementwise.
    pub fn one_minus(&mut self, a: VarId) -> Result<VarId, NeuralError> {
        self.unary(a, |x| 1.0 - x, Op::OneMinus(a))
    }

    pub fn sigmoid(&mut self, a: VarId) -> Result<VarId, NeuralError> {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: VarId) -> Result<VarId, NeuralError> {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: VarId) -> Result<VarId, NeuralError> {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn scale(&mut self, a: VarId, c: f64) -> Result<VarId, NeuralError> {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn slice(&mut self, src: VarId, start: usize, len: usize) -> Result<VarId, NeuralError> {
        self.check(src)?;
        if start + len > self.vec_len(src) {
            return Err(NeuralError::ShapeMismatch {
                context: "slice range",
                expected: self.vec_len(src),
                got: start + len,
            });
        }
        let values = self.values[src.0][start..start + len].to_vec();
        Ok(self.push(len, 1, values, Op::Slice { src, start }))
    }

    /// Elementwise multiplication by a constant dropout mask.
    pub fn dropout(&mut self, src: VarId, mask: Vec<f64>) -> Result<VarId, NeuralError> {
        self.check(src)?;
        if mask.len() != self.vec_len(src) {
            return Err(NeuralError::ShapeMismatch {
                context: "dropout mask",
                expected: self.vec_len(src),
                got: mask.len(),
            });
        }
        let values: Vec<f64> = self.values[src.0]
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let n = values.len();
        Ok(self.push(n, 1, values, Op::Dropout { src, mask }))
    }

    /// Summed Gaussian negative log-likelihood of constant observations
    /// `y` under per-element `mu` and `sigma`. Scalar output.
    pub fn gaussian_nll(
        &mut self,
        mu: VarId,
        sigma: VarId,
        y: Vec<f64>,
    ) -> Result<VarId, NeuralError> {
        self.check(mu)?;
        self.check(sigma)?;
        if self.vec_len(mu) != self.vec_len(sigma) || self.vec_len(mu) != y.len() {
            return Err(NeuralError::ShapeMismatch {
                context: "gaussian_nll operands",
                expected: self.vec_len(mu),
                got: y.len(),
            });
        }
        let mut total = 0.0;
        for ((&m, &s), &obs) in self.values[mu.0]
            .iter()
            .zip(&self.values[sigma.0])
            .zip(&y)
        {
            total += super::gaussian_nll(m, s, obs)?;
        }
        Ok(self.push(1, 1, vec![total], Op::GaussianNll { mu, sigma, y }))
    }

    /// `W x + b` in one call.
    pub fn dense(&mut self, w: VarId, b: VarId, x: VarId) -> Result<VarId, NeuralError> {
        let wx = self.matvec(w, x)?;
        self.add(wx, b)
    }

    /// Reverse pass from a scalar loss node: zeroes all co-tangents, seeds
    /// the loss with 1, and accumulates exact adjoints into every node
    /// reachable backwards from it. Gradients of leaves are then available
    /// via [`Tape::grad`].
    pub fn backward(&mut self, loss: VarId) -> Result<(), NeuralError> {
        let loss_idx = self.check(loss)?;
        if self.vec_len(loss) != 1 {
            return Err(NeuralError::ShapeMismatch {
                context: "backward loss node",
                expected: 1,
                got: self.vec_len(loss),
            });
        }
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        self.grads[loss_idx][0] = 1.0;

        let values = &self.values;
        let rows = &self.rows;
        let cols = &self.cols;
        for i in (0..=loss_idx).rev() {
            let (gparents, gtail) = self.grads.split_at_mut(i);
            let g = &gtail[0];
            match &self.ops[i] {
                Op::Leaf => {}
                Op::Concat(a, b) => {
                    let na = values[a.0].len();
                    for (dst, src) in gparents[a.0].iter_mut().zip(&g[..na]) {
                        *dst += src;
                    }
                    for (dst, src) in gparents[b.0].iter_mut().zip(&g[na..]) {
                        *dst += src;
                    }
                }
                Op::MatVec { w, x } => {
                    let (m, n) = (rows[w.0], cols[w.0]);
                    let xv = &values[x.0];
                    let wv = &values[w.0];
                    // dW[r, c] += g[r] * x[c]; dx[c] += sum_r W[r, c] g[r]
                    if w.0 == x.0 {
                        continue; // degenerate, cannot happen for distinct shapes
                    }
                    {
                        let gw = &mut gparents[w.0];
                        for r in 0..m {
                            let gr = g[r];
                            if gr == 0.0 {
                                continue;
                            }
                            let row = &mut gw[r * n..(r + 1) * n];
                            for (dst, xc) in row.iter_mut().zip(xv) {
                                *dst += gr * xc;
                            }
                        }
                    }
                    {
                        let gx = &mut gparents[x.0];
                        for r in 0..m {
                            let gr = g[r];
                            if gr == 0.0 {
                                continue;
                            }
                            let row = &wv[r * n..(r + 1) * n];
                            for (dst, wc) in gx.iter_mut().zip(row) {
                                *dst += gr * wc;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for (dst, src) in gparents[a.0].iter_mut().zip(g) {
                        *dst += src;
                    }
                    for (dst, src) in gparents[b.0].iter_mut().zip(g) {
                        *dst += src;
                    }
                }
                Op::Mul(a, b) => {
                    if a.0 == b.0 {
                        let av = &values[a.0];
                        for ((dst, src), v) in gparents[a.0].iter_mut().zip(g).zip(av) {
                            *dst += 2.0 * src * v;
                        }
                        continue;
                    }
                    let bv = &values[b.0];
                    for ((dst, src), v) in gparents[a.0].iter_mut().zip(g).zip(bv) {
                        *dst += src * v;
                    }
                    let av = &values[a.0];
                    for ((dst, src), v) in gparents[b.0].iter_mut().zip(g).zip(av) {
                        *dst += src * v;
                    }
                }
                Op::OneMinus(a) => {
                    for (dst, src) in gparents[a.0].iter_mut().zip(g) {
                        *dst -= src;
                    }
                }
                Op::Sigmoid(a) => {
                    let out = &values[i];
                    for ((dst, src), s) in gparents[a.0].iter_mut().zip(g).zip(out) {
                        *dst += src * s * (1.0 - s);
                    }
                }
                Op::Tanh(a) => {
                    let out = &values[i];
                    for ((dst, src), t) in gparents[a.0].iter_mut().zip(g).zip(out) {
                        *dst += src * (1.0 - t * t);
                    }
                }
                Op::Softplus(a) => {
                    let inp = &values[a.0];
                    for ((dst, src), x) in gparents[a.0].iter_mut().zip(g).zip(inp) {
                        *dst += src * sigmoid(*x);
                    }
                }
                Op::Slice { src, start } => {
                    let gsrc = &mut gparents[src.0][*start..*start + g.len()];
                    for (dst, s) in gsrc.iter_mut().zip(g) {
                        *dst += s;
                    }
                }
                Op::Scale(a, c) => {
                    for (dst, src) in gparents[a.0].iter_mut().zip(g) {
                        *dst += c * src;
                    }
                }
                Op::Dropout { src, mask } => {
                    for ((dst, s), m) in gparents[src.0].iter_mut().zip(g).zip(mask) {
                        *dst += s * m;
                    }
                }
                Op::GaussianNll { mu, sigma, y } => {
                    let g0 = g[0];
                    if g0 == 0.0 {
                        continue;
                    }
                    let mv = &values[mu.0];
                    let sv = &values[sigma.0];
                    {
                        let gm = &mut gparents[mu.0];
                        for ((dst, (&m, &s)), &obs) in
                            gm.iter_mut().zip(mv.iter().zip(sv)).zip(y)
                        {
                            *dst += g0 * (m - obs) / (s * s);
                        }
                    }
                    {
                        let gs = &mut gparents[sigma.0];
                        for ((dst, (&m, &s)), &obs) in
                            gs.iter_mut().zip(mv.iter().zip(sv)).zip(y)
                        {
                            let r = obs - m;
                            *dst += g0 * (1.0 / s - r * r / (s * s * s));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
