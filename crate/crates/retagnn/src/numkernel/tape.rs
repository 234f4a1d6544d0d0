//! Reverse-mode differentiation on an append-only operation tape.
//!
//! A [`Tape`] owns one computation graph. Parameters enter as named leaves,
//! constants as untracked nodes; every op appends a node, so the graph is
//! acyclic by construction and the backward sweep is a single reverse pass
//! with a fixed accumulation order.

use super::tensor::Tensor;
use super::KernelError;

/// Handle to a node on a tape. Only valid for the tape that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf { name: Option<String> },
    Constant,
    Matmul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Slice { src: usize, start: usize },
    Concat(Vec<usize>),
    StackRows(Vec<usize>),
    GatherRows { src: usize, rows: Vec<usize> },
    Add(usize, usize),
    Sub(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    LeakyRelu(usize, f64),
    Relu(usize),
    LogSigmoid(usize),
    SoftmaxMask { src: usize },
    Dot(usize, usize),
    Sum(usize),
    FrobeniusSq(usize),
}

#[derive(Debug)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Vec<f64>,
    needs_grad: bool,
}

/// One forward/backward computation graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
    grads: Vec<Option<Vec<f64>>>,
}

fn dims2(shape: &[usize], op: &str) -> (usize, usize) {
    assert!(
        shape.len() == 2,
        "{op} expects a matrix, got shape {shape:?}"
    );
    (shape[0], shape[1])
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            op,
            shape,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn value_scalar(&self, v: Var) -> f64 {
        let n = self.node(v);
        assert!(n.value.len() == 1, "expected scalar, got shape {:?}", n.shape);
        n.value[0]
    }

    /// Bring a tensor onto the tape. Named leaves with `requires_grad` set
    /// receive gradients from [`Tape::backward`].
    pub fn leaf(&mut self, name: impl Into<String>, tensor: &Tensor) -> Var {
        let needs = tensor.requires_grad();
        self.push(
            Op::Leaf {
                name: Some(name.into()),
            },
            tensor.shape().to_vec(),
            tensor.data().to_vec(),
            needs,
        )
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Var {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "constant shape {:?} does not match {} values",
            shape,
            data.len()
        );
        self.push(Op::Constant, shape, data, false)
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.constant(vec![], vec![value])
    }

    pub fn zeros(&mut self, shape: Vec<usize>) -> Var {
        let numel = shape.iter().product();
        self.constant(shape, vec![0.0; numel])
    }

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, ka) = dims2(self.shape(a), "matmul");
        let (kb, n) = dims2(self.shape(b), "matmul");
        assert!(
            ka == kb,
            "shape mismatch in matmul: lhs {:?} vs rhs {:?}",
            self.shape(a),
            self.shape(b)
        );
        let mut out = vec![0.0; m * n];
        {
            let av = &self.node(a).value;
            let bv = &self.node(b).value;
            for i in 0..m {
                for k in 0..ka {
                    let aik = av[i * ka + k];
                    if aik == 0.0 {
                        continue;
                    }
                    let brow = &bv[k * n..(k + 1) * n];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for (o, bv) in orow.iter_mut().zip(brow) {
                        *o += aik * bv;
                    }
                }
            }
        }
        let needs = self.node(a).needs_grad || self.node(b).needs_grad;
        self.push(Op::Matmul(a.0, b.0), vec![m, n], out, needs)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (m, n) = dims2(self.shape(a), "transpose");
        let av = &self.node(a).value;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        let needs = self.node(a).needs_grad;
        self.push(Op::Transpose(a.0), vec![n, m], out, needs)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Var {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.node(a).value.len(),
            "reshape to {:?} incompatible with shape {:?}",
            shape,
            self.shape(a)
        );
        let value = self.node(a).value.clone();
        let needs = self.node(a).needs_grad;
        self.push(Op::Reshape(a.0), shape, value, needs)
    }

    /// Contiguous slice of a vector: `[n] -> [len]`.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let shape = self.shape(a);
        assert!(
            shape.len() == 1 && start + len <= shape[0],
            "slice [{start}, {start}+{len}) out of bounds for shape {shape:?}"
        );
        let value = self.node(a).value[start..start + len].to_vec();
        let needs = self.node(a).needs_grad;
        self.push(Op::Slice { src: a.0, start }, vec![len], value, needs)
    }

    /// Concatenate vectors into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let mut value = Vec::new();
        let mut needs = false;
        for &p in parts {
            assert!(
                self.shape(p).len() == 1,
                "concat expects vectors, got shape {:?}",
                self.shape(p)
            );
            value.extend_from_slice(&self.node(p).value);
            needs |= self.node(p).needs_grad;
        }
        let len = value.len();
        self.push(
            Op::Concat(parts.iter().map(|v| v.0).collect()),
            vec![len],
            value,
            needs,
        )
    }

    /// Stack equal-length vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty(), "stack_rows of zero vectors");
        let width = {
            let s = self.shape(rows[0]);
            assert!(s.len() == 1, "stack_rows expects vectors, got {s:?}");
            s[0]
        };
        let mut value = Vec::with_capacity(rows.len() * width);
        let mut needs = false;
        for &r in rows {
            assert_eq!(
                self.shape(r),
                &[width],
                "stack_rows width mismatch: {:?} vs [{width}]",
                self.shape(r)
            );
            value.extend_from_slice(&self.node(r).value);
            needs |= self.node(r).needs_grad;
        }
        self.push(
            Op::StackRows(rows.iter().map(|v| v.0).collect()),
            vec![rows.len(), width],
            value,
            needs,
        )
    }

    /// Gather matrix rows by index; repeats allowed.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let (m, n) = dims2(self.shape(a), "gather_rows");
        let mut value = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            assert!(r < m, "gather_rows index {r} out of {m} rows");
            value.extend_from_slice(&self.node(a).value[r * n..(r + 1) * n]);
        }
        let needs = self.node(a).needs_grad;
        self.push(
            Op::GatherRows {
                src: a.0,
                rows: rows.to_vec(),
            },
            vec![rows.len(), n],
            value,
            needs,
        )
    }

    fn binary_elementwise(
        &mut self,
        a: Var,
        b: Var,
        op_name: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Var {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "shape mismatch in {op_name}: lhs {:?} vs rhs {:?}",
            self.shape(a),
            self.shape(b)
        );
        let value = self
            .node(a)
            .value
            .iter()
            .zip(&self.node(b).value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.node(a).shape.clone();
        let needs = self.node(a).needs_grad || self.node(b).needs_grad;
        self.push(op, shape, value, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary_elementwise(a, b, "add", |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary_elementwise(a, b, "sub", |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary_elementwise(a, b, "mul", |x, y| x * y, Op::Mul(a.0, b.0))
    }

    /// Add a vector to every row of a matrix.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (m, n) = dims2(self.shape(a), "add_row");
        assert_eq!(
            self.shape(b),
            &[n],
            "shape mismatch in add_row: lhs {:?} vs rhs {:?}",
            self.shape(a),
            self.shape(b)
        );
        let bv = self.node(b).value.clone();
        let mut value = self.node(a).value.clone();
        for i in 0..m {
            for j in 0..n {
                value[i * n + j] += bv[j];
            }
        }
        let needs = self.node(a).needs_grad || self.node(b).needs_grad;
        self.push(Op::AddRow(a.0, b.0), vec![m, n], value, needs)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.node(a).value.iter().map(|&x| x * c).collect();
        let shape = self.node(a).shape.clone();
        let needs = self.node(a).needs_grad;
        self.push(Op::Scale(a.0, c), shape, value, needs)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self
            .node(a)
            .value
            .iter()
            .map(|&x| if x > 0.0 { x } else { slope * x })
            .collect();
        let shape = self.node(a).shape.clone();
        let needs = self.node(a).needs_grad;
        self.push(Op::LeakyRelu(a.0, slope), shape, value, needs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.node(a).value.iter().map(|&x| x.max(0.0)).collect();
        let shape = self.node(a).shape.clone();
        let needs = self.node(a).needs_grad;
        self.push(Op::Relu(a.0), shape, value, needs)
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let value = self.node(a).value.iter().map(|&x| log_sigmoid(x)).collect();
        let shape = self.node(a).shape.clone();
        let needs = self.node(a).needs_grad;
        self.push(Op::LogSigmoid(a.0), shape, value, needs)
    }

    /// Row softmax with an additive mask (`0` keeps an entry, `-inf` removes
    /// it). A fully masked row comes back as exact zeros. Vectors are treated
    /// as a single row.
    pub fn softmax_masked(&mut self, a: Var, mask: &[f64]) -> Var {
        let shape = self.node(a).shape.clone();
        let cols = match shape.len() {
            1 => shape[0],
            2 => shape[1],
            _ => panic!("softmax_masked expects a vector or matrix, got {shape:?}"),
        };
        assert_eq!(
            mask.len(),
            self.node(a).value.len(),
            "shape mismatch in softmax_masked: values {:?} vs mask length {}",
            shape,
            mask.len()
        );
        let src = &self.node(a).value;
        let mut value = vec![0.0; src.len()];
        for (row_v, (row_x, row_m)) in value
            .chunks_mut(cols)
            .zip(src.chunks(cols).zip(mask.chunks(cols)))
        {
            let mut hi = f64::NEG_INFINITY;
            for (x, m) in row_x.iter().zip(row_m) {
                let z = x + m;
                if z > hi {
                    hi = z;
                }
            }
            if hi == f64::NEG_INFINITY {
                continue; // fully masked row stays zero
            }
            let mut total = 0.0;
            for ((v, x), m) in row_v.iter_mut().zip(row_x).zip(row_m) {
                *v = (x + m - hi).exp();
                total += *v;
            }
            for v in row_v.iter_mut() {
                *v /= total;
            }
        }
        let needs = self.node(a).needs_grad;
        self.push(Op::SoftmaxMask { src: a.0 }, shape, value, needs)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        assert!(
            self.shape(a).len() == 1 && self.shape(a) == self.shape(b),
            "shape mismatch in dot: lhs {:?} vs rhs {:?}",
            self.shape(a),
            self.shape(b)
        );
        let value = self
            .node(a)
            .value
            .iter()
            .zip(&self.node(b).value)
            .map(|(x, y)| x * y)
            .sum();
        let needs = self.node(a).needs_grad || self.node(b).needs_grad;
        self.push(Op::Dot(a.0, b.0), vec![], vec![value], needs)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = self.node(a).value.iter().sum();
        let needs = self.node(a).needs_grad;
        self.push(Op::Sum(a.0), vec![], vec![value], needs)
    }

    pub fn frobenius_sq(&mut self, a: Var) -> Var {
        let value = self.node(a).value.iter().map(|x| x * x).sum();
        let needs = self.node(a).needs_grad;
        self.push(Op::FrobeniusSq(a.0), vec![], vec![value], needs)
    }

    /// Accumulate gradients of `loss` into every tracked node.
    ///
    /// Panics if `loss` is not scalar; errors if called twice on one tape.
    pub fn backward(&mut self, loss: Var) -> Result<(), KernelError> {
        if self.backward_done {
            return Err(KernelError::BackwardTwice);
        }
        let n = self.node(loss);
        assert!(
            n.value.len() == 1,
            "backward requires a scalar loss, got shape {:?}",
            n.shape
        );
        self.backward_done = true;
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                self.grads[id] = None;
                continue;
            }
            let Some(g) = self.grads[id].take() else {
                continue;
            };
            self.propagate(id, &g);
            self.grads[id] = Some(g);
        }
        Ok(())
    }

    fn accum(&mut self, target: usize, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[target].needs_grad {
            return;
        }
        let len = self.nodes[target].value.len();
        let slot = self.grads[target].get_or_insert_with(|| vec![0.0; len]);
        f(slot);
    }

    fn propagate(&mut self, id: usize, g: &[f64]) {
        match &self.nodes[id].op {
            Op::Leaf { .. } | Op::Constant => {}
            &Op::Matmul(a, b) => {
                let (m, k) = dims2(&self.nodes[a].shape, "matmul");
                let n = self.nodes[b].shape[1];
                if self.nodes[a].needs_grad {
                    // dA = dC * B^T
                    let bv = self.nodes[b].value.clone();
                    self.accum(a, |da| {
                        for i in 0..m {
                            for j in 0..n {
                                let gij = g[i * n + j];
                                if gij == 0.0 {
                                    continue;
                                }
                                for kk in 0..k {
                                    da[i * k + kk] += gij * bv[kk * n + j];
                                }
                            }
                        }
                    });
                }
                if self.nodes[b].needs_grad {
                    // dB = A^T * dC
                    let av = self.nodes[a].value.clone();
                    self.accum(b, |db| {
                        for i in 0..m {
                            for kk in 0..k {
                                let aik = av[i * k + kk];
                                if aik == 0.0 {
                                    continue;
                                }
                                for j in 0..n {
                                    db[kk * n + j] += aik * g[i * n + j];
                                }
                            }
                        }
                    });
                }
            }
            &Op::Transpose(a) => {
                let (m, n) = dims2(&self.nodes[a].shape, "transpose");
                self.accum(a, |da| {
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
            &Op::Reshape(a) => self.accum(a, |da| {
                for (d, gv) in da.iter_mut().zip(g) {
                    *d += gv;
                }
            }),
            &Op::Slice { src, start } => self.accum(src, |da| {
                for (d, gv) in da[start..start + g.len()].iter_mut().zip(g) {
                    *d += gv;
                }
            }),
            Op::Concat(parts) => {
                let parts = parts.clone();
                let mut offset = 0;
                for p in parts {
                    let len = self.nodes[p].value.len();
                    self.accum(p, |da| {
                        for (d, gv) in da.iter_mut().zip(&g[offset..offset + len]) {
                            *d += gv;
                        }
                    });
                    offset += len;
                }
            }
            Op::StackRows(rows) => {
                let rows = rows.clone();
                let width = self.nodes[id].shape[1];
                for (r, p) in rows.into_iter().enumerate() {
                    self.accum(p, |da| {
                        for (d, gv) in da.iter_mut().zip(&g[r * width..(r + 1) * width]) {
                            *d += gv;
                        }
                    });
                }
            }
            Op::GatherRows { src, rows } => {
                let src = *src;
                let rows = rows.clone();
                let n = self.nodes[id].shape[1];
                self.accum(src, |da| {
                    for (r, &row) in rows.iter().enumerate() {
                        for j in 0..n {
                            da[row * n + j] += g[r * n + j];
                        }
                    }
                });
            }
            &Op::Add(a, b) => {
                self.accum(a, |da| {
                    for (d, gv) in da.iter_mut().zip(g) {
                        *d += gv;
                    }
                });
                self.accum(b, |db| {
                    for (d, gv) in db.iter_mut().zip(g) {
                        *d += gv;
                    }
                });
            }
            &Op::Sub(a, b) => {
                self.accum(a, |da| {
                    for (d, gv) in da.iter_mut().zip(g) {
                        *d += gv;
                    }
                });
                self.accum(b, |db| {
                    for (d, gv) in db.iter_mut().zip(g) {
                        *d -= gv;
                    }
                });
            }
            &Op::AddRow(a, b) => {
                let (m, n) = dims2(&self.nodes[a].shape, "add_row");
                self.accum(a, |da| {
                    for (d, gv) in da.iter_mut().zip(g) {
                        *d += gv;
                    }
                });
                self.accum(b, |db| {
                    for i in 0..m {
                        for j in 0..n {
                            db[j] += g[i * n + j];
                        }
                    }
                });
            }
            &Op::Mul(a, b) => {
                if self.nodes[a].needs_grad {
                    let bv = self.nodes[b].value.clone();
                    self.accum(a, |da| {
                        for ((d, gv), x) in da.iter_mut().zip(g).zip(&bv) {
                            *d += gv * x;
                        }
                    });
                }
                if self.nodes[b].needs_grad {
                    let av = self.nodes[a].value.clone();
                    self.accum(b, |db| {
                        for ((d, gv), x) in db.iter_mut().zip(g).zip(&av) {
                            *d += gv * x;
                        }
                    });
                }
            }
            &Op::Scale(a, c) => self.accum(a, |da| {
                for (d, gv) in da.iter_mut().zip(g) {
                    *d += gv * c;
                }
            }),
            &Op::LeakyRelu(a, slope) => {
                let xs = self.nodes[a].value.clone();
                self.accum(a, |da| {
                    for ((d, gv), x) in da.iter_mut().zip(g).zip(&xs) {
                        *d += gv * if *x > 0.0 { 1.0 } else { slope };
                    }
                });
            }
            &Op::Relu(a) => {
                let xs = self.nodes[a].value.clone();
                self.accum(a, |da| {
                    for ((d, gv), x) in da.iter_mut().zip(g).zip(&xs) {
                        *d += gv * if *x > 0.0 { 1.0 } else { 0.0 };
                    }
                });
            }
            &Op::LogSigmoid(a) => {
                let xs = self.nodes[a].value.clone();
                self.accum(a, |da| {
                    for ((d, gv), x) in da.iter_mut().zip(g).zip(&xs) {
                        *d += gv * sigmoid(-x);
                    }
                });
            }
            Op::SoftmaxMask { src } => {
                let src = *src;
                let cols = *self.nodes[id].shape.last().unwrap();
                let ys = self.nodes[id].value.clone();
                self.accum(src, |da| {
                    for ((drow, grow), yrow) in da
                        .chunks_mut(cols)
                        .zip(g.chunks(cols))
                        .zip(ys.chunks(cols))
                    {
                        let inner: f64 = grow.iter().zip(yrow).map(|(gv, y)| gv * y).sum();
                        for ((d, gv), y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += y * (gv - inner);
                        }
                    }
                });
            }
            &Op::Dot(a, b) => {
                let gs = g[0];
                if self.nodes[a].needs_grad {
                    let bv = self.nodes[b].value.clone();
                    self.accum(a, |da| {
                        for (d, x) in da.iter_mut().zip(&bv) {
                            *d += gs * x;
                        }
                    });
                }
                if self.nodes[b].needs_grad {
                    let av = self.nodes[a].value.clone();
                    self.accum(b, |db| {
                        for (d, x) in db.iter_mut().zip(&av) {
                            *d += gs * x;
                        }
                    });
                }
            }
            &Op::Sum(a) => {
                let gs = g[0];
                self.accum(a, |da| {
                    for d in da.iter_mut() {
                        *d += gs;
                    }
                });
            }
            &Op::FrobeniusSq(a) => {
                let gs = g[0];
                let xs = self.nodes[a].value.clone();
                self.accum(a, |da| {
                    for (d, x) in da.iter_mut().zip(&xs) {
                        *d += 2.0 * gs * x;
                    }
                });
            }
        }
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of every named leaf, in tape order.
    pub fn leaf_grads(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.nodes.iter().enumerate().filter_map(|(id, n)| {
            if let Op::Leaf { name: Some(name) } = &n.op {
                self.grads
                    .get(id)
                    .and_then(|g| g.as_deref())
                    .map(|g| (name.as_str(), g))
            } else {
                None
            }
        })
    }
}
