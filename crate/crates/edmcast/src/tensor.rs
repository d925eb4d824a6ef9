//! Reverse-mode automatic differentiation on a flat tape.
//!
//! A [`Tape`] records every operation as a node holding its output value and
//! the indices of its inputs; [`Tape::backward`] walks the nodes in reverse,
//! accumulating vector-Jacobian products. Handles are plain indices
//! ([`Var`]), tensors are row-major `f64` buffers with an explicit shape, and
//! a fresh tape is built for every forward pass, so there is no graph
//! mutation or caching to reason about. Backward visits nodes in a fixed
//! order and sums contributions sequentially, which makes gradients
//! bit-for-bit reproducible for identical inputs.
//!
//! Shape rules are deliberately narrow: matrix multiplication is 2-d (with a
//! batched 3-d variant), elementwise binaries broadcast only when one
//! operand's shape equals a suffix of the other's (equivalently, after
//! left-padding with ones, only leading 1-dimensions expand), and softmax
//! normalizes one axis. Misuse is a programming error and panics with a
//! message naming the offending shapes; data-dependent failures elsewhere in
//! the crate return [`crate::Error`] instead.
//!
//! In debug builds every node's output is checked for NaN/infinity as it is
//! pushed, so a non-finite value is caught at the op that produced it.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that
/// created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    /// Position of this node on its tape.
    pub fn index(self) -> usize {
        self.0
    }
}

/// A dense row-major `f64` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    /// Position on the owning tape once pushed; `None` for detached tensors.
    tape_id: Option<usize>,
}

impl Tensor {
    /// Build a tensor from a shape and row-major data.
    ///
    /// # Panics
    /// Panics if `data.len()` does not equal the product of `shape`, or if
    /// the shape is empty (scalars are `[1]`-shaped).
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Self {
        let shape = shape.into();
        assert!(!shape.is_empty(), "tensor shape must have at least one dimension");
        let numel: usize = shape.iter().product();
        assert_eq!(
            data.len(),
            numel,
            "tensor data length {} does not match shape {:?} (numel {})",
            data.len(),
            shape,
            numel
        );
        Tensor { shape, data, requires_grad: false, tape_id: None }
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        Tensor::new(shape, vec![0.0; numel])
    }

    /// `[1]`-shaped scalar.
    pub fn scalar(v: f64) -> Self {
        Tensor::new([1], vec![v])
    }

    /// Mark the tensor as a differentiable leaf (builder style).
    pub fn requires_grad(mut self, yes: bool) -> Self {
        self.requires_grad = yes;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Whether gradients are requested (leaves) or propagated (internal
    /// nodes).
    pub fn needs_grad(&self) -> bool {
        self.requires_grad
    }

    /// Position on the owning tape, if the tensor has been pushed onto one.
    pub fn tape_id(&self) -> Option<usize> {
        self.tape_id
    }
}

/// Recorded operation; holds the input handles (and any state backward
/// needs, such as a dropout mask).
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Matmul(Var, Var),
    Bmm(Var, Var),
    TransposeLast2(Var),
    Reshape(Var),
    Slice { x: Var, axis: usize, from: usize },
    Concat { axis: usize, parts: Vec<Var> },
    DelayEmbed { x: Var, lags: usize, tau: usize },
    Gelu(Var),
    Relu(Var),
    Sigmoid(Var),
    Abs(Var),
    Sign(Var),
    Softmax { x: Var, axis: usize },
    Dropout { x: Var, mask: Vec<f64> },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    tensor: Tensor,
    op: Op,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
///
/// Every node that required gradients has an entry — including leaves that
/// were never reached from the loss, which hold zeros.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Hand-built gradient map for unit tests that need to inject values
    /// backward itself can never produce (e.g. NaN).
    #[cfg(test)]
    pub(crate) fn from_raw(grads: Vec<Option<Vec<f64>>>) -> Self {
        Gradients { grads }
    }

    /// Gradient of the loss with respect to `v`, flattened row-major.
    ///
    /// # Panics
    /// Panics if `v` did not require gradients.
    pub fn wrt(&self, v: Var) -> &[f64] {
        self.grads
            .get(v.0)
            .and_then(|g| g.as_deref())
            .unwrap_or_else(|| panic!("node {} did not require gradients", v.0))
    }

    /// Gradient for `v` if it required one.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// Flat record of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Output value of a node.
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].tensor
    }

    /// Push a tensor as a leaf; its `requires_grad` flag decides whether
    /// backward will produce a gradient for it.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        self.push(tensor.requires_grad, tensor.shape.clone(), tensor.data, Op::Leaf)
    }

    /// Push a non-differentiable constant.
    pub fn constant(&mut self, shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Var {
        self.leaf(Tensor::new(shape, data))
    }

    /// Push a `[1]`-shaped constant scalar.
    pub fn constant_scalar(&mut self, v: f64) -> Var {
        self.constant([1], vec![v])
    }

    fn push(&mut self, requires_grad: bool, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Var {
        #[cfg(debug_assertions)]
        {
            if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
                panic!("non-finite value {bad} produced by {op:?} (shape {shape:?})");
            }
        }
        let id = self.nodes.len();
        let tensor = Tensor { shape, data, requires_grad, tape_id: Some(id) };
        self.nodes.push(Node { tensor, op });
        Var(id)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].tensor.requires_grad
    }

    // ---- elementwise binaries -------------------------------------------

    /// Elementwise addition with suffix broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.ew_binary("add", a, b, |x, y| x + y)
    }

    /// Elementwise subtraction with suffix broadcasting.
    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.ew_binary("sub", a, b, |x, y| x - y)
    }

    /// Elementwise (Hadamard) product with suffix broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.ew_binary("mul", a, b, |x, y| x * y)
    }

    fn ew_binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Var {
        let (asp, bsp) = (self.shape_of(a), self.shape_of(b));
        let plan = BroadcastPlan::resolve(name, &asp, &bsp);
        let (ad, bd) = (&self.nodes[a.0].tensor.data, &self.nodes[b.0].tensor.data);
        let data = match plan {
            BroadcastPlan::Same => ad.iter().zip(bd).map(|(x, y)| f(*x, *y)).collect(),
            BroadcastPlan::BSuffix => {
                let mut out = Vec::with_capacity(ad.len());
                for chunk in ad.chunks(bd.len()) {
                    out.extend(chunk.iter().zip(bd).map(|(x, y)| f(*x, *y)));
                }
                out
            }
            BroadcastPlan::ASuffix => {
                let mut out = Vec::with_capacity(bd.len());
                for chunk in bd.chunks(ad.len()) {
                    out.extend(ad.iter().zip(chunk).map(|(x, y)| f(*x, *y)));
                }
                out
            }
        };
        let shape = match plan {
            BroadcastPlan::ASuffix => bsp,
            _ => asp,
        };
        let rg = self.needs(a) || self.needs(b);
        let op = match name {
            "add" => Op::Add(a, b),
            "sub" => Op::Sub(a, b),
            _ => Op::Mul(a, b),
        };
        self.push(rg, shape, data, op)
    }

    /// Multiply by a compile-time constant scalar.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let shape = self.shape_of(x);
        let data = self.nodes[x.0].tensor.data.iter().map(|v| c * v).collect();
        let rg = self.needs(x);
        self.push(rg, shape, data, Op::Scale(x, c))
    }

    // ---- linear algebra --------------------------------------------------

    /// 2-d matrix product `[m,k] x [k,n] -> [m,n]`.
    ///
    /// # Panics
    /// Panics unless both operands are 2-d with matching inner dimension,
    /// naming both shapes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (asp, bsp) = (self.shape_of(a), self.shape_of(b));
        assert!(
            asp.len() == 2 && bsp.len() == 2 && asp[1] == bsp[0],
            "matmul shape mismatch: {asp:?} x {bsp:?}"
        );
        let (m, k, n) = (asp[0], asp[1], bsp[1]);
        let data = matmul_nn(&self.nodes[a.0].tensor.data, &self.nodes[b.0].tensor.data, m, k, n);
        let rg = self.needs(a) || self.needs(b);
        self.push(rg, vec![m, n], data, Op::Matmul(a, b))
    }

    /// Batched matrix product `[B,m,k] x [B,k,n] -> [B,m,n]`.
    ///
    /// # Panics
    /// Panics unless both operands are 3-d with matching batch and inner
    /// dimensions, naming both shapes.
    pub fn bmm(&mut self, a: Var, b: Var) -> Var {
        let (asp, bsp) = (self.shape_of(a), self.shape_of(b));
        assert!(
            asp.len() == 3 && bsp.len() == 3 && asp[0] == bsp[0] && asp[2] == bsp[1],
            "bmm shape mismatch: {asp:?} x {bsp:?}"
        );
        let (bt, m, k, n) = (asp[0], asp[1], asp[2], bsp[2]);
        let mut data = vec![0.0; bt * m * n];
        for i in 0..bt {
            let out = matmul_nn(
                &self.nodes[a.0].tensor.data[i * m * k..(i + 1) * m * k],
                &self.nodes[b.0].tensor.data[i * k * n..(i + 1) * k * n],
                m,
                k,
                n,
            );
            data[i * m * n..(i + 1) * m * n].copy_from_slice(&out);
        }
        let rg = self.needs(a) || self.needs(b);
        self.push(rg, vec![bt, m, n], data, Op::Bmm(a, b))
    }

    /// Swap the last two axes of a 2-d or 3-d tensor.
    pub fn transpose_last2(&mut self, x: Var) -> Var {
        let sp = self.shape_of(x);
        assert!(sp.len() == 2 || sp.len() == 3, "transpose_last2 needs rank 2 or 3, got {sp:?}");
        let (b, m, n) = if sp.len() == 2 { (1, sp[0], sp[1]) } else { (sp[0], sp[1], sp[2]) };
        let xd = &self.nodes[x.0].tensor.data;
        let mut data = vec![0.0; xd.len()];
        for bi in 0..b {
            let src = &xd[bi * m * n..(bi + 1) * m * n];
            let dst = &mut data[bi * m * n..(bi + 1) * m * n];
            for i in 0..m {
                for j in 0..n {
                    dst[j * m + i] = src[i * n + j];
                }
            }
        }
        let mut shape = sp;
        let r = shape.len();
        shape.swap(r - 2, r - 1);
        let rg = self.needs(x);
        self.push(rg, shape, data, Op::TransposeLast2(x))
    }

    /// Reinterpret the buffer with a new shape of equal element count.
    ///
    /// # Panics
    /// Panics if the element counts differ, naming both shapes.
    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Var {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        let old = self.shape_of(x);
        assert_eq!(
            numel,
            self.nodes[x.0].tensor.numel(),
            "reshape element count mismatch: {old:?} -> {shape:?}"
        );
        let data = self.nodes[x.0].tensor.data.clone();
        let rg = self.needs(x);
        self.push(rg, shape, data, Op::Reshape(x))
    }

    /// Contiguous slice `from..to` along `axis`.
    ///
    /// # Panics
    /// Panics if the range is empty or exceeds the axis length.
    pub fn slice(&mut self, x: Var, axis: usize, from: usize, to: usize) -> Var {
        let sp = self.shape_of(x);
        assert!(axis < sp.len(), "slice axis {axis} out of range for shape {sp:?}");
        assert!(
            from < to && to <= sp[axis],
            "slice range {from}..{to} invalid for axis {axis} of shape {sp:?}"
        );
        let outer: usize = sp[..axis].iter().product();
        let inner: usize = sp[axis + 1..].iter().product();
        let n = sp[axis];
        let xd = &self.nodes[x.0].tensor.data;
        let mut data = Vec::with_capacity(outer * (to - from) * inner);
        for o in 0..outer {
            let base = o * n * inner;
            data.extend_from_slice(&xd[base + from * inner..base + to * inner]);
        }
        let mut shape = sp;
        shape[axis] = to - from;
        let rg = self.needs(x);
        self.push(rg, shape, data, Op::Slice { x, axis, from })
    }

    /// Concatenate tensors along `axis`; all other dimensions must match.
    ///
    /// # Panics
    /// Panics on an empty part list or mismatched off-axis shapes.
    pub fn concat(&mut self, axis: usize, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat needs at least one input");
        let first = self.shape_of(parts[0]);
        assert!(axis < first.len(), "concat axis {axis} out of range for shape {first:?}");
        let mut axis_total = 0;
        for &p in parts {
            let sp = self.shape_of(p);
            assert_eq!(sp.len(), first.len(), "concat rank mismatch: {first:?} vs {sp:?}");
            for (d, (a, b)) in first.iter().zip(sp.iter()).enumerate() {
                assert!(
                    d == axis || a == b,
                    "concat off-axis shape mismatch at dim {d}: {first:?} vs {sp:?}"
                );
            }
            axis_total += sp[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut shape = first;
        shape[axis] = axis_total;
        let mut data = vec![0.0; outer * axis_total * inner];
        let mut offset = 0;
        for &p in parts {
            let sp = self.shape_of(p);
            let n = sp[axis];
            let pd = &self.nodes[p.0].tensor.data;
            for o in 0..outer {
                let dst = (o * axis_total + offset) * inner;
                let src = o * n * inner;
                data[dst..dst + n * inner].copy_from_slice(&pd[src..src + n * inner]);
            }
            offset += n;
        }
        let rg = parts.iter().any(|&p| self.needs(p));
        self.push(rg, shape, data, Op::Concat { axis, parts: parts.to_vec() })
    }

    /// Time-delay embed a `[D, L]` batch of series into `[D, L, lags]`:
    /// `out[d, t, j] = x[d, t - j*tau]` when the index is in range, else 0
    /// (zero padding before the start of the series). Lag 0 comes first, so
    /// each row reads most-recent-first.
    ///
    /// # Panics
    /// Panics unless `x` is 2-d, `lags >= 1`, and `tau >= 1`.
    pub fn delay_embed(&mut self, x: Var, lags: usize, tau: usize) -> Var {
        let sp = self.shape_of(x);
        assert!(sp.len() == 2, "delay_embed needs a [D, L] input, got {sp:?}");
        assert!(lags >= 1, "delay_embed needs at least one lag");
        assert!(tau >= 1, "delay_embed needs tau >= 1");
        let (d, l) = (sp[0], sp[1]);
        let xd = &self.nodes[x.0].tensor.data;
        let mut data = vec![0.0; d * l * lags];
        for di in 0..d {
            for t in 0..l {
                for j in 0..lags {
                    if t >= j * tau {
                        data[(di * l + t) * lags + j] = xd[di * l + t - j * tau];
                    }
                }
            }
        }
        let rg = self.needs(x);
        self.push(rg, vec![d, l, lags], data, Op::DelayEmbed { x, lags, tau })
    }

    // ---- activations -----------------------------------------------------

    /// GELU activation, tanh approximation:
    /// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.ew_unary(x, gelu_fwd, Op::Gelu(x))
    }

    /// ReLU; the subgradient at 0 is taken as 0.
    pub fn relu(&mut self, x: Var) -> Var {
        self.ew_unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    /// Logistic sigmoid.
    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.ew_unary(x, sigmoid_fwd, Op::Sigmoid(x))
    }

    /// Absolute value; the subgradient at 0 is taken as 0.
    pub fn abs(&mut self, x: Var) -> Var {
        self.ew_unary(x, f64::abs, Op::Abs(x))
    }

    /// Sign function with `sign(0) = 0`; gradient is 0 everywhere.
    pub fn sign(&mut self, x: Var) -> Var {
        self.ew_unary(x, |v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 }, Op::Sign(x))
    }

    fn ew_unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let shape = self.shape_of(x);
        let data = self.nodes[x.0].tensor.data.iter().map(|v| f(*v)).collect();
        let rg = self.needs(x);
        self.push(rg, shape, data, op)
    }

    /// Softmax along `axis`, computed with max subtraction for stability.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Var {
        let sp = self.shape_of(x);
        assert!(axis < sp.len(), "softmax axis {axis} out of range for shape {sp:?}");
        let outer: usize = sp[..axis].iter().product();
        let n = sp[axis];
        let inner: usize = sp[axis + 1..].iter().product();
        let xd = &self.nodes[x.0].tensor.data;
        let mut data = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let mut max = f64::NEG_INFINITY;
                for k in 0..n {
                    max = max.max(xd[at(k)]);
                }
                let mut sum = 0.0;
                for k in 0..n {
                    let e = (xd[at(k)] - max).exp();
                    data[at(k)] = e;
                    sum += e;
                }
                for k in 0..n {
                    data[at(k)] /= sum;
                }
            }
        }
        let rg = self.needs(x);
        self.push(rg, sp, data, Op::Softmax { x, axis })
    }

    /// Inverted dropout: each element is zeroed with probability `p` and the
    /// survivors are scaled by `1/(1-p)`, so the expected value is unchanged.
    /// The mask is drawn from `rng` at call time and kept for backward.
    ///
    /// # Panics
    /// Panics unless `0 <= p < 1`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut ChaCha8Rng) -> Var {
        assert!((0.0..1.0).contains(&p), "dropout probability must be in [0, 1), got {p}");
        let shape = self.shape_of(x);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.nodes[x.0].tensor.numel())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = self.nodes[x.0].tensor.data.iter().zip(&mask).map(|(v, m)| v * m).collect();
        let rg = self.needs(x);
        self.push(rg, shape, data, Op::Dropout { x, mask })
    }

    // ---- reductions ------------------------------------------------------

    /// Sum of all elements, as a `[1]`-shaped scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = pairwise_sum(&self.nodes[x.0].tensor.data);
        let rg = self.needs(x);
        self.push(rg, vec![1], vec![total], Op::Sum(x))
    }

    /// Mean of all elements, as a `[1]`-shaped scalar.
    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.nodes[x.0].tensor.numel();
        let total = pairwise_sum(&self.nodes[x.0].tensor.data);
        let rg = self.needs(x);
        self.push(rg, vec![1], vec![total / n as f64], Op::Mean(x))
    }

    fn shape_of(&self, v: Var) -> Vec<usize> {
        self.nodes[v.0].tensor.shape.clone()
    }

    // ---- backward --------------------------------------------------------

    /// Reverse sweep from a scalar loss. Returns the gradient of `loss` with
    /// respect to every gradient-requiring node; leaves that require
    /// gradients but are unreachable from the loss get explicit zeros.
    ///
    /// # Panics
    /// Panics if `loss` is not `[1]`-shaped.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(
            self.nodes[loss.0].tensor.numel(),
            1,
            "backward needs a scalar loss, got shape {:?}",
            self.nodes[loss.0].tensor.shape
        );
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            if grads[id].is_none() || !self.nodes[id].tensor.requires_grad {
                continue;
            }
            let g = grads[id].take().expect("gradient present");
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }

        // Materialize zeros for gradient-requiring nodes backward never
        // reached, so "no connection to the loss" reads as a zero gradient
        // rather than a missing entry.
        for (id, node) in self.nodes.iter().enumerate() {
            if node.tensor.requires_grad && grads[id].is_none() {
                grads[id] = Some(vec![0.0; node.tensor.numel()]);
            }
        }
        Gradients { grads }
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let mut add_to = |v: Var, contribution: Vec<f64>| {
            if !self.nodes[v.0].tensor.requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => {
                    for (a, c) in acc.iter_mut().zip(&contribution) {
                        *a += c;
                    }
                }
                slot => *slot = Some(contribution),
            }
        };

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let (asp, bsp) = (&self.nodes[a.0].tensor, &self.nodes[b.0].tensor);
                add_to(*a, reduce_for(g, asp.numel()));
                add_to(*b, reduce_for(g, bsp.numel()));
            }
            Op::Sub(a, b) => {
                let (at, bt) = (&self.nodes[a.0].tensor, &self.nodes[b.0].tensor);
                add_to(*a, reduce_for(g, at.numel()));
                let mut gb = reduce_for(g, bt.numel());
                for v in &mut gb {
                    *v = -*v;
                }
                add_to(*b, gb);
            }
            Op::Mul(a, b) => {
                let at = &self.nodes[a.0].tensor;
                let bt = &self.nodes[b.0].tensor;
                // d/da (a*b) = g*b, reduced onto a's shape; symmetric for b.
                let ga = mul_broadcast(g, &bt.data);
                add_to(*a, reduce_for(&ga, at.numel()));
                let gb = mul_broadcast(g, &at.data);
                add_to(*b, reduce_for(&gb, bt.numel()));
            }
            Op::Scale(x, c) => {
                add_to(*x, g.iter().map(|v| c * v).collect());
            }
            Op::Matmul(a, b) => {
                let at = &self.nodes[a.0].tensor;
                let bt = &self.nodes[b.0].tensor;
                let (m, k) = (at.shape[0], at.shape[1]);
                let n = bt.shape[1];
                add_to(*a, matmul_nt(g, &bt.data, m, n, k));
                add_to(*b, matmul_tn(&at.data, g, m, k, n));
            }
            Op::Bmm(a, b) => {
                let at = &self.nodes[a.0].tensor;
                let bt = &self.nodes[b.0].tensor;
                let (bs, m, k) = (at.shape[0], at.shape[1], at.shape[2]);
                let n = bt.shape[2];
                let mut ga = vec![0.0; at.numel()];
                let mut gb = vec![0.0; bt.numel()];
                for i in 0..bs {
                    let gi = &g[i * m * n..(i + 1) * m * n];
                    let ai = &at.data[i * m * k..(i + 1) * m * k];
                    let bi = &bt.data[i * k * n..(i + 1) * k * n];
                    ga[i * m * k..(i + 1) * m * k].copy_from_slice(&matmul_nt(gi, bi, m, n, k));
                    gb[i * k * n..(i + 1) * k * n].copy_from_slice(&matmul_tn(ai, gi, m, k, n));
                }
                add_to(*a, ga);
                add_to(*b, gb);
            }
            Op::TransposeLast2(x) => {
                let sp = &node.tensor.shape;
                let (b, m, n) = if sp.len() == 2 { (1, sp[0], sp[1]) } else { (sp[0], sp[1], sp[2]) };
                let mut gx = vec![0.0; g.len()];
                for bi in 0..b {
                    let src = &g[bi * m * n..(bi + 1) * m * n];
                    let dst = &mut gx[bi * m * n..(bi + 1) * m * n];
                    for i in 0..m {
                        for j in 0..n {
                            dst[j * m + i] = src[i * n + j];
                        }
                    }
                }
                add_to(*x, gx);
            }
            Op::Reshape(x) => add_to(*x, g.to_vec()),
            Op::Slice { x, axis, from } => {
                let xt = &self.nodes[x.0].tensor;
                let outer: usize = xt.shape[..*axis].iter().product();
                let inner: usize = xt.shape[*axis + 1..].iter().product();
                let n = xt.shape[*axis];
                let width = node.tensor.shape[*axis];
                let mut gx = vec![0.0; xt.numel()];
                for o in 0..outer {
                    let dst = (o * n + from) * inner;
                    let src = o * width * inner;
                    gx[dst..dst + width * inner].copy_from_slice(&g[src..src + width * inner]);
                }
                add_to(*x, gx);
            }
            Op::Concat { axis, parts } => {
                let sp = &node.tensor.shape;
                let outer: usize = sp[..*axis].iter().product();
                let inner: usize = sp[*axis + 1..].iter().product();
                let total = sp[*axis];
                let mut offset = 0;
                for &p in parts {
                    let pt = &self.nodes[p.0].tensor;
                    let n = pt.shape[*axis];
                    let mut gp = vec![0.0; pt.numel()];
                    for o in 0..outer {
                        let src = (o * total + offset) * inner;
                        let dst = o * n * inner;
                        gp[dst..dst + n * inner].copy_from_slice(&g[src..src + n * inner]);
                    }
                    add_to(p, gp);
                    offset += n;
                }
            }
            Op::DelayEmbed { x, lags, tau } => {
                let xt = &self.nodes[x.0].tensor;
                let (d, l) = (xt.shape[0], xt.shape[1]);
                let mut gx = vec![0.0; xt.numel()];
                for di in 0..d {
                    for t in 0..l {
                        for j in 0..*lags {
                            if t >= j * tau {
                                gx[di * l + t - j * tau] += g[(di * l + t) * lags + j];
                            }
                        }
                    }
                }
                add_to(*x, gx);
            }
            Op::Gelu(x) => {
                let xd = &self.nodes[x.0].tensor.data;
                add_to(*x, g.iter().zip(xd).map(|(gi, xi)| gi * gelu_grad(*xi)).collect());
            }
            Op::Relu(x) => {
                let xd = &self.nodes[x.0].tensor.data;
                add_to(*x, g.iter().zip(xd).map(|(gi, xi)| if *xi > 0.0 { *gi } else { 0.0 }).collect());
            }
            Op::Sigmoid(x) => {
                let yd = &node.tensor.data;
                add_to(*x, g.iter().zip(yd).map(|(gi, yi)| gi * yi * (1.0 - yi)).collect());
            }
            Op::Abs(x) => {
                let xd = &self.nodes[x.0].tensor.data;
                add_to(
                    *x,
                    g.iter()
                        .zip(xd)
                        .map(|(gi, xi)| gi * if *xi > 0.0 { 1.0 } else if *xi < 0.0 { -1.0 } else { 0.0 })
                        .collect(),
                );
            }
            Op::Sign(x) => {
                // sign is piecewise constant; gradient 0 everywhere.
                add_to(*x, vec![0.0; g.len()]);
            }
            Op::Softmax { x, axis } => {
                let sp = &node.tensor.shape;
                let outer: usize = sp[..*axis].iter().product();
                let n = sp[*axis];
                let inner: usize = sp[*axis + 1..].iter().product();
                let y = &node.tensor.data;
                let mut gx = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * n + k) * inner + i;
                        let mut dot = 0.0;
                        for k in 0..n {
                            dot += g[at(k)] * y[at(k)];
                        }
                        for k in 0..n {
                            gx[at(k)] = y[at(k)] * (g[at(k)] - dot);
                        }
                    }
                }
                add_to(*x, gx);
            }
            Op::Dropout { x, mask } => {
                add_to(*x, g.iter().zip(mask).map(|(gi, m)| gi * m).collect());
            }
            Op::Sum(x) => {
                let n = self.nodes[x.0].tensor.numel();
                add_to(*x, vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.nodes[x.0].tensor.numel();
                add_to(*x, vec![g[0] / n as f64; n]);
            }
        }
    }
}

/// Which operand of an elementwise binary broadcasts.
enum BroadcastPlan {
    Same,
    /// `b` is a suffix of `a`; output has `a`'s shape.
    BSuffix,
    /// `a` is a suffix of `b`; output has `b`'s shape.
    ASuffix,
}

impl BroadcastPlan {
    fn resolve(op: &str, a: &[usize], b: &[usize]) -> Self {
        if a == b {
            BroadcastPlan::Same
        } else if a.len() >= b.len() && a[a.len() - b.len()..] == *b {
            BroadcastPlan::BSuffix
        } else if b.len() > a.len() && b[b.len() - a.len()..] == *a {
            BroadcastPlan::ASuffix
        } else {
            panic!("{op} shape mismatch: {a:?} vs {b:?} (broadcasting expands leading dimensions only)");
        }
    }
}

/// Sum `g` over its leading chunks so it matches an operand with `numel`
/// elements (identity when sizes already agree).
fn reduce_for(g: &[f64], numel: usize) -> Vec<f64> {
    if g.len() == numel {
        return g.to_vec();
    }
    let mut out = vec![0.0; numel];
    for chunk in g.chunks(numel) {
        for (o, c) in out.iter_mut().zip(chunk) {
            *o += c;
        }
    }
    out
}

/// Elementwise product where `small` is tiled over `big`'s leading chunks.
fn mul_broadcast(big: &[f64], small: &[f64]) -> Vec<f64> {
    if big.len() == small.len() {
        return big.iter().zip(small).map(|(a, b)| a * b).collect();
    }
    if big.len() > small.len() {
        let mut out = Vec::with_capacity(big.len());
        for chunk in big.chunks(small.len()) {
            out.extend(chunk.iter().zip(small).map(|(a, b)| a * b));
        }
        out
    } else {
        // `big` (the upstream gradient) is the smaller operand: the forward
        // output took the other operand's larger shape, which cannot happen —
        // the output of a broadcast is never smaller than either input.
        unreachable!("broadcast gradient smaller than operand")
    }
}

fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += aik * brow[j];
            }
        }
    }
    out
}

/// `a [m,n] x b^T` where `b` is `[k,n]` -> `[m,k]`.
fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for kk in 0..k {
            let brow = &b[kk * n..(kk + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += arow[j] * brow[j];
            }
            out[i * k + kk] = acc;
        }
    }
    out
}

/// `a^T x b` where `a` is `[m,k]`, `b` is `[m,n]` -> `[k,n]`.
fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = arow[kk];
            if aik == 0.0 {
                continue;
            }
            let orow = &mut out[kk * n..(kk + 1) * n];
            for j in 0..n {
                orow[j] += aik * brow[j];
            }
        }
    }
    out
}

/// Pairwise (cascade) summation: splits recursively so rounding error grows
/// like O(log n) instead of O(n), and the result does not depend on chunking
/// of the caller.
pub(crate) fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 8 {
        return x.iter().sum();
    }
    let mid = x.len() / 2;
    pairwise_sum(&x[..mid]) + pairwise_sum(&x[mid..])
}

fn gelu_fwd(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

fn sigmoid_fwd(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
