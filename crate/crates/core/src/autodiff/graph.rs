use std::collections::HashMap;

use super::conv::{col2im_add, im2col, matmul_add, ConvGeom, Mat};
use super::{AutodiffError, Scalar, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Exp(Var),
    ReduceMean(Var),
    ReduceSum(Var),
    Reshape(Var),
    StopGradient(Var),
    LeakyRelu(Var, T),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv3d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    ConvTranspose3d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        normalized: Vec<T>,
        rstd: Vec<T>,
    },
    Mse(Var, Var),
    L2Norm(Var),
    EuclideanDistance(Var, Var),
    CosineSimilarity(Var, Var),
    RbfKernel {
        x: Var,
        y: Var,
        sigma: T,
    },
}

#[derive(Clone, Debug)]
struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Tape of evaluated operations. Every op evaluates eagerly when recorded, so
/// a node's cached output is available as soon as its handle is returned.
#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar loss with respect to every `requires_grad` leaf.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: HashMap<Var, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(&var)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.remove(&var)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

fn shape_err(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::Shape { op, detail }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Constant leaf; receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, false)
    }

    /// Cached forward output of `var`.
    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Direct inputs of `var`; always earlier in the tape, so the graph is acyclic.
    pub fn parents(&self, var: Var) -> Vec<Var> {
        match &self.nodes[var.0].op {
            Op::Leaf => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Mse(a, b)
            | Op::EuclideanDistance(a, b)
            | Op::CosineSimilarity(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Exp(a)
            | Op::ReduceMean(a)
            | Op::ReduceSum(a)
            | Op::Reshape(a)
            | Op::StopGradient(a)
            | Op::LeakyRelu(a, _)
            | Op::L2Norm(a) => vec![*a],
            Op::Linear { x, w, b }
            | Op::Conv3d { x, w, b, .. }
            | Op::ConvTranspose3d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(*b);
                v
            }
            Op::GroupNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::RbfKernel { x, y, .. } => vec![*x, *y],
        }
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                op,
                format!("operands {:?} and {:?} differ", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn rows(&self, op: &'static str, a: Var) -> Result<(usize, usize), AutodiffError> {
        match *self.shape(a) {
            [b, f] => Ok((b, f)),
            ref s => Err(shape_err(op, format!("expected (batch, feature), got {s:?}"))),
        }
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.shape().to_vec(), data).expect("shape preserved");
        let rg = self.rg(&[a, b]);
        self.push(op, out, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|x| x * c);
        let rg = self.rg(&[a]);
        self.push(Op::Scale(a, c), out, rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|x| x + c);
        let rg = self.rg(&[a]);
        self.push(Op::AddScalar(a), out, rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.exp());
        let rg = self.rg(&[a]);
        self.push(Op::Exp(a), out, rg)
    }

    pub fn reduce_mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = T::lit(v.len() as f64);
        let out = Tensor::scalar(v.data().iter().copied().sum::<T>() / n);
        let rg = self.rg(&[a]);
        self.push(Op::ReduceMean(a), out, rg)
    }

    pub fn reduce_sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).data().iter().copied().sum::<T>());
        let rg = self.rg(&[a]);
        self.push(Op::ReduceSum(a), out, rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let out = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(Op::Reshape(a), out, rg))
    }

    /// Identity in the forward pass; blocks all gradient flow to `a`.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let out = self.value(a).clone();
        self.push(Op::StopGradient(a), out, false)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        let out = self
            .value(a)
            .map(|x| if x > T::zero() { x } else { x * slope });
        let rg = self.rg(&[a]);
        self.push(Op::LeakyRelu(a, slope), out, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, T::zero())
    }

    /// `x (B, in) · wᵀ (out, in) + b (out)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, AutodiffError> {
        let (batch, fin) = self.rows("linear", x)?;
        let (fout, win) = match *self.shape(w) {
            [o, i] => (o, i),
            ref s => return Err(shape_err("linear", format!("weight must be (out, in), got {s:?}"))),
        };
        if win != fin {
            return Err(shape_err(
                "linear",
                format!("input has {fin} features but weight expects {win}"),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [fout] {
                return Err(shape_err(
                    "linear",
                    format!("bias {:?} does not match {fout} outputs", self.shape(b)),
                ));
            }
        }
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![T::zero(); batch * fout];
        for r in 0..batch {
            let xr = &xv[r * fin..(r + 1) * fin];
            for o in 0..fout {
                let wr = &wv[o * fin..(o + 1) * fin];
                out[r * fout + o] = xr.iter().zip(wr).map(|(&a, &b)| a * b).sum();
            }
        }
        if let Some(b) = b {
            let bv = self.value(b).data();
            for r in 0..batch {
                for o in 0..fout {
                    out[r * fout + o] += bv[o];
                }
            }
        }
        let out = Tensor::new(vec![batch, fout], out)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        let rg = self.rg(&parents);
        Ok(self.push(Op::Linear { x, w, b }, out, rg))
    }

    fn volume_dims(&self, op: &'static str, x: Var) -> Result<(usize, usize, [usize; 3]), AutodiffError> {
        match *self.shape(x) {
            [b, c, d, h, w] => Ok((b, c, [d, h, w])),
            ref s => Err(shape_err(
                op,
                format!("expected (batch, channel, depth, height, width), got {s:?}"),
            )),
        }
    }

    fn kernel_dims(&self, op: &'static str, w: Var) -> Result<(usize, usize, usize), AutodiffError> {
        match *self.shape(w) {
            [a, b, k, k2, k3] if k == k2 && k == k3 => Ok((a, b, k)),
            ref s => Err(shape_err(op, format!("weight must be cubic (a, b, k, k, k), got {s:?}"))),
        }
    }

    fn check_bias(&self, op: &'static str, b: Option<Var>, channels: usize) -> Result<(), AutodiffError> {
        match b {
            Some(b) if self.shape(b) != [channels] => Err(shape_err(
                op,
                format!("bias {:?} does not match {channels} channels", self.shape(b)),
            )),
            _ => Ok(()),
        }
    }

    /// Strided, zero-padded 3-D convolution with weight (out, in, k, k, k).
    pub fn conv3d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var, AutodiffError> {
        let (batch, cin, big) = self.volume_dims("conv3d", x)?;
        let (cout, wcin, k) = self.kernel_dims("conv3d", w)?;
        if wcin != cin {
            return Err(shape_err(
                "conv3d",
                format!("input has {cin} channels but weight expects {wcin}"),
            ));
        }
        if stride == 0 {
            return Err(shape_err("conv3d", "stride must be positive".into()));
        }
        if big.iter().any(|&n| n + 2 * pad < k) {
            return Err(shape_err(
                "conv3d",
                format!("kernel {k} exceeds padded extents {big:?} (pad {pad})"),
            ));
        }
        self.check_bias("conv3d", b, cout)?;
        let small = big.map(|n| (n + 2 * pad - k) / stride + 1);
        let geom = ConvGeom {
            small,
            big,
            kernel: k,
            stride,
            pad,
        };
        let (sl, bl, kl) = (geom.small_len(), geom.big_len(), geom.kernel_len());
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let kk = cin * kl;
        let mut out = vec![T::zero(); batch * cout * sl];
        let mut cols = vec![T::zero(); kk * sl];
        for bi in 0..batch {
            im2col(&geom, cin, &xv[bi * cin * bl..(bi + 1) * cin * bl], &mut cols);
            matmul_add(
                Mat::new(wv, cout, kk),
                Mat::new(&cols, kk, sl),
                &mut out[bi * cout * sl..(bi + 1) * cout * sl],
            );
        }
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), cout, sl);
        }
        let out = Tensor::new(vec![batch, cout, small[0], small[1], small[2]], out)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        let rg = self.rg(&parents);
        Ok(self.push(Op::Conv3d { x, w, b, geom }, out, rg))
    }

    /// Transposed 3-D convolution with weight (in, out, k, k, k); output
    /// extent per axis is `(n - 1) * stride - 2 * pad + k`.
    pub fn conv3d_transpose(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var, AutodiffError> {
        let (batch, cin, small) = self.volume_dims("conv3d_transpose", x)?;
        let (wcin, cout, k) = self.kernel_dims("conv3d_transpose", w)?;
        if wcin != cin {
            return Err(shape_err(
                "conv3d_transpose",
                format!("input has {cin} channels but weight expects {wcin}"),
            ));
        }
        if stride == 0 {
            return Err(shape_err("conv3d_transpose", "stride must be positive".into()));
        }
        if small.iter().any(|&n| (n - 1) * stride + k <= 2 * pad) {
            return Err(shape_err(
                "conv3d_transpose",
                format!("padding {pad} leaves no output for extents {small:?}"),
            ));
        }
        self.check_bias("conv3d_transpose", b, cout)?;
        let big = small.map(|n| (n - 1) * stride + k - 2 * pad);
        let geom = ConvGeom {
            small,
            big,
            kernel: k,
            stride,
            pad,
        };
        let (sl, bl, kl) = (geom.small_len(), geom.big_len(), geom.kernel_len());
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let kk = cout * kl;
        let mut out = vec![T::zero(); batch * cout * bl];
        let mut cols = vec![T::zero(); kk * sl];
        for bi in 0..batch {
            cols.fill(T::zero());
            matmul_add(
                Mat::new(wv, cin, kk).t(),
                Mat::new(&xv[bi * cin * sl..(bi + 1) * cin * sl], cin, sl),
                &mut cols,
            );
            col2im_add(&geom, cout, &cols, &mut out[bi * cout * bl..(bi + 1) * cout * bl]);
        }
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), cout, bl);
        }
        let out = Tensor::new(vec![batch, cout, big[0], big[1], big[2]], out)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        let rg = self.rg(&parents);
        Ok(self.push(Op::ConvTranspose3d { x, w, b, geom }, out, rg))
    }

    /// Group normalization over (channels-in-group × spatial) per batch item,
    /// followed by a per-channel affine transform.
    pub fn group_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        eps: T,
    ) -> Result<Var, AutodiffError> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(shape_err("group_norm", format!("need (batch, channel, ...), got {shape:?}")));
        }
        let (batch, ch) = (shape[0], shape[1]);
        if groups == 0 || ch % groups != 0 {
            return Err(shape_err(
                "group_norm",
                format!("{groups} groups do not divide {ch} channels"),
            ));
        }
        if self.shape(gamma) != [ch] || self.shape(beta) != [ch] {
            return Err(shape_err(
                "group_norm",
                format!(
                    "affine parameters {:?}/{:?} do not match {ch} channels",
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        let spatial: usize = shape[2..].iter().product();
        let group_len = ch / groups * spatial;
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut normalized = vec![T::zero(); xv.len()];
        let mut rstd = Vec::with_capacity(batch * groups);
        let n = T::lit(group_len as f64);
        for (gi, chunk) in xv.chunks(group_len).enumerate() {
            let mean = chunk.iter().copied().sum::<T>() / n;
            let var = chunk.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            for (dst, &v) in normalized[gi * group_len..(gi + 1) * group_len]
                .iter_mut()
                .zip(chunk)
            {
                *dst = (v - mean) * r;
            }
        }
        let mut out = normalized.clone();
        for (i, v) in out.iter_mut().enumerate() {
            let c = (i / spatial) % ch;
            *v = *v * gv[c] + bv[c];
        }
        let out = Tensor::new(shape, out)?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                normalized,
                rstd,
            },
            out,
            rg,
        ))
    }

    /// Mean over all elements of `(a - b)²`.
    pub fn mean_squared_error(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("mean_squared_error", a, b)?;
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let sum: T = va.iter().zip(vb).map(|(&x, &y)| (x - y) * (x - y)).sum();
        let out = Tensor::scalar(sum / T::lit(va.len() as f64));
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Mse(a, b), out, rg))
    }

    /// Row-wise Euclidean norm, (B, F) → (B, 1).
    pub fn l2_norm(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let (batch, f) = self.rows("l2_norm", a)?;
        let va = self.value(a).data();
        let out: Vec<T> = va.chunks(f).map(|r| r.iter().map(|&x| x * x).sum::<T>().sqrt()).collect();
        let out = Tensor::new(vec![batch, 1], out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(Op::L2Norm(a), out, rg))
    }

    /// Row-wise `‖a − b‖₂`, (B, F) × (B, F) → (B, 1).
    pub fn euclidean_distance(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("euclidean_distance", a, b)?;
        let (batch, f) = self.rows("euclidean_distance", a)?;
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let out: Vec<T> = va
            .chunks(f)
            .zip(vb.chunks(f))
            .map(|(ra, rb)| ra.iter().zip(rb).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>().sqrt())
            .collect();
        let out = Tensor::new(vec![batch, 1], out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::EuclideanDistance(a, b), out, rg))
    }

    /// Row-wise cosine similarity, (B, F) × (B, F) → (B, 1). Zero-norm rows
    /// are rejected.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("cosine_similarity", a, b)?;
        let (batch, f) = self.rows("cosine_similarity", a)?;
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let mut out = Vec::with_capacity(batch);
        for (ra, rb) in va.chunks(f).zip(vb.chunks(f)) {
            let na = ra.iter().map(|&x| x * x).sum::<T>().sqrt();
            let nb = rb.iter().map(|&x| x * x).sum::<T>().sqrt();
            if na == T::zero() || nb == T::zero() {
                return Err(AutodiffError::ZeroNorm {
                    op: "cosine_similarity",
                });
            }
            let dot: T = ra.iter().zip(rb).map(|(&x, &y)| x * y).sum();
            out.push(dot / (na * nb));
        }
        let out = Tensor::new(vec![batch, 1], out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::CosineSimilarity(a, b), out, rg))
    }

    /// Gaussian RBF Gram matrix `exp(−‖xᵢ − yⱼ‖² / 2σ²)`, (N, D) × (M, D) → (N, M).
    pub fn gaussian_rbf_kernel(&mut self, x: Var, y: Var, sigma: T) -> Result<Var, AutodiffError> {
        let (n, d) = self.rows("gaussian_rbf_kernel", x)?;
        let (m, dy) = self.rows("gaussian_rbf_kernel", y)?;
        if d != dy {
            return Err(shape_err(
                "gaussian_rbf_kernel",
                format!("sample dims {d} and {dy} differ"),
            ));
        }
        if sigma <= T::zero() {
            return Err(shape_err("gaussian_rbf_kernel", "bandwidth must be positive".into()));
        }
        let xv = self.value(x).data();
        let yv = self.value(y).data();
        let denom = T::lit(2.0) * sigma * sigma;
        let mut out = vec![T::zero(); n * m];
        for i in 0..n {
            let xi = &xv[i * d..(i + 1) * d];
            for j in 0..m {
                let yj = &yv[j * d..(j + 1) * d];
                let sq: T = xi.iter().zip(yj).map(|(&a, &b)| (a - b) * (a - b)).sum();
                out[i * m + j] = (-sq / denom).exp();
            }
        }
        let out = Tensor::new(vec![n, m], out)?;
        let rg = self.rg(&[x, y]);
        Ok(self.push(Op::RbfKernel { x, y, sigma }, out, rg))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, AutodiffError> {
        let ls = self.shape(loss);
        if ls.iter().product::<usize>() != 1 {
            return Err(AutodiffError::NonScalarLoss { shape: ls.to_vec() });
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(ls, T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            self.pullback(idx, &g, &mut grads);
        }

        let mut out = HashMap::new();
        for (idx, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                let g = grads[idx]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                out.insert(Var(idx), g);
            }
        }
        Ok(Gradients { grads: out })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], var: Var, delta: Tensor<T>) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn accumulate_with(
        &self,
        grads: &mut [Option<Tensor<T>>],
        var: Var,
        f: impl FnOnce(&mut [T]),
    ) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        let slot = &mut grads[var.0];
        let g = slot.get_or_insert_with(|| Tensor::zeros(self.nodes[var.0].value.shape()));
        f(g.data_mut());
    }

    fn pullback(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[idx];
        let gd = g.data();
        match &node.op {
            Op::Leaf | Op::StopGradient(_) => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate_with(grads, *a, |d| {
                    for ((d, &gv), &y) in d.iter_mut().zip(gd).zip(vb) {
                        *d += gv * y;
                    }
                });
                self.accumulate_with(grads, *b, |d| {
                    for ((d, &gv), &x) in d.iter_mut().zip(gd).zip(va) {
                        *d += gv * x;
                    }
                });
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate(grads, *a, g.map(|v| v * c));
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Exp(a) => {
                let out = node.value.data();
                self.accumulate_with(grads, *a, |d| {
                    for ((d, &gv), &y) in d.iter_mut().zip(gd).zip(out) {
                        *d += gv * y;
                    }
                });
            }
            Op::ReduceMean(a) => {
                let n = T::lit(self.value(*a).len() as f64);
                let gv = gd[0] / n;
                self.accumulate_with(grads, *a, |d| d.iter_mut().for_each(|d| *d += gv));
            }
            Op::ReduceSum(a) => {
                let gv = gd[0];
                self.accumulate_with(grads, *a, |d| d.iter_mut().for_each(|d| *d += gv));
            }
            Op::Reshape(a) => {
                let shaped = g.clone().reshape(self.shape(*a)).expect("reshape inverse");
                self.accumulate(grads, *a, shaped);
            }
            Op::LeakyRelu(a, slope) => {
                let xa = self.value(*a).data();
                let slope = *slope;
                self.accumulate_with(grads, *a, |d| {
                    for ((d, &gv), &x) in d.iter_mut().zip(gd).zip(xa) {
                        *d += if x > T::zero() { gv } else { gv * slope };
                    }
                });
            }
            Op::Linear { x, w, b } => {
                let (batch, fin) = (self.shape(*x)[0], self.shape(*x)[1]);
                let fout = self.shape(*w)[0];
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                self.accumulate_with(grads, *x, |d| {
                    for r in 0..batch {
                        for o in 0..fout {
                            let gv = gd[r * fout + o];
                            let wr = &wv[o * fin..(o + 1) * fin];
                            for (dst, &wk) in d[r * fin..(r + 1) * fin].iter_mut().zip(wr) {
                                *dst += gv * wk;
                            }
                        }
                    }
                });
                self.accumulate_with(grads, *w, |d| {
                    for r in 0..batch {
                        let xr = &xv[r * fin..(r + 1) * fin];
                        for o in 0..fout {
                            let gv = gd[r * fout + o];
                            for (dst, &xk) in d[o * fin..(o + 1) * fin].iter_mut().zip(xr) {
                                *dst += gv * xk;
                            }
                        }
                    }
                });
                if let Some(b) = b {
                    self.accumulate_with(grads, *b, |d| {
                        for r in 0..batch {
                            for o in 0..fout {
                                d[o] += gd[r * fout + o];
                            }
                        }
                    });
                }
            }
            Op::Conv3d { x, w, b, geom } => {
                let (batch, cin) = (self.shape(*x)[0], self.shape(*x)[1]);
                let cout = self.shape(*w)[0];
                let (sl, bl, kl) = (geom.small_len(), geom.big_len(), geom.kernel_len());
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                let kk = cin * kl;
                let mut cols = vec![T::zero(); kk * sl];
                self.accumulate_with(grads, *x, |d| {
                    for bi in 0..batch {
                        cols.fill(T::zero());
                        matmul_add(
                            Mat::new(wv, cout, kk).t(),
                            Mat::new(&gd[bi * cout * sl..(bi + 1) * cout * sl], cout, sl),
                            &mut cols,
                        );
                        col2im_add(geom, cin, &cols, &mut d[bi * cin * bl..(bi + 1) * cin * bl]);
                    }
                });
                self.accumulate_with(grads, *w, |d| {
                    for bi in 0..batch {
                        im2col(geom, cin, &xv[bi * cin * bl..(bi + 1) * cin * bl], &mut cols);
                        matmul_add(
                            Mat::new(&gd[bi * cout * sl..(bi + 1) * cout * sl], cout, sl),
                            Mat::new(&cols, kk, sl).t(),
                            d,
                        );
                    }
                });
                if let Some(b) = b {
                    self.accumulate_with(grads, *b, |d| channel_bias_grad(d, gd, cout, sl));
                }
            }
            Op::ConvTranspose3d { x, w, b, geom } => {
                let (batch, cin) = (self.shape(*x)[0], self.shape(*x)[1]);
                let cout = self.shape(*w)[1];
                let (sl, bl, kl) = (geom.small_len(), geom.big_len(), geom.kernel_len());
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                let kk = cout * kl;
                let mut cols = vec![T::zero(); kk * sl];
                let gcols: Vec<Vec<T>> = (0..batch)
                    .map(|bi| {
                        im2col(geom, cout, &gd[bi * cout * bl..(bi + 1) * cout * bl], &mut cols);
                        cols.clone()
                    })
                    .collect();
                self.accumulate_with(grads, *x, |d| {
                    for (bi, gc) in gcols.iter().enumerate() {
                        matmul_add(
                            Mat::new(wv, cin, kk),
                            Mat::new(gc, kk, sl),
                            &mut d[bi * cin * sl..(bi + 1) * cin * sl],
                        );
                    }
                });
                self.accumulate_with(grads, *w, |d| {
                    for (bi, gc) in gcols.iter().enumerate() {
                        matmul_add(
                            Mat::new(&xv[bi * cin * sl..(bi + 1) * cin * sl], cin, sl),
                            Mat::new(gc, kk, sl).t(),
                            d,
                        );
                    }
                });
                if let Some(b) = b {
                    self.accumulate_with(grads, *b, |d| channel_bias_grad(d, gd, cout, bl));
                }
            }
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                normalized,
                rstd,
            } => {
                let shape = self.shape(*x);
                let ch = shape[1];
                let spatial: usize = shape[2..].iter().product();
                let group_len = ch / groups * spatial;
                let gv = self.value(*gamma).data();
                self.accumulate_with(grads, *beta, |d| {
                    for (i, &gi) in gd.iter().enumerate() {
                        d[(i / spatial) % ch] += gi;
                    }
                });
                self.accumulate_with(grads, *gamma, |d| {
                    for (i, (&gi, &xh)) in gd.iter().zip(normalized).enumerate() {
                        d[(i / spatial) % ch] += gi * xh;
                    }
                });
                self.accumulate_with(grads, *x, |d| {
                    let n = T::lit(group_len as f64);
                    for (gi, &r) in rstd.iter().enumerate() {
                        let range = gi * group_len..(gi + 1) * group_len;
                        let dxh: Vec<T> = range
                            .clone()
                            .map(|i| gd[i] * gv[(i / spatial) % ch])
                            .collect();
                        let xh = &normalized[range.clone()];
                        let mean_d = dxh.iter().copied().sum::<T>() / n;
                        let mean_dx = dxh.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() / n;
                        for ((dst, &dh), &h) in d[range].iter_mut().zip(&dxh).zip(xh) {
                            *dst += r * (dh - mean_d - h * mean_dx);
                        }
                    }
                });
            }
            Op::Mse(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let c = gd[0] * T::lit(2.0) / T::lit(va.len() as f64);
                let diff: Vec<T> = va.iter().zip(vb).map(|(&x, &y)| c * (x - y)).collect();
                self.accumulate_with(grads, *a, |d| {
                    d.iter_mut().zip(&diff).for_each(|(d, &v)| *d += v);
                });
                self.accumulate_with(grads, *b, |d| {
                    d.iter_mut().zip(&diff).for_each(|(d, &v)| *d -= v);
                });
            }
            Op::L2Norm(a) => {
                let f = self.shape(*a)[1];
                let va = self.value(*a).data();
                let norms = node.value.data();
                self.accumulate_with(grads, *a, |d| {
                    for (r, (&n, &gr)) in norms.iter().zip(gd).enumerate() {
                        if n == T::zero() {
                            continue;
                        }
                        for k in r * f..(r + 1) * f {
                            d[k] += gr * va[k] / n;
                        }
                    }
                });
            }
            Op::EuclideanDistance(a, b) => {
                let f = self.shape(*a)[1];
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let dist = node.value.data();
                let mut delta = vec![T::zero(); va.len()];
                for (r, (&dn, &gr)) in dist.iter().zip(gd).enumerate() {
                    if dn == T::zero() {
                        continue;
                    }
                    for k in r * f..(r + 1) * f {
                        delta[k] = gr * (va[k] - vb[k]) / dn;
                    }
                }
                self.accumulate_with(grads, *a, |d| {
                    d.iter_mut().zip(&delta).for_each(|(d, &v)| *d += v);
                });
                self.accumulate_with(grads, *b, |d| {
                    d.iter_mut().zip(&delta).for_each(|(d, &v)| *d -= v);
                });
            }
            Op::CosineSimilarity(a, b) => {
                let f = self.shape(*a)[1];
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let cos = node.value.data();
                let mut da = vec![T::zero(); va.len()];
                let mut db = vec![T::zero(); vb.len()];
                for r in 0..cos.len() {
                    let ra = &va[r * f..(r + 1) * f];
                    let rb = &vb[r * f..(r + 1) * f];
                    let na = ra.iter().map(|&x| x * x).sum::<T>().sqrt();
                    let nb = rb.iter().map(|&x| x * x).sum::<T>().sqrt();
                    let (c, gr) = (cos[r], gd[r]);
                    for k in 0..f {
                        da[r * f + k] = gr * (rb[k] / (na * nb) - c * ra[k] / (na * na));
                        db[r * f + k] = gr * (ra[k] / (na * nb) - c * rb[k] / (nb * nb));
                    }
                }
                self.accumulate_with(grads, *a, |d| {
                    d.iter_mut().zip(&da).for_each(|(d, &v)| *d += v);
                });
                self.accumulate_with(grads, *b, |d| {
                    d.iter_mut().zip(&db).for_each(|(d, &v)| *d += v);
                });
            }
            Op::RbfKernel { x, y, sigma } => {
                let (n, dim) = (self.shape(*x)[0], self.shape(*x)[1]);
                let m = self.shape(*y)[0];
                let (xv, yv) = (self.value(*x).data(), self.value(*y).data());
                let kv = node.value.data();
                let inv = T::one() / (*sigma * *sigma);
                let mut dx = vec![T::zero(); xv.len()];
                let mut dy = vec![T::zero(); yv.len()];
                for i in 0..n {
                    for j in 0..m {
                        let c = gd[i * m + j] * kv[i * m + j] * inv;
                        for k in 0..dim {
                            let diff = xv[i * dim + k] - yv[j * dim + k];
                            dx[i * dim + k] -= c * diff;
                            dy[j * dim + k] += c * diff;
                        }
                    }
                }
                self.accumulate_with(grads, *x, |d| {
                    d.iter_mut().zip(&dx).for_each(|(d, &v)| *d += v);
                });
                self.accumulate_with(grads, *y, |d| {
                    d.iter_mut().zip(&dy).for_each(|(d, &v)| *d += v);
                });
            }
        }
    }
}

fn add_channel_bias<T: Scalar>(out: &mut [T], bias: &[T], channels: usize, plane: usize) {
    for (i, chunk) in out.chunks_mut(plane).enumerate() {
        let bv = bias[i % channels];
        chunk.iter_mut().for_each(|v| *v += bv);
    }
}

fn channel_bias_grad<T: Scalar>(d: &mut [T], g: &[T], channels: usize, plane: usize) {
    for (i, chunk) in g.chunks(plane).enumerate() {
        d[i % channels] += chunk.iter().copied().sum::<T>();
    }
}
