use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{EncoderConfig, ModelError, ModelKind};
use crate::autodiff::{Graph, Scalar, Tensor, Var, GROUP_NORM_EPS};

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor<f32>>,
}

impl ParamStore {
    pub fn new(entries: Vec<(String, Tensor<f32>)>) -> Self {
        let (names, tensors) = entries.into_iter().unzip();
        Self { names, tensors }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<f32>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<f32>] {
        &mut self.tensors
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.position(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<f32>> {
        self.position(name).map(move |i| &mut self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// SHA-256 over names, shapes and little-endian values, as lowercase hex.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.names.iter().zip(&self.tensors) {
            h.update(name.as_bytes());
            h.update([0u8]);
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

enum Init {
    He(usize),
    Lecun(usize),
    Zeros,
    Ones,
}

fn param_layout(kind: ModelKind, c: &EncoderConfig) -> Vec<(String, Vec<usize>, Init)> {
    let mut out = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init: Init| out.push((name, shape, init));
    let m = c.embed_dim;
    let f = c.feature_len();
    let mut cin = c.in_channels;
    for (i, &w) in c.widths.iter().enumerate() {
        push(format!("enc.{i}.w"), vec![w, cin, 3, 3, 3], Init::He(cin * 27));
        push(format!("enc.{i}.b"), vec![w], Init::Zeros);
        push(format!("enc.{i}.gn.g"), vec![w], Init::Ones);
        push(format!("enc.{i}.gn.b"), vec![w], Init::Zeros);
        cin = w;
    }
    if kind.has_vae_heads() {
        push("mu.w".into(), vec![m, f], Init::Lecun(f));
        push("mu.b".into(), vec![m], Init::Zeros);
        push("logvar.w".into(), vec![m, f], Init::Lecun(f * 100));
        push("logvar.b".into(), vec![m], Init::Zeros);
    } else {
        push("embed.w".into(), vec![m, f], Init::Lecun(f));
        push("embed.b".into(), vec![m], Init::Zeros);
    }
    if kind.has_decoder() {
        push("dec.in.w".into(), vec![f, m], Init::He(m));
        push("dec.in.b".into(), vec![f], Init::Zeros);
        let n = c.widths.len();
        for i in 0..n {
            let cin = c.widths[n - 1 - i];
            let last = i + 1 == n;
            let cout = if last { c.in_channels } else { c.widths[n - 2 - i] };
            let fan = cin * 8;
            push(
                format!("dec.{i}.w"),
                vec![cin, cout, 4, 4, 4],
                if last { Init::Lecun(fan) } else { Init::He(fan) },
            );
            push(format!("dec.{i}.b"), vec![cout], Init::Zeros);
            if !last {
                push(format!("dec.{i}.gn.g"), vec![cout], Init::Ones);
                push(format!("dec.{i}.gn.b"), vec![cout], Init::Zeros);
            }
        }
    }
    if kind.has_projector() {
        let h = c.predictor_hidden();
        push("proj.0.w".into(), vec![m, m], Init::He(m));
        push("proj.0.b".into(), vec![m], Init::Zeros);
        push("proj.1.w".into(), vec![m, m], Init::Lecun(m));
        push("proj.1.b".into(), vec![m], Init::Zeros);
        push("pred.0.w".into(), vec![h, m], Init::He(m));
        push("pred.0.b".into(), vec![h], Init::Zeros);
        push("pred.1.w".into(), vec![m, h], Init::Lecun(h));
        push("pred.1.b".into(), vec![m], Init::Zeros);
    }
    out
}

/// An encoder family with its configuration and parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    kind: ModelKind,
    config: EncoderConfig,
    params: ParamStore,
}

impl Model {
    /// Fresh model with He/LeCun normal weights drawn from `seed`.
    pub fn new(kind: ModelKind, config: EncoderConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = param_layout(kind, &config)
            .into_iter()
            .map(|(name, shape, init)| {
                let t = match init {
                    Init::He(fan) => Tensor::randn(&shape, (2.0 / fan as f64).sqrt(), &mut rng),
                    Init::Lecun(fan) => Tensor::randn(&shape, (1.0 / fan as f64).sqrt(), &mut rng),
                    Init::Zeros => Tensor::zeros(&shape),
                    Init::Ones => Tensor::full(&shape, 1.0),
                };
                (name, t)
            })
            .collect();
        Ok(Self {
            kind,
            config,
            params: ParamStore::new(entries),
        })
    }

    /// Assembles a model from stored parameters, checking names and shapes
    /// against the layout implied by `kind` and `config`.
    pub fn from_parts(kind: ModelKind, config: EncoderConfig, params: ParamStore) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Self::param_shapes(kind, &config)?;
        if layout.len() != params.len() {
            return Err(ModelError::Shape(format!(
                "{kind} expects {} parameter tensors, got {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape), (pn, pt)) in layout.iter().zip(params.names().iter().zip(params.tensors())) {
            if name != pn || shape.as_slice() != pt.shape() {
                return Err(ModelError::Shape(format!(
                    "parameter `{pn}` {:?} does not match expected `{name}` {shape:?}",
                    pt.shape()
                )));
            }
        }
        Ok(Self { kind, config, params })
    }

    pub fn param_shapes(kind: ModelKind, config: &EncoderConfig) -> Result<Vec<(String, Vec<usize>)>, ModelError> {
        config.validate()?;
        Ok(param_layout(kind, config).into_iter().map(|(n, s, _)| (n, s)).collect())
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn checksum(&self) -> String {
        self.params.checksum()
    }

    /// Records every parameter on `g`, trainable or frozen.
    pub fn bind<T: Scalar>(&self, g: &mut Graph<T>, trainable: bool) -> Net<'_> {
        let vars = self
            .params
            .tensors()
            .iter()
            .map(|t| {
                let t = t.cast::<T>();
                if trainable {
                    g.param(t)
                } else {
                    g.constant(t)
                }
            })
            .collect();
        Net { model: self, vars }
    }

    /// Evaluation-time embedding of a `(B, C, D, H, W)` batch: the μ head for
    /// the variational model, the embedding layer otherwise.
    pub fn embed(&self, batch: &Tensor<f32>) -> Result<Tensor<f32>, ModelError> {
        let mut g = Graph::<f32>::new();
        let net = self.bind(&mut g, false);
        let x = g.constant(batch.clone());
        let z = net.embed(&mut g, x)?;
        Ok(g.value(z).clone())
    }
}

/// Parameters of a [`Model`] bound to variables on one graph.
pub struct Net<'a> {
    model: &'a Model,
    vars: Vec<Var>,
}

/// Outputs of the variational heads.
#[derive(Clone, Copy, Debug)]
pub struct VaeOutput {
    pub mu: Var,
    pub logvar: Var,
}

impl<'a> Net<'a> {
    /// Uses caller-supplied variables (in parameter order), e.g. gradient-check inputs.
    pub fn from_vars(model: &'a Model, vars: Vec<Var>) -> Result<Self, ModelError> {
        if vars.len() != model.params.len() {
            return Err(ModelError::Shape(format!(
                "expected {} parameter variables, got {}",
                model.params.len(),
                vars.len()
            )));
        }
        Ok(Self { model, vars })
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn var(&self, name: &str) -> Result<Var, ModelError> {
        self.model
            .params
            .position(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| ModelError::Shape(format!("{} has no parameter `{name}`", self.model.kind)))
    }

    fn linear<T: Scalar>(&self, g: &mut Graph<T>, x: Var, prefix: &str) -> Result<Var, ModelError> {
        let w = self.var(&format!("{prefix}.w"))?;
        let b = self.var(&format!("{prefix}.b"))?;
        Ok(g.linear(x, w, Some(b))?)
    }

    fn norm_act<T: Scalar>(&self, g: &mut Graph<T>, x: Var, prefix: &str) -> Result<Var, ModelError> {
        let c = &self.model.config;
        let gamma = self.var(&format!("{prefix}.gn.g"))?;
        let beta = self.var(&format!("{prefix}.gn.b"))?;
        let y = g.group_norm(x, gamma, beta, c.groups, T::lit(GROUP_NORM_EPS))?;
        Ok(g.leaky_relu(y, T::lit(c.slope)))
    }

    /// Strided convolution stages flattened to `(B, features)`.
    pub fn features<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var, ModelError> {
        let c = &self.model.config;
        let shape = g.shape(x).to_vec();
        if shape.len() != 5 || shape[1] != c.in_channels || shape[2..] != c.input_dims {
            return Err(ModelError::Shape(format!(
                "encoder expects (batch, {}, {:?}) input, got {shape:?}",
                c.in_channels, c.input_dims
            )));
        }
        let mut h = x;
        for i in 0..c.widths.len() {
            let w = self.var(&format!("enc.{i}.w"))?;
            let b = self.var(&format!("enc.{i}.b"))?;
            h = g.conv3d(h, w, Some(b), 2, 1)?;
            h = self.norm_act(g, h, &format!("enc.{i}"))?;
        }
        Ok(g.reshape(h, &[shape[0], c.feature_len()])?)
    }

    pub fn vae_heads<T: Scalar>(&self, g: &mut Graph<T>, features: Var) -> Result<VaeOutput, ModelError> {
        Ok(VaeOutput {
            mu: self.linear(g, features, "mu")?,
            logvar: self.linear(g, features, "logvar")?,
        })
    }

    /// `(B, M)` embedding; the μ output for the variational model.
    pub fn embed<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var, ModelError> {
        let f = self.features(g, x)?;
        if self.model.kind.has_vae_heads() {
            self.linear(g, f, "mu")
        } else {
            self.linear(g, f, "embed")
        }
    }

    /// Transposed-convolution decoder back to the input shape.
    pub fn decode<T: Scalar>(&self, g: &mut Graph<T>, z: Var) -> Result<Var, ModelError> {
        let c = &self.model.config;
        let zs = g.shape(z).to_vec();
        if zs.len() != 2 || zs[1] != c.embed_dim {
            return Err(ModelError::Shape(format!(
                "decoder expects (batch, {}), got {zs:?}",
                c.embed_dim
            )));
        }
        let h = self.linear(g, z, "dec.in")?;
        let h = g.leaky_relu(h, T::lit(c.slope));
        let b = c.bottleneck_dims();
        let mut h = g.reshape(h, &[zs[0], *c.widths.last().unwrap(), b[0], b[1], b[2]])?;
        let n = c.widths.len();
        for i in 0..n {
            let w = self.var(&format!("dec.{i}.w"))?;
            let bias = self.var(&format!("dec.{i}.b"))?;
            h = g.conv3d_transpose(h, w, Some(bias), 2, 1)?;
            if i + 1 < n {
                h = self.norm_act(g, h, &format!("dec.{i}"))?;
            }
        }
        Ok(h)
    }

    /// Two-layer projector `M → M → M`.
    pub fn project<T: Scalar>(&self, g: &mut Graph<T>, z: Var) -> Result<Var, ModelError> {
        let h = self.linear(g, z, "proj.0")?;
        let h = g.leaky_relu(h, T::lit(self.model.config.slope));
        self.linear(g, h, "proj.1")
    }

    /// Two-layer predictor `M → M/4 → M`.
    pub fn predict<T: Scalar>(&self, g: &mut Graph<T>, z: Var) -> Result<Var, ModelError> {
        let h = self.linear(g, z, "pred.0")?;
        let h = g.leaky_relu(h, T::lit(self.model.config.slope));
        self.linear(g, h, "pred.1")
    }
}

/// Stacks equally shaped tensors along a new leading batch axis.
pub fn stack_batch<T: Scalar>(items: &[&Tensor<T>]) -> Result<Tensor<T>, ModelError> {
    let Some(first) = items.first() else {
        return Err(ModelError::Shape("cannot stack an empty batch".into()));
    };
    let mut shape = vec![items.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(items.len() * first.len());
    for t in items {
        if t.shape() != first.shape() {
            return Err(ModelError::Shape(format!(
                "batch items differ in shape: {:?} vs {:?}",
                first.shape(),
                t.shape()
            )));
        }
        data.extend_from_slice(t.data());
    }
    Ok(Tensor::new(shape, data)?)
}
