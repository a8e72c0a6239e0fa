//! The four model variants: {plain, transformer-encoded} instance embeddings
//! crossed with {point-mass, diagonal-Gaussian} attention posteriors.
//!
//! Shared spine: instances are embedded row-wise (affine then tanh), the
//! transformer variants additionally pass the embedded rows through
//! pre-norm residual encoder layers, an attention head produces one logit
//! mean per instance (and a variance head one logit variance, for the
//! Gaussian posterior), and the bag probability is
//! `sigmoid(w . (H^T softmax(f)) + b)`.
//!
//! Everything is permutation equivariant: there is no positional encoding
//! and every per-instance map treats rows independently, so reordering
//! instances reorders attention and leaves the bag probability unchanged.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{concat_cols, sigmoid, Tape, Var};
use crate::data::{derive_rng, standard_normal, Bag, Cursor};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Additive floor keeping attention variances strictly positive.
pub const SIGMA_FLOOR: f64 = 1e-6;
/// Epsilon inside the layer-norm square root.
pub const EPS_LN: f64 = 1e-5;

const CHECKPOINT_MAGIC: &[u8; 4] = b"PSAC";
const CHECKPOINT_VERSION: u32 = 1;
const MODEL_SEED_SALT: u64 = 0x6d6f64656c; // "model"

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BagTransform {
    /// Row-wise affine embedding only.
    Abmil,
    /// Affine embedding followed by transformer encoder layers.
    TAbmil,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosteriorKind {
    /// Point mass at the attention means; the KL term degenerates to the
    /// Dirichlet energy of the means.
    DiracDelta,
    /// Independent Gaussian per attention logit with learned variance.
    DiagGaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerDims {
    pub layers: usize,
    pub heads: usize,
    pub d_qk: usize,
    pub d_v: usize,
}

impl Default for TransformerDims {
    fn default() -> Self {
        TransformerDims {
            layers: 2,
            heads: 4,
            d_qk: 64,
            d_v: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelVariant {
    pub bag_transform: BagTransform,
    pub posterior: PosteriorKind,
    /// Feature dimension P of the instances.
    pub input_dim: usize,
    /// Embedding width D.
    pub embed_dim: usize,
    /// Attention-head hidden width.
    pub attention_dim: usize,
    #[serde(default)]
    pub transformer: TransformerDims,
}

impl ModelVariant {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.embed_dim == 0 || self.attention_dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "model dims must be positive: input {}, embed {}, attention {}",
                self.input_dim, self.embed_dim, self.attention_dim
            )));
        }
        if self.bag_transform == BagTransform::TAbmil {
            let t = &self.transformer;
            if t.heads == 0 || t.d_qk == 0 || t.d_v == 0 {
                return Err(Error::InvalidConfig(
                    "transformer heads and projection dims must be positive".into(),
                ));
            }
            if t.d_qk % t.heads != 0 || t.d_v % t.heads != 0 {
                return Err(Error::InvalidConfig(format!(
                    "heads ({}) must divide d_qk ({}) and d_v ({})",
                    t.heads, t.d_qk, t.d_v
                )));
            }
            if t.d_v != self.embed_dim {
                return Err(Error::InvalidConfig(format!(
                    "residual connection needs d_v ({}) == embed_dim ({})",
                    t.d_v, self.embed_dim
                )));
            }
        }
        Ok(())
    }

    fn has_sigma_head(&self) -> bool {
        self.posterior == PosteriorKind::DiagGaussian
    }
}

enum InitRule {
    /// Uniform in +-sqrt(1/fan_in).
    Uniform { fan_in: usize },
    One,
    Zero,
}

struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: InitRule,
}

fn param_specs(variant: &ModelVariant) -> Vec<ParamSpec> {
    let p = variant.input_dim;
    let d = variant.embed_dim;
    let df = variant.attention_dim;
    let mut specs = vec![
        ParamSpec {
            name: "embed.w".into(),
            shape: vec![p, d],
            init: InitRule::Uniform { fan_in: p },
        },
        ParamSpec {
            name: "embed.b".into(),
            shape: vec![d],
            init: InitRule::Uniform { fan_in: p },
        },
    ];
    if variant.bag_transform == BagTransform::TAbmil {
        let t = &variant.transformer;
        for l in 0..t.layers {
            let pre = format!("enc{}.", l);
            let mut push = |suffix: &str, shape: Vec<usize>, init: InitRule| {
                specs.push(ParamSpec {
                    name: format!("{}{}", pre, suffix),
                    shape,
                    init,
                });
            };
            push("ln1.g", vec![d], InitRule::One);
            push("ln1.b", vec![d], InitRule::Zero);
            push("wq", vec![d, t.d_qk], InitRule::Uniform { fan_in: d });
            push("bq", vec![t.d_qk], InitRule::Uniform { fan_in: d });
            push("wk", vec![d, t.d_qk], InitRule::Uniform { fan_in: d });
            push("bk", vec![t.d_qk], InitRule::Uniform { fan_in: d });
            push("wv", vec![d, t.d_v], InitRule::Uniform { fan_in: d });
            push("bv", vec![t.d_v], InitRule::Uniform { fan_in: d });
            push("ln2.g", vec![d], InitRule::One);
            push("ln2.b", vec![d], InitRule::Zero);
            push("mlp1.w", vec![d, t.d_v], InitRule::Uniform { fan_in: d });
            push("mlp1.b", vec![t.d_v], InitRule::Uniform { fan_in: d });
            push("mlp2.w", vec![t.d_v, d], InitRule::Uniform { fan_in: t.d_v });
            push("mlp2.b", vec![d], InitRule::Uniform { fan_in: t.d_v });
        }
    }
    specs.push(ParamSpec {
        name: "att_mu.w".into(),
        shape: vec![d, df],
        init: InitRule::Uniform { fan_in: d },
    });
    specs.push(ParamSpec {
        name: "att_mu.v".into(),
        shape: vec![df],
        init: InitRule::Uniform { fan_in: df },
    });
    if variant.has_sigma_head() {
        specs.push(ParamSpec {
            name: "att_sig.w".into(),
            shape: vec![d, df],
            init: InitRule::Uniform { fan_in: d },
        });
        specs.push(ParamSpec {
            name: "att_sig.v".into(),
            shape: vec![df],
            init: InitRule::Uniform { fan_in: df },
        });
    }
    specs.push(ParamSpec {
        name: "cls.w".into(),
        shape: vec![d],
        init: InitRule::Uniform { fan_in: d },
    });
    specs.push(ParamSpec {
        name: "cls.b".into(),
        shape: vec![],
        init: InitRule::Uniform { fan_in: d },
    });
    specs
}

/// Named parameters in a frozen order. The order is the contract for Adam
/// moment alignment and checkpoint layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [(String, Tensor)] {
        &mut self.entries
    }
}

/// Gradients aligned with a [`ParamSet`]'s entry order.
#[derive(Debug, Clone)]
pub struct Gradients {
    entries: Vec<(String, Tensor)>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Gradients {
            entries: params
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape().to_vec())))
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    /// Multiplies every gradient value by `factor`.
    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.entries.iter_mut() {
            for v in t.data_mut() {
                *v *= factor;
            }
        }
    }

    /// Accumulates `other` into `self`. Entry order must match.
    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::shape("grad_add", "gradient sets differ".to_string()));
        }
        for ((na, ta), (nb, tb)) in self.entries.iter_mut().zip(&other.entries) {
            if na != nb || ta.shape() != tb.shape() {
                return Err(Error::shape(
                    "grad_add",
                    format!("entry {} vs {}", na, nb),
                ));
            }
            for (a, b) in ta.data_mut().iter_mut().zip(tb.data()) {
                *a += b;
            }
        }
        Ok(())
    }

    pub(crate) fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    #[cfg(test)]
    pub(crate) fn from_entries_for_tests(entries: Vec<(String, Tensor)>) -> Self {
        Gradients { entries }
    }
}

/// Parameters leased onto a tape for one forward/backward pass.
pub struct Leases {
    vars: Vec<(String, Var)>,
}

impl Leases {
    fn get(&self, name: &str) -> &Var {
        &self
            .vars
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("parameter {} not leased", name))
            .1
    }

    /// Reads back gradients after a backward pass. Parameters the loss never
    /// touched report zero.
    pub fn gradients(&self) -> Result<Gradients> {
        let entries = self
            .vars
            .iter()
            .map(|(n, v)| {
                let g = v.grad().unwrap_or_else(|| Tensor::zeros(v.shape()));
                (n.clone(), g)
            })
            .collect();
        Ok(Gradients { entries })
    }
}

/// Attention posterior moments for one bag, in instance order.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionPosterior {
    pub mu: Vec<f64>,
    /// `None` for the point-mass posterior.
    pub sigma2: Option<Vec<f64>>,
}

impl AttentionPosterior {
    /// One attention-logit draw. The point-mass posterior returns `mu`
    /// regardless of the noise; the Gaussian uses `mu + sqrt(sigma2) * eps`.
    pub fn sample(&self, noise: &[f64]) -> Result<Vec<f64>> {
        if noise.len() != self.mu.len() {
            return Err(Error::shape(
                "sample_attention",
                format!("{} noise values for {} instances", noise.len(), self.mu.len()),
            ));
        }
        match &self.sigma2 {
            None => Ok(self.mu.clone()),
            Some(s2) => Ok(self
                .mu
                .iter()
                .zip(s2)
                .zip(noise)
                .map(|((m, s), e)| m + s.sqrt() * e)
                .collect()),
        }
    }
}

pub struct MilModel {
    pub variant: ModelVariant,
    pub params: ParamSet,
}

impl MilModel {
    /// Fresh model with seeded uniform(+-sqrt(1/fan_in)) weights; layer-norm
    /// gains start at one, layer-norm biases at zero.
    pub fn init(variant: ModelVariant, seed: u64) -> Result<Self> {
        variant.validate()?;
        let mut rng = derive_rng(seed, MODEL_SEED_SALT);
        let entries = param_specs(&variant)
            .into_iter()
            .map(|spec| {
                let n: usize = spec.shape.iter().product();
                let data = match spec.init {
                    InitRule::Uniform { fan_in } => {
                        let bound = (1.0 / fan_in as f64).sqrt();
                        (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
                    }
                    InitRule::One => vec![1.0; n],
                    InitRule::Zero => vec![0.0; n],
                };
                Ok((spec.name, Tensor::new(spec.shape, data)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MilModel {
            variant,
            params: ParamSet { entries },
        })
    }

    /// Rebuilds a model from a variant plus parameters, validating both.
    pub fn from_parts(variant: ModelVariant, params: ParamSet) -> Result<Self> {
        variant.validate()?;
        let specs = param_specs(&variant);
        if specs.len() != params.len() {
            return Err(Error::InvalidConfig(format!(
                "variant expects {} parameters, got {}",
                specs.len(),
                params.len()
            )));
        }
        for (spec, (name, tensor)) in specs.iter().zip(&params.entries) {
            if &spec.name != name || spec.shape != tensor.shape() {
                return Err(Error::InvalidConfig(format!(
                    "parameter {} with shape {:?} does not match expected {} {:?}",
                    name,
                    tensor.shape(),
                    spec.name,
                    spec.shape
                )));
            }
        }
        Ok(MilModel { variant, params })
    }

    /// Puts every parameter on `tape`; `trainable` controls whether the
    /// pass will collect gradients.
    pub fn lease(&self, tape: &Tape, trainable: bool) -> Leases {
        Leases {
            vars: self
                .params
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), tape.leaf(t.clone(), trainable)))
                .collect(),
        }
    }

    /// Instance embeddings `H` (`n x embed_dim`) for one bag.
    pub fn bag_transform_fwd(&self, tape: &Tape, leases: &Leases, bag: &Bag) -> Result<Var> {
        if bag.feature_dim() != self.variant.input_dim {
            return Err(Error::shape(
                "bag_transform",
                format!(
                    "bag {} has {} features, model expects {}",
                    bag.id,
                    bag.feature_dim(),
                    self.variant.input_dim
                ),
            ));
        }
        let x = tape.constant(bag.features.clone());
        let mut h = x
            .matmul(leases.get("embed.w"))?
            .add_row_bias(leases.get("embed.b"))?
            .tanh()?;
        if self.variant.bag_transform == BagTransform::TAbmil {
            h = self.transformer_encode(leases, h)?;
        }
        Ok(h)
    }

    fn transformer_encode(&self, leases: &Leases, mut y: Var) -> Result<Var> {
        let t = &self.variant.transformer;
        let head_qk = t.d_qk / t.heads;
        let head_v = t.d_v / t.heads;
        let scale = 1.0 / (head_qk as f64).sqrt();
        for l in 0..t.layers {
            let name = |suffix: &str| format!("enc{}.{}", l, suffix);
            let xn = y.layer_norm(
                leases.get(&name("ln1.g")),
                leases.get(&name("ln1.b")),
                EPS_LN,
            )?;
            let q = xn
                .matmul(leases.get(&name("wq")))?
                .add_row_bias(leases.get(&name("bq")))?;
            let k = xn
                .matmul(leases.get(&name("wk")))?
                .add_row_bias(leases.get(&name("bk")))?;
            let v = xn
                .matmul(leases.get(&name("wv")))?
                .add_row_bias(leases.get(&name("bv")))?;
            let mut heads = Vec::with_capacity(t.heads);
            for hix in 0..t.heads {
                let qh = q.slice_cols(hix * head_qk, head_qk)?;
                let kh = k.slice_cols(hix * head_qk, head_qk)?;
                let vh = v.slice_cols(hix * head_v, head_v)?;
                let scores = qh.matmul(&kh.transpose()?)?.mul_scalar(scale)?;
                heads.push(scores.softmax_rows()?.matmul(&vh)?);
            }
            let sa = concat_cols(&heads)?;
            let z = y.add(&sa)?;
            let zn = z.layer_norm(
                leases.get(&name("ln2.g")),
                leases.get(&name("ln2.b")),
                EPS_LN,
            )?;
            let m = zn
                .matmul(leases.get(&name("mlp1.w")))?
                .add_row_bias(leases.get(&name("mlp1.b")))?
                .tanh()?
                .matmul(leases.get(&name("mlp2.w")))?
                .add_row_bias(leases.get(&name("mlp2.b")))?;
            y = z.add(&m)?;
        }
        Ok(y)
    }

    /// Attention posterior moments: per-instance logit means, and variances
    /// (softplus of an independent head, floored) for the Gaussian posterior.
    pub fn attention_posterior_fwd(
        &self,
        leases: &Leases,
        h: &Var,
    ) -> Result<(Var, Option<Var>)> {
        let mu = h
            .matmul(leases.get("att_mu.w"))?
            .tanh()?
            .matvec(leases.get("att_mu.v"))?;
        let sigma2 = if self.variant.has_sigma_head() {
            Some(
                h.matmul(leases.get("att_sig.w"))?
                    .tanh()?
                    .matvec(leases.get("att_sig.v"))?
                    .softplus()?
                    .add_scalar(SIGMA_FLOOR)?,
            )
        } else {
            None
        };
        Ok((mu, sigma2))
    }

    /// Softmax-attention pooling followed by the affine classifier; returns
    /// the bag logit.
    pub fn classify_fwd(&self, leases: &Leases, h: &Var, f: &Var) -> Result<Var> {
        let attention = f.softmax()?;
        let pooled = attention.vecmat(h)?;
        pooled.dot(leases.get("cls.w"))?.add(leases.get("cls.b"))
    }

    /// Value-only forward: embeddings plus posterior moments, no gradients.
    pub fn posterior_moments(&self, bag: &Bag) -> Result<(Tensor, AttentionPosterior)> {
        let tape = Tape::new();
        let leases = self.lease(&tape, false);
        let h = self.bag_transform_fwd(&tape, &leases, bag)?;
        let (mu, sigma2) = self.attention_posterior_fwd(&leases, &h)?;
        Ok((
            h.value(),
            AttentionPosterior {
                mu: mu.value().into_data(),
                sigma2: sigma2.map(|s| s.value().into_data()),
            },
        ))
    }

    /// Bag probability for given attention logits, computed in plain
    /// arithmetic (used on sampling paths where no gradients are needed).
    pub fn pooled_probability(&self, h: &Tensor, f: &[f64]) -> Result<f64> {
        let n = h.rows()?;
        let d = h.cols()?;
        if f.len() != n {
            return Err(Error::shape(
                "pooled_probability",
                format!("{} logits for {} instances", f.len(), n),
            ));
        }
        let max = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut weights: Vec<f64> = f.iter().map(|&v| (v - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= total;
        }
        let w_cls = self.params.get("cls.w").expect("classifier weight").data();
        let b_cls = self.params.get("cls.b").expect("classifier bias").data()[0];
        let mut logit = b_cls;
        for dd in 0..d {
            let mut z = 0.0;
            for i in 0..n {
                z += weights[i] * h.data()[i * d + dd];
            }
            logit += z * w_cls[dd];
        }
        if !logit.is_finite() {
            return Err(Error::non_finite("pooled_probability"));
        }
        Ok(sigmoid(logit))
    }

    /// Monte-Carlo bag probability: the average of `samples` posterior draws
    /// (a single deterministic evaluation for the point-mass posterior).
    /// Deterministic in `(bag, samples, seed)`.
    pub fn predict_bag(&self, bag: &Bag, samples: usize, seed: u64) -> Result<f64> {
        if samples == 0 {
            return Err(Error::domain("predict_bag", "needs at least one sample"));
        }
        let (h, post) = self.posterior_moments(bag)?;
        match &post.sigma2 {
            None => self.pooled_probability(&h, &post.mu),
            Some(_) => {
                let mut rng = derive_rng(seed, 0x7072656469637431);
                let n = post.mu.len();
                let mut acc = 0.0;
                let mut noise = vec![0.0; n];
                for _ in 0..samples {
                    for e in noise.iter_mut() {
                        *e = standard_normal(&mut rng);
                    }
                    let f = post.sample(&noise)?;
                    acc += self.pooled_probability(&h, &f)?;
                }
                Ok(acc / samples as f64)
            }
        }
    }

    // ------------------------------------------------------------ storage

    /// Serializes variant and parameters. Bit-exact under round-trip.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.push(match self.variant.bag_transform {
            BagTransform::Abmil => 0,
            BagTransform::TAbmil => 1,
        });
        buf.push(match self.variant.posterior {
            PosteriorKind::DiracDelta => 0,
            PosteriorKind::DiagGaussian => 1,
        });
        buf.extend_from_slice(&[0u8, 0u8]);
        for dim in [
            self.variant.input_dim,
            self.variant.embed_dim,
            self.variant.attention_dim,
            self.variant.transformer.layers,
            self.variant.transformer.heads,
            self.variant.transformer.d_qk,
            self.variant.transformer.d_v,
        ] {
            buf.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        buf.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, tensor) in self.params.iter() {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
            for &e in tensor.shape() {
                buf.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for &v in tensor.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut c = Cursor {
            buf: &buf,
            pos: 0,
            path,
        };
        c.expect_magic(CHECKPOINT_MAGIC)?;
        let version = c.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "{}: unsupported checkpoint version {}",
                path.display(),
                version
            )));
        }
        let flags = c.take(4)?;
        let bag_transform = match flags[0] {
            0 => BagTransform::Abmil,
            1 => BagTransform::TAbmil,
            other => {
                return Err(Error::Data(format!(
                    "{}: unknown bag transform tag {}",
                    path.display(),
                    other
                )))
            }
        };
        let posterior = match flags[1] {
            0 => PosteriorKind::DiracDelta,
            1 => PosteriorKind::DiagGaussian,
            other => {
                return Err(Error::Data(format!(
                    "{}: unknown posterior tag {}",
                    path.display(),
                    other
                )))
            }
        };
        let mut dims = [0usize; 7];
        for d in dims.iter_mut() {
            *d = c.u32()? as usize;
        }
        let variant = ModelVariant {
            bag_transform,
            posterior,
            input_dim: dims[0],
            embed_dim: dims[1],
            attention_dim: dims[2],
            transformer: TransformerDims {
                layers: dims[3],
                heads: dims[4],
                d_qk: dims[5],
                d_v: dims[6],
            },
        };
        let count = c.u32()? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = c.u32()? as usize;
            let name = String::from_utf8(c.take(name_len)?.to_vec())
                .map_err(|_| Error::Data(format!("{}: parameter name not UTF-8", path.display())))?;
            let rank = c.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(c.u32()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = c.take(n * 8)?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            entries.push((name, Tensor::new(shape, data)?));
        }
        c.done()?;
        MilModel::from_parts(variant, ParamSet { entries })
    }
}
