//! The digit/style structured VAE and its semi-supervised objectives.
//!
//! Recognition factorises as `q(z, ℓ | x) = q(z | ℓ, x) · q(ℓ | x)`: a label
//! head classifies `x`, and the style head sees `x` concatenated with the
//! label vector. The decoder maps `[z, label]` to Bernoulli pixel logits.
//! Every network is a single-hidden-layer ReLU MLP.
//!
//! Objectives are minimised, so each [`LossBreakdown`] component is a
//! negated ELBO contribution in nats, averaged over the rows it covers.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::distributions::{
    bernoulli_log_prob, categorical_entropy, categorical_kl_uniform, gaussian_kl_standard,
    gaussian_sample, CategoricalParams, GaussianParams,
};
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// How the unlabelled term treats the discrete label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorMode {
    /// Exact enumeration over the `K` labels, weighted by `q(ℓ | x)`.
    Marginalize,
    /// The probability vector `q(ℓ | x)` is fed to the networks directly.
    Plugin,
}

impl EstimatorMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorMode::Marginalize => "marginalize",
            EstimatorMode::Plugin => "plugin",
        }
    }
}

impl core::str::FromStr for EstimatorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "marginalize" => Ok(EstimatorMode::Marginalize),
            "plugin" => Ok(EstimatorMode::Plugin),
            other => Err(Error::contract(format!(
                "unknown estimator `{other}` (expected marginalize or plugin)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub num_classes: usize,
    pub style_dim: usize,
    pub hidden_width: usize,
    pub estimator: EstimatorMode,
    /// Weight `α` of the classifier term on labelled rows.
    pub classifier_weight: f64,
}

impl ModelSpec {
    /// MNIST-sized model: 784 pixels, 10 digits, 512 hidden units.
    pub fn mnist(style_dim: usize, estimator: EstimatorMode, classifier_weight: f64) -> Self {
        ModelSpec {
            input_dim: 784,
            num_classes: 10,
            style_dim,
            hidden_width: 512,
            estimator,
            classifier_weight,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("input_dim", self.input_dim),
            ("num_classes", self.num_classes),
            ("style_dim", self.style_dim),
            ("hidden_width", self.hidden_width),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::contract(format!("{name} must be at least 1")));
            }
        }
        if !(self.classifier_weight >= 0.0) || !self.classifier_weight.is_finite() {
            return Err(Error::contract(format!(
                "classifier weight must be finite and non-negative, got {}",
                self.classifier_weight
            )));
        }
        Ok(())
    }

    /// `[rows, cols]` of every parameter, in [`PARAM_NAMES`] order.
    pub fn param_shapes(&self) -> [[usize; 2]; 12] {
        let (p, k, d, h) = (
            self.input_dim,
            self.num_classes,
            self.style_dim,
            self.hidden_width,
        );
        [
            [p, h],
            [1, h],
            [h, k],
            [1, k],
            [p + k, h],
            [1, h],
            [h, 2 * d],
            [1, 2 * d],
            [d + k, h],
            [1, h],
            [h, p],
            [1, p],
        ]
    }
}

pub const PARAM_NAMES: [&str; 12] = [
    "label.w1", "label.b1", "label.w2", "label.b2", "style.w1", "style.b1", "style.w2",
    "style.b2", "decoder.w1", "decoder.b1", "decoder.w2", "decoder.b2",
];

const LABEL: usize = 0;
const STYLE: usize = 4;
const DECODER: usize = 8;

/// Per-batch objective components, all batch means in nats.
///
/// `total = recon + kl_gauss + cat_term + classifier`, where `classifier`
/// already carries the weight `α`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    /// Negative Bernoulli log-likelihood of the pixels.
    pub recon: f64,
    /// KL of the style posterior to the standard normal prior.
    pub kl_gauss: f64,
    /// Label term: `log K` for observed labels, `KL(q(ℓ|x) ‖ uniform)` for
    /// unlabelled rows.
    pub cat_term: f64,
    /// `α ·` mean cross-entropy of the label head on labelled rows.
    pub classifier: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn combined(&self) -> f64 {
        self.recon + self.kl_gauss + self.cat_term + self.classifier
    }

    pub fn is_finite(&self) -> bool {
        [self.recon, self.kl_gauss, self.cat_term, self.classifier, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Objective components as tape nodes. Before reduction each term is a
/// per-row vector; after [`Terms::mean`] each is a scalar.
#[derive(Debug, Clone, Copy)]
pub struct Terms {
    pub recon: Var,
    pub kl_gauss: Var,
    pub cat_term: Var,
    pub total: Var,
}

impl Terms {
    pub fn mean(&self, tape: &mut Tape) -> Terms {
        Terms {
            recon: tape.mean(self.recon),
            kl_gauss: tape.mean(self.kl_gauss),
            cat_term: tape.mean(self.cat_term),
            total: tape.mean(self.total),
        }
    }

    /// Reads reduced terms into a breakdown with no classifier part.
    pub fn read(&self, tape: &Tape) -> LossBreakdown {
        LossBreakdown {
            recon: tape.value(self.recon).item(),
            kl_gauss: tape.value(self.kl_gauss).item(),
            cat_term: tape.value(self.cat_term).item(),
            classifier: 0.0,
            total: tape.value(self.total).item(),
        }
    }
}

/// Standard-normal noise for the style sample: one `n×D` block per class in
/// marginal mode, a single block otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleNoise {
    pub per_class: Vec<Tensor>,
}

impl StyleNoise {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, rows: usize, spec: &ModelSpec) -> Self {
        let blocks = match spec.estimator {
            EstimatorMode::Marginalize => spec.num_classes,
            EstimatorMode::Plugin => 1,
        };
        let per_class = (0..blocks)
            .map(|_| {
                let data = (0..rows * spec.style_dim)
                    .map(|_| StandardNormal.sample(rng))
                    .collect();
                Tensor::new([rows, spec.style_dim], data).expect("noise shape")
            })
            .collect();
        StyleNoise { per_class }
    }

    pub fn zeros(rows: usize, spec: &ModelSpec) -> Self {
        StyleNoise {
            per_class: (0..spec.num_classes)
                .map(|_| Tensor::zeros([rows, spec.style_dim]))
                .collect(),
        }
    }

    /// Noise block for class `k`, falling back to the first block when only
    /// one was drawn.
    pub fn block(&self, k: usize) -> &Tensor {
        self.per_class.get(k).unwrap_or(&self.per_class[0])
    }

    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        Ok(StyleNoise {
            per_class: self
                .per_class
                .iter()
                .map(|t| t.select_rows(idx))
                .collect::<Result<_>>()?,
        })
    }
}

/// A minibatch for the joint objective. Rows with `labels[i] == Some(y)` are
/// supervised.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Tensor,
    pub labels: Vec<Option<usize>>,
}

impl Batch {
    pub fn labeled_mask(&self) -> Vec<bool> {
        self.labels.iter().map(Option::is_some).collect()
    }

    pub fn num_labeled(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredVAE {
    spec: ModelSpec,
    params: Vec<Tensor>,
}

impl StructuredVAE {
    /// Hidden layers draw from `U(±sqrt(6 / (fan_in + fan_out)))`; output
    /// layers and all biases start at zero.
    pub fn new<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let params = spec
            .param_shapes()
            .iter()
            .enumerate()
            .map(|(i, &[r, c])| {
                let is_hidden_weight = matches!(i, 0 | 4 | 8);
                if is_hidden_weight {
                    let bound = libm::sqrt(6.0 / (r + c) as f64);
                    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                    let data = (0..r * c).map(|_| dist.sample(rng)).collect();
                    Tensor::new([r, c], data).expect("param shape")
                } else if r == 1 {
                    Tensor::zeros([c])
                } else {
                    Tensor::zeros([r, c])
                }
            })
            .collect();
        Ok(StructuredVAE { spec, params })
    }

    /// Rebuilds a model from stored parameters, checking every shape.
    pub fn from_params(spec: ModelSpec, params: Vec<Tensor>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.param_shapes();
        if params.len() != shapes.len() {
            return Err(Error::contract(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for (i, (p, &[r, c])) in params.iter().zip(&shapes).enumerate() {
            let ok = if r == 1 {
                p.dims() == [c]
            } else {
                p.dims() == [r, c]
            };
            if !ok {
                return Err(Error::contract(format!(
                    "parameter `{}` has shape {}, expected [{r}x{c}]",
                    PARAM_NAMES[i],
                    p.shape()
                )));
            }
            if !p.is_finite() {
                return Err(Error::contract(format!(
                    "parameter `{}` is not finite",
                    PARAM_NAMES[i]
                )));
            }
        }
        Ok(StructuredVAE { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Places the parameters on `tape`, tracked when `track` is set.
    pub fn bind(&self, tape: &mut Tape, track: bool) -> Bound {
        let vars = core::array::from_fn(|i| {
            let p = self.params[i].clone();
            if track {
                tape.leaf(p)
            } else {
                tape.constant(p)
            }
        });
        Bound {
            spec: self.spec,
            vars,
        }
    }

    /// Label posterior log-probabilities for plain inputs, without tracking.
    pub fn label_log_probs(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let q = bound.encode_label(&mut tape, xv)?;
        Ok(tape.value(q.log_probs).clone())
    }

    /// `argmax_k q(ℓ = k | x)` per row, evaluated in chunks to bound memory.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        const CHUNK: usize = 1000;
        let n = x.rows();
        let mut out = Vec::with_capacity(n);
        let mut start = 0;
        while start < n {
            let end = (start + CHUNK).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let lp = self.label_log_probs(&x.select_rows(&idx)?)?;
            out.extend(lp.argmax_rows());
            start = end;
        }
        Ok(out)
    }

    /// Posterior mean of the style given `x` and a label vector.
    pub fn style_mean(&self, x: &Tensor, label_vec: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let lv = tape.constant(label_vec.clone());
        let g = bound.encode_style(&mut tape, xv, lv)?;
        Ok(tape.value(g.mu).clone())
    }

    /// Pixel means `σ(decode(z, label_vec))`.
    pub fn decode_means(&self, z: &Tensor, label_vec: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let zv = tape.constant(z.clone());
        let lv = tape.constant(label_vec.clone());
        let logits = bound.decode(&mut tape, zv, lv)?;
        let means = tape.sigmoid(logits);
        Ok(tape.value(means).clone())
    }

    /// Joint semi-supervised objective value.
    pub fn total_objective(&self, batch: &Batch, noise: &StyleNoise) -> Result<LossBreakdown> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let (breakdown, _) = bound.total_objective(&mut tape, batch, noise)?;
        Ok(breakdown)
    }

    /// Joint objective value plus its gradient for every parameter, in
    /// [`PARAM_NAMES`] order.
    pub fn objective_with_grads(
        &self,
        batch: &Batch,
        noise: &StyleNoise,
    ) -> Result<(LossBreakdown, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, true);
        let (breakdown, loss) = bound.total_objective(&mut tape, batch, noise)?;
        let mut grads = tape.backward(loss)?;
        let g = bound
            .vars
            .iter()
            .map(|&v| grads.take(v).expect("tracked parameter"))
            .collect();
        Ok((breakdown, g))
    }
}

/// Model parameters placed on a tape; all forward computations go through
/// this view.
#[derive(Debug, Clone, Copy)]
pub struct Bound {
    spec: ModelSpec,
    vars: [Var; 12],
}

fn check_simplex(tape: &Tape, label_vec: Var, rows: usize, k: usize, op: &'static str) -> Result<()> {
    let t = tape.value(label_vec);
    if t.dims() != [rows, k] {
        return Err(Error::Dimension {
            op,
            lhs: crate::Shape::new([rows, k]),
            rhs: t.shape().clone(),
        });
    }
    for i in 0..rows {
        let row = t.row(i);
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::domain(
                op,
                format!("label row {i} is not a probability vector (sum {sum})"),
            ));
        }
    }
    Ok(())
}

impl Bound {
    /// View over parameters already placed on a tape, in [`PARAM_NAMES`]
    /// order.
    pub fn from_vars(tape: &Tape, spec: ModelSpec, vars: [Var; 12]) -> Result<Self> {
        for (i, (&v, &[r, c])) in vars.iter().zip(&spec.param_shapes()).enumerate() {
            let dims = tape.shape(v).dims();
            let ok = if r == 1 { dims == [c] } else { dims == [r, c] };
            if !ok {
                return Err(Error::contract(format!(
                    "parameter `{}` has shape {}, expected [{r}x{c}]",
                    PARAM_NAMES[i],
                    tape.shape(v)
                )));
            }
        }
        Ok(Bound { spec, vars })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn vars(&self) -> &[Var; 12] {
        &self.vars
    }

    fn mlp(&self, tape: &mut Tape, first: usize, input: Var) -> Result<Var> {
        let v = &self.vars[first..first + 4];
        let h = tape.matmul(input, v[0])?;
        let h = tape.add_bias(h, v[1])?;
        let h = tape.relu(h);
        let o = tape.matmul(h, v[2])?;
        tape.add_bias(o, v[3])
    }

    fn check_input(&self, tape: &Tape, x: Var, op: &'static str) -> Result<usize> {
        match tape.shape(x).matrix() {
            Some((n, p)) if p == self.spec.input_dim => Ok(n),
            _ => Err(Error::Dimension {
                op,
                lhs: tape.shape(x).clone(),
                rhs: crate::Shape::new([0, self.spec.input_dim]),
            }),
        }
    }

    /// `q(ℓ | x)`.
    pub fn encode_label(&self, tape: &mut Tape, x: Var) -> Result<CategoricalParams> {
        self.check_input(tape, x, "encode_label")?;
        let logits = self.mlp(tape, LABEL, x)?;
        CategoricalParams::from_logits(tape, logits)
    }

    /// `q(z | ℓ, x)` from `[x, label_vec]`; `label_vec` rows may be one-hot or
    /// any probability vector.
    pub fn encode_style(&self, tape: &mut Tape, x: Var, label_vec: Var) -> Result<GaussianParams> {
        let n = self.check_input(tape, x, "encode_style")?;
        check_simplex(tape, label_vec, n, self.spec.num_classes, "encode_style")?;
        let input = tape.concat_cols(x, label_vec)?;
        let out = self.mlp(tape, STYLE, input)?;
        let d = self.spec.style_dim;
        let mu = tape.slice_cols(out, 0, d)?;
        let log_sigma = tape.slice_cols(out, d, d)?;
        GaussianParams::new(tape, mu, log_sigma)
    }

    /// Pixel logits of `p(x | z, ℓ)` from `[z, label_vec]`.
    pub fn decode(&self, tape: &mut Tape, z: Var, label_vec: Var) -> Result<Var> {
        let n = match tape.shape(z).matrix() {
            Some((n, d)) if d == self.spec.style_dim => n,
            _ => {
                return Err(Error::Dimension {
                    op: "decode",
                    lhs: tape.shape(z).clone(),
                    rhs: crate::Shape::new([0, self.spec.style_dim]),
                })
            }
        };
        check_simplex(tape, label_vec, n, self.spec.num_classes, "decode")?;
        let input = tape.concat_cols(z, label_vec)?;
        self.mlp(tape, DECODER, input)
    }

    /// Per-row reconstruction and style KL for a given label vector.
    fn conditional_terms(
        &self,
        tape: &mut Tape,
        x: Var,
        label_vec: Var,
        noise: &Tensor,
    ) -> Result<(Var, Var)> {
        let style = self.encode_style(tape, x, label_vec)?;
        let eps = tape.constant(noise.clone());
        let z = gaussian_sample(tape, style, eps)?;
        let logits = self.decode(tape, z, label_vec)?;
        let ll = bernoulli_log_prob(tape, x, logits)?;
        let recon = tape.neg(ll);
        let kl = gaussian_kl_standard(tape, style)?;
        Ok((recon, kl))
    }

    fn log_k(&self, tape: &mut Tape, rows: usize) -> Var {
        let v = libm::log(self.spec.num_classes as f64);
        tape.constant(Tensor::full([rows], v))
    }

    /// Labelled rows: `−[log p(x | z, y) + log(1/K) − KL(q(z | x, y) ‖ p(z))]`
    /// per row, one style sample from `noise`.
    pub fn elbo_supervised(
        &self,
        tape: &mut Tape,
        x: Var,
        labels: &[usize],
        noise: &Tensor,
    ) -> Result<Terms> {
        let n = self.check_input(tape, x, "elbo_supervised")?;
        if labels.len() != n {
            return Err(Error::contract(format!(
                "{} labels for {n} rows",
                labels.len()
            )));
        }
        let onehot = tape.constant(Tensor::one_hot(labels, self.spec.num_classes)?);
        let (recon, kl_gauss) = self.conditional_terms(tape, x, onehot, noise)?;
        let cat_term = self.log_k(tape, n);
        let partial = tape.add(recon, kl_gauss)?;
        let total = tape.add(partial, cat_term)?;
        Ok(Terms {
            recon,
            kl_gauss,
            cat_term,
            total,
        })
    }

    /// Unlabelled rows, label summed out exactly:
    /// `Σ_k q(k | x) · supervised_k − H(q(ℓ | x))`, one style sample per class.
    pub fn elbo_unsupervised_marginal(
        &self,
        tape: &mut Tape,
        x: Var,
        noise: &StyleNoise,
    ) -> Result<Terms> {
        let n = self.check_input(tape, x, "elbo_unsupervised_marginal")?;
        let k = self.spec.num_classes;
        let q = self.encode_label(tape, x)?;
        let probs = q.probs(tape)?;
        let log_k = self.log_k(tape, n);

        let mut acc: Option<Terms> = None;
        for class in 0..k {
            let labels = alloc::vec![class; n];
            let sup = self.elbo_supervised(tape, x, &labels, noise.block(class))?;
            let w = tape.column(probs, class)?;
            let weighted = Terms {
                recon: tape.mul(w, sup.recon)?,
                kl_gauss: tape.mul(w, sup.kl_gauss)?,
                cat_term: tape.mul(w, log_k)?,
                total: tape.mul(w, sup.total)?,
            };
            acc = Some(match acc {
                None => weighted,
                Some(a) => Terms {
                    recon: tape.add(a.recon, weighted.recon)?,
                    kl_gauss: tape.add(a.kl_gauss, weighted.kl_gauss)?,
                    cat_term: tape.add(a.cat_term, weighted.cat_term)?,
                    total: tape.add(a.total, weighted.total)?,
                },
            });
        }
        let acc = acc.expect("at least one class");
        let entropy = categorical_entropy(tape, q)?;
        Ok(Terms {
            recon: acc.recon,
            kl_gauss: acc.kl_gauss,
            cat_term: tape.sub(acc.cat_term, entropy)?,
            total: tape.sub(acc.total, entropy)?,
        })
    }

    /// Unlabelled rows with the label probability vector `π = q(ℓ | x)` fed
    /// to the style head and decoder in place of a one-hot label:
    /// `−[log p(x | z, π) − KL(q(z | x, π) ‖ p(z)) − KL(π ‖ uniform)]`.
    pub fn elbo_unsupervised_plugin(&self, tape: &mut Tape, x: Var, noise: &Tensor) -> Result<Terms> {
        self.check_input(tape, x, "elbo_unsupervised_plugin")?;
        let q = self.encode_label(tape, x)?;
        let pi = q.probs(tape)?;
        let (recon, kl_gauss) = self.conditional_terms(tape, x, pi, noise)?;
        let cat_term = categorical_kl_uniform(tape, q)?;
        let partial = tape.add(recon, kl_gauss)?;
        let total = tape.add(partial, cat_term)?;
        Ok(Terms {
            recon,
            kl_gauss,
            cat_term,
            total,
        })
    }

    /// Mode-selected unlabelled term.
    pub fn elbo_unsupervised(&self, tape: &mut Tape, x: Var, noise: &StyleNoise) -> Result<Terms> {
        match self.spec.estimator {
            EstimatorMode::Marginalize => self.elbo_unsupervised_marginal(tape, x, noise),
            EstimatorMode::Plugin => self.elbo_unsupervised_plugin(tape, x, noise.block(0)),
        }
    }

    /// Batch mean of `−log q(ℓ = y | x)`.
    pub fn classifier_loss(&self, tape: &mut Tape, x: Var, labels: &[usize]) -> Result<Var> {
        let n = self.check_input(tape, x, "classifier_loss")?;
        if labels.len() != n {
            return Err(Error::contract(format!(
                "{} labels for {n} rows",
                labels.len()
            )));
        }
        let q = self.encode_label(tape, x)?;
        let onehot = tape.constant(Tensor::one_hot(labels, self.spec.num_classes)?);
        let picked = tape.mul(q.log_probs, onehot)?;
        let ll = tape.sum_rows(picked)?;
        let mean = tape.mean(ll);
        Ok(tape.neg(mean))
    }

    /// Mean supervised term over labelled rows, plus mean unlabelled term
    /// over the rest, plus `α` times the classifier loss on labelled rows.
    /// An empty partition contributes nothing. Returns the breakdown and the
    /// scalar loss node.
    pub fn total_objective(
        &self,
        tape: &mut Tape,
        batch: &Batch,
        noise: &StyleNoise,
    ) -> Result<(LossBreakdown, Var)> {
        let mut labeled = Vec::new();
        let mut labels = Vec::new();
        let mut unlabeled = Vec::new();
        for (i, l) in batch.labels.iter().enumerate() {
            match l {
                Some(y) => {
                    labeled.push(i);
                    labels.push(*y);
                }
                None => unlabeled.push(i),
            }
        }
        if batch.labels.len() != batch.x.rows() {
            return Err(Error::contract("batch labels and rows differ in length"));
        }

        let mut breakdown = LossBreakdown::default();
        let mut parts: Vec<Var> = Vec::new();

        if !labeled.is_empty() {
            let x = tape.constant(batch.x.select_rows(&labeled)?);
            let noise_l = noise.block(0).select_rows(&labeled)?;
            let sup = self.elbo_supervised(tape, x, &labels, &noise_l)?.mean(tape);
            let b = sup.read(tape);
            parts.push(sup.total);
            let ce = self.classifier_loss(tape, x, &labels)?;
            let weighted = tape.scale(ce, self.spec.classifier_weight);
            parts.push(weighted);
            breakdown.recon += b.recon;
            breakdown.kl_gauss += b.kl_gauss;
            breakdown.cat_term += b.cat_term;
            breakdown.classifier = tape.value(weighted).item();
        }
        if !unlabeled.is_empty() {
            let x = tape.constant(batch.x.select_rows(&unlabeled)?);
            let noise_u = noise.select_rows(&unlabeled)?;
            let unsup = self.elbo_unsupervised(tape, x, &noise_u)?.mean(tape);
            let b = unsup.read(tape);
            parts.push(unsup.total);
            breakdown.recon += b.recon;
            breakdown.kl_gauss += b.kl_gauss;
            breakdown.cat_term += b.cat_term;
        }

        let mut loss = match parts.first() {
            Some(&v) => v,
            None => return Err(Error::contract("empty batch")),
        };
        for &p in &parts[1..] {
            loss = tape.add(loss, p)?;
        }
        breakdown.total = tape.value(loss).item();
        Ok((breakdown, loss))
    }
}
