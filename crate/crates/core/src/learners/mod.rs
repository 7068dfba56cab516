//! Few-shot likelihoods over a shared MLP encoder.
//!
//! * `proto_euclidean` / `proto_cosine`: softmax over negative distances from
//!   query embeddings to class prototypes (mean support embeddings). The
//!   Euclidean variant uses squared distances; the cosine variant uses cosine
//!   similarity times a learnable scale.
//! * `maml` / `anil`: a persistent n-way linear head. The inner loop takes
//!   `adaptation_steps` full-batch gradient steps of size `adaptation_rate`
//!   on the summed support NLL (MAML adapts everything, ANIL only the head),
//!   and the query likelihood is evaluated under the adapted parameters.
//!   During training the inner gradients stay on the graph, so the outer
//!   gradient is exact second order.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, Tensor, Var};
use crate::datagen::EpisodeData;
use crate::rng::Stream;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("class {class} has {count} support samples, expected {shot}")]
    WrongShot {
        class: usize,
        count: usize,
        shot: usize,
    },
    #[error("zero-norm embedding under the cosine metric")]
    ZeroNorm,
    #[error("operation needs a {expected} learner, got {got}")]
    WrongAlgorithm { expected: &'static str, got: Algorithm },
    #[error("head has {head} outputs but the episode is {way}-way")]
    HeadWidth { head: usize, way: usize },
    #[error("encoder expects {expected} features, episode has {got}")]
    InputDim { expected: usize, got: usize },
    #[error("inner-loop loss is not finite at adaptation step {step}")]
    NonFiniteInner { step: usize },
    #[error("no log-likelihoods to average")]
    Empty,
    #[error("invalid learner configuration: {0}")]
    Config(String),
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: std::path::PathBuf, msg: String },
}

type Result<T> = std::result::Result<T, LearnerError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    ProtoEuclidean,
    ProtoCosine,
    Maml,
    Anil,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::ProtoEuclidean => "proto_euclidean",
            Algorithm::ProtoCosine => "proto_cosine",
            Algorithm::Maml => "maml",
            Algorithm::Anil => "anil",
        }
    }

    pub fn has_head(self) -> bool {
        matches!(self, Algorithm::Maml | Algorithm::Anil)
    }

    pub fn is_proto(self) -> bool {
        !self.has_head()
    }

    /// (adaptation rate, steps) used by the reference hyper-parameters.
    pub fn default_adaptation(self) -> (f64, usize) {
        match self {
            Algorithm::Anil => (0.1, 5),
            _ => (0.01, 5),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "proto_euclidean" => Ok(Algorithm::ProtoEuclidean),
            "proto_cosine" => Ok(Algorithm::ProtoCosine),
            "maml" => Ok(Algorithm::Maml),
            "anil" => Ok(Algorithm::Anil),
            other => Err(format!("unknown algorithm `{other}`")),
        }
    }
}

/// Weight is stored `fan_in × fan_out`, bias `1 × fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }

    fn he_normal(fan_in: usize, fan_out: usize, rng: &mut Stream) -> Self {
        let std = (2.0 / fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out).map(|_| rng.normal(0.0, std)).collect();
        Self {
            weight: Tensor::matrix(fan_in, fan_out, w).expect("positive dims"),
            bias: Tensor::zeros(&[1, fan_out]),
        }
    }

    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[fan_in, fan_out]),
            bias: Tensor::zeros(&[1, fan_out]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    pub algorithm: Algorithm,
    pub input_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_embed")]
    pub embed_dim: usize,
    /// Head width for maml/anil; ignored by the proto variants.
    #[serde(default = "default_way")]
    pub way: usize,
    #[serde(default = "default_cosine_scale")]
    pub cosine_scale: f64,
    /// Defaults per algorithm when absent.
    #[serde(default)]
    pub adaptation_rate: Option<f64>,
    #[serde(default)]
    pub adaptation_steps: Option<usize>,
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn default_embed() -> usize {
    64
}
fn default_way() -> usize {
    5
}
fn default_cosine_scale() -> f64 {
    10.0
}

impl LearnerConfig {
    pub fn new(algorithm: Algorithm, input_dim: usize) -> Self {
        Self {
            algorithm,
            input_dim,
            hidden: default_hidden(),
            embed_dim: default_embed(),
            way: default_way(),
            cosine_scale: default_cosine_scale(),
            adaptation_rate: None,
            adaptation_steps: None,
        }
    }
}

/// Model parameters θ plus the algorithm's fixed hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerParams {
    pub algorithm: Algorithm,
    pub encoder: Vec<Layer>,
    pub head: Option<Layer>,
    pub cosine_scale: Option<f64>,
    pub adaptation_rate: f64,
    pub adaptation_steps: usize,
}

impl LearnerParams {
    /// He-normal encoder weights, zero biases, zero head.
    pub fn init(config: &LearnerConfig, rng: &mut Stream) -> Result<Self> {
        if config.input_dim == 0 || config.embed_dim == 0 || config.hidden.contains(&0) {
            return Err(LearnerError::Config("layer widths must be positive".into()));
        }
        let (rate, steps) = config.algorithm.default_adaptation();
        let rate = config.adaptation_rate.unwrap_or(rate);
        let steps = config.adaptation_steps.unwrap_or(steps);
        if !(rate > 0.0 && rate.is_finite()) || steps == 0 {
            return Err(LearnerError::Config(
                "adaptation_rate must be > 0 and adaptation_steps >= 1".into(),
            ));
        }
        if config.algorithm.has_head() && config.way == 0 {
            return Err(LearnerError::Config("head width must be positive".into()));
        }
        let mut widths = vec![config.input_dim];
        widths.extend(&config.hidden);
        widths.push(config.embed_dim);
        let encoder = widths
            .windows(2)
            .map(|w| Layer::he_normal(w[0], w[1], rng))
            .collect();
        Ok(Self {
            algorithm: config.algorithm,
            encoder,
            head: config
                .algorithm
                .has_head()
                .then(|| Layer::zeros(config.embed_dim, config.way)),
            cosine_scale: (config.algorithm == Algorithm::ProtoCosine).then_some(config.cosine_scale),
            adaptation_rate: rate,
            adaptation_steps: steps,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0].fan_in()
    }

    pub fn embed_dim(&self) -> usize {
        self.encoder.last().expect("non-empty encoder").fan_out()
    }

    /// Parameter tensors in canonical order: each encoder layer's weight then
    /// bias, then the head's weight and bias, then the cosine scale.
    pub fn tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.encoder.iter().enumerate() {
            out.push((format!("encoder.{i}.weight"), layer.weight.clone()));
            out.push((format!("encoder.{i}.bias"), layer.bias.clone()));
        }
        if let Some(h) = &self.head {
            out.push(("head.weight".into(), h.weight.clone()));
            out.push(("head.bias".into(), h.bias.clone()));
        }
        if let Some(s) = self.cosine_scale {
            out.push(("cosine_scale".into(), Tensor::scalar(s)));
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors()
            .into_iter()
            .flat_map(|(_, t)| t.into_vec())
            .collect()
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(LearnerError::Config(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut offset = 0;
        let mut take = |t: &Tensor| {
            let n = t.numel();
            let out = Tensor::new(t.shape().to_vec(), flat[offset..offset + n].to_vec())
                .expect("same shape");
            offset += n;
            out
        };
        let mut next = self.clone();
        for layer in &mut next.encoder {
            layer.weight = take(&layer.weight);
            layer.bias = take(&layer.bias);
        }
        if let Some(h) = &mut next.head {
            h.weight = take(&h.weight);
            h.bias = take(&h.bias);
        }
        if let Some(s) = &mut next.cosine_scale {
            *s = take(&Tensor::scalar(*s)).item();
        }
        Ok(next)
    }
}

#[derive(Debug, Clone)]
struct LayerVars {
    weight: Var,
    bias: Var,
}

/// Graph handles for one set of parameters.
#[derive(Debug, Clone)]
struct ParamVars {
    encoder: Vec<LayerVars>,
    head: Option<LayerVars>,
    scale: Option<Var>,
}

impl ParamVars {
    fn bind(g: &mut Graph, params: &LearnerParams, trainable: bool) -> Self {
        let mut bind = |t: &Tensor| {
            if trainable {
                g.leaf(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        let encoder = params
            .encoder
            .iter()
            .map(|l| LayerVars {
                weight: bind(&l.weight),
                bias: bind(&l.bias),
            })
            .collect();
        let head = params.head.as_ref().map(|l| LayerVars {
            weight: bind(&l.weight),
            bias: bind(&l.bias),
        });
        let scale = params.cosine_scale.map(|s| bind(&Tensor::scalar(s)));
        Self {
            encoder,
            head,
            scale,
        }
    }

    /// Same order as [`LearnerParams::tensors`].
    fn all(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self
            .encoder
            .iter()
            .flat_map(|l| [l.weight, l.bias])
            .collect();
        if let Some(h) = &self.head {
            v.extend([h.weight, h.bias]);
        }
        v.extend(self.scale);
        v
    }

    fn head_vars(&self) -> Vec<Var> {
        self.head.iter().flat_map(|h| [h.weight, h.bias]).collect()
    }
}

fn linear(g: &mut Graph, x: Var, layer: &LayerVars) -> Result<Var> {
    let rows = g.value(x).shape()[0];
    let xw = g.matmul(x, layer.weight)?;
    let ones = g.constant(Tensor::full(&[rows, 1], 1.0));
    let b = g.matmul(ones, layer.bias)?;
    Ok(g.add(xw, b)?)
}

fn encode(g: &mut Graph, x: Var, layers: &[LayerVars]) -> Result<Var> {
    let mut h = x;
    for (i, layer) in layers.iter().enumerate() {
        h = linear(g, h, layer)?;
        if i + 1 < layers.len() {
            h = g.relu(h);
        }
    }
    Ok(h)
}

/// `way × (way·shot)` averaging matrix mapping support rows to prototypes.
fn averaging_matrix(labels: &[usize], way: usize, shot: usize) -> Result<Tensor> {
    let mut counts = vec![0usize; way];
    for &l in labels {
        if l >= way {
            return Err(LearnerError::WrongShot {
                class: l,
                count: 1,
                shot: 0,
            });
        }
        counts[l] += 1;
    }
    if let Some((class, &count)) = counts.iter().enumerate().find(|(_, &c)| c != shot) {
        return Err(LearnerError::WrongShot { class, count, shot });
    }
    let mut data = vec![0.0; way * labels.len()];
    for (j, &l) in labels.iter().enumerate() {
        data[l * labels.len() + j] = 1.0 / shot as f64;
    }
    Ok(Tensor::matrix(way, labels.len(), data).expect("positive dims"))
}

/// Class prototypes: row `c` is the mean of the embeddings labeled `c`.
pub fn compute_prototypes(
    embeddings: &Tensor,
    labels: &[usize],
    way: usize,
    shot: usize,
) -> Result<Tensor> {
    let avg = averaging_matrix(labels, way, shot)?;
    let mut g = Graph::new();
    let a = g.constant(avg);
    let e = g.constant(embeddings.clone());
    let p = g.matmul(a, e)?;
    Ok(g.value(p).clone())
}

fn normalize_rows(g: &mut Graph, x: Var) -> Result<Var> {
    let (m, e) = (g.value(x).shape()[0], g.value(x).shape()[1]);
    let sq = g.mul(x, x)?;
    let ones_e = g.constant(Tensor::full(&[e, 1], 1.0));
    let sums = g.matmul(sq, ones_e)?;
    if g.value(sums).data().iter().any(|&s| s <= 0.0) {
        return Err(LearnerError::ZeroNorm);
    }
    let norms = g.sqrt(sums)?;
    let ones_row = g.constant(Tensor::full(&[1, e], 1.0));
    let spread = g.matmul(norms, ones_row)?;
    debug_assert_eq!(g.value(spread).shape(), &[m, e]);
    Ok(g.div(x, spread)?)
}

fn check_input(params: &LearnerParams, data: &EpisodeData) -> Result<()> {
    let got = data.support.shape()[1];
    if got != params.input_dim() {
        return Err(LearnerError::InputDim {
            expected: params.input_dim(),
            got,
        });
    }
    Ok(())
}

fn proto_logits(
    g: &mut Graph,
    params: &LearnerParams,
    vars: &ParamVars,
    data: &EpisodeData,
) -> Result<Var> {
    let avg = averaging_matrix(&data.support_labels, data.way, data.shot)?;
    let xs = g.constant(data.support.clone());
    let xq = g.constant(data.query.clone());
    let es = encode(g, xs, &vars.encoder)?;
    let eq = encode(g, xq, &vars.encoder)?;
    let avg = g.constant(avg);
    let protos = g.matmul(avg, es)?;
    match params.algorithm {
        Algorithm::ProtoEuclidean => {
            let d = g.sq_dist(eq, protos)?;
            Ok(g.scale(d, -1.0))
        }
        Algorithm::ProtoCosine => {
            let qn = normalize_rows(g, eq)?;
            let pn = normalize_rows(g, protos)?;
            let pt = g.transpose(pn)?;
            let cos = g.matmul(qn, pt)?;
            let s = vars.scale.expect("cosine learner carries a scale");
            Ok(g.scalar_mul(cos, s)?)
        }
        other => Err(LearnerError::WrongAlgorithm {
            expected: "prototype",
            got: other,
        }),
    }
}

fn adapted_logits(
    g: &mut Graph,
    params: &LearnerParams,
    vars: &ParamVars,
    data: &EpisodeData,
    second_order: bool,
) -> Result<Var> {
    let head = params.head.as_ref().ok_or(LearnerError::WrongAlgorithm {
        expected: "maml or anil",
        got: params.algorithm,
    })?;
    if head.fan_out() != data.way {
        return Err(LearnerError::HeadWidth {
            head: head.fan_out(),
            way: data.way,
        });
    }
    let xs = g.constant(data.support.clone());
    let xq = g.constant(data.query.clone());
    let alpha = params.adaptation_rate;
    let head_vars = vars.head.clone().expect("head bound");

    match params.algorithm {
        Algorithm::Maml => {
            let mut encoder = vars.encoder.clone();
            let mut head = head_vars;
            for step in 0..params.adaptation_steps {
                let feats = encode(g, xs, &encoder)?;
                let logits = linear(g, feats, &head)?;
                let nll = g.softmax_cross_entropy(logits, &data.support_labels)?;
                let loss = g.sum(nll);
                if !g.value(loss).item().is_finite() {
                    return Err(LearnerError::NonFiniteInner { step });
                }
                let mut current: Vec<Var> =
                    encoder.iter().flat_map(|l| [l.weight, l.bias]).collect();
                current.extend([head.weight, head.bias]);
                let grads = g.backward(loss, &current, second_order)?;
                let mut next = Vec::with_capacity(current.len());
                for v in current {
                    let gv = grads.get(v).expect("requested");
                    let step_v = g.scale(gv, alpha);
                    next.push(g.sub(v, step_v)?);
                }
                let (enc_flat, head_flat) = next.split_at(next.len() - 2);
                encoder = enc_flat
                    .chunks(2)
                    .map(|c| LayerVars {
                        weight: c[0],
                        bias: c[1],
                    })
                    .collect();
                head = LayerVars {
                    weight: head_flat[0],
                    bias: head_flat[1],
                };
            }
            let feats = encode(g, xq, &encoder)?;
            linear(g, feats, &head)
        }
        Algorithm::Anil => {
            let fs = encode(g, xs, &vars.encoder)?;
            let fq = encode(g, xq, &vars.encoder)?;
            let mut head = head_vars;
            for step in 0..params.adaptation_steps {
                let logits = linear(g, fs, &head)?;
                let nll = g.softmax_cross_entropy(logits, &data.support_labels)?;
                let loss = g.sum(nll);
                if !g.value(loss).item().is_finite() {
                    return Err(LearnerError::NonFiniteInner { step });
                }
                let grads = g.backward(loss, &[head.weight, head.bias], second_order)?;
                let gw = g.scale(grads.get(head.weight).expect("requested"), alpha);
                let gb = g.scale(grads.get(head.bias).expect("requested"), alpha);
                head = LayerVars {
                    weight: g.sub(head.weight, gw)?,
                    bias: g.sub(head.bias, gb)?,
                };
            }
            linear(g, fq, &head)
        }
        other => Err(LearnerError::WrongAlgorithm {
            expected: "maml or anil",
            got: other,
        }),
    }
}

/// Query logits (`|τ_Q| × way`) recorded on `g`.
fn logits(
    g: &mut Graph,
    params: &LearnerParams,
    vars: &ParamVars,
    data: &EpisodeData,
    second_order: bool,
) -> Result<Var> {
    check_input(params, data)?;
    if params.algorithm.is_proto() {
        proto_logits(g, params, vars, data)
    } else {
        adapted_logits(g, params, vars, data, second_order)
    }
}

fn log_probs_of(g: &Graph, logits: Var) -> Tensor {
    let t = g.value(logits);
    let (m, c) = (t.shape()[0], t.shape()[1]);
    let mut out = Vec::with_capacity(m * c);
    for i in 0..m {
        let row = t.row(i);
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = row.iter().fold(0.0, |acc, &x| acc + (x - mx).exp()).ln();
        out.extend(row.iter().map(|x| (x - mx) - log_z));
    }
    Tensor::matrix(m, c, out).expect("positive dims")
}

fn per_query_ll(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Vec<f64>> {
    let nll = g.softmax_cross_entropy(logits, labels)?;
    Ok(g.value(nll).data().iter().map(|x| -x).collect())
}

/// Per-query `log l_θ(y | x, τ_S)` for the prototype learners.
pub fn proto_log_likelihoods(params: &LearnerParams, data: &EpisodeData) -> Result<Vec<f64>> {
    if !params.algorithm.is_proto() {
        return Err(LearnerError::WrongAlgorithm {
            expected: "prototype",
            got: params.algorithm,
        });
    }
    log_likelihoods(params, data)
}

/// Per-query `log p_θ'(y | x)` under the adapted parameters (maml/anil).
pub fn gradient_log_likelihoods(params: &LearnerParams, data: &EpisodeData) -> Result<Vec<f64>> {
    if !params.algorithm.has_head() {
        return Err(LearnerError::WrongAlgorithm {
            expected: "maml or anil",
            got: params.algorithm,
        });
    }
    log_likelihoods(params, data)
}

/// Per-query log-likelihood of the true label, for any algorithm.
pub fn log_likelihoods(params: &LearnerParams, data: &EpisodeData) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let vars = ParamVars::bind(&mut g, params, params.algorithm.has_head());
    let l = logits(&mut g, params, &vars, data, false)?;
    per_query_ll(&mut g, l, &data.query_labels)
}

/// Log-probabilities of every candidate label, `|τ_Q| × way`.
pub fn class_log_probs(params: &LearnerParams, data: &EpisodeData) -> Result<Tensor> {
    let mut g = Graph::new();
    let vars = ParamVars::bind(&mut g, params, params.algorithm.has_head());
    let l = logits(&mut g, params, &vars, data, false)?;
    Ok(log_probs_of(&g, l))
}

/// Ω = −mean(log-likelihoods), in nats.
pub fn episode_difficulty(log_likelihoods: &[f64]) -> Result<f64> {
    if log_likelihoods.is_empty() {
        return Err(LearnerError::Empty);
    }
    // running mean: a constant input comes back unchanged
    let mean = log_likelihoods
        .iter()
        .enumerate()
        .fold(0.0, |m, (k, &x)| m + (x - m) / (k + 1) as f64);
    Ok(-mean)
}

fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = j;
        }
    }
    best
}

fn accuracy_of(logits: &Tensor, labels: &[usize]) -> f64 {
    let hits = labels
        .iter()
        .enumerate()
        .filter(|(i, &y)| argmax_lowest(logits.row(*i)) == y)
        .count();
    hits as f64 / labels.len() as f64
}

/// Fraction of queries whose arg-max class is correct; ties go to the lowest
/// class id.
pub fn episode_accuracy(params: &LearnerParams, data: &EpisodeData) -> Result<f64> {
    Ok(evaluate_episode(params, data)?.accuracy)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeEval {
    pub difficulty: f64,
    pub accuracy: f64,
}

/// Difficulty and accuracy from a single forward pass.
pub fn evaluate_episode(params: &LearnerParams, data: &EpisodeData) -> Result<EpisodeEval> {
    let mut g = Graph::new();
    let vars = ParamVars::bind(&mut g, params, params.algorithm.has_head());
    let l = logits(&mut g, params, &vars, data, false)?;
    let accuracy = accuracy_of(g.value(l), &data.query_labels);
    let ll = per_query_ll(&mut g, l, &data.query_labels)?;
    Ok(EpisodeEval {
        difficulty: episode_difficulty(&ll)?,
        accuracy,
    })
}

/// Ω(τ) and its gradient with respect to every parameter, flattened in
/// canonical order. MAML/ANIL differentiate through the inner loop.
pub fn difficulty_and_gradient(
    params: &LearnerParams,
    data: &EpisodeData,
) -> Result<(f64, Vec<f64>)> {
    let mut g = Graph::new();
    let vars = ParamVars::bind(&mut g, params, true);
    let l = logits(&mut g, params, &vars, data, true)?;
    let nll = g.softmax_cross_entropy(l, &data.query_labels)?;
    let omega = g.mean(nll);
    let all = vars.all();
    let grads = g.backward(omega, &all, false)?;
    let mut flat = Vec::with_capacity(params.num_params());
    for v in all {
        flat.extend_from_slice(g.value(grads.get(v).expect("requested")).data());
    }
    Ok((g.value(omega).item(), flat))
}

/// Head and encoder after the inner loop, for inspection. The encoder is
/// returned unchanged for ANIL.
pub fn adapt(params: &LearnerParams, data: &EpisodeData) -> Result<LearnerParams> {
    check_input(params, data)?;
    let head = params.head.as_ref().ok_or(LearnerError::WrongAlgorithm {
        expected: "maml or anil",
        got: params.algorithm,
    })?;
    if head.fan_out() != data.way {
        return Err(LearnerError::HeadWidth {
            head: head.fan_out(),
            way: data.way,
        });
    }
    let mut current = params.clone();
    let trainable_head_only = params.algorithm == Algorithm::Anil;
    for step in 0..params.adaptation_steps {
        let mut g = Graph::new();
        let vars = ParamVars::bind(&mut g, &current, true);
        let xs = g.constant(data.support.clone());
        let feats = encode(&mut g, xs, &vars.encoder)?;
        let logits = linear(&mut g, feats, vars.head.as_ref().expect("head"))?;
        let nll = g.softmax_cross_entropy(logits, &data.support_labels)?;
        let loss = g.sum(nll);
        if !g.value(loss).item().is_finite() {
            return Err(LearnerError::NonFiniteInner { step });
        }
        let wrt = if trainable_head_only {
            vars.head_vars()
        } else {
            vars.all()
        };
        let grads = g.backward(loss, &wrt, false)?;
        let mut flat = current.flatten();
        let names = current.tensors();
        let mut offsets = Vec::with_capacity(names.len());
        let mut o = 0;
        for (_, t) in &names {
            offsets.push(o);
            o += t.numel();
        }
        let all = vars.all();
        for v in wrt {
            let idx = all.iter().position(|&a| a == v).expect("bound var");
            let gv = g.value(grads.get(v).expect("requested"));
            for (k, x) in gv.data().iter().enumerate() {
                flat[offsets[idx] + k] -= params.adaptation_rate * x;
            }
        }
        current = current.with_flat(&flat)?;
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_encoder(dim: usize) -> Vec<Layer> {
        vec![Layer {
            weight: Tensor::identity(dim),
            bias: Tensor::zeros(&[1, dim]),
        }]
    }

    fn proto(algorithm: Algorithm, dim: usize) -> LearnerParams {
        LearnerParams {
            algorithm,
            encoder: identity_encoder(dim),
            head: None,
            cosine_scale: (algorithm == Algorithm::ProtoCosine).then_some(10.0),
            adaptation_rate: 0.01,
            adaptation_steps: 1,
        }
    }

    fn episode(support: Vec<f64>, s_labels: Vec<usize>, query: Vec<f64>, q_labels: Vec<usize>, dim: usize, way: usize, shot: usize) -> EpisodeData {
        EpisodeData {
            way,
            shot,
            support: Tensor::matrix(s_labels.len(), dim, support).unwrap(),
            support_labels: s_labels,
            query: Tensor::matrix(q_labels.len(), dim, query).unwrap(),
            query_labels: q_labels,
        }
    }

    #[test]
    fn prototypes_are_class_means() {
        let e = Tensor::matrix(4, 2, vec![0.0, 0.0, 5.0, 5.0, 2.0, 2.0, 1.0, -1.0]).unwrap();
        let p = compute_prototypes(&e, &[0, 1, 0, 1], 2, 2).unwrap();
        assert_eq!(p.data(), &[1.0, 1.0, 3.0, 2.0]);
        let single = compute_prototypes(&e, &[2, 0, 3, 1], 4, 1).unwrap();
        assert_eq!(single.row(2), e.row(0));
        let perm = Tensor::matrix(4, 2, vec![2.0, 2.0, 1.0, -1.0, 0.0, 0.0, 5.0, 5.0]).unwrap();
        assert_eq!(compute_prototypes(&perm, &[0, 1, 0, 1], 2, 2).unwrap(), p);
        assert!(matches!(
            compute_prototypes(&e, &[0, 0, 0, 1], 2, 2),
            Err(LearnerError::WrongShot { .. })
        ));
    }

    #[test]
    fn two_class_toy_likelihood() {
        // prototypes A=0, B=2; query at 0 labeled A
        let data = episode(vec![0.0, 0.0, 2.0, 0.0], vec![0, 1], vec![0.0, 0.0], vec![0], 2, 2, 1);
        let ll = proto_log_likelihoods(&proto(Algorithm::ProtoEuclidean, 2), &data).unwrap();
        let expected = -(1.0 + (-4f64).exp()).ln();
        assert!((ll[0] - expected).abs() < 1e-15);
        assert!((ll[0] - (-0.01815)).abs() < 1e-5);
    }

    #[test]
    fn equidistant_query_is_chance() {
        let data = episode(
            vec![1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0],
            vec![0, 1, 2, 3],
            vec![0.0, 0.0],
            vec![2],
            2,
            4,
            1,
        );
        let ll = proto_log_likelihoods(&proto(Algorithm::ProtoEuclidean, 2), &data).unwrap();
        assert!((ll[0] + 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn zero_cosine_scale_is_chance() {
        let mut p = proto(Algorithm::ProtoCosine, 2);
        p.cosine_scale = Some(0.0);
        let data = episode(
            vec![1.0, 0.2, -1.0, 0.5, 0.3, 1.0],
            vec![0, 1, 2],
            vec![0.4, 0.1, -2.0, 1.0],
            vec![0, 2],
            2,
            3,
            1,
        );
        for ll in proto_log_likelihoods(&p, &data).unwrap() {
            assert!((ll + 3f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn cosine_zero_norm_errors() {
        let data = episode(vec![0.0, 0.0, 1.0, 1.0], vec![0, 1], vec![1.0, 0.0], vec![0], 2, 2, 1);
        assert!(matches!(
            proto_log_likelihoods(&proto(Algorithm::ProtoCosine, 2), &data),
            Err(LearnerError::ZeroNorm)
        ));
    }

    #[test]
    fn difficulty_values() {
        assert!((episode_difficulty(&[-0.1, -0.3]).unwrap() - 0.2).abs() < 1e-15);
        let chance = vec![-(5f64.ln()); 75];
        assert_eq!(episode_difficulty(&chance).unwrap(), 5f64.ln());
        assert!(episode_difficulty(&[-1e-12; 3]).unwrap() < 1e-11);
        assert!(matches!(episode_difficulty(&[]), Err(LearnerError::Empty)));
    }

    #[test]
    fn accuracy_extremes() {
        let data = episode(vec![0.0, 0.0, 4.0, 0.0], vec![0, 1], vec![0.1, 0.0, 3.9, 0.0], vec![0, 1], 2, 2, 1);
        let p = proto(Algorithm::ProtoEuclidean, 2);
        assert_eq!(episode_accuracy(&p, &data).unwrap(), 1.0);
        let flipped = episode(vec![0.0, 0.0, 4.0, 0.0], vec![0, 1], vec![0.1, 0.0, 3.9, 0.0], vec![1, 0], 2, 2, 1);
        assert_eq!(episode_accuracy(&p, &flipped).unwrap(), 0.0);
    }

    #[test]
    fn ties_go_to_lowest_class() {
        assert_eq!(argmax_lowest(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax_lowest(&[0.0, 0.0]), 0);
    }

    fn head_learner(algorithm: Algorithm, rate: f64) -> LearnerParams {
        let mut cfg = LearnerConfig::new(algorithm, 3);
        cfg.hidden = vec![4];
        cfg.embed_dim = 3;
        cfg.way = 2;
        cfg.adaptation_rate = Some(rate);
        cfg.adaptation_steps = Some(2);
        LearnerParams::init(&cfg, &mut Stream::new(3)).unwrap()
    }

    fn small_episode() -> EpisodeData {
        episode(
            vec![0.5, -0.2, 1.0, 0.1, 0.9, -1.1, 0.4, 0.4, 0.2, -0.6, 1.2, -0.3],
            vec![0, 0, 1, 1],
            vec![0.3, 0.0, 0.8, -0.2, 1.0, -0.9],
            vec![0, 1],
            3,
            2,
            2,
        )
    }

    #[test]
    fn zero_head_gives_chance_before_adaptation_effect() {
        let p = head_learner(Algorithm::Maml, 1e-300);
        for ll in gradient_log_likelihoods(&p, &small_episode()).unwrap() {
            assert!((ll + 2f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn anil_leaves_encoder_untouched() {
        let mut p = head_learner(Algorithm::Anil, 0.5);
        p.head.as_mut().unwrap().weight =
            Tensor::matrix(3, 2, vec![0.3, -0.1, 0.2, 0.5, -0.4, 0.1]).unwrap();
        let adapted = adapt(&p, &small_episode()).unwrap();
        assert_eq!(adapted.encoder, p.encoder);
        assert_ne!(adapted.head, p.head);
        let maml = adapt(&LearnerParams { algorithm: Algorithm::Maml, ..p.clone() }, &small_episode()).unwrap();
        assert_ne!(maml.encoder, p.encoder);
    }

    #[test]
    fn head_width_must_match_way() {
        let p = head_learner(Algorithm::Anil, 0.1);
        let mut data = small_episode();
        data.way = 3;
        assert!(matches!(log_likelihoods(&p, &data), Err(LearnerError::HeadWidth { head: 2, way: 3 })));
    }

    #[test]
    fn flat_round_trip() {
        for alg in [Algorithm::ProtoCosine, Algorithm::Maml] {
            let p = LearnerParams::init(&LearnerConfig::new(alg, 8), &mut Stream::new(1)).unwrap();
            let flat = p.flatten();
            assert_eq!(flat.len(), p.num_params());
            assert_eq!(p.with_flat(&flat).unwrap(), p);
        }
    }

    #[test]
    fn input_dim_mismatch() {
        let p = proto(Algorithm::ProtoEuclidean, 3);
        let data = episode(vec![0.0, 0.0, 2.0, 0.0], vec![0, 1], vec![0.0, 0.0], vec![0], 2, 2, 1);
        assert!(matches!(log_likelihoods(&p, &data), Err(LearnerError::InputDim { expected: 3, got: 2 })));
    }
}
