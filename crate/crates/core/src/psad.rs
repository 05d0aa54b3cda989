//! Personalized state anxiety detector.
//!
//! Per-view projections are fused into one hidden vector `H = Σ α_i g_i(x_i)`,
//! which feeds a population-level stack. That stack is then frozen and
//! specialised twice: one layer per context, then one layer per
//! (context, cohort) routing key.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::{fit_cohorts, ClusterModel, Group};
use crate::dataset::{AnxietyLabel, Context, Corpus, ParticipantProfile};
use crate::error::{Error, Result};
use crate::featurize::{FeatureSet, NormalizationScaler, ViewKind, N_FEATURES};
use crate::jsonfile::{read_versioned, write_versioned};
use crate::nn::{
    self, batch_bce, epoch_batches, fresh_layers, Activation, ForwardCache, Gradients, NetworkStack,
    TrainConfig,
};
use crate::seed;

pub const DECISION_THRESHOLD: f64 = 0.5;

// ---------------------------------------------------------------------------
// Fusion
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub view: ViewKind,
    pub alpha: f64,
    /// Maps the view's columns to `k_hidden`.
    pub projection: NetworkStack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionBlock {
    pub k_hidden: usize,
    pub frozen: bool,
    pub branches: Vec<Branch>,
}

struct FusionCache {
    caches: Vec<ForwardCache>,
    h: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionGrads {
    pub alpha: Vec<f64>,
    pub projections: Vec<Gradients>,
}

fn gather(x: &[f64], b: usize, cols: std::ops::Range<usize>) -> Vec<f64> {
    let mut out = Vec::with_capacity(b * cols.len());
    for s in 0..b {
        out.extend_from_slice(&x[s * N_FEATURES + cols.start..s * N_FEATURES + cols.end]);
    }
    out
}

impl FusionBlock {
    /// One ReLU projection per view, α = 1.
    pub fn random(views: &[ViewKind], k_hidden: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let branches = views
            .iter()
            .map(|&view| Branch {
                view,
                alpha: 1.0,
                projection: NetworkStack::random(
                    view.dim(),
                    &[k_hidden],
                    Activation::ReLU,
                    Activation::ReLU,
                    scale,
                    rng,
                ),
            })
            .collect();
        Self {
            k_hidden,
            frozen: false,
            branches,
        }
    }

    pub fn new(k_hidden: usize, branches: Vec<Branch>) -> Result<Self> {
        let f = Self {
            k_hidden,
            frozen: false,
            branches,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if self.branches.is_empty() {
            return Err(Error::ShapeMismatch("fusion needs at least one view".into()));
        }
        let mut seen = BTreeSet::new();
        for b in &self.branches {
            if !seen.insert(b.view) {
                return Err(Error::ShapeMismatch(format!("view {} fused twice", b.view)));
            }
            b.projection.validate()?;
            if b.projection.input_dim() != b.view.dim() || b.projection.output_dim() != self.k_hidden {
                return Err(Error::ShapeMismatch(format!(
                    "{} projection maps {} -> {}, expected {} -> {}",
                    b.view,
                    b.projection.input_dim(),
                    b.projection.output_dim(),
                    b.view.dim(),
                    self.k_hidden
                )));
            }
            if !b.alpha.is_finite() {
                return Err(Error::ShapeMismatch(format!("{} coefficient is not finite", b.view)));
            }
        }
        Ok(())
    }

    pub fn views(&self) -> Vec<ViewKind> {
        self.branches.iter().map(|b| b.view).collect()
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.branches.iter().map(|b| b.alpha).collect()
    }

    pub fn alpha(&self, view: ViewKind) -> Option<f64> {
        self.branches.iter().find(|b| b.view == view).map(|b| b.alpha)
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
        for b in &mut self.branches {
            b.projection.freeze_all();
        }
    }

    pub fn trainable_param_count(&self) -> usize {
        if self.frozen {
            0
        } else {
            self.branches.len()
                + self.branches.iter().map(|b| b.projection.trainable_param_count()).sum::<usize>()
        }
    }

    fn check_input(&self, x: &[f64], b: usize) -> Result<()> {
        if x.len() != b * N_FEATURES {
            return Err(Error::ShapeMismatch(format!(
                "fusion input of length {} is not {b} x {N_FEATURES}",
                x.len()
            )));
        }
        Ok(())
    }

    /// Fused vectors for a batch of full 17-feature rows, `b × k_hidden`.
    pub fn fuse_batch(&self, x: &[f64], b: usize) -> Result<Vec<f64>> {
        self.check_input(x, b)?;
        let mut h = vec![0.0; b * self.k_hidden];
        for br in &self.branches {
            let g = br.projection.predict_batch(&gather(x, b, br.view.range()), b)?;
            for (hv, gv) in h.iter_mut().zip(&g) {
                *hv += br.alpha * gv;
            }
        }
        Ok(h)
    }

    pub fn fuse(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.fuse_batch(x, 1)
    }

    fn forward_batch(&self, x: &[f64], b: usize) -> Result<FusionCache> {
        self.check_input(x, b)?;
        let mut h = vec![0.0; b * self.k_hidden];
        let mut caches = Vec::with_capacity(self.branches.len());
        for br in &self.branches {
            let c = br.projection.forward_batch(&gather(x, b, br.view.range()), b)?;
            for (hv, gv) in h.iter_mut().zip(c.output()) {
                *hv += br.alpha * gv;
            }
            caches.push(c);
        }
        Ok(FusionCache { caches, h })
    }

    fn backward(&self, cache: &FusionCache, d_h: &[f64]) -> Result<FusionGrads> {
        let mut alpha = Vec::with_capacity(self.branches.len());
        let mut projections = Vec::with_capacity(self.branches.len());
        for (br, c) in self.branches.iter().zip(&cache.caches) {
            alpha.push(c.output().iter().zip(d_h).map(|(g, d)| g * d).sum());
            let d_g: Vec<f64> = d_h.iter().map(|d| br.alpha * d).collect();
            projections.push(br.projection.backward_params(c, &d_g)?);
        }
        Ok(FusionGrads { alpha, projections })
    }

    fn apply_sgd(&mut self, g: &FusionGrads, lr: f64) {
        for ((br, ga), gp) in self.branches.iter_mut().zip(&g.alpha).zip(&g.projections) {
            br.alpha -= lr * ga;
            br.projection.apply_sgd(gp, lr);
        }
    }
}

// ---------------------------------------------------------------------------
// Fusion followed by a stack
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedNet {
    pub fusion: FusionBlock,
    pub stack: NetworkStack,
}

pub struct FusedCache {
    fusion: FusionCache,
    stack: ForwardCache,
}

impl FusedCache {
    pub fn output(&self) -> &[f64] {
        self.stack.output()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedGrads {
    /// `None` when the fusion block is frozen.
    pub fusion: Option<FusionGrads>,
    pub stack: Gradients,
}

impl FusedGrads {
    /// Trainable gradients in a fixed order: α, projection layers, stack layers.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        if let Some(f) = &self.fusion {
            out.extend(&f.alpha);
            for p in &f.projections {
                out.extend(p.flatten());
            }
        }
        out.extend(self.stack.flatten());
        out
    }
}

fn nudge_stack(stack: &mut NetworkStack, mut i: usize, delta: f64) -> bool {
    for li in 0..stack.len() {
        let l = &stack.layers()[li];
        if l.frozen {
            continue;
        }
        let (nw, n) = (l.weights.len(), l.param_count());
        if i < n {
            let l = stack.layer_mut(li);
            if i < nw {
                l.weights[i] += delta;
            } else {
                l.bias[i - nw] += delta;
            }
            return true;
        }
        i -= n;
    }
    false
}

impl FusedNet {
    pub fn new(fusion: FusionBlock, stack: NetworkStack) -> Result<Self> {
        fusion.validate()?;
        if stack.input_dim() != fusion.k_hidden {
            return Err(Error::ShapeMismatch(format!(
                "stack expects {} inputs, fusion yields {}",
                stack.input_dim(),
                fusion.k_hidden
            )));
        }
        Ok(Self { fusion, stack })
    }

    pub fn trainable_param_count(&self) -> usize {
        self.fusion.trainable_param_count() + self.stack.trainable_param_count()
    }

    pub fn forward_batch(&self, x: &[f64], b: usize) -> Result<FusedCache> {
        let fusion = self.fusion.forward_batch(x, b)?;
        let stack = self.stack.forward_batch(&fusion.h, b)?;
        Ok(FusedCache { fusion, stack })
    }

    pub fn backward(&self, cache: &FusedCache, upstream: &[f64]) -> Result<FusedGrads> {
        if self.fusion.frozen {
            return Ok(FusedGrads {
                fusion: None,
                stack: self.stack.backward_params(&cache.stack, upstream)?,
            });
        }
        let stack = self.stack.backward(&cache.stack, upstream)?;
        let fusion = self.fusion.backward(&cache.fusion, &stack.input)?;
        Ok(FusedGrads {
            fusion: Some(fusion),
            stack,
        })
    }

    pub fn apply_sgd(&mut self, g: &FusedGrads, lr: f64) {
        if let (false, Some(f)) = (self.fusion.frozen, &g.fusion) {
            self.fusion.apply_sgd(f, lr);
        }
        if self.stack.trainable_param_count() > 0 {
            self.stack.apply_sgd(&g.stack, lr);
        }
    }

    pub fn predict_batch(&self, x: &[f64], b: usize) -> Result<Vec<f64>> {
        self.stack.predict_batch(&self.fusion.fuse_batch(x, b)?, b)
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.predict_batch(x, 1)?[0])
    }

    /// Add `delta` to the `i`-th trainable parameter, in [`FusedGrads::flatten`] order.
    pub fn nudge(&mut self, mut i: usize, delta: f64) -> bool {
        if !self.fusion.frozen {
            let nb = self.fusion.branches.len();
            if i < nb {
                self.fusion.branches[i].alpha += delta;
                return true;
            }
            i -= nb;
            for br in &mut self.fusion.branches {
                let n = br.projection.trainable_param_count();
                if i < n {
                    return nudge_stack(&mut br.projection, i, delta);
                }
                i -= n;
            }
        }
        nudge_stack(&mut self.stack, i, delta)
    }
}

/// SGD on mean BCE through fusion and stack. A frozen fusion block is
/// evaluated once up front and only the stack is trained.
pub fn train_fused(
    net: &mut FusedNet,
    inputs: &[Vec<f64>],
    labels: &[f64],
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if inputs.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} inputs but {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    let n = inputs.len();
    let mut flat = Vec::with_capacity(n * N_FEATURES);
    for x in inputs {
        if x.len() != N_FEATURES {
            return Err(Error::ShapeMismatch(format!("expected {N_FEATURES} features, got {}", x.len())));
        }
        flat.extend_from_slice(x);
    }
    if net.fusion.frozen {
        let k = net.fusion.k_hidden;
        let h = net.fusion.fuse_batch(&flat, n)?;
        let rows: Vec<Vec<f64>> = h.chunks(k).map(<[f64]>::to_vec).collect();
        return nn::train(&mut net.stack, &rows, labels, config);
    }
    let mut rng = seed::stream(config.seed, "sgd-shuffle");
    let mut trace = Vec::with_capacity(config.epochs);
    let mut xb = Vec::new();
    let mut yb = Vec::new();
    for _ in 0..config.epochs {
        let mut epoch_loss = 0.0;
        for batch in epoch_batches(n, config.batch_size, &mut rng) {
            xb.clear();
            yb.clear();
            for &i in &batch {
                xb.extend_from_slice(&flat[i * N_FEATURES..(i + 1) * N_FEATURES]);
                yb.push(labels[i]);
            }
            let cache = net.forward_batch(&xb, batch.len())?;
            let (loss, up) = batch_bce(cache.output(), &yb);
            epoch_loss += loss * batch.len() as f64;
            let grads = net.backward(&cache, &up)?;
            net.apply_sgd(&grads, config.learning_rate);
        }
        trace.push(epoch_loss / n as f64);
    }
    Ok(trace)
}

// ---------------------------------------------------------------------------
// Configuration and training data
// ---------------------------------------------------------------------------

/// Which fine-tuning stages a model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Stages {
    pub context: bool,
    pub group: bool,
}

impl Stages {
    pub const FULL: Stages = Stages {
        context: true,
        group: true,
    };
    pub const NO_GROUP: Stages = Stages {
        context: true,
        group: false,
    };
    pub const NO_CONTEXT: Stages = Stages {
        context: false,
        group: true,
    };
    pub const GLOBAL_ONLY: Stages = Stages {
        context: false,
        group: false,
    };

    pub fn name(self) -> &'static str {
        match (self.context, self.group) {
            (true, true) => "full",
            (true, false) => "no_group_layer",
            (false, true) => "no_context_layer",
            (false, false) => "global_only",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsadConfig {
    pub k_hidden: usize,
    pub global_widths: Vec<usize>,
    pub context_width: usize,
    pub group_width: usize,
    pub views: Vec<ViewKind>,
    /// Keep fusion parameters trainable during fine-tuning.
    pub train_fusion_after_pretrain: bool,
    pub train: TrainConfig,
}

impl Default for PsadConfig {
    fn default() -> Self {
        Self {
            k_hidden: 16,
            global_widths: vec![16, 16],
            context_width: 16,
            group_width: 16,
            views: ViewKind::ALL.to_vec(),
            train_fusion_after_pretrain: false,
            train: TrainConfig::default(),
        }
    }
}

impl PsadConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.k_hidden == 0 || self.context_width == 0 || self.group_width == 0 {
            return Err(Error::ConfigInvalid("layer widths must be positive".into()));
        }
        if self.global_widths.is_empty() || self.global_widths.contains(&0) {
            return Err(Error::ConfigInvalid("global_widths must be nonempty and positive".into()));
        }
        let unique: BTreeSet<_> = self.views.iter().collect();
        if self.views.is_empty() || unique.len() != self.views.len() {
            return Err(Error::ConfigInvalid("views must be nonempty and distinct".into()));
        }
        Ok(())
    }

    pub fn without_view(&self, view: ViewKind) -> Self {
        let mut c = self.clone();
        c.views.retain(|v| *v != view);
        c
    }

    fn stage_train(&self, label: &str) -> TrainConfig {
        TrainConfig {
            seed: seed::derive(self.train.seed, &format!("shuffle/{label}")),
            ..self.train
        }
    }

    fn init_seed(&self, label: &str) -> u64 {
        seed::derive(self.train.seed, &format!("init/{label}"))
    }
}

/// Normalized training rows plus everything fitted on the training fold.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub scaler: NormalizationScaler,
    pub cohort: ClusterModel,
    pub ids: Vec<String>,
    pub x: Vec<Vec<f64>>,
    pub contexts: Vec<Context>,
    pub groups: Vec<Group>,
    pub labels: Vec<f64>,
}

/// A sample ready for routing: normalized features, context and cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub x: Vec<f64>,
    pub context: Context,
    pub group: Group,
}

impl Prepared {
    /// Fit the scaler on the selected samples' features and the cohort model
    /// on the profiles of the participants they belong to.
    pub fn fit(corpus: &Corpus, features: &[FeatureSet], train: &[usize], seed: u64) -> Result<Self> {
        if features.len() != corpus.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows for {} samples",
                features.len(),
                corpus.len()
            )));
        }
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let rows: Vec<FeatureSet> = train.iter().map(|&i| features[i]).collect();
        let scaler = NormalizationScaler::fit_features(&rows)?;
        let participants: BTreeSet<&str> =
            train.iter().map(|&i| corpus.samples[i].participant_id.as_str()).collect();
        let profiles: Vec<ParticipantProfile> = participants
            .iter()
            .map(|p| corpus.profiles[*p].clone())
            .collect();
        let cohort = fit_cohorts(&profiles, seed::derive(seed, "cohort"))?;
        let mut prep = Prepared {
            scaler,
            cohort,
            ids: Vec::with_capacity(train.len()),
            x: Vec::with_capacity(train.len()),
            contexts: Vec::with_capacity(train.len()),
            groups: Vec::with_capacity(train.len()),
            labels: Vec::with_capacity(train.len()),
        };
        for &i in train {
            let s = &corpus.samples[i];
            let q = prep.query(&features[i], s.context, &corpus.profiles[&s.participant_id])?;
            prep.ids.push(s.sample_id.clone());
            prep.x.push(q.x);
            prep.contexts.push(q.context);
            prep.groups.push(q.group);
            prep.labels.push(if s.label().positive { 1.0 } else { 0.0 });
        }
        Ok(prep)
    }

    pub fn query(&self, features: &FeatureSet, context: Context, profile: &ParticipantProfile) -> Result<Query> {
        Ok(Query {
            x: self.scaler.apply(features)?,
            context,
            group: self.cohort.assign_group(profile)?,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    fn subset(&self, keep: impl Fn(usize) -> bool) -> (Vec<Vec<f64>>, Vec<f64>) {
        (0..self.len())
            .filter(|&i| keep(i))
            .map(|i| (self.x[i].clone(), self.labels[i]))
            .unzip()
    }
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

/// Train fusion, the global layers and a temporary head on every sample,
/// then freeze the global layers (and the fusion block unless configured
/// otherwise).
pub fn pretrain_global(x: &[Vec<f64>], labels: &[f64], config: &PsadConfig) -> Result<(FusedNet, Vec<f64>)> {
    config.validate()?;
    let mut rng = seed::rng(config.init_seed("global"));
    let scale = config.train.weight_init_scale;
    let fusion = FusionBlock::random(&config.views, config.k_hidden, scale, &mut rng);
    let mut widths = config.global_widths.clone();
    widths.push(1);
    let stack = NetworkStack::random(config.k_hidden, &widths, Activation::ReLU, Activation::Sigmoid, scale, &mut rng);
    let mut net = FusedNet { fusion, stack };
    let trace = train_fused(&mut net, x, labels, &config.stage_train("global"))?;
    net.stack.freeze_all();
    if !config.train_fusion_after_pretrain {
        net.fusion.freeze();
    }
    Ok((net, trace))
}

fn finetune(
    base: &FusedNet,
    width: usize,
    x: &[Vec<f64>],
    labels: &[f64],
    config: &PsadConfig,
    label: &str,
) -> Result<(FusedNet, Vec<f64>)> {
    if x.is_empty() {
        return Err(Error::EmptySubset(label.to_string()));
    }
    let input = base.stack.without_head().output_dim();
    let fresh = fresh_layers(
        input,
        &[width, 1],
        Activation::ReLU,
        Activation::Sigmoid,
        config.train.weight_init_scale,
        config.init_seed(label),
        "layers",
    );
    let mut net = FusedNet {
        fusion: base.fusion.clone(),
        stack: base.stack.append_layers(fresh)?,
    };
    let trace = train_fused(&mut net, x, labels, &config.stage_train(label))?;
    Ok((net, trace))
}

fn context_label(c: Context) -> String {
    format!("context/{c}")
}

/// Append a context layer and temporary head to the frozen global stack,
/// train on one context's samples, then freeze the context layer.
pub fn finetune_context(
    global: &FusedNet,
    context: Context,
    x: &[Vec<f64>],
    labels: &[f64],
    config: &PsadConfig,
) -> Result<(FusedNet, Vec<f64>)> {
    let (mut net, trace) = finetune(global, config.context_width, x, labels, config, &context_label(context))?;
    let n = net.stack.len();
    net.stack.freeze_prefix(n - 1)?;
    Ok((net, trace))
}

/// Append a group layer and final head and train on one routing key's samples.
pub fn finetune_group(
    base: &FusedNet,
    key: LeafKey,
    x: &[Vec<f64>],
    labels: &[f64],
    config: &PsadConfig,
) -> Result<(FusedNet, Vec<f64>)> {
    finetune(base, config.group_width, x, labels, config, &format!("group/{key}"))
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// Routing key of a leaf. A `None` component means the leaf does not split
/// on that attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LeafKey {
    pub context: Option<Context>,
    pub group: Option<Group>,
}

impl LeafKey {
    pub fn new(context: Context, group: Group) -> Self {
        Self {
            context: Some(context),
            group: Some(group),
        }
    }

    pub fn route(stages: Stages, context: Context, group: Group) -> Self {
        Self {
            context: stages.context.then_some(context),
            group: stages.group.then_some(group),
        }
    }

    /// All keys that a model with `stages` holds.
    pub fn all(stages: Stages) -> Vec<LeafKey> {
        let cs: Vec<Option<Context>> = if stages.context {
            Context::ALL.iter().copied().map(Some).collect()
        } else {
            vec![None]
        };
        let gs: Vec<Option<Group>> = if stages.group {
            Group::ALL.iter().copied().map(Some).collect()
        } else {
            vec![None]
        };
        cs.iter()
            .flat_map(|&context| gs.iter().map(move |&group| LeafKey { context, group }))
            .collect()
    }

    pub fn matches(&self, context: Context, group: Group) -> bool {
        self.context.is_none_or(|c| c == context) && self.group.is_none_or(|g| g == group)
    }
}

impl fmt::Display for LeafKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}_{}",
            self.context.map_or("any", Context::as_str),
            self.group.map_or("any", Group::as_str)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// No samples for the routing key: the context stack and its head answer.
    ContextStack,
    /// No samples for the context: the global stack and its head answer.
    GlobalStack,
    /// Training labels were all one class: a constant majority prediction.
    MajorityClass,
}

impl Fallback {
    pub fn as_str(self) -> &'static str {
        match self {
            Fallback::ContextStack => "context_stack",
            Fallback::GlobalStack => "global_stack",
            Fallback::MajorityClass => "majority_class",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    pub key: LeafKey,
    pub n_train: usize,
    pub fallback: Option<Fallback>,
    /// Only present when fusion keeps training after pretraining.
    pub fusion: Option<FusionBlock>,
    pub stack: NetworkStack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafSummary {
    pub n_train: usize,
    pub fallback: Option<Fallback>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub seed: u64,
    pub stages: Stages,
    pub n_train: usize,
    pub single_class: bool,
    /// Constant probability used when the training labels were single-class.
    pub majority_probability: Option<f64>,
    pub alpha: BTreeMap<ViewKind, f64>,
    pub losses: BTreeMap<String, Vec<f64>>,
    pub leaves: BTreeMap<String, LeafSummary>,
    /// Sample ids that entered scaler fitting and training.
    pub fit_ids: Vec<String>,
    /// Participants whose profiles entered cohort fitting.
    pub cohort_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsadModel {
    pub config: PsadConfig,
    pub scaler: NormalizationScaler,
    pub cohort: ClusterModel,
    /// Fusion block and global stack (with its temporary head) as frozen
    /// after pretraining.
    pub global: FusedNet,
    pub leaves: BTreeMap<LeafKey, Leaf>,
    pub report: TrainingReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probability: f64,
    pub label: AnxietyLabel,
    pub leaf: String,
    pub fallback: Option<Fallback>,
}

pub fn decide(probability: f64) -> AnxietyLabel {
    AnxietyLabel {
        positive: probability >= DECISION_THRESHOLD,
    }
}

impl PsadModel {
    pub fn stages(&self) -> Stages {
        self.report.stages
    }

    pub fn leaf_for(&self, context: Context, group: Group) -> Result<&Leaf> {
        self.leaves
            .get(&LeafKey::route(self.stages(), context, group))
            .ok_or(Error::ModelNotTrained)
    }

    pub fn predict_query(&self, q: &Query) -> Result<Prediction> {
        let key = LeafKey::route(self.stages(), q.context, q.group);
        if let Some(p) = self.report.majority_probability {
            return Ok(Prediction {
                probability: p,
                label: decide(p),
                leaf: key.to_string(),
                fallback: Some(Fallback::MajorityClass),
            });
        }
        let leaf = self.leaf_for(q.context, q.group)?;
        let fusion = leaf.fusion.as_ref().unwrap_or(&self.global.fusion);
        let probability = leaf.stack.predict(&fusion.fuse(&q.x)?)?[0];
        Ok(Prediction {
            probability,
            label: decide(probability),
            leaf: key.to_string(),
            fallback: leaf.fallback,
        })
    }

    /// Normalize, assign the cohort, route and run the leaf.
    pub fn predict(&self, features: &FeatureSet, context: Context, profile: &ParticipantProfile) -> Result<Prediction> {
        if !self.scaler.is_fitted() || (self.leaves.is_empty() && self.report.majority_probability.is_none()) {
            return Err(Error::ModelNotTrained);
        }
        let q = Query {
            x: self.scaler.apply(features)?,
            context,
            group: self.cohort.assign_group(profile)?,
        };
        self.predict_query(&q)
    }

    /// Unrouted prediction from the global stack's head.
    pub fn predict_global(&self, x: &[f64]) -> Result<f64> {
        self.global.predict(x)
    }

    pub fn save_bundle(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_versioned(&dir.join("fusion.json"), &self.global.fusion)?;
        self.global.stack.save(&dir.join("global.json"))?;
        for leaf in self.leaves.values() {
            write_versioned(&dir.join(format!("leaf_{}.json", leaf.key)), leaf)?;
        }
        write_versioned(&dir.join("cohort.json"), &self.cohort)?;
        write_versioned(&dir.join("scaler.json"), &self.scaler)?;
        write_versioned(
            &dir.join("report.json"),
            &BundleReport {
                config: self.config.clone(),
                report: self.report.clone(),
            },
        )
    }

    pub fn load_bundle(dir: &Path) -> Result<Self> {
        let BundleReport { config, report } = read_versioned(&dir.join("report.json"))?;
        let fusion: FusionBlock = read_versioned(&dir.join("fusion.json"))?;
        let stack = NetworkStack::load(&dir.join("global.json"))?;
        let global = FusedNet::new(fusion, stack)?;
        let mut leaves = BTreeMap::new();
        if report.majority_probability.is_none() {
            for key in LeafKey::all(report.stages) {
                let leaf: Leaf = read_versioned(&dir.join(format!("leaf_{key}.json")))?;
                leaves.insert(key, leaf);
            }
        }
        Ok(Self {
            config,
            scaler: read_versioned(&dir.join("scaler.json"))?,
            cohort: read_versioned(&dir.join("cohort.json"))?,
            global,
            leaves,
            report,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct BundleReport {
    config: PsadConfig,
    report: TrainingReport,
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

pub fn train_psad(prep: &Prepared, config: &PsadConfig) -> Result<PsadModel> {
    Ok(train_variants(prep, config, &[Stages::FULL])?.remove(0))
}

/// Fit the scaler, cohorts and every stage on the whole corpus.
pub fn train_psad_corpus(corpus: &Corpus, features: &[FeatureSet], config: &PsadConfig) -> Result<PsadModel> {
    let all: Vec<usize> = (0..corpus.len()).collect();
    let prep = Prepared::fit(corpus, features, &all, config.train.seed)?;
    train_psad(&prep, config)
}

/// Train several stage combinations at once. Stages shared between variants
/// are trained once; each stage's randomness depends only on its name, so
/// every returned model equals the one trained alone.
pub fn train_variants(prep: &Prepared, config: &PsadConfig, variants: &[Stages]) -> Result<Vec<PsadModel>> {
    config.validate()?;
    if prep.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let positives = prep.labels.iter().filter(|y| **y >= 0.5).count();
    let single_class = positives == 0 || positives == prep.len();

    let mut cohort_ids: Vec<String> = prep.cohort.training_ids.clone();
    cohort_ids.sort();
    let base_report = |stages: Stages| TrainingReport {
        seed: config.train.seed,
        stages,
        n_train: prep.len(),
        single_class,
        majority_probability: None,
        alpha: BTreeMap::new(),
        losses: BTreeMap::new(),
        leaves: BTreeMap::new(),
        fit_ids: prep.ids.clone(),
        cohort_ids: cohort_ids.clone(),
    };

    if single_class {
        log::warn!("training labels are single-class; using a majority-class predictor");
        let p = if positives == 0 { 0.0 } else { 1.0 };
        let mut rng = seed::rng(config.init_seed("global"));
        let scale = config.train.weight_init_scale;
        let fusion = FusionBlock::random(&config.views, config.k_hidden, scale, &mut rng);
        let mut widths = config.global_widths.clone();
        widths.push(1);
        let stack = NetworkStack::random(config.k_hidden, &widths, Activation::ReLU, Activation::Sigmoid, scale, &mut rng);
        let global = FusedNet { fusion, stack };
        return Ok(variants
            .iter()
            .map(|&stages| {
                let mut report = base_report(stages);
                report.majority_probability = Some(p);
                for key in LeafKey::all(stages) {
                    report.leaves.insert(
                        key.to_string(),
                        LeafSummary {
                            n_train: 0,
                            fallback: Some(Fallback::MajorityClass),
                        },
                    );
                }
                PsadModel {
                    config: config.clone(),
                    scaler: prep.scaler.clone(),
                    cohort: prep.cohort.clone(),
                    global: global.clone(),
                    leaves: BTreeMap::new(),
                    report,
                }
            })
            .collect());
    }

    let mut losses: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let (global, trace) = pretrain_global(&prep.x, &prep.labels, config)?;
    losses.insert("global".into(), trace);

    let mut contexts: BTreeMap<Context, Option<FusedNet>> = BTreeMap::new();
    if variants.iter().any(|v| v.context) {
        for c in Context::ALL {
            let (x, y) = prep.subset(|i| prep.contexts[i] == c);
            let net = match finetune_context(&global, c, &x, &y, config) {
                Ok((net, trace)) => {
                    losses.insert(context_label(c), trace);
                    Some(net)
                }
                Err(Error::EmptySubset(_)) => None,
                Err(e) => return Err(e),
            };
            contexts.insert(c, net);
        }
    }

    let mut groups: BTreeMap<LeafKey, Option<FusedNet>> = BTreeMap::new();
    for v in variants.iter().filter(|v| v.group) {
        for key in LeafKey::all(*v) {
            if groups.contains_key(&key) {
                continue;
            }
            let base = match key.context {
                Some(c) => match &contexts[&c] {
                    Some(net) => net,
                    None => {
                        groups.insert(key, None);
                        continue;
                    }
                },
                None => &global,
            };
            let (x, y) = prep.subset(|i| key.matches(prep.contexts[i], prep.groups[i]));
            let net = match finetune_group(base, key, &x, &y, config) {
                Ok((net, trace)) => {
                    losses.insert(format!("group/{key}"), trace);
                    Some(net)
                }
                Err(Error::EmptySubset(_)) => None,
                Err(e) => return Err(e),
            };
            groups.insert(key, net);
        }
    }

    let alpha: BTreeMap<ViewKind, f64> = global.fusion.branches.iter().map(|b| (b.view, b.alpha)).collect();
    let keep_fusion = config.train_fusion_after_pretrain;
    let mut models = Vec::with_capacity(variants.len());
    for &stages in variants {
        let mut report = base_report(stages);
        report.alpha = alpha.clone();
        report.losses.insert("global".into(), losses["global"].clone());
        let mut leaves = BTreeMap::new();
        for key in LeafKey::all(stages) {
            let n_train = (0..prep.len())
                .filter(|&i| key.matches(prep.contexts[i], prep.groups[i]))
                .count();
            let ctx_net = key.context.and_then(|c| contexts[&c].as_ref());
            let (net, fallback) = match (key.context, key.group) {
                (None, None) => (&global, None),
                (Some(c), None) => match ctx_net {
                    Some(n) => {
                        report.losses.insert(context_label(c), losses[&context_label(c)].clone());
                        (n, None)
                    }
                    None => (&global, Some(Fallback::GlobalStack)),
                },
                (c, Some(_)) => {
                    if let Some(c) = c {
                        if ctx_net.is_some() {
                            report.losses.insert(context_label(c), losses[&context_label(c)].clone());
                        }
                    }
                    match (&groups[&key], ctx_net) {
                        (Some(n), _) => {
                            report.losses.insert(format!("group/{key}"), losses[&format!("group/{key}")].clone());
                            (n, None)
                        }
                        (None, Some(n)) => (n, Some(Fallback::ContextStack)),
                        (None, None) => (&global, Some(Fallback::GlobalStack)),
                    }
                }
            };
            if let Some(f) = fallback {
                log::warn!("leaf {key} has no training samples; falling back to {f:?}");
            }
            report.leaves.insert(key.to_string(), LeafSummary { n_train, fallback });
            leaves.insert(
                key,
                Leaf {
                    key,
                    n_train,
                    fallback,
                    fusion: keep_fusion.then(|| net.fusion.clone()),
                    stack: net.stack.clone(),
                },
            );
        }
        models.push(PsadModel {
            config: config.clone(),
            scaler: prep.scaler.clone(),
            cohort: prep.cohort.clone(),
            global: global.clone(),
            leaves,
            report,
        });
    }
    Ok(models)
}

// ---------------------------------------------------------------------------
// Gradient verification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub instances: usize,
    pub parameters: usize,
    pub max_rel_error: f64,
}

pub const GRAD_CHECK_STEP: f64 = 1e-5;
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

/// Relative error with a small absolute floor so exact zeros compare cleanly.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// A random fused network frozen as in one of the training stages:
/// 0 pretraining, 1 context fine-tune, 2 group fine-tune, 3 group fine-tune
/// with a trainable fusion block behind frozen layers.
pub fn random_stage_net(rng: &mut impl Rng, stage: usize) -> FusedNet {
    let k = rng.random_range(2..=6);
    let mut fusion = FusionBlock::random(&ViewKind::ALL, k, 1.0, rng);
    for b in &mut fusion.branches {
        b.alpha = rng.random_range(0.5..1.5);
    }
    let n_hidden = match stage {
        0 => 2,
        1 => 3,
        _ => 4,
    };
    let mut widths: Vec<usize> = (0..n_hidden).map(|_| rng.random_range(2..=6)).collect();
    widths.push(1);
    let mut stack = NetworkStack::random(k, &widths, Activation::ReLU, Activation::Sigmoid, 1.0, rng);
    for li in 0..stack.len() {
        for b in stack.layer_mut(li).bias.iter_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    for br in &mut fusion.branches {
        for b in br.projection.layer_mut(0).bias.iter_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    if stage > 0 {
        stack.freeze_prefix(n_hidden - 1).expect("prefix within stack");
        if stage < 3 {
            fusion.freeze();
        }
    }
    FusedNet { fusion, stack }
}

/// Compare analytic gradients of mean BCE with central differences on
/// random fused networks covering every training stage.
pub fn gradient_check(instances: usize, seed: u64) -> Result<GradCheck> {
    let mut worst: f64 = 0.0;
    let mut parameters = 0;
    for inst in 0..instances {
        let mut rng = seed::rng(seed::derive_indexed(seed, "gradcheck", inst as u64));
        let net = random_stage_net(&mut rng, inst % 4);
        let b = 4;
        let x: Vec<f64> = (0..b * N_FEATURES).map(|_| rng.random_range(0.0..1.0)).collect();
        let y: Vec<f64> = (0..b).map(|i| (i % 2) as f64).collect();
        let cache = net.forward_batch(&x, b)?;
        let (_, up) = batch_bce(cache.output(), &y);
        let analytic = net.backward(&cache, &up)?.flatten();
        let loss = |n: &FusedNet| -> Result<f64> { Ok(batch_bce(&n.predict_batch(&x, b)?, &y).0) };
        for (i, a) in analytic.iter().enumerate() {
            let mut plus = net.clone();
            let mut minus = net.clone();
            plus.nudge(i, GRAD_CHECK_STEP);
            minus.nudge(i, -GRAD_CHECK_STEP);
            let numeric = (loss(&plus)? - loss(&minus)?) / (2.0 * GRAD_CHECK_STEP);
            worst = worst.max(relative_error(*a, numeric));
        }
        parameters += analytic.len();
    }
    Ok(GradCheck {
        instances,
        parameters,
        max_rel_error: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::DenseLayer;

    fn identity_branch(view: ViewKind, alpha: f64) -> Branch {
        Branch {
            view,
            alpha,
            projection: NetworkStack::new(view.dim(), vec![DenseLayer::identity(view.dim())]).unwrap(),
        }
    }

    fn row() -> Vec<f64> {
        (0..N_FEATURES).map(|i| i as f64 / 20.0).collect()
    }

    #[test]
    fn single_identity_view_passes_features_through() {
        let f = FusionBlock::new(8, vec![identity_branch(ViewKind::Acoustic, 1.0)]).unwrap();
        assert_eq!(f.fuse(&row()).unwrap(), &row()[0..8]);
    }

    #[test]
    fn equal_branches_with_half_weights_average() {
        // Two views projected onto the same constant vector.
        let constant = |view: ViewKind| {
            let mut l = DenseLayer::identity(3);
            l.cols = view.dim();
            l.weights = vec![0.0; 3 * view.dim()];
            l.bias = vec![0.2, -0.4, 1.5];
            Branch {
                view,
                alpha: 0.5,
                projection: NetworkStack::new(view.dim(), vec![l]).unwrap(),
            }
        };
        let f = FusionBlock::new(3, vec![constant(ViewKind::Syntactic), constant(ViewKind::Lexical)]).unwrap();
        let h = f.fuse(&row()).unwrap();
        for (a, b) in h.iter().zip([0.2, -0.4, 1.5]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn fusion_shape_checked() {
        let f = FusionBlock::random(&ViewKind::ALL, 4, 1.0, &mut seed::rng(0));
        assert!(matches!(f.fuse(&[0.0; 5]), Err(Error::ShapeMismatch(_))));
        let mut bad = f.clone();
        bad.branches[0].view = ViewKind::Lexical;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn fusion_gradients_match_finite_differences() {
        let mut rng = seed::rng(5);
        let net = random_stage_net(&mut rng, 0);
        assert!(!net.fusion.frozen);
        let r = gradient_check(8, 11).unwrap();
        assert!(r.max_rel_error <= GRAD_CHECK_TOLERANCE, "{r:?}");
    }

    #[test]
    fn dropping_a_view_drops_its_coefficient() {
        let c = PsadConfig::default().without_view(ViewKind::Lexical);
        let f = FusionBlock::random(&c.views, 16, 1.0, &mut seed::rng(1));
        assert_eq!(f.alphas().len(), 2);
        assert!(f.alpha(ViewKind::Lexical).is_none());
    }

    #[test]
    fn leaf_keys() {
        assert_eq!(LeafKey::all(Stages::FULL).len(), 4);
        assert_eq!(LeafKey::all(Stages::NO_GROUP).len(), 2);
        assert_eq!(LeafKey::all(Stages::NO_CONTEXT).len(), 2);
        assert_eq!(LeafKey::all(Stages::GLOBAL_ONLY).len(), 1);
        assert_eq!(LeafKey::new(Context::Evaluative, Group::HighSx).to_string(), "evaluative_high_sx");
        let k = LeafKey::route(Stages::NO_CONTEXT, Context::Evaluative, Group::LowSx);
        assert_eq!(k.to_string(), "any_low_sx");
        assert!(k.matches(Context::NonEvaluative, Group::LowSx));
        assert!(!k.matches(Context::NonEvaluative, Group::HighSx));
    }

    #[test]
    fn threshold_is_inclusive() {
        assert!(decide(0.5).positive);
        assert!(!decide(0.499_999).positive);
    }

    #[test]
    fn config_validation() {
        let mut c = PsadConfig::default();
        assert!(c.validate().is_ok());
        c.views.clear();
        assert!(c.validate().is_err());
        let c = PsadConfig {
            global_widths: vec![],
            ..PsadConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
