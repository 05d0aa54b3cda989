//! Leave-one-sample-out evaluation, baselines, grid search and ablations.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::Group;
use crate::dataset::{loocv_folds, Context, Corpus};
use crate::error::{Error, Result};
use crate::featurize::{FeatureSet, ViewKind, N_FEATURES};
use crate::jsonfile::{to_pretty, write_pretty};
use crate::nn::{self, Activation, NetworkStack, TrainConfig};
use crate::psad::{
    self, decide, train_fused, train_variants, FusedNet, FusionBlock, LeafKey, Prepared, PsadConfig, Query,
    Stages,
};
use crate::seed;

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Percentages in [0, 100]; precision and F1 are macro averages over both classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub f1: f64,
}

/// `pairs` holds (predicted, actual).
pub fn compute_metrics(pairs: &[(bool, bool)]) -> Result<Metrics> {
    if pairs.is_empty() {
        return Err(Error::EmptyPredictions);
    }
    // confusion[actual][predicted]
    let mut confusion = [[0usize; 2]; 2];
    for &(p, a) in pairs {
        confusion[usize::from(a)][usize::from(p)] += 1;
    }
    let total = pairs.len() as f64;
    let correct = (confusion[0][0] + confusion[1][1]) as f64;
    let mut precision = 0.0;
    let mut f1 = 0.0;
    for c in 0..2 {
        let tp = confusion[c][c] as f64;
        let predicted = (confusion[0][c] + confusion[1][c]) as f64;
        let actual = (confusion[c][0] + confusion[c][1]) as f64;
        let p = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let r = if actual > 0.0 { tp / actual } else { 0.0 };
        precision += p;
        f1 += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    Ok(Metrics {
        accuracy: 100.0 * correct / total,
        precision: 100.0 * precision / 2.0,
        f1: 100.0 * f1 / 2.0,
    })
}

// ---------------------------------------------------------------------------
// Trainers
// ---------------------------------------------------------------------------

/// One method's answer for a held-out sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub probability: f64,
    pub leaf: Option<String>,
    pub flags: Vec<String>,
}

impl Outcome {
    fn plain(probability: f64) -> Self {
        Self {
            probability,
            leaf: None,
            flags: Vec::new(),
        }
    }
}

/// A method evaluated under LOOCV. One training run may answer for several
/// variants at once (ablations share their common stages).
pub trait Trainer: Sync {
    fn name(&self) -> String;
    fn variants(&self) -> Vec<String>;
    fn config(&self) -> serde_json::Value;
    /// Train on `prep` and answer for `query`, one outcome per variant.
    fn fit_predict(&self, prep: &Prepared, query: &Query, seed: u64) -> Result<Vec<Outcome>>;
}

fn one_hot_input(x: &[f64], context: Context, group: Group) -> Vec<f64> {
    let mut v = Vec::with_capacity(N_FEATURES + 4);
    v.extend_from_slice(x);
    v.extend(Context::ALL.iter().map(|c| f64::from(u8::from(*c == context))));
    v.extend(Group::ALL.iter().map(|g| f64::from(u8::from(*g == group))));
    v
}

/// PSAD, optionally with several stage combinations trained together.
#[derive(Debug, Clone)]
pub struct PsadTrainer {
    pub config: PsadConfig,
    pub variants: Vec<Stages>,
}

impl PsadTrainer {
    pub fn new(config: PsadConfig) -> Self {
        Self {
            config,
            variants: vec![Stages::FULL],
        }
    }

    pub fn layer_ablation(config: PsadConfig) -> Self {
        Self {
            config,
            variants: vec![Stages::FULL, Stages::NO_GROUP, Stages::NO_CONTEXT, Stages::GLOBAL_ONLY],
        }
    }
}

fn with_seed(config: &PsadConfig, seed: u64) -> PsadConfig {
    let mut c = config.clone();
    c.train.seed = seed;
    c
}

impl Trainer for PsadTrainer {
    fn name(&self) -> String {
        "psad".into()
    }

    fn variants(&self) -> Vec<String> {
        self.variants.iter().map(|s| s.name().to_string()).collect()
    }

    fn config(&self) -> serde_json::Value {
        serde_json::to_value(&self.config).expect("config serializes")
    }

    fn fit_predict(&self, prep: &Prepared, query: &Query, seed: u64) -> Result<Vec<Outcome>> {
        let models = train_variants(prep, &with_seed(&self.config, seed), &self.variants)?;
        models
            .iter()
            .map(|m| {
                let p = m.predict_query(query)?;
                Ok(Outcome {
                    probability: p.probability,
                    leaf: Some(p.leaf),
                    flags: p.fallback.map(|f| vec![format!("fallback:{}", f.as_str())]).unwrap_or_default(),
                })
            })
            .collect()
    }
}

/// Full PSAD plus one retrained model per removed view.
#[derive(Debug, Clone)]
pub struct ViewAblationTrainer {
    pub config: PsadConfig,
}

impl Trainer for ViewAblationTrainer {
    fn name(&self) -> String {
        "psad_views".into()
    }

    fn variants(&self) -> Vec<String> {
        let mut v = vec!["full".to_string()];
        v.extend(self.config.views.iter().map(|w| format!("without_{w}")));
        v
    }

    fn config(&self) -> serde_json::Value {
        serde_json::to_value(&self.config).expect("config serializes")
    }

    fn fit_predict(&self, prep: &Prepared, query: &Query, seed: u64) -> Result<Vec<Outcome>> {
        let mut configs = vec![with_seed(&self.config, seed)];
        configs.extend(self.config.views.iter().map(|v| with_seed(&self.config.without_view(*v), seed)));
        configs
            .iter()
            .map(|c| {
                let m = psad::train_psad(prep, c)?;
                let p = m.predict_query(query)?;
                Ok(Outcome {
                    probability: p.probability,
                    leaf: Some(p.leaf),
                    flags: Vec::new(),
                })
            })
            .collect()
    }
}

/// Euclidean k-nearest-neighbour vote over features plus one-hot context and group.
#[derive(Debug, Clone, Copy)]
pub struct KnnTrainer {
    pub k: usize,
}

impl KnnTrainer {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 || k.is_multiple_of(2) {
            return Err(Error::ConfigInvalid(format!("KNN needs an odd positive k, got {k}")));
        }
        Ok(Self { k })
    }
}

impl Trainer for KnnTrainer {
    fn name(&self) -> String {
        "knn".into()
    }

    fn variants(&self) -> Vec<String> {
        vec![format!("k{}", self.k)]
    }

    fn config(&self) -> serde_json::Value {
        serde_json::json!({ "k": self.k })
    }

    fn fit_predict(&self, prep: &Prepared, query: &Query, _seed: u64) -> Result<Vec<Outcome>> {
        let q = one_hot_input(&query.x, query.context, query.group);
        let mut dist: Vec<(f64, usize)> = (0..prep.len())
            .map(|i| {
                let r = one_hot_input(&prep.x[i], prep.contexts[i], prep.groups[i]);
                (r.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i)
            })
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let k = self.k.min(dist.len());
        let pos = dist[..k].iter().filter(|(_, i)| prep.labels[*i] >= 0.5).count();
        Ok(vec![Outcome::plain(pos as f64 / k as f64)])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub widths: Vec<usize>,
    pub train: TrainConfig,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            widths: vec![16; 4],
            train: TrainConfig::default(),
        }
    }
}

/// Plain MLP over features plus one-hot context and group; no routing or freezing.
#[derive(Debug, Clone)]
pub struct MlpTrainer {
    pub config: MlpConfig,
}

pub const MLP_INPUT_DIM: usize = N_FEATURES + 4;

pub fn mlp_stack(config: &MlpConfig, seed: u64) -> NetworkStack {
    let mut widths = config.widths.clone();
    widths.push(1);
    let mut rng = seed::stream(seed, "init/mlp");
    NetworkStack::random(
        MLP_INPUT_DIM,
        &widths,
        Activation::ReLU,
        Activation::Sigmoid,
        config.train.weight_init_scale,
        &mut rng,
    )
}

impl Trainer for MlpTrainer {
    fn name(&self) -> String {
        "mlp".into()
    }

    fn variants(&self) -> Vec<String> {
        vec![format!("depth{}", self.config.widths.len())]
    }

    fn config(&self) -> serde_json::Value {
        serde_json::to_value(&self.config).expect("config serializes")
    }

    fn fit_predict(&self, prep: &Prepared, query: &Query, seed: u64) -> Result<Vec<Outcome>> {
        let mut stack = mlp_stack(&self.config, seed);
        let inputs: Vec<Vec<f64>> = (0..prep.len())
            .map(|i| one_hot_input(&prep.x[i], prep.contexts[i], prep.groups[i]))
            .collect();
        let cfg = TrainConfig {
            seed: seed::derive(seed, "shuffle/mlp"),
            ..self.config.train
        };
        nn::train(&mut stack, &inputs, &prep.labels, &cfg)?;
        let p = stack.predict(&one_hot_input(&query.x, query.context, query.group))?[0];
        Ok(vec![Outcome::plain(p)])
    }
}

/// Training subsets smaller than this are flagged as low-data.
pub const LOW_DATA_SAMPLES: usize = 2;

/// One standalone fused network per routing key, trained only on that key's samples.
#[derive(Debug, Clone)]
pub struct SeparateTrainer {
    pub config: PsadConfig,
}

impl SeparateTrainer {
    /// Same depth as a PSAD leaf: global widths, then the context and group widths.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = self.config.global_widths.clone();
        w.push(self.config.context_width);
        w.push(self.config.group_width);
        w.push(1);
        w
    }
}

impl Trainer for SeparateTrainer {
    fn name(&self) -> String {
        "separate".into()
    }

    fn variants(&self) -> Vec<String> {
        vec!["per_key".into()]
    }

    fn config(&self) -> serde_json::Value {
        serde_json::to_value(&self.config).expect("config serializes")
    }

    fn fit_predict(&self, prep: &Prepared, query: &Query, seed: u64) -> Result<Vec<Outcome>> {
        let key = LeafKey::new(query.context, query.group);
        let idx: Vec<usize> = (0..prep.len())
            .filter(|&i| prep.contexts[i] == query.context && prep.groups[i] == query.group)
            .collect();
        let mut flags = Vec::new();
        if idx.len() < LOW_DATA_SAMPLES {
            flags.push("low_data".to_string());
        }
        if idx.is_empty() {
            // Nothing to learn from: answer with the training-set majority.
            flags.push("empty_subset".to_string());
            let pos = prep.labels.iter().filter(|y| **y >= 0.5).count();
            let p = if 2 * pos >= prep.len() { 1.0 } else { 0.0 };
            return Ok(vec![Outcome {
                probability: p,
                leaf: Some(key.to_string()),
                flags,
            }]);
        }
        let x: Vec<Vec<f64>> = idx.iter().map(|&i| prep.x[i].clone()).collect();
        let y: Vec<f64> = idx.iter().map(|&i| prep.labels[i]).collect();
        let scale = self.config.train.weight_init_scale;
        let mut rng = seed::stream(seed, &format!("init/separate/{key}"));
        let fusion = FusionBlock::random(&self.config.views, self.config.k_hidden, scale, &mut rng);
        let stack = NetworkStack::random(
            self.config.k_hidden,
            &self.widths(),
            Activation::ReLU,
            Activation::Sigmoid,
            scale,
            &mut rng,
        );
        let mut net = FusedNet::new(fusion, stack)?;
        let cfg = TrainConfig {
            seed: seed::derive(seed, &format!("shuffle/separate/{key}")),
            ..self.config.train
        };
        train_fused(&mut net, &x, &y, &cfg)?;
        Ok(vec![Outcome {
            probability: net.predict(&query.x)?,
            leaf: Some(key.to_string()),
            flags,
        }])
    }
}

// ---------------------------------------------------------------------------
// LOOCV
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPrediction {
    pub sample_id: String,
    pub context: Context,
    pub group: Group,
    pub probability: f64,
    pub predicted: bool,
    pub actual: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leaf: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

/// What each fold's fitting saw, for leakage auditing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAudit {
    pub held_out: String,
    /// Samples whose features entered scaler fitting and training.
    pub fit_samples: usize,
    pub held_out_in_fit: bool,
    /// Participants whose profiles entered cohort fitting.
    pub cohort_participants: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub variant: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub overall: Metrics,
    pub per_key: BTreeMap<String, Metrics>,
    pub predictions: Vec<FoldPrediction>,
    pub audit: Vec<FoldAudit>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        to_pretty(self)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_pretty(path, self)
    }

    /// Overall metrics recomputed from the stored predictions.
    pub fn recompute(&self) -> Result<Metrics> {
        compute_metrics(&self.predictions.iter().map(|p| (p.predicted, p.actual)).collect::<Vec<_>>())
    }
}

fn build_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::ConfigInvalid(format!("thread pool: {e}")))
}

/// Seed of fold `i` under master `seed`.
pub fn fold_seed(seed: u64, i: usize) -> u64 {
    seed::derive_indexed(seed, "fold", i as u64)
}

/// LOOCV for every variant of `trainer`: per fold the scaler, cohort model and
/// method are fit on the training samples only.
pub fn loocv_variants(
    corpus: &Corpus,
    features: &[FeatureSet],
    trainer: &dyn Trainer,
    seed: u64,
    jobs: usize,
) -> Result<Vec<EvalReport>> {
    if features.len() != corpus.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature rows for {} samples",
            features.len(),
            corpus.len()
        )));
    }
    let folds = loocv_folds(corpus)?;
    let run = |(i, fold): (usize, &crate::dataset::Fold)| -> Result<(FoldAudit, Query, Vec<Outcome>)> {
        let fs = fold_seed(seed, i);
        let prep = Prepared::fit(corpus, features, &fold.train, fs)?;
        let s = &corpus.samples[fold.test];
        let query = prep.query(&features[fold.test], s.context, &corpus.profiles[&s.participant_id])?;
        let audit = FoldAudit {
            held_out: s.sample_id.clone(),
            fit_samples: prep.ids.len(),
            held_out_in_fit: prep.ids.contains(&s.sample_id),
            cohort_participants: prep.cohort.training_ids.len(),
        };
        let outcomes = trainer.fit_predict(&prep, &query, seed::derive(fs, "method"))?;
        Ok((audit, query, outcomes))
    };
    let pool = build_pool(jobs)?;
    let results: Vec<(FoldAudit, Query, Vec<Outcome>)> =
        pool.install(|| folds.par_iter().enumerate().map(run).collect::<Result<Vec<_>>>())?;

    let names = trainer.variants();
    let mut reports = Vec::with_capacity(names.len());
    for (v, variant) in names.iter().enumerate() {
        let mut predictions = Vec::with_capacity(folds.len());
        for (fold, (_, query, outcomes)) in folds.iter().zip(&results) {
            let s = &corpus.samples[fold.test];
            let o = &outcomes[v];
            predictions.push(FoldPrediction {
                sample_id: s.sample_id.clone(),
                context: s.context,
                group: query.group,
                probability: o.probability,
                predicted: decide(o.probability).positive,
                actual: s.label().positive,
                leaf: o.leaf.clone(),
                flags: o.flags.clone(),
            });
        }
        let overall = compute_metrics(&predictions.iter().map(|p| (p.predicted, p.actual)).collect::<Vec<_>>())?;
        let mut per_key = BTreeMap::new();
        for c in Context::ALL {
            for g in Group::ALL {
                let pairs: Vec<(bool, bool)> = predictions
                    .iter()
                    .filter(|p| p.context == c && p.group == g)
                    .map(|p| (p.predicted, p.actual))
                    .collect();
                if !pairs.is_empty() {
                    per_key.insert(LeafKey::new(c, g).to_string(), compute_metrics(&pairs)?);
                }
            }
        }
        reports.push(EvalReport {
            method: trainer.name(),
            variant: variant.clone(),
            seed,
            config: trainer.config(),
            overall,
            per_key,
            predictions,
            audit: results.iter().map(|r| r.0.clone()).collect(),
        });
    }
    Ok(reports)
}

pub fn loocv_run(
    corpus: &Corpus,
    features: &[FeatureSet],
    trainer: &dyn Trainer,
    seed: u64,
    jobs: usize,
) -> Result<EvalReport> {
    Ok(loocv_variants(corpus, features, trainer, seed, jobs)?.remove(0))
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperGrid {
    pub learning_rates: Vec<f64>,
    pub epoch_counts: Vec<usize>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        Self {
            learning_rates: vec![0.1, 0.03, 0.01, 0.003],
            epoch_counts: vec![100, 300, 1000],
        }
    }
}

impl HyperGrid {
    pub fn points(&self) -> Result<Vec<GridPoint>> {
        if self.learning_rates.is_empty() || self.epoch_counts.is_empty() {
            return Err(Error::EmptyGrid);
        }
        Ok(self
            .learning_rates
            .iter()
            .flat_map(|&learning_rate| {
                self.epoch_counts.iter().map(move |&epochs| GridPoint { learning_rate, epochs })
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub learning_rate: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub point: GridPoint,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: GridPoint,
    pub best_metrics: Metrics,
    pub entries: Vec<GridEntry>,
}

/// Index of the best entry: highest F1, then highest accuracy, then lowest
/// learning rate; remaining ties keep grid order.
pub fn best_entry(entries: &[GridEntry]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, e) in entries.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => {
                let o = &entries[b];
                (e.metrics.f1, e.metrics.accuracy, -e.point.learning_rate)
                    .partial_cmp(&(o.metrics.f1, o.metrics.accuracy, -o.point.learning_rate))
                    == Some(std::cmp::Ordering::Greater)
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// Exhaustive LOOCV over the grid. `make` builds the trainer for one point.
pub fn grid_search<F>(
    corpus: &Corpus,
    features: &[FeatureSet],
    grid: &HyperGrid,
    make: F,
    seed: u64,
    jobs: usize,
) -> Result<GridResult>
where
    F: Fn(GridPoint) -> Box<dyn Trainer>,
{
    let points = grid.points()?;
    let mut entries = Vec::with_capacity(points.len());
    for point in points {
        let trainer = make(point);
        let report = loocv_run(corpus, features, trainer.as_ref(), seed, jobs)?;
        log::info!(
            "grid lr={} epochs={} -> f1 {:.2}",
            point.learning_rate,
            point.epochs,
            report.overall.f1
        );
        entries.push(GridEntry {
            point,
            metrics: report.overall,
        });
    }
    let b = best_entry(&entries).ok_or(Error::EmptyGrid)?;
    Ok(GridResult {
        best: entries[b].point,
        best_metrics: entries[b].metrics,
        entries,
    })
}

pub fn apply_point(train: &TrainConfig, point: GridPoint) -> TrainConfig {
    TrainConfig {
        learning_rate: point.learning_rate,
        epochs: point.epochs,
        ..*train
    }
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantMetrics {
    pub variant: String,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub kind: String,
    pub seed: u64,
    pub config: PsadConfig,
    pub results: Vec<VariantMetrics>,
    /// Learned fusion coefficients of the full model trained on every sample.
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub alpha: BTreeMap<ViewKind, f64>,
}

impl AblationReport {
    pub fn f1(&self, variant: &str) -> Option<f64> {
        self.results.iter().find(|r| r.variant == variant).map(|r| r.metrics.f1)
    }
}

fn summarize(reports: &[EvalReport]) -> Vec<VariantMetrics> {
    reports
        .iter()
        .map(|r| VariantMetrics {
            variant: r.variant.clone(),
            metrics: r.overall,
        })
        .collect()
}

/// Full model against models with one fine-tuning stage (or both) skipped.
pub fn ablate_layers(
    corpus: &Corpus,
    features: &[FeatureSet],
    config: &PsadConfig,
    seed: u64,
    jobs: usize,
) -> Result<AblationReport> {
    let reports = loocv_variants(corpus, features, &PsadTrainer::layer_ablation(config.clone()), seed, jobs)?;
    Ok(AblationReport {
        kind: "layers".into(),
        seed,
        config: config.clone(),
        results: summarize(&reports),
        alpha: BTreeMap::new(),
    })
}

/// Full model against retrained models that each drop one view.
pub fn ablate_views(
    corpus: &Corpus,
    features: &[FeatureSet],
    config: &PsadConfig,
    seed: u64,
    jobs: usize,
) -> Result<AblationReport> {
    let reports = loocv_variants(corpus, features, &ViewAblationTrainer { config: config.clone() }, seed, jobs)?;
    let mut c = config.clone();
    c.train.seed = seed;
    let model = psad::train_psad_corpus(corpus, features, &c)?;
    Ok(AblationReport {
        kind: "views".into(),
        seed,
        config: config.clone(),
        results: summarize(&reports),
        alpha: model.report.alpha.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparateReport {
    pub seed: u64,
    pub config: PsadConfig,
    pub psad: Metrics,
    pub separate: Metrics,
    pub psad_per_key: BTreeMap<String, Metrics>,
    pub separate_per_key: BTreeMap<String, Metrics>,
    /// Routing keys whose separate model had fewer than two training samples in some fold.
    pub low_data_keys: Vec<String>,
}

/// PSAD against four independently trained per-key models.
pub fn separate_models_experiment(
    corpus: &Corpus,
    features: &[FeatureSet],
    config: &PsadConfig,
    seed: u64,
    jobs: usize,
) -> Result<SeparateReport> {
    let p = loocv_run(corpus, features, &PsadTrainer::new(config.clone()), seed, jobs)?;
    let s = loocv_run(corpus, features, &SeparateTrainer { config: config.clone() }, seed, jobs)?;
    Ok(separate_report(config, seed, &p, &s))
}

pub fn separate_report(config: &PsadConfig, seed: u64, psad: &EvalReport, separate: &EvalReport) -> SeparateReport {
    let mut low: Vec<String> = separate
        .predictions
        .iter()
        .filter(|p| p.flags.iter().any(|f| f == "low_data"))
        .filter_map(|p| p.leaf.clone())
        .collect();
    low.sort();
    low.dedup();
    SeparateReport {
        seed,
        config: config.clone(),
        psad: psad.overall,
        separate: separate.overall,
        psad_per_key: psad.per_key.clone(),
        separate_per_key: separate.per_key.clone(),
        low_data_keys: low,
    }
}

/// One CSV row per report: method, variant and the three metrics.
pub fn summary_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from("method,variant,accuracy,precision,f1\n");
    for r in reports {
        s.push_str(&format!(
            "{},{},{:.4},{:.4},{:.4}\n",
            r.method, r.variant, r.overall.accuracy, r.overall.precision, r.overall.f1
        ));
    }
    s
}
