use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use psadkit::cohort::{cohort_report, fit_cohorts};
use psadkit::dataset::{load_corpus, write_feature_csv, Corpus, ParticipantProfile};
use psadkit::eval::{
    ablate_layers, ablate_views, apply_point, grid_search, loocv_run, separate_models_experiment, summary_csv,
    HyperGrid, KnnTrainer, MlpConfig, MlpTrainer, PsadTrainer, Trainer,
};
use psadkit::featurize::{featurize_corpus, FeatureSet, FrameParams, LexiconSet};
use psadkit::jsonfile::{read_json, write_pretty, write_versioned};
use psadkit::psad::{train_psad_corpus, PsadConfig, GRAD_CHECK_TOLERANCE};
use psadkit::stats::context_report_all_samples;
use psadkit::synth::{gen_corpus, write_corpus, EffectConfig, OutputMode};
use psadkit::{psad, Error};

#[derive(Parser)]
#[command(name = "psadkit", version, about = "State anxiety detection toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Corpus manifest (JSON).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Run configuration file (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for folds and grid points.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory of lexicon word lists overriding the built-in ones.
    #[arg(long)]
    lexicon_dir: Option<PathBuf>,
    /// Hyperparameter grid (JSON).
    #[arg(long)]
    grid: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate a corpus, write a summary.
    Ingest(Common),
    /// Extract the 17 features for every sample.
    Featurize(Common),
    Stats {
        #[command(subcommand)]
        command: StatsCommand,
    },
    Cohort {
        #[command(subcommand)]
        command: CohortCommand,
    },
    Train {
        #[command(subcommand)]
        command: TrainCommand,
    },
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
    Synth {
        #[command(subcommand)]
        command: SynthCommand,
    },
    Selfcheck {
        #[command(subcommand)]
        command: SelfcheckCommand,
    },
}

#[derive(Subcommand)]
enum StatsCommand {
    /// Paired evaluative vs non-evaluative comparison per feature.
    ContextReport(Common),
}

#[derive(Subcommand)]
enum CohortCommand {
    /// Cluster participants by their trait scales.
    Fit {
        /// JSON list of profiles; defaults to the corpus profiles.
        #[arg(long)]
        profiles: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand)]
enum TrainCommand {
    /// Train a model bundle on the whole corpus.
    Psad(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Psad,
    Knn,
    Mlp,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblationKind {
    Views,
    Layers,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Leave-one-out evaluation of one method.
    Run {
        #[arg(long, value_enum)]
        method: Method,
        #[command(flatten)]
        common: Common,
    },
    /// View or layer ablation of the detector.
    Ablate {
        #[arg(long, value_enum)]
        kind: AblationKind,
        #[command(flatten)]
        common: Common,
    },
    /// Detector against four separately trained per-key models.
    Separate(Common),
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Write a synthetic corpus. `--config` takes an effect configuration.
    Generate {
        /// Emit WAV audio and transcripts instead of a feature table.
        #[arg(long)]
        raw: bool,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand)]
enum SelfcheckCommand {
    /// Compare analytic and finite-difference gradients.
    Grad {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Config file merged with flags. Execution-only settings (jobs, output
/// directory) are left out of serialized reports so reruns compare equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    corpus: Option<PathBuf>,
    seed: u64,
    #[serde(skip_serializing)]
    jobs: usize,
    #[serde(skip_serializing)]
    out: Option<PathBuf>,
    lexicon_dir: Option<PathBuf>,
    frame: FrameParams,
    grid: Option<HyperGrid>,
    psad: PsadConfig,
    mlp: MlpConfig,
    knn_k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            seed: 0,
            jobs: 1,
            out: None,
            lexicon_dir: None,
            frame: FrameParams::default(),
            grid: None,
            psad: PsadConfig::default(),
            mlp: MlpConfig::default(),
            knn_k: 5,
        }
    }
}

impl RunConfig {
    fn resolve(c: &Common) -> psadkit::Result<Self> {
        let mut rc: RunConfig = match &c.config {
            Some(p) => read_json(p)?,
            None => RunConfig::default(),
        };
        if c.corpus.is_some() {
            rc.corpus.clone_from(&c.corpus);
        }
        if let Some(s) = c.seed {
            rc.seed = s;
        }
        if let Some(j) = c.jobs {
            rc.jobs = j;
        }
        if c.out.is_some() {
            rc.out.clone_from(&c.out);
        }
        if c.lexicon_dir.is_some() {
            rc.lexicon_dir.clone_from(&c.lexicon_dir);
        }
        if let Some(g) = &c.grid {
            rc.grid = Some(read_json(g)?);
        }
        if rc.jobs == 0 {
            return Err(Error::ConfigInvalid("jobs must be at least 1".into()));
        }
        rc.psad.train.seed = rc.seed;
        rc.mlp.train.seed = rc.seed;
        rc.psad.validate()?;
        rc.mlp.train.validate()?;
        Ok(rc)
    }

    fn corpus(&self) -> psadkit::Result<Corpus> {
        let p = self
            .corpus
            .as_ref()
            .ok_or_else(|| Error::ConfigInvalid("no corpus given (use --corpus)".into()))?;
        load_corpus(p)
    }

    fn out_dir(&self) -> psadkit::Result<&Path> {
        let dir = self
            .out
            .as_deref()
            .ok_or_else(|| Error::ConfigInvalid("no output directory given (use --out)".into()))?;
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        Ok(dir)
    }

    fn lexicons(&self) -> psadkit::Result<LexiconSet> {
        match &self.lexicon_dir {
            Some(d) => LexiconSet::from_dir(d),
            None => Ok(LexiconSet::builtin()),
        }
    }

    fn features(&self, corpus: &Corpus) -> psadkit::Result<Vec<FeatureSet>> {
        Ok(featurize_corpus(corpus, &self.lexicons()?, self.frame)?.0)
    }
}

/// A report body with the resolved configuration and seed alongside.
#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    run_config: &'a RunConfig,
    seed: u64,
    #[serde(flatten)]
    body: T,
}

fn write_report<T: Serialize>(rc: &RunConfig, path: &Path, body: T) -> psadkit::Result<()> {
    write_versioned(
        path,
        &Envelope {
            run_config: rc,
            seed: rc.seed,
            body,
        },
    )
}

fn write_text(path: &Path, text: &str) -> psadkit::Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

#[derive(Serialize)]
struct CorpusSummary {
    samples: usize,
    participants: usize,
    dual_context_participants: usize,
    positive: usize,
    per_context: Vec<(String, usize)>,
}

fn ingest(c: &Common) -> psadkit::Result<()> {
    let rc = RunConfig::resolve(c)?;
    let corpus = rc.corpus()?;
    let per_context = psadkit::dataset::Context::ALL
        .iter()
        .map(|ctx| {
            (
                ctx.as_str().to_string(),
                corpus.samples.iter().filter(|s| s.context == *ctx).count(),
            )
        })
        .collect();
    let summary = CorpusSummary {
        samples: corpus.len(),
        participants: corpus.profiles.len(),
        dual_context_participants: corpus.dual_context_participants().len(),
        positive: corpus.samples.iter().filter(|s| s.label().positive).count(),
        per_context,
    };
    println!(
        "{} samples, {} participants, {} in both contexts",
        summary.samples, summary.participants, summary.dual_context_participants
    );
    write_report(&rc, &rc.out_dir()?.join("corpus_summary.json"), summary)
}

fn featurize(c: &Common) -> psadkit::Result<()> {
    let rc = RunConfig::resolve(c)?;
    let corpus = rc.corpus()?;
    let (features, notes) = featurize_corpus(&corpus, &rc.lexicons()?, rc.frame)?;
    let out = rc.out_dir()?;
    let rows: Vec<(String, FeatureSet)> = corpus
        .samples
        .iter()
        .zip(features)
        .map(|(s, f)| (s.sample_id.clone(), f))
        .collect();
    write_feature_csv(&out.join("features.csv"), &rows)?;
    write_report(&rc, &out.join("extraction.json"), serde_json::json!({ "notes": notes }))
}

fn context_report_cmd(c: &Common) -> psadkit::Result<()> {
    let rc = RunConfig::resolve(c)?;
    let corpus = rc.corpus()?;
    let features = rc.features(&corpus)?;
    let report = context_report_all_samples(&corpus, &features)?;
    let out = rc.out_dir()?;
    print!("{}", report.to_csv());
    report.write_csv(&out.join("context_report.csv"))?;
    write_report(&rc, &out.join("context_report.json"), &report)
}

fn cohort_fit(profiles: Option<&Path>, c: &Common) -> psadkit::Result<()> {
    let rc = RunConfig::resolve(c)?;
    let profiles: Vec<ParticipantProfile> = match profiles {
        Some(p) => read_json(p)?,
        None => rc.corpus()?.profiles.into_values().collect(),
    };
    let model = fit_cohorts(&profiles, rc.seed)?;
    let report = cohort_report(&model, &profiles)?;
    let out = rc.out_dir()?;
    println!("chosen k = {}", report.chosen_k);
    write_versioned(&out.join("cohort.json"), &model)?;
    write_report(&rc, &out.join("cohort_report.json"), &report)
}

fn train_psad_cmd(c: &Common) -> psadkit::Result<()> {
    let rc = RunConfig::resolve(c)?;
    let corpus = rc.corpus()?;
    let features = rc.features(&corpus)?;
    let model = train_psad_corpus(&corpus, &features, &rc.psad)?;
    let out = rc.out_dir()?;
    model.save_bundle(&out.join("model"))?;
    for (view, a) in &model.report.alpha {
        println!("alpha {view} = {a:.4}");
    }
    write_report(&rc, &out.join("train_report.json"), &model.report)
}

fn trainer_for(method: Method, rc: &RunConfig) -> psadkit::Result<Box<dyn Trainer>> {
    Ok(match method {
        Method::Psad => Box::new(PsadTrainer::new(rc.psad.clone())),
        Method::Mlp => Box::new(MlpTrainer {
            config: rc.mlp.clone(),
        }),
        Method::Knn => Box::new(KnnTrainer::new(rc.knn_k)?),
    })
}

fn eval_run(method: Method, c: &Common) -> psadkit::Result<()> {
    let mut rc = RunConfig::resolve(c)?;
    let corpus = rc.corpus()?;
    let features = rc.features(&corpus)?;
    let out = rc.out_dir()?.to_path_buf();
    let mut grid_result = None;
    if let (Some(grid), Method::Psad | Method::Mlp) = (&rc.grid, method) {
        let base = rc.clone();
        let make = |point| -> Box<dyn Trainer> {
            match method {
                Method::Psad => {
                    let mut cfg = base.psad.clone();
                    cfg.train = apply_point(&cfg.train, point);
                    Box::new(PsadTrainer::new(cfg))
                }
                _ => {
                    let mut cfg: MlpConfig = base.mlp.clone();
                    cfg.train = apply_point(&cfg.train, point);
                    Box::new(MlpTrainer { config: cfg })
                }
            }
        };
        let result = grid_search(&corpus, &features, grid, make, rc.seed, rc.jobs)?;
        match method {
            Method::Psad => rc.psad.train = apply_point(&rc.psad.train, result.best),
            _ => rc.mlp.train = apply_point(&rc.mlp.train, result.best),
        }
        grid_result = Some(result);
    }
    let trainer = trainer_for(method, &rc)?;
    let report = loocv_run(&corpus, &features, trainer.as_ref(), rc.seed, rc.jobs)?;
    println!(
        "{} accuracy {:.2} precision {:.2} f1 {:.2}",
        report.method, report.overall.accuracy, report.overall.precision, report.overall.f1
    );
    if let Some(g) = &grid_result {
        write_report(&rc, &out.join("grid.json"), g)?;
    }
    write_text(&out.join("summary.csv"), &summary_csv(std::slice::from_ref(&report)))?;
    write_report(&rc, &out.join("report.json"), &report)
}

fn eval_ablate(kind: AblationKind, c: &Common) -> psadkit::Result<()> {
    let rc = RunConfig::resolve(c)?;
    let corpus = rc.corpus()?;
    let features = rc.features(&corpus)?;
    let report = match kind {
        AblationKind::Layers => ablate_layers(&corpus, &features, &rc.psad, rc.seed, rc.jobs)?,
        AblationKind::Views => ablate_views(&corpus, &features, &rc.psad, rc.seed, rc.jobs)?,
    };
    for r in &report.results {
        println!("{} f1 {:.2}", r.variant, r.metrics.f1);
    }
    write_report(&rc, &rc.out_dir()?.join("ablation.json"), &report)
}

fn eval_separate(c: &Common) -> psadkit::Result<()> {
    let rc = RunConfig::resolve(c)?;
    let corpus = rc.corpus()?;
    let features = rc.features(&corpus)?;
    let report = separate_models_experiment(&corpus, &features, &rc.psad, rc.seed, rc.jobs)?;
    println!("psad f1 {:.2} separate f1 {:.2}", report.psad.f1, report.separate.f1);
    write_report(&rc, &rc.out_dir()?.join("separate.json"), &report)
}

fn synth_generate(raw: bool, c: &Common) -> psadkit::Result<()> {
    let mut effects: EffectConfig = match &c.config {
        Some(p) => read_json(p)?,
        None => EffectConfig::default(),
    };
    if let Some(s) = c.seed {
        effects.seed = s;
    }
    let out = c
        .out
        .as_deref()
        .ok_or_else(|| Error::ConfigInvalid("no output directory given (use --out)".into()))?;
    let (corpus, truth) = gen_corpus(&effects)?;
    let mode = if raw { OutputMode::Raw } else { OutputMode::Features };
    let manifest = write_corpus(out, &corpus, &truth, mode, effects.seed)?;
    write_pretty(&out.join("effects.json"), &effects)?;
    println!("wrote {} samples to {}", corpus.len(), manifest.display());
    Ok(())
}

fn selfcheck_grad(instances: usize, seed: u64) -> psadkit::Result<bool> {
    let check = psad::gradient_check(instances, seed)?;
    println!(
        "max relative error {:.3e} over {} instances ({} parameters)",
        check.max_rel_error, check.instances, check.parameters
    );
    Ok(check.max_rel_error <= GRAD_CHECK_TOLERANCE)
}

fn run(cli: Cli) -> psadkit::Result<bool> {
    match cli.command {
        Command::Ingest(c) => ingest(&c)?,
        Command::Featurize(c) => featurize(&c)?,
        Command::Stats {
            command: StatsCommand::ContextReport(c),
        } => context_report_cmd(&c)?,
        Command::Cohort {
            command: CohortCommand::Fit { profiles, common },
        } => cohort_fit(profiles.as_deref(), &common)?,
        Command::Train {
            command: TrainCommand::Psad(c),
        } => train_psad_cmd(&c)?,
        Command::Eval { command } => match command {
            EvalCommand::Run { method, common } => eval_run(method, &common)?,
            EvalCommand::Ablate { kind, common } => eval_ablate(kind, &common)?,
            EvalCommand::Separate(c) => eval_separate(&c)?,
        },
        Command::Synth {
            command: SynthCommand::Generate { raw, common },
        } => synth_generate(raw, &common)?,
        Command::Selfcheck {
            command: SelfcheckCommand::Grad { instances, seed },
        } => return selfcheck_grad(instances, seed),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PSADKIT_LOG", "error")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
