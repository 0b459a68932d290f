//! `tfup` command-line interface.
//!
//! Every command accepts the run-configuration flags, optionally on top of a
//! TOML file given with `--config`; flags win over file values. Each output
//! artifact gets a `<output>.config.toml` sidecar holding the effective
//! configuration.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use crate::adapter::{self, load_checkpoint, save_checkpoint, Checkpoint, ModeAccuracy};
use crate::cache::{build_cache, load_cache, save_cache, CacheModel};
use crate::config::{
    Eq4Scope, FilterStrategy, LogitScale, LrSchedule, OptimizerKind, RunConfig,
    SimilarityMeasure, TfuptMode,
};
use crate::embedding::{load_normalized, DatasetManifest, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::eval::{self, emit_report, evaluate, ground_truth, EvalData, SweepGrid};
use crate::msm::tfup_classify;
use crate::synthetic::{generate_synthetic, SyntheticSpec};
use crate::zeroshot::{zero_shot_classify, PredictionBatch};

#[derive(Debug, Parser)]
#[command(name = "tfup", version, args_override_self = true, about = "Training-free unsupervised prompting on frozen embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pseudo-label training features, filter them and write a TFC1 cache.
    BuildCache(BuildCacheArgs),
    /// Classify test features and write per-sample predictions as CSV.
    Infer(InferArgs),
    /// Train residual adapters and write a TFA1 checkpoint plus a report.
    Train(TrainArgs),
    /// Score one pipeline against manifest ground truth.
    Eval(EvalArgs),
    /// Evaluate the adapter pipeline over a grid of alpha, beta, K, N, gamma.
    Sweep(SweepArgs),
    /// Write a planted-cluster fixture: embeddings, manifest, class names.
    GenSynthetic(GenSyntheticArgs),
}

fn kebab<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|e| e.to_string())
}

/// Run-configuration overrides shared by every command.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub logit_scale: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub hidden_ratio: Option<usize>,
    /// `per-class` or `global`.
    #[arg(long, value_parser = kebab::<Eq4Scope>)]
    pub eq4_scope: Option<Eq4Scope>,
    /// Shorthand for `--eq4-scope global`.
    #[arg(long, conflicts_with = "eq4_scope")]
    pub eq4_global: bool,
    /// `none`, `confidence`, `prototype` or `double`.
    #[arg(long, value_parser = kebab::<FilterStrategy>)]
    pub filter: Option<FilterStrategy>,
    /// `feature`, `semantic` or `multi-level`.
    #[arg(long, value_parser = kebab::<SimilarityMeasure>)]
    pub similarity: Option<SimilarityMeasure>,
    /// `adapter` or `adapter+cache`.
    #[arg(long)]
    pub tfupt_mode: Option<TfuptMode>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub lambda_md: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// `sgd` or `adam`.
    #[arg(long, value_parser = kebab::<OptimizerKind>)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long)]
    pub momentum: Option<f64>,
    /// `constant` or `cosine`.
    #[arg(long, value_parser = kebab::<LrSchedule>)]
    pub schedule: Option<LrSchedule>,
    #[arg(long)]
    pub init_scale: Option<f64>,
    /// Training seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    /// File values (or defaults) with flags applied on top, validated.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.logit_scale {
            c.logit_scale = LogitScale::new(v)?;
        }
        macro_rules! set {
            ($($field:ident).+ <- $flag:ident) => {
                if let Some(v) = self.$flag {
                    c.$($field).+ = v;
                }
            };
        }
        set!(k <- k);
        set!(n <- n);
        set!(gamma <- gamma);
        set!(alpha <- alpha);
        set!(beta <- beta);
        set!(hidden_ratio <- hidden_ratio);
        set!(eq4_scope <- eq4_scope);
        set!(filter <- filter);
        set!(similarity <- similarity);
        set!(tfupt_mode <- tfupt_mode);
        set!(train.theta <- theta);
        set!(train.lambda_md <- lambda_md);
        set!(train.epochs <- epochs);
        set!(train.batch_size <- batch_size);
        set!(train.learning_rate <- learning_rate);
        set!(train.optimizer <- optimizer);
        set!(train.momentum <- momentum);
        set!(train.schedule <- schedule);
        set!(train.init_scale <- init_scale);
        set!(train.seed <- seed);
        if self.eq4_global {
            c.eq4_scope = Eq4Scope::Global;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Ground-truth manifest: sample records plus class names.
#[derive(Debug, Clone, Args)]
pub struct ManifestArgs {
    /// CSV with columns `sample_id,split,class_index`.
    #[arg(long)]
    pub manifest: PathBuf,
    /// One class name per line.
    #[arg(long)]
    pub classes: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildCacheArgs {
    /// TFB training features.
    #[arg(long)]
    pub train: PathBuf,
    /// TFB text features, one row per class.
    #[arg(long)]
    pub text: PathBuf,
    /// Class names; when given, must match the number of text rows.
    #[arg(long)]
    pub classes: Option<PathBuf>,
    /// Cache file to write.
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

/// Where the cache comes from for commands that need one.
#[derive(Debug, Clone, Args)]
pub struct CacheSource {
    /// Prebuilt TFC1 cache.
    #[arg(long, conflicts_with = "train")]
    pub cache: Option<PathBuf>,
    /// TFB training features to build the cache from.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Skip the cache: plain zero-shot prediction.
    #[arg(long, conflicts_with_all = ["cache", "train"])]
    pub no_cache: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// TFB test features.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub text: PathBuf,
    #[command(flatten)]
    pub source: CacheSource,
    /// Classify with trained adapters in the configured TFUP-T mode.
    #[arg(long, conflicts_with = "no_cache")]
    pub checkpoint: Option<PathBuf>,
    /// Predictions CSV: `id,label,confidence`.
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub text: PathBuf,
    /// Prebuilt cache; built from `--train` when absent.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Resume from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Labelled test features for a final evaluation record.
    #[arg(long, requires_all = ["manifest", "classes"])]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<PathBuf>,
    /// TFA1 checkpoint to write.
    #[arg(long)]
    pub output: PathBuf,
    /// JSON-lines training report; defaults to `<output>.report.jsonl`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub text: PathBuf,
    #[command(flatten)]
    pub manifest: ManifestArgs,
    #[command(flatten)]
    pub source: CacheSource,
    /// Evaluate trained adapters in the configured TFUP-T mode.
    #[arg(long, conflicts_with = "no_cache")]
    pub checkpoint: Option<PathBuf>,
    /// Mode name recorded in the report.
    #[arg(long)]
    pub mode: Option<String>,
    /// JSON-lines report to write.
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub text: PathBuf,
    #[command(flatten)]
    pub manifest: ManifestArgs,
    /// Comma-separated image residual ratios.
    #[arg(long, value_delimiter = ',')]
    pub alphas: Vec<f64>,
    /// Comma-separated text residual ratios.
    #[arg(long, value_delimiter = ',')]
    pub betas: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub ks: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub ns: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub gammas: Vec<f64>,
    /// JSON-lines report, one record per grid point.
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct GenSyntheticArgs {
    /// Directory for train.tfb, test.tfb, text.tfb, manifest.csv, classes.txt.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub train_per_class: Option<usize>,
    #[arg(long)]
    pub test_per_class: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub text_noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".config.toml");
    PathBuf::from(s)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn echo_config(artifact: &Path, cfg: &RunConfig) -> Result<()> {
    write_text(&sidecar(artifact), &cfg.to_toml_string())
}

fn check_class_names(path: &Path, text: &EmbeddingMatrix) -> Result<()> {
    let names = crate::embedding::load_class_names(path)?;
    if names.len() != text.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} class names in {} but {} text rows",
            names.len(),
            path.display(),
            text.rows()
        )));
    }
    Ok(())
}

fn resolve_cache(
    src: &CacheSource,
    text: &EmbeddingMatrix,
    cfg: &RunConfig,
) -> Result<Option<CacheModel>> {
    if src.no_cache {
        return Ok(None);
    }
    match (&src.cache, &src.train) {
        (Some(p), _) => load_cache(p).map(Some),
        (None, Some(p)) => build_cache(&load_normalized(p)?, text, cfg).map(Some),
        (None, None) => Err(Error::Config(
            "need --cache, --train or --no-cache".into(),
        )),
    }
}

fn classify(
    test: &EmbeddingMatrix,
    text: &EmbeddingMatrix,
    cache: Option<&CacheModel>,
    checkpoint: Option<&Path>,
    cfg: &RunConfig,
) -> Result<PredictionBatch> {
    match (checkpoint, cache) {
        (Some(p), Some(cache)) => {
            let ck = load_checkpoint(p)?;
            adapter::tfupt_classify(test, &ck.params, text, cache, cfg, cfg.tfupt_mode)
        }
        (Some(_), None) => Err(Error::Config("--checkpoint needs a cache source".into())),
        (None, Some(cache)) => tfup_classify(test, cache, text, cfg),
        (None, None) => zero_shot_classify(test, text, cfg.logit_scale),
    }
}

fn predictions_csv(ids: &[String], p: &PredictionBatch) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Data(format!("writing predictions: {e}"));
    w.write_record(["id", "label", "confidence"]).map_err(csv_err)?;
    for (i, id) in ids.iter().enumerate() {
        w.write_record([id.clone(), p.labels[i].to_string(), p.confidence[i].to_string()])
            .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Data(format!("writing predictions: {e}")))
}

fn cmd_build_cache(a: &BuildCacheArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let train = load_normalized(&a.train)?;
    let text = load_normalized(&a.text)?;
    if let Some(c) = &a.classes {
        check_class_names(c, &text)?;
    }
    let cache = build_cache(&train, &text, &cfg)?;
    save_cache(&cache, &a.output)?;
    echo_config(&a.output, &cfg)?;
    print!("{}", cache.summary());
    Ok(())
}

fn cmd_infer(a: &InferArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let test = load_normalized(&a.test)?;
    let text = load_normalized(&a.text)?;
    let cache = resolve_cache(&a.source, &text, &cfg)?;
    let preds = classify(&test, &text, cache.as_ref(), a.checkpoint.as_deref(), &cfg)?;
    crate::binio::write_file(&a.output, &predictions_csv(test.ids(), &preds)?)?;
    echo_config(&a.output, &cfg)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let train = load_normalized(&a.train)?;
    let text = load_normalized(&a.text)?;
    let cache = match &a.cache {
        Some(p) => load_cache(p)?,
        None => build_cache(&train, &text, &cfg)?,
    };
    let (params, mut report) = match &a.init {
        Some(p) => adapter::train_from(load_checkpoint(p)?.params, &train, &text, &cache, &cfg)?,
        None => adapter::train(&train, &text, &cache, &cfg)?,
    };
    if let (Some(t), Some(m), Some(c)) = (&a.test, &a.manifest, &a.classes) {
        let test = load_normalized(t)?;
        let manifest = DatasetManifest::load(m, c)?;
        for mode in [TfuptMode::Adapter, TfuptMode::AdapterCache] {
            let p = adapter::tfupt_classify(&test, &params, &text, &cache, &cfg, mode)?;
            let r = evaluate(&format!("tfup-t {mode}"), &p, test.ids(), &manifest, &cfg)?;
            report.final_eval.push(ModeAccuracy {
                mode: r.mode,
                accuracy: r.accuracy,
            });
        }
    }
    let ck = Checkpoint {
        params,
        seed: cfg.train.seed,
        epoch: cfg.train.epochs,
    };
    save_checkpoint(&ck, &a.output)?;
    echo_config(&a.output, &cfg)?;
    let report_path = a.report.clone().unwrap_or_else(|| {
        let mut s = a.output.as_os_str().to_owned();
        s.push(".report.jsonl");
        PathBuf::from(s)
    });
    write_text(&report_path, &report.to_jsonl())?;
    echo_config(&report_path, &cfg)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let test = load_normalized(&a.test)?;
    let text = load_normalized(&a.text)?;
    let manifest = DatasetManifest::load(&a.manifest.manifest, &a.manifest.classes)?;
    if manifest.num_classes() != text.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} classes in manifest but {} text rows",
            manifest.num_classes(),
            text.rows()
        )));
    }
    let cache = resolve_cache(&a.source, &text, &cfg)?;
    let preds = classify(&test, &text, cache.as_ref(), a.checkpoint.as_deref(), &cfg)?;
    let default_mode = match (&a.checkpoint, &cache) {
        (Some(_), _) => format!("tfup-t {}", cfg.tfupt_mode),
        (None, Some(_)) => "tfup".to_owned(),
        (None, None) => "zeroshot".to_owned(),
    };
    let mode = a.mode.clone().unwrap_or(default_mode);
    let report = evaluate(&mode, &preds, test.ids(), &manifest, &cfg)?;
    println!("{report}");
    emit_report(&[report], &a.output)?;
    echo_config(&a.output, &cfg)
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let train = load_normalized(&a.train)?;
    let test = load_normalized(&a.test)?;
    let text = load_normalized(&a.text)?;
    let manifest = DatasetManifest::load(&a.manifest.manifest, &a.manifest.classes)?;
    let labels = ground_truth(test.ids(), &manifest)?;
    let data = EvalData {
        train: &train,
        test: &test,
        text: &text,
        test_labels: &labels,
    };
    let grid = SweepGrid {
        alphas: a.alphas.clone(),
        betas: a.betas.clone(),
        ks: a.ks.clone(),
        ns: a.ns.clone(),
        gammas: a.gammas.clone(),
    };
    let reports = eval::sweep(&data, &cfg, &grid)?;
    for r in &reports {
        println!("{r}");
    }
    emit_report(&reports, &a.output)?;
    echo_config(&a.output, &cfg)
}

fn cmd_gen_synthetic(a: &GenSyntheticArgs) -> Result<()> {
    let d = SyntheticSpec::default();
    let spec = SyntheticSpec {
        classes: a.classes.unwrap_or(d.classes),
        dim: a.dim.unwrap_or(d.dim),
        train_per_class: a.train_per_class.unwrap_or(d.train_per_class),
        test_per_class: a.test_per_class.unwrap_or(d.test_per_class),
        sigma: a.sigma.unwrap_or(d.sigma),
        text_noise: a.text_noise.unwrap_or(d.text_noise),
        seed: a.seed.unwrap_or(d.seed),
    };
    let fx = generate_synthetic(&spec)?;
    let dir = &a.output;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    crate::embedding::save_embeddings(&fx.train, dir.join("train.tfb"))?;
    crate::embedding::save_embeddings(&fx.test, dir.join("test.tfb"))?;
    crate::embedding::save_embeddings(&fx.text, dir.join("text.tfb"))?;
    fx.manifest.save(dir.join("manifest.csv"), dir.join("classes.txt"))?;
    let spec_toml = toml::to_string(&spec).expect("spec serializes");
    write_text(&dir.join("synthetic.toml"), &spec_toml)
}

/// Dispatches a parsed command line.
pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::BuildCache(a) => cmd_build_cache(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::GenSynthetic(a) => cmd_gen_synthetic(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("tfup").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "k = 20\nn = 4\ngamma = 0.5\n[train]\nepochs = 3\n").unwrap();
        let cli = parse(&[
            "build-cache", "--train", "a", "--text", "b", "--output", "c",
            "--config", path.to_str().unwrap(), "--n", "2", "--eq4-global", "--similarity", "multi-level",
        ]);
        let Command::BuildCache(a) = cli.command else { panic!() };
        let cfg = a.cfg.resolve().unwrap();
        assert_eq!((cfg.k, cfg.n, cfg.gamma, cfg.train.epochs), (20, 2, 0.5, 3));
        assert_eq!(cfg.eq4_scope, Eq4Scope::Global);
        assert_eq!(cfg.similarity, SimilarityMeasure::MultiLevel);
    }

    #[test]
    fn k_below_n_is_config_error() {
        let cli = parse(&["build-cache", "--train", "a", "--text", "b", "--output", "c", "--k", "2", "--n", "3"]);
        let Command::BuildCache(a) = cli.command else { panic!() };
        assert_eq!(a.cfg.resolve().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn enum_flags_parse() {
        let cli = parse(&[
            "infer", "--test", "t", "--text", "x", "--no-cache", "--output", "o",
            "--tfupt-mode", "adapter+cache", "--optimizer", "adam", "--schedule", "cosine", "--filter", "none",
        ]);
        let Command::Infer(a) = cli.command else { panic!() };
        let cfg = a.cfg.resolve().unwrap();
        assert_eq!(cfg.tfupt_mode, TfuptMode::AdapterCache);
        assert_eq!(cfg.train.optimizer, OptimizerKind::Adam);
        assert_eq!(cfg.train.schedule, LrSchedule::Cosine);
        assert_eq!(cfg.filter, FilterStrategy::None);
        assert!(a.source.no_cache);
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["tfup", "infer"]), 2);
        assert_eq!(run(["tfup", "build-cache", "--train", "a", "--text", "b", "--output", "c", "--filter", "bogus"]), 2);
    }
}
