//! Command implementations behind the CLI: generation, the two training
//! stages, evaluation, efficiency sweeps, and the gradient-check report.
//! All outputs are deterministic functions of (config, seed) — no
//! timestamps, sorted iteration everywhere — so re-runs are byte-identical.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, ExperimentConfig};
use crate::distill::{self, DistillError};
use crate::evalbench::{self, CostModel, EvalContext, EvalError, EvalReport, Strategy};
use crate::models::{self, Arch, Modality, ModelConfig};
use crate::numerics::params::ParamStore;
use crate::numerics::NumericsError;
use crate::skim::{self, InferenceBudget, SkimError, Skimmer};
use crate::synthdata::{self, DataError, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    MalformedConfig,
    InvalidConfig,
    MissingFile,
    DimensionConflict,
    Data,
    Training,
    Eval,
    Io,
    GradcheckFailed,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::MalformedConfig => 2,
            ErrorKind::InvalidConfig => 3,
            ErrorKind::MissingFile => 4,
            ErrorKind::DimensionConflict => 5,
            ErrorKind::Data => 6,
            ErrorKind::Training => 7,
            ErrorKind::Eval => 8,
            ErrorKind::Io => 9,
            ErrorKind::GradcheckFailed => 10,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct CliError {
    pub category: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn new(category: ErrorKind, message: impl Into<String>) -> Self {
        Self { category, message: message.into() }
    }

    /// Machine-readable form printed to stderr.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("error serializes")
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}: {}", self.category, self.message)
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        let kind = match &e {
            ConfigError::MissingFile(_) => ErrorKind::MissingFile,
            ConfigError::Malformed(_) => ErrorKind::MalformedConfig,
            ConfigError::Invalid(_) => ErrorKind::InvalidConfig,
            ConfigError::Io(_) => ErrorKind::Io,
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let kind = match &e {
            DataError::Io(_) => ErrorKind::Io,
            _ => ErrorKind::Data,
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<NumericsError> for CliError {
    fn from(e: NumericsError) -> Self {
        let kind = match &e {
            NumericsError::Io(_) => ErrorKind::Io,
            NumericsError::Container(_) => ErrorKind::Data,
            _ => ErrorKind::Training,
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<DistillError> for CliError {
    fn from(e: DistillError) -> Self {
        CliError::new(ErrorKind::Training, e.to_string())
    }
}

impl From<SkimError> for CliError {
    fn from(e: SkimError) -> Self {
        CliError::new(ErrorKind::Training, e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::new(ErrorKind::Eval, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new(ErrorKind::Io, e.to_string())
    }
}

// --- checkpoint sidecars ---------------------------------------------------

/// Architecture metadata stored next to each checkpoint so a later stage can
/// detect config/checkpoint mismatches instead of silently mis-shaping.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub num_classes: usize,
    pub image_dim: usize,
    pub audio_dim: usize,
    pub clip_window: usize,
    pub sequence_len: usize,
    pub student_modality: Modality,
    pub skim_train_steps: Option<usize>,
    pub skim_modality: Option<Modality>,
}

impl CheckpointMeta {
    fn from_config(cfg: &ExperimentConfig, skim_steps: Option<usize>) -> Self {
        Self {
            model: cfg.model.clone(),
            num_classes: cfg.dataset.num_classes,
            image_dim: cfg.dataset.image_dim,
            audio_dim: cfg.dataset.audio_dim,
            clip_window: cfg.dataset.clip_window,
            sequence_len: cfg.dataset.sequence_len,
            student_modality: cfg.distill.modality,
            skim_train_steps: skim_steps,
            skim_modality: skim_steps.map(|_| cfg.skim.modality),
        }
    }

    fn check_against(&self, cfg: &ExperimentConfig) -> Result<()> {
        let mismatches: Vec<String> = [
            (self.model != cfg.model).then(|| "model dims".to_string()),
            (self.num_classes != cfg.dataset.num_classes).then(|| "num_classes".to_string()),
            (self.image_dim != cfg.dataset.image_dim).then(|| "image_dim".to_string()),
            (self.audio_dim != cfg.dataset.audio_dim).then(|| "audio_dim".to_string()),
            (self.clip_window != cfg.dataset.clip_window).then(|| "clip_window".to_string()),
        ]
        .into_iter()
        .flatten()
        .collect();
        if !mismatches.is_empty() {
            return Err(CliError::new(
                ErrorKind::DimensionConflict,
                format!("checkpoint disagrees with config on: {}", mismatches.join(", ")),
            ));
        }
        Ok(())
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

fn load_meta(path: &Path) -> Result<CheckpointMeta> {
    if !path.exists() {
        return Err(CliError::new(ErrorKind::MissingFile, path.display().to_string()));
    }
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::new(ErrorKind::Data, format!("{}: {e}", path.display())))
}

fn load_store(path: &Path) -> Result<ParamStore> {
    if !path.exists() {
        return Err(CliError::new(ErrorKind::MissingFile, path.display().to_string()));
    }
    Ok(ParamStore::load(path)?)
}

fn load_dataset_checked(cfg: &ExperimentConfig) -> Result<Dataset> {
    let dir = &cfg.output_dir;
    for split in ["train.sknd", "val.sknd", "test.sknd"] {
        if !dir.join(split).exists() {
            return Err(CliError::new(
                ErrorKind::MissingFile,
                format!("{} (run `skimnet gen` first)", dir.join(split).display()),
            ));
        }
    }
    let ds = synthdata::load_dataset(dir)?;
    if ds.config != cfg.dataset {
        return Err(CliError::new(
            ErrorKind::DimensionConflict,
            "dataset files were generated from a different dataset config".to_string(),
        ));
    }
    Ok(ds)
}

fn prepare(config_path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExperimentConfig> {
    let cfg = ExperimentConfig::load(config_path)?.resolve(seed, out);
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    write_text(&cfg.output_dir.join("effective_config.json"), &cfg.to_json_pretty())?;
    println!("seed: {}", cfg.seed);
    Ok(cfg)
}

// --- commands -----------------------------------------------------------------

pub fn cmd_gen(config_path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let cfg = prepare(config_path, seed, out)?;
    let dataset = synthdata::gen_dataset(&cfg.dataset)?;
    synthdata::save_dataset(&dataset, &cfg.output_dir)?;
    println!(
        "generated {} videos ({} train / {} val / {} test) into {}",
        dataset.total_videos(),
        dataset.train.len(),
        dataset.val.len(),
        dataset.test.len(),
        cfg.output_dir.display()
    );
    Ok(())
}

pub fn cmd_distill(config_path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let cfg = prepare(config_path, seed, out)?;
    let dataset = load_dataset_checked(&cfg)?;
    let (store, _arch, log) = distill::distill_pipeline(&dataset, &cfg.model, &cfg.distill, cfg.seed)?;
    store.save(&cfg.output_dir.join("student.sknp"))?;
    let meta = CheckpointMeta::from_config(&cfg, None);
    write_text(
        &cfg.output_dir.join("student.json"),
        &serde_json::to_string_pretty(&meta).expect("meta serializes"),
    )?;
    write_text(&cfg.output_dir.join("distill_log.csv"), &log.to_csv())?;
    println!(
        "distilled student ({:?}): final val acc {:.4}, log rows {}",
        cfg.distill.modality,
        log.final_val_acc(),
        log.rows.len()
    );
    Ok(())
}

pub fn cmd_train_skim(config_path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let cfg = prepare(config_path, seed, out)?;
    let dataset = load_dataset_checked(&cfg)?;
    let meta = load_meta(&cfg.output_dir.join("student.json"))?;
    meta.check_against(&cfg)?;
    let mut store = load_store(&cfg.output_dir.join("student.sknp"))?;

    let arch = Arch::new(&cfg.model, &cfg.dataset)?;
    models::init_skimmer(&mut store, &arch, cfg.seed)?;
    let skimmer = Skimmer::new(&store, &arch, cfg.skim.modality, cfg.skim.train_steps)?;
    let log = skim::train_skim(&mut store, &skimmer, &dataset, &cfg.skim, cfg.seed)?;

    store.save(&cfg.output_dir.join("skimmer.sknp"))?;
    let meta = CheckpointMeta::from_config(&cfg, Some(cfg.skim.train_steps));
    write_text(
        &cfg.output_dir.join("skimmer.json"),
        &serde_json::to_string_pretty(&meta).expect("meta serializes"),
    )?;
    write_text(&cfg.output_dir.join("skim_log.csv"), &log.to_csv())?;
    println!(
        "trained skimmer for {} epochs: final val acc {:.4}",
        cfg.skim.epochs,
        log.final_val_acc()
    );
    Ok(())
}

/// Everything evaluation needs once checkpoints are loaded.
struct EvalSetup {
    store: ParamStore,
    arch: Arch,
    skimmer: Option<Skimmer>,
    budget: InferenceBudget,
}

fn eval_setup(cfg: &ExperimentConfig, dataset: &Dataset, strategies: &[Strategy]) -> Result<EvalSetup> {
    let needs_skimmer = strategies.iter().any(|s| matches!(s, Strategy::Ours | Strategy::NonRecurrent));
    let arch = Arch::new(&cfg.model, &cfg.dataset)?;

    let (mut store, trained_steps) = if needs_skimmer || cfg.output_dir.join("skimmer.sknp").exists() {
        let meta = load_meta(&cfg.output_dir.join("skimmer.json"))?;
        meta.check_against(cfg)?;
        let store = load_store(&cfg.output_dir.join("skimmer.sknp"))?;
        (store, meta.skim_train_steps.unwrap_or(cfg.skim.train_steps))
    } else {
        let meta = load_meta(&cfg.output_dir.join("student.json"))?;
        meta.check_against(cfg)?;
        (load_store(&cfg.output_dir.join("student.sknp"))?, cfg.skim.train_steps)
    };

    let skimmer = if needs_skimmer {
        Some(Skimmer::new(&store, &arch, cfg.skim.modality, trained_steps)?)
    } else {
        None
    };

    if strategies.contains(&Strategy::Lstm) {
        models::init_lstm_baseline(&mut store, &arch, cfg.seed)?;
        evalbench::train_lstm_baseline(
            &mut store,
            &arch,
            dataset,
            cfg.eval.lstm_epochs,
            cfg.eval.lstm_learning_rate,
            cfg.skim.batch_size,
            cfg.seed,
        )?;
    }

    let budget = InferenceBudget {
        t_stop: cfg.eval.t_stop,
        subsample_factor: cfg.eval.subsample_factor,
        use_recognition_features: cfg.eval.use_recognition_features,
    };
    Ok(EvalSetup { store, arch, skimmer, budget })
}

pub fn cmd_eval(config_path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let cfg = prepare(config_path, seed, out)?;
    let dataset = load_dataset_checked(&cfg)?;
    let strategies: Vec<Strategy> = cfg
        .eval
        .strategies
        .iter()
        .map(|s| Strategy::parse(s))
        .collect::<std::result::Result<_, _>>()?;

    let setup = eval_setup(&cfg, &dataset, &strategies)?;
    let cost_model = CostModel {
        arch: setup.arch.clone(),
        n: cfg.dataset.sequence_len,
        select_count: cfg.eval.select_count,
        train_steps: cfg.skim.train_steps,
    };
    let dense_cost = cost_model.strategy_cost(Strategy::Dense, &setup.budget);

    let mut reports: Vec<EvalReport> = Vec::new();
    let mut random_spread: Vec<f64> = Vec::new();
    for strategy in &strategies {
        let base_ctx = EvalContext {
            store: &setup.store,
            arch: &setup.arch,
            skimmer: setup.skimmer.as_ref(),
            budget: setup.budget,
            select_count: cfg.eval.select_count,
            seed: cfg.seed,
        };
        let report = evalbench::evaluate(*strategy, &base_ctx, &dataset.test, &cost_model)?;
        if *strategy == Strategy::Random {
            for extra in &cfg.eval.random_seeds {
                let ctx = EvalContext { seed: *extra, ..base_ctx };
                let r = evalbench::evaluate(Strategy::Random, &ctx, &dataset.test, &cost_model)?;
                random_spread.push(r.top1_accuracy);
            }
        }
        write_text(
            &cfg.output_dir.join(format!("report_{}.json", strategy.name())),
            &serde_json::to_string_pretty(&report).expect("report serializes"),
        )?;
        reports.push(report);
    }

    let table = comparison_table(&reports, &dense_cost, &random_spread);
    print!("{table}");
    write_text(&cfg.output_dir.join("comparison.txt"), &table)?;
    write_text(&cfg.output_dir.join("metrics.csv"), &metrics_csv(&reports, &dense_cost, &random_spread))?;

    if let Some(skimmer) = &setup.skimmer {
        if strategies.contains(&Strategy::Ours) {
            let jsonl = trace_jsonl(&setup.store, skimmer, &dataset, &setup.budget)?;
            write_text(&cfg.output_dir.join("trace_ours.jsonl"), &jsonl)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    SubsampleFactor,
    TStop,
}

impl SweepAxis {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "subsample_factor" => Ok(SweepAxis::SubsampleFactor),
            "t_stop" => Ok(SweepAxis::TStop),
            other => Err(CliError::new(
                ErrorKind::InvalidConfig,
                format!("unknown sweep axis '{other}'; valid: subsample_factor, t_stop"),
            )),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::SubsampleFactor => "subsample_factor",
            SweepAxis::TStop => "t_stop",
        }
    }
}

pub fn cmd_sweep(config_path: &Path, seed: Option<u64>, out: Option<PathBuf>, axis: Option<&str>) -> Result<()> {
    let cfg = prepare(config_path, seed, out)?;
    let dataset = load_dataset_checked(&cfg)?;
    let axes: Vec<SweepAxis> = match axis {
        Some(a) => vec![SweepAxis::parse(a)?],
        None => vec![SweepAxis::SubsampleFactor, SweepAxis::TStop],
    };

    let strategies = [Strategy::Uniform, Strategy::Ours];
    let setup = eval_setup(&cfg, &dataset, &strategies)?;
    let cost_model = CostModel {
        arch: setup.arch.clone(),
        n: cfg.dataset.sequence_len,
        select_count: cfg.eval.select_count,
        train_steps: cfg.skim.train_steps,
    };
    let dense_cost = cost_model.strategy_cost(Strategy::Dense, &setup.budget);

    let uniform_ctx = EvalContext {
        store: &setup.store,
        arch: &setup.arch,
        skimmer: setup.skimmer.as_ref(),
        budget: setup.budget,
        select_count: cfg.eval.select_count,
        seed: cfg.seed,
    };
    let uniform = evalbench::evaluate(Strategy::Uniform, &uniform_ctx, &dataset.test, &cost_model)?;

    for axis in axes {
        let values: Vec<usize> = match axis {
            SweepAxis::SubsampleFactor => vec![1, 2, 3, 4, 5, 6, 8]
                .into_iter()
                .filter(|f| *f <= cfg.dataset.sequence_len)
                .collect(),
            SweepAxis::TStop => (1..=cfg.skim.train_steps).collect(),
        };
        let mut rows = Vec::new();
        for v in &values {
            let budget = match axis {
                SweepAxis::SubsampleFactor => InferenceBudget {
                    subsample_factor: *v,
                    t_stop: cfg.eval.t_stop,
                    use_recognition_features: cfg.eval.use_recognition_features,
                },
                SweepAxis::TStop => InferenceBudget {
                    subsample_factor: cfg.eval.subsample_factor,
                    t_stop: *v,
                    use_recognition_features: cfg.eval.use_recognition_features,
                },
            };
            let ctx = EvalContext { budget, ..uniform_ctx };
            let report = evalbench::evaluate(Strategy::Ours, &ctx, &dataset.test, &cost_model)?;
            rows.push((*v, report));
        }

        let mut csv = String::from("axis_value,accuracy,selection_recall,total_macs,ratio_vs_dense,uniform_accuracy\n");
        for (v, r) in &rows {
            csv.push_str(&format!(
                "{},{:.6},{:.6},{},{:.6},{:.6}\n",
                v,
                r.top1_accuracy,
                r.mean_selection_recall.unwrap_or(0.0),
                r.cost_per_video.total,
                r.cost_per_video.ratio_vs(&dense_cost),
                uniform.top1_accuracy,
            ));
        }
        write_text(&cfg.output_dir.join(format!("curve_{}.csv", axis.name())), &csv)?;

        let ours_points: Vec<(f64, f64)> = rows.iter().map(|(v, r)| (*v as f64, r.top1_accuracy)).collect();
        let uniform_points: Vec<(f64, f64)> =
            rows.iter().map(|(v, _)| (*v as f64, uniform.top1_accuracy)).collect();
        let svg = svg_line_chart(
            &format!("accuracy vs {}", axis.name()),
            axis.name(),
            "top-1 accuracy",
            &[("ours", &ours_points), ("uniform", &uniform_points)],
        );
        write_text(&cfg.output_dir.join(format!("curve_{}.svg", axis.name())), &svg)?;
        println!(
            "sweep {}: {} points written to curve_{}.csv / .svg",
            axis.name(),
            rows.len(),
            axis.name()
        );
    }
    Ok(())
}

pub fn cmd_gradcheck(config_path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let cfg = prepare(config_path, seed, out)?;
    let results = crate::gradsuite::run_all().map_err(CliError::from)?;
    #[derive(Serialize)]
    struct Row<'a> {
        name: &'a str,
        instances: usize,
        max_rel_err: f64,
        passed: bool,
    }
    let rows: Vec<Row> = results
        .iter()
        .map(|r| Row {
            name: &r.name,
            instances: r.instances,
            max_rel_err: r.max_rel_err,
            passed: r.passed,
        })
        .collect();
    write_text(
        &cfg.output_dir.join("gradcheck_report.json"),
        &serde_json::to_string_pretty(&rows).expect("report serializes"),
    )?;
    let mut all_pass = true;
    for r in &results {
        println!("{r}");
        all_pass &= r.passed;
    }
    if !all_pass {
        return Err(CliError::new(ErrorKind::GradcheckFailed, "finite-difference checks failed".to_string()));
    }
    Ok(())
}

// --- reporting helpers -----------------------------------------------------------

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    (mean, var.sqrt())
}

/// Aligned plain-text comparison across strategies.
pub fn comparison_table(reports: &[EvalReport], dense_cost: &evalbench::CostLedger, random_spread: &[f64]) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "{:<14} {:>9} {:>9} {:>14} {:>10}\n",
        "strategy", "accuracy", "recall", "macs/video", "vs dense"
    ));
    for r in reports {
        let recall = r
            .mean_selection_recall
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "-".to_string());
        let mut name = r.strategy.clone();
        let mut acc = format!("{:.4}", r.top1_accuracy);
        if r.strategy == "random" && !random_spread.is_empty() {
            let (mean, std) = mean_std(random_spread);
            name = format!("random({})", random_spread.len());
            acc = format!("{mean:.3}±{std:.3}");
        }
        s.push_str(&format!(
            "{:<14} {:>9} {:>9} {:>14} {:>10.4}\n",
            name,
            acc,
            recall,
            r.cost_per_video.total,
            r.cost_per_video.ratio_vs(dense_cost),
        ));
    }
    s
}

fn metrics_csv(reports: &[EvalReport], dense_cost: &evalbench::CostLedger, random_spread: &[f64]) -> String {
    let mut s = String::from("strategy,seed,accuracy,selection_recall,total_macs,ratio_vs_dense\n");
    for r in reports {
        s.push_str(&format!(
            "{},{},{:.6},{},{},{:.6}\n",
            r.strategy,
            r.seed,
            r.top1_accuracy,
            r.mean_selection_recall.map(|v| format!("{v:.6}")).unwrap_or_default(),
            r.cost_per_video.total,
            r.cost_per_video.ratio_vs(dense_cost),
        ));
    }
    if !random_spread.is_empty() {
        let (mean, std) = mean_std(random_spread);
        s.push_str(&format!("random_mean,,{mean:.6},,,\n"));
        s.push_str(&format!("random_std,,{std:.6},,,\n"));
    }
    s
}

fn entropy(weights: &[f64]) -> f64 {
    -weights.iter().filter(|w| **w > 0.0).map(|w| w * w.ln()).sum::<f64>()
}

/// One JSON line per test video: label, prediction, and the per-step
/// selection trace (argmax indices, gate scores, weight entropies).
pub fn trace_jsonl(
    store: &ParamStore,
    skimmer: &Skimmer,
    dataset: &Dataset,
    budget: &InferenceBudget,
) -> Result<String> {
    #[derive(Serialize)]
    struct StepRecord {
        step: usize,
        image_argmax: usize,
        audio_argmax: usize,
        gate_image: f64,
        gate_audio: f64,
        image_weight_entropy: f64,
        audio_weight_entropy: f64,
    }
    #[derive(Serialize)]
    struct VideoRecord {
        label: usize,
        prediction: usize,
        steps: Vec<StepRecord>,
    }
    let mut out = String::new();
    for video in &dataset.test {
        let res = skim::skim_infer(store, skimmer, video, budget)?;
        let record = VideoRecord {
            label: video.label,
            prediction: res.probs.argmax(),
            steps: res
                .trace
                .steps
                .iter()
                .enumerate()
                .map(|(i, s)| StepRecord {
                    step: i + 1,
                    image_argmax: s.image_argmax,
                    audio_argmax: s.audio_argmax,
                    gate_image: s.gate_image,
                    gate_audio: s.gate_audio,
                    image_weight_entropy: entropy(&s.image_weights),
                    audio_weight_entropy: entropy(&s.audio_weights),
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&record).expect("trace serializes"));
        out.push('\n');
    }
    Ok(out)
}

/// Minimal polyline chart with axes, ticks, and a legend. No timestamps or
/// other run-varying content, so identical inputs give identical bytes.
pub fn svg_line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[(&str, &[(f64, f64)])]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const ML: f64 = 64.0;
    const MR: f64 = 24.0;
    const MT: f64 = 40.0;
    const MB: f64 = 56.0;
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

    let all: Vec<(f64, f64)> = series.iter().flat_map(|(_, pts)| pts.iter().copied()).collect();
    let (mut x0, mut x1) = all.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        (lo.min(p.0), hi.max(p.0))
    });
    let (mut y0, mut y1) = all.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        (lo.min(p.1), hi.max(p.1))
    });
    if x0 == x1 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y0 == y1 {
        y0 -= 0.05;
        y1 += 0.05;
    }
    let pad = (y1 - y0) * 0.08;
    y0 -= pad;
    y1 += pad;

    let sx = |x: f64| ML + (x - x0) / (x1 - x0) * (W - ML - MR);
    let sy = |y: f64| H - MB - (y - y0) / (y1 - y0) * (H - MT - MB);

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {W} {H}\" font-family=\"monospace\" font-size=\"12\">\n"
    ));
    s.push_str(&format!(
        "<text x=\"{:.1}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        W / 2.0,
        title
    ));
    s.push_str(&format!(
        "<rect x=\"{ML}\" y=\"{MT}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"#333\"/>\n",
        W - ML - MR,
        H - MT - MB
    ));
    for i in 0..=4 {
        let xv = x0 + (x1 - x0) * i as f64 / 4.0;
        let yv = y0 + (y1 - y0) * i as f64 / 4.0;
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{:.2}</text>\n",
            sx(xv),
            H - MB + 18.0,
            xv
        ));
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{:.2}</text>\n",
            ML - 6.0,
            sy(yv) + 4.0,
            yv
        ));
        s.push_str(&format!(
            "<line x1=\"{ML}\" y1=\"{0:.1}\" x2=\"{1:.1}\" y2=\"{0:.1}\" stroke=\"#ddd\"/>\n",
            sy(yv),
            W - MR
        ));
    }
    s.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
        ML + (W - ML - MR) / 2.0,
        H - 14.0,
        xlabel
    ));
    s.push_str(&format!(
        "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>\n",
        MT + (H - MT - MB) / 2.0,
        MT + (H - MT - MB) / 2.0,
        ylabel
    ));
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = colors[i % colors.len()];
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
        s.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>\n",
            path.join(" "),
            color
        ));
        for (x, y) in pts.iter() {
            s.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\"/>\n",
                sx(*x),
                sy(*y),
                color
            ));
        }
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"{}\">{}</text>\n",
            W - MR - 120.0,
            MT + 18.0 + 16.0 * i as f64,
            color,
            name
        ));
    }
    s.push_str("</svg>\n");
    s
}

/// Per-component MAC counts as a sorted debug map (used in tests).
pub fn counts_summary(counts: &BTreeMap<crate::numerics::tape::Component, crate::numerics::tape::MacCount>) -> String {
    counts
        .iter()
        .map(|(c, m)| format!("{}={}", c.name(), m.macs))
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_chart_is_deterministic_and_valid() {
        let pts = [(1.0, 0.5), (2.0, 0.7), (3.0, 0.65)];
        let a = svg_line_chart("t", "x", "y", &[("ours", &pts)]);
        let b = svg_line_chart("t", "x", "y", &[("ours", &pts)]);
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.contains("polyline"));
        assert!(a.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn sweep_axis_parsing() {
        assert_eq!(SweepAxis::parse("t_stop").unwrap(), SweepAxis::TStop);
        assert!(SweepAxis::parse("zoom").is_err());
    }

    #[test]
    fn error_kinds_have_distinct_exit_codes() {
        let kinds = [
            ErrorKind::MalformedConfig,
            ErrorKind::InvalidConfig,
            ErrorKind::MissingFile,
            ErrorKind::DimensionConflict,
            ErrorKind::Data,
            ErrorKind::Training,
            ErrorKind::Eval,
            ErrorKind::Io,
            ErrorKind::GradcheckFailed,
        ];
        let mut codes: Vec<i32> = kinds.iter().map(|k| k.exit_code()).collect();
        codes.sort_unstable();
        codes.dedup();
        assert_eq!(codes.len(), kinds.len());
    }

    #[test]
    fn cli_error_json_is_machine_readable() {
        let e = CliError::new(ErrorKind::MissingFile, "nope.json");
        let v: serde_json::Value = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(v["category"], "missing_file");
        assert_eq!(v["message"], "nope.json");
    }
}
