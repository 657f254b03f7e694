//! Argument parsing, command dispatch and report emission for the `cedg`
//! binary.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use cedg_augment::{denormalize, pipeline::apply_pipeline_traced, ImageU8};
use cedg_core::cost::{compare, count_bundle, CostReport};
use cedg_core::nn::{build_classifier, build_resnet, build_spearnet, ClassifierVariant, HeadKind};
use cedg_core::rng::stream;
use cedg_core::ModelBundle32;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::fixtures::{make_fixtures, FixtureConfig};
use crate::pipeline;

pub const BUILD_ID: &str = env!("CEDG_BUILD_ID");

#[derive(Debug, Parser)]
#[command(name = "cedg", version = BUILD_ID, about = "Compact classifier training from a distilled teacher and a forged dataset")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON run configuration; relative paths inside resolve against its directory.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Start from the reduced desk profile instead of the full-scale defaults
    /// when no config file is given.
    #[arg(long, global = true)]
    pub desk: bool,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker cap. Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Override one config value, e.g. `--set stage3.sgd.lr=0.1`. The value
    /// is parsed as JSON, falling back to a plain string.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Directory for the JSON report.
    #[arg(long, global = true)]
    pub reports: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the teacher on the common-domain split.
    PretrainTeacher {
        #[arg(long)]
        common_train: Option<PathBuf>,
        #[arg(long)]
        common_val: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Distill a teacher checkpoint into a fresh student.
    Distill {
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        common_train: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the loosely labeled training set from a corpus and its proposals.
    Forge {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        proposals: Option<PathBuf>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Three-step target training of a distilled student.
    Train {
        #[arg(long)]
        student: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        head: Option<HeadKind>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Confusion matrix, per-class accuracy, AVE and ER of a checkpoint.
    Eval {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Static multiplication and parameter count of an architecture.
    Cost {
        /// `resnet20`, `resnet<6n+2>` or `spearnet`.
        #[arg(long, default_value = "spearnet")]
        arch: String,
        /// Count a student with this classifier instead of its readout.
        #[arg(long)]
        head: Option<HeadKind>,
    },
    /// The student trained on the target data without distillation.
    Baseline {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write every stage of one augmentation run as numbered PPM images.
    AugmentPreview {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the synthetic desk-scale corpus and datasets.
    MakeFixtures {
        #[arg(long)]
        out: PathBuf,
        /// JSON file with fixture sizes.
        #[arg(long)]
        fixture_config: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::PretrainTeacher { .. } => "pretrain-teacher",
            Self::Distill { .. } => "distill",
            Self::Forge { .. } => "forge",
            Self::Train { .. } => "train",
            Self::Eval { .. } => "eval",
            Self::Cost { .. } => "cost",
            Self::Baseline { .. } => "baseline",
            Self::AugmentPreview { .. } => "augment-preview",
            Self::MakeFixtures { .. } => "make-fixtures",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub started_unix: f64,
    pub seconds: f64,
    pub threads: usize,
}

/// What every command writes to its report file and standard output.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: String,
    pub build: String,
    pub seed: u64,
    pub config: RunConfig,
    pub result: Value,
    pub metadata: Metadata,
}

/// Applies `key.path=value` to the serialized config.
pub fn apply_override(cfg: &RunConfig, assignment: &str) -> Result<RunConfig> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not KEY=VALUE")))?;
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut tree = serde_json::to_value(cfg).expect("config serializes");
    let unknown = || CliError::Config(format!("unknown config key {key:?}"));
    let (parents, last) = match key.rsplit_once('.') {
        Some((p, l)) => (Some(p), l),
        None => (None, key),
    };
    let mut node = &mut tree;
    for part in parents.into_iter().flat_map(|p| p.split('.')) {
        node = node.as_object_mut().and_then(|o| o.get_mut(part)).ok_or_else(unknown)?;
    }
    // Unset optional fields are absent from the tree; unknown names are
    // rejected when the tree is read back.
    node.as_object_mut().ok_or_else(unknown)?.insert(last.to_string(), value);
    serde_json::from_value(tree).map_err(|e| CliError::Config(format!("{key}: {e}")))
}

/// Defaults or file, then `--set` overrides, then `--seed`.
pub fn resolve_config(g: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None if g.desk => RunConfig::desk(),
        None => RunConfig::default(),
    };
    for s in &g.set {
        cfg = apply_override(&cfg, s)?;
    }
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(r) = &g.reports {
        cfg.paths.reports = r.clone();
    }
    Ok(cfg)
}

fn set_path(slot: &mut PathBuf, flag: &Option<PathBuf>) {
    if let Some(p) = flag {
        *slot = p.clone();
    }
}

/// Folds command-specific flags into the config so the stamped config is
/// the one that ran.
fn apply_command_flags(cfg: &mut RunConfig, cmd: &Command) {
    let p = &mut cfg.paths;
    match cmd {
        Command::PretrainTeacher { common_train, common_val, out } => {
            set_path(&mut p.common_train, common_train);
            set_path(&mut p.common_val, common_val);
            set_path(&mut p.teacher, out);
        }
        Command::Distill { teacher, common_train, out } => {
            set_path(&mut p.teacher, teacher);
            set_path(&mut p.common_train, common_train);
            set_path(&mut p.student, out);
        }
        Command::Forge { manifest, proposals, lambda, out } => {
            set_path(&mut p.manifest, manifest);
            set_path(&mut p.proposals, proposals);
            set_path(&mut p.forged, out);
            if let Some(l) = lambda {
                cfg.lambda = *l;
            }
        }
        Command::Train { student, dataset, val, head, out } => {
            set_path(&mut p.student, student);
            set_path(&mut p.forged, dataset);
            set_path(&mut p.val, val);
            set_path(&mut p.classifier, out);
            if let Some(h) = head {
                cfg.classifier.head = *h;
            }
        }
        Command::Eval { dataset, checkpoint } => {
            set_path(&mut p.val, dataset);
            set_path(&mut p.classifier, checkpoint);
        }
        Command::Baseline { dataset, val, out } => {
            set_path(&mut p.forged, dataset);
            set_path(&mut p.val, val);
            set_path(&mut p.baseline, out);
        }
        Command::Cost { .. } | Command::AugmentPreview { .. } => {}
        Command::MakeFixtures { out, .. } => {
            if cfg.paths.reports.is_relative() {
                cfg.paths.reports = out.join(&cfg.paths.reports);
            }
        }
    }
}

fn parse_arch(arch: &str, cfg: &RunConfig) -> Result<ModelBundle32> {
    let name = arch.to_ascii_lowercase();
    if name == "spearnet" {
        return Ok(build_spearnet(&cfg.student, cfg.seed)?);
    }
    let depth = name
        .strip_prefix("resnet")
        .and_then(|d| d.parse::<usize>().ok())
        .ok_or_else(|| CliError::Config(format!("unknown architecture {arch:?} (expected resnet<depth> or spearnet)")))?;
    if depth < 8 || (depth - 2) % 6 != 0 {
        return Err(CliError::Config(format!("resnet depth must be 6n+2 with n >= 1, got {depth}")));
    }
    Ok(build_resnet((depth - 2) / 6, cfg.seed)?)
}

/// Column-aligned per-layer listing with a total row.
pub fn cost_table(r: &CostReport) -> String {
    let id_w = r.per_layer.iter().map(|l| l.id.len()).chain(["layer".len(), "total".len()]).max().unwrap_or(5);
    let macs_w = r.total_macs.to_string().len().max("macs".len());
    let params_w = r.total_params.to_string().len().max("params".len());
    let mut out = format!("{:<id_w$}  {:>macs_w$}  {:>params_w$}\n", "layer", "macs", "params");
    for l in &r.per_layer {
        out += &format!("{:<id_w$}  {:>macs_w$}  {:>params_w$}\n", l.id, l.macs, l.params);
    }
    out += &format!("{:<id_w$}  {:>macs_w$}  {:>params_w$}\n", "total", r.total_macs, r.total_params);
    out
}

fn run_cost(cfg: &RunConfig, arch: &str, head: Option<HeadKind>) -> Result<(Value, String)> {
    let mut bundle = parse_arch(arch, cfg)?;
    if let Some(kind) = head {
        if arch.eq_ignore_ascii_case("spearnet") {
            let v = ClassifierVariant {
                hidden: cfg.classifier.hidden,
                enlarged_hidden: cfg.classifier.enlarged_hidden,
                ..ClassifierVariant::new(kind)
            };
            bundle.attach_head(build_classifier(&v)?, cfg.seed)?;
        } else {
            return Err(CliError::Config("a classifier head attaches only to spearnet".into()));
        }
    }
    let report = count_bundle(&bundle.arch, head.is_some())?;
    let reference = count_bundle(&build_resnet::<f32>(3, 0)?.arch, false)?;
    let result = json!({
        "arch": arch,
        "head": head.map(|h| h.to_string()),
        "conv_layers": bundle.arch.conv_layers(),
        "total_macs": report.total_macs,
        "total_params": report.total_params,
        "compression_vs_resnet20": compare(&reference, &report)?,
        "per_layer": report.per_layer,
    });
    Ok((result, cost_table(&report)))
}

fn run_augment_preview(cfg: &RunConfig, image: &Path, out: &Path) -> Result<Value> {
    let img = ImageU8::load(image)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut rng = stream(cfg.seed, "augment-preview", 0, 0);
    let stages = apply_pipeline_traced(&img, &cfg.augment, &mut rng)?;
    let mut written = Vec::new();
    for (i, (name, stage)) in stages.iter().enumerate() {
        let path = out.join(format!("{i:02}_{name}.ppm"));
        denormalize(stage, &cfg.augment.normalization).save(&path)?;
        written.push(path);
    }
    Ok(json!({ "input": image, "stages": written }))
}

/// Runs one command and returns its result plus any human-readable text.
pub fn execute(cfg: &RunConfig, cmd: &Command) -> Result<(Value, Option<String>)> {
    let p = &cfg.paths;
    let result = match cmd {
        Command::PretrainTeacher { .. } => {
            let (teacher, report) = pipeline::run_pretrain(cfg)?;
            pipeline::save_checkpoint(&teacher, &p.teacher)?;
            json!({ "checkpoint": p.teacher, "report": report })
        }
        Command::Distill { .. } => {
            let mut teacher = pipeline::load_checkpoint(&p.teacher)?;
            let (student, outcome) = pipeline::run_distill(cfg, &mut teacher)?;
            pipeline::save_checkpoint(&student, &p.student)?;
            json!({ "checkpoint": p.student, "outcome": outcome })
        }
        Command::Forge { .. } => {
            let (ds, report) = pipeline::run_forge(cfg)?;
            pipeline::save_dataset(&ds, &p.forged)?;
            json!({ "dataset": p.forged, "report": report })
        }
        Command::Train { .. } => {
            let mut student = pipeline::load_checkpoint(&p.student)?;
            let outcome = pipeline::run_train(cfg, &mut student, None)?;
            pipeline::save_checkpoint(&student, &p.classifier)?;
            json!({ "checkpoint": p.classifier, "outcome": outcome })
        }
        Command::Eval { .. } => {
            let mut bundle = pipeline::load_checkpoint(&p.classifier)?;
            cfg.require(&[&p.val])?;
            let ds = pipeline::read(&p.val)?;
            let summary = pipeline::run_eval(cfg, &mut bundle, &ds)?;
            json!({ "dataset": p.val, "checkpoint": p.classifier, "summary": summary })
        }
        Command::Cost { arch, head } => {
            let (v, table) = run_cost(cfg, arch, *head)?;
            return Ok((v, Some(table)));
        }
        Command::Baseline { .. } => {
            let (bundle, steps) = pipeline::run_baseline(cfg, None)?;
            pipeline::save_checkpoint(&bundle, &p.baseline)?;
            json!({ "checkpoint": p.baseline, "steps": steps })
        }
        Command::AugmentPreview { image, out } => run_augment_preview(cfg, image, out)?,
        Command::MakeFixtures { out, fixture_config } => {
            let fc = match fixture_config {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
                }
                None => FixtureConfig::default(),
            };
            let summary = make_fixtures(out, cfg.seed, &fc)?;
            let desk = out.join("desk.json");
            RunConfig { seed: cfg.seed, ..RunConfig::desk() }.save(&desk)?;
            json!({ "fixture": fc, "summary": summary, "desk_config": desk })
        }
    };
    Ok((result, None))
}

fn write_report(report: &Report, dir: &Path, text: Option<&str>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(format!("{}.json", report.command));
    let body = serde_json::to_string_pretty(report).expect("report serializes") + "\n";
    std::fs::write(&path, body).map_err(|e| CliError::io(&path, e))?;
    if let Some(t) = text {
        let path = dir.join(format!("{}.txt", report.command));
        std::fs::write(&path, t).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}

/// Resolves the config, runs the command, writes and returns the report.
pub fn run(cli: &Cli) -> Result<(Report, Option<String>)> {
    let started = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    let mut cfg = resolve_config(&cli.global)?;
    apply_command_flags(&mut cfg, &cli.command);
    cfg.validate()?;
    let threads = match cli.global.threads {
        Some(0) => return Err(CliError::Config("--threads must be positive".into())),
        Some(n) => n,
        None => rayon::current_num_threads(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let (result, text) = pool.install(|| execute(&cfg, &cli.command))?;
    let report = Report {
        command: cli.command.name().to_string(),
        build: BUILD_ID.to_string(),
        seed: cfg.seed,
        config: cfg.clone(),
        result,
        metadata: Metadata { started_unix, seconds: started.elapsed().as_secs_f64(), threads },
    };
    write_report(&report, &cfg.paths.reports, text.as_deref())?;
    Ok((report, text))
}

/// One JSON line on stderr describing a failure.
pub fn error_line(e: &CliError) -> String {
    json!({ "error": { "kind": e.kind(), "exit_code": e.exit_code(), "message": e.to_string() } }).to_string()
}

/// Entry point of the binary; returns the process exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let err = CliError::Config(e.kind().to_string());
            eprint!("{e}");
            eprintln!("{}", error_line(&err));
            return err.exit_code();
        }
    };
    match run(&cli) {
        Ok((report, text)) => {
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            if let Some(t) = text {
                eprint!("{t}");
            }
            0
        }
        Err(e) => {
            eprintln!("{}", error_line(&e));
            e.exit_code()
        }
    }
}
