//! The `twinmask` command line.
//!
//! Parameters come from three layers: built-in defaults, an optional config
//! file (`--config`, either JSON or `key = value` lines, keys named like the
//! long flags), and flags on the command line, which win. Exit codes are
//! 0 on success, 1 when a stage fails and 2 on usage errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::colorlab::a_star_plane;
use crate::error::{Error, Result, StageExt};
use crate::fedsim::{run_federation, FederationConfig};
use crate::flowedit::GuidanceParams;
use crate::histstats::{compare, histogram, pair_csv};
use crate::io;
use crate::rng::SeedStream;
use crate::toyflow::{train_flow, FlowModel, Health, SceneSpec, TrainConfig};
use crate::twinsynth::{
    differential, generate_twins, identity_sweep, manifest_string, render_original, run_pipeline, Backend,
    PipelineConfig, ReferenceMask, TwinMode,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Artifact version plus the hash of the default scene.
pub fn version_string() -> String {
    format!("{} (scene {})", env!("CARGO_PKG_VERSION"), SceneSpec::default().hash())
}

#[derive(Debug, Parser)]
#[command(name = "twinmask", about = "Counterfactual twins and differential erythema masks on a toy flow model")]
struct Cli {
    /// Config file with defaults for this subcommand (JSON or key = value).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Oracle,
    Trained,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize)]
pub struct BackendArgs {
    #[arg(long, value_enum, default_value_t = BackendKind::Oracle)]
    pub backend: BackendKind,
    /// Flow checkpoint, required by the trained backend.
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Euler steps when sampling the trained model.
    #[arg(long, default_value_t = 50)]
    pub sample_steps: usize,
    /// Oracle frame size (square).
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    /// Oracle identity count.
    #[arg(long, default_value_t = 4)]
    pub identities: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize)]
pub struct GuidanceArgs {
    #[arg(long, default_value_t = 1.5, allow_negative_numbers = true)]
    pub gamma_src: f64,
    #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
    pub gamma_tgt: f64,
    /// Edit steps.
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.9, allow_negative_numbers = true)]
    pub s_max: f64,
}

impl GuidanceArgs {
    fn params(&self, noise_seed: u64) -> GuidanceParams {
        GuidanceParams {
            gamma_src: self.gamma_src,
            gamma_tgt: self.gamma_tgt,
            steps: self.steps,
            s_max: self.s_max,
            noise_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize)]
pub struct GridArgs {
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    pub theta_min: f64,
    #[arg(long, default_value_t = 254.5, allow_negative_numbers = true)]
    pub theta_max: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub theta_step: f64,
}

impl GridArgs {
    pub fn grid(&self) -> Vec<f64> {
        if !(self.theta_step > 0.0) || self.theta_max < self.theta_min {
            return Vec::new();
        }
        let n = ((self.theta_max - self.theta_min) / self.theta_step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.theta_min + i as f64 * self.theta_step).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize)]
pub struct CaseArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub guidance: GuidanceArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value_t = 0)]
    pub src_identity: usize,
    #[arg(long, default_value = "seed_resample")]
    pub twin_mode: TwinMode,
    /// Reference mask PNG for calibration; the scene's ground truth by default.
    #[arg(long, value_name = "PATH")]
    pub reference_mask: Option<PathBuf>,
    /// Restrict histograms to this mask PNG.
    #[arg(long, value_name = "PATH")]
    pub histogram_mask: Option<PathBuf>,
    /// Case seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Train the toy rectified-flow model and write a checkpoint.
    TrainFlow {
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 4)]
        identities: usize,
        #[arg(long, default_value_t = 1500)]
        steps: usize,
        /// Hidden layer width.
        #[arg(long, default_value_t = 256)]
        hidden: usize,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        #[arg(long, default_value_t = 1e-3, allow_negative_numbers = true)]
        lr: f64,
        #[arg(long, default_value_t = 5e-5, allow_negative_numbers = true)]
        lr_final: f64,
        #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
        cond_dropout: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Checkpoint path; the loss curve goes next to it as `.loss.csv`.
        #[arg(long, default_value = "flow.json")]
        #[serde(skip)]
        out: PathBuf,
    },
    /// De-identify one image by swapping in a surrogate identity.
    Deid {
        #[command(flatten)]
        #[serde(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        #[serde(flatten)]
        guidance: GuidanceArgs,
        #[arg(long, default_value_t = 0)]
        src_identity: usize,
        #[arg(long, default_value_t = 1)]
        tgt_identity: usize,
        /// Source image; rendered from the seed when absent.
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "deid_out")]
        #[serde(skip)]
        out: PathBuf,
    },
    /// Render a pathological/healthy twin pair and their a* difference.
    Twins {
        #[command(flatten)]
        #[serde(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        #[serde(flatten)]
        guidance: GuidanceArgs,
        #[arg(long, default_value_t = 1)]
        identity: usize,
        #[arg(long, default_value = "seed_resample")]
        twin_mode: TwinMode,
        /// Anchor latent seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "twins_out")]
        #[serde(skip)]
        out: PathBuf,
    },
    /// Run the full pipeline on one case.
    Pipeline {
        #[command(flatten)]
        #[serde(flatten)]
        case: CaseArgs,
        #[arg(long, default_value_t = 1)]
        tgt_identity: usize,
        #[arg(long, default_value = "pipeline_out")]
        #[serde(skip)]
        out: PathBuf,
    },
    /// Run one case under several surrogate identities and report mask stability.
    Sweep {
        #[command(flatten)]
        #[serde(flatten)]
        case: CaseArgs,
        /// Comma-separated surrogate identities; all but the source by default.
        #[arg(long, value_delimiter = ',')]
        surrogates: Vec<usize>,
        #[arg(long, default_value = "sweep_out")]
        #[serde(skip)]
        out: PathBuf,
    },
    /// Compare the a* histograms of two images; prints JSON.
    Stats {
        a: PathBuf,
        b: PathBuf,
        /// Count only pixels under this mask PNG.
        #[arg(long, value_name = "PATH")]
        mask: Option<PathBuf>,
        /// Also write both histograms as CSV.
        #[arg(long, value_name = "PATH")]
        csv: Option<PathBuf>,
        /// Also write an outline plot PNG.
        #[arg(long, value_name = "PATH")]
        plot: Option<PathBuf>,
    },
    /// Simulate federated training of the per-pixel segmenter.
    Fedsim {
        #[command(flatten)]
        #[serde(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        #[serde(flatten)]
        guidance: GuidanceArgs,
        #[arg(long, default_value_t = 4)]
        clients: usize,
        #[arg(long, default_value_t = 5)]
        rounds: usize,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        lr: f64,
        #[arg(long, default_value_t = 3)]
        cases_per_client: usize,
        #[arg(long, default_value_t = 4)]
        heldout: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "fedsim_out")]
        #[serde(skip)]
        out: PathBuf,
    },
}

/// Fully resolved invocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub command: Command,
    pub config_file: Option<PathBuf>,
}

/// A parse outcome that ends the process: help and version text (code 0)
/// or a usage error (code 2).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exit {
    pub code: i32,
    pub message: String,
}

fn usage(message: impl Into<String>) -> Exit {
    Exit {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn command() -> clap::Command {
    Cli::command()
        .version(version_string())
        .arg_required_else_help(true)
        .mut_subcommands(|s| s.args_override_self(true))
}

const SUBCOMMANDS: [&str; 7] = ["train-flow", "deid", "twins", "pipeline", "sweep", "stats", "fedsim"];

fn find_config(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

/// Reads a config file into `--flag value` pairs. Null values and the
/// `command` and `config_file` keys of a manifest's `run` block are skipped,
/// so that block can be fed back as a config file.
pub fn config_file_args(path: &Path) -> std::result::Result<Vec<String>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut pairs: Vec<(String, String)> = Vec::new();
    if text.trim_start().starts_with('{') {
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| format!("{}: expected a JSON object", path.display()))?;
        for (k, v) in obj {
            let v = match v {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Array(items) => items
                    .iter()
                    .map(|i| i.as_str().map_or_else(|| i.to_string(), str::to_string))
                    .collect::<Vec<_>>()
                    .join(","),
                serde_json::Value::Null => continue,
                serde_json::Value::Object(_) => {
                    return Err(format!("{}: unsupported value for `{k}`", path.display()))
                }
                other => other.to_string(),
            };
            pairs.push((k.clone(), v));
        }
    } else {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("{}:{}: expected `key = value`", path.display(), n + 1))?;
            pairs.push((k.trim().to_string(), v.trim().trim_matches('"').to_string()));
        }
    }
    let mut args = Vec::with_capacity(pairs.len() * 2);
    for (k, v) in pairs {
        let key = k.trim_start_matches('-').replace('_', "-");
        if key == "command" || key == "config-file" {
            continue;
        }
        if key == "config" {
            return Err(format!("{}: config files cannot include other config files", path.display()));
        }
        args.push(format!("--{key}"));
        args.push(v);
    }
    Ok(args)
}

fn validate(command: &Command) -> std::result::Result<(), Exit> {
    let flag = |e: Error| match e {
        Error::InvalidParameter { name, reason } => usage(format!(
            "error: invalid value for --{}: {reason}",
            name.replace('_', "-")
        )),
        other => usage(format!("error: {other}")),
    };
    let guidance = match command {
        Command::Deid { guidance, .. } | Command::Twins { guidance, .. } | Command::Fedsim { guidance, .. } => {
            Some(guidance)
        }
        Command::Pipeline { case, .. } | Command::Sweep { case, .. } => Some(&case.guidance),
        _ => None,
    };
    if let Some(g) = guidance {
        g.params(0).validate().map_err(flag)?;
    }
    if let Command::Pipeline { case, .. } | Command::Sweep { case, .. } = command {
        crate::maskdiff::check_grid(&case.grid.grid()).map_err(|_| {
            usage("error: invalid value for --theta-min/--theta-max/--theta-step: grid must be non-empty and non-negative")
        })?;
    }
    match command {
        Command::TrainFlow {
            lr,
            lr_final,
            cond_dropout,
            ..
        } => {
            if !(*lr > 0.0) {
                return Err(usage("error: invalid value for --lr: must be positive"));
            }
            if !(*lr_final > 0.0) {
                return Err(usage("error: invalid value for --lr-final: must be positive"));
            }
            if !(0.0..=1.0).contains(cond_dropout) {
                return Err(usage("error: invalid value for --cond-dropout: must be a probability"));
            }
        }
        Command::Fedsim { lr, .. } if !(*lr > 0.0 && lr.is_finite()) => {
            return Err(usage("error: invalid value for --lr: must be positive"));
        }
        _ => {}
    }
    Ok(())
}

/// Parses a full argv (program name first).
pub fn parse_args<I, T>(argv: I) -> std::result::Result<RunConfig, Exit>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let config_file = find_config(&argv);
    if let Some(path) = &config_file {
        let extra = config_file_args(path).map_err(|e| usage(format!("error: {e}")))?;
        if let Some(pos) = argv.iter().position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref())) {
            argv.splice(pos + 1..pos + 1, extra.into_iter().map(OsString::from));
        }
    }
    let matches = command().try_get_matches_from(argv).map_err(|e| Exit {
        code: if e.use_stderr() { EXIT_USAGE } else { EXIT_OK },
        message: e.render().to_string(),
    })?;
    let cli = Cli::from_arg_matches(&matches).map_err(|e| usage(e.render().to_string()))?;
    validate(&cli.command)?;
    Ok(RunConfig {
        command: cli.command,
        config_file,
    })
}

fn load_model(args: &BackendArgs) -> Result<Option<FlowModel>> {
    match args.backend {
        BackendKind::Oracle => Ok(None),
        BackendKind::Trained => {
            let path = args
                .checkpoint
                .as_ref()
                .ok_or_else(|| Error::param("checkpoint", "the trained backend needs --checkpoint"))?;
            FlowModel::load(path).map(Some)
        }
    }
}

fn oracle_scene(args: &BackendArgs) -> Result<SceneSpec> {
    let scene = SceneSpec {
        identity_count: args.identities,
        ..SceneSpec::with_size(args.size, args.size)
    };
    scene.validate()?;
    Ok(scene)
}

/// Resolves the backend and hands it to `f`.
fn with_backend<R>(args: &BackendArgs, f: impl FnOnce(&Backend<'_>) -> Result<R>) -> Result<R> {
    let model = load_model(args).stage("load")?;
    match &model {
        Some(model) => f(&Backend::Trained {
            model,
            sample_steps: args.sample_steps,
        }),
        None => {
            let scene = oracle_scene(args).stage("config")?;
            f(&Backend::Oracle(&scene))
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_manifest(dir: &Path, config: &RunConfig, mut body: serde_json::Value) -> Result<()> {
    body["run"] = serde_json::to_value(config)?;
    body["artifact_version"] = env!("CARGO_PKG_VERSION").into();
    io::write_text(&dir.join("manifest.json"), &manifest_string(&body))
}

fn case_config(case: &CaseArgs, surrogate: usize) -> Result<PipelineConfig> {
    Ok(PipelineConfig {
        source_identity: case.src_identity,
        surrogate_identity: surrogate,
        guidance: case.guidance.params(0),
        grid: case.grid.grid(),
        twin_mode: case.twin_mode,
        reference: match &case.reference_mask {
            Some(p) => ReferenceMask::Supplied(io::load_mask_png(p)?),
            None => ReferenceMask::GroundTruth,
        },
        histogram_mask: case.histogram_mask.as_deref().map(io::load_mask_png).transpose()?,
    })
}

fn execute(config: &RunConfig) -> Result<()> {
    match &config.command {
        Command::TrainFlow {
            size,
            identities,
            steps,
            hidden,
            batch,
            lr,
            lr_final,
            cond_dropout,
            seed,
            out,
        } => {
            let scene = SceneSpec {
                identity_count: *identities,
                ..SceneSpec::with_size(*size, *size)
            };
            scene.validate().stage("config")?;
            let hp = TrainConfig {
                width: *hidden,
                batch_size: *batch,
                steps: *steps,
                lr: *lr,
                lr_final: *lr_final,
                cond_dropout: *cond_dropout,
                ..TrainConfig::default()
            };
            let model = train_flow(&scene, &hp, *seed).stage("train")?;
            model.save(out).stage("write")?;
            io::write_text(&out.with_extension("loss.csv"), &model.loss_csv()).stage("write")?;
            println!(
                "{}",
                serde_json::json!({
                    "checkpoint": out,
                    "initial_loss": model.initial_loss,
                    "final_loss": model.final_loss,
                    "steps": steps,
                })
            );
            Ok(())
        }
        Command::Deid {
            backend,
            guidance,
            src_identity,
            tgt_identity,
            input,
            seed,
            out,
        } => with_backend(backend, |b| {
            let scene = b.scene();
            let cfg = PipelineConfig {
                source_identity: *src_identity,
                surrogate_identity: *tgt_identity,
                guidance: guidance.params(0),
                ..PipelineConfig::default()
            };
            let seeds = cfg.case_seeds(*seed);
            let original = match input {
                Some(p) => io::load_rgb_png(p).stage("input")?,
                None => render_original(&cfg, b, *seed).stage("original")?,
            };
            let src_c = scene.condition(*src_identity, Health::Pathological).stage("config")?;
            let tgt_c = scene.condition(*tgt_identity, Health::Pathological).stage("config")?;
            let g = guidance.params(seeds.edit_noise);
            let deid = b.de_identify(&original, &src_c, &tgt_c, &g).stage("deid")?;
            create_dir(out).stage("write")?;
            (|| {
                io::save_rgb_png(&original, &out.join("original.png"))?;
                io::save_rgb_png(&deid.image, &out.join("deid.png"))?;
                io::write_text(&out.join("trace.csv"), &deid.trace.to_csv())?;
                write_manifest(
                    out,
                    config,
                    serde_json::json!({
                        "backend": b.kind(),
                        "seeds": seeds,
                        "located_identity": scene.locate_feature_dot(&deid.image).map(|p| scene.nearest_identity(p)),
                        "edit_max_displacement": deid.trace.max_displacement(),
                    }),
                )
            })()
            .stage("write")
        }),
        Command::Twins {
            backend,
            guidance,
            identity,
            twin_mode,
            seed,
            out,
        } => with_backend(backend, |b| {
            let scene = b.scene();
            let anchor = scene.latent(SeedStream::new(*seed).seed("anchor", 0));
            let c_path = scene.condition(*identity, Health::Pathological).stage("config")?;
            let pair = generate_twins(
                b,
                &anchor,
                &c_path,
                &c_path.with_health(Health::Healthy),
                *twin_mode,
                &guidance.params(*seed),
            )
            .stage("twins")?;
            let diff = differential(&pair).stage("differential")?;
            create_dir(out).stage("write")?;
            (|| {
                io::save_rgb_png(&pair.path_image, &out.join("twin_path.png"))?;
                io::save_rgb_png(&pair.healthy_image, &out.join("twin_healthy.png"))?;
                io::save_diff_png(&diff, &out.join("diff.png"))?;
                write_manifest(
                    out,
                    config,
                    serde_json::json!({ "backend": b.kind(), "anchor_seed": anchor.seed, "diff_max": diff.max() }),
                )
            })()
            .stage("write")
        }),
        Command::Pipeline { case, tgt_identity, out } => with_backend(&case.backend, |b| {
            let cfg = case_config(case, *tgt_identity).stage("input")?;
            let mut result = run_pipeline(&cfg, b, case.seed)?;
            result.manifest["run"] = serde_json::to_value(config)?;
            result.write_dir(out).stage("write")?;
            println!("{}", serde_json::json!({ "out": out, "manifest_hash": result.manifest_hash(), "metrics": result.manifest["metrics"] }));
            Ok(())
        }),
        Command::Sweep { case, surrogates, out } => with_backend(&case.backend, |b| {
            let cfg = case_config(case, 0).stage("input")?;
            let surrogates: Vec<usize> = if surrogates.is_empty() {
                (0..b.scene().identity_count).filter(|&i| i != case.src_identity).collect()
            } else {
                surrogates.clone()
            };
            let report = identity_sweep(&cfg, b, &surrogates, case.seed).stage("sweep")?;
            create_dir(out).stage("write")?;
            report.write_dir(out).stage("write")?;
            write_manifest(out, config, serde_json::json!({ "backend": b.kind(), "summary": report.summary_json() }))
                .stage("write")?;
            println!("{}", report.summary_json());
            Ok(())
        }),
        Command::Stats {
            a,
            b,
            mask,
            csv,
            plot,
        } => {
            let ia = io::load_rgb_png(a).stage("input")?;
            let ib = io::load_rgb_png(b).stage("input")?;
            let m = mask.as_deref().map(io::load_mask_png).transpose().stage("input")?;
            let p = histogram(&a_star_plane(&ia), m.as_ref()).stage("stats")?;
            let q = histogram(&a_star_plane(&ib), m.as_ref()).stage("stats")?;
            if let Some(path) = csv {
                io::write_text(path, &pair_csv(&p, &q)).stage("write")?;
            }
            if let Some(path) = plot {
                io::save_histogram_plot(&p.bins, &q.bins, path).stage("write")?;
            }
            println!("{}", serde_json::to_string_pretty(&compare(&p, &q))?);
            Ok(())
        }
        Command::Fedsim {
            backend,
            guidance,
            clients,
            rounds,
            epochs,
            lr,
            cases_per_client,
            heldout,
            seed,
            out,
        } => with_backend(backend, |b| {
            let fc = FederationConfig {
                n_clients: *clients,
                rounds: *rounds,
                epochs: *epochs,
                lr: *lr,
                cases_per_client: *cases_per_client,
                heldout_cases: *heldout,
            };
            let pipeline = PipelineConfig {
                guidance: guidance.params(0),
                ..PipelineConfig::default()
            };
            let report = run_federation(&fc, &pipeline, b, *seed).stage("federation")?;
            create_dir(out).stage("write")?;
            (|| {
                io::write_text(&out.join("rounds.csv"), &report.rounds_csv())?;
                io::write_text(&out.join("audit.jsonl"), &report.audit_jsonl())?;
                write_manifest(
                    out,
                    config,
                    serde_json::json!({
                        "backend": b.kind(),
                        "final_weights": report.final_model.weights,
                        "final_heldout_iou": report.rounds.last().map(|r| r.heldout_iou),
                        "round1_local_iou": report.round1_local_iou,
                    }),
                )
            })()
            .stage("write")?;
            print!("{}", report.rounds_csv());
            Ok(())
        }),
    }
}

/// Runs a parsed config; returns the process exit code.
pub fn dispatch(config: &RunConfig) -> i32 {
    match execute(config) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            match e.stage() {
                Some(stage) => eprintln!("error in stage `{stage}`: {}", root_message(&e)),
                None => eprintln!("error: {e}"),
            }
            EXIT_FAILURE
        }
    }
}

fn root_message(e: &Error) -> String {
    match e {
        Error::Stage { source, .. } => root_message(source),
        other => other.to_string(),
    }
}

/// Parse and dispatch.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match parse_args(argv) {
        Ok(config) => dispatch(&config),
        Err(exit) => {
            if exit.code == EXIT_OK {
                print!("{}", exit.message);
            } else {
                eprint!("{}", exit.message);
                if !exit.message.ends_with('\n') {
                    eprintln!();
                }
            }
            exit.code
        }
    }
}
