use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use afunet_core::data::{load_scene, write_hdr, write_png_preview, Manifest};
use afunet_core::oracle::{solve, ProblemFile};
use afunet_core::train::{
    checkpoint, evaluate, run_ablation, Profile, Reconstructor, RunConfig, Sweep, Trainer,
};
use afunet_core::candle::{DType, Device};
use afunet_core::ExecMode;
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "afunet", version, about = "Alignment-fusion unfolding network for multi-exposure HDR")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// TOML file overlaid on the profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base configuration: `desk` or `paper`.
    #[arg(long, global = true, default_value = "paper")]
    profile: Profile,
    /// Overrides the model and data seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train from scratch, or resume with `--checkpoint`.
    Train {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Reconstruct one scene directory.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: PathBuf,
    },
    /// Score a checkpoint on every scene of a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Run the classical solver on a problem file.
    Oracle {
        #[arg(long)]
        problem: PathBuf,
    },
    /// Train and score each variant of a sweep.
    Ablate {
        /// `stages`, `components` or `paradigm`.
        #[arg(long)]
        sweep: String,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train { .. } => "train",
            Command::Infer { .. } => "infer",
            Command::Eval { .. } => "eval",
            Command::Oracle { .. } => "oracle",
            Command::Ablate { .. } => "ablate",
        }
    }
}

/// The resolved configuration plus the verbatim text it was overlaid from.
struct Resolved {
    config: RunConfig,
    source: Option<(PathBuf, String)>,
}

fn resolve(g: &GlobalArgs) -> Result<Resolved> {
    let base = RunConfig::profile(g.profile);
    let (mut config, source) = match &g.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            (RunConfig::overlay(&base, &text, path)?, Some((path.clone(), text)))
        }
        None => (base, None),
    };
    if let Some(seed) = g.seed {
        config.seed = seed;
        config.data.seed = seed;
    }
    if let Some(out) = &g.out {
        config.output_dir = out.clone();
    }
    config.validate()?;
    Ok(Resolved { config, source })
}

/// Creates `<output_dir>/<command>-<unix seconds>-s<seed>[-n]` and echoes the
/// configuration into it.
fn make_run_dir(cmd: &str, resolved: &Resolved) -> Result<PathBuf> {
    let root = &resolved.config.output_dir;
    std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let stem = format!("{cmd}-{secs}-s{}", resolved.config.seed);
    let mut dir = root.join(&stem);
    let mut n = 1;
    while dir.exists() {
        dir = root.join(format!("{stem}-{n}"));
        n += 1;
    }
    std::fs::create_dir(&dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join("config.toml"), resolved.config.to_toml())?;
    if let Some((path, text)) = &resolved.source {
        let name = path.file_name().map_or("input.toml".into(), |n| n.to_string_lossy().into_owned());
        std::fs::write(dir.join(format!("input-{name}")), text)?;
    }
    Ok(dir)
}

fn cmd_train(resolved: &Resolved, run_dir: &Path, resume: Option<&Path>) -> Result<()> {
    let mut trainer = match resume {
        Some(ckpt) => {
            let meta = checkpoint::load(ckpt)?.meta;
            let data = meta.config.data.load(ExecMode::preferred())?;
            Trainer::resume(ckpt, data, run_dir)?
        }
        None => Trainer::new(resolved.config.clone(), run_dir)?,
    };
    let summaries = trainer.run()?;
    if let Some(last) = summaries.last() {
        println!(
            "trained {} epochs ({} steps); last loss {:.6}; best PSNR-mu {}",
            trainer.epoch(),
            trainer.steps(),
            last.mean_loss(),
            trainer
                .best_psnr_mu()
                .map_or("n/a".to_string(), |p| format!("{p:.2} dB"))
        );
    } else {
        println!("nothing to do: {} of {} epochs complete", trainer.epoch(), trainer.config().optim.epochs);
    }
    println!("{}", run_dir.display());
    Ok(())
}

fn load_model(ckpt: &Path) -> Result<afunet_core::model::Afunet> {
    let ckpt = checkpoint::load(ckpt)?;
    Ok(ckpt.model(DType::F32, &Device::Cpu)?)
}

fn cmd_infer(resolved: &Resolved, run_dir: &Path, ckpt: &Path, scene: &Path) -> Result<()> {
    let model = load_model(ckpt)?;
    let stack = load_scene(scene)?;
    let hdr = model.reconstruct(&stack)?;
    let hdr_path = run_dir.join(format!("{}.hdr", stack.name));
    let png_path = run_dir.join(format!("{}.png", stack.name));
    write_hdr(&hdr_path, &hdr)?;
    write_png_preview(&png_path, &hdr, resolved.config.tonemap.mu())?;
    println!("{}", hdr_path.display());
    Ok(())
}

fn cmd_eval(resolved: &Resolved, run_dir: &Path, ckpt: &Path, manifest: &Path) -> Result<()> {
    let model = load_model(ckpt)?;
    let manifest = Manifest::load(manifest)?;
    if manifest.is_empty() {
        bail!("manifest lists no scenes");
    }
    let scenes = manifest.load_scenes(ExecMode::preferred())?;
    let report = evaluate(&model, &scenes, &resolved.config.tonemap, ExecMode::preferred())?;
    report.write(run_dir)?;
    print!("{}", report.to_csv()?);
    Ok(())
}

fn cmd_oracle(run_dir: &Path, problem: &Path) -> Result<()> {
    let loaded = ProblemFile::load(problem)?;
    let state = solve(&loaded.problem, &loaded.solver)?;
    let mut csv = String::from("iteration,energy\n");
    for (i, e) in state.energy_trace.iter().enumerate() {
        csv.push_str(&format!("{i},{e:e}\n"));
    }
    std::fs::write(run_dir.join("energy.csv"), csv)?;
    let x = match state.x.dim().0 {
        3 => state.x.clone(),
        1 => ndarray::concatenate(ndarray::Axis(0), &[state.x.view(); 3])?,
        c => bail!("cannot write a {c}-channel solution as RGB"),
    };
    write_hdr(&run_dir.join("solution.hdr"), &x)?;
    println!(
        "{} iterations; final energy {:e}",
        state.energy_trace.len().saturating_sub(1),
        state.energy_trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_ablate(resolved: &Resolved, run_dir: &Path, sweep: &str) -> Result<()> {
    let sweep: Sweep = sweep.parse()?;
    let data = resolved.config.data.load(ExecMode::preferred())?;
    let report = run_ablation(&resolved.config, sweep, &data, run_dir)?;
    report.write(run_dir)?;
    print!("{}", report.to_csv()?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Ablate { sweep } = &cli.command {
        sweep.parse::<Sweep>()?;
    }
    let resolved = resolve(&cli.global)?;
    let run_dir = make_run_dir(cli.command.name(), &resolved)?;
    log::info!("run directory {}", run_dir.display());
    match &cli.command {
        Command::Train { checkpoint } => cmd_train(&resolved, &run_dir, checkpoint.as_deref()),
        Command::Infer { checkpoint, scene } => cmd_infer(&resolved, &run_dir, checkpoint, scene),
        Command::Eval { checkpoint, manifest } => cmd_eval(&resolved, &run_dir, checkpoint, manifest),
        Command::Oracle { problem } => cmd_oracle(&run_dir, problem),
        Command::Ablate { sweep } => cmd_ablate(&resolved, &run_dir, sweep),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
