use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use tcl_core::config::ExperimentConfig;
use tcl_core::data::io::{write_dataset, SplitManifest};
use tcl_core::data::Domain;
use tcl_core::encoder::EncoderParams;
use tcl_core::eval::CenterClipClassifier;
use tcl_core::gradcheck::{run_gradient_suite, run_op_suite, SuiteConfig, TOLERANCE};
use tcl_core::grid::{run_grid, GridSpec};
use tcl_core::trainer::{
    advance, final_report, json_pretty, write_json, write_run_outputs, PipelineResult, PreparedData, RunOptions, TrainState, Variant,
};
use tcl_core::{eval, Error};

/// Temporal contrastive learning on synthetic videos.
#[derive(Parser)]
#[command(name = "tcl", version)]
struct Cli {
    /// Log every epoch to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the labeled, unlabeled and test sets to disk.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one pipeline and evaluate it.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        seed: u64,
        /// Method variant applied on top of the config.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a `state.ckpt` written by an earlier interrupted run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many epochs, leaving `state.ckpt` to resume from.
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Sweep variants, label fractions, ρ and seeds.
    Grid {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        seed: Vec<u64>,
        /// Defaults to every variant.
        #[arg(long, value_delimiter = ',')]
        variant: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        label_percent: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        rho: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score an encoder checkpoint on the test set of a config.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Where to write `report.json`; printed to stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference checks of every graph op and every loss.
    Gradcheck {
        #[arg(long, default_value_t = 120)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config; defaults are used for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set loss.beta=0`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self, seed: Option<u64>) -> tcl_core::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        for o in &self.overrides {
            cfg.set(o)?;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn gen_data(cfg: &ExperimentConfig, out: &Path) -> tcl_core::Result<()> {
    std::fs::create_dir_all(out)?;
    let data = PreparedData::build(cfg)?;
    let classes = cfg.data.classes;
    let domain = if cfg.data.rho < 1.0 { Domain::Shifted } else { Domain::Target };
    write_dataset(&out.join("labeled.tcld"), classes, Domain::Target, cfg.seed, &data.labeled)?;
    write_dataset(&out.join("unlabeled.tcld"), classes, domain, cfg.seed, &data.unlabeled)?;
    write_dataset(&out.join("test.tcld"), classes, Domain::Target, cfg.seed, &data.test)?;
    let ids = |v: &[tcl_core::data::VideoSample]| v.iter().map(|v| v.id).collect();
    SplitManifest {
        version: 1,
        seed: cfg.seed,
        label_fraction: cfg.data.label_percent / 100.0,
        labeled: ids(&data.labeled),
        unlabeled: ids(&data.unlabeled),
        test: ids(&data.test),
    }
    .write(&out.join("manifest.json"))?;
    cfg.save(&out.join("config.json"))?;
    println!(
        "wrote {} labeled, {} unlabeled, {} test videos to {}",
        data.labeled.len(),
        data.unlabeled.len(),
        data.test.len(),
        out.display()
    );
    Ok(())
}

fn train(cfg: &ExperimentConfig, out: &Path, resume: Option<&Path>, max_epochs: Option<usize>) -> tcl_core::Result<()> {
    std::fs::create_dir_all(out)?;
    cfg.save(&out.join("config.json"))?;
    let data = PreparedData::build(cfg)?;
    let mut state = match resume {
        Some(p) => TrainState::load(p)?,
        None => TrainState::new(cfg)?,
    };
    let opts = RunOptions {
        checkpoint_dir: Some(out.join("checkpoints")),
        max_epochs,
    };
    std::fs::create_dir_all(out.join("checkpoints"))?;
    let done = advance(cfg, &mut state, &data, &opts)?;
    state.save(&out.join("state.ckpt"))?;
    if !done {
        std::fs::write(out.join("metrics.csv"), tcl_core::trainer::metrics_csv(&state.history)?)?;
        println!("stopped after epoch {}; resume with --resume {}", state.history.len(), out.join("state.ckpt").display());
        return Ok(());
    }
    state.params.save(&out.join("model.ckpt"))?;
    let report = final_report(cfg, &state.params, &data)?;
    let result = PipelineResult { state, report };
    write_run_outputs(out, cfg, &result)?;
    println!("top1 {:.4}", result.report.accuracy.top1);
    Ok(())
}

fn grid(
    cfg: &ExperimentConfig,
    seeds: Vec<u64>,
    variants: &[String],
    label_percents: Vec<f64>,
    rhos: Vec<f64>,
    out: &Path,
) -> tcl_core::Result<bool> {
    let variants = if variants.is_empty() {
        Variant::ALL.to_vec()
    } else {
        variants.iter().map(|v| Variant::parse(v)).collect::<tcl_core::Result<_>>()?
    };
    let mut spec = GridSpec::from_base(cfg, variants, seeds);
    if !label_percents.is_empty() {
        spec.label_percents = label_percents;
    }
    if !rhos.is_empty() {
        spec.rhos = rhos;
    }
    std::fs::create_dir_all(out)?;
    cfg.save(&out.join("config.json"))?;
    let g = run_grid(cfg, &spec, Some(out))?;
    print!("{}", g.domain_shift_table());
    let failures = g.failures();
    if failures > 0 {
        eprintln!("{failures} of {} runs failed; see grid.csv", g.runs.len());
    }
    Ok(failures == 0)
}

fn evaluate(cfg: &ExperimentConfig, checkpoint: &Path, out: Option<&Path>) -> tcl_core::Result<()> {
    let params = EncoderParams::load(checkpoint)?;
    let data = PreparedData::build(cfg)?;
    let model = CenterClipClassifier {
        params: &params,
        frames: cfg.clips.fast,
    };
    let report = eval::evaluate(&model, &data.test, Some(&data.unlabeled), cfg.seed, &cfg.fingerprint()?)?;
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            cfg.save(&dir.join("config.json"))?;
            write_json(&dir.join("report.json"), &report)?;
            println!("top1 {:.4}", report.accuracy.top1);
        }
        None => print!("{}", json_pretty(&report)?),
    }
    Ok(())
}

fn gradcheck(instances: usize, seed: u64, out: Option<&Path>) -> tcl_core::Result<bool> {
    let ops = run_op_suite(seed, tcl_core::gradcheck::DEFAULT_STEP)?;
    let suite = run_gradient_suite(&SuiteConfig {
        instances,
        seed,
        ..SuiteConfig::default()
    })?;
    let mut ok = true;
    for c in &ops {
        ok &= c.rel_error < TOLERANCE;
        println!("op   {:<14} max rel error {:.3e}", c.op, c.rel_error);
    }
    for l in &suite.losses {
        ok &= l.max_rel_error < TOLERANCE;
        println!("loss {:<14} max rel error {:.3e} over {} instances", l.name, l.max_rel_error, l.checks);
    }
    println!(
        "{} ({} redraws, {} instances with multi-member groups)",
        if ok { "PASS" } else { "FAIL" },
        suite.redraws,
        suite.multi_member_groups
    );
    if let Some(p) = out {
        write_json(p, &suite)?;
    }
    Ok(ok)
}

fn run(cli: Cli) -> tcl_core::Result<bool> {
    match cli.command {
        Command::GenData { cfg, seed, out } => gen_data(&cfg.resolve(seed)?, &out).map(|_| true),
        Command::Train {
            cfg,
            seed,
            variant,
            out,
            resume,
            max_epochs,
        } => {
            let mut c = cfg.resolve(Some(seed))?;
            if let Some(v) = variant {
                c = Variant::parse(&v)?.apply(&c);
            }
            train(&c, &out, resume.as_deref(), max_epochs).map(|_| true)
        }
        Command::Grid {
            cfg,
            seed,
            variant,
            label_percent,
            rho,
            out,
        } => grid(&cfg.resolve(None)?, seed, &variant, label_percent, rho, &out),
        Command::Eval { cfg, checkpoint, out } => evaluate(&cfg.resolve(None)?, &checkpoint, out.as_deref()).map(|_| true),
        Command::Gradcheck { instances, seed, out } => gradcheck(instances, seed, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.verbose { "info" } else { "warn" }))
        .init();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e @ Error::Config { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
