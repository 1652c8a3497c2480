use clap::{Parser, Subcommand};
use edgedrive::env::{generate_dataset, score, Dataset, Weather};
use edgedrive::harness::{
    dataset_seed, load_config, run_sweep, train_model, verify, write_rows, write_summary, ExperimentConfig,
    SweepKind,
};
use edgedrive::numerics::{derive_seed, RngStream};
use edgedrive::pipeline::{dtcp_variant, run_episode, DelayProfile, Driver, RunConfig};
use edgedrive::train::{load_checkpoint, save_checkpoint, Model};
use edgedrive::{Error, Result};
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "edgedrive", version, about = "Delay-aware driving over a simulated OFDM uplink")]
struct Cli {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out the expert and write a labelled dataset.
    GenData,
    /// Jointly train encoder and agent on the dataset.
    Train,
    /// Run one closed-loop episode and write its slot trace as CSV.
    RunEpisode {
        #[arg(long, default_value_t = 1)]
        variant: u8,
        #[arg(long, default_value_t = 0)]
        delay: u64,
        #[arg(long, default_value_t = 20.0)]
        snr_db: f64,
        #[arg(long, default_value_t = 0)]
        repetition: usize,
        /// Drive with the privileged expert instead of the checkpoint.
        #[arg(long)]
        expert: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    SweepSnr(SweepArgs),
    SweepSymbols(SweepArgs),
    SweepDelay(SweepArgs),
    /// Channel-equivalence and information-bound self checks.
    Verify,
}

#[derive(clap::Args)]
struct SweepArgs {
    #[arg(long)]
    expert: bool,
}

fn make_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    make_parent(path)?;
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn model_for(cfg: &ExperimentConfig, expert: bool) -> Result<Option<Model>> {
    if expert {
        return Ok(None);
    }
    let path = &cfg.paths.checkpoint;
    if !path.exists() {
        return Err(Error::Usage(format!(
            "checkpoint {} not found; run `train` first or pass --expert",
            path.display()
        )));
    }
    load_checkpoint(path).map(Some)
}

fn sweep(cfg: &ExperimentConfig, kind: SweepKind, args: &SweepArgs) -> Result<()> {
    let model = model_for(cfg, args.expert)?;
    let rows = run_sweep(cfg, kind, model.as_ref())?;
    let dir = &cfg.paths.out_dir;
    let episodes = dir.join(format!("sweep_{}.csv", kind.name()));
    let summary = dir.join(format!("sweep_{}_summary.csv", kind.name()));
    write_rows(create(&episodes)?, cfg, kind, &rows)?;
    write_summary(create(&summary)?, cfg, kind, &rows)?;
    println!("wrote {} and {}", episodes.display(), summary.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.validate()?;
    match cli.command {
        Command::GenData => {
            make_parent(&cfg.paths.dataset)?;
            let ds = generate_dataset(&cfg.env, &cfg.data, dataset_seed(&cfg), &cfg.paths.dataset)?;
            println!("wrote {} records to {}", ds.len(), cfg.paths.dataset.display());
        }
        Command::Train => {
            let dataset = Dataset::load(&cfg.paths.dataset)?;
            let (model, history) = train_model(&cfg, &dataset)?;
            make_parent(&cfg.paths.checkpoint)?;
            save_checkpoint(&model, &cfg.paths.checkpoint)?;
            let log = cfg.paths.out_dir.join("train_history.csv");
            history.write_csv(create(&log)?)?;
            if let Some(last) = history.epochs.last() {
                println!("epoch {} task {:.5} kl {:.5} total {:.5}", last.epoch, last.task_loss, last.kl, last.total);
            }
            println!("wrote {}", cfg.paths.checkpoint.display());
        }
        Command::RunEpisode {
            variant,
            delay,
            snr_db,
            repetition,
            expert,
            out,
        } => {
            let model = model_for(&cfg, expert)?;
            let v = dtcp_variant(variant, cfg.encoder.l_z)?;
            let seed = derive_seed(cfg.master_seed, &[0xE915, variant as u64, delay, snr_db.to_bits(), repetition as u64]);
            let route = cfg.eval.route_offset + repetition as u64 % cfg.eval.routes;
            let mut run = RunConfig::new(cfg.env, cfg.train.channel.with_snr_db(snr_db), DelayProfile::from_total(delay), route);
            run.channel_mode = cfg.eval.channel_mode;
            run.l_w = cfg.train.l_w;
            run.weather = Weather::from_level(cfg.eval.weather_level, seed);
            let driver = match &model {
                Some(m) => Driver::Learned {
                    encoder: &m.encoder,
                    agent: &m.agent,
                },
                None => Driver::Expert,
            };
            let trace = run_episode(&run, driver, &v, &mut RngStream::new(seed, 0))?;
            let path = out.unwrap_or_else(|| cfg.paths.out_dir.join("episode.csv"));
            trace.write_csv(create(&path)?)?;
            println!(
                "route {} score {:.3} completion {:.4} collisions {} -> {}",
                trace.route_id,
                score(&trace),
                trace.completion,
                trace.collisions,
                path.display()
            );
        }
        Command::SweepSnr(a) => sweep(&cfg, SweepKind::Snr, &a)?,
        Command::SweepSymbols(a) => sweep(&cfg, SweepKind::Symbols, &a)?,
        Command::SweepDelay(a) => sweep(&cfg, SweepKind::Delay, &a)?,
        Command::Verify => {
            let checks = verify(cfg.master_seed)?;
            for c in &checks {
                println!("{} {} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if let Some(c) = checks.iter().find(|c| !c.passed) {
                return Err(Error::Numeric(format!("check {} failed", c.name)));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error kind=usage message={first:?}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error kind={} message={:?}", e.kind(), e.to_string());
            ExitCode::FAILURE
        }
    }
}
