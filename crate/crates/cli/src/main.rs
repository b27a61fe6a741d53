use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use sal_core::align::{alignment_report, read_summary, write_pairs, write_summary, AlignConfig};
use sal_core::config::{self, write_echo};
use sal_core::data::{generate_dataset, DataConfig, Dataset, Trajectory};
use sal_core::nn::Encoder;
use sal_core::probe::{
    demos_of, read_results, rollout_eval, train_bc_probe, train_state_probe, write_results, BcProbeConfig,
    ProbePolicy, ResultRow, StateProbeConfig,
};
use sal_core::report::{alignment_svg, loss_curves_svg, metric_table, read_log, write_log, write_metrics};
use sal_core::sim::Instruction;
use sal_core::train::{train_policy, Checkpoint, TrainConfig, Variant};
use sal_core::verify::{run_all, VerifyConfig};
use sal_core::{par, seed};

const CHECKPOINT_FILE: &str = "checkpoint.sal";
const LOG_FILE: &str = "log.csv";
const RESULTS_FILE: &str = "results.csv";
const SUMMARY_FILE: &str = "summary.csv";

/// Inverse-dynamics auxiliary-loss lab: data generation, training,
/// frozen-encoder probes and alignment analysis on a toy tabletop.
#[derive(Parser)]
#[command(name = "sal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate expert demonstrations.
    GenData {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy (bc, aux or aux-ptr).
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the aux/ptr switches of the config.
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-task behavior-cloning probes on a frozen encoder, with rollouts.
    ProbeBc {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Encoder label in the results (default: checkpoint directory name).
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Proprioceptive-state probe on a frozen encoder.
    ProbeState {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pixel-controlled state-feature alignment of one or more encoders.
    Align {
        #[arg(long, num_args = 1.., required = true)]
        ckpt: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also score a randomly initialised encoder of the same architecture.
        #[arg(long)]
        random: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge outputs of train / probe / align runs into tables and plots.
    Report {
        #[arg(long = "in", num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the property suite.
    Verify {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for the config echo and a results file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_or_default<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    Ok(match path {
        Some(p) => config::load(p)?,
        None => T::default(),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn encoder_id(ckpt: &Path, id: Option<String>) -> String {
    id.unwrap_or_else(|| {
        ckpt.parent()
            .and_then(|p| p.file_name())
            .or_else(|| ckpt.file_stem())
            .map_or_else(|| "encoder".into(), |s| s.to_string_lossy().into_owned())
    })
}

fn checkpoint_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(CHECKPOINT_FILE)
    } else {
        p.to_path_buf()
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenData { n, seed, config, out } => {
            let mut cfg: DataConfig = load_or_default(config.as_deref())?;
            if let Some(n) = n {
                cfg.n_traj = n;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            write_echo(&out, &cfg)?;
            let m = generate_dataset(&cfg, &out)?;
            info!("wrote {} trajectories ({} train, {} val) to {}", m.n_traj, m.n_train, m.n_val, out.display());
        }
        Command::Train {
            data,
            config,
            variant,
            seed,
            out,
        } => {
            let mut cfg: TrainConfig = load_or_default(config.as_deref())?;
            if let Some(v) = variant {
                cfg = cfg.with_variant(v);
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let cfg = cfg.resolved()?;
            let ds = Dataset::load(&data)?;
            write_echo(&out, &cfg)?;
            info!("training {} for {} steps", cfg.variant(), cfg.steps);
            let (ckpt, log) = train_policy(cfg, &ds)?;
            ckpt.save(&out.join(CHECKPOINT_FILE))?;
            write_log(create(&out.join(LOG_FILE))?, &log)?;
            if let Some(last) = log.last() {
                info!("final L_vla {:.4} L_inv {:.4}", last.l_vla, last.l_inv);
            }
        }
        Command::ProbeBc {
            ckpt,
            data,
            config,
            id,
            seed,
            out,
        } => {
            let mut cfg: BcProbeConfig = load_or_default(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let ckpt = checkpoint_path(&ckpt);
            let enc = Checkpoint::load(&ckpt)?.load_encoder()?;
            let ds = Dataset::load(&data)?;
            write_echo(&out, &cfg)?;
            let name = encoder_id(&ckpt, id);
            let sim = ds.sim();
            let stats = &ds.manifest.action_stats;
            let mut rows = Vec::new();
            for task in &ds.manifest.tasks {
                let instr: Instruction = task.parse()?;
                let demos = demos_of(&ds.trajectories, &instr);
                let res = train_bc_probe(&enc, &demos, stats, &cfg)?;
                let policy = ProbePolicy {
                    encoder: &enc,
                    head: &res.head,
                    stats,
                };
                let roll = rollout_eval(&sim, &policy, &[instr], cfg.n_rollouts, cfg.episode_cap, cfg.seed)?;
                info!("{name} {task}: success {:.2}", roll.aggregate);
                rows.push(ResultRow {
                    success_rate: Some(roll.aggregate),
                    bc_train_loss: Some(res.report.train_loss),
                    bc_val_loss: Some(res.report.val_loss),
                    ..ResultRow::new(&name, task)
                });
            }
            write_results(create(&out.join(RESULTS_FILE))?, &rows)?;
        }
        Command::ProbeState {
            ckpt,
            data,
            config,
            id,
            seed,
            out,
        } => {
            let mut cfg: StateProbeConfig = load_or_default(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let ckpt = checkpoint_path(&ckpt);
            let enc = Checkpoint::load(&ckpt)?.load_encoder()?;
            let ds = Dataset::load(&data)?;
            write_echo(&out, &cfg)?;
            let train: Vec<&Trajectory> = ds.train().iter().collect();
            let val: Vec<&Trajectory> = ds.val().iter().collect();
            let res = train_state_probe(&enc, &train, &val, &cfg)?;
            let name = encoder_id(&ckpt, id);
            info!(
                "{name}: state val L1 {:.4} (median baseline {:.4})",
                res.final_val, res.baseline_val
            );
            let row = ResultRow {
                state_train_loss: Some(res.report.train_loss),
                state_val_loss: Some(res.final_val),
                ..ResultRow::new(&name, "all")
            };
            write_results(create(&out.join(RESULTS_FILE))?, &[row])?;
        }
        Command::Align {
            ckpt,
            data,
            config,
            random,
            seed,
            out,
        } => {
            let mut cfg: AlignConfig = load_or_default(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let ds = Dataset::load(&data)?;
            let mut encoders: Vec<(String, Encoder<f32>)> = Vec::new();
            for p in &ckpt {
                let p = checkpoint_path(p);
                let name = encoder_id(&p, None);
                if encoders.iter().any(|(n, _)| *n == name) {
                    bail!("two checkpoints share the label `{name}`");
                }
                encoders.push((name, Checkpoint::load(&p)?.load_encoder()?));
            }
            if random {
                let mut ec = encoders[0].1.cfg.clone();
                ec.seed = seed::named(cfg.seed, "align/random-encoder");
                encoders.push(("random-init".into(), Encoder::new(ec)?));
            }
            write_echo(&out, &cfg)?;
            let trajs: Vec<&Trajectory> = ds.trajectories.iter().collect();
            let named: Vec<(String, &Encoder<f32>)> = encoders.iter().map(|(n, e)| (n.clone(), e)).collect();
            let rep = alignment_report(&trajs, &named, &cfg)?;
            if !rep.omitted_gaps.is_empty() {
                info!("gaps without valid pairs: {:?}", rep.omitted_gaps);
            }
            for e in &rep.encoders {
                write_pairs(create(&out.join(format!("pairs_{}.csv", e.encoder)))?, &e.pairs)?;
            }
            let summary = rep.summary();
            for r in &summary {
                info!("{} {}: {:?}", r.encoder, r.metric, r.rho_partial);
            }
            write_summary(create(&out.join(SUMMARY_FILE))?, &summary)?;
        }
        Command::Report { inputs, seed, out } => {
            let mut runs = Vec::new();
            let mut results = Vec::new();
            let mut alignment = Vec::new();
            for dir in &inputs {
                let name = dir.file_name().map_or_else(|| dir.display().to_string(), |s| s.to_string_lossy().into_owned());
                let mut found = false;
                if let Ok(f) = File::open(dir.join(LOG_FILE)) {
                    runs.push((name, read_log(f)?));
                    found = true;
                }
                if let Ok(f) = File::open(dir.join(RESULTS_FILE)) {
                    results.extend(read_results(f)?);
                    found = true;
                }
                if let Ok(f) = File::open(dir.join(SUMMARY_FILE)) {
                    alignment.extend(read_summary(f)?);
                    found = true;
                }
                if !found {
                    bail!("{} holds no {LOG_FILE}, {RESULTS_FILE} or {SUMMARY_FILE}", dir.display());
                }
            }
            write_echo(&out, &ReportEcho { inputs: inputs.clone(), seed: seed.unwrap_or(0) })?;
            write_metrics(create(&out.join("metrics.csv"))?, &metric_table(&results, &alignment))?;
            if !results.is_empty() {
                write_results(create(&out.join(RESULTS_FILE))?, &results)?;
            }
            if !alignment.is_empty() {
                write_summary(create(&out.join("alignment.csv"))?, &alignment)?;
                fs::write(out.join("alignment.svg"), alignment_svg(&alignment))?;
            }
            if !runs.is_empty() {
                fs::write(out.join("loss_curves.svg"), loss_curves_svg(&runs))?;
            }
        }
        Command::Verify { config, seed, out } => {
            let mut cfg: VerifyConfig = load_or_default(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let outcomes = run_all(&cfg)?;
            let mut ok = true;
            let mut lines = String::new();
            for c in &outcomes {
                let line = format!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                println!("{line}");
                lines.push_str(&line);
                lines.push('\n');
                ok &= c.passed;
            }
            if let Some(dir) = out {
                write_echo(&dir, &cfg)?;
                fs::write(dir.join("verify.txt"), lines)?;
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

#[derive(serde::Serialize)]
struct ReportEcho {
    inputs: Vec<PathBuf>,
    seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if std::env::var("SAL_DETERMINISTIC").is_ok_and(|v| !v.is_empty() && v != "0") {
        par::set_sequential(true);
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
