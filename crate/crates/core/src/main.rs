use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dprgmi::accountant;
use dprgmi::checkpoint::{read_checkpoint, write_checkpoint};
use dprgmi::dp_optimizer::{train_nonprivate, train_private, PrivacySpec, TrainConfig};
use dprgmi::evaluation::{macro_auroc, probe_predict, train_probe, DEFAULT_PROBE_LAMBDA};
use dprgmi::geometry::{covariance_summary, displacement};
use dprgmi::model::{embed_batch, init_params, logits_batch, pos_weights, ModelConfig};
use dprgmi::synthdata::{generate, Dataset};
use dprgmi::workflow::config::DataSource;
use dprgmi::workflow::correlate::{correlate, render_correlations};
use dprgmi::workflow::io::{read_dataset, read_embeddings, read_labels, write_dataset, write_embeddings, write_labels};
use dprgmi::workflow::report::{read_report, render_csv, render_table, write_report};
use dprgmi::workflow::sweep::{pretrain, run_sweep_with_timestamp};
use dprgmi::workflow::SweepConfig;
use dprgmi::{Error, Result};

#[derive(Parser)]
#[command(name = "dprgmi", version, about = "Representation-geometry diagnostics for DP training")]
struct Cli {
    /// Master seed (overrides the config's seed list for `run`)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Sweep config (TOML); defaults to the bundled synthetic benchmark
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset described by the config
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Non-private training from a random init; writes a checkpoint
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        steps: u64,
        #[arg(long, default_value_t = 40)]
        batch_size: usize,
        #[command(flatten)]
        opt: OptArgs,
    },
    /// DP-SGD (or non-private with --nonprivate) from a checkpoint or random init
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        init: Option<PathBuf>,
        /// Target epsilon; sigma is calibrated
        #[arg(long, conflicts_with_all = ["sigma", "nonprivate"])]
        epsilon: Option<f64>,
        /// Noise multiplier given directly
        #[arg(long, conflicts_with = "nonprivate")]
        sigma: Option<f64>,
        #[arg(long)]
        nonprivate: bool,
        #[command(flatten)]
        privacy: PrivacyArgs,
        #[command(flatten)]
        opt: OptArgs,
    },
    /// Privacy spent by a fixed (q, sigma, T, delta)
    Account {
        #[arg(long)]
        sigma: f64,
        #[command(flatten)]
        privacy: PrivacyArgs,
    },
    /// Smallest noise multiplier meeting a target epsilon
    Calibrate {
        #[arg(long)]
        epsilon: f64,
        #[command(flatten)]
        privacy: PrivacyArgs,
    },
    /// Write embeddings of a dataset under a checkpoint
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Displacement and effective dimension of embedding files
    Geometry {
        #[arg(long)]
        embeddings: PathBuf,
        /// Embeddings of the same rows under the initialization
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Linear probe on frozen embeddings; prints test macro AUROC
    Probe {
        #[arg(long, alias = "train-emb")]
        train_embeddings: PathBuf,
        #[arg(long)]
        train_labels: PathBuf,
        #[arg(long, alias = "test-emb")]
        test_embeddings: PathBuf,
        #[arg(long)]
        test_labels: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PROBE_LAMBDA)]
        lambda: f64,
    },
    /// Full sweep over branches, seeds, and privacy targets
    Run {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Record this string as the report timestamp
        #[arg(long)]
        timestamp: Option<String>,
    },
    /// Spearman correlation of end-to-end AUROC with G, Δ, d_eff
    Correlate {
        #[arg(long, num_args = 1.., required = true)]
        reports: Vec<PathBuf>,
        /// Leave out ε = ∞ records (the default)
        #[arg(long, conflicts_with = "include_nonprivate")]
        exclude_nonprivate: bool,
        #[arg(long)]
        include_nonprivate: bool,
    },
    /// Render a report as a table (or CSV)
    Report {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        csv: bool,
    },
}

#[derive(Args)]
struct PrivacyArgs {
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    #[arg(long, default_value_t = 0.01)]
    sample_rate: f64,
    #[arg(long, default_value_t = 2000)]
    steps: u64,
    #[arg(long, default_value_t = 1.0)]
    clip_norm: f64,
}

#[derive(Args)]
struct OptArgs {
    #[arg(long, default_value_t = 0.05)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 64)]
    hidden_dim: usize,
    #[arg(long, default_value_t = 16)]
    embed_dim: usize,
}

fn load_config(path: Option<&Path>) -> Result<SweepConfig> {
    match path {
        Some(p) => SweepConfig::load(p),
        None => Ok(SweepConfig::benchmark()),
    }
}

fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if (-4..6).contains(&mag) {
        format!("{x:.*}", (5 - mag) as usize)
    } else {
        format!("{x:.5e}")
    }
}

fn train_config(data: &Dataset, opt: &OptArgs, seed: u64) -> Result<TrainConfig> {
    Ok(TrainConfig {
        learning_rate: opt.learning_rate,
        momentum: opt.momentum,
        seed,
        weights: pos_weights(&data.labels)?,
    })
}

fn model_config(data: &Dataset, opt: &OptArgs) -> ModelConfig {
    ModelConfig {
        input_dim: data.feature_dim(),
        hidden_dim: opt.hidden_dim,
        embed_dim: opt.embed_dim,
        n_labels: data.n_labels(),
    }
}

fn execute(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Synth { out_dir } => {
            let cfg = load_config(cli.config.as_deref())?;
            let DataSource::Synth(mut synth) = cfg.data else {
                return Err(Error::Config("config data source is not synthetic".into()));
            };
            if let Some(s) = cli.seed {
                synth.seed = s;
            }
            let (train, test) = generate(&synth)?;
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::Io {
                path: out_dir.clone(),
                source: e,
            })?;
            write_dataset(&train, &out_dir.join("train.dprd"))?;
            write_dataset(&test, &out_dir.join("test.dprd"))?;
            write_labels(&train.labels, &out_dir.join("train_labels.csv"))?;
            write_labels(&test.labels, &out_dir.join("test_labels.csv"))?;
            println!("train {} rows, test {} rows -> {}", train.len(), test.len(), out_dir.display());
        }
        Command::Pretrain {
            data,
            out,
            steps,
            batch_size,
            opt,
        } => {
            let ds = read_dataset(&data)?;
            let params = pretrain(&ds, model_config(&ds, &opt), &train_config(&ds, &opt, seed)?, batch_size, steps)?;
            write_checkpoint(&params, &out)?;
            let auroc = macro_auroc(&logits_batch(&params, &ds.features)?, &ds.labels)?;
            println!("train macro AUROC {:.1}", 100.0 * auroc.value);
        }
        Command::Train {
            data,
            out,
            init,
            epsilon,
            sigma,
            nonprivate,
            privacy,
            opt,
        } => {
            let ds = read_dataset(&data)?;
            let cfg = train_config(&ds, &opt, seed)?;
            let phi0 = match init {
                Some(p) => read_checkpoint(&p)?,
                None => init_params(model_config(&ds, &opt), seed)?,
            };
            let params = if nonprivate {
                let batch = (privacy.sample_rate * ds.len() as f64).floor() as usize;
                let p = train_nonprivate(&ds, &phi0, &cfg, batch, privacy.steps)?;
                println!("epsilon inf");
                p
            } else {
                if epsilon.is_none() && sigma.is_none() {
                    return Err(Error::Config("give --epsilon, --sigma, or --nonprivate".into()));
                }
                let mut spec = PrivacySpec {
                    epsilon_target: epsilon,
                    delta: privacy.delta,
                    clip_norm: privacy.clip_norm,
                    sample_rate: privacy.sample_rate,
                    steps: privacy.steps,
                    noise_multiplier: sigma,
                };
                spec.validate(ds.len())?;
                let s = spec.resolve()?;
                let (p, spent) = train_private(&ds, &phi0, &spec, &cfg)?;
                println!("sigma {} epsilon {} delta {}", sig6(s), sig6(spent.epsilon), spent.delta);
                p
            };
            write_checkpoint(&params, &out)?;
        }
        Command::Account { sigma, privacy } => {
            let (eps, order) = accountant::epsilon(privacy.sample_rate, sigma, privacy.steps, privacy.delta)?;
            println!("epsilon {} (order {order})", sig6(eps));
        }
        Command::Calibrate { epsilon, privacy } => {
            let sigma = accountant::calibrate_sigma(epsilon, privacy.delta, privacy.sample_rate, privacy.steps)?;
            let (eps, _) = accountant::epsilon(privacy.sample_rate, sigma, privacy.steps, privacy.delta)?;
            println!("sigma {} epsilon {}", sig6(sigma), sig6(eps));
        }
        Command::Embed { checkpoint, data, out } => {
            let params = read_checkpoint(&checkpoint)?;
            let ds = read_dataset(&data)?;
            write_embeddings(&embed_batch(&params, &ds.features)?, &out)?;
        }
        Command::Geometry { embeddings, reference } => {
            let z = read_embeddings(&embeddings)?;
            let summary = covariance_summary(&z)?;
            println!("trace {}", sig6(summary.trace));
            match summary.d_eff {
                Some(d) => println!("d_eff {}", sig6(d)),
                None => return Err(Error::DegenerateGeometry("zero covariance".into())),
            }
            if let Some(r) = reference {
                let z0 = read_embeddings(&r)?;
                println!("displacement {}", sig6(displacement(&z, &z0)?));
            }
        }
        Command::Probe {
            train_embeddings,
            train_labels,
            test_embeddings,
            test_labels,
            lambda,
        } => {
            let ztr = read_embeddings(&train_embeddings)?;
            let ytr = read_labels(&train_labels)?;
            let zte = read_embeddings(&test_embeddings)?;
            let yte = read_labels(&test_labels)?;
            let probe = train_probe(&ztr, &ytr, lambda, &pos_weights(&ytr)?)?;
            let auroc = macro_auroc(&probe_predict(&probe, &zte)?, &yte)?;
            println!("probe macro AUROC {:.1}", 100.0 * auroc.value);
        }
        Command::Run { out, csv, timestamp } => {
            let mut cfg = load_config(cli.config.as_deref())?;
            if let Some(s) = cli.seed {
                cfg.seeds = vec![s];
            }
            let profile = run_sweep_with_timestamp(&cfg, timestamp)?;
            write_report(&profile, &out)?;
            if let Some(p) = csv {
                std::fs::write(&p, render_csv(&profile)).map_err(|e| Error::Io { path: p, source: e })?;
            }
            print!("{}", render_table(&profile));
        }
        Command::Correlate {
            reports,
            include_nonprivate,
            ..
        } => {
            let profiles = reports.iter().map(|p| read_report(p)).collect::<Result<Vec<_>>>()?;
            print!("{}", render_correlations(&correlate(&profiles, include_nonprivate)));
        }
        Command::Report { report, csv } => {
            let profile = read_report(&report)?;
            if csv {
                print!("{}", render_csv(&profile));
            } else {
                print!("{}", render_table(&profile));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
