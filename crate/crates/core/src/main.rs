use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use fovlab::adapt::{SubstitutionKind, MIN_LABELS};
use fovlab::factors::{pgm_strip, render, FactorConfig, PairSampler, Sigma};
use fovlab::metrics::{pair_matrix_csv, ScoreReport};
use fovlab::rng::{Purpose, SeedStream};
use fovlab::runner::{
    adapt_model, read_records, run_sweep, summarize, summary_csv, summary_text, train_cell, CellKey, EvaluationData,
    ExperimentConfig, RunnerError, RECORDS_FILE,
};
use fovlab::theory::{gap_row, gap_table_csv, GaussianWorld};
use fovlab::vae::{latent_traversal, Objective, TrainedModel};

#[derive(Parser)]
#[command(name = "fovlab", version, about = "Disentanglement under correlated factors of variation")]
struct Cli {
    /// Experiment config (JSON). Defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for single-model commands; pins the seed list of a sweep.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a dataset from the correlated factor distribution as JSON lines.
    GenerateDataset {
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Correlation strength (a number or "inf"); defaults to the first
        /// sigma of the config.
        #[arg(long)]
        sigma: Option<Sigma>,
        /// Also write the first N images as PGM files.
        #[arg(long, default_value_t = 0)]
        pgm: usize,
    },
    /// Train one model and write its checkpoint and loss trace.
    Train {
        #[arg(long)]
        sigma: Option<Sigma>,
        #[arg(long, value_parser = parse_objective)]
        objective: Option<Objective>,
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Score a trained model on the uniform evaluation set.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        /// Training sigma; the unfairness classifiers are fitted on it.
        #[arg(long)]
        sigma: Option<Sigma>,
    },
    /// Fast adaptation of a trained model from a few labels.
    Adapt {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 100)]
        labels: usize,
        #[arg(long)]
        kind: Option<SubstitutionKind>,
        /// Training sigma; the unfairness classifiers are fitted on it.
        #[arg(long)]
        sigma: Option<Sigma>,
    },
    /// Train and evaluate every cell of the config (resumable).
    Sweep,
    /// Aggregate the records of a sweep.
    Summarize {
        /// Records file; defaults to <out>/records.jsonl.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Decode latent traversals of a trained model as PGM strips.
    Traverse {
        #[arg(long)]
        model: PathBuf,
        /// Latent dimension; all dimensions when omitted.
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long, default_value_t = 9)]
        steps: usize,
        /// Traverse from -range to +range.
        #[arg(long, default_value_t = 2.0)]
        range: f64,
        /// Base factor configuration, comma separated; uniform draw when
        /// omitted.
        #[arg(long, value_delimiter = ',')]
        base: Option<Vec<usize>>,
    },
    /// Print the likelihood gap of disentangled maps for correlated
    /// Gaussian factors.
    TheoryDemo {
        #[arg(long, value_delimiter = ',')]
        rho: Option<Vec<f64>>,
    },
    /// Print the default experiment config.
    DefaultConfig,
}

fn parse_objective(s: &str) -> Result<Objective, String> {
    match s {
        "beta_vae" | "beta-vae" => Ok(Objective::BetaVae),
        "ada_gvae" | "ada-gvae" => Ok(Objective::AdaGvae),
        _ => Err(format!("unknown objective {s:?} (expected beta_vae or ada_gvae)")),
    }
}

/// Config problems exit with status 2, like usage errors.
struct ConfigError(String);

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, ConfigError> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) if !p.exists() => Err(ConfigError(format!("config file not found: {}", p.display()))),
        Some(p) => ExperimentConfig::load(p).map_err(|e| match e {
            RunnerError::Config(m) => ConfigError(m),
            other => ConfigError(format!("{}: {other}", p.display())),
        }),
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_model(path: &Path) -> anyhow::Result<TrainedModel> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing model {}", path.display()))
}

fn print_report(report: &ScoreReport, names: &[&str]) {
    println!("mig {:.4}  dci {:.4}  sap {:.4}", report.mig, report.dci, report.sap);
    let s = report.pairwise_summary;
    let others = s.median_others.map_or("-".into(), |v| format!("{v:.4}"));
    println!("correlated pair {:.4}  median others {others}", s.correlated);
    println!("correlated unfairness {:.4}", report.correlated_unfairness);
    print!("{}", pair_matrix_csv(&report.pairwise_matrix(), names));
}

fn run(cli: Cli, cfg: ExperimentConfig) -> anyhow::Result<()> {
    let seed = cli.seed.unwrap_or(cfg.seeds[0]);
    let out = &cli.out;
    let names = cfg.space.names();
    match cli.command {
        Command::GenerateDataset { samples, sigma, pgm } => {
            let corr = cfg.correlation(sigma.unwrap_or(cfg.sigmas[0]));
            corr.validate(&cfg.space)?;
            let sampler = PairSampler::for_spec(&cfg.space, &corr)?;
            let mut rng = SeedStream::new(seed).stream(Purpose::Sampling, 0);
            let path = out.join("dataset.jsonl");
            std::fs::create_dir_all(out)?;
            let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
            let header = serde_json::json!({
                "type": "header", "space": cfg.space, "correlation": corr,
                "render": cfg.render, "seed": seed, "samples": samples,
            });
            writeln!(w, "{header}")?;
            for i in 0..samples {
                let c = sampler.sample(&cfg.space, &corr, &mut rng);
                let obs = render(&cfg.space, &c, &cfg.render)?;
                writeln!(w, "{}", serde_json::json!({ "type": "sample", "index": i, "config": c.0, "pixels": obs.pixels }))?;
                if i < pgm {
                    write_file(&out.join("images").join(format!("{i:05}.pgm")), obs.to_pgm())?;
                }
            }
            w.flush()?;
            println!("wrote {samples} samples to {}", path.display());
        }
        Command::Train { sigma, objective, beta } => {
            let cell = CellKey {
                sigma: sigma.unwrap_or(cfg.sigmas[0]),
                objective: objective.unwrap_or(cfg.objectives[0]),
                beta: beta.unwrap_or(cfg.betas[0]),
                seed,
            };
            let trained = train_cell(&cfg, &cell)?;
            write_file(&out.join("model.json"), serde_json::to_string(&trained)?)?;
            write_file(&out.join("trace.csv"), trained.trace_csv())?;
            if let Some(last) = trained.trace.last() {
                println!("{}: final loss {:.3} (recon {:.3}, kl {:.3})", cell.id(), last.loss, last.recon, last.kl);
            }
            println!("model written to {}", out.join("model.json").display());
        }
        Command::Evaluate { model, sigma } => {
            let trained = load_model(&model)?;
            let data = EvaluationData::encode(&cfg, &trained, sigma.unwrap_or(cfg.sigmas[0]), seed)?;
            let report = data.score(&cfg, None)?;
            write_file(&out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
            print_report(&report, &names);
        }
        Command::Adapt { model, labels, kind, sigma } => {
            let mut cfg = cfg.clone();
            cfg.adaptation_kind = kind.unwrap_or(cfg.adaptation_kind);
            if labels < MIN_LABELS {
                bail!("--labels must be at least {MIN_LABELS}");
            }
            let trained = load_model(&model)?;
            let data = EvaluationData::encode(&cfg, &trained, sigma.unwrap_or(cfg.sigmas[0]), seed)?;
            let substitution = adapt_model(&cfg, &trained, seed, labels)?;
            let before = data.score(&cfg, None)?;
            let after = data.score(&cfg, Some(&substitution))?;
            write_file(&out.join("substitution.json"), serde_json::to_string_pretty(&substitution)?)?;
            write_file(&out.join("adapted_report.json"), serde_json::to_string_pretty(&after)?)?;
            println!("substituted latent dims {:?} using {labels} labels", substitution.input_dims);
            println!("before:");
            print_report(&before, &names);
            println!("after:");
            print_report(&after, &names);
        }
        Command::Sweep => {
            let mut cfg = cfg.clone();
            if let Some(s) = cli.seed {
                cfg.seeds = vec![s];
            }
            let outcome = run_sweep(&cfg, out, cli.jobs)?;
            if let Some(q) = &outcome.quarantined {
                eprintln!("warning: a truncated record was moved to {}", q.display());
            }
            println!("{} cells trained, {} skipped", outcome.trained, outcome.skipped);
            let rows = summarize(&outcome.records);
            write_file(&out.join("summary.csv"), summary_csv(&rows))?;
            print!("{}", summary_text(&rows));
        }
        Command::Summarize { records } => {
            let path = records.unwrap_or_else(|| out.join(RECORDS_FILE));
            let recs = read_records(&path)?;
            if recs.is_empty() {
                bail!("no records in {}", path.display());
            }
            let rows = summarize(&recs);
            let text = summary_text(&rows);
            write_file(&out.join("summary.csv"), summary_csv(&rows))?;
            write_file(&out.join("summary.txt"), &text)?;
            print!("{text}");
        }
        Command::Traverse { model, dim, steps, range, base } => {
            let trained = load_model(&model)?;
            let base = match base {
                Some(v) => FactorConfig(v),
                None => cfg.space.sample_uniform(&mut SeedStream::new(seed).stream(Purpose::Evaluation, 1)),
            };
            cfg.space.check(&base)?;
            let steps = steps.max(2);
            let values: Vec<f64> = (0..steps).map(|i| -range + 2.0 * range * i as f64 / (steps - 1) as f64).collect();
            let dims: Vec<usize> = match dim {
                Some(d) => vec![d],
                None => (0..trained.model.latent_dim()).collect(),
            };
            let original = render(&cfg.space, &base, &cfg.render)?;
            write_file(&out.join("traversal-base.pgm"), original.to_pgm())?;
            for d in dims {
                let images = latent_traversal(&trained.model, &cfg.space, &cfg.render, &base, d, &values)?;
                let path = out.join(format!("traversal-dim{d}.pgm"));
                write_file(&path, pgm_strip(&images))?;
                println!("{}", path.display());
            }
        }
        Command::TheoryDemo { rho } => {
            let rhos = rho.unwrap_or_else(|| (0..10).map(|i| i as f64 / 10.0).chain([0.95, 0.99]).collect());
            print!("{}", gap_table_csv(&rhos)?);
            if rhos.len() == 1 {
                let row = gap_row(&GaussianWorld::new(rhos[0])?);
                println!("gap {:.4}", row.min_diagonal_kl);
            }
        }
        Command::DefaultConfig => println!("{}", ExperimentConfig::default().to_json_pretty()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = match load_config(cli.config.as_deref()) {
        Ok(c) => c,
        Err(ConfigError(m)) => {
            eprintln!("error: {m}");
            return ExitCode::from(2);
        }
    };
    match run(cli, cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
