use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use arq_core::cells::DiffScheme;
use arq_core::envs::fixtures::{record, Fixture};
use arq_core::envs::MINATAR_ACTIONS;
use arq_core::harness::{
    evaluate, format_table, gradient_suite, inspect, locality_suite, run_plan, AblationPlan, RunConfig,
    DEFAULT_TOP_K,
};
use arq_core::linalg::SeededRng;
use arq_core::Error;

/// Local-learning Q agents on MinAtar and continuous-control tasks.
#[derive(Parser)]
#[command(name = "arq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Run config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Dotted-path override, e.g. `learner.optimizer.lr=1e-3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Seed list, replacing the config's.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Output root, replacing the config's and $ARQ_OUT_DIR.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = ["32", "64"])]
    precision: Option<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut sets = self.sets.clone();
        if !self.seed.is_empty() {
            sets.push(format!("seeds={:?}", self.seed));
        }
        if let Some(p) = &self.precision {
            sets.push(format!("precision={p}"));
        }
        if let Some(out) = &self.out {
            sets.push(format!("out_dir={:?}", out.display().to_string()));
        }
        RunConfig::load(&self.config, &sets)
    }

    fn first_seed(&self, cfg: &RunConfig) -> u64 {
        cfg.seeds[0]
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the acting/learning loop for every seed.
    Train(RunArgs),
    /// Roll out a checkpoint and report return statistics.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
        /// Cut episodes after this many steps.
        #[arg(long, default_value_t = 100_000)]
        max_steps: u64,
    },
    /// Run an ablation plan and print the comparison table.
    Ablate {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// List the resolved variants and parameter counts without training.
        #[arg(long)]
        dry_run: bool,
    },
    /// Cell, DQN and locality gradient checks in 64-bit.
    Gradcheck {
        /// Random configurations per family.
        #[arg(long, default_value_t = 20)]
        configs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scheme that decides the exit code; both are always reported.
        #[arg(long, default_value = "extrapolated", value_parser = ["central", "extrapolated"])]
        scheme: String,
        #[arg(long, value_parser = ["32", "64"])]
        precision: Option<String>,
        #[arg(long)]
        verbose: bool,
    },
    /// Rank first-layer readout neurons by RMS activity along a rollout.
    Inspect {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        states: usize,
        #[arg(long, default_value_t = DEFAULT_TOP_K)]
        top_k: usize,
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
        /// Write the CSV table here instead of stdout.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Verify or record environment trajectory fixtures.
    #[command(subcommand)]
    Fixtures(FixturesCmd),
}

#[derive(Subcommand)]
enum FixturesCmd {
    /// Replay every `*.txt` fixture in a directory.
    Verify { dir: PathBuf },
    /// Record a uniformly random trajectory from this implementation.
    Record {
        #[arg(long)]
        game: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 300)]
        steps: usize,
        #[arg(long, default_value_t = 0.1)]
        sticky: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Invalid(Error),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Invalid(e)
    }
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            eprintln!("run dir {} digest {}", cfg.run_dir().display(), cfg.digest_hex());
            print_json(&arq_core::harness::train(&cfg)?);
        }
        Command::Eval {
            run,
            checkpoint,
            episodes,
            epsilon,
            max_steps,
        } => {
            let cfg = run.resolve()?;
            let report = evaluate(&cfg, &checkpoint, episodes, epsilon, run.first_seed(&cfg), max_steps)?;
            print_json(&report);
        }
        Command::Ablate { plan, sets, out, dry_run } => {
            let (plan, base_path) = AblationPlan::load(&plan)?;
            let text = std::fs::read_to_string(&base_path).map_err(|e| Error::Io {
                path: base_path.clone(),
                source: e,
            })?;
            let base: toml::Value =
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", base_path.display())))?;
            let mut sets = sets;
            if let Some(out) = out {
                sets.push(format!("out_dir={:?}", out.display().to_string()));
            }
            let runs = plan.resolve(&base, &sets)?;
            if dry_run {
                for r in &runs {
                    println!(
                        "{}\t{}\t{:?}\t{}",
                        r.variant,
                        r.param_count,
                        r.config.network.layer_hidden_dims,
                        r.config.digest_hex()
                    );
                }
                return Ok(());
            }
            let rows = run_plan(&runs)?;
            print!("{}", format_table(&rows));
        }
        Command::Gradcheck {
            configs,
            seed,
            scheme,
            precision,
            verbose,
        } => {
            if precision.as_deref() == Some("32") {
                return Err(Error::InvalidInput("gradient checks run in 64-bit only".into()).into());
            }
            let gate = if scheme == "central" {
                DiffScheme::Central
            } else {
                DiffScheme::Extrapolated
            };
            let mut gate_ok = true;
            for s in [DiffScheme::Central, DiffScheme::Extrapolated] {
                let grads = gradient_suite(configs, seed, s)?;
                let local = locality_suite(configs.div_ceil(4), seed, s)?;
                println!("== {s} differences ==");
                print!("{grads}{local}");
                for fam in grads.families.iter().chain(&local.families).filter(|_| verbose) {
                    for f in &fam.failures {
                        print!("{f}");
                    }
                }
                if s == gate {
                    gate_ok = grads.passed() && local.passed();
                }
            }
            if !gate_ok {
                return Err(Failure::Check(format!("gradient checks failed under {gate} differences")));
            }
        }
        Command::Inspect {
            run,
            checkpoint,
            states,
            top_k,
            epsilon,
            table,
        } => {
            let cfg = run.resolve()?;
            let t = inspect(&cfg, &checkpoint, states, top_k, epsilon, run.first_seed(&cfg))?;
            match table {
                Some(path) => std::fs::write(&path, t.to_csv()).map_err(|e| Error::Io { path, source: e })?,
                None => print!("{}", t.to_csv()),
            }
        }
        Command::Fixtures(FixturesCmd::Verify { dir }) => {
            let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
                .map_err(|e| Error::Io {
                    path: dir.clone(),
                    source: e,
                })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "txt"))
                .collect();
            paths.sort();
            if paths.is_empty() {
                return Err(Error::InvalidInput(format!("no fixtures in {}", dir.display())).into());
            }
            let mut bad = 0;
            for p in &paths {
                match Fixture::load(p)?.verify()? {
                    None => println!("ok       {}", p.display()),
                    Some(m) => {
                        bad += 1;
                        println!("MISMATCH {}: {m:?}", p.display());
                    }
                }
            }
            if bad > 0 {
                return Err(Failure::Check(format!("{bad} of {} fixtures diverged", paths.len())));
            }
        }
        Command::Fixtures(FixturesCmd::Record {
            game,
            seed,
            steps,
            sticky,
            out,
        }) => {
            let mut rng = SeededRng::with_stream(seed, 5);
            let actions: Vec<usize> = (0..steps).map(|_| rng.below(MINATAR_ACTIONS)).collect();
            let fixture = record(&game, seed, sticky, &actions)?;
            write_text(&out, &fixture.to_text())?;
        }
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(2)
        }
    }
}
