//! `mccm`: generate models, plan assortments, compute or simulate choice
//! tables, recover parameters, and run sample-size studies.
//!
//! Exit codes: 0 success, 1 I/O or bad input data, 2 usage, 3 numerical
//! failure.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mccm::choice::ChoiceTable;
use mccm::model::{self, ModelParams};
use mccm::plan::{self, RecoveryPlan};
use mccm::recovery::{self, RecoverOptions};
use mccm::simulate::{self, SampleConfig};
use mccm::Error;
use sha2::{Digest, Sha256};

#[derive(Debug, Parser)]
#[command(name = "mccm", version, about = "Markov chain choice model toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PlanMode {
    /// Common-intersection fans: O(n^2) assortments when 2r <= n.
    Minimal,
    /// Every assortment of size r and r+1.
    All,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a random valid model.
    Generate {
        /// Number of products (at least 3).
        #[arg(long)]
        n: usize,
        /// Probability of moving to no-purchase from every product, in [0, 1).
        #[arg(long, default_value_t = 0.0)]
        mass: f64,
        /// RNG seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output model file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the assortments a recovery needs, one per line.
    Plan {
        /// Number of products.
        #[arg(long)]
        n: usize,
        /// Assortment size, in 2..=n-1.
        #[arg(long)]
        r: usize,
        /// Which assortments to list.
        #[arg(long, value_enum, default_value_t = PlanMode::Minimal)]
        plan: PlanMode,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute exact choice tables for a model.
    Tables {
        /// Model file.
        #[arg(long)]
        model: PathBuf,
        /// Assortment size, in 2..=n-1.
        #[arg(long)]
        r: usize,
        /// Which assortments to include.
        #[arg(long, value_enum, default_value_t = PlanMode::Minimal)]
        plan: PlanMode,
        /// Rescale model rows to sum to one before validating.
        #[arg(long)]
        renormalize: bool,
        /// Output table file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate choice tables by simulating customers.
    Simulate {
        /// Model file.
        #[arg(long)]
        model: PathBuf,
        /// Assortment size, in 2..=n-1.
        #[arg(long)]
        r: usize,
        /// Customers simulated per assortment.
        #[arg(long)]
        m: usize,
        /// RNG seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Which assortments to include.
        #[arg(long, value_enum, default_value_t = PlanMode::Minimal)]
        plan: PlanMode,
        /// Pseudo-count added to every outcome.
        #[arg(long, default_value_t = 0.0)]
        laplace: f64,
        /// Abort a walk after this many states.
        #[arg(long, default_value_t = simulate::DEFAULT_MAX_STEPS)]
        max_steps: usize,
        /// Rescale model rows to sum to one before validating.
        #[arg(long)]
        renormalize: bool,
        /// Output table file; metadata goes to `<out>.meta.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover model parameters from a choice table.
    Recover {
        /// Choice table file.
        #[arg(long)]
        tables: PathBuf,
        /// Number of products.
        #[arg(long)]
        n: usize,
        /// Assortment size, in 2..=n-1.
        #[arg(long)]
        r: usize,
        /// Which assortments the systems use.
        #[arg(long, value_enum, default_value_t = PlanMode::Minimal)]
        plan: PlanMode,
        /// Ground-truth model; reports the max entrywise error.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Relative singular-value cutoff for numerical rank.
        #[arg(long, default_value_t = recovery::DEFAULT_RANK_TOLERANCE)]
        rank_tol: f64,
        /// Smallest accepted denominator when deriving conditional probabilities
        /// (use about 1e-6 for simulated tables).
        #[arg(long, default_value_t = mccm::choice::DEFAULT_DENOM_TOLERANCE)]
        denom_tol: f64,
        /// Output report file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Recovery error against simulated sample size, as CSV.
    Study {
        /// Model file (the ground truth).
        #[arg(long)]
        model: PathBuf,
        /// Assortment size, in 2..=n-1.
        #[arg(long)]
        r: usize,
        /// Comma-separated sample sizes per assortment.
        #[arg(long, value_delimiter = ',', required = true)]
        m_list: Vec<usize>,
        /// Comma-separated seeds; one row per (seed, m).
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        /// Which assortments to simulate and use.
        #[arg(long, value_enum, default_value_t = PlanMode::Minimal)]
        plan: PlanMode,
        /// Rescale model rows to sum to one before validating.
        #[arg(long)]
        renormalize: bool,
        /// Output CSV with columns m,max_param_error.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
enum CliError {
    Io(String),
    Usage(String),
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Io(m) | CliError::Usage(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e.root() {
            Error::Domain(_) => CliError::Usage(msg),
            Error::Parse(_) | Error::InvalidModel(_) | Error::MissingAssortment { .. } => CliError::Io(msg),
            Error::ConditionalFailures(f)
                if f.iter().any(|x| matches!(x.error, Error::MissingAssortment { .. })) =>
            {
                CliError::Io(msg)
            }
            _ => CliError::Numerical(msg),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| io_err(path, e))
}

fn load_model(path: &Path, renormalize: bool) -> CliResult<ModelParams> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut m = ModelParams::from_json(&text).map_err(|e| io_err(path, e))?;
    if renormalize {
        m = m.renormalized();
    }
    let violations = model::validate(&m);
    if !violations.is_empty() {
        let codes: Vec<&str> = violations.iter().map(|v| v.code()).collect();
        return Err(io_err(path, format!("invalid model: {}", codes.join(", "))));
    }
    Ok(m)
}

fn load_tables(path: &Path) -> CliResult<ChoiceTable> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    ChoiceTable::read_ndjson(BufReader::new(file)).map_err(|e| io_err(path, e))
}

fn make_plan(n: usize, r: usize, mode: PlanMode) -> CliResult<RecoveryPlan> {
    let plan = match mode {
        PlanMode::Minimal => plan::build_plan(n, r),
        PlanMode::All => plan::build_full_plan(n, r),
    };
    plan.map_err(|e| CliError::Usage(e.to_string()))
}

fn write_table(path: &Path, table: &ChoiceTable) -> CliResult {
    let mut w = create(path)?;
    table.write_ndjson(&mut w).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

fn model_hash(m: &ModelParams) -> String {
    hex::encode(Sha256::digest(m.to_json().as_bytes()))
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Generate { n, mass, seed, out } => {
            let m = model::generate_random(n, mass, seed).map_err(|e| CliError::Usage(e.to_string()))?;
            write_text(&out, &m.to_json())?;
            let violations = model::validate(&m);
            if violations.is_empty() {
                println!("wrote {} (n={n}): valid", out.display());
            } else {
                println!("wrote {} (n={n}): violations {violations:?}", out.display());
            }
        }
        Command::Plan { n, r, plan, out } => {
            let p = make_plan(n, r, plan)?;
            let (cr, cr1) = plan::count_required(&p);
            let mut text = format!("# n={n} r={r} count_r={cr} count_r_plus_1={cr1}\n");
            for s in p.required_assortments() {
                text.push_str(&serde_json::to_string(s).expect("plain integers"));
                text.push('\n');
            }
            match out {
                Some(path) => write_text(&path, &text)?,
                None => print!("{text}"),
            }
        }
        Command::Tables {
            model,
            r,
            plan,
            renormalize,
            out,
        } => {
            let m = load_model(&model, renormalize)?;
            let p = make_plan(m.n(), r, plan)?;
            let table = ChoiceTable::exact(&m, p.required_assortments())?;
            write_table(&out, &table)?;
            println!("wrote {} records to {}", table.len(), out.display());
        }
        Command::Simulate {
            model,
            r,
            m,
            seed,
            plan,
            laplace,
            max_steps,
            renormalize,
            out,
        } => {
            if m == 0 {
                return Err(CliError::Usage("--m must be positive".into()));
            }
            let mp = load_model(&model, renormalize)?;
            let p = make_plan(mp.n(), r, plan)?;
            let cfg = SampleConfig {
                samples_per_assortment: m,
                seed,
                max_steps,
                laplace,
            };
            let table = simulate::estimate_table(&mp, p.required_assortments(), &cfg)?;
            write_table(&out, &table)?;
            let meta = serde_json::json!({
                "seed": seed,
                "m": m,
                "r": r,
                "laplace": laplace,
                "max_steps": max_steps,
                "plan": format!("{plan:?}").to_lowercase(),
                "model_sha256": model_hash(&mp),
            });
            let mut meta_path = out.clone().into_os_string();
            meta_path.push(".meta.json");
            write_text(Path::new(&meta_path), &meta.to_string())?;
            println!("wrote {} records to {}", table.len(), out.display());
        }
        Command::Recover {
            tables,
            n,
            r,
            plan,
            truth,
            rank_tol,
            denom_tol,
            out,
        } => {
            let p = make_plan(n, r, plan)?;
            let truth = truth.map(|t| load_model(&t, false)).transpose()?;
            let table = load_tables(&tables)?;
            let options = RecoverOptions {
                rank_tolerance: rank_tol,
                denom_tolerance: denom_tol,
            };
            let partial = recovery::recover_partial(&table, &p, &options)?;
            if partial.failures().next().is_some() {
                write_text(&out, &partial.to_json())?;
                let msgs: Vec<String> = partial
                    .failures()
                    .map(|(id, e)| format!("system {id}: {e}"))
                    .collect();
                return Err(CliError::Numerical(msgs.join("; ")));
            }
            let mut report = partial.into_report()?;
            if let Some(t) = &truth {
                let err = report.attach_truth(t)?;
                println!("max_param_error: {err:.16e}");
            }
            write_text(&out, &report.to_json())?;
            if !report.projected.is_empty() {
                let ids: Vec<String> = report.projected.iter().map(ToString::to_string).collect();
                println!("projected systems: {}", ids.join(", "));
            }
            println!("wrote report to {}", out.display());
        }
        Command::Study {
            model,
            r,
            m_list,
            seeds,
            plan,
            renormalize,
            out,
        } => {
            if m_list.is_empty() || m_list.contains(&0) {
                return Err(CliError::Usage("--m-list needs positive sample sizes".into()));
            }
            if seeds.is_empty() {
                return Err(CliError::Usage("--seeds must not be empty".into()));
            }
            let mp = load_model(&model, renormalize)?;
            let p = make_plan(mp.n(), r, plan)?;
            let mut csv = String::from("m,max_param_error\n");
            for &seed in &seeds {
                for point in simulate::error_vs_samples(&mp, &p, &m_list, seed)? {
                    match point.outcome {
                        Ok(err) => csv.push_str(&format!("{},{err:.16e}\n", point.samples)),
                        Err(reason) => {
                            eprintln!("seed {seed}, m {}: recovery failed: {reason}", point.samples);
                            csv.push_str(&format!("{},NaN\n", point.samples));
                        }
                    }
                }
            }
            write_text(&out, &csv)?;
            println!("wrote {} rows to {}", m_list.len() * seeds.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(io::stderr(), "error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
