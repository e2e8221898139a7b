//! Batch experiment runner for biased random walks on Galton-Watson trees.
//!
//! Every experiment is a subcommand. Results go to stdout as an aligned
//! table, or to `--out` as CSV (default) or JSON. Exit codes: 0 success,
//! 1 usage error, 2 failed check, 3 size cap or iteration budget exhausted.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::config::{Format, RawConfig, RunConfig};
use crate::error::{CliError, EXIT_CHECK, EXIT_OK, EXIT_USAGE};
use crate::output::read_verdicts;

#[derive(Parser, Debug)]
#[command(name = "gwer", version, about = "Biased random walks on Galton-Watson trees")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit the slope of the velocity at zero bias against D0/2.
    ///
    /// CSV columns: alpha,v,stderr,v_closed,z_closed. The closed form is
    /// filled for negative alpha only.
    Einstein(Flags),
    /// Simulated velocity per alpha.
    ///
    /// CSV columns: alpha,v,stderr,v_closed,z_closed.
    Velocity(Flags),
    /// Diffusivity of the unbiased walk, estimated directly and from W moments.
    ///
    /// CSV columns: estimator,value,stderr,target,z.
    Diffusivity(Flags),
    /// Escape-probability recursions
    ///
    /// --check escape: alpha,e_beta_over_alpha,stderr,target,e_big_b,big_b_stderr,b_lower,b_upper.
    /// --check hitting: quantity,value,stderr.
    /// --check phi: alpha,n,r,phi,stderr,e_big_b,bound.
    #[command(verbatim_doc_comment)]
    Recursion(Flags),
    /// Environment seen from the walker
    ///
    /// --check velocity: alpha,c_alpha,v_closed,v_sim,stderr,z.
    /// --check moments: quantity,value,stderr,target,z.
    /// --check stationarity: test_fn,residual,stderr,z.
    /// --check singular: alpha,j_max,psi_mean,stderr,truncation_bound.
    /// --check mu-infinity: alpha,v_sim,stderr,c_harmonic,inv_c,matches.
    #[command(verbatim_doc_comment)]
    Env(Flags),
    /// Spine random walk and the renewal representation
    ///
    /// --check zeta2: alpha,E_zeta2,stderr.
    /// --check renewal: alpha,denominator,stderr,displacement,E_zeta2,exp_moment_r1,lag1_corr.
    /// --check h: y,h,stderr,bound (y up to --n).
    /// --check phi: alpha,n,r,phi,stderr,phi_exact,stderr_exact.
    /// --check sandwich: alpha,lower,lower_stderr,e_big_b,stderr,upper,upper_stderr.
    /// --check vrep: alpha,v_rep,v_sim,stderr,v_sim_stderr,z.
    /// --check rep1: side,value,stderr.
    /// --check decay: cut,share.
    #[command(verbatim_doc_comment)]
    Spine(Flags),
    /// Weighted birth-death identity on random instances.
    ///
    /// CSV columns: trials,n_max,max_abs_diff.
    Zjbis(Flags),
    /// Summarize the checks recorded in output files.
    Report(ReportArgs),
}

/// Options shared by all experiments. Each can also be set in the config
/// file as `key=value` (dashes or underscores).
#[derive(Args, Debug, Default)]
pub struct Flags {
    /// Flat key=value config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Offspring law as k:p pairs, e.g. 2:0.5,3:0.5.
    #[arg(long)]
    pub dist: Option<String>,
    /// Comma-separated bias values.
    #[arg(long, allow_hyphen_values = true)]
    pub alphas: Option<String>,
    /// Single bias value (same as --alphas with one entry).
    #[arg(long, allow_hyphen_values = true, conflicts_with = "alphas")]
    pub alpha: Option<String>,
    /// Independent walk or sample replicas.
    #[arg(long)]
    pub replicas: Option<String>,
    /// Time horizon of each walk.
    #[arg(long)]
    pub horizon: Option<String>,
    /// Generations used for martingale limits.
    #[arg(long)]
    pub depth: Option<String>,
    /// Samples per pool replica.
    #[arg(long)]
    pub samples: Option<String>,
    /// Master seed; also read from GWER_SEED.
    #[arg(long)]
    pub seed: Option<String>,
    /// Worker threads (0 = all cores). Never changes the numbers.
    #[arg(long)]
    pub parallelism: Option<String>,
    /// Output file; stdout table when absent.
    #[arg(long)]
    pub out: Option<String>,
    /// Output file format: csv or json.
    #[arg(long)]
    pub format: Option<String>,
    /// Population pool size for escape probabilities.
    #[arg(long)]
    pub pool_size: Option<String>,
    /// Independent pool replicas.
    #[arg(long)]
    pub pools: Option<String>,
    /// Inner walks per spine environment.
    #[arg(long)]
    pub inner: Option<String>,
    /// Level n (depth of the cut, or instance size).
    #[arg(long)]
    pub n: Option<String>,
    /// Distance r from the root.
    #[arg(long)]
    pub r: Option<String>,
    /// Random instances to test.
    #[arg(long)]
    pub trials: Option<String>,
    /// Tolerance of the pass/fail check.
    #[arg(long)]
    pub tol: Option<String>,
    /// Which experiment of the subcommand to run.
    #[arg(long)]
    pub check: Option<String>,
    /// Allow one-sided alphas in the slope fit.
    #[arg(long)]
    pub one_sided: bool,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// CSV or JSON files written by other subcommands.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
}

impl Flags {
    fn raw(&self) -> RawConfig {
        let mut raw = RawConfig::default();
        let pairs: [(&str, &Option<String>); 19] = [
            ("dist", &self.dist),
            ("alphas", &self.alphas),
            ("alphas", &self.alpha),
            ("replicas", &self.replicas),
            ("horizon", &self.horizon),
            ("depth", &self.depth),
            ("samples", &self.samples),
            ("seed", &self.seed),
            ("parallelism", &self.parallelism),
            ("out", &self.out),
            ("format", &self.format),
            ("pool_size", &self.pool_size),
            ("pools", &self.pools),
            ("inner", &self.inner),
            ("n", &self.n),
            ("r", &self.r),
            ("trials", &self.trials),
            ("tol", &self.tol),
            ("check", &self.check),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                raw.set(k, v.clone());
            }
        }
        if self.one_sided {
            raw.set("one_sided", "true");
        }
        raw
    }
}

/// Merge defaults, config file, `GWER_SEED` and flags.
pub fn resolve(command: &str, flags: &Flags, env_seed: Option<String>) -> Result<RunConfig, CliError> {
    let mut raw = match &flags.config {
        Some(p) => RawConfig::load(p)?,
        None => RawConfig::default(),
    };
    if let Some(s) = env_seed {
        raw.set("seed", s);
    }
    raw.overlay(&flags.raw());
    RunConfig::resolve(&raw, &commands::defaults(command))
}

fn usage(command: &str) -> String {
    let mut cmd = Cli::command();
    cmd.build();
    match cmd.find_subcommand_mut(command) {
        Some(sub) => sub.render_usage().to_string(),
        None => cmd.render_usage().to_string(),
    }
}

fn emit(report: &output::Report, cfg: &RunConfig) -> Result<(), CliError> {
    match &cfg.out {
        Some(path) => {
            let mut buf = Vec::new();
            match cfg.format {
                Format::Csv => report.write_csv(cfg, &mut buf)?,
                Format::Json => report.write_json(cfg, &mut buf)?,
            }
            std::fs::write(path, buf)?;
            let mut out = std::io::stdout().lock();
            for c in &report.checks {
                let verdict = if c.pass { "PASS" } else { "FAIL" };
                writeln!(out, "[{verdict}] {}: {}", c.name, c.detail)?;
            }
            Ok(())
        }
        None => {
            let text = match cfg.format {
                Format::Csv => report.render_text(),
                Format::Json => serde_json::to_string_pretty(&report.to_json(cfg))? + "\n",
            };
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn run_report(args: &ReportArgs) -> Result<i32, CliError> {
    let mut any_failed = false;
    let mut out = std::io::stdout().lock();
    writeln!(out, "file,command,passed,total,status")?;
    for f in &args.files {
        let text = std::fs::read_to_string(f)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", f.display())))?;
        let v = read_verdicts(&text)?;
        let passed = v.checks.iter().filter(|c| c.1).count();
        let ok = passed == v.checks.len();
        any_failed |= !ok;
        writeln!(
            out,
            "{},{},{passed},{},{}",
            f.display(),
            v.command,
            v.checks.len(),
            if ok { "PASS" } else { "FAIL" }
        )?;
    }
    Ok(if any_failed { EXIT_CHECK } else { EXIT_OK })
}

fn name_of(command: &Command) -> &'static str {
    match command {
        Command::Einstein(_) => "einstein",
        Command::Velocity(_) => "velocity",
        Command::Diffusivity(_) => "diffusivity",
        Command::Recursion(_) => "recursion",
        Command::Env(_) => "env",
        Command::Spine(_) => "spine",
        Command::Zjbis(_) => "zjbis",
        Command::Report(_) => "report",
    }
}

/// Parse arguments, run, and return the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let name = name_of(&cli.command);
    let flags = match &cli.command {
        Command::Report(args) => {
            return run_report(args).unwrap_or_else(|e| {
                eprintln!("error: {e}");
                e.exit_code()
            })
        }
        Command::Einstein(f)
        | Command::Velocity(f)
        | Command::Diffusivity(f)
        | Command::Recursion(f)
        | Command::Env(f)
        | Command::Spine(f)
        | Command::Zjbis(f) => f,
    };
    let cfg = match resolve(name, flags, std::env::var("GWER_SEED").ok()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}\n\n{}", usage(name));
            return e.exit_code();
        }
    };
    let start = Instant::now();
    let result = commands::run(name, &cfg).and_then(|r| emit(&r, &cfg).map(|_| r));
    eprintln!("wall time: {:.3} s", start.elapsed().as_secs_f64());
    match result {
        Ok(r) if r.passed() => EXIT_OK,
        Ok(_) => EXIT_CHECK,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, CliError::Usage(_)) {
                eprintln!("\n{}", usage(name));
            }
            e.exit_code()
        }
    }
}
