//! Command-line interface.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::harness::output::TUNING_FILE;
use crate::harness::{
    build_grid, draw_replicate, prepare, run_grid, tune_pairs, Census, ReplicateContext, RunConfig,
    ScenarioFilter, TuningTable,
};
use crate::report::write_report;
use crate::validate::{run_validation, DataSet, ValidateOptions};

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "anchorsim",
    version,
    about = "Census-anchored convenience-survey simulation"
)]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug, -vvv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct RunArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Output directory; overrides the configuration.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,

    /// Restrict to matching grid cells, e.g. "fraction=0.25,rate=0.5,xi=1.5".
    #[arg(long)]
    pub scenario: Option<ScenarioFilter>,

    /// Master seed; overrides the configuration.
    #[arg(long, env = "ANCHORSIM_SEED")]
    pub seed: Option<u64>,

    /// Replicates per scenario; overrides the configuration.
    #[arg(long)]
    pub nrep: Option<u32>,

    /// Worker threads (0 = all cores); overrides the configuration.
    #[arg(long, env = "ANCHORSIM_WORKERS")]
    pub workers: Option<usize>,

    /// Replace the sandwich small-sample factor.
    #[arg(long, hide = true)]
    pub sandwich_factor: Option<f64>,
}

impl RunArgs {
    pub fn load_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = dir.clone();
        }
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        if let Some(n) = self.nrep {
            cfg.n_rep = n;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if self.sandwich_factor.is_some() {
            cfg.estimation.sandwich_factor_override = self.sandwich_factor;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn filter(&self) -> ScenarioFilter {
        self.scenario.unwrap_or_default()
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tune the selection intercept for every (response rate, ξ) pair.
    Tune(RunArgs),
    /// Run the simulation grid.
    Run(RunArgs),
    /// Render tables and plot-ready CSVs from a finished run.
    Report {
        /// Directory holding summary.csv and replicates.csv.
        #[arg(long, default_value = "results")]
        results_dir: PathBuf,
        /// Where to write the report; defaults to the results directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the estimators against independent reference computations.
    Validate {
        #[command(flatten)]
        run: RunArgs,
        /// Estimate from a single-replicate data file instead.
        #[arg(long, conflicts_with = "dump")]
        data: Option<PathBuf>,
        /// Write replicate `--rep` of the first selected scenario as a data file.
        #[arg(long)]
        dump: Option<PathBuf>,
        #[arg(long, default_value_t = 0, requires = "dump")]
        rep: u32,
    },
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() {
                EXIT_CONFIG
            } else {
                EXIT_RUNTIME
            })
        }
    }
}

pub fn execute(command: Command) -> Result<ExitCode> {
    match command {
        Command::Tune(args) => tune(&args),
        Command::Run(args) => run(&args),
        Command::Report { results_dir, out } => {
            let out = out.unwrap_or_else(|| results_dir.clone());
            let files = write_report(&results_dir, &out)?;
            println!(
                "wrote {}, {}, {}, {} zipper and {} equivalence files",
                files.tables.display(),
                files.bias.display(),
                files.coverage.display(),
                files.zipper.len(),
                files.tost.len()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate {
            run,
            data,
            dump,
            rep,
        } => match (data, dump) {
            (Some(path), _) => estimate_data(&run, &path),
            (None, Some(path)) => dump_data(&run, &path, rep),
            (None, None) => validate(&run),
        },
    }
}

fn tune(args: &RunArgs) -> Result<ExitCode> {
    let cfg = args.load_config()?;
    let filter = args.filter();
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for s in build_grid(&cfg.grid).iter().filter(|s| filter.matches(s)) {
        if !pairs.contains(&(s.response_rate_target, s.xi)) {
            pairs.push((s.response_rate_target, s.xi));
        }
    }
    if pairs.is_empty() {
        return Err(Error::Config("scenario filter matches no grid cell".into()));
    }
    let census = Census::build(&cfg)?;
    let path = cfg.output_dir.join(TUNING_FILE);
    let cached = path
        .exists()
        .then(|| TuningTable::read(&path))
        .transpose()?;
    let outcome = tune_pairs(&cfg, &census, &pairs, cached)?;
    if outcome.tuned > 0 {
        outcome.table.write(&path)?;
    } else {
        println!(
            "cache hit: {} pairs already tuned in {}",
            pairs.len(),
            path.display()
        );
    }
    println!(
        "{:<14} {:>10} {:>10} {:>6}",
        "pair", "gamma0", "rate", "iter"
    );
    for &(r, x) in &pairs {
        if let Some(e) = outcome.table.get(r, x) {
            println!(
                "{:<14} {:>10.4} {:>10.4} {:>6}",
                e.key, e.gamma0, e.achieved_rate, e.iterations
            );
        }
    }
    for (key, e) in &outcome.failures {
        eprintln!("{key}: {e}");
    }
    Ok(if outcome.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_RUNTIME)
    })
}

fn run(args: &RunArgs) -> Result<ExitCode> {
    let cfg = args.load_config()?;
    let outcome = run_grid(&cfg, &args.filter(), &cfg.output_dir)?;
    let n = outcome.manifest.scenarios.len();
    println!(
        "{} scenarios: {} run, {} reused, {} aborted; results in {}",
        outcome.summaries.len() / 2 + outcome.aborted,
        outcome.summaries.len() / 2 - outcome.resumed,
        outcome.resumed,
        outcome.aborted,
        cfg.output_dir.display()
    );
    log::debug!("manifest lists {n} scenarios");
    Ok(if outcome.aborted == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_RUNTIME)
    })
}

fn validate(args: &RunArgs) -> Result<ExitCode> {
    let mut opts = ValidateOptions {
        sandwich_factor: args.sandwich_factor,
        ..ValidateOptions::default()
    };
    if let Some(seed) = args.seed {
        opts.seed = seed;
    }
    let report = run_validation(&opts)?;
    print!("{report}");
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_RUNTIME)
    })
}

fn dump_data(args: &RunArgs, path: &Path, rep: u32) -> Result<ExitCode> {
    let cfg = args.load_config()?;
    let (census, _, scenarios) = prepare(&cfg, &args.filter(), &cfg.output_dir)?;
    let (scenario, err) = &scenarios[0];
    if let Some(e) = err {
        return Err(Error::Config(format!("{}: {e}", scenario.scenario_id)));
    }
    let ctx = ReplicateContext::new(&cfg, &census, scenario);
    let draw = draw_replicate(&ctx, rep)?;
    let (pop, _) = draw.population(&ctx);
    let data = DataSet {
        population: pop.clone(),
        y1: draw.followup.y1,
        attended: draw.attended,
        sample: draw.sample,
    };
    data.write(path)?;
    println!(
        "wrote {} ({} replicate {rep}, {} respondents in {} villages, p_true {:.6})",
        path.display(),
        scenario.scenario_id,
        data.sample.n_respondents(),
        data.sample.m(),
        data.p_true()
    );
    Ok(ExitCode::SUCCESS)
}

fn estimate_data(args: &RunArgs, path: &Path) -> Result<ExitCode> {
    let cfg = args.load_config()?;
    let data = DataSet::read(path)?;
    println!(
        "{} children in {} villages; {} respondents in {} sampled villages; p_true {:.6}",
        data.population.total_children(),
        data.population.n_villages(),
        data.sample.n_respondents(),
        data.sample.m(),
        data.p_true()
    );
    let mut failed = false;
    for (method, result) in data.estimate(&cfg.estimation) {
        match result {
            Ok(r) => println!(
                "{:<20} p_hat {:.6}  se {:.6}  95% [{:.6}, {:.6}]  90% [{:.6}, {:.6}]",
                method.as_str(),
                r.p_hat,
                r.se,
                r.ci95.0,
                r.ci95.1,
                r.ci90.0,
                r.ci90.1
            ),
            Err(e) => {
                failed = true;
                println!("{:<20} failed: {e}", method.as_str());
            }
        }
    }
    Ok(if failed {
        ExitCode::from(EXIT_RUNTIME)
    } else {
        ExitCode::SUCCESS
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_config() {
        let cli = Cli::try_parse_from([
            "anchorsim",
            "run",
            "--seed",
            "5",
            "--nrep",
            "3",
            "--scenario",
            "xi=1.5",
        ])
        .unwrap();
        let Command::Run(args) = cli.command else {
            panic!("expected run")
        };
        let cfg = args.load_config().unwrap();
        assert_eq!((cfg.master_seed, cfg.n_rep), (5, 3));
        assert_eq!(args.filter().xi, Some(1.5));
    }
}
