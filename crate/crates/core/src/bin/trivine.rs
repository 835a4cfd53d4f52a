use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trivine::io::{format_sim_report, simulate, Baseline, RunConfig};
use trivine::{FamilyChoice, MarginKind, Permutation, SimScenario};

#[derive(Parser)]
#[command(name = "trivine", version, about = "Trivariate vine copula mixed models for diagnostic test accuracy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "bvn")]
        family: FamilyChoice,
        #[arg(long, default_value = "normal")]
        margin: MarginKind,
        /// Root variable of the vine (1, 2 or 3).
        #[arg(long, default_value = "1")]
        perm: Permutation,
    },
    /// Fit every combination of families, margins and permutations and rank them.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "bvn,frank")]
        families: Vec<FamilyChoice>,
        #[arg(long, value_delimiter = ',', default_value = "normal,beta")]
        margins: Vec<MarginKind>,
        /// `all` or a comma-separated list of roots.
        #[arg(long, default_value = "all")]
        perms: String,
        /// Rank the report by log-likelihood instead of AIC.
        #[arg(long)]
        by_loglik: bool,
    },
    /// Run a simulation scenario.
    Simulate {
        /// Scenario file (TOML).
        scenario: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long)]
        nq: Option<usize>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// CSV with columns study_id,tp,fp,fn,tn.
    data: PathBuf,
    #[arg(long)]
    truncate: bool,
    #[arg(long, default_value_t = 15)]
    nq: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// `glmm`, `none` or `family:margin`.
    #[arg(long, default_value = "glmm")]
    baseline: Baseline,
    /// Result document (JSON); the text report is written alongside as .txt.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn config(c: Common) -> RunConfig {
    let mut cfg = RunConfig::new(c.data);
    cfg.truncate = c.truncate;
    cfg.nq = c.nq;
    cfg.seed = c.seed;
    cfg.baseline = c.baseline;
    cfg.output = c.output;
    cfg
}

fn parse_perms(s: &str) -> trivine::Result<Vec<Permutation>> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(trivine::enumerate_permutations());
    }
    s.split(',').map(str::parse).collect()
}

fn execute(cli: Cli) -> trivine::Result<String> {
    match cli.command {
        Command::Fit { common, family, margin, perm } => {
            let mut cfg = config(common);
            cfg.families = vec![family];
            cfg.margins = vec![margin];
            cfg.permutations = vec![perm];
            Ok(trivine::run(&cfg)?.1)
        }
        Command::Sweep { common, families, margins, perms, by_loglik } => {
            let mut cfg = config(common);
            cfg.families = families;
            cfg.margins = margins;
            cfg.permutations = parse_perms(&perms)?;
            cfg.rank_by_loglik = by_loglik;
            Ok(trivine::run(&cfg)?.1)
        }
        Command::Simulate { scenario, seed, replications, nq, output } => {
            let text = std::fs::read_to_string(&scenario)?;
            let mut sc = SimScenario::from_toml_str(&text)?;
            sc.seed = seed;
            if let Some(b) = replications {
                sc.replications = b;
            }
            if let Some(nq) = nq {
                sc.fit_options.nq = nq;
            }
            let doc = simulate(&sc)?;
            let report = format_sim_report(&doc);
            if let Some(path) = output {
                std::fs::write(&path, doc.to_json()?)?;
                std::fs::write(path.with_extension("txt"), &report)?;
            }
            Ok(report)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
