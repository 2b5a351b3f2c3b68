//! `nearby`: drives the constructions and writes reports.

mod input;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use nearby::berg::{as_bilateral, level_set_normalize, nearest_normal, NearestMode};
use nearby::gep::exchange_process;
use nearby::linalg::C64;
use nearby::observables::{fixture, FixtureKind};
use nearby::ogata::{construct, irrep_family};
use nearby::su2::{turning_point, MultiplicityTable, Spin};
use nearby::suite::{run, run_all, Scale, DEFAULT_SEED};
use nearby::NearbyError;

#[derive(Parser)]
#[command(name = "nearby", version, about = "Nearby commuting matrices with certified bounds")]
struct Cli {
    /// Largest dimension that is materialized or measured.
    #[arg(long, env = "NEARBY_CAP", default_value_t = nearby::ogata::DEFAULT_CAP, global = true)]
    cap: usize,
    #[arg(long, default_value_t = DEFAULT_SEED, global = true)]
    seed: u64,
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file (default: stdout).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Output format (default: csv for `irrep`, json otherwise).
    #[arg(long, value_enum, global = true)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Cubic,
    Sigma,
    /// Fixed grid spacing 1/M (needs --grid).
    Grid,
}

#[derive(Subcommand)]
enum Command {
    /// Multiplicities of each spin in the N-fold tensor power of spin 1/2.
    Mult { n: u32 },
    /// Weight diagram of one spin representation (diagonal m, weight d).
    Irrep { lambda: Spin },
    /// Nearest normal to a weighted shift.
    Berg {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Cubic)]
        mode: Mode,
        /// Lower bound on the weight magnitudes (default: their minimum).
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        grid: Option<u64>,
    },
    /// Commuting pair for a nested block family.
    Gep {
        #[arg(long)]
        family: PathBuf,
        #[arg(long)]
        windows: PathBuf,
        /// Stop after S′ (skip the normal replacement S″).
        #[arg(long)]
        no_normal: bool,
    },
    /// Commuting triple near the spin images for N sites.
    Ogata {
        n: u64,
        #[arg(long)]
        plan_only: bool,
        /// Build the blocks without measuring them.
        #[arg(long)]
        no_measure: bool,
    },
    /// Run the verification suite.
    Verify {
        /// `all` or a criterion number 1–9.
        #[arg(long, default_value = "all")]
        suite: String,
        /// Acceptance-size grids instead of the quick ones.
        #[arg(long)]
        full: bool,
    },
    /// Reference examples.
    Fixtures {
        #[command(subcommand)]
        kind: FixtureCommand,
    },
}

#[derive(Subcommand)]
enum FixtureCommand {
    Choi {
        #[arg(long, default_value_t = 10)]
        n: usize,
    },
    Voiculescu {
        #[arg(long, default_value_t = 10)]
        n: usize,
    },
    /// S = [[a, b], [0, c]]; complex entries as `re,im`.
    Phillips {
        #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
        a: C64,
        #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
        b: C64,
        #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
        c: C64,
    },
}

fn parse_complex(s: &str) -> std::result::Result<C64, String> {
    let parse = |x: &str| x.trim().parse::<f64>().map_err(|_| format!("'{}' is not a number", x));
    match s.split_once(',') {
        Some((re, im)) => Ok(C64::new(parse(re)?, parse(im)?)),
        None => Ok(C64::new(parse(s)?, 0.0)),
    }
}

enum Output {
    Json(Value),
    Csv(Vec<u8>),
}

/// A run that produced its report but did not pass.
struct Failed(Output);

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<FailedRun>() => ExitCode::from(1),
        Err(e) => {
            let kind = match e.downcast_ref::<NearbyError>() {
                Some(NearbyError::Domain(_)) => "domain",
                Some(NearbyError::Precondition(_)) => "precondition",
                Some(NearbyError::Internal(_)) => "internal",
                None => "input",
            };
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            let err = json!({ "error": { "kind": kind, "message": chain.join(": ") } });
            eprintln!("{}", err);
            ExitCode::from(2)
        }
    }
}

#[derive(Debug)]
struct FailedRun;

impl std::fmt::Display for FailedRun {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "verification failed")
    }
}

impl std::error::Error for FailedRun {}

fn execute(cli: &Cli) -> Result<()> {
    if cli.cap < 2 {
        bail!("--cap must be at least 2");
    }
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().context("setting up the thread pool")?;
    }
    let (out, failed) = match dispatch(cli)? {
        Ok(o) => (o, false),
        Err(Failed(o)) => (o, true),
    };
    let bytes = match out {
        Output::Json(v) => {
            let mut s = serde_json::to_string_pretty(&v)?;
            s.push('\n');
            s.into_bytes()
        }
        Output::Csv(b) => b,
    };
    match &cli.out {
        Some(path) => std::fs::write(path, &bytes).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().write_all(&bytes)?,
    }
    if failed {
        return Err(FailedRun.into());
    }
    Ok(())
}

impl Cli {
    fn csv(&self) -> bool {
        let default = if matches!(self.command, Command::Irrep { .. }) { Format::Csv } else { Format::Json };
        self.format.unwrap_or(default) == Format::Csv
    }
}

fn no_csv(cli: &Cli, what: &str) -> Result<()> {
    if cli.csv() {
        bail!("csv output is not available for {}", what);
    }
    Ok(())
}

fn csv_of(sys: &nearby::shifts::ShiftSystem) -> Result<Output> {
    let mut buf = Vec::new();
    sys.write_csv(&mut buf)?;
    Ok(Output::Csv(buf))
}

fn dispatch(cli: &Cli) -> Result<std::result::Result<Output, Failed>> {
    let out = match &cli.command {
        Command::Mult { n } => mult(cli, *n)?,
        Command::Irrep { lambda } => {
            let sys = irrep_family(&[*lambda], 1).to_system()?;
            if cli.csv() {
                csv_of(&sys)?
            } else {
                let ch = &sys.chains[0];
                Output::Json(json!({
                    "schema": "nearby.irrep/1",
                    "spin": lambda.to_string(),
                    "diagonal": ch.diagonal,
                    "weights": ch.weights,
                }))
            }
        }
        Command::Berg { weights, mode, sigma, grid } => {
            let ws = input::weights(weights)?;
            let lower = || as_bilateral(&ws).arrows().iter().fold(f64::INFINITY, |m, c| m.min(c.norm()));
            let (normal, cert) = match mode {
                Mode::Cubic => nearest_normal(&ws, NearestMode::Cubic)?,
                Mode::Sigma => nearest_normal(&ws, NearestMode::Sigma(sigma.unwrap_or_else(lower)))?,
                Mode::Grid => {
                    let m = grid.ok_or_else(|| anyhow!("--mode grid needs --grid M"))?;
                    level_set_normalize(&ws, m, *sigma)?
                }
            };
            if cli.csv() {
                csv_of(&normal.system)?
            } else {
                let mut v = serde_json::to_value(&cert)?;
                v["schema"] = json!("nearby.berg/1");
                v["holds"] = json!(cert.holds());
                v["orbits"] = json!(normal.orbit_count());
                Output::Json(v)
            }
        }
        Command::Gep { family, windows, no_normal } => {
            let fam = input::family(family)?;
            let plan = input::windows(windows)?;
            let pair = exchange_process(&fam, &plan, !no_normal)?;
            if cli.csv() {
                csv_of(pair.s_double.as_ref().unwrap_or(&pair.s_prime))?
            } else {
                let mut v = pair.breakdown_json();
                v["schema"] = json!("nearby.gep/1");
                v["dim"] = json!(fam.dim());
                if fam.dim() <= cli.cap {
                    let m = pair.measure()?;
                    let b = pair.bounds;
                    let holds = m.a_distance <= b.a_distance * (1.0 + 1e-12) + 1e-12
                        && m.s_distance <= b.s_distance * (1.0 + 1e-12) + 1e-10
                        && m.s_prime_defect <= b.s_prime_defect * (1.0 + 1e-12) + 1e-10
                        && m.s_double_distance.is_none_or(|d| d <= b.s_double_distance * (1.0 + 1e-12) + 1e-10);
                    v["measured"] = serde_json::to_value(m)?;
                    v["holds"] = json!(holds);
                }
                Output::Json(v)
            }
        }
        Command::Ogata { n, plan_only, no_measure } => {
            no_csv(cli, "ogata")?;
            let r = construct(*n, cli.cap, !no_measure, *plan_only)?;
            let mut v = r.to_json();
            v["schema"] = json!("nearby.ogata/1");
            v["all_within"] = json!(r.all_within(1e-10));
            Output::Json(v)
        }
        Command::Verify { suite, full } => return verify(cli, suite, *full),
        Command::Fixtures { kind } => {
            no_csv(cli, "fixtures")?;
            let k = match *kind {
                FixtureCommand::Choi { n } => FixtureKind::Choi(n),
                FixtureCommand::Voiculescu { n } => FixtureKind::Voiculescu(n),
                FixtureCommand::Phillips { a, b, c } => FixtureKind::Phillips { a, b, c },
            };
            let mut v = fixture(k)?.to_json();
            v["schema"] = json!("nearby.fixture/1");
            Output::Json(v)
        }
    };
    Ok(Ok(out))
}

fn mult(cli: &Cli, n: u32) -> Result<Output> {
    let table = MultiplicityTable::new(n);
    if cli.csv() {
        let mut w = String::new();
        w.push_str("spin,two_lambda,multiplicity\n");
        for s in table.spins() {
            w.push_str(&format!("{},{},{}\n", s, s.two_lambda, table.get(s)));
        }
        return Ok(Output::Csv(w.into_bytes()));
    }
    let entries: serde_json::Map<String, Value> = table.spins().map(|s| (s.to_string(), json!(table.get(s).to_string()))).collect();
    Ok(Output::Json(json!({
        "schema": "nearby.mult/1",
        "N": n,
        "multiplicities": entries,
        "turning_point": turning_point(n),
        "total_dimension": table.total_dimension().to_string(),
    })))
}

fn verify(cli: &Cli, suite: &str, full: bool) -> Result<std::result::Result<Output, Failed>> {
    let scale = if full { Scale::Full } else { Scale::Quick };
    let reports = if suite == "all" {
        run_all(scale, cli.seed)
    } else {
        let id: u8 = suite.parse().map_err(|_| anyhow!("--suite must be 'all' or a criterion number, got '{}'", suite))?;
        vec![run(id, scale, cli.seed).ok_or_else(|| anyhow!("there is no criterion {}", id))?]
    };
    let passed = reports.iter().all(|r| r.passed());
    for r in &reports {
        eprintln!("{}", r.summary());
    }
    let out = if cli.csv() {
        let mut s = String::from("id,name,passed,checks,failed\n");
        for r in &reports {
            s.push_str(&format!("{},{},{},{},{}\n", r.id, r.name, r.passed(), r.checks, r.failed));
        }
        Output::Csv(s.into_bytes())
    } else {
        Output::Json(json!({
            "schema": "nearby.verify/1",
            "scale": scale,
            "seed": cli.seed,
            "passed": passed,
            "criteria": reports,
        }))
    };
    Ok(if passed { Ok(out) } else { Err(Failed(out)) })
}
