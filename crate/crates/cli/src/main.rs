use std::io::{self, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use num_bigint::BigInt;

use cfplan_core::dsl::{self, Source};
use cfplan_core::envs::{self, Environment};
use cfplan_core::planning::{
    approx_policy, indifference_check, solve_backward_induction, solve_enumeration, solve_policy_iteration, Budget,
    IndifferenceMode, SolveResult, DEFAULT_CAP,
};
use cfplan_core::sim::{self, RunConfig, ServeOptions};
use cfplan_core::template::Horizon;
use cfplan_core::value::{approx_f64, format_rational, Rational};
use cfplan_core::{apply_transforms, Diagram, Error, Result};

#[derive(Parser)]
#[command(name = "cfplan", version, about = "Exact counterfactual planning world models")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Probability of an event, optionally conditioned on another.
    Infer {
        file: PathBuf,
        #[arg(long)]
        event: String,
        #[arg(long)]
        given: Option<String>,
        /// Unrolling depth for templates (defaults to the template horizon).
        #[arg(long)]
        steps: Option<u32>,
    },
    /// Optimal policy and its expected utility.
    Solve {
        file: PathBuf,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        /// Look-ahead depth in decisions for the approximate planner.
        #[arg(long)]
        budget: Option<u32>,
        #[arg(long)]
        steps: Option<u32>,
        /// Largest policy space the enumeration solver will search.
        #[arg(long, default_value_t = DEFAULT_CAP)]
        cap: u64,
    },
    /// Structural and numeric indifference of the planner to a node.
    Indiff {
        file: PathBuf,
        #[arg(long)]
        node: String,
        /// Add this many seeded random kernels to the vertex candidates.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        steps: Option<u32>,
    },
    /// Applies a transform script and prints the resulting diagram.
    Transform {
        file: PathBuf,
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        steps: Option<u32>,
    },
    /// Runs an episode and writes its trace.
    Run {
        config: PathBuf,
        /// Trace file; stdout when omitted.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Runs a live session over WebSocket.
    Serve {
        config: PathBuf,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Overseer token; without one the first client commands.
        #[arg(long)]
        token: Option<String>,
        /// Start paused and advance only on StepOnce or Resume.
        #[arg(long)]
        paused: bool,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// First divergence between two trace files.
    Compare { a: PathBuf, b: PathBuf },
    /// Shipped environments.
    Env {
        #[command(subcommand)]
        cmd: EnvCmd,
    },
}

#[derive(Subcommand)]
enum EnvCmd {
    List,
    /// Writes `<name>.cid` and `<name>.toml` into a directory.
    Export {
        name: String,
        #[arg(long, default_value = ".")]
        dir: PathBuf,
        /// Constructor parameter as key=value; values are parsed as TOML.
        #[arg(long = "param", value_name = "KEY=VALUE")]
        params: Vec<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Enum,
    Bi,
    Pi,
}

fn decimal(r: &Rational) -> String {
    let f = approx_f64(r);
    if f.is_finite() {
        return format!("{f:.6e}");
    }
    let int: BigInt = r.numer() / r.denom();
    let digits = int.magnitude().to_string();
    let sign = if r.numer().sign() == num_bigint::Sign::Minus { "-" } else { "" };
    let mantissa = &digits[..digits.len().min(7)];
    format!("{sign}{}.{}e{}", &mantissa[..1], &mantissa[1..], digits.len() - 1)
}

fn read_source(path: &Path) -> Result<Source> {
    let text = std::fs::read_to_string(path)?;
    Ok(dsl::parse(&text)?)
}

/// A `.cid` file as a finite diagram, unrolling templates.
fn load_finite(path: &Path, steps: Option<u32>) -> Result<Diagram> {
    match read_source(path)? {
        Source::Diagram(_) => {
            let text = std::fs::read_to_string(path)?;
            dsl::load_diagram(&text)
        }
        Source::Template(t) => match steps {
            Some(n) => t.unroll(n),
            None => t.unroll_default(),
        },
    }
}

fn print_solution(out: &mut impl Write, sol: &SolveResult) -> io::Result<()> {
    writeln!(out, "method {:?}", sol.method)?;
    writeln!(out, "utility {} ~ {}", format_rational(&sol.utility), decimal(&sol.utility))?;
    if sol.rules.len() > 1 {
        writeln!(out, "stationary {}", sol.stationary)?;
        for (id, p) in &sol.rules {
            writeln!(out, "rule {id}")?;
            print_rule(out, p)?;
        }
        Ok(())
    } else {
        print_rule(out, &sol.policy)
    }
}

fn print_rule(out: &mut impl Write, p: &cfplan_core::planning::Policy) -> io::Result<()> {
    for (pa, a) in p.rows() {
        let args: Vec<String> = pa.iter().map(ToString::to_string).collect();
        writeln!(out, "  {}({}) = {a}", p.id, args.join(", "))?;
    }
    Ok(())
}

fn solve(out: &mut impl Write, file: &Path, method: Option<MethodArg>, budget: Option<u32>, steps: Option<u32>, cap: u64) -> Result<()> {
    if let Source::Template(_) = read_source(file)? {
        let t = dsl::load_template(&std::fs::read_to_string(file)?)?;
        if t.horizon == Horizon::Infinite && steps.is_none() {
            if let Some(MethodArg::Enum | MethodArg::Bi) = method {
                return Err(Error::Config("infinite templates are solved by policy iteration; pass --steps to unroll".into()));
            }
            print_solution(out, &solve_policy_iteration(&t)?)?;
            return Ok(());
        }
    }
    let d = load_finite(file, steps)?;
    let sol = match (method, budget) {
        (_, Some(k)) => approx_policy(&d, Budget::Depth(k))?,
        (Some(MethodArg::Bi), None) => solve_backward_induction(&d)?,
        (Some(MethodArg::Pi), None) => {
            return Err(Error::Config("policy iteration needs an infinite-horizon template".into()));
        }
        (Some(MethodArg::Enum) | None, None) => solve_enumeration(&d, cap)?,
    };
    print_solution(out, &sol)?;
    Ok(())
}

fn params(pairs: &[String]) -> Result<toml::Table> {
    let mut t = toml::Table::new();
    for p in pairs {
        let (k, v) = p.split_once('=').ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got `{p}`")))?;
        let parsed: toml::Table = format!("v = {v}")
            .parse()
            .or_else(|_| format!("v = {v:?}").parse())
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        t.insert(k.trim().to_string(), parsed["v"].clone());
    }
    Ok(t)
}

fn exec(cli: Cli) -> Result<()> {
    let mut out = io::stdout().lock();
    match cli.cmd {
        Cmd::Infer { file, event, given, steps } => {
            let d = load_finite(&file, steps)?;
            let e = dsl::parse_event(&event)?;
            let p = match given {
                Some(g) => cfplan_core::inference::cond_prob(&d, &e, &dsl::parse_event(&g)?)?,
                None => cfplan_core::inference::prob(&d, &e)?,
            };
            writeln!(out, "{} ~ {}", format_rational(&p), decimal(&p))?;
        }
        Cmd::Solve { file, method, budget, steps, cap } => solve(&mut out, &file, method, budget, steps, cap)?,
        Cmd::Indiff { file, node, samples, seed, steps } => {
            let d = load_finite(&file, steps)?;
            let mode = match samples {
                Some(k) => IndifferenceMode::Sampled { k, seed },
                None => IndifferenceMode::Vertex,
            };
            writeln!(out, "{}", indifference_check(&d, &node, &mode)?)?;
        }
        Cmd::Transform { file, script, steps } => {
            let d = load_finite(&file, steps)?;
            let s = dsl::parse_script(&std::fs::read_to_string(script)?, &d)?;
            let label = s.label.clone().unwrap_or_else(|| d.label.clone());
            write!(out, "{}", dsl::serialize(&apply_transforms(&d, &s.transforms, &label)?))?;
        }
        Cmd::Run { config, out: dest } => {
            let cfg = RunConfig::load(&config)?;
            match dest {
                Some(path) => {
                    sim::run(&cfg, &path)?;
                }
                None => write!(out, "{}", sim::trace_text(&cfg, &sim::run_episode(&cfg)?)?)?,
            }
        }
        Cmd::Serve { config, port, host, token, paused, out: dest } => {
            let cfg = RunConfig::load(&config)?;
            let listener = TcpListener::bind((host.as_str(), port))?;
            eprintln!("listening on ws://{}", listener.local_addr()?);
            let recs = sim::serve(&cfg, listener, &ServeOptions { token, paused, out: dest })?;
            eprintln!("session finished after {} ticks", recs.len());
        }
        Cmd::Compare { a, b } => {
            let report = sim::compare(&std::fs::read_to_string(a)?, &std::fs::read_to_string(b)?)?;
            writeln!(out, "{report}")?;
        }
        Cmd::Env { cmd: EnvCmd::List } => {
            for env in envs::shipped()? {
                writeln!(out, "{:<12} {}", env.name(), env.meta.description)?;
            }
        }
        Cmd::Env { cmd: EnvCmd::Export { name, dir, params: p } } => {
            let env = Environment::by_name(&name, &params(&p)?)?;
            std::fs::create_dir_all(&dir)?;
            env.save(&dir)?;
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Env(_) => 2,
        Error::CapExceeded { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match exec(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
