//! `vosagent` command line: suite generation, agent and baseline runs,
//! report comparison, trace replay and tool serving.

use std::fs;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use vosagent_core::engine::{render_observation, replay_trace};
use vosagent_core::protocol::http::{serve_http, HttpToolClient};
use vosagent_core::protocol::stdio::{serve_stdio, StdioToolClient};
use vosagent_core::protocol::{conformance_check, ConformanceProbe};
use vosagent_core::scenario::load_scenario;
use vosagent_core::*;

#[derive(Parser)]
#[command(name = "vosagent", version, about = "Tool-using video segmentation agent over simulated scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a stratified benchmark suite.
    GenSuite {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Number of scenarios.
        #[arg(long, default_value_t = 50)]
        n: usize,
    },
    /// Run the reasoning agent over a suite.
    Run(RunArgs),
    /// Run the fixed two-step pipeline over a suite.
    Baseline(RunArgs),
    /// Compare two reports from the same suite.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Print a trace file and check that it replays.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        /// Also re-execute the recorded tool calls against this scenario.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Noise and tool defaults for `--scenario` re-execution.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Serve the simulated tools of one scenario.
    ServeTools {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Listen address for HTTP, e.g. 127.0.0.1:8080.
        #[arg(long, conflicts_with = "stdio", required_unless_present = "stdio")]
        http: Option<String>,
        /// Speak line-delimited JSON on stdin/stdout.
        #[arg(long)]
        stdio: bool,
    },
    /// Run the protocol conformance suite against a tool server.
    Conformance {
        /// Base URL of an HTTP tool server.
        #[arg(long, conflicts_with = "command", required_unless_present = "command")]
        url: Option<String>,
        /// Program (and arguments) speaking the stdio transport.
        #[arg(last = true)]
        command: Vec<String>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    suite: PathBuf,
    /// JSON agent configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for report.json and report.csv.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    parallelism: Option<usize>,
    /// Write one trace file per query into this directory.
    #[arg(long)]
    traces: Option<PathBuf>,
    /// Record per-row wall time.
    #[arg(long)]
    timing: bool,
}

fn load_config(path: Option<&Path>) -> Result<AgentConfig> {
    Ok(match path {
        Some(p) => AgentConfig::load(p)?,
        None => AgentConfig::default(),
    })
}

fn run_suite(args: &RunArgs, baseline: bool) -> Result<()> {
    let suite = BenchmarkSuite::load(&args.suite)?;
    let mut config = load_config(args.config.as_deref())?;
    if args.parallelism.is_some() {
        config.parallelism = args.parallelism;
    }
    if args.traces.is_some() {
        config.trace_dir = args.traces.clone();
    }
    config.record_timing |= args.timing;
    let report = if baseline {
        run_baseline_fixed(&suite, &config)?
    } else {
        run_benchmark(&suite, &config)?
    };
    report.write(&args.out)?;
    let o = &report.aggregates.overall;
    let num = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    println!(
        "{} rows, mean_jf {}, miou {}, fallback {}, errors {}; wrote {}",
        report.rows.len(),
        num(o.mean_jf),
        num(o.miou),
        o.fallback_count,
        report.error_rows(),
        args.out.join("report.json").display()
    );
    Ok(())
}

fn replay(trace: &Path, scenario: Option<&Path>, config: Option<&Path>) -> Result<()> {
    let file = fs::File::open(trace).with_context(|| format!("open {}", trace.display()))?;
    let trace = read_trace(BufReader::new(file)).with_context(|| format!("read {}", trace.display()))?;
    println!("query {} ({:?})", trace.query_id, trace.plan.reference_type);
    println!("plan: {}", trace.plan.consolidated_query);
    for s in &trace.steps {
        println!("--- step {}", s.index);
        println!("{}", s.raw_text.trim_end());
        if let Some(o) = &s.observation {
            println!("Observation: {o}");
        }
    }
    match &trace.final_answer {
        Some(f) => println!(
            "final: object {} at frame {}{}",
            f.object_id,
            f.pivot_frame,
            if trace.fallback_used { " (fallback)" } else { "" }
        ),
        None => println!("final: none"),
    }
    if let Some(e) = &trace.episode_error {
        println!("episode error: {e}");
    }
    let n = replay_trace(&trace).map_err(|m| anyhow::anyhow!("step {}: {}", m.step, m.message))?;
    println!("replay ok: {n} steps reparse to the recorded actions");

    if let Some(path) = scenario {
        let s = Arc::new(load_scenario(path)?);
        let cfg = load_config(config)?;
        let tools = standard_registry(s, cfg.noise.clone(), cfg.engine.tool_defaults);
        let mut checked = 0;
        for step in &trace.steps {
            let (StepAction::Call(call), Some(recorded)) = (&step.action, &step.observation) else {
                continue;
            };
            let again = render_observation(&tools.invoke(call, cfg.engine.tool_timeout()));
            if &again != recorded {
                bail!("step {}: observation differs on re-execution", step.index);
            }
            checked += 1;
        }
        println!("re-execution ok: {checked} observations reproduced");
    }
    Ok(())
}

fn serve(scenario: &Path, config: Option<&Path>, http: Option<&str>) -> Result<()> {
    let s = Arc::new(load_scenario(scenario)?);
    let cfg = load_config(config)?;
    let tools = standard_registry(s, cfg.noise.clone(), cfg.engine.tool_defaults);
    match http {
        Some(addr) => {
            let handle = serve_http(Arc::new(tools), addr, cfg.engine.tool_timeout())?;
            eprintln!("listening on {}", handle.base_url());
            handle.join();
        }
        None => serve_stdio(&tools, io::stdin().lock(), io::stdout().lock())?,
    }
    Ok(())
}

fn conformance(url: Option<&str>, command: &[String]) -> Result<()> {
    let probe = ConformanceProbe::default();
    let report = match url {
        Some(u) => conformance_check(&HttpToolClient::new(u), &probe)?,
        None => {
            let mut cmd = Command::new(&command[0]);
            cmd.args(&command[1..]);
            conformance_check(&StdioToolClient::spawn(cmd)?, &probe)?
        }
    };
    print!("{report}");
    if !report.all_passed() {
        bail!("conformance failed");
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::GenSuite { seed, out, n } => {
            let suite = generate_suite(
                &SuiteParams {
                    seed,
                    num_scenarios: n,
                    ..SuiteParams::default()
                },
                &out,
            )?;
            println!("{}: {} scenarios in {}", suite.suite_id, suite.scenarios.len(), out.display());
        }
        Cmd::Run(a) => run_suite(&a, false)?,
        Cmd::Baseline(a) => run_suite(&a, true)?,
        Cmd::Compare { a, b, json } => {
            let cmp = compare_reports(&EvalReport::load(&a)?, &EvalReport::load(&b)?)?;
            if json {
                println!("{}", cmp.to_json());
            } else {
                print!("{cmp}");
            }
        }
        Cmd::Replay { trace, scenario, config } => replay(&trace, scenario.as_deref(), config.as_deref())?,
        Cmd::ServeTools {
            scenario,
            config,
            http,
            stdio: _,
        } => serve(&scenario, config.as_deref(), http.as_deref())?,
        Cmd::Conformance { url, command } => conformance(url.as_deref(), &command)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
