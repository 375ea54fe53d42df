use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rdkg_core::analysis::fmt_sig9;
use rdkg_core::pipeline::{self, RunConfig};
use rdkg_core::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERICAL: u8 = 3;

/// Build and refine knowledge graphs from lecture notes by rate-distortion optimization.
#[derive(Debug, Parser)]
#[command(name = "rdkg", version)]
struct Cli {
    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for artifacts
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Verbose logging and prompt logs
    #[arg(long, global = true)]
    debug: bool,

    /// Override any config key, e.g. `--set theta_split=0.5`
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", value_parser = parse_kv)]
    set: Vec<(String, String)>,

    #[command(flatten)]
    common: CommonFlags,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct CommonFlags {
    /// Precomputed embeddings table (selects the precomputed provider)
    #[arg(long, global = true)]
    embeddings: Option<PathBuf>,

    /// Chat-completion endpoint enabling LLM operations
    #[arg(long, global = true)]
    llm_url: Option<String>,

    /// Rate-distortion trade-off weight
    #[arg(long, global = true)]
    beta: Option<f64>,

    /// Feature weight in the fused objective
    #[arg(long, global = true)]
    lambda_feat: Option<f64>,

    /// Entropic regularization of the inner solver
    #[arg(long, global = true)]
    epsilon: Option<f64>,

    /// Outer refinement iterations
    #[arg(long, global = true)]
    max_iterations: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse Markdown notes into the lecture-space artifact
    Ingest { markdown: PathBuf },
    /// Build the initial knowledge graph from Markdown notes
    Bootstrap { markdown: PathBuf },
    /// Align a knowledge graph to a lecture artifact
    Align {
        lecture: PathBuf,
        kg: PathBuf,
        /// Also write the coupling matrix
        #[arg(long)]
        dump_coupling: bool,
    },
    /// Refine a knowledge graph and write the trace and report
    Refine { lecture: PathBuf, kg: PathBuf },
    /// Rebuild report files from a trace
    Report { trace: PathBuf },
}

fn parse_kv(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))
}

fn overrides(cli: &Cli) -> Vec<(String, String)> {
    let mut o = cli.set.clone();
    let c = &cli.common;
    let quote = |s: &str| toml_string(s);
    if let Some(p) = &c.embeddings {
        o.push(("embedding_provider".into(), "\"precomputed\"".into()));
        o.push(("embeddings_file".into(), quote(&p.display().to_string())));
    }
    if let Some(u) = &c.llm_url {
        o.push(("llm_url".into(), quote(u)));
    }
    for (k, v) in [("beta", c.beta), ("lambda_feat", c.lambda_feat), ("epsilon", c.epsilon)] {
        if let Some(v) = v {
            o.push((k.into(), format!("{v:?}")));
        }
    }
    if let Some(n) = c.max_iterations {
        o.push(("max_iterations".into(), n.to_string()));
    }
    if cli.debug {
        o.push(("debug".into(), "true".into()));
    }
    if let Command::Align { dump_coupling: true, .. } = cli.command {
        o.push(("dump_coupling".into(), "true".into()));
    }
    o
}

fn toml_string(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

fn report(label: &str, value: impl std::fmt::Display) {
    println!("{label:<16} {value}");
}

fn run(cli: &Cli, cfg: &RunConfig) -> Result<u8, Error> {
    let out: &Path = &cli.out;
    match &cli.command {
        Command::Ingest { markdown } => {
            let s = pipeline::cmd_ingest(cfg, markdown, out)?;
            report("units", s.units);
            report("d_z min", fmt_sig9(s.distance.min_offdiag));
            report("d_z mean", fmt_sig9(s.distance.mean_offdiag));
            report("d_z max", fmt_sig9(s.distance.max));
            report("artifact", s.artifact.display());
        }
        Command::Bootstrap { markdown } => {
            let s = pipeline::cmd_bootstrap(cfg, markdown, out)?;
            if cfg.llm_url.is_some() && s.fallback {
                eprintln!("warning: LLM bootstrap unusable; heading fallback written");
            }
            report("nodes", s.nodes);
            report("edges", s.edges);
            report("rate", fmt_sig9(s.rate));
            report("kg", s.path.display());
        }
        Command::Align { lecture, kg, .. } => {
            let s = pipeline::cmd_align(cfg, lecture, kg, out)?;
            report("distortion", fmt_sig9(s.distortion));
            report("structure", fmt_sig9(s.structure));
            report("feature", fmt_sig9(s.feature));
            report("rate", fmt_sig9(s.rate));
            report("objective", fmt_sig9(s.objective));
            report("coverage", fmt_sig9(s.coverage));
            if let Some(p) = &s.coupling_dump {
                report("coupling", p.display());
            }
        }
        Command::Refine { lecture, kg, .. } => {
            let s = pipeline::cmd_refine(cfg, lecture, kg, out)?;
            report("iterations", s.points - 1);
            report("incumbent t", s.incumbent_t);
            report("knee t", s.knee);
            report("nodes", format!("{} -> {}", s.nodes_before, s.nodes_after));
            report("objective", format!("{} -> {}", fmt_sig9(s.objective_before), fmt_sig9(s.objective_after)));
            report("coverage", format!("{} -> {}", fmt_sig9(s.coverage_before), fmt_sig9(s.coverage_after)));
            report("kg", s.kg_path.display());
            report("trace", s.trace_path.display());
            if !s.complete {
                eprintln!("error: refinement aborted early; trace is incomplete");
                return Ok(EXIT_NUMERICAL);
            }
        }
        Command::Report { trace } => {
            let s = pipeline::cmd_report(cfg, trace, out)?;
            report("points", s.points);
            report("knee t", s.knee);
            report("out", s.out.display());
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.debug { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let cfg = match RunConfig::layered(cli.config.as_deref(), &overrides(&cli)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(&cli, &cfg) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
