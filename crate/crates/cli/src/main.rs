//! `explainer`: batch simulation, terminal sessions, the websocket server
//! and graph/config inspection.

mod interact;

use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{ArgGroup, Parser, Subcommand};
use explainer_core::decision_process::Action;
use explainer_core::persona_sim::{resolve_personas, run_batch};
use explainer_core::{GraphError, KnowledgeGraph, Settings};

#[derive(Parser)]
#[command(name = "explainer", version, about = "Adaptive explanation engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run simulated explainees against the engine and export statistics.
    Simulate {
        /// Shipped graph id or path to a graph JSON file.
        #[arg(long, default_value = "quarto")]
        graph: String,
        /// `all`, comma separated built-in names, or a persona TOML file.
        #[arg(long, default_value = "all")]
        personas: String,
        #[arg(long, default_value_t = 20)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for runs.csv, cycles.csv and summary.json.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Engine and partner model settings (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Be the explainee in a terminal session.
    Interact {
        #[arg(long, default_value = "quarto")]
        graph: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Where the transcript is written when the session closes.
        #[arg(long, default_value = "transcript.jsonl")]
        transcript: PathBuf,
    },
    /// Host interactive sessions over a websocket.
    Serve {
        /// Extra graph to offer next to the shipped ones, by path.
        #[arg(long)]
        graph: Option<String>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seconds to wait for feedback before treating the cycle as silent.
        #[arg(long, default_value_t = 8.0)]
        feedback_window: f64,
    },
    /// Validate and summarize a graph or a settings file.
    #[command(group(ArgGroup::new("what").required(true).args(["graph", "pm_config"])))]
    Inspect {
        #[arg(long)]
        graph: Option<String>,
        #[arg(long)]
        pm_config: Option<PathBuf>,
    },
}

enum Failure {
    /// Bad input files or flags.
    Config(String),
    /// Anything that went wrong after the inputs were accepted.
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

fn graph_failure(spec: &str, e: GraphError) -> Failure {
    match e {
        GraphError::Io { .. } => Failure::Config(e.to_string()),
        other => Failure::Config(format!("{spec}: {other}")),
    }
}

fn load_graph(spec: &str) -> Result<KnowledgeGraph, Failure> {
    KnowledgeGraph::resolve(spec).map_err(|e| graph_failure(spec, e))
}

fn load_settings(path: Option<&PathBuf>) -> Result<Settings, Failure> {
    match path {
        Some(p) => Settings::load(p).map_err(|e| Failure::Config(e.to_string())),
        None => Ok(Settings::default()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { graph, personas, runs, seed, out, config } => {
            simulate(&graph, &personas, runs, seed, out, config.as_ref())
        }
        Command::Interact { graph, seed, config, transcript } => {
            let graph = load_graph(&graph);
            let settings = load_settings(config.as_ref());
            match (graph, settings) {
                (Ok(g), Ok(s)) => {
                    let stdin = std::io::stdin().lock();
                    let stdout = std::io::stdout().lock();
                    interact::run(g, s, seed, stdin, stdout, &transcript).map_err(Failure::Runtime)
                }
                (Err(e), _) | (_, Err(e)) => Err(e),
            }
        }
        Command::Serve { graph, port, host, config, feedback_window } => {
            serve(graph.as_deref(), SocketAddr::new(host, port), config.as_ref(), feedback_window)
        }
        Command::Inspect { graph, pm_config } => inspect(graph.as_deref(), pm_config.as_ref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Config(m) | Failure::Runtime(m)) = &f;
            eprintln!("error: {m}");
            ExitCode::from(f.code())
        }
    }
}

fn simulate(
    graph: &str,
    personas: &str,
    runs: usize,
    seed: u64,
    out: Option<PathBuf>,
    config: Option<&PathBuf>,
) -> Result<(), Failure> {
    let g = load_graph(graph)?;
    let settings = load_settings(config)?;
    let personas = resolve_personas(personas).map_err(|e| Failure::Config(e.to_string()))?;
    if runs == 0 {
        return Err(Failure::Config("--runs must be at least 1".into()));
    }
    let started = Instant::now();
    let stats = run_batch(&g, &personas, &settings, runs, seed).map_err(|e| Failure::Runtime(e.to_string()))?;
    log::info!("batch finished in {:.1?}", started.elapsed());

    let mut stdout = std::io::stdout().lock();
    let w = &mut stdout;
    let row = |w: &mut dyn Write, cells: [&str; 12]| {
        writeln!(
            w,
            "{:<10} {:>4} {:>6} {:>8} {:>7} {:>6} {:>6} {:>6} {:>6} {:>7} {:>6} {:>6}",
            cells[0], cells[1], cells[2], cells[3], cells[4], cells[5], cells[6], cells[7], cells[8], cells[9], cells[10], cells[11]
        )
    };
    let io = |e: std::io::Error| Failure::Runtime(e.to_string());
    row(w, ["persona", "runs", "capped", "length", "sd", "E", "L", "A", "C", "provide", "deepen", "answer"]).map_err(io)?;
    for p in &personas {
        let Some(s) = stats.persona(&p.name) else { continue };
        let f3 = |x: f64| format!("{x:.3}");
        row(
            w,
            [
                &p.name,
                &s.runs.to_string(),
                &s.capped.to_string(),
                &format!("{:.1}", s.mean_length),
                &format!("{:.1}", s.std_length),
                &f3(s.mean_pm.e),
                &f3(s.mean_pm.l),
                &f3(s.mean_pm.a),
                &f3(s.mean_pm.c),
                &s.action_count(Action::Provide).to_string(),
                &s.action_count(Action::Deepen).to_string(),
                &s.action_count(Action::Answer).to_string(),
            ],
        )
        .map_err(io)?;
    }
    if let Some(dir) = out {
        stats.write_exports(&dir).map_err(|e| Failure::Runtime(e.to_string()))?;
        writeln!(w, "exports written to {}", dir.display()).map_err(io)?;
    }
    Ok(())
}

fn serve(graph: Option<&str>, addr: SocketAddr, config: Option<&PathBuf>, window: f64) -> Result<(), Failure> {
    let settings = load_settings(config)?;
    let mut extra = Vec::new();
    if let Some(spec) = graph {
        let g = load_graph(spec)?;
        let id = std::path::Path::new(spec)
            .file_stem()
            .map_or_else(|| spec.to_string(), |s| s.to_string_lossy().into_owned());
        extra.push((id, g));
    }
    if !(window.is_finite() && window > 0.0) {
        return Err(Failure::Config("--feedback-window must be a positive number of seconds".into()));
    }
    let state = explainer_service::ServiceState::with_builtin_graphs(extra, settings)
        .feedback_window(Duration::from_secs_f64(window));
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Runtime(e.to_string()))?;
    eprintln!("serving on ws://{addr}/ws");
    runtime
        .block_on(explainer_service::serve(state, addr))
        .map_err(|e| Failure::Runtime(format!("{addr}: {e}")))
}

fn inspect(graph: Option<&str>, pm_config: Option<&PathBuf>) -> Result<(), Failure> {
    let mut out = std::io::stdout().lock();
    let io = |e: std::io::Error| Failure::Runtime(e.to_string());
    if let Some(spec) = graph {
        let g = load_graph(spec)?;
        let total = g.triples().len();
        let mandatory = g.triples().iter().filter(|t| t.mandatory).count();
        writeln!(out, "graph {spec}: {total} triples, {mandatory} mandatory, {} blocks", g.blocks().len()).map_err(io)?;
        for block in g.blocks() {
            let ids: Vec<&explainer_core::knowledge_graph::Triple> =
                g.triples().iter().filter(|t| &t.block == block).collect();
            writeln!(out, "\n[{block}] {} triples", ids.len()).map_err(io)?;
            for t in ids {
                let pre: Vec<String> = t
                    .preconditions
                    .iter()
                    .map(|p| if p.external { format!("{}*", p.id) } else { p.id.clone() })
                    .collect();
                writeln!(
                    out,
                    "  {:<32} cx {} {} {}",
                    t.id,
                    t.complexity,
                    if t.mandatory { "mandatory" } else { "optional " },
                    if pre.is_empty() { String::new() } else { format!("after {}", pre.join(", ")) }
                )
                .map_err(io)?;
            }
        }
    }
    if let Some(path) = pm_config {
        let s = Settings::load(path).map_err(|e| Failure::Config(e.to_string()))?;
        let pm = explainer_core::partner_model::init_partner_state(&s.dbn)
            .map_err(|e| Failure::Config(e.to_string()))?
            .snapshot();
        writeln!(out, "{}: valid", path.display()).map_err(io)?;
        writeln!(out, "initial expectations: E {:.3} L {:.3} A {:.3} C {:.3}\n", pm.e, pm.l, pm.a, pm.c).map_err(io)?;
        write!(out, "{}", s.to_toml_string()).map_err(io)?;
    }
    Ok(())
}
