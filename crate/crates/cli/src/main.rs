use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use cploop_core::bandit::{MemoryBank, Namespace, StoreOp};
use cploop_core::embed::{Embedder, HashEmbedder};
use cploop_core::llm::{HttpLlm, LlmPort, Scenario, ScriptedLlm};
use cploop_core::orchestrator::{replay, Engine, EngineConfig, EpisodeRecord, LogicalClock, Skills, SystemClock};
use cploop_core::pipeline::{self, read_records, run_pipeline, write_records, PipelineConfig, ProblemRecord};
use cploop_core::prompts::PromptLibrary;
use cploop_core::qms::{QmsGraph, SharedGraph};
use cploop_core::rating::{parse_agent, parse_humans, rate_contests, render_report, ContestStandings};
use cploop_core::sandbox::Sandbox;

/// Stdout writes that surface a closed pipe as an error instead of panicking.
macro_rules! outln {
    ($($t:tt)*) => { writeln!(std::io::stdout(), $($t)*)? };
}
macro_rules! out {
    ($($t:tt)*) => { write!(std::io::stdout(), $($t)*)? };
}

const LOCK_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Parser)]
#[command(name = "cploop", version, about = "Closed-loop competitive programming solver")]
struct Cli {
    /// Engine configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory holding memory snapshots and the skill graph.
    #[arg(long, global = true, default_value = "cploop-state")]
    state: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Inspect or maintain the advice memories.
    Memory {
        #[command(subcommand)]
        cmd: MemoryCmd,
    },
    /// Inspect the skill graph.
    Graph {
        #[command(subcommand)]
        cmd: GraphCmd,
    },
    /// Run the data filtering pipeline.
    Pipeline {
        #[command(subcommand)]
        cmd: PipelineCmd,
    },
    /// Estimate contest ratings from standings.
    Rate {
        /// Directory of `<contest_id>.txt` files with rows `rating solved penalty last_ac`.
        #[arg(long)]
        standings: PathBuf,
        /// Agent rows `contest_id solved penalty last_ac`, in contest order.
        #[arg(long)]
        agent: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Run one episode on a problem.
    Solve {
        /// Problem record (JSON).
        #[arg(long)]
        problem: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        /// Where to write the episode record.
        #[arg(long, default_value = "episode.json")]
        out: PathBuf,
    },
    /// Contrastive training rollouts over a corpus.
    Train {
        /// Directory of problem JSON files, or one JSONL file.
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        /// Persist memories and graph after this many problems.
        #[arg(long, default_value_t = 10)]
        checkpoint_every: usize,
        /// Directory for per-problem training reports.
        #[arg(long, default_value = "training-reports")]
        reports: PathBuf,
    },
    /// Re-apply an episode's store writes to fresh stores and audit them.
    Replay {
        #[arg(long)]
        episode: PathBuf,
        /// Also apply the writes to the persisted memories.
        #[arg(long)]
        into_state: bool,
    },
}

#[derive(Subcommand)]
enum MemoryCmd {
    Inspect {
        #[arg(long)]
        namespace: Option<Namespace>,
    },
    /// Deprecate persistently bad items in every namespace.
    Sweep,
}

#[derive(Subcommand)]
enum GraphCmd {
    Stats,
    ExportDot {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum PipelineCmd {
    Run {
        /// Input records; the bundled synthetic corpus is used when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Seed for the synthetic corpus.
        #[arg(long, default_value_t = 5)]
        fixture_seed: u64,
        /// `all` or the last stage to run (1 to 4).
        #[arg(long, default_value = "all")]
        stage: String,
        /// Print the per-stage table.
        #[arg(long)]
        report: bool,
        /// Write survivors here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-tag cap for stage 2; defaults to the scaled cap for the synthetic corpus.
        #[arg(long)]
        tag_cap: Option<usize>,
        /// Use the published per-tag floors instead of percentiles.
        #[arg(long)]
        published_floors: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Scripted,
    Http,
}

#[derive(clap::Args)]
struct BackendArgs {
    #[arg(long, value_enum, default_value = "scripted")]
    backend: BackendKind,
    /// Scripted replies (JSON or TOML); required for the scripted backend.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Fixed logical clock for reproducible records.
    #[arg(long)]
    deterministic: bool,
}

fn main() -> Result<()> {
    match run() {
        Err(e) if e.downcast_ref::<std::io::Error>().is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe) => Ok(()),
        r => r,
    }
}

fn run() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = match &cli.config {
        Some(p) => EngineConfig::from_toml(&read(p)?)?,
        None => EngineConfig::default(),
    };
    match cli.cmd {
        Cmd::Memory { cmd } => memory(cmd, &cli.state),
        Cmd::Graph { cmd } => graph(cmd, &cli.state),
        Cmd::Pipeline { cmd } => pipeline_cmd(cmd),
        Cmd::Rate { standings, agent, json } => rate(&standings, &agent, json),
        Cmd::Solve { problem, backend, out } => solve(cfg, &cli.state, &problem, &backend, &out),
        Cmd::Train {
            corpus,
            backend,
            checkpoint_every,
            reports,
        } => train(cfg, &cli.state, &corpus, &backend, checkpoint_every, &reports),
        Cmd::Replay { episode, into_state } => replay_cmd(&cli.state, &episode, into_state),
    }
}

fn read(p: &Path) -> Result<String> {
    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
}

fn memory_dir(state: &Path) -> PathBuf {
    state.join("memory")
}

fn graph_dir(state: &Path) -> PathBuf {
    state.join("graph")
}

fn load_bank(state: &Path) -> Result<MemoryBank> {
    Ok(MemoryBank::load(&memory_dir(state), LOCK_TIMEOUT)?)
}

fn load_graph(state: &Path, dim: usize) -> Result<QmsGraph> {
    let dir = graph_dir(state);
    if dir.join("nodes.json").exists() {
        Ok(QmsGraph::load(&dir)?)
    } else {
        Ok(QmsGraph::new(dim))
    }
}

fn memory(cmd: MemoryCmd, state: &Path) -> Result<()> {
    let mut bank = load_bank(state)?;
    match cmd {
        MemoryCmd::Inspect { namespace } => {
            outln!("namespace\tid\tuses\tavg_reward\tbias\tdeprecated\tsummary");
            for ns in Namespace::ALL.into_iter().filter(|ns| namespace.is_none_or(|n| n == *ns)) {
                for it in bank.store(ns).items() {
                    outln!(
                        "{ns}\t{}\t{}\t{:.3}\t{:.3}\t{}\t{}",
                        it.id, it.use_count, it.avg_reward, it.bias, it.deprecated, it.summary
                    );
                }
            }
        }
        MemoryCmd::Sweep => {
            for ns in Namespace::ALL {
                let n = bank.store_mut(ns).deprecation_sweep();
                outln!("{ns}: {n} newly deprecated");
            }
            bank.persist(&memory_dir(state), LOCK_TIMEOUT)?;
        }
    }
    Ok(())
}

fn graph(cmd: GraphCmd, state: &Path) -> Result<()> {
    let g = load_graph(state, HashEmbedder::default().dim())?;
    match cmd {
        GraphCmd::Stats => outln!("{}", serde_json::to_string_pretty(&g.stats())?),
        GraphCmd::ExportDot { out } => match out {
            Some(p) => fs::write(&p, g.to_dot()).with_context(|| format!("writing {}", p.display()))?,
            None => out!("{}", g.to_dot()),
        },
    }
    Ok(())
}

fn pipeline_cmd(cmd: PipelineCmd) -> Result<()> {
    let PipelineCmd::Run {
        input,
        fixture_seed,
        stage,
        report,
        out,
        tag_cap,
        published_floors,
    } = cmd;
    let up_to: u8 = match stage.as_str() {
        "all" => 4,
        s => match s.parse() {
            Ok(n @ 1..=4) => n,
            _ => bail!("--stage must be `all` or 1 to 4, got `{s}`"),
        },
    };
    let (records, default_cap, dim) = match &input {
        Some(p) => (
            read_records(BufReader::new(File::open(p).with_context(|| format!("opening {}", p.display()))?))?,
            PipelineConfig::default().tag_cap,
            HashEmbedder::default().dim(),
        ),
        None => (
            pipeline::fixture::generate(fixture_seed),
            pipeline::fixture::FIXTURE_TAG_CAP,
            pipeline::fixture::FIXTURE_EMBED_DIM,
        ),
    };
    let cfg = PipelineConfig {
        tag_cap: tag_cap.unwrap_or(default_cap),
        floor_overrides: if published_floors {
            pipeline::fixture::reference_floors()
        } else {
            Default::default()
        },
        ..Default::default()
    };
    let (survivors, rep) = run_pipeline(records, &cfg, &HashEmbedder::new(dim), up_to)?;
    if report {
        out!("{}", rep.render());
        outln!("cumulative\t{}\t{}\t{:.4}", rep.initial, rep.final_count(), rep.cumulative_ratio());
    }
    if let Some(p) = out {
        let mut w = BufWriter::new(File::create(&p).with_context(|| format!("creating {}", p.display()))?);
        write_records(&mut w, &survivors)?;
        w.flush()?;
    }
    Ok(())
}

fn rate(standings: &Path, agent: &Path, json: bool) -> Result<()> {
    let rows = parse_agent(&read(agent)?)?;
    let mut contests = Vec::with_capacity(rows.len());
    for (contest_id, tuple) in rows {
        let path = standings.join(format!("{contest_id}.txt"));
        contests.push(ContestStandings {
            humans: parse_humans(&read(&path)?)?,
            contest_id,
            agent: tuple,
        });
    }
    let report = rate_contests(&contests)?;
    if json {
        outln!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        out!("{}", render_report(&report));
    }
    Ok(())
}

fn backend(args: &BackendArgs, cfg: &EngineConfig) -> Result<Box<dyn LlmPort>> {
    Ok(match args.backend {
        BackendKind::Scripted => {
            let Some(p) = &args.scenario else { bail!("the scripted backend needs --scenario") };
            Box::new(ScriptedLlm::new(Scenario::parse(&read(p)?)?))
        }
        BackendKind::Http => {
            let Some(http) = cfg.http.clone() else { bail!("the http backend needs an [http] section in --config") };
            Box::new(HttpLlm::new(http)?)
        }
    })
}

fn load_problem(p: &Path) -> Result<ProblemRecord> {
    serde_json::from_str(&read(p)?).with_context(|| format!("parsing {}", p.display()))
}

fn solve(cfg: EngineConfig, state: &Path, problem: &Path, args: &BackendArgs, out: &Path) -> Result<()> {
    let problem = load_problem(problem)?;
    let llm = backend(args, &cfg)?;
    let prompts = PromptLibrary::builtin();
    let sandbox = Sandbox::default();
    let bank = Mutex::new(load_bank(state)?);
    let logical = LogicalClock::starting_at(0);
    let clock: &dyn cploop_core::orchestrator::Clock = if args.deterministic { &logical } else { &SystemClock };
    let engine = Engine {
        cfg,
        llm: llm.as_ref(),
        prompts: &prompts,
        sandbox: &sandbox,
        bank: &bank,
        skills: None,
        clock,
    };
    let rec = engine.run_problem(&problem);
    bank.into_inner()
        .expect("memory bank lock")
        .persist(&memory_dir(state), LOCK_TIMEOUT)?;
    rec.write_json(BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?))?;
    outln!(
        "{}: {:?} after {} solver iterations and {} hack rounds, pass rate {:.3}",
        rec.problem_id, rec.outcome.status, rec.outcome.solver_iterations, rec.outcome.hack_rounds, rec.outcome.pass_rate
    );
    Ok(())
}

fn train(
    cfg: EngineConfig,
    state: &Path,
    corpus: &Path,
    args: &BackendArgs,
    checkpoint_every: usize,
    reports: &Path,
) -> Result<()> {
    let problems = load_corpus(corpus)?;
    let llm = backend(args, &cfg)?;
    let prompts = PromptLibrary::builtin();
    let sandbox = Sandbox::default();
    let bank = Mutex::new(load_bank(state)?);
    let embedder = HashEmbedder::default();
    let graph: SharedGraph = Arc::new(RwLock::new(load_graph(state, embedder.dim())?));
    let logical = LogicalClock::starting_at(0);
    let clock: &dyn cploop_core::orchestrator::Clock = if args.deterministic { &logical } else { &SystemClock };
    let engine = Engine {
        cfg,
        llm: llm.as_ref(),
        prompts: &prompts,
        sandbox: &sandbox,
        bank: &bank,
        skills: Some(Skills {
            graph: &graph,
            embedder: &embedder,
        }),
        clock,
    };
    fs::create_dir_all(reports)?;
    let checkpoint = || -> Result<()> {
        bank.lock().expect("memory bank lock").persist(&memory_dir(state), LOCK_TIMEOUT)?;
        graph.read().expect("skill graph lock").save(&graph_dir(state))?;
        Ok(())
    };
    for (i, p) in problems.iter().enumerate() {
        let report = engine.training_rollout(p);
        let path = reports.join(format!("{}.json", sanitize(&p.id)));
        serde_json::to_writer_pretty(BufWriter::new(File::create(&path)?), &report)?;
        match &report.skipped {
            Some(why) => outln!("{}: skipped ({why})", p.id),
            None => outln!("{}: delta {:+.3}", p.id, report.delta_r),
        }
        if checkpoint_every > 0 && (i + 1) % checkpoint_every == 0 {
            checkpoint()?;
        }
    }
    checkpoint()
}

/// Directory entries are read in name order so runs are reproducible.
fn load_corpus(path: &Path) -> Result<Vec<ProblemRecord>> {
    if !path.is_dir() {
        return Ok(read_records(BufReader::new(
            File::open(path).with_context(|| format!("opening {}", path.display()))?,
        ))?);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    files.retain(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("json" | "jsonl")));
    files.sort();
    let mut out = Vec::new();
    for f in files {
        if f.extension().is_some_and(|e| e == "jsonl") {
            out.extend(read_records(BufReader::new(File::open(&f)?))?);
        } else {
            out.push(load_problem(&f)?);
        }
    }
    Ok(out)
}

fn sanitize(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn replay_cmd(state: &Path, episode: &Path, into_state: bool) -> Result<()> {
    let rec = EpisodeRecord::read_json(BufReader::new(File::open(episode).with_context(|| format!("opening {}", episode.display()))?))?;
    let mut fresh = MemoryBank::default();
    let n = replay(&rec, &mut fresh)?;
    let rewards = rec.store_ops.iter().filter(|op| matches!(op, StoreOp::Reward { .. })).count();
    outln!("{}: {n} store writes replayed, {rewards} rewards", rec.problem_id);
    outln!("audit {}", if rec.audit_complete() { "complete" } else { "MISMATCH" });
    for ns in Namespace::ALL {
        let s = fresh.store(ns);
        let dep = s.items().filter(|i| i.deprecated).count();
        outln!("{ns}: {} items, {dep} deprecated", s.len());
    }
    if into_state {
        let mut bank = load_bank(state)?;
        replay(&rec, &mut bank)?;
        bank.persist(&memory_dir(state), LOCK_TIMEOUT)?;
    }
    if !rec.audit_complete() {
        bail!("reward audit does not match the store writes");
    }
    Ok(())
}
