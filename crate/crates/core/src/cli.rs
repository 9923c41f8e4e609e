//! Command-line harness: single-instance subcommands and parameter sweeps.
//!
//! Exit codes: 0 success, 1 failed validation or run error, 2 usage or
//! configuration error.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::graphs::{
    gen_assignment, gen_graph_state, gen_limited_memory, gen_waxman_network, grid_shape, GraphKind, GraphStateSpec,
    TopologyParams,
};
use crate::model::{compute_metrics, DistributionTask, Solution, TaskFile};
use crate::p2pgsd::MemoryStrategyKind;
use crate::protocol::{derive_seed, run_adaptive_timed, Planner, ProtocolConfig, Status};
use crate::stabilizer::{connected_graph_classes, verify_cz_layer_teleport, verify_fusion};
use crate::stp2pgsd::StParams;

/// Environment variable holding the sweep worker count.
pub const WORKERS_ENV: &str = "GSDIST_WORKERS";

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or configuration (exit 2).
    Usage(String),
    /// A check failed or a run errored (exit 1).
    Failure(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failure(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::Json(_) => CliError::Usage(e.to_string()),
            _ => CliError::Failure(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Usage(format!("{}: {e}", path.display()))
}

/// Planner names: `mgst`, `p2p-minimum`, `p2p-standard`, `p2p-maximum`,
/// `st-standard`, `st-factor[:m_f]` (m_f defaults to 0.5).
pub fn parse_planner(s: &str) -> CliResult<Planner> {
    let bad = || CliError::Usage(format!("unknown planner `{s}`"));
    Ok(match s {
        "mgst" => Planner::Mgst,
        "st-standard" => Planner::StP2p { params: StParams::default() },
        "st-factor" => Planner::StP2p { params: StParams::factor(0.5) },
        _ => {
            if let Some(m) = s.strip_prefix("p2p-") {
                Planner::P2p { mem: m.parse::<MemoryStrategyKind>().map_err(|_| bad())? }
            } else if let Some(m) = s.strip_prefix("st-factor:") {
                let m_f: f64 = m.parse().map_err(|_| bad())?;
                if !(m_f >= 0.0) {
                    return Err(bad());
                }
                Planner::StP2p { params: StParams::factor(m_f) }
            } else {
                return Err(bad());
            }
        }
    })
}

/// Graph families: `star`, `tree`, `grid` (near-square), `complete`,
/// `bell_pairs`, `erdos_renyi:p`.
pub fn parse_graph_kind(s: &str, n: usize) -> CliResult<GraphKind> {
    Ok(match s {
        "star" => GraphKind::Star,
        "tree" => GraphKind::PruferTree,
        "complete" => GraphKind::Complete,
        "bell_pairs" => GraphKind::BellPairs,
        "grid" => {
            let (rows, cols) = grid_shape(n);
            GraphKind::Grid { rows, cols }
        }
        _ => match s.strip_prefix("erdos_renyi:").map(str::parse::<f64>) {
            Some(Ok(p)) if (0.0..=1.0).contains(&p) => GraphKind::ErdosRenyi { p },
            _ => return Err(CliError::Usage(format!("unknown graph kind `{s}`"))),
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub experiment_id: String,
    pub seed_base: u64,
    pub samples: usize,
    pub planners: Vec<String>,
    pub graph_kinds: Vec<String>,
    pub sizes: Vec<usize>,
    /// Uniform channel probabilities; empty keeps the generated ones.
    pub probs: Vec<f64>,
    /// One node per vertex at most.
    pub injective: bool,
    pub topology: TopologyParams,
    pub protocol: ProtocolConfig,
    /// Fill `planner_runtime_ms`; off gives byte-identical reruns.
    pub record_runtime: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            experiment_id: "sweep".into(),
            seed_base: 0,
            samples: 10,
            planners: vec!["mgst".into(), "p2p-standard".into(), "st-standard".into()],
            graph_kinds: vec!["star".into()],
            sizes: vec![8],
            probs: Vec::new(),
            injective: false,
            topology: TopologyParams { n_nodes: 16, ..Default::default() },
            protocol: ProtocolConfig::default(),
            record_runtime: true,
        }
    }
}

impl SweepConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let cfg: SweepConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        };
        Ok(cfg)
    }

    pub fn check(&self) -> CliResult<()> {
        let key = |k: &str, m: &str| Err(CliError::Usage(format!("config key `{k}`: {m}")));
        if self.samples == 0 {
            return key("samples", "must be positive");
        }
        if self.planners.is_empty() {
            return key("planners", "empty");
        }
        if self.graph_kinds.is_empty() {
            return key("graph_kinds", "empty");
        }
        if self.sizes.is_empty() {
            return key("sizes", "empty");
        }
        for (i, p) in self.planners.iter().enumerate() {
            parse_planner(p).map_err(|e| CliError::Usage(format!("config key `planners[{i}]`: {e}")))?;
        }
        for (i, g) in self.graph_kinds.iter().enumerate() {
            parse_graph_kind(g, 4).map_err(|e| CliError::Usage(format!("config key `graph_kinds[{i}]`: {e}")))?;
        }
        for (i, &p) in self.probs.iter().enumerate() {
            if !(p > 0.0 && p <= 1.0) {
                return key(&format!("probs[{i}]"), "must lie in (0,1]");
            }
        }
        if self.protocol.shot_cap == 0 {
            return key("protocol.shot_cap", "must be positive");
        }
        self.topology.check().map_err(|e| CliError::Usage(format!("config key `topology`: {e}")))?;
        Ok(())
    }

    /// Cells in output order: (graph kind, size, probability).
    pub fn cells(&self) -> Vec<(String, usize, Option<f64>)> {
        let probs: Vec<Option<f64>> =
            if self.probs.is_empty() { vec![None] } else { self.probs.iter().map(|&p| Some(p)).collect() };
        let mut out = Vec::new();
        for g in &self.graph_kinds {
            for &n in &self.sizes {
                for &p in &probs {
                    out.push((g.clone(), n, p));
                }
            }
        }
        out
    }
}

/// Random instance for one run. Sub-seeds: 1 network, 2 graph state,
/// 3 assignment, 4 memory.
pub fn make_instance(
    topology: &TopologyParams,
    kind: &str,
    n: usize,
    prob: Option<f64>,
    injective: bool,
    seed: u64,
) -> CliResult<DistributionTask> {
    let topo = TopologyParams { seed: derive_seed(seed, &[1]), avg_memory: None, ..topology.clone() };
    let mut net = gen_waxman_network(&topo)?;
    if let Some(p) = prob {
        net = net.with_uniform_prob(p)?;
    }
    let gs = gen_graph_state(&GraphStateSpec { kind: parse_graph_kind(kind, n)?, n_vertices: n, seed: derive_seed(seed, &[2]) })?;
    let asg = gen_assignment(&gs, &net, derive_seed(seed, &[3]), injective)?;
    let mut task = DistributionTask::new(net, gs, asg)?;
    if let Some(avg) = topology.avg_memory {
        let net = gen_limited_memory(&task, avg, false, derive_seed(seed, &[4]))?;
        task = DistributionTask::new(net, task.graph_state, task.assignment)?;
    }
    Ok(task)
}

/// One data row of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub experiment_id: String,
    pub seed: u64,
    pub planner: String,
    pub mem_strategy: String,
    pub metric_variant: String,
    pub graph_kind: String,
    pub n_vertices: usize,
    pub n_nodes: usize,
    pub avg_channel_prob: f64,
    pub shots: u64,
    pub bell_pairs: u64,
    pub cum_memory: u64,
    pub planner_runtime_ms: f64,
    /// `success`, `discarded` or `failed` (the planner raised an error).
    pub status: String,
}

/// Per-cell summary; means and deviations cover successful runs only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub experiment_id: String,
    pub planner: String,
    pub mem_strategy: String,
    pub metric_variant: String,
    pub graph_kind: String,
    pub n_vertices: usize,
    pub n_nodes: usize,
    pub avg_channel_prob: f64,
    pub runs: usize,
    pub successes: usize,
    pub discarded: usize,
    pub discard_fraction: f64,
    pub shots_mean: f64,
    pub shots_std: f64,
    pub bell_pairs_mean: f64,
    pub bell_pairs_std: f64,
    pub cum_memory_mean: f64,
    pub cum_memory_std: f64,
    pub planner_runtime_ms_mean: f64,
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Run every (cell, sample, planner). Rows come back in that order whatever
/// the worker count.
pub fn sweep(cfg: &SweepConfig) -> CliResult<Vec<RunRow>> {
    cfg.check()?;
    let planners: Vec<Planner> = cfg.planners.iter().map(|p| parse_planner(p)).collect::<CliResult<_>>()?;
    let cells = cfg.cells();
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..cfg.samples).map(move |s| (c, s))).collect();
    let per_job = |&(c, s): &(usize, usize)| -> CliResult<Vec<RunRow>> {
        let (kind, n, prob) = &cells[c];
        let seed = derive_seed(cfg.seed_base, &[c as u64, s as u64]);
        let task = make_instance(&cfg.topology, kind, *n, *prob, cfg.injective, seed)?;
        let mut rows = Vec::with_capacity(planners.len());
        for pl in &planners {
            let (metrics, status, ms) = match run_adaptive_timed(&task, *pl, cfg.protocol, seed) {
                Ok((tr, t)) => {
                    let st = match tr.status {
                        Status::Success => "success",
                        _ => "discarded",
                    };
                    (tr.metrics, st, t.as_secs_f64() * 1e3)
                }
                Err(Error::InvalidArgument(m)) => return Err(CliError::Usage(m)),
                Err(_) => (Default::default(), "failed", 0.0),
            };
            rows.push(RunRow {
                experiment_id: cfg.experiment_id.clone(),
                seed,
                planner: pl.name().into(),
                mem_strategy: pl.mem_name().into(),
                metric_variant: pl.variant_name().into(),
                graph_kind: kind.clone(),
                n_vertices: *n,
                n_nodes: task.network.n_nodes(),
                avg_channel_prob: task.network.mean_channel_prob(),
                shots: metrics.shots,
                bell_pairs: metrics.bell_pairs,
                cum_memory: metrics.cum_memory,
                planner_runtime_ms: if cfg.record_runtime { ms } else { 0.0 },
                status: status.into(),
            });
        }
        Ok(rows)
    };
    let workers = match std::env::var(WORKERS_ENV) {
        Ok(v) => v.trim().parse::<usize>().map_err(|_| CliError::Usage(format!("{WORKERS_ENV}: `{v}` is not a worker count")))?,
        Err(_) => 0,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Failure(format!("worker pool: {e}")))?;
    let out: Vec<CliResult<Vec<RunRow>>> = pool.install(|| jobs.par_iter().map(per_job).collect());
    let mut rows = Vec::new();
    for r in out {
        rows.extend(r?);
    }
    Ok(rows)
}

/// Group rows by cell and planner, in first-appearance order. With
/// `by_prob` the channel probability (to 6 decimals) is part of the cell;
/// use it when the sweep fixes uniform probabilities.
pub fn aggregate(rows: &[RunRow], by_prob: bool) -> Vec<AggregateRow> {
    type Key = (String, String, String, String, String, usize, usize, String);
    let mut order: Vec<Key> = Vec::new();
    let mut groups: std::collections::HashMap<Key, Vec<&RunRow>> = std::collections::HashMap::new();
    for r in rows {
        let k: Key = (
            r.experiment_id.clone(),
            r.planner.clone(),
            r.mem_strategy.clone(),
            r.metric_variant.clone(),
            r.graph_kind.clone(),
            r.n_vertices,
            r.n_nodes,
            if by_prob { format!("{:.6}", r.avg_channel_prob) } else { String::new() },
        );
        let g = groups.entry(k.clone()).or_default();
        if g.is_empty() {
            order.push(k);
        }
        g.push(r);
    }
    order
        .into_iter()
        .map(|k| {
            let g = &groups[&k];
            let ok: Vec<&&RunRow> = g.iter().filter(|r| r.status == "success").collect();
            let col = |f: fn(&RunRow) -> f64| mean_std(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (shots_mean, shots_std) = col(|r| r.shots as f64);
            let (bell_pairs_mean, bell_pairs_std) = col(|r| r.bell_pairs as f64);
            let (cum_memory_mean, cum_memory_std) = col(|r| r.cum_memory as f64);
            let (planner_runtime_ms_mean, _) = col(|r| r.planner_runtime_ms);
            let discarded = g.iter().filter(|r| r.status == "discarded").count();
            let first = g[0];
            AggregateRow {
                experiment_id: first.experiment_id.clone(),
                planner: first.planner.clone(),
                mem_strategy: first.mem_strategy.clone(),
                metric_variant: first.metric_variant.clone(),
                graph_kind: first.graph_kind.clone(),
                n_vertices: first.n_vertices,
                n_nodes: first.n_nodes,
                avg_channel_prob: mean_std(&g.iter().map(|r| r.avg_channel_prob).collect::<Vec<_>>()).0,
                runs: g.len(),
                successes: ok.len(),
                discarded,
                discard_fraction: discarded as f64 / g.len() as f64,
                shots_mean,
                shots_std,
                bell_pairs_mean,
                bell_pairs_std,
                cum_memory_mean,
                cum_memory_std,
                planner_runtime_ms_mean,
            }
        })
        .collect()
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Failure(format!("csv: {e}")))?;
    }
    w.flush().map_err(|e| CliError::Failure(format!("csv: {e}")))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(text: &str) -> CliResult<Vec<T>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(|e| CliError::Usage(format!("csv: {e}")))
}

#[derive(Parser, Debug)]
#[command(name = "gsdist", version, about = "Graph-state distribution planner and simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Write a random or fixture task file.
    Generate(GenerateArgs),
    /// Plan a task and write the solution.
    Plan(PlanArgs),
    /// Run the adaptive protocol on a task and write the trace.
    Simulate(SimulateArgs),
    /// Run a parameter sweep and write CSV.
    Sweep(SweepArgs),
    /// Check a solution against a task.
    Validate(ValidateArgs),
    /// Run the stabilizer checks.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// `example-one` or `example-two`; overrides the random options.
    #[arg(long)]
    pub fixture: Option<String>,
    #[arg(long, default_value = "star")]
    pub graph: String,
    #[arg(long, default_value_t = 8)]
    pub vertices: usize,
    #[arg(long, default_value_t = 16)]
    pub nodes: usize,
    /// Uniform channel probability.
    #[arg(long)]
    pub prob: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PlanArgs {
    #[arg(long)]
    pub task: PathBuf,
    #[arg(long, default_value = "p2p-standard")]
    pub planner: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub task: PathBuf,
    #[arg(long, default_value = "p2p-standard")]
    pub planner: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub shot_cap: usize,
    /// Disable single-shot recovery paths.
    #[arg(long)]
    pub no_eum: bool,
    /// Save partial links across shots.
    #[arg(long)]
    pub st_eum: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// TOML, or JSON by extension.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed_base: Option<u64>,
    #[arg(long)]
    pub shot_cap: Option<usize>,
    #[arg(long)]
    pub experiment_id: Option<String>,
    /// Leave planner_runtime_ms at 0.
    #[arg(long)]
    pub no_runtime: bool,
    /// Data rows; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub aggregate: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[arg(long)]
    pub task: PathBuf,
    #[arg(long)]
    pub solution: PathBuf,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Largest connected graph size for the teleport check.
    #[arg(long, default_value_t = 5)]
    pub max_vertices: usize,
}

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn load_task(path: &Path) -> CliResult<DistributionTask> {
    DistributionTask::from_json(&read(path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn emit(path: &Option<PathBuf>, text: &str, out: &mut dyn Write) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| io_err(p, e)),
        None => writeln!(out, "{text}").map_err(|e| CliError::Failure(e.to_string())),
    }
}

fn say(out: &mut dyn Write, line: String) -> CliResult<()> {
    writeln!(out, "{line}").map_err(|e| CliError::Failure(e.to_string()))
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    match cli.cmd {
        Cmd::Generate(a) => {
            let task = match a.fixture.as_deref() {
                Some("example-one") => crate::fixtures::example_one(a.prob.unwrap_or(1.0)),
                Some("example-two") => crate::fixtures::example_two(a.prob.unwrap_or(1.0)),
                Some(f) => return Err(CliError::Usage(format!("unknown fixture `{f}`"))),
                None => {
                    let topo = TopologyParams { n_nodes: a.nodes, ..Default::default() };
                    make_instance(&topo, &a.graph, a.vertices, a.prob, false, a.seed)?
                }
            };
            emit(&a.out, &serde_json::to_string_pretty(&TaskFile::from_task(&task)).expect("task serializes"), out)
        }
        Cmd::Plan(a) => {
            let planner = parse_planner(&a.planner)?;
            let task = load_task(&a.task)?;
            let sol = planner.plan(&task)?;
            let m = compute_metrics(&sol, &task.network)?;
            let text = serde_json::to_string_pretty(&sol).expect("solution serializes");
            match &a.out {
                Some(p) => {
                    std::fs::write(p, text).map_err(|e| io_err(p, e))?;
                    say(out, serde_json::to_string(&m).expect("metrics serialize"))
                }
                None => say(out, text),
            }
        }
        Cmd::Simulate(a) => {
            let planner = parse_planner(&a.planner)?;
            let task = load_task(&a.task)?;
            if a.shot_cap == 0 {
                return Err(CliError::Usage("--shot-cap must be positive".into()));
            }
            let cfg = ProtocolConfig { shot_cap: a.shot_cap, eum: !a.no_eum, st_eum: a.st_eum, ..Default::default() };
            let (tr, _) = run_adaptive_timed(&task, planner, cfg, a.seed)?;
            match &a.out {
                Some(p) => {
                    std::fs::write(p, tr.to_json()).map_err(|e| io_err(p, e))?;
                    say(out, format!("{} {}", tr.status.name(), serde_json::to_string(&tr.metrics).expect("metrics serialize")))
                }
                None => say(out, tr.to_json()),
            }
        }
        Cmd::Sweep(a) => {
            let mut cfg = match &a.config {
                Some(p) => SweepConfig::load(p)?,
                None => SweepConfig::default(),
            };
            if let Some(s) = a.samples {
                cfg.samples = s;
            }
            if let Some(s) = a.seed_base {
                cfg.seed_base = s;
            }
            if let Some(s) = a.shot_cap {
                cfg.protocol.shot_cap = s;
            }
            if let Some(s) = a.experiment_id {
                cfg.experiment_id = s;
            }
            if a.no_runtime {
                cfg.record_runtime = false;
            }
            let rows = sweep(&cfg)?;
            match &a.out {
                Some(p) => {
                    let f = std::fs::File::create(p).map_err(|e| io_err(p, e))?;
                    write_csv(&rows, f)?;
                }
                None => write_csv(&rows, &mut *out)?,
            }
            if let Some(p) = &a.aggregate {
                let f = std::fs::File::create(p).map_err(|e| io_err(p, e))?;
                write_csv(&aggregate(&rows, !cfg.probs.is_empty()), f)?;
            }
            Ok(())
        }
        Cmd::Validate(a) => {
            let task = load_task(&a.task)?;
            let sol: Solution = serde_json::from_str(&read(&a.solution)?)
                .map_err(|e| CliError::Usage(format!("{}: {e}", a.solution.display())))?;
            let v = crate::validate::is_valid_solution(&sol, &task).map_err(|e| CliError::Failure(format!("invalid: {e}")))?;
            if v.valid {
                say(out, "valid".into())
            } else {
                let (x, y) = v.failing.expect("invalid verdict names an edge");
                Err(CliError::Failure(format!("invalid: edge ({x},{y}) has no meeting point")))
            }
        }
        Cmd::Verify(a) => {
            if a.max_vertices > crate::stabilizer::MAX_TELEPORT_VERTICES {
                return Err(CliError::Usage(format!(
                    "--max-vertices at most {}",
                    crate::stabilizer::MAX_TELEPORT_VERTICES
                )));
            }
            let mut ok = true;
            for n in 1..=a.max_vertices {
                let classes = connected_graph_classes(n);
                let mut pass = 0;
                for g in &classes {
                    if verify_cz_layer_teleport(g)? {
                        pass += 1;
                    }
                }
                ok &= pass == classes.len();
                say(out, format!("teleport n={n}: {pass}/{} graph classes", classes.len()))?;
            }
            let star = crate::model::GraphState::on(3, &[(0, 1), (0, 2)])?;
            let f = verify_fusion(&star, &star, 0, 0)?;
            ok &= f;
            say(out, format!("fusion 3-star + 3-star: {}", if f { "ok" } else { "FAILED" }))?;
            if ok {
                Ok(())
            } else {
                Err(CliError::Failure("stabilizer verification failed".into()))
            }
        }
    }
}

/// Parse `args` (program name first), run, and return the exit code.
/// Diagnostics go to stderr.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("gsdist: {e}");
            e.code()
        }
    }
}
