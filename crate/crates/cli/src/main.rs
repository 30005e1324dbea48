use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use commlink::codesign::{nesting_report, CodesignConfig, CodesignProblem, CodesignResult, LambdaGrid};
use commlink::commgraph::{base_graph, comm_delays, graph_delay, propagation_delays, DelayMode, EdgeSet, Graph};
use commlink::error::Error;
use commlink::firmath::{truncation_horizon, FirTM};
use commlink::qispace::qi_delay_check;
use commlink::report::{fmt_f64, write_enumeration_csv, write_sweep_csv, write_trace_csv};
use commlink::solvers::{comm_link_norm, CommNormOptions, GroupSpec};
use commlink::sysmodel::{gen_chain_plant, load_plant, save_plant, Partition, PlantModel, DEFAULT_COUPLING};
use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::Value;

const MANIFEST: &str = "manifest.json";
const MAX_EXAMPLE_EDGES: usize = 6;

#[derive(Parser)]
#[command(name = "commlink", version, about = "Co-design of distributed H2 controllers and their communication graphs")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Regularized design at one λ or over a λ grid, followed by polish.
    Codesign(CodesignArgs),
    /// Polish every graph of the design set and check nesting.
    Enumerate(EnumerateArgs),
    /// Delay-based QI certificate for a graph.
    QiCheck(QiCheckArgs),
    /// Communication link norm of an FIR parameter.
    CommNorm(CommNormArgs),
    /// Write a seeded chain example.
    GenExample(GenExampleArgs),
}

#[derive(Args)]
struct CodesignArgs {
    #[arg(long)]
    plant: Option<PathBuf>,
    #[arg(long)]
    edges: Option<PathBuf>,
    /// Base graph; defaults to the block support of A.
    #[arg(long)]
    base: Option<PathBuf>,
    #[arg(long, conflicts_with = "sweep")]
    lambda: Option<f64>,
    #[arg(long)]
    sweep: bool,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Configuration or a manifest from a previous run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write one solver trace CSV per λ.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct EnumerateArgs {
    #[arg(long)]
    plant: Option<PathBuf>,
    #[arg(long)]
    edges: Option<PathBuf>,
    #[arg(long)]
    base: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct QiCheckArgs {
    #[arg(long)]
    plant: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for the run manifest.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CommNormArgs {
    #[arg(long)]
    fir: PathBuf,
    #[arg(long)]
    plant: PathBuf,
    /// Base graph.
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    edges: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenExampleArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_COUPLING)]
    couple: f64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

/// Record of a run: enough to reproduce its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct RunManifest {
    command: String,
    inputs: BTreeMap<String, PathBuf>,
    config: CodesignConfig,
    #[serde(default)]
    args: BTreeMap<String, Value>,
    version: String,
    seed: u64,
}

impl RunManifest {
    fn new(command: &str, config: &CodesignConfig) -> Self {
        RunManifest {
            command: command.into(),
            inputs: BTreeMap::new(),
            config: config.clone(),
            args: BTreeMap::new(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: config.seed,
        }
    }

    fn input(&mut self, key: &str, path: &Path) {
        let p = fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf());
        self.inputs.insert(key.into(), p);
    }
}

/// Failure carrying its exit status.
#[derive(Debug)]
struct Exit(u8, anyhow::Error);

impl From<anyhow::Error> for Exit {
    fn from(e: anyhow::Error) -> Self {
        let code = match e.downcast_ref::<Error>() {
            Some(Error::NotConverged { .. } | Error::CgBreakdown { .. }) => 3,
            _ => 2,
        };
        Exit(code, e)
    }
}

impl From<Error> for Exit {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

type CmdResult = std::result::Result<u8, Exit>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    let res = match cli.cmd {
        Command::Codesign(a) => cmd_codesign(a),
        Command::Enumerate(a) => cmd_enumerate(a),
        Command::QiCheck(a) => cmd_qi_check(a),
        Command::CommNorm(a) => cmd_comm_norm(a),
        Command::GenExample(a) => cmd_gen_example(a),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(Exit(code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("COMMLINK_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| anyhow!("COMMLINK_THREADS must be a positive integer, got `{v}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn read_json(path: &Path) -> anyhow::Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{} is not valid JSON", path.display()))
}

fn read_plant(path: &Path) -> anyhow::Result<(PlantModel, Partition)> {
    load_plant(&read_json(path)?).with_context(|| format!("invalid plant {}", path.display()))
}

fn read_graph(path: &Path) -> anyhow::Result<Graph> {
    serde_json::from_value(read_json(path)?).with_context(|| format!("invalid graph {}", path.display()))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EdgesDoc {
    Wrapped { edges: Vec<(usize, usize)> },
    Bare(Vec<(usize, usize)>),
}

fn read_edges(path: &Path) -> anyhow::Result<Vec<(usize, usize)>> {
    let doc: EdgesDoc =
        serde_json::from_value(read_json(path)?).with_context(|| format!("invalid edge list {}", path.display()))?;
    Ok(match doc {
        EdgesDoc::Wrapped { edges } | EdgesDoc::Bare(edges) => edges,
    })
}

/// Load `--config`, which may be a bare configuration or a run manifest.
fn read_config(path: Option<&Path>) -> anyhow::Result<(CodesignConfig, Option<RunManifest>)> {
    let Some(path) = path else {
        return Ok((CodesignConfig::default(), None));
    };
    let doc = read_json(path)?;
    if doc.get("command").is_some() {
        let m: RunManifest =
            serde_json::from_value(doc).with_context(|| format!("invalid manifest {}", path.display()))?;
        Ok((m.config.clone(), Some(m)))
    } else {
        let cfg = serde_json::from_value(doc).with_context(|| format!("invalid config {}", path.display()))?;
        Ok((cfg, None))
    }
}

fn resolve_input(given: Option<PathBuf>, manifest: Option<&RunManifest>, key: &str) -> anyhow::Result<Option<PathBuf>> {
    Ok(given.or_else(|| manifest.and_then(|m| m.inputs.get(key).cloned())))
}

fn require(path: Option<PathBuf>, flag: &str) -> anyhow::Result<PathBuf> {
    path.ok_or_else(|| anyhow!("--{flag} is required"))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let name = path.file_name().ok_or_else(|| anyhow!("bad output path {}", path.display()))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes).with_context(|| format!("cannot write {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("cannot move output into {}", path.display()))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

struct Instance {
    plant: PlantModel,
    part: Partition,
    base: Graph,
    edges: EdgeSet,
}

fn load_instance(
    manifest: &mut RunManifest,
    plant: Option<PathBuf>,
    edges: Option<PathBuf>,
    base: Option<PathBuf>,
    replay: Option<&RunManifest>,
) -> anyhow::Result<Instance> {
    let plant_path = require(resolve_input(plant, replay, "plant")?, "plant")?;
    let edges_path = require(resolve_input(edges, replay, "edges")?, "edges")?;
    let base_path = resolve_input(base, replay, "base")?;
    let (p, part) = read_plant(&plant_path)?;
    manifest.input("plant", &plant_path);
    let base = match &base_path {
        Some(path) => {
            manifest.input("base", path);
            read_graph(path)?
        }
        None => base_graph(&p, &part, manifest.config.tol_zero)?,
    };
    let edges = EdgeSet::new(read_edges(&edges_path)?, &base)?;
    manifest.input("edges", &edges_path);
    Ok(Instance {
        plant: p,
        part,
        base,
        edges,
    })
}

fn cmd_codesign(a: CodesignArgs) -> CmdResult {
    let (mut cfg, replay) = read_config(a.config.as_deref())?;
    let replay_arg = |k: &str| replay.as_ref().and_then(|m| m.args.get(k).cloned());
    let lambda = a.lambda.or_else(|| replay_arg("lambda").and_then(|v| v.as_f64()));
    let sweep = a.sweep || (a.lambda.is_none() && replay_arg("sweep").and_then(|v| v.as_bool()) == Some(true));
    if lambda.is_none() && !sweep {
        return Err(anyhow!("one of --lambda or --sweep is required").into());
    }
    if let Some(l) = lambda {
        cfg.lambda_grid = LambdaGrid::Values(vec![l]);
    }
    let mut manifest = RunManifest::new("codesign", &cfg);
    let inst = load_instance(&mut manifest, a.plant, a.edges, a.base, replay.as_ref())?;
    match lambda {
        Some(l) => manifest.args.insert("lambda".into(), serde_json::json!(l)),
        None => manifest.args.insert("sweep".into(), Value::Bool(true)),
    };
    manifest.args.insert("trace".into(), Value::Bool(a.trace));
    let prob = CodesignProblem::new(&inst.plant, &inst.part, &inst.base, &inst.edges, &cfg)?;
    let grid = prob.lambda_grid()?;
    let solve = |l: f64| if a.trace { prob.solve_traced(l) } else { prob.solve(l) };
    let entries: Vec<_> = {
        use rayon::prelude::*;
        grid.par_iter().map(|&l| (l, solve(l))).collect()
    };

    let mut results: Vec<CodesignResult> = Vec::new();
    let mut code = 0;
    for (k, (l, res)) in entries.into_iter().enumerate() {
        match res {
            Ok(r) => {
                write_json(&a.out.join("controllers").join(format!("R_{k:03}.json")), &r.polished)?;
                write_json(&a.out.join("graphs").join(format!("gamma_{k:03}.json")), &r.gamma_des)?;
                if a.trace {
                    let mut buf = Vec::new();
                    write_trace_csv(&mut buf, &r.trace)?;
                    write_atomic(&a.out.join("traces").join(format!("trace_{k:03}.csv")), &buf)?;
                }
                if !r.converged || !r.polish_converged {
                    warn!("solve at lambda = {l:e} did not reach its tolerance");
                    code = 3;
                }
                if !r.implementable {
                    warn!("controller at lambda = {l:e} is not implementable on its designed graph");
                }
                results.push(r);
            }
            Err(e) => {
                let exit = Exit::from(e);
                eprintln!("error at lambda = {}: {:#}", fmt_f64(l), exit.1);
                code = code.max(exit.0);
            }
        }
    }
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, &results)?;
    write_atomic(&a.out.join("sweep.csv"), &buf)?;
    write_json(&a.out.join(MANIFEST), &manifest)?;
    for r in &results {
        println!(
            "lambda {}  links {}  nu {}",
            fmt_f64(r.lambda),
            r.selected_edges.len(),
            fmt_f64(r.nu_polished)
        );
    }
    Ok(code)
}

fn cmd_enumerate(a: EnumerateArgs) -> CmdResult {
    let (cfg, replay) = read_config(a.config.as_deref())?;
    let mut manifest = RunManifest::new("enumerate", &cfg);
    let inst = load_instance(&mut manifest, a.plant, a.edges, a.base, replay.as_ref())?;
    let prob = CodesignProblem::new(&inst.plant, &inst.part, &inst.base, &inst.edges, &cfg)?;
    let rows = prob.enumerate()?;
    let mut buf = Vec::new();
    write_enumeration_csv(&mut buf, &rows)?;
    write_atomic(&a.out.join("enumerate.csv"), &buf)?;
    let rep = nesting_report(&rows);
    write_atomic(&a.out.join("nesting_report.txt"), rep.to_string().as_bytes())?;
    write_json(&a.out.join(MANIFEST), &manifest)?;
    print!("{rep}");
    Ok(0)
}

fn cmd_qi_check(a: QiCheckArgs) -> CmdResult {
    let (cfg, _) = read_config(a.config.as_deref())?;
    let mut manifest = RunManifest::new("qi-check", &cfg);
    let (p, part) = read_plant(&a.plant)?;
    let g = read_graph(&a.graph)?;
    manifest.input("plant", &a.plant);
    manifest.input("graph", &a.graph);
    if let Some(out) = &a.out {
        write_json(&out.join(MANIFEST), &manifest)?;
    }
    if g.n() != part.n {
        return Err(anyhow!("graph has {} nodes, plant has {} subsystems", g.n(), part.n).into());
    }
    part.check(&p)?;
    let base = base_graph(&p, &part, cfg.tol_zero)?;
    let missing: Vec<String> = (0..g.n())
        .flat_map(|i| (0..g.n()).map(move |j| (i, j)))
        .filter(|&(i, j)| base.has_edge(i, j) && !g.has_edge(i, j))
        .map(|(i, j)| format!("{i}<-{j}"))
        .collect();
    let (t_max, _) = truncation_horizon(&p, cfg.n_param, cfg.tol_tail)?;
    let prop = match propagation_delays(&p, &part, DelayMode::Structural, cfg.tol_zero, 0) {
        Ok((dm, _)) => dm,
        Err(_) => propagation_delays(&p, &part, DelayMode::Numerical, cfg.tol_zero, t_max)?.0,
    };
    println!("communication delays:\n{}", comm_delays(&g));
    println!("propagation delays:\n{prop}");
    if !missing.is_empty() {
        println!("graph does not contain the base graph; missing links: {}", missing.join(", "));
        println!("verdict: fail");
        return Ok(1);
    }
    let Some(d) = graph_delay(&g) else {
        println!("infinite graph delay");
        println!("verdict: fail");
        return Ok(1);
    };
    println!("graph delay d = {d}");
    let cert = qi_delay_check(&comm_delays(&g), &prop)?;
    for v in &cert.violations {
        println!("violation: {v}");
    }
    if cert.ok {
        println!("verdict: pass");
        Ok(0)
    } else {
        println!("verdict: fail");
        Ok(1)
    }
}

fn cmd_comm_norm(a: CommNormArgs) -> CmdResult {
    let cfg = CodesignConfig::default();
    let mut manifest = RunManifest::new("comm-norm", &cfg);
    let (p, part) = read_plant(&a.plant)?;
    let base = read_graph(&a.graph)?;
    let edges = EdgeSet::new(read_edges(&a.edges)?, &base)?;
    let x: FirTM = serde_json::from_value(read_json(&a.fir)?).with_context(|| format!("invalid FIR {}", a.fir.display()))?;
    for (k, path) in [("plant", &a.plant), ("graph", &a.graph), ("edges", &a.edges), ("fir", &a.fir)] {
        manifest.input(k, path);
    }
    part.check(&p)?;
    let d = graph_delay(&base).ok_or(Error::InfiniteDelay)?;
    let spec = GroupSpec::from_graph(&base, &edges, &part, d.max(x.t_max()))?;
    let opts = CommNormOptions {
        tol_zero: cfg.tol_zero,
        ..CommNormOptions::default()
    };
    let v = comm_link_norm(&x, &spec, &opts)?;
    if let Some(out) = &a.out {
        write_json(&out.join(MANIFEST), &manifest)?;
    }
    if v.is_finite() {
        println!("{}", fmt_f64(v));
    } else {
        println!("infinite");
    }
    Ok(0)
}

/// Candidate links between blocks at chain distance two, at most six.
fn example_edges(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| i.abs_diff(j) == 2)
        .take(MAX_EXAMPLE_EDGES)
        .collect()
}

fn cmd_gen_example(a: GenExampleArgs) -> CmdResult {
    if a.n < 2 {
        return Err(anyhow!("n ≥ 2 required, got {}", a.n).into());
    }
    let cfg = CodesignConfig {
        seed: a.seed,
        ..CodesignConfig::default()
    };
    let (p, part) = gen_chain_plant(a.n, a.couple, a.seed)?;
    let base = base_graph(&p, &part, cfg.tol_zero)?;
    let edges = EdgeSet::new(example_edges(a.n), &base)?;
    write_json(&a.out.join("plant.json"), &save_plant(&p, &part))?;
    write_json(&a.out.join("base.json"), &base)?;
    write_json(&a.out.join("edges.json"), &edges)?;
    let mut manifest = RunManifest::new("gen-example", &cfg);
    manifest.args.insert("n".into(), serde_json::json!(a.n));
    manifest.args.insert("couple".into(), serde_json::json!(a.couple));
    write_json(&a.out.join(MANIFEST), &manifest)?;
    println!("wrote example with n = {} and {} candidate links", a.n, edges.len());
    Ok(0)
}
