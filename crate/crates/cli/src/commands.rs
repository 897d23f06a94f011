use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use webtable_core::agents::{AgentError, BackendJudge, Orchestrator};
use webtable_core::backend::GenerationBackend;
use webtable_core::evolution::{train_dataset, DatasetItem, TrainConfig};
use webtable_core::scoring::{score, ComparatorConfig};
use webtable_core::skills::{BankSnapshot, SkillBank, SkillResolver};
use webtable_core::table::{align, find_tables, parse_table, render_table};
use webtable_core::{Query, Table, TableSchema, Trajectory};

use crate::config::{EnvMode, RunConfig};
use crate::error::CliError;

fn query_from(text: &str, columns: Option<Vec<String>>) -> Result<Query, CliError> {
    let q = match columns {
        Some(cols) => Query::with_columns(text, "en", Some(cols)),
        None => Query::new(text),
    };
    q.map_err(|e| CliError::Input(e.to_string()))
}

fn split_columns(s: &Option<String>) -> Option<Vec<String>> {
    s.as_ref().map(|s| s.split(',').map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect())
}

fn comparator(cfg: &RunConfig, judge: Option<&Arc<dyn GenerationBackend>>) -> ComparatorConfig {
    let mut c = cfg.comparator.clone();
    c.judge = judge.map(|b| Arc::new(BackendJudge::new(b.clone(), cfg.clock())) as _);
    c
}

fn ensure_empty_dir(dir: &Path, what: &str) -> Result<(), CliError> {
    if dir.exists() && std::fs::read_dir(dir)?.next().is_some() {
        return Err(CliError::Config(format!("{what} {} is not empty", dir.display())));
    }
    Ok(())
}

/// What a run directory needs to be re-scored and replayed later.
#[derive(Serialize)]
struct Invocation<'a> {
    command: &'a str,
    query: &'a Query,
    seed: u64,
    fake_clock: bool,
    strategy_bank_hash: String,
    worker_bank_hash: String,
    config: &'a RunConfig,
}

pub struct InferArgs {
    pub query: String,
    pub columns: Option<String>,
    pub run_dir: PathBuf,
    pub require_frozen: bool,
}

pub fn infer(cfg: &RunConfig, args: &InferArgs) -> Result<Table, CliError> {
    let query = query_from(&args.query, split_columns(&args.columns))?;
    if !cfg.banks.is_dir() {
        return Err(CliError::Config(format!("banks directory {} does not exist", cfg.banks.display())));
    }
    ensure_empty_dir(&args.run_dir, "run directory")?;
    let strategies = Arc::new(SkillBank::open_read_only(cfg.strategies_dir())?);
    let workers = Arc::new(SkillBank::open_read_only(cfg.workers_dir())?);
    if (args.require_frozen || cfg.skills.require_frozen) && !(strategies.is_frozen() && workers.is_frozen()) {
        return Err(CliError::Config("banks are not frozen; train first or drop --require-frozen".into()));
    }
    let backends = cfg.backends()?;
    let worker = backends.get("worker").ok_or_else(|| CliError::Config("no worker backend configured".into()))?;
    std::fs::create_dir_all(&args.run_dir)?;
    let env = cfg.environment(&args.run_dir)?;

    let mut o = Orchestrator::new(strategies.clone(), worker.clone(), env);
    o.config = cfg.orchestrator.clone();
    o.worker = cfg.worker.clone();
    o.skills = Some(SkillResolver::new(workers.clone()));
    o.planner = backends.get("orchestrator").cloned();
    o.clock = cfg.clock();

    let outcome = o.run(&query, &args.run_dir);
    let invocation = Invocation {
        command: "infer",
        query: &query,
        seed: cfg.seed,
        fake_clock: o.clock.is_fake(),
        strategy_bank_hash: strategies.bank_hash()?,
        worker_bank_hash: workers.bank_hash()?,
        config: cfg,
    };
    std::fs::write(args.run_dir.join("invocation.json"), serde_json::to_vec_pretty(&invocation).expect("serialisable"))?;
    let outcome = outcome?;
    match outcome.table() {
        Some(t) if t.row_count() > 0 => Ok(t.clone()),
        _ => Err(AgentError::EmptyResult.into()),
    }
}

/// One line of a training dataset. `gold` is inline Markdown; `gold_file`
/// is a path relative to the dataset file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetLine {
    query: String,
    #[serde(default)]
    columns: Option<Vec<String>>,
    #[serde(default)]
    gold: Option<String>,
    #[serde(default)]
    gold_file: Option<PathBuf>,
}

/// Parses a gold table against the requested columns, or its own header.
pub fn read_table(markdown: &str, columns: Option<&[String]>) -> Result<Table, String> {
    match columns {
        Some(cols) => {
            let schema = TableSchema::from_names(cols).map_err(|e| e.to_string())?;
            parse_table(markdown, &schema).map_err(|e| e.to_string())
        }
        None => {
            let raw = find_tables(markdown).into_iter().next().ok_or("no table found")?;
            let schema = TableSchema::from_names(&raw.header).map_err(|e| e.to_string())?;
            align(&raw, &schema).map(|p| p.table).map_err(|e| e.to_string())
        }
    }
}

pub fn load_dataset(path: &Path) -> Result<Vec<DatasetItem>, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut items = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| CliError::Config(format!("{}:{}: {m}", path.display(), i + 1));
        let entry: DatasetLine = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let query = query_from(&entry.query, entry.columns.clone()).map_err(|e| bad(e.to_string()))?;
        let markdown = match (&entry.gold, &entry.gold_file) {
            (Some(g), None) => Ok(g.clone()),
            (None, Some(f)) => std::fs::read_to_string(base.join(f)).map_err(|e| format!("{}: {e}", f.display())),
            _ => return Err(bad("exactly one of gold and gold_file is required".into())),
        };
        let cols = query.requested_columns.clone();
        let gold = markdown.and_then(|m| read_table(&m, cols.as_deref()));
        if let Err(e) = &gold {
            log::warn!("dataset line {}: unreadable gold table: {e}", i + 1);
        }
        items.push(DatasetItem { query, gold });
    }
    Ok(items)
}

pub struct TrainArgs {
    pub dataset: PathBuf,
    pub episodes: Option<usize>,
    pub out: PathBuf,
    pub no_freeze: bool,
}

#[derive(Serialize)]
pub struct TrainReport {
    pub episodes: usize,
    pub utilities: Vec<f64>,
    pub failed: Vec<usize>,
    pub strategy_bank_hash: String,
    pub worker_bank_hash: Option<String>,
    pub frozen: bool,
}

pub fn train(cfg: &RunConfig, args: &TrainArgs) -> Result<TrainReport, CliError> {
    let dataset = load_dataset(&args.dataset)?;
    let backends = cfg.backends()?;
    let worker = backends.get("worker").ok_or_else(|| CliError::Config("no worker backend configured".into()))?;
    std::fs::create_dir_all(&args.out)?;
    let env = cfg.environment(&args.out)?;
    let strategies = Arc::new(SkillBank::open(cfg.strategies_dir())?);
    let workers = Arc::new(SkillBank::open(cfg.workers_dir())?);

    let mut resolver = SkillResolver::new(workers);
    let mut o = Orchestrator::new(strategies, worker.clone(), env);
    if cfg.skills.runtime_synthesis {
        resolver = resolver.with_creator(worker.clone());
        o.repair_backend = Some(worker.clone());
    }
    o.config = cfg.orchestrator.clone();
    o.worker = cfg.worker.clone();
    o.skills = Some(resolver);
    o.planner = backends.get("orchestrator").cloned();
    o.clock = cfg.clock();

    let mut tc = TrainConfig::new(&args.out);
    tc.episodes = args.episodes;
    tc.low_accuracy_threshold = cfg.training.low_accuracy_threshold;
    tc.reflect_attempts = cfg.training.reflect_attempts;
    tc.freeze = cfg.training.freeze && !args.no_freeze;
    tc.comparator = comparator(cfg, backends.get("judge"));
    tc.digest_backend = backends.get("digest").cloned();

    let summary = train_dataset(&dataset, &o, backends.get("reflect"), &tc)?;
    std::fs::write(args.out.join("summary.json"), serde_json::to_vec_pretty(&summary).expect("serialisable"))?;
    Ok(TrainReport {
        episodes: summary.episodes.len(),
        utilities: summary.utilities(),
        failed: summary.episodes.iter().filter(|e| e.error.is_some()).map(|e| e.episode).collect(),
        strategy_bank_hash: summary.strategy_bank_hash.clone(),
        worker_bank_hash: summary.worker_bank_hash.clone(),
        frozen: tc.freeze,
    })
}

pub struct ScoreArgs {
    pub pred: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub run: Option<PathBuf>,
    pub columns: Option<String>,
}

pub fn score_cmd(cfg: &RunConfig, args: &ScoreArgs) -> Result<webtable_core::scoring::ScoreReport, CliError> {
    let (pred, gold) = match (&args.run, &args.pred, &args.gold) {
        (Some(run), None, None) => (run.join("output.md"), run.join("gold.md")),
        (None, Some(p), Some(g)) => (p.clone(), g.clone()),
        _ => return Err(CliError::Config("give either --run or both --pred and --gold".into())),
    };
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())));
    let columns = split_columns(&args.columns);
    let gold = read_table(&read(&gold)?, columns.as_deref()).map_err(|e| CliError::Input(format!("gold: {e}")))?;
    let names: Vec<String> = gold.schema().names().iter().map(|s| s.to_string()).collect();
    let pred_text = read(&pred)?;
    // An answer without a readable table scores as empty rather than failing.
    let pred = read_table(&pred_text, Some(&names)).unwrap_or_else(|e| {
        log::warn!("prediction: {e}; scoring as empty");
        Table::empty(gold.schema().clone())
    });
    let judge = cfg.backends()?.get("judge").cloned();
    Ok(score(&pred, &gold, &comparator(cfg, judge.as_ref())))
}

pub enum SkillsCmd {
    List,
    Show { name: String, version: Option<u32> },
    Diff { before: PathBuf, after: PathBuf },
    Snapshot,
}

fn snapshot_of(path: &Path) -> Result<BankSnapshot, CliError> {
    if path.is_dir() {
        Ok(SkillBank::open_read_only(path)?.snapshot()?)
    } else {
        let bytes = std::fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }
}

pub fn skills(bank_dir: &Path, cmd: &SkillsCmd, out: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        SkillsCmd::Diff { before, after } => {
            for id in snapshot_of(before)?.added_in(&snapshot_of(after)?) {
                writeln!(out, "{}\t{}", id.name, id.version)?;
            }
            return Ok(());
        }
        _ if !bank_dir.is_dir() => {
            return Err(CliError::Config(format!("bank {} does not exist", bank_dir.display())));
        }
        _ => {}
    }
    let bank = SkillBank::open_read_only(bank_dir)?;
    match cmd {
        SkillsCmd::List => {
            for s in bank.list() {
                writeln!(out, "{}\t{}\tv{}\t{}", s.name, s.kind, s.version, s.description)?;
            }
        }
        SkillsCmd::Show { name, version } => {
            let skill = match version {
                Some(v) => bank.get_version(name, *v)?,
                None => bank.get(name).ok_or_else(|| webtable_core::skills::SkillError::UnknownSkill(name.clone()))?,
            };
            out.write_all(skill.body.as_bytes())?;
            if !skill.body.ends_with('\n') {
                writeln!(out)?;
            }
        }
        SkillsCmd::Snapshot => {
            writeln!(out, "{}", serde_json::to_string_pretty(&bank.snapshot()?).expect("serialisable"))?;
        }
        SkillsCmd::Diff { .. } => unreachable!(),
    }
    Ok(())
}

/// Prints each worker's steps in order, one line per step.
pub fn replay(run_dir: &Path, worker: Option<&str>, out: &mut dyn Write) -> Result<(), CliError> {
    let traj_dir = run_dir.join("traj");
    if !traj_dir.is_dir() {
        return Err(CliError::Config(format!("{} has no trajectories", run_dir.display())));
    }
    let mut ids: Vec<String> = std::fs::read_dir(&traj_dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str()?.strip_suffix(".jsonl").map(String::from))
        .filter(|id| worker.is_none_or(|w| w == id))
        .collect();
    ids.sort_by_key(|id| natural_key(id));
    if ids.is_empty() {
        return Err(CliError::Input(format!("no trajectory for worker {}", worker.unwrap_or("*"))));
    }
    for id in ids {
        let t = Trajectory::load(&id, &traj_dir.join(format!("{id}.jsonl")))?;
        writeln!(out, "== {id} ({} steps)", t.steps.len())?;
        for s in &t.steps {
            let what = match (&s.tool, &s.args) {
                (Some(tool), Some(args)) => format!("{tool} {args}"),
                (Some(tool), None) => tool.clone(),
                _ => "response".to_string(),
            };
            let digest = s.obs_digest.as_deref().map(|d| &d[..d.len().min(12)]).unwrap_or("-");
            writeln!(out, "{:>3} t={}ms +{}ms {what} obs={digest}", s.index, s.ts, s.latency_ms)?;
        }
        for a in &t.anomalies {
            writeln!(out, "    anomaly {:?} at step {}", a.kind, a.step)?;
        }
    }
    Ok(())
}

/// Orders `t2` before `t10`.
fn natural_key(id: &str) -> (String, u64) {
    let digits = id.trim_start_matches(|c: char| !c.is_ascii_digit());
    let prefix = &id[..id.len() - digits.len()];
    (prefix.to_string(), digits.parse().unwrap_or(u64::MAX))
}

pub fn mode_label(cfg: &RunConfig) -> &'static str {
    match cfg.env.mode {
        EnvMode::Fixture => "fixture",
        EnvMode::Live => "live",
    }
}

pub fn print_table(t: &Table, out: &mut dyn Write) -> std::io::Result<()> {
    out.write_all(render_table(t).as_bytes())
}
