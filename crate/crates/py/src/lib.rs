//! Python bindings: scoring, rank fusion, skill banks, the workboard, and
//! fixture-mode inference and training.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyKeyError, PyValueError};
use pyo3::prelude::*;
use webtable_core::agents::Orchestrator;
use webtable_core::backend::{GenerationBackend, ScriptedBackend};
use webtable_core::clock::Clock;
use webtable_core::evolution::{train_dataset, DatasetItem, TrainConfig};
use webtable_core::scoring::ComparatorConfig;
use webtable_core::skills::{Skill, SkillResolver};
use webtable_core::table::{align, find_tables, render_table};
use webtable_core::tools::{FixtureEnv, MissPolicy};
use webtable_core::workboard::{self as wb, Actor, NewSubtask, Status, WriteMode};
use webtable_core::{Query, Table, TableSchema};

create_exception!(webtable, WebtableError, PyException);

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    WebtableError::new_err(e.to_string())
}

fn to_py(py: Python<'_>, value: &impl serde::Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn read_table(markdown: &str, columns: Option<&[String]>) -> PyResult<Table> {
    let raw = find_tables(markdown).into_iter().next().ok_or_else(|| PyValueError::new_err("no Markdown table found"))?;
    let schema = match columns {
        Some(c) => TableSchema::from_names(c),
        None => TableSchema::from_names(&raw.header),
    }
    .map_err(|e| PyValueError::new_err(e.to_string()))?;
    align(&raw, &schema).map(|p| p.table).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Parses the first pipe table into `{"columns": [...], "rows": [[...]]}`.
#[pyfunction]
#[pyo3(signature = (markdown, columns=None))]
fn parse_table(py: Python<'_>, markdown: &str, columns: Option<Vec<String>>) -> PyResult<Py<PyAny>> {
    let t = read_table(markdown, columns.as_deref())?;
    let value = serde_json::json!({"columns": t.schema().names(), "rows": t.raw_rows()});
    to_py(py, &value)
}

/// Scores a predicted Markdown table against gold; columns follow the gold header.
#[pyfunction]
#[pyo3(signature = (pred, gold, rel_tol=None))]
fn score(py: Python<'_>, pred: &str, gold: &str, rel_tol: Option<f64>) -> PyResult<Py<PyAny>> {
    let gold = read_table(gold, None)?;
    let names: Vec<String> = gold.schema().names().iter().map(|s| s.to_string()).collect();
    let pred = read_table(pred, Some(&names)).unwrap_or_else(|_| Table::empty(gold.schema().clone()));
    let mut cfg = ComparatorConfig::default();
    if let Some(t) = rel_tol {
        cfg.rel_tol = t;
    }
    to_py(py, &webtable_core::scoring::score(&pred, &gold, &cfg))
}

/// Reciprocal rank fusion of ranked id lists.
#[pyfunction]
#[pyo3(signature = (lists, k=60.0))]
fn rrf_fuse(lists: Vec<Vec<String>>, k: f64) -> Vec<(String, f64)> {
    webtable_core::skills::rrf::rrf_fuse(&lists, k)
}

#[pyclass(name = "SkillBank", module = "webtable")]
struct PySkillBank {
    inner: Arc<webtable_core::skills::SkillBank>,
}

fn skill_dict(py: Python<'_>, s: &Skill) -> PyResult<Py<PyAny>> {
    to_py(py, s)
}

#[pymethods]
impl PySkillBank {
    #[new]
    #[pyo3(signature = (path, read_only=false))]
    fn new(path: PathBuf, read_only: bool) -> PyResult<Self> {
        let bank = if read_only {
            webtable_core::skills::SkillBank::open_read_only(path)
        } else {
            webtable_core::skills::SkillBank::open(path)
        };
        Ok(PySkillBank { inner: Arc::new(bank.map_err(err)?) })
    }

    fn names(&self) -> Vec<String> {
        self.inner.names()
    }

    #[pyo3(signature = (name, version=None))]
    fn get(&self, py: Python<'_>, name: &str, version: Option<u32>) -> PyResult<Py<PyAny>> {
        let skill = match version {
            Some(v) => self.inner.get_version(name, v).map_err(|e| PyKeyError::new_err(e.to_string()))?,
            None => self.inner.get(name).ok_or_else(|| PyKeyError::new_err(name.to_string()))?,
        };
        skill_dict(py, &skill)
    }

    fn versions(&self, name: &str) -> Vec<u32> {
        self.inner.versions(name)
    }

    /// Appends a knowledge skill as the next version and returns that version.
    fn append_knowledge(&self, py: Python<'_>, name: String, description: String, body: String) -> PyResult<u32> {
        let bank = self.inner.clone();
        let version = bank.latest_version(&name).map_or(1, |v| v + 1);
        py.detach(move || bank.append(Skill::knowledge(name, description, body).with_version(version).created_by("python")))
            .map(|s| s.version)
            .map_err(err)
    }

    /// Names ranked by the hybrid lexical and vector search.
    #[pyo3(signature = (query, top_n=5))]
    fn search(&self, query: &str, top_n: usize) -> Vec<(String, f64)> {
        let lexical: Vec<String> = self.inner.search_bm25(query, top_n).into_iter().map(|(n, _)| n).collect();
        let vector: Vec<String> = self.inner.search_vector(query, top_n).into_iter().map(|(n, _)| n).collect();
        let mut fused = webtable_core::skills::rrf::rrf_fuse(&[lexical, vector], self.inner.config().rrf_k);
        fused.truncate(top_n);
        fused
    }

    fn freeze(&self) -> PyResult<()> {
        self.inner.freeze().map_err(err)
    }

    #[getter]
    fn frozen(&self) -> bool {
        self.inner.is_frozen()
    }

    fn snapshot(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.snapshot().map_err(err)?)
    }

    fn bank_hash(&self) -> PyResult<String> {
        self.inner.bank_hash().map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("SkillBank({:?}, skills={})", self.inner.root(), self.inner.len())
    }
}

fn parse_status(s: &str) -> PyResult<Status> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| PyValueError::new_err(format!("unknown status {s:?} (pending|running|done|failed)")))
}

/// A parsed workboard snapshot.
#[pyclass(name = "Workboard", module = "webtable")]
struct PyWorkboard {
    inner: wb::Workboard,
}

#[pymethods]
impl PyWorkboard {
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        wb::Workboard::parse(text).map(|inner| PyWorkboard { inner }).map_err(err)
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        wb::read_workboard(&path).map(|inner| PyWorkboard { inner }).map_err(err)
    }

    fn render(&self) -> String {
        self.inner.render()
    }

    fn slot(&self, id: &str) -> Option<String> {
        self.inner.slot(id).map(String::from)
    }

    fn slots(&self) -> Vec<(String, String)> {
        self.inner.slots().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    fn status(&self, id: &str) -> Option<String> {
        self.inner.status(id).map(|s| format!("{s:?}").to_lowercase())
    }

    fn is_converged(&self) -> bool {
        self.inner.is_converged()
    }
}

/// Creates a board file with one slot per `(id, summary)`.
#[pyfunction]
fn init_board(path: PathBuf, subtasks: Vec<(String, String)>, context: &str) -> PyResult<PyWorkboard> {
    let subs: Vec<NewSubtask> = subtasks.into_iter().map(|(id, summary)| NewSubtask { id, summary }).collect();
    wb::init_workboard(&subs, context, &path).map(|inner| PyWorkboard { inner }).map_err(err)
}

/// Writes into the writer's own slot under the board lock.
#[pyfunction]
#[pyo3(signature = (path, writer, payload, replace=false))]
fn edit_slot(py: Python<'_>, path: PathBuf, writer: String, payload: String, replace: bool) -> PyResult<PyWorkboard> {
    let mode = if replace { WriteMode::Replace } else { WriteMode::Append };
    py.detach(move || wb::edit_slot(&path, &writer, &payload, mode)).map(|inner| PyWorkboard { inner }).map_err(err)
}

/// Sets a slot's status; the actor is the orchestrator unless `worker` is given.
#[pyfunction]
#[pyo3(signature = (path, id, status, worker=None))]
fn set_status(path: PathBuf, id: &str, status: &str, worker: Option<String>) -> PyResult<PyWorkboard> {
    let actor = worker.map(Actor::Worker).unwrap_or(Actor::Orchestrator);
    wb::set_status(&path, id, parse_status(status)?, &actor).map(|inner| PyWorkboard { inner }).map_err(err)
}

fn fixture_orchestrator(
    banks: &std::path::Path,
    corpus: &std::path::Path,
    playbook: &std::path::Path,
    read_only: bool,
) -> PyResult<Orchestrator> {
    let open = |p: PathBuf| {
        if read_only {
            webtable_core::skills::SkillBank::open_read_only(p)
        } else {
            webtable_core::skills::SkillBank::open(p)
        }
    };
    let strategies = Arc::new(open(banks.join("strategies")).map_err(err)?);
    let workers = Arc::new(open(banks.join("workers")).map_err(err)?);
    let backend: Arc<dyn GenerationBackend> = Arc::new(ScriptedBackend::load(playbook).map_err(err)?);
    let env = Arc::new(FixtureEnv::load(corpus, MissPolicy::Error).map_err(err)?);
    let mut o = Orchestrator::new(strategies, backend.clone(), env);
    o.skills = Some(SkillResolver::new(workers));
    o.planner = Some(backend);
    o.clock = Clock::fake();
    Ok(o)
}

/// Answers one query against a fixture corpus with a scripted playbook and
/// read-only banks. Returns the aggregated Markdown table.
#[pyfunction]
#[pyo3(signature = (query, banks, corpus, playbook, run_dir, max_workers=10, max_steps=20))]
#[allow(clippy::too_many_arguments)]
fn infer(
    py: Python<'_>,
    query: &str,
    banks: PathBuf,
    corpus: PathBuf,
    playbook: PathBuf,
    run_dir: PathBuf,
    max_workers: usize,
    max_steps: u32,
) -> PyResult<String> {
    let query = Query::new(query).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let mut o = fixture_orchestrator(&banks, &corpus, &playbook, true)?;
    o.config.max_workers = max_workers;
    o.worker.max_steps = max_steps;
    let outcome = py.detach(move || o.run(&query, &run_dir)).map_err(err)?;
    outcome.table().map(render_table).ok_or_else(|| err("every worker slot is empty or unparseable"))
}

/// Runs training episodes over `(query, gold_markdown)` pairs and returns
/// the per-episode utilities. Banks are frozen at the end unless told not to.
#[pyfunction]
#[pyo3(signature = (dataset, banks, corpus, playbook, out_dir, episodes=None, freeze=true))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    dataset: Vec<(String, String)>,
    banks: PathBuf,
    corpus: PathBuf,
    playbook: PathBuf,
    out_dir: PathBuf,
    episodes: Option<usize>,
    freeze: bool,
) -> PyResult<Vec<f64>> {
    let mut items = Vec::new();
    for (q, gold) in dataset {
        let query = Query::new(q).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let gold = read_table(&gold, query.requested_columns.as_deref()).map_err(|e| e.to_string());
        items.push(DatasetItem { query, gold });
    }
    let o = fixture_orchestrator(&banks, &corpus, &playbook, false)?;
    let mut cfg = TrainConfig::new(out_dir);
    cfg.episodes = episodes;
    cfg.freeze = freeze;
    let summary = py.detach(move || train_dataset(&items, &o, None, &cfg)).map_err(err)?;
    Ok(summary.utilities())
}

#[pymodule]
fn webtable(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("WebtableError", m.py().get_type::<WebtableError>())?;
    m.add("NA", webtable_core::NA)?;
    m.add_class::<PySkillBank>()?;
    m.add_class::<PyWorkboard>()?;
    m.add_function(wrap_pyfunction!(parse_table, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(rrf_fuse, m)?)?;
    m.add_function(wrap_pyfunction!(init_board, m)?)?;
    m.add_function(wrap_pyfunction!(edit_slot, m)?)?;
    m.add_function(wrap_pyfunction!(set_status, m)?)?;
    m.add_function(wrap_pyfunction!(infer, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
