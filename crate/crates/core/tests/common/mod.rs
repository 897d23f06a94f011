//! Shared fixtures: a synthetic concert-tour world shaped like the entity
//! case, the three structural routing queries, a small training set, and
//! helpers that wire scripted backends to an orchestrator under a fake clock.

#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use chrono::NaiveDate;
use serde_json::json;

use webtable_core::agents::{Orchestrator, SubtaskRole, SubtaskSpec, WorkerConfig, WorkerContext};
use webtable_core::backend::{GenerationBackend, Playbook, PlaybookRule, ScriptedBackend, ScriptedResponse};
use webtable_core::clock::Clock;
use webtable_core::skills::{Skill, SkillBank, SkillResolver};
use webtable_core::table::render_table;
use webtable_core::tools::{FixtureEnv, FixtureRecord, MissPolicy, Sandbox, SearchHit, ToolContext, ToolRegistry};
use webtable_core::workboard::{BoardFile, NewSubtask};
use webtable_core::{Query, Table, TableSchema};

pub const CASE_A: &str = "List every concert on Taylor Swift's official tours from Jan 1, 2010 to May 1, 2025. Columns: Date, Concert Name, Host Country, Host City, Host Venue. Each show on its own row, in chronological order, no omissions.";
pub const CASE_B: &str = "List all AMD processors with Zen architecture released from Lisa Su becoming CEO (2014) to 2024 inclusive. Columns: Time, Product Series, Processor Model, Core Architecture, Manufacturing Process (nm), Cores, Threads, Core Frequency (GHz), L2 Cache (MB), L3 Cache (MB), Graphics Model, Number of Graphics Cores. Output \"NA\" if information cannot be found.";
pub const CASE_C: &str = "Compile all large-model-related papers published by the ByteDance Seed team and DeepSeek between 1 January 2023 and 30 June 2025. Search the official websites of both organisations (any paper with Seed-team participation counts). For each paper, include the publication date (yyyy-mm-dd), title, and primary authors. If two records refer to the same paper, the canonical date is the arXiv first-submit timestamp. Output a single Markdown table with columns: Organisation, Publication Date, Paper Title, Authors.";

/// Learned router: first matching feature wins.
pub const ROUTER_FIXTURE: &str = "# Task router\nClassify the query by structure, not topic. Apply the first rule whose feature holds:\n- entity_list -> split-by-entity\n- multiple_sources -> split-by-source\n- multiple_categories -> split-by-category\n- date_range -> split-by-time-period\n- otherwise -> split-by-time-period\n";

pub const ENTITY_SKILL: &str = "# Split-by-entity decomposition\nWhen the query targets a LIST OF NAMED ENTITIES (e.g., tours,\nbrands, athletes), split by entity name, not by time period.\nEach worker gets one entity as their search keyword.\n\nRules learned from past failures:\n- If any entity has >80 expected items, split further by region.\n- Always include a gap-detection worker.\n- If >10% missing after gap-detection, trigger Round 2.\n";
pub const CATEGORY_SKILL: &str = "# Split-by-category decomposition\nWhen the query covers MULTIPLE PRODUCT LINES, split by product line.\n\nRules learned from past failures:\n- If any line has >50 expected items, split further by generation.\n- Assign a dedicated verification worker for the {FIELD} columns.\n";
pub const SOURCE_SKILL: &str = "# Split-by-source decomposition\nRules learned from past failures:\n- One worker per named source; never mix sources within a single worker.\n- For sources with >50 records, split further by year within that source.\n";
pub const TIME_SKILL: &str = "# Split-by-time-period decomposition\nOne worker per contiguous {TIME_RANGE} window.\n\nRules learned from past failures:\n- If any window has >80 expected items, split further by month.\n";

/// Strategy bank holding the learned router and one skill per label.
pub fn strategy_bank(root: &Path) -> Arc<SkillBank> {
    let bank = SkillBank::open(root).unwrap();
    bank.append(Skill::knowledge("task-router", "Maps structural query features to decomposition strategies", ROUTER_FIXTURE))
        .unwrap();
    for (label, body) in [
        ("split-by-entity", ENTITY_SKILL),
        ("split-by-category", CATEGORY_SKILL),
        ("split-by-source", SOURCE_SKILL),
        ("split-by-time-period", TIME_SKILL),
    ] {
        bank.append(Skill::knowledge(format!("decompose-{label}"), format!("Decomposition rules for {label} queries"), body))
            .unwrap();
    }
    Arc::new(bank)
}

pub struct Tour {
    pub name: &'static str,
    pub slug: &'static str,
    pub start: (i32, u32, u32),
    pub shows: usize,
}

pub const TOURS: [Tour; 6] = [
    Tour { name: "Fearless Tour", slug: "fearless", start: (2010, 2, 4), shows: 12 },
    Tour { name: "Speak Now World Tour", slug: "speak-now", start: (2011, 2, 9), shows: 16 },
    Tour { name: "The Red Tour", slug: "red", start: (2013, 3, 13), shows: 18 },
    Tour { name: "The 1989 World Tour", slug: "1989", start: (2015, 5, 5), shows: 14 },
    Tour { name: "Reputation Stadium Tour", slug: "reputation", start: (2018, 5, 8), shows: 15 },
    Tour { name: "The Eras Tour", slug: "eras", start: (2023, 3, 17), shows: 96 },
];

/// The large tour plays its first half in North America.
pub const ERAS_SPLIT: usize = 48;

const NORTH_AMERICA: [(&str, &str, &str); 6] = [
    ("United States", "Glendale", "State Farm Stadium"),
    ("United States", "Arlington", "AT&T Stadium"),
    ("United States", "Tampa", "Raymond James Stadium"),
    ("Mexico", "Mexico City", "Foro Sol"),
    ("Canada", "Toronto", "Rogers Centre"),
    ("Canada", "Vancouver", "BC Place"),
];

const INTERNATIONAL: [(&str, &str, &str); 7] = [
    ("Argentina", "Buenos Aires", "River Plate Stadium"),
    ("Japan", "Tokyo", "Tokyo Dome"),
    ("Australia", "Melbourne", "Melbourne Cricket Ground"),
    ("Singapore", "Singapore", "National Stadium"),
    ("France", "Paris", "Paris La Defense Arena"),
    ("United Kingdom", "London", "Wembley Stadium"),
    ("Germany", "Gelsenkirchen", "Veltins-Arena"),
];

pub type Row = Vec<String>;

pub fn tour_rows(t: &Tour) -> Vec<Row> {
    let start = NaiveDate::from_ymd_opt(t.start.0, t.start.1, t.start.2).unwrap();
    (0..t.shows)
        .map(|i| {
            let date = start + chrono::Duration::days(3 * i as i64);
            let (country, city, venue) = if t.slug == "eras" && i < ERAS_SPLIT {
                NORTH_AMERICA[i % NORTH_AMERICA.len()]
            } else {
                INTERNATIONAL[i % INTERNATIONAL.len()]
            };
            vec![date.format("%Y-%m-%d").to_string(), t.name.into(), country.into(), city.into(), venue.into()]
        })
        .collect()
}

pub fn case_a_query() -> Query {
    Query::new(CASE_A).unwrap()
}

pub fn case_a_schema() -> TableSchema {
    case_a_query().schema().unwrap().unwrap()
}

pub fn table(schema: &TableSchema, rows: &[Row]) -> Table {
    Table::from_rows(schema.clone(), rows.iter().cloned()).unwrap()
}

pub fn case_a_gold() -> Table {
    let rows: Vec<Row> = TOURS.iter().flat_map(tour_rows).collect();
    table(&case_a_schema(), &rows)
}

/// A row no gold table contains.
pub fn bogus_row() -> Row {
    ["2018-12-31", "Reputation Stadium Tour", "United States", "Las Vegas", "Allegiant Stadium"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

fn rule(when: String, responses: Vec<String>) -> PlaybookRule {
    PlaybookRule { when, responses: responses.into_iter().map(ScriptedResponse::Text).collect() }
}

fn tool(name: &str, args: serde_json::Value) -> String {
    json!({"tool": name, "args": args}).to_string()
}

fn respond(text: String) -> String {
    json!({"response": text}).to_string()
}

fn search_query(t: &Tour) -> String {
    format!("Taylor Swift {} concert dates", t.name)
}

fn page_url(t: &Tour) -> String {
    format!("https://tours.example.org/{}", t.slug)
}

/// Search, fetch, then answer with `rows`.
fn extraction_script(t: &Tour, rows: &[Row]) -> Vec<String> {
    vec![
        tool("search", json!({"query": search_query(t)})),
        tool("fetch", json!({"url": page_url(t)})),
        respond(render_table(&table(&case_a_schema(), rows))),
    ]
}

pub struct CaseA {
    pub query: Query,
    pub gold: Table,
    pub records: Vec<FixtureRecord>,
    pub planner: Playbook,
    pub workers: Playbook,
}

/// The entity case. When `lossy`, the playbook withholds rows from two
/// tours (about 11% of gold) and the gap worker flags one of them, so the
/// run has to fall back on Round 2.
pub fn case_a(lossy: bool) -> CaseA {
    let schema = case_a_schema();
    let rows: Vec<Vec<Row>> = TOURS.iter().map(tour_rows).collect();

    let mut records = Vec::new();
    for (t, r) in TOURS.iter().zip(&rows) {
        let hit = SearchHit { title: format!("{} dates", t.name), url: page_url(t), snippet: format!("{} shows", t.shows) };
        records.push(FixtureRecord::search(&search_query(t), std::slice::from_ref(&hit)));
        records.push(FixtureRecord::search(&format!("Taylor Swift {} full show list", t.name), &[hit]));
        records.push(FixtureRecord::page(&page_url(t), &render_table(&table(&schema, r))));
    }

    let oversized = json!({"partitions": [
        {"name": "The Eras Tour", "expected": 96, "target": [90, 100]}
    ]});
    let mut partitions: Vec<serde_json::Value> = TOURS[..5]
        .iter()
        .map(|t| json!({"name": t.name, "expected": t.shows, "target": [t.shows - 2, t.shows + 2]}))
        .collect();
    partitions.push(json!({
        "name": "The Eras Tour", "expected": 96,
        "splits": [{"name": "North America", "target": [44, 52]}, {"name": "International", "target": [44, 52]}]
    }));
    let plan = json!({"partitions": partitions});
    let planner = Playbook {
        rules: vec![
            rule("TASK: route".into(), vec!["split-by-entity".into()]),
            rule("TASK: decompose".into(), vec![oversized.to_string(), plan.to_string()]),
        ],
        default: None,
    };

    let (fearless, speak, red, nineteen, rep, eras) = (&rows[0], &rows[1], &rows[2], &rows[3], &rows[4], &rows[5]);
    let (na, intl) = eras.split_at(ERAS_SPLIT);
    let mut rep_out = rep.clone();
    rep_out.push(bogus_row());
    let mut na_out = na.to_vec();
    na_out.extend_from_slice(&intl[..2]);
    let (red_first, nineteen_first) = if lossy { (&red[..2], &nineteen[..8]) } else { (&red[..], &nineteen[..]) };

    let scripts: Vec<(&str, Vec<String>)> = vec![
        ("t1", extraction_script(&TOURS[0], fearless)),
        ("t2", extraction_script(&TOURS[1], speak)),
        ("t3", extraction_script(&TOURS[2], red_first)),
        ("t4", extraction_script(&TOURS[3], nineteen_first)),
        ("t5", extraction_script(&TOURS[4], &rep_out)),
        ("t6", extraction_script(&TOURS[5], &na_out)),
        ("t7", extraction_script(&TOURS[5], intl)),
    ];
    let mut rules: Vec<PlaybookRule> = scripts.into_iter().map(|(id, s)| rule(format!("WORKER {id}\n"), s)).collect();
    let gap = if lossy {
        format!(
            "Peers look short on one tour.\n\n{}\nMISSING: The Red Tour",
            render_table(&table(&schema, &red[2..4]))
        )
    } else {
        "Every partition matches its expected volume. No rows to add.".to_string()
    };
    rules.push(rule("WORKER t8\n".into(), vec![respond(gap)]));
    let follow = |t: &Tour, rows: &[Row]| {
        vec![
            tool("search", json!({"query": format!("Taylor Swift {} full show list", t.name)})),
            respond(render_table(&table(&schema, rows))),
        ]
    };
    rules.push(rule("WORKER t9\n".into(), follow(&TOURS[2], red)));
    rules.push(rule("WORKER t10\n".into(), follow(&TOURS[3], &nineteen[6..12])));
    CaseA { query: case_a_query(), gold: case_a_gold(), records, planner, workers: Playbook { rules, default: None } }
}

pub fn backend(p: &Playbook) -> Arc<dyn GenerationBackend> {
    Arc::new(ScriptedBackend::new(p.clone()).unwrap())
}

/// Orchestrator for the entity case under a fresh fake clock.
pub fn case_a_orchestrator(case: &CaseA, strategies: Arc<SkillBank>) -> Orchestrator {
    let env = Arc::new(FixtureEnv::new(case.records.clone(), MissPolicy::Error));
    let mut o = Orchestrator::new(strategies, backend(&case.workers), env);
    o.planner = Some(backend(&case.planner));
    o.clock = Clock::fake();
    o
}

/// A single worker on its own one-slot board.
pub fn solo_worker(
    dir: &Path,
    id: &str,
    backend: Arc<dyn GenerationBackend>,
    env: Arc<FixtureEnv>,
    config: WorkerConfig,
    clock: Clock,
) -> WorkerContext {
    let schema = TableSchema::from_names(&["Name", "Value"]).unwrap();
    let board = BoardFile::new(dir.join(format!("{id}.board.md")));
    board.init(&[NewSubtask { id: id.into(), summary: "probe".into() }], "Query: probe").unwrap();
    let registry = ToolRegistry::standard().with_default_timeout(config.tool_timeout).with_observation_cap(config.observation_cap);
    WorkerContext {
        spec: SubtaskSpec {
            id: id.into(),
            instruction: "Collect the probe rows.".into(),
            partition: "probe".into(),
            schema,
            target_volume: [1, 2],
            role: SubtaskRole::Extract,
            round: 1,
        },
        config: config.clone(),
        registry,
        tools: ToolContext {
            worker_id: id.into(),
            sandbox: Sandbox::create(dir.join("sandbox").join(id)).unwrap(),
            board,
            env,
            skills: None,
            clock,
            timeout: config.tool_timeout,
        },
        backend,
        skill: None,
        repair_backend: None,
    }
}

/// Training queries of three structures with small gold tables, and a
/// worker playbook that is lossy on a query's first visit and exact on
/// its second.
pub struct TrainingWorld {
    pub dataset: Vec<(Query, Table)>,
    pub records: Vec<FixtureRecord>,
    pub workers: Playbook,
}

/// (query text, columns, gold rows).
pub type TrainQuery = (&'static str, &'static [&'static str], &'static [&'static [&'static str]]);

pub const TRAIN_QUERIES: [TrainQuery; 3] = [
    (
        "List every album released by the bands Radiohead and Muse from 2000 to 2010. Columns: Band, Album, Year.",
        &["Band", "Album", "Year"],
        &[
            &["Radiohead", "Kid A", "2000"],
            &["Radiohead", "Amnesiac", "2001"],
            &["Radiohead", "Hail to the Thief", "2003"],
            &["Radiohead", "In Rainbows", "2007"],
            &["Muse", "Origin of Symmetry", "2001"],
            &["Muse", "Absolution", "2003"],
        ],
    ),
    (
        "Monthly average temperature recorded in Reykjavik between 2019 and 2020. Columns: Month, Temperature (C).",
        &["Month", "Temperature (C)"],
        &[&["2019-01", "0.1"], &["2019-02", "0.8"], &["2019-03", "1.4"], &["2019-04", "4.9"]],
    ),
    (
        "List all Nintendo handheld devices released between 1989 and 2017. Columns: Device, Release Year, Units Sold (millions).",
        &["Device", "Release Year", "Units Sold (millions)"],
        &[
            &["Game Boy", "1989", "118.69"],
            &["Game Boy Advance", "2001", "81.51"],
            &["Nintendo DS", "2004", "154.02"],
            &["Nintendo 3DS", "2011", "75.94"],
            &["Nintendo Switch", "2017", "141.32"],
        ],
    ),
];

pub fn training_world() -> TrainingWorld {
    let mut dataset = Vec::new();
    let mut records = Vec::new();
    let mut rules = Vec::new();
    for (k, (text, cols, gold)) in TRAIN_QUERIES.iter().enumerate() {
        let query = Query::new(*text).unwrap();
        let schema = TableSchema::from_names(cols).unwrap();
        let rows: Vec<Row> = gold.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect();
        let gold_table = table(&schema, &rows);
        let search = format!("reference list {k}");
        let url = format!("https://archive.example.net/list-{k}");
        records.push(FixtureRecord::search(
            &search,
            &[SearchHit { title: format!("List {k}"), url: url.clone(), snippet: "reference".into() }],
        ));
        // First visit drops the last row and garbles one cell.
        let mut lossy = rows[..rows.len() - 1].to_vec();
        lossy[0][cols.len() - 1] = "unknown".into();
        let first_words: String = text.split_whitespace().take(4).collect::<Vec<_>>().join(" ");
        rules.push(rule(
            format!("Instruction:\n{}", regex::escape(&first_words)),
            vec![
                tool("search", json!({"query": search})),
                respond(render_table(&table(&schema, &lossy))),
                tool("search", json!({"query": search})),
                respond(render_table(&gold_table)),
            ],
        ));
        dataset.push((query, gold_table));
    }
    TrainingWorld { dataset, records, workers: Playbook { rules, default: None } }
}

/// Training orchestrator: no planner (one subtask per query), a worker
/// skill bank under `worker_root`, fake clock.
pub fn training_orchestrator(
    world: &TrainingWorld,
    strategies: Arc<SkillBank>,
    workers: Arc<SkillBank>,
) -> Orchestrator {
    let env = Arc::new(FixtureEnv::new(world.records.clone(), MissPolicy::Error));
    let mut o = Orchestrator::new(strategies, backend(&world.workers), env);
    o.skills = Some(SkillResolver::new(workers));
    o.clock = Clock::fake();
    o
}
