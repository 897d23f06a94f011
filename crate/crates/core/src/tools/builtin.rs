//! Built-in tool handlers.

use std::io::Read;
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde_json::Value;

use super::{Tool, ToolContext, ToolError};
use crate::skills::Skill;
use crate::workboard::WriteMode;

pub(super) fn all() -> Vec<Arc<dyn Tool>> {
    vec![
        Arc::new(Bash),
        Arc::new(StrReplace),
        Arc::new(FileCreate),
        Arc::new(View),
        Arc::new(ReadSkill),
        Arc::new(RouteSkill),
        Arc::new(ReadWorkboard),
        Arc::new(EditWorkboard),
        Arc::new(Search),
        Arc::new(Fetch),
    ]
}

fn str_arg<'a>(args: &'a Value, key: &str) -> Result<&'a str, ToolError> {
    args.get(key).and_then(Value::as_str).ok_or_else(|| ToolError::InvalidArgs(format!("missing string argument {key:?}")))
}

/// Proxy settings that point nowhere: child processes get no route out
/// unless they bypass proxies, and all sanctioned web access goes through
/// the search/fetch tools.
const NO_NETWORK_ENV: [(&str, &str); 6] = [
    ("http_proxy", "http://127.0.0.1:9"),
    ("https_proxy", "http://127.0.0.1:9"),
    ("HTTP_PROXY", "http://127.0.0.1:9"),
    ("HTTPS_PROXY", "http://127.0.0.1:9"),
    ("ALL_PROXY", "http://127.0.0.1:9"),
    ("no_proxy", ""),
];

/// Runs `program args` in `dir` with a scrubbed environment, killing it once
/// `timeout` of wall time has passed.
pub fn run_sandboxed(program: &str, args: &[String], dir: &Path, timeout: Duration) -> Result<String, ToolError> {
    let mut cmd = Command::new(program);
    cmd.args(args).current_dir(dir).env_clear().env("HOME", dir);
    if let Ok(path) = std::env::var("PATH") {
        cmd.env("PATH", path);
    }
    cmd.envs(NO_NETWORK_ENV);
    let mut child = cmd.stdin(Stdio::null()).stdout(Stdio::piped()).stderr(Stdio::piped()).spawn()?;
    let mut stdout = child.stdout.take().expect("piped");
    let mut stderr = child.stderr.take().expect("piped");
    let out_reader = std::thread::spawn(move || {
        let mut s = Vec::new();
        let _ = stdout.read_to_end(&mut s);
        s
    });
    let err_reader = std::thread::spawn(move || {
        let mut s = Vec::new();
        let _ = stderr.read_to_end(&mut s);
        s
    });
    let start = Instant::now();
    let status = loop {
        if let Some(st) = child.try_wait()? {
            break st;
        }
        if start.elapsed() >= timeout {
            let _ = child.kill();
            let _ = child.wait();
            return Err(ToolError::Timeout);
        }
        std::thread::sleep(Duration::from_millis(5));
    };
    let out = String::from_utf8_lossy(&out_reader.join().unwrap_or_default()).into_owned();
    let err = String::from_utf8_lossy(&err_reader.join().unwrap_or_default()).into_owned();
    let mut text = out;
    if !err.is_empty() {
        if !text.is_empty() && !text.ends_with('\n') {
            text.push('\n');
        }
        text.push_str(&err);
    }
    if !status.success() {
        text.push_str(&format!("\n[exit status {}]", status.code().map_or("signal".into(), |c| c.to_string())));
    }
    Ok(text)
}

struct Bash;

impl Tool for Bash {
    fn name(&self) -> &str {
        "bash"
    }
    fn description(&self) -> &str {
        "run a shell command in your sandbox (no network); args {command}"
    }
    fn call(&self, args: &Value, ctx: &ToolContext) -> Result<String, ToolError> {
        let command = str_arg(args, "command")?;
        run_sandboxed("sh", &["-c".into(), command.into()], ctx.sandbox.root(), ctx.timeout)
    }
}

struct StrReplace;

impl Tool for StrReplace {
    fn name(&self) -> &str {
        "str_replace"
    }
    fn description(&self) -> &str {
        "replace one exact occurrence of text in a file; args {path, old, new}"
    }
    fn call(&self, args: &Value, ctx: &ToolContext) -> Result<String, ToolError> {
        let path = ctx.sandbox.resolve(str_arg(args, "path")?)?;
        let (old, new) = (str_arg(args, "old")?, str_arg(args, "new")?);
        if old.is_empty() {
            return Err(ToolError::InvalidArgs("old text is empty".into()));
        }
        let text = std::fs::read_to_string(&path)?;
        match text.matches(old).count() {
            0 => Err(ToolError::Failed("old text not found; file unchanged".into())),
            1 => {
                std::fs::write(&path, text.replacen(old, new, 1))?;
                Ok("replaced 1 occurrence".into())
            }
            n => Err(ToolError::Failed(format!("old text occurs {n} times; make it unique"))),
        }
    }
}

struct FileCreate;

impl Tool for FileCreate {
    fn name(&self) -> &str {
        "file_create"
    }
    fn description(&self) -> &str {
        "write a file in your sandbox; args {path, content}"
    }
    fn call(&self, args: &Value, ctx: &ToolContext) -> Result<String, ToolError> {
        let path = ctx.sandbox.resolve(str_arg(args, "path")?)?;
        let content = str_arg(args, "content")?;
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, content)?;
        Ok(format!("wrote {} bytes", content.len()))
    }
}

struct View;

impl Tool for View {
    fn name(&self) -> &str {
        "view"
    }
    fn description(&self) -> &str {
        "show a file verbatim or list a directory; args {path}"
    }
    fn call(&self, args: &Value, ctx: &ToolContext) -> Result<String, ToolError> {
        let req = args.get("path").and_then(Value::as_str).unwrap_or(".");
        let path = ctx.sandbox.resolve(req)?;
        if path.is_dir() {
            let mut names: Vec<String> = std::fs::read_dir(&path)?
                .filter_map(|e| e.ok())
                .map(|e| {
                    let n = e.file_name().to_string_lossy().into_owned();
                    if e.path().is_dir() { format!("{n}/") } else { n }
                })
                .collect();
            names.sort();
            Ok(names.join("\n"))
        } else {
            Ok(std::fs::read_to_string(&path)?)
        }
    }
}

struct ReadSkill;

impl Tool for ReadSkill {
    fn name(&self) -> &str {
        "read_skill"
    }
    fn description(&self) -> &str {
        "read a skill document by name; args {name}"
    }
    fn call(&self, args: &Value, ctx: &ToolContext) -> Result<String, ToolError> {
        let name = str_arg(args, "name")?;
        let res = ctx.skills.as_ref().ok_or_else(|| ToolError::Failed("no skill bank configured".into()))?;
        let found = res.local.find_exact(name).or_else(|| res.remote.as_ref().and_then(|r| r.find_exact(name)));
        found.map(|s| s.body).ok_or_else(|| ToolError::Failed(format!("unknown skill {name:?}")))
    }
}

struct RouteSkill;

impl Tool for RouteSkill {
    fn name(&self) -> &str {
        "route_skill"
    }
    fn description(&self) -> &str {
        "find the best skill for a capability; args {query}"
    }
    fn call(&self, args: &Value, ctx: &ToolContext) -> Result<String, ToolError> {
        let query = str_arg(args, "query")?;
        let res = ctx.skills.as_ref().ok_or_else(|| ToolError::Failed("no skill bank configured".into()))?;
        let r = res.resolve(query).map_err(|e| ToolError::Failed(e.to_string()))?;
        Ok(format!("{}: {}", r.skill.name, r.skill.description))
    }
}

struct ReadWorkboard;

impl Tool for ReadWorkboard {
    fn name(&self) -> &str {
        "read_workboard"
    }
    fn description(&self) -> &str {
        "read the shared workboard; no args"
    }
    fn call(&self, _args: &Value, ctx: &ToolContext) -> Result<String, ToolError> {
        ctx.board.read().map(|b| b.render()).map_err(|e| ToolError::Failed(e.to_string()))
    }
}

struct EditWorkboard;

impl Tool for EditWorkboard {
    fn name(&self) -> &str {
        "edit_workboard"
    }
    fn description(&self) -> &str {
        "write to your own result slot; args {content, mode: append|replace}"
    }
    fn call(&self, args: &Value, ctx: &ToolContext) -> Result<String, ToolError> {
        let content = str_arg(args, "content")?;
        let mode = match args.get("mode").and_then(Value::as_str).unwrap_or("append") {
            "append" => WriteMode::Append,
            "replace" => WriteMode::Replace,
            other => return Err(ToolError::InvalidArgs(format!("mode {other:?}"))),
        };
        ctx.board.edit_slot(&ctx.worker_id, content, mode).map_err(|e| ToolError::Failed(e.to_string()))?;
        Ok("slot updated".into())
    }
}

struct Search;

impl Tool for Search {
    fn name(&self) -> &str {
        "search"
    }
    fn description(&self) -> &str {
        "web search; args {query}"
    }
    fn call(&self, args: &Value, ctx: &ToolContext) -> Result<String, ToolError> {
        let hits = ctx.env.search(str_arg(args, "query")?, &ctx.clock)?;
        if hits.is_empty() {
            return Ok("no results".into());
        }
        Ok(hits
            .iter()
            .enumerate()
            .map(|(i, h)| format!("{}. {}\n   {}\n   {}", i + 1, h.title, h.url, h.snippet))
            .collect::<Vec<_>>()
            .join("\n"))
    }
}

struct Fetch;

impl Tool for Fetch {
    fn name(&self) -> &str {
        "fetch"
    }
    fn description(&self) -> &str {
        "fetch a page as text; args {url}"
    }
    fn call(&self, args: &Value, ctx: &ToolContext) -> Result<String, ToolError> {
        Ok(ctx.env.fetch(str_arg(args, "url")?, &ctx.clock)?)
    }
}

/// A function skill exposed as a tool. Its body is written into the sandbox
/// and its entry command run there with `--arg value` pairs.
pub struct SkillTool {
    skill: Skill,
}

impl SkillTool {
    pub fn new(skill: Skill) -> Self {
        SkillTool { skill }
    }
}

impl Tool for SkillTool {
    fn name(&self) -> &str {
        &self.skill.name
    }
    fn description(&self) -> &str {
        &self.skill.description
    }
    fn call(&self, args: &Value, ctx: &ToolContext) -> Result<String, ToolError> {
        let entry: Vec<String> = self.skill.entry().unwrap_or_default().split_whitespace().map(String::from).collect();
        let (program, rest) = entry.split_first().ok_or_else(|| ToolError::Failed("skill has no entry".into()))?;
        let dir = ctx.sandbox.resolve(&format!(".skills/{}", self.skill.name))?;
        std::fs::create_dir_all(&dir)?;
        let script = rest.iter().rev().find(|t| !t.starts_with('-') && t.contains('.')).cloned();
        let script = script.unwrap_or_else(|| "skill_main".into());
        if script.contains('/') || script.contains("..") {
            return Err(ToolError::SandboxViolation(script));
        }
        std::fs::write(dir.join(&script), &self.skill.body)?;
        let mut argv: Vec<String> = rest.to_vec();
        for spec in self.skill.manifest() {
            match args.get(&spec.name) {
                Some(v) => {
                    argv.push(format!("--{}", spec.name));
                    argv.push(v.as_str().map_or_else(|| v.to_string(), String::from));
                }
                None if spec.required => {
                    return Err(ToolError::InvalidArgs(format!("missing required argument {:?}", spec.name)));
                }
                None => {}
            }
        }
        run_sandboxed(program, &argv, &dir, ctx.timeout)
    }
}
