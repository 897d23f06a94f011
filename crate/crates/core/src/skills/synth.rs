//! Backend-driven skill creation, error-driven repair and compatible evolution.

use std::sync::Arc;

use super::bank::SkillBank;
use super::{strip_fence, ArgSpec, Skill, SkillError, SkillKind};
use crate::backend::{generate_bounded, GenerationBackend, GenerationRequest};
use crate::clock::Clock;
use crate::prompts::{self, feedback_block, fill};

#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    /// Attempts per operation, including the first.
    pub attempts: u32,
    /// Kind used when resolution falls through to creation.
    pub default_kind: SkillKind,
    pub created_by: String,
    /// Name of the script language, shown to the backend.
    pub language: String,
    pub clock: Clock,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            attempts: 3,
            default_kind: SkillKind::Knowledge,
            created_by: "creator".into(),
            language: "Python".into(),
            clock: Clock::System,
        }
    }
}

fn ask(backend: &Arc<dyn GenerationBackend>, prompt: String, clock: &Clock) -> Result<String, SkillError> {
    Ok(generate_bounded(backend, GenerationRequest::new(prompt).with_clock(clock.clone()))?)
}

/// Asks `backend` for a new skill, validates it and appends it as v1.
/// A name already taken in the bank gets a numeric suffix.
pub fn create_skill(
    bank: &SkillBank,
    spec: &str,
    kind: SkillKind,
    backend: &Arc<dyn GenerationBackend>,
    opts: &SynthesisOptions,
) -> Result<Skill, SkillError> {
    let extra_keys = match kind {
        SkillKind::Function => "entry: <command line>\nargs: <arguments>\n",
        SkillKind::Knowledge => "",
    };
    let mut last_invalid: Option<String> = None;
    let mut last_other = String::from("no attempts made");
    for _ in 0..opts.attempts.max(1) {
        let prompt = fill(
            prompts::CREATE_SKILL,
            &[
                ("spec", spec),
                ("kind", &kind.to_string()),
                ("extra_keys", extra_keys),
                ("language", &opts.language),
                ("feedback", &feedback_block(last_invalid.as_deref())),
            ],
        );
        let reply = match ask(backend, prompt, &opts.clock) {
            Ok(r) => r,
            Err(e) => {
                last_other = e.to_string();
                continue;
            }
        };
        let mut skill = match Skill::parse(strip_fence(&reply)) {
            Ok(s) => s,
            Err(e) => {
                last_invalid = Some(e.to_string());
                continue;
            }
        };
        if skill.kind != kind {
            last_invalid = Some(format!("expected a {kind} skill, got {}", skill.kind));
            continue;
        }
        skill.version = 1;
        skill.created_by = opts.created_by.clone();
        if let Err(e) = bank.validate(&skill) {
            last_invalid = Some(e.to_string());
            continue;
        }
        skill.name = free_name(bank, &skill.name);
        return bank.append(skill);
    }
    Err(match last_invalid {
        Some(m) => SkillError::SyntaxInvalid(m),
        None => SkillError::SynthesisFailed(last_other),
    })
}

fn free_name(bank: &SkillBank, name: &str) -> String {
    if bank.get(name).is_none() {
        return name.to_string();
    }
    (2..).map(|i| format!("{name}-{i}")).find(|n| bank.get(n).is_none()).expect("unbounded range")
}

/// Feeds the current body and `trace` to `backend` and appends the corrected
/// body as the next version. The original is untouched on failure.
pub fn repair_skill(
    bank: &SkillBank,
    name: &str,
    trace: &str,
    backend: &Arc<dyn GenerationBackend>,
    opts: &SynthesisOptions,
) -> Result<Skill, SkillError> {
    let current = bank.get(name).ok_or_else(|| SkillError::UnknownSkill(name.to_string()))?;
    if trace.trim().is_empty() {
        return Err(SkillError::RepairFailed(format!("{name}: empty error trace")));
    }
    let mut feedback: Option<String> = None;
    for _ in 0..opts.attempts.max(1) {
        let prompt = fill(
            prompts::REPAIR_SKILL,
            &[
                ("name", name),
                ("body", &current.body),
                ("trace", trace),
                ("feedback", &feedback_block(feedback.as_deref())),
            ],
        );
        let reply = match ask(backend, prompt, &opts.clock) {
            Ok(r) => r,
            Err(e) => {
                feedback = Some(e.to_string());
                continue;
            }
        };
        let reply = strip_fence(&reply);
        // Accept a whole document too, but only its body: identity stays fixed.
        let body = match Skill::parse(reply) {
            Ok(doc) => doc.body,
            Err(_) => reply.to_string(),
        };
        let candidate = Skill { body, version: current.version + 1, created_by: "repair".into(), ..current.clone() };
        if candidate.body.trim().is_empty() {
            feedback = Some("empty body".into());
            continue;
        }
        match bank.validate(&candidate) {
            Ok(()) => return bank.append(candidate),
            Err(e) => feedback = Some(e.to_string()),
        }
    }
    log::warn!("repair of {name} gave up: {}", feedback.unwrap_or_default());
    Err(SkillError::RepairFailed(name.to_string()))
}

/// Why `new` cannot replace `old` for existing callers, if it cannot.
pub fn compatibility_problem(old: &Skill, new: &Skill) -> Option<String> {
    if old.kind != new.kind {
        return Some(format!("kind changed from {} to {}", old.kind, new.kind));
    }
    if old.kind != SkillKind::Function {
        return None;
    }
    if old.entry().map(str::trim) != new.entry().map(str::trim) {
        return Some(format!("entry changed from {:?} to {:?}", old.entry(), new.entry()));
    }
    let new_args = new.manifest();
    let find = |n: &str| new_args.iter().find(|a: &&ArgSpec| a.name == n);
    let old_args = old.manifest();
    for a in &old_args {
        match find(&a.name) {
            None => return Some(format!("argument {:?} dropped", a.name)),
            Some(b) if b.required && !a.required => return Some(format!("argument {:?} became required", a.name)),
            _ => {}
        }
    }
    for b in &new_args {
        if b.required && !old_args.iter().any(|a| a.name == b.name) {
            return Some(format!("new argument {:?} is required", b.name));
        }
    }
    None
}

/// Appends an extended version of `name` that existing callers can still use.
pub fn evolve_skill(
    bank: &SkillBank,
    name: &str,
    request: &str,
    backend: &Arc<dyn GenerationBackend>,
    opts: &SynthesisOptions,
) -> Result<Skill, SkillError> {
    let current = bank.get(name).ok_or_else(|| SkillError::UnknownSkill(name.to_string()))?;
    let mut last: Option<SkillError> = None;
    for _ in 0..opts.attempts.max(1) {
        let feedback = last.as_ref().map(ToString::to_string);
        let prompt = fill(
            prompts::EVOLVE_SKILL,
            &[
                ("name", name),
                ("request", request),
                ("document", &current.render()),
                ("feedback", &feedback_block(feedback.as_deref())),
            ],
        );
        let reply = match ask(backend, prompt, &opts.clock) {
            Ok(r) => r,
            Err(e) => {
                last = Some(SkillError::SynthesisFailed(e.to_string()));
                continue;
            }
        };
        let mut next = match Skill::parse(strip_fence(&reply)) {
            Ok(s) => s,
            Err(e) => {
                last = Some(e);
                continue;
            }
        };
        next.name = current.name.clone();
        next.version = current.version + 1;
        next.created_by = "evolve".into();
        if let Some(reason) = compatibility_problem(&current, &next) {
            last = Some(SkillError::CompatibilityBroken { name: name.to_string(), reason });
            continue;
        }
        if let Err(e) = bank.validate(&next) {
            last = Some(e);
            continue;
        }
        return bank.append(next);
    }
    Err(last.unwrap_or_else(|| SkillError::SynthesisFailed("no attempts made".into())))
}
