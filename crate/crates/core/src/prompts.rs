//! Prompt templates. Placeholders are `{name}` and are filled by [`fill`].

use std::sync::LazyLock;

use regex::Regex;

pub const CREATE_SKILL: &str = include_str!("../prompts/create_skill.txt");
pub const REPAIR_SKILL: &str = include_str!("../prompts/repair_skill.txt");
pub const EVOLVE_SKILL: &str = include_str!("../prompts/evolve_skill.txt");
pub const ROUTE: &str = include_str!("../prompts/route.txt");
pub const DECOMPOSE: &str = include_str!("../prompts/decompose.txt");
pub const WORKER: &str = include_str!("../prompts/worker.txt");
pub const EXTRACT_INSTRUCTION: &str = include_str!("../prompts/extract_instruction.txt");
pub const GAP_INSTRUCTION: &str = include_str!("../prompts/gap_instruction.txt");
pub const VERIFY_INSTRUCTION: &str = include_str!("../prompts/verify_instruction.txt");
pub const FOLLOWUP_INSTRUCTION: &str = include_str!("../prompts/followup_instruction.txt");
pub const REFLECT_STRATEGY: &str = include_str!("../prompts/reflect_strategy.txt");
pub const REFLECT_ROUTER: &str = include_str!("../prompts/reflect_router.txt");
pub const CLUSTER: &str = include_str!("../prompts/cluster.txt");
pub const DIGEST: &str = include_str!("../prompts/digest.txt");

/// Replaces each `{key}` with its value in one pass, so substituted text is
/// never rescanned. Unknown placeholders are left as-is.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    static KEY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{([a-z_]+)\}").unwrap());
    KEY.replace_all(template, |c: &regex::Captures<'_>| {
        vars.iter().find(|(k, _)| *k == &c[1]).map_or_else(|| c[0].to_string(), |(_, v)| v.to_string())
    })
    .into_owned()
}

pub(crate) fn feedback_block(previous_error: Option<&str>) -> String {
    match previous_error {
        Some(e) => format!("\nYour previous attempt was rejected: {e}\n"),
        None => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fills_known_keys_only() {
        assert_eq!(fill("a {x} {y}", &[("x", "1")]), "a 1 {y}");
        assert_eq!(fill("{a} {b}", &[("a", "{b}"), ("b", "2")]), "{b} 2");
    }
}
