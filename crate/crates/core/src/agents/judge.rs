//! Free-text cell equivalence decided by a generation backend.

use std::sync::Arc;

use crate::backend::{generate_bounded, GenerationBackend, GenerationRequest};
use crate::clock::Clock;
use crate::scoring::SemanticJudge;

pub struct BackendJudge {
    backend: Arc<dyn GenerationBackend>,
    clock: Clock,
}

impl BackendJudge {
    pub fn new(backend: Arc<dyn GenerationBackend>, clock: Clock) -> Self {
        BackendJudge { backend, clock }
    }
}

const JUDGE_PROMPT: &str = "TASK: judge\nDo these two table cells state the same fact? Answer yes or no.\nA: ";

impl SemanticJudge for BackendJudge {
    fn judge(&self, pred: &str, gold: &str) -> Option<bool> {
        let prompt = format!("{JUDGE_PROMPT}{pred}\nB: {gold}\n");
        let reply = generate_bounded(&self.backend, GenerationRequest::new(prompt).with_clock(self.clock.clone())).ok()?;
        let word = reply.trim().split(|c: char| !c.is_alphabetic()).next()?.to_lowercase();
        match word.as_str() {
            "yes" => Some(true),
            "no" => Some(false),
            _ => None,
        }
    }
}
