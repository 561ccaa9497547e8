//! The buffer between the base model and the user.
//!
//! Each violated rule tolerates a deviation of up to `1 − ε`. Beyond that
//! band a highly rigid rule (ε ≥ `rigid_cutoff`) forces a regeneration while
//! the regeneration budget lasts; a softer rule only forces one when its
//! descriptor is urgent and a seeded coin with probability
//! `forced_feedback_probability` comes up. Everything else is accepted, with
//! implicit advice when any rule was violated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{EngineConfig, RuleSet};
use crate::extract::FeatureVector;
use crate::observer::{synthesize_forced, synthesize_implicit, ClauseBook, FeedbackDirective};
use crate::overlay::Descriptor;

#[derive(Debug, Error, PartialEq)]
pub enum GateError {
    #[error("attempt {attempt} is beyond the regeneration budget of {max}")]
    AttemptOverBudget { attempt: u32, max: u32 },
    #[error("no candidates to rank")]
    NoCandidates,
}

/// Counter-based generator: draw `k` is a pure function of `(seed, k)`, so a
/// session's draws can be replayed from the two integers alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub counter: u64,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    /// Uniform draw in [0, 1).
    pub fn next_unit(&mut self) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_word_pos(u128::from(self.counter) * 2);
        self.counter += 1;
        rng.random::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionKind {
    Accept,
    AcceptWithImplicit,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub kind: DecisionKind,
    pub directive: Option<FeedbackDirective>,
    pub attempt: u32,
    /// Accepted only because the budget ran out with rigid violations left.
    pub budget_exhausted: bool,
}

/// How one descriptor sits relative to its rule's tolerance band.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Breach {
    Tolerated,
    Soft,
    Rigid,
}

fn classify(d: &Descriptor, rules: &RuleSet, rigid_cutoff: f64) -> Breach {
    // Descriptors always come from rules in the set; an unknown id is
    // treated as fully rigid.
    let eps = rules.get(&d.rule_id).map_or(1.0, |r| r.rigidity);
    if d.deviation <= 1.0 - eps {
        Breach::Tolerated
    } else if eps >= rigid_cutoff {
        Breach::Rigid
    } else {
        Breach::Soft
    }
}

/// Decides the fate of one candidate. `attempt` counts regenerations already
/// made this turn (0 for the first candidate). At most one draw is taken
/// from `rng`, and only when an urgent soft breach could trigger a reject.
pub fn decide(
    descriptors: &[Descriptor],
    rules: &RuleSet,
    attempt: u32,
    rng: &mut RngState,
    config: &EngineConfig,
    clauses: &ClauseBook,
) -> Result<GateDecision, GateError> {
    let max = config.max_regenerations;
    if attempt > max {
        return Err(GateError::AttemptOverBudget { attempt, max });
    }
    let decision = |kind, directive, budget_exhausted| GateDecision {
        kind,
        directive,
        attempt,
        budget_exhausted,
    };
    if descriptors.is_empty() {
        return Ok(decision(DecisionKind::Accept, None, false));
    }
    let breaches: Vec<Breach> = descriptors
        .iter()
        .map(|d| classify(d, rules, config.rigid_cutoff))
        .collect();
    let forced = || synthesize_forced(descriptors, None, clauses).ok();

    if breaches.contains(&Breach::Rigid) {
        if attempt == max {
            return Ok(decision(DecisionKind::Accept, None, true));
        }
        return Ok(decision(DecisionKind::Reject, forced(), false));
    }

    let urgent_soft = descriptors
        .iter()
        .zip(&breaches)
        .any(|(d, b)| *b == Breach::Soft && d.urgent);
    if urgent_soft && attempt < max && rng.next_unit() < config.forced_feedback_probability {
        return Ok(decision(DecisionKind::Reject, forced(), false));
    }
    Ok(decision(
        DecisionKind::AcceptWithImplicit,
        synthesize_implicit(descriptors, clauses),
        false,
    ))
}

/// Picks the best of several partially compliant candidates: fewest urgent
/// descriptors, then smallest total deviation, then earliest.
pub fn rank_candidates<T>(
    candidates: &[(T, &FeatureVector, &[Descriptor])],
) -> Result<usize, GateError> {
    candidates
        .iter()
        .enumerate()
        .map(|(i, (_, _, ds))| {
            let urgent = ds.iter().filter(|d| d.urgent).count();
            let total: f64 = ds.iter().map(|d| d.deviation).sum();
            (urgent, total, i)
        })
        .min_by(|a, b| {
            a.0.cmp(&b.0)
                .then_with(|| a.1.total_cmp(&b.1))
                .then_with(|| a.2.cmp(&b.2))
        })
        .map(|(_, _, i)| i)
        .ok_or(GateError::NoCandidates)
}
