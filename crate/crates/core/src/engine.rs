//! The per-turn loop: generate, extract, evaluate, gate, and either accept or
//! regenerate with a forced directive.

use std::sync::Arc;

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{ChatMessage, ChatModel, ChatParams, ClientError, RemoteEmbedding};
use crate::config::{CoherenceReference, EngineConfig, RuleSet};
use crate::conversation::{Conversation, Speaker, Turn};
use crate::extract::{extract_with_prev, ExtractError, Extractors, FeatureVector};
use crate::gate::{decide, rank_candidates, DecisionKind, GateDecision, GateError, RngState};
use crate::observer::{rewrite_with_model, ClauseBook, FeedbackDirective};
use crate::overlay::{evaluate_all, Descriptor};

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Always reports the same instant. Used for replayable traces.
#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub DateTime<Utc>);

impl Default for FixedClock {
    fn default() -> Self {
        Self(Utc.timestamp_opt(0, 0).unwrap())
    }
}

impl Clock for FixedClock {
    fn now(&self) -> DateTime<Utc> {
        self.0
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("the last turn must be a human turn")]
    NotHumanTurn,
    #[error("base model: {0}")]
    Upstream(#[from] ClientError),
    #[error("feature extraction: {0}")]
    Extract(#[from] ExtractError),
    #[error("gate: {0}")]
    Gate(#[from] GateError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateAction {
    pub text: String,
    pub attempt: u32,
    pub features: FeatureVector,
    pub descriptors: Vec<Descriptor>,
}

/// Full trace of one agent turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub session_id: String,
    /// Conversation index of the agent turn this record produced.
    pub turn_index: usize,
    pub candidates: Vec<CandidateAction>,
    pub decisions: Vec<GateDecision>,
    pub accepted_index: Option<usize>,
    pub accepted_text: String,
    /// Implicit advice carried into the next turn.
    pub pending_implicit: Option<FeedbackDirective>,
    pub forced_count: u32,
    pub warnings: Vec<String>,
    pub wall_time_ms: Vec<u64>,
}

impl EvaluationRecord {
    fn new(session_id: &str, turn_index: usize) -> Self {
        Self {
            session_id: session_id.to_string(),
            turn_index,
            candidates: Vec::new(),
            decisions: Vec::new(),
            accepted_index: None,
            accepted_text: String::new(),
            pending_implicit: None,
            forced_count: 0,
            warnings: Vec::new(),
            wall_time_ms: Vec::new(),
        }
    }

    pub fn regenerations(&self) -> usize {
        self.candidates.len().saturating_sub(1)
    }

    pub fn flagged_implicit(&self) -> bool {
        self.decisions
            .last()
            .is_some_and(|d| d.kind == DecisionKind::AcceptWithImplicit)
    }

    pub fn budget_exhausted(&self) -> bool {
        self.decisions.last().is_some_and(|d| d.budget_exhausted)
    }
}

#[derive(Debug, Error)]
#[error("{error}")]
pub struct TurnError {
    pub error: EngineError,
    /// Everything recorded before the failure.
    pub partial: Box<EvaluationRecord>,
}

#[derive(Debug, Clone)]
pub struct TurnOutcome {
    pub turn: Turn,
    pub record: EvaluationRecord,
    pub next_pending: Option<FeedbackDirective>,
}

/// One configured observer loop. Cheap to clone; clients are shared.
#[derive(Clone)]
pub struct Engine {
    config: Arc<EngineConfig>,
    rules: Arc<RuleSet>,
    base: Arc<dyn ChatModel>,
    observer: Option<Arc<dyn ChatModel>>,
    extractors: Extractors,
    clauses: Arc<ClauseBook>,
    clock: Arc<dyn Clock>,
    exemplar: Option<String>,
    params: ChatParams,
}

impl Engine {
    pub fn new(config: EngineConfig, rules: RuleSet, base: Arc<dyn ChatModel>) -> Self {
        let extractors = Extractors::standard(config.embedding_dim);
        Self {
            config: Arc::new(config),
            rules: Arc::new(rules),
            base,
            observer: None,
            extractors,
            clauses: Arc::new(ClauseBook::bundled()),
            clock: Arc::new(SystemClock),
            exemplar: None,
            params: ChatParams::default(),
        }
    }

    /// Builds the base, observer and embedding clients named in `config`.
    pub fn from_config(config: EngineConfig, rules: RuleSet) -> Self {
        let base = config.base_provider.build();
        let observer = config.observer_provider.as_ref().map(|p| p.build());
        let embedding = config.embedding_provider.clone();
        let mut engine = Self::new(config, rules, base);
        engine.observer = observer;
        if let Some(desc) = embedding {
            engine.extractors = engine
                .extractors
                .with_embedder(Arc::new(RemoteEmbedding::new(desc)));
        }
        engine
    }

    pub fn with_observer(mut self, model: Arc<dyn ChatModel>) -> Self {
        self.observer = Some(model);
        self
    }

    pub fn with_extractors(mut self, extractors: Extractors) -> Self {
        self.extractors = extractors;
        self
    }

    pub fn with_clauses(mut self, clauses: ClauseBook) -> Self {
        self.clauses = Arc::new(clauses);
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    /// Example reply appended to forced directives.
    pub fn with_exemplar(mut self, exemplar: impl Into<String>) -> Self {
        self.exemplar = Some(exemplar.into());
        self
    }

    pub fn with_params(mut self, params: ChatParams) -> Self {
        self.params = params;
        self
    }

    /// Same clients, new configuration and rules.
    pub fn reconfigured(&self, config: EngineConfig, rules: RuleSet) -> Self {
        let mut next = self.clone();
        next.config = Arc::new(config);
        next.rules = Arc::new(rules);
        next
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn rules(&self) -> &RuleSet {
        &self.rules
    }

    pub fn extractors(&self) -> &Extractors {
        &self.extractors
    }

    pub fn clock(&self) -> &dyn Clock {
        self.clock.as_ref()
    }

    fn base_messages(
        &self,
        conversation: &Conversation,
        pending: Option<&FeedbackDirective>,
    ) -> Vec<ChatMessage> {
        let mut messages = vec![ChatMessage::system(self.config.base_system_prompt.clone())];
        for turn in conversation.turns.iter().filter(|t| !t.placeholder) {
            messages.push(match turn.speaker {
                Speaker::Human => ChatMessage::user(turn.text.clone()),
                Speaker::Agent => ChatMessage::assistant(turn.text.clone()),
            });
        }
        if let Some(p) = pending {
            messages.push(ChatMessage::system(format!(
                "Feedback on your earlier replies: {}",
                p.text
            )));
        }
        messages
    }

    fn reference_text<'a>(&self, conversation: &'a Conversation) -> Option<&'a str> {
        let speaker = match self.config.coherence_reference {
            CoherenceReference::PreviousAgent => Speaker::Agent,
            CoherenceReference::PreviousHuman => Speaker::Human,
        };
        conversation
            .last_by(speaker, conversation.turns.len())
            .map(|t| t.text.as_str())
    }

    fn maybe_rewrite(
        &self,
        directive: Option<FeedbackDirective>,
        warnings: &mut Vec<String>,
    ) -> Option<FeedbackDirective> {
        let (Some(model), Some(dir)) = (&self.observer, directive.as_ref()) else {
            return directive;
        };
        let out = rewrite_with_model(dir, model.as_ref(), &self.clauses);
        warnings.extend(out.warning);
        Some(out.directive)
    }

    fn elapsed_ms(&self, since: DateTime<Utc>) -> u64 {
        (self.clock.now() - since).num_milliseconds().max(0) as u64
    }

    /// Produces the agent reply to the human turn that ends `conversation`.
    pub fn respond(
        &self,
        session_id: &str,
        conversation: &Conversation,
        pending: Option<&FeedbackDirective>,
        rng: &mut RngState,
    ) -> Result<TurnOutcome, TurnError> {
        let turn_index = conversation.turns.len();
        let mut record = EvaluationRecord::new(session_id, turn_index);
        if conversation.last().map(|t| t.speaker) != Some(Speaker::Human) {
            return Err(TurnError {
                error: EngineError::NotHumanTurn,
                partial: Box::new(record),
            });
        }
        match self.run_loop(conversation, pending, rng, &mut record) {
            Ok(next_pending) => {
                record.pending_implicit = next_pending.clone();
                let turn = Turn {
                    speaker: Speaker::Agent,
                    text: record.accepted_text.clone(),
                    index: turn_index,
                    timestamp: Some(self.clock.now()),
                    placeholder: false,
                };
                Ok(TurnOutcome {
                    turn,
                    record,
                    next_pending,
                })
            }
            Err(error) => Err(TurnError {
                error,
                partial: Box::new(record),
            }),
        }
    }

    fn run_loop(
        &self,
        conversation: &Conversation,
        pending: Option<&FeedbackDirective>,
        rng: &mut RngState,
        record: &mut EvaluationRecord,
    ) -> Result<Option<FeedbackDirective>, EngineError> {
        let max = self.config.max_regenerations;
        let started = self.clock.now();
        let reference = self.reference_text(conversation);
        let mut messages = self.base_messages(conversation, pending);
        let mut attempt = 0u32;
        let mut prev_entropy: Option<f64> = None;
        loop {
            let t0 = self.clock.now();
            let text = self.base.complete(&messages, &self.params)?;
            let prev = match prev_entropy {
                Some(p) => Ok(p),
                None => reference.map_or(Ok(0.0), |r| self.extractors.entropy_of(r)),
            };
            let features = prev.and_then(|p| {
                prev_entropy = Some(p);
                extract_with_prev(&text, p, &self.config, &self.extractors)
            });
            record.warnings.extend(self.extractors.embedder.take_warnings());
            let features = features?;
            let descriptors = evaluate_all(&self.rules, &features);

            let deadline_hit = self.elapsed_ms(started) >= self.config.turn_deadline_ms;
            if deadline_hit && attempt < max {
                record
                    .warnings
                    .push(format!("turn deadline reached after {} candidate(s)", attempt + 1));
            }
            let gate_attempt = if deadline_hit { max } else { attempt };
            let mut decision = decide(
                &descriptors,
                &self.rules,
                gate_attempt,
                rng,
                &self.config,
                &self.clauses,
            )?;
            if decision.kind == DecisionKind::Reject {
                if let (Some(ex), Some(dir)) = (&self.exemplar, decision.directive.as_mut()) {
                    let with_example = crate::observer::synthesize_forced(
                        &descriptors,
                        Some(ex),
                        &self.clauses,
                    )
                    .expect("reject implies descriptors");
                    *dir = with_example;
                }
            }
            decision.directive = self.maybe_rewrite(decision.directive.take(), &mut record.warnings);

            record.candidates.push(CandidateAction {
                text,
                attempt,
                features,
                descriptors,
            });
            record.decisions.push(decision.clone());
            record.wall_time_ms.push(self.elapsed_ms(t0));

            match decision.kind {
                DecisionKind::Reject => {
                    record.forced_count += 1;
                    let last = record.candidates.last().expect("just pushed");
                    messages.push(ChatMessage::assistant(last.text.clone()));
                    let directive = decision.directive.expect("reject carries a directive");
                    messages.push(ChatMessage::system(directive.text));
                    attempt += 1;
                }
                DecisionKind::Accept if decision.budget_exhausted => {
                    let ranked: Vec<_> = record
                        .candidates
                        .iter()
                        .map(|c| (&c.text, &c.features, c.descriptors.as_slice()))
                        .collect();
                    let best = rank_candidates(&ranked)?;
                    record.accepted_index = Some(best);
                    record.accepted_text = record.candidates[best].text.clone();
                    return Ok(None);
                }
                DecisionKind::Accept => {
                    record.accepted_index = Some(record.candidates.len() - 1);
                    record.accepted_text = record.candidates.last().unwrap().text.clone();
                    return Ok(None);
                }
                DecisionKind::AcceptWithImplicit => {
                    record.accepted_index = Some(record.candidates.len() - 1);
                    record.accepted_text = record.candidates.last().unwrap().text.clone();
                    return Ok(decision.directive);
                }
            }
        }
    }
}

/// A conversation plus the state threaded between its turns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub id: String,
    pub conversation: Conversation,
    pub pending_implicit: Option<FeedbackDirective>,
    pub rng: RngState,
    pub records: Vec<EvaluationRecord>,
    pub created: DateTime<Utc>,
    pub updated: DateTime<Utc>,
}

impl SessionState {
    pub fn new(id: impl Into<String>, seed: u64, now: DateTime<Utc>) -> Self {
        let id = id.into();
        Self {
            conversation: Conversation::new(id.clone()),
            id,
            pending_implicit: None,
            rng: RngState::new(seed),
            records: Vec::new(),
            created: now,
            updated: now,
        }
    }

    /// Appends the human turn and runs one engine turn. On failure the agent
    /// slot is filled with a placeholder so turns keep alternating.
    pub fn step(&mut self, engine: &Engine, human_text: &str) -> Result<&EvaluationRecord, TurnError> {
        let now = engine.clock().now();
        self.conversation.push(Speaker::Human, human_text, Some(now));
        self.updated = now;
        match engine.respond(&self.id, &self.conversation, self.pending_implicit.as_ref(), &mut self.rng) {
            Ok(outcome) => {
                self.updated = outcome.turn.timestamp.unwrap_or(now);
                self.conversation.turns.push(outcome.turn);
                self.pending_implicit = outcome.next_pending;
                self.records.push(outcome.record);
                Ok(self.records.last().unwrap())
            }
            Err(e) => {
                let at = engine.clock().now();
                self.conversation.push_placeholder(Speaker::Agent, Some(at));
                self.updated = at;
                Err(e)
            }
        }
    }

    /// Re-applies a persisted turn.
    pub fn apply(
        &mut self,
        human_text: &str,
        record: Option<&EvaluationRecord>,
        human_at: DateTime<Utc>,
        agent_at: DateTime<Utc>,
    ) {
        self.conversation.push(Speaker::Human, human_text, Some(human_at));
        match record {
            Some(r) => {
                self.conversation.push(Speaker::Agent, r.accepted_text.clone(), Some(agent_at));
                self.pending_implicit = r.pending_implicit.clone();
                self.records.push(r.clone());
            }
            None => self.conversation.push_placeholder(Speaker::Agent, Some(agent_at)),
        }
        self.updated = agent_at;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutcome {
    pub conversation: Conversation,
    pub records: Vec<EvaluationRecord>,
    /// (conversation index of the failed agent turn, error message)
    pub errors: Vec<(usize, String)>,
}

/// Feeds every human utterance from `inputs` through `engine`, continuing
/// past failed turns.
pub fn run_session<I, S>(engine: &Engine, session_id: &str, seed: u64, inputs: I) -> SessionOutcome
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut session = SessionState::new(session_id, seed, engine.clock().now());
    let mut errors = Vec::new();
    for input in inputs {
        if let Err(e) = session.step(engine, input.as_ref()) {
            errors.push((session.conversation.turns.len() - 1, e.to_string()));
        }
    }
    SessionOutcome {
        conversation: session.conversation,
        records: session.records,
        errors,
    }
}
