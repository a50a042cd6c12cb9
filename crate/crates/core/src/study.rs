//! Pairwise preference study: session composition, trial sequencing,
//! left/right flipping, response normalization and an append-only event log.
//!
//! Every state change is written to the event log before it becomes visible,
//! so [`StudyEngine::replay`] rebuilds the exact in-memory state from the log.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::itemgen::ItemPair;
use crate::qc::speed_floor_with;
use crate::{Error, Result};

pub const DEFAULT_CRITICAL_PER_SESSION: usize = 20;
pub const GOTCHA_INSTRUCTION: &str = "This is not a real item, please click on the left button.";
pub const DEFAULT_INSTRUCTIONS: &str = include_str!("../assets/study/instructions.txt");
pub const IDLE_TIMEOUT_MS: i64 = 24 * 60 * 60 * 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemType {
    Calibration,
    Critical,
    Gotcha,
    Proficiency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChoiceVariant {
    Low,
    High,
    Correct,
    Incorrect,
}

impl fmt::Display for ChoiceVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChoiceVariant::Low => "low",
            ChoiceVariant::High => "high",
            ChoiceVariant::Correct => "correct",
            ChoiceVariant::Incorrect => "incorrect",
        })
    }
}

/// Calibration and proficiency items: one acceptable and one deliberately
/// poor text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillerItem {
    pub item_id: String,
    pub correct_text: String,
    pub incorrect_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GotchaItem {
    pub item_id: String,
    pub left_text: String,
    pub right_text: String,
    pub instructed_side: Side,
}

impl GotchaItem {
    /// Splices [`GOTCHA_INSTRUCTION`] into the middle of both texts.
    pub fn from_texts(item_id: &str, left: &str, right: &str) -> Self {
        let splice = |text: &str| {
            let words: Vec<&str> = text.split_whitespace().collect();
            let mid = words.len() / 2;
            format!(
                "{} {} {}",
                words[..mid].join(" "),
                GOTCHA_INSTRUCTION,
                words[mid..].join(" ")
            )
            .trim()
            .to_string()
        };
        GotchaItem {
            item_id: item_id.to_string(),
            left_text: splice(left),
            right_text: splice(right),
            instructed_side: Side::Left,
        }
    }
}

/// The non-critical items of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fillers {
    pub calibration: FillerItem,
    pub gotchas: Vec<GotchaItem>,
    pub proficiency: Vec<FillerItem>,
}

impl Default for Fillers {
    fn default() -> Self {
        serde_json::from_str(include_str!("../assets/study/fillers.json")).expect("bundled fillers parse")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CharLengthMode {
    /// Characters of the longer displayed text.
    Longer,
    /// Characters of both texts together.
    Sum,
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub pairs: Vec<ItemPair>,
    pub fillers: Fillers,
    pub critical_per_session: usize,
    pub seed: u64,
    pub char_length: CharLengthMode,
    pub speed_factor: f64,
    pub instructions: String,
}

impl StudyConfig {
    pub fn new(pairs: Vec<ItemPair>, seed: u64) -> Self {
        StudyConfig {
            pairs,
            fillers: Fillers::default(),
            critical_per_session: DEFAULT_CRITICAL_PER_SESSION,
            seed,
            char_length: CharLengthMode::Longer,
            speed_factor: 0.4,
            instructions: DEFAULT_INSTRUCTIONS.trim().to_string(),
        }
    }

    pub fn trials_per_session(&self) -> usize {
        1 + self.critical_per_session + self.fillers.gotchas.len() + self.fillers.proficiency.len()
    }

    fn validate(&self) -> Result<()> {
        if self.critical_per_session == 0 {
            return Err(Error::Config("critical_per_session must be positive".into()));
        }
        if self.pairs.len() < self.critical_per_session {
            return Err(Error::Config(format!(
                "{} critical pairs configured, each session needs {}",
                self.pairs.len(),
                self.critical_per_session
            )));
        }
        let mut ids: Vec<&str> = self.pairs.iter().map(|p| p.abstract_id.as_str()).collect();
        ids.push(&self.fillers.calibration.item_id);
        ids.extend(self.fillers.gotchas.iter().map(|g| g.item_id.as_str()));
        ids.extend(self.fillers.proficiency.iter().map(|g| g.item_id.as_str()));
        let n = ids.len();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != n {
            return Err(Error::Config("item ids must be unique across pairs and fillers".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub trial_index: usize,
    pub item_id: String,
    pub item_type: ItemType,
    pub flipped: bool,
    pub left_variant_id: String,
    pub right_variant_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instructed_side: Option<Side>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub participant_id: String,
    pub seed: u64,
    pub created_at: i64,
    pub plan: Vec<TrialSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub session_id: String,
    pub participant_id: String,
    pub trial_index: usize,
    pub item_id: String,
    pub item_type: ItemType,
    pub flipped: bool,
    pub choice_side: Side,
    pub choice_variant: ChoiceVariant,
    pub rt_ms: f64,
    pub char_length: usize,
    pub ts: i64,
}

/// What a participant sees. Identical structure for every item type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialView {
    pub session_id: String,
    pub trial_index: usize,
    pub total_trials: usize,
    pub instructions: String,
    pub left_text: String,
    pub right_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum NextTrial {
    Trial(TrialView),
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseOutcome {
    pub record: TrialRecord,
    pub too_fast: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Open,
    Complete,
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Session(Session),
    Response(TrialRecord),
    Expired { session_id: String, ts: i64 },
}

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> i64;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> i64 {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as i64)
            .unwrap_or(0)
    }
}

/// A deterministic clock advancing by `step` on every reading.
pub struct SteppingClock {
    now: AtomicI64,
    step: i64,
}

impl SteppingClock {
    pub fn new(start: i64, step: i64) -> Self {
        SteppingClock {
            now: AtomicI64::new(start),
            step,
        }
    }

    pub fn advance(&self, by: i64) {
        self.now.fetch_add(by, Ordering::SeqCst);
    }
}

impl Clock for SteppingClock {
    fn now_ms(&self) -> i64 {
        self.now.fetch_add(self.step, Ordering::SeqCst)
    }
}

impl<C: Clock + ?Sized> Clock for Arc<C> {
    fn now_ms(&self) -> i64 {
        (**self).now_ms()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session: Session,
    pub records: Vec<TrialRecord>,
    pub status: SessionStatus,
    pub last_activity: i64,
}

impl SessionState {
    fn current_index(&self) -> usize {
        self.records.len() + 1
    }
}

#[derive(Default)]
struct Registry {
    sessions: BTreeMap<String, Arc<Mutex<SessionState>>>,
    open_by_participant: HashMap<String, String>,
    sessions_per_participant: HashMap<String, u64>,
}

fn digest_u64(parts: &[&[u8]]) -> (u64, String) {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let out = h.finalize();
    let mut first = [0u8; 8];
    first.copy_from_slice(&out[..8]);
    (u64::from_le_bytes(first), hex::encode(&out[..8]))
}

/// Builds the trial plan for one session. Calibration comes first; critical,
/// gotcha and proficiency items fill the remaining slots in uniformly random
/// order, and every trial gets an independent fair flip.
pub fn build_plan(config: &StudyConfig, seed: u64) -> Vec<TrialSpec> {
    enum Slot<'a> {
        Critical(&'a ItemPair),
        Gotcha(&'a GotchaItem),
        Proficiency(&'a FillerItem),
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<&ItemPair> = config.pairs.iter().collect();
    pool.shuffle(&mut rng);
    let mut slots: Vec<Slot> = pool
        .into_iter()
        .take(config.critical_per_session)
        .map(Slot::Critical)
        .chain(config.fillers.gotchas.iter().map(Slot::Gotcha))
        .chain(config.fillers.proficiency.iter().map(Slot::Proficiency))
        .collect();
    slots.shuffle(&mut rng);

    let filler_spec = |index: usize, item: &FillerItem, item_type: ItemType, flipped: bool| {
        let (l, r) = if flipped {
            ("incorrect", "correct")
        } else {
            ("correct", "incorrect")
        };
        TrialSpec {
            trial_index: index,
            item_id: item.item_id.clone(),
            item_type,
            flipped,
            left_variant_id: l.into(),
            right_variant_id: r.into(),
            instructed_side: None,
        }
    };

    let mut plan = Vec::with_capacity(slots.len() + 1);
    plan.push(filler_spec(
        1,
        &config.fillers.calibration,
        ItemType::Calibration,
        rng.random_bool(0.5),
    ));
    for (i, slot) in slots.into_iter().enumerate() {
        let index = i + 2;
        let flipped = rng.random_bool(0.5);
        plan.push(match slot {
            Slot::Critical(pair) => {
                let (l, r) = if flipped {
                    (&pair.high, &pair.low)
                } else {
                    (&pair.low, &pair.high)
                };
                TrialSpec {
                    trial_index: index,
                    item_id: pair.abstract_id.clone(),
                    item_type: ItemType::Critical,
                    flipped,
                    left_variant_id: l.variant_id.clone(),
                    right_variant_id: r.variant_id.clone(),
                    instructed_side: None,
                }
            }
            Slot::Gotcha(g) => {
                let (l, r) = if flipped { ("b", "a") } else { ("a", "b") };
                TrialSpec {
                    trial_index: index,
                    item_id: g.item_id.clone(),
                    item_type: ItemType::Gotcha,
                    flipped,
                    left_variant_id: l.into(),
                    right_variant_id: r.into(),
                    instructed_side: Some(g.instructed_side),
                }
            }
            Slot::Proficiency(p) => filler_spec(index, p, ItemType::Proficiency, flipped),
        });
    }
    plan
}

/// Maps a clicked side back to the variant identity.
pub fn normalize_choice(spec: &TrialSpec, side: Side) -> ChoiceVariant {
    let chose_left = side == Side::Left;
    match spec.item_type {
        ItemType::Critical => {
            // Unflipped: low on the left.
            if chose_left != spec.flipped {
                ChoiceVariant::Low
            } else {
                ChoiceVariant::High
            }
        }
        ItemType::Calibration | ItemType::Proficiency => {
            if chose_left != spec.flipped {
                ChoiceVariant::Correct
            } else {
                ChoiceVariant::Incorrect
            }
        }
        ItemType::Gotcha => {
            if Some(side) == spec.instructed_side {
                ChoiceVariant::Correct
            } else {
                ChoiceVariant::Incorrect
            }
        }
    }
}

pub struct StudyEngine {
    config: StudyConfig,
    pairs_by_id: HashMap<String, usize>,
    registry: RwLock<Registry>,
    log: Mutex<Box<dyn Write + Send>>,
    clock: Box<dyn Clock>,
}

impl StudyEngine {
    pub fn new(config: StudyConfig, log: Box<dyn Write + Send>, clock: Box<dyn Clock>) -> Result<Self> {
        config.validate()?;
        let pairs_by_id = config
            .pairs
            .iter()
            .enumerate()
            .map(|(i, p)| (p.abstract_id.clone(), i))
            .collect();
        Ok(StudyEngine {
            config,
            pairs_by_id,
            registry: RwLock::new(Registry::default()),
            log: Mutex::new(log),
            clock,
        })
    }

    /// Rebuilds an engine from an event log. New events go to `log`.
    pub fn replay<R: BufRead>(
        config: StudyConfig,
        events: R,
        log: Box<dyn Write + Send>,
        clock: Box<dyn Clock>,
    ) -> Result<Self> {
        let engine = StudyEngine::new(config, log, clock)?;
        {
            let mut reg = engine.registry.write().expect("registry lock");
            for (i, line) in events.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let event: Event = serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
                engine
                    .apply(&mut reg, event)
                    .map_err(|e| Error::parse(i + 1, e.to_string()))?;
            }
        }
        Ok(engine)
    }

    fn apply(&self, reg: &mut Registry, event: Event) -> Result<()> {
        match event {
            Event::Session(session) => {
                *reg.sessions_per_participant
                    .entry(session.participant_id.clone())
                    .or_insert(0) += 1;
                reg.open_by_participant
                    .insert(session.participant_id.clone(), session.session_id.clone());
                let state = SessionState {
                    last_activity: session.created_at,
                    session,
                    records: Vec::new(),
                    status: SessionStatus::Open,
                };
                reg.sessions
                    .insert(state.session.session_id.clone(), Arc::new(Mutex::new(state)));
            }
            Event::Response(record) => {
                let state = reg
                    .sessions
                    .get(&record.session_id)
                    .ok_or_else(|| Error::NotFound(record.session_id.clone()))?;
                let mut s = state.lock().expect("session lock");
                if record.trial_index != s.current_index() {
                    return Err(Error::Sequencing {
                        expected: s.current_index(),
                        got: record.trial_index,
                    });
                }
                s.last_activity = record.ts;
                s.records.push(record);
                if s.records.len() == s.session.plan.len() {
                    s.status = SessionStatus::Complete;
                    reg.open_by_participant.remove(&s.session.participant_id);
                }
            }
            Event::Expired { session_id, .. } => {
                let state = reg
                    .sessions
                    .get(&session_id)
                    .ok_or_else(|| Error::NotFound(session_id.clone()))?;
                let mut s = state.lock().expect("session lock");
                s.status = SessionStatus::Incomplete;
                reg.open_by_participant.remove(&s.session.participant_id);
            }
        }
        Ok(())
    }

    fn append(&self, event: &Event) -> Result<()> {
        let mut line = serde_json::to_vec(event)?;
        line.push(b'\n');
        let mut log = self.log.lock().expect("log lock");
        log.write_all(&line)?;
        log.flush()?;
        Ok(())
    }

    pub fn config(&self) -> &StudyConfig {
        &self.config
    }

    pub fn create_session(&self, participant_id: &str) -> Result<Session> {
        if participant_id.trim().is_empty() {
            return Err(Error::validation("participant_id is empty"));
        }
        let mut reg = self.registry.write().expect("registry lock");
        if let Some(open) = reg.open_by_participant.get(participant_id) {
            return Err(Error::Conflict(format!(
                "participant {participant_id:?} already has open session {open}"
            )));
        }
        let ordinal = reg.sessions_per_participant.get(participant_id).copied().unwrap_or(0);
        let (seed, _) = digest_u64(&[
            &self.config.seed.to_le_bytes(),
            participant_id.as_bytes(),
            &ordinal.to_le_bytes(),
        ]);
        let (_, id_hex) = digest_u64(&[b"session", &seed.to_le_bytes()]);
        let session = Session {
            session_id: format!("s-{id_hex}"),
            participant_id: participant_id.to_string(),
            seed,
            created_at: self.clock.now_ms(),
            plan: build_plan(&self.config, seed),
        };
        let event = Event::Session(session.clone());
        self.append(&event)?;
        self.apply(&mut reg, event)?;
        Ok(session)
    }

    fn state(&self, session_id: &str) -> Result<Arc<Mutex<SessionState>>> {
        self.registry
            .read()
            .expect("registry lock")
            .sessions
            .get(session_id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("session {session_id:?}")))
    }

    fn texts(&self, spec: &TrialSpec) -> (&str, &str) {
        let f = &self.config.fillers;
        fn filler(item: &FillerItem, flipped: bool) -> (&str, &str) {
            let (c, i) = (item.correct_text.as_str(), item.incorrect_text.as_str());
            if flipped {
                (i, c)
            } else {
                (c, i)
            }
        }
        match spec.item_type {
            ItemType::Critical => {
                let pair = &self.config.pairs[self.pairs_by_id[&spec.item_id]];
                let (l, h) = (pair.low.text.as_str(), pair.high.text.as_str());
                if spec.flipped {
                    (h, l)
                } else {
                    (l, h)
                }
            }
            ItemType::Calibration => filler(&f.calibration, spec.flipped),
            ItemType::Proficiency => filler(
                f.proficiency
                    .iter()
                    .find(|p| p.item_id == spec.item_id)
                    .expect("planned proficiency item exists"),
                spec.flipped,
            ),
            ItemType::Gotcha => {
                let g = f
                    .gotchas
                    .iter()
                    .find(|g| g.item_id == spec.item_id)
                    .expect("planned gotcha exists");
                if spec.flipped {
                    (&g.right_text, &g.left_text)
                } else {
                    (&g.left_text, &g.right_text)
                }
            }
        }
    }

    pub fn char_length(&self, spec: &TrialSpec) -> usize {
        let (l, r) = self.texts(spec);
        let (l, r) = (l.chars().count(), r.chars().count());
        match self.config.char_length {
            CharLengthMode::Longer => l.max(r),
            CharLengthMode::Sum => l + r,
        }
    }

    pub fn next_trial(&self, session_id: &str) -> Result<NextTrial> {
        let state = self.state(session_id)?;
        let s = state.lock().expect("session lock");
        if s.status != SessionStatus::Open || s.records.len() >= s.session.plan.len() {
            return Ok(NextTrial::Finished);
        }
        let spec = &s.session.plan[s.records.len()];
        let (left, right) = self.texts(spec);
        Ok(NextTrial::Trial(TrialView {
            session_id: session_id.to_string(),
            trial_index: spec.trial_index,
            total_trials: s.session.plan.len(),
            instructions: self.config.instructions.clone(),
            left_text: left.to_string(),
            right_text: right.to_string(),
        }))
    }

    pub fn record_response(
        &self,
        session_id: &str,
        trial_index: usize,
        side: Side,
        rt_ms: f64,
    ) -> Result<ResponseOutcome> {
        if !(rt_ms > 0.0) || !rt_ms.is_finite() {
            return Err(Error::validation(format!("rt_ms must be positive, got {rt_ms}")));
        }
        let state = self.state(session_id)?;
        // The registry write lock serialises responses with completion and
        // expiry bookkeeping.
        let mut reg = self.registry.write().expect("registry lock");
        let record = {
            let s = state.lock().expect("session lock");
            if s.status != SessionStatus::Open {
                return Err(Error::Finished);
            }
            let expected = s.current_index();
            if trial_index < expected {
                return Err(Error::Conflict(format!(
                    "trial {trial_index} of session {session_id} already answered"
                )));
            }
            if trial_index > expected {
                return Err(Error::Sequencing {
                    expected,
                    got: trial_index,
                });
            }
            let spec = &s.session.plan[trial_index - 1];
            TrialRecord {
                session_id: session_id.to_string(),
                participant_id: s.session.participant_id.clone(),
                trial_index,
                item_id: spec.item_id.clone(),
                item_type: spec.item_type,
                flipped: spec.flipped,
                choice_side: side,
                choice_variant: normalize_choice(spec, side),
                rt_ms,
                char_length: self.char_length(spec),
                ts: self.clock.now_ms(),
            }
        };
        let too_fast = rt_ms < speed_floor_with(self.config.speed_factor, record.char_length);
        let event = Event::Response(record.clone());
        self.append(&event)?;
        self.apply(&mut reg, event)?;
        Ok(ResponseOutcome { record, too_fast })
    }

    /// Marks sessions idle for longer than `timeout_ms` as incomplete.
    pub fn expire_idle(&self, timeout_ms: i64) -> Result<Vec<String>> {
        let now = self.clock.now_ms();
        let mut reg = self.registry.write().expect("registry lock");
        let stale: Vec<String> = reg
            .sessions
            .iter()
            .filter(|(_, s)| {
                let s = s.lock().expect("session lock");
                s.status == SessionStatus::Open && now - s.last_activity > timeout_ms
            })
            .map(|(id, _)| id.clone())
            .collect();
        for id in &stale {
            let event = Event::Expired {
                session_id: id.clone(),
                ts: now,
            };
            self.append(&event)?;
            self.apply(&mut reg, event)?;
        }
        Ok(stale)
    }

    /// All session states, ordered by session id.
    pub fn snapshot(&self) -> Vec<SessionState> {
        self.registry
            .read()
            .expect("registry lock")
            .sessions
            .values()
            .map(|s| s.lock().expect("session lock").clone())
            .collect()
    }

    /// Every recorded response, ordered by session then trial.
    pub fn export(&self) -> Vec<TrialRecord> {
        self.snapshot().into_iter().flat_map(|s| s.records).collect()
    }
}

pub fn write_records<W: Write>(records: &[TrialRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(input: R) -> Result<Vec<TrialRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        // Event-log lines carry an extra "event" tag; plain records do not.
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        match value.get("event").and_then(|v| v.as_str()) {
            Some("response") | None => {
                out.push(serde_json::from_value(value).map_err(|e| Error::parse(i + 1, e.to_string()))?)
            }
            Some(_) => continue,
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn engine(seed: u64) -> StudyEngine {
        let pairs = synth::toy_pairs(30);
        StudyEngine::new(
            StudyConfig::new(pairs, seed),
            Box::new(std::io::sink()),
            Box::new(SteppingClock::new(0, 1)),
        )
        .unwrap()
    }

    #[test]
    fn default_composition() {
        let e = engine(7);
        let s = e.create_session("p1").unwrap();
        assert_eq!(s.plan.len(), 25);
        assert_eq!(s.plan[0].item_type, ItemType::Calibration);
        let count = |t| s.plan.iter().filter(|x| x.item_type == t).count();
        assert_eq!(count(ItemType::Critical), 20);
        assert_eq!(count(ItemType::Gotcha), 2);
        assert_eq!(count(ItemType::Proficiency), 2);
        assert!(s.plan.iter().enumerate().all(|(i, t)| t.trial_index == i + 1));
    }

    #[test]
    fn fixed_seed_reproduces_plan() {
        let a = engine(3).create_session("p").unwrap();
        let b = engine(3).create_session("p").unwrap();
        assert_eq!(a, b);
        let c = engine(4).create_session("p").unwrap();
        assert_ne!(a.plan, c.plan);
    }

    #[test]
    fn too_few_pairs_is_config_error() {
        let r = StudyEngine::new(
            StudyConfig::new(synth::toy_pairs(19), 1),
            Box::new(std::io::sink()),
            Box::new(SystemClock),
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn duplicate_open_session_conflicts() {
        let e = engine(1);
        e.create_session("p").unwrap();
        assert!(matches!(e.create_session("p"), Err(Error::Conflict(_))));
    }

    #[test]
    fn flipped_critical_left_is_high() {
        let spec = TrialSpec {
            trial_index: 2,
            item_id: "a".into(),
            item_type: ItemType::Critical,
            flipped: true,
            left_variant_id: "hi".into(),
            right_variant_id: "lo".into(),
            instructed_side: None,
        };
        assert_eq!(normalize_choice(&spec, Side::Left), ChoiceVariant::High);
        assert_eq!(normalize_choice(&spec, Side::Right), ChoiceVariant::Low);
        let unflipped = TrialSpec {
            flipped: false,
            ..spec.clone()
        };
        assert_eq!(normalize_choice(&unflipped, Side::Left), ChoiceVariant::Low);
    }

    #[test]
    fn flip_normalization_is_an_involution() {
        for item_type in [ItemType::Critical, ItemType::Calibration, ItemType::Proficiency] {
            for flipped in [false, true] {
                for side in [Side::Left, Side::Right] {
                    let spec = TrialSpec {
                        trial_index: 1,
                        item_id: "x".into(),
                        item_type,
                        flipped,
                        left_variant_id: String::new(),
                        right_variant_id: String::new(),
                        instructed_side: None,
                    };
                    let mirrored = TrialSpec {
                        flipped: !flipped,
                        ..spec.clone()
                    };
                    assert_eq!(normalize_choice(&spec, side), normalize_choice(&mirrored, side.other()));
                }
            }
        }
    }

    #[test]
    fn gotcha_wrong_side_is_incorrect() {
        let spec = TrialSpec {
            trial_index: 5,
            item_id: "g".into(),
            item_type: ItemType::Gotcha,
            flipped: true,
            left_variant_id: "b".into(),
            right_variant_id: "a".into(),
            instructed_side: Some(Side::Left),
        };
        assert_eq!(normalize_choice(&spec, Side::Right), ChoiceVariant::Incorrect);
        assert_eq!(normalize_choice(&spec, Side::Left), ChoiceVariant::Correct);
    }

    #[test]
    fn walk_a_full_session() {
        let e = engine(11);
        let s = e.create_session("p").unwrap();
        let NextTrial::Trial(first) = e.next_trial(&s.session_id).unwrap() else {
            panic!()
        };
        assert_eq!(first.trial_index, 1);
        // Repeated reads return the same trial.
        assert_eq!(e.next_trial(&s.session_id).unwrap(), NextTrial::Trial(first));

        for i in 1..=25 {
            let NextTrial::Trial(view) = e.next_trial(&s.session_id).unwrap() else {
                panic!()
            };
            let spec = &s.plan[i - 1];
            if spec.item_type == ItemType::Gotcha {
                assert!(view.left_text.contains(GOTCHA_INSTRUCTION));
            }
            let out = e.record_response(&s.session_id, i, Side::Left, 20_000.0).unwrap();
            assert!(!out.too_fast);
        }
        assert_eq!(e.next_trial(&s.session_id).unwrap(), NextTrial::Finished);
        assert!(matches!(
            e.record_response(&s.session_id, 26, Side::Left, 1.0),
            Err(Error::Finished)
        ));
        assert!(matches!(e.next_trial("nope"), Err(Error::NotFound(_))));
        // A finished participant may start again.
        assert!(e.create_session("p").is_ok());
    }

    #[test]
    fn sequencing_and_duplicates() {
        let e = engine(2);
        let s = e.create_session("p").unwrap();
        assert!(matches!(
            e.record_response(&s.session_id, 2, Side::Left, 100.0),
            Err(Error::Sequencing { expected: 1, got: 2 })
        ));
        let first = e.record_response(&s.session_id, 1, Side::Left, 100.0).unwrap();
        assert!(matches!(
            e.record_response(&s.session_id, 1, Side::Right, 100.0),
            Err(Error::Conflict(_))
        ));
        assert_eq!(e.export(), vec![first.record]);
        assert!(e.record_response(&s.session_id, 2, Side::Left, 0.0).is_err());
    }

    #[test]
    fn too_fast_flag_uses_speed_floor() {
        let e = engine(5);
        let s = e.create_session("p").unwrap();
        let len = e.char_length(&s.plan[0]);
        let floor = 0.4 * (225.0 + 25.0 * len as f64);
        let out = e.record_response(&s.session_id, 1, Side::Left, floor - 1.0).unwrap();
        assert!(out.too_fast);
        let out = e.record_response(&s.session_id, 2, Side::Left, floor + 1.0).unwrap();
        assert!(!out.too_fast || e.char_length(&s.plan[1]) > len);
    }

    #[test]
    fn views_do_not_leak_item_type() {
        let e = engine(9);
        let s = e.create_session("p").unwrap();
        let mut shapes = std::collections::BTreeSet::new();
        for i in 1..=25 {
            let NextTrial::Trial(view) = e.next_trial(&s.session_id).unwrap() else {
                panic!()
            };
            let v = serde_json::to_value(&view).unwrap();
            let keys: Vec<String> = v.as_object().unwrap().keys().cloned().collect();
            shapes.insert(keys);
            let text = serde_json::to_string(&view).unwrap();
            for leak in ["critical", "gotcha", "proficiency", "calibration", "flipped"] {
                assert!(!text.contains(leak), "{leak} leaked in {text}");
            }
            e.record_response(&s.session_id, i, Side::Right, 9_000.0).unwrap();
        }
        assert_eq!(shapes.len(), 1);
    }

    #[test]
    fn idle_sessions_expire() {
        let clock = Arc::new(SteppingClock::new(0, 1));
        let e = StudyEngine::new(
            StudyConfig::new(synth::toy_pairs(20), 1),
            Box::new(std::io::sink()),
            Box::new(clock.clone()),
        )
        .unwrap();
        let s = e.create_session("p").unwrap();
        e.record_response(&s.session_id, 1, Side::Left, 500.0).unwrap();
        assert!(e.expire_idle(IDLE_TIMEOUT_MS).unwrap().is_empty());
        clock.advance(IDLE_TIMEOUT_MS + 10);
        assert_eq!(e.expire_idle(IDLE_TIMEOUT_MS).unwrap(), vec![s.session_id.clone()]);
        assert_eq!(e.next_trial(&s.session_id).unwrap(), NextTrial::Finished);
        assert_eq!(e.snapshot()[0].status, SessionStatus::Incomplete);
        assert!(e.create_session("p").is_ok());
    }
}
