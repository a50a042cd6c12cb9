//! Participant and rating exclusions applied to exported trial records.
//!
//! Rules run in a fixed order: incomplete, then gotcha, then speed. A
//! participant is attributed to the first rule that catches them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::study::{ChoiceVariant, ItemType, TrialRecord};
use crate::{Error, Result};

pub const DEFAULT_SPEED_FACTOR: f64 = 0.4;

/// Minimum plausible reading time in ms for a text of `char_length`
/// characters, scaled by the default factor.
pub fn speed_floor(char_length: usize) -> f64 {
    speed_floor_with(DEFAULT_SPEED_FACTOR, char_length)
}

pub fn speed_floor_with(factor: f64, char_length: usize) -> f64 {
    factor * (225.0 + 25.0 * char_length as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GotchaRule {
    /// Excluded unless every gotcha (at least two) is answered correctly.
    Strict,
    /// Excluded only when no gotcha is answered correctly.
    Lenient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QcConfig {
    pub min_items: usize,
    pub speed_factor: f64,
    pub fast_trial_limit: usize,
    pub gotcha_rule: GotchaRule,
    pub required_gotchas: usize,
}

impl Default for QcConfig {
    fn default() -> Self {
        QcConfig {
            min_items: 10,
            speed_factor: DEFAULT_SPEED_FACTOR,
            fast_trial_limit: 5,
            gotcha_rule: GotchaRule::Strict,
            required_gotchas: 2,
        }
    }
}

/// A critical rating that survived every rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetainedRating {
    pub participant_id: String,
    pub item_id: String,
    pub choice_variant: ChoiceVariant,
    pub rt_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RuleCounts {
    pub participants: usize,
    pub critical_ratings: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExclusionReport {
    pub n_records: usize,
    pub n_participants: usize,
    pub n_critical_input: usize,
    pub excluded_incomplete: Vec<String>,
    pub excluded_gotcha: Vec<String>,
    pub excluded_speed: Vec<String>,
    pub excluded_fast_ratings: usize,
    /// Fast critical ratings anywhere in the input, before participant rules.
    pub fast_ratings_total: usize,
    pub incomplete: RuleCounts,
    pub gotcha: RuleCounts,
    pub speed: RuleCounts,
    /// Critical ratings of surviving participants before individual drops.
    pub critical_after_participant_rules: usize,
    pub retained_ratings: usize,
}

impl ExclusionReport {
    /// inputs = retained + individually dropped + participant-level drops.
    pub fn reconciles(&self) -> bool {
        self.n_critical_input
            == self.retained_ratings
                + self.excluded_fast_ratings
                + self.incomplete.critical_ratings
                + self.gotcha.critical_ratings
                + self.speed.critical_ratings
            && self.critical_after_participant_rules == self.retained_ratings + self.excluded_fast_ratings
    }
}

impl fmt::Display for ExclusionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "records: {} from {} participants",
            self.n_records, self.n_participants
        )?;
        writeln!(f, "critical ratings in: {}", self.n_critical_input)?;
        let rule = |f: &mut fmt::Formatter<'_>, name: &str, c: &RuleCounts| {
            writeln!(
                f,
                "excluded ({name}): {} participants, {} critical ratings",
                c.participants, c.critical_ratings
            )
        };
        rule(f, "fewer than min items", &self.incomplete)?;
        rule(f, "gotcha", &self.gotcha)?;
        rule(f, "speed", &self.speed)?;
        writeln!(
            f,
            "critical ratings after participant rules: {}",
            self.critical_after_participant_rules
        )?;
        writeln!(
            f,
            "individually fast ratings dropped: {} ({} fast before participant rules)",
            self.excluded_fast_ratings, self.fast_ratings_total
        )?;
        write!(f, "retained ratings: {}", self.retained_ratings)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QcOutcome {
    pub retained: Vec<RetainedRating>,
    pub report: ExclusionReport,
}

fn validate(records: &[TrialRecord]) -> Result<()> {
    let offenders: Vec<String> = records
        .iter()
        .filter(|r| !(r.rt_ms.is_finite() && r.rt_ms > 0.0))
        .map(|r| format!("{}#{}", r.session_id, r.trial_index))
        .collect();
    if !offenders.is_empty() {
        return Err(Error::validation(format!(
            "{} record(s) without a usable rt_ms: {}",
            offenders.len(),
            offenders.join(", ")
        )));
    }
    Ok(())
}

fn gotcha_ok(records: &[&TrialRecord], config: &QcConfig) -> bool {
    let answers: Vec<bool> = records
        .iter()
        .filter(|r| r.item_type == ItemType::Gotcha)
        .map(|r| r.choice_variant == ChoiceVariant::Correct)
        .collect();
    let correct = answers.iter().filter(|c| **c).count();
    match config.gotcha_rule {
        GotchaRule::Strict => answers.len() >= config.required_gotchas && correct == answers.len(),
        GotchaRule::Lenient => correct > 0,
    }
}

pub fn apply_exclusions(records: &[TrialRecord], config: &QcConfig) -> Result<QcOutcome> {
    validate(records)?;
    let floor = |r: &TrialRecord| speed_floor_with(config.speed_factor, r.char_length);
    let is_fast = |r: &TrialRecord| r.rt_ms < floor(r);

    // Sorting first makes the outcome independent of input order.
    let mut by_participant: BTreeMap<&str, Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        by_participant.entry(&r.participant_id).or_default().push(r);
    }
    for rs in by_participant.values_mut() {
        rs.sort_by(|a, b| a.session_id.cmp(&b.session_id).then(a.trial_index.cmp(&b.trial_index)));
        rs.dedup_by(|a, b| a.session_id == b.session_id && a.trial_index == b.trial_index);
    }

    let mut report = ExclusionReport {
        n_records: records.len(),
        n_participants: by_participant.len(),
        ..Default::default()
    };
    let mut retained = Vec::new();
    let mut seen_critical = BTreeSet::new();

    for (pid, rs) in &by_participant {
        let critical: Vec<&TrialRecord> = rs
            .iter()
            .copied()
            .filter(|r| r.item_type == ItemType::Critical)
            .collect();
        for r in &critical {
            seen_critical.insert((r.session_id.as_str(), r.trial_index));
        }
        report.fast_ratings_total += critical.iter().filter(|r| is_fast(r)).count();
        let n_crit = critical.len();

        if rs.len() < config.min_items {
            report.excluded_incomplete.push(pid.to_string());
            report.incomplete.participants += 1;
            report.incomplete.critical_ratings += n_crit;
            continue;
        }
        if !gotcha_ok(rs, config) {
            report.excluded_gotcha.push(pid.to_string());
            report.gotcha.participants += 1;
            report.gotcha.critical_ratings += n_crit;
            continue;
        }
        if rs.iter().filter(|r| is_fast(r)).count() >= config.fast_trial_limit {
            report.excluded_speed.push(pid.to_string());
            report.speed.participants += 1;
            report.speed.critical_ratings += n_crit;
            continue;
        }
        report.critical_after_participant_rules += n_crit;
        for r in critical {
            if is_fast(r) {
                report.excluded_fast_ratings += 1;
                continue;
            }
            retained.push(RetainedRating {
                participant_id: r.participant_id.clone(),
                item_id: r.item_id.clone(),
                choice_variant: r.choice_variant,
                rt_ms: r.rt_ms,
            });
        }
    }
    report.n_critical_input = seen_critical.len();
    report.retained_ratings = retained.len();
    Ok(QcOutcome { retained, report })
}

/// Reads exported trial records. A missing or null `rt_ms` is kept as NaN so
/// that [`apply_exclusions`] can list every offender at once.
pub fn read_qc_records<R: BufRead>(input: R) -> Result<Vec<TrialRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        let Some(obj) = value.as_object_mut() else {
            return Err(Error::parse(i + 1, "expected a JSON object"));
        };
        if obj
            .get("event")
            .and_then(|e| e.as_str())
            .is_some_and(|e| e != "response")
        {
            continue;
        }
        let rt = obj.get("rt_ms").and_then(|v| v.as_f64());
        obj.insert("rt_ms".into(), serde_json::json!(0.0));
        let mut record: TrialRecord = serde_json::from_value(value).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        record.rt_ms = rt.unwrap_or(f64::NAN);
        out.push(record);
    }
    Ok(out)
}

pub fn write_retained_csv<W: Write>(ratings: &[RetainedRating], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["participant_id", "item_id", "choice_variant", "rt_ms"])?;
    for r in ratings {
        w.write_record([
            r.participant_id.as_str(),
            r.item_id.as_str(),
            &r.choice_variant.to_string(),
            &r.rt_ms.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_retained_csv<R: Read>(input: R) -> Result<Vec<RetainedRating>> {
    let mut rdr = csv::Reader::from_reader(input);
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::parse(i + 2, e.to_string())))
        .collect()
}
