use std::io::Write;
use std::sync::{Arc, Mutex};

use lexdrift_core::qc::{apply_exclusions, read_qc_records, GotchaRule, QcConfig};
use lexdrift_core::study::{read_records, write_records, SteppingClock, StudyConfig, StudyEngine};
use lexdrift_core::synth::{self, StudySimConfig};

#[derive(Clone, Default)]
struct SharedLog(Arc<Mutex<Vec<u8>>>);

impl Write for SharedLog {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

fn engine(log: SharedLog) -> StudyEngine {
    StudyEngine::new(
        StudyConfig::new(synth::toy_pairs(30), 3),
        Box::new(log),
        Box::new(SteppingClock::new(0, 250)),
    )
    .unwrap()
}

#[test]
fn replay_rebuilds_every_session() {
    let log = SharedLog::default();
    let live = engine(log.clone());
    let cfg = StudySimConfig {
        participants: 40,
        ..StudySimConfig::default()
    };
    synth::simulate_study(&live, &cfg).unwrap();
    let bytes = log.0.lock().unwrap().clone();

    let replayed = StudyEngine::replay(
        StudyConfig::new(synth::toy_pairs(30), 3),
        bytes.as_slice(),
        Box::new(std::io::sink()),
        Box::new(SteppingClock::new(0, 250)),
    )
    .unwrap();
    assert_eq!(replayed.snapshot(), live.snapshot());
    assert_eq!(replayed.export(), live.export());

    // The log is chronological, the export ordered by session; same records.
    let sorted = |mut v: Vec<lexdrift_core::study::TrialRecord>| {
        v.sort_by(|a, b| (&a.session_id, a.trial_index).cmp(&(&b.session_id, b.trial_index)));
        v
    };
    assert_eq!(sorted(read_records(bytes.as_slice()).unwrap()), live.export());
    assert_eq!(sorted(read_qc_records(bytes.as_slice()).unwrap()), live.export());
}

#[test]
fn truncated_log_resumes_mid_session() {
    let log = SharedLog::default();
    let live = engine(log.clone());
    let s = live.create_session("p1").unwrap();
    let trial =
        |e: &StudyEngine, i: usize| e.record_response(&s.session_id, i, lexdrift_core::study::Side::Left, 8000.0);
    for i in 1..=5 {
        trial(&live, i).unwrap();
    }
    let bytes = log.0.lock().unwrap().clone();
    let resumed = StudyEngine::replay(
        StudyConfig::new(synth::toy_pairs(30), 3),
        bytes.as_slice(),
        Box::new(std::io::sink()),
        Box::new(SteppingClock::new(10_000, 250)),
    )
    .unwrap();
    assert!(
        trial(&resumed, 5).is_err(),
        "a replayed trial must not be accepted twice"
    );
    assert!(trial(&resumed, 6).is_ok());
}

#[test]
fn exported_records_round_trip() {
    let live = engine(SharedLog::default());
    let records = synth::qc_fixture(&live, 9).unwrap();
    let mut buf = Vec::new();
    write_records(&records, &mut buf).unwrap();
    assert_eq!(read_records(buf.as_slice()).unwrap(), records);
}

#[test]
fn stricter_rules_never_retain_more() {
    let live = engine(SharedLog::default());
    let records = synth::simulate_study(
        &live,
        &StudySimConfig {
            participants: 120,
            seed: 4,
            ..StudySimConfig::default()
        },
    )
    .unwrap();
    let base = QcConfig::default();
    let retained = |c: QcConfig| apply_exclusions(&records, &c).unwrap().report.retained_ratings;
    let n = retained(base);
    let mut last = usize::MAX;
    for factor in [0.0, 0.2, 0.4, 0.8, 1.6] {
        let r = retained(QcConfig {
            speed_factor: factor,
            ..base
        });
        assert!(r <= last, "speed factor {factor} retained more");
        last = r;
    }
    assert!(retained(QcConfig { min_items: 25, ..base }) <= n);
    assert!(
        retained(QcConfig {
            gotcha_rule: GotchaRule::Lenient,
            ..base
        }) >= n
    );
    assert!(
        retained(QcConfig {
            fast_trial_limit: 1,
            ..base
        }) <= n
    );
}
