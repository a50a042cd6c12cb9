use std::fs::{File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use lexdrift_core::corpus::write_tagged_records;
use lexdrift_core::itemgen::{read_pairs, ItemPair};
use lexdrift_core::study::{
    write_records, CharLengthMode, SteppingClock, StudyConfig, StudyEngine, SystemClock, IDLE_TIMEOUT_MS,
};
use lexdrift_core::synth::{self, CorpusConfig, StudySimConfig, VariantConfig};
use lexdrift_net::{router, AppState};

use crate::config::pick;
use crate::manifest::Run;
use crate::{Ctx, ServeArgs, SimulateArgs, SimulateWhat};

/// Fixed start for simulated timestamps so reruns match byte for byte.
const SIM_EPOCH_MS: i64 = 1_700_000_000_000;

fn load_pairs(run: &mut Run, path: &Path) -> anyhow::Result<Vec<ItemPair>> {
    read_pairs(run.input(path)?).with_context(|| format!("reading {}", path.display()))
}

fn study_config(ctx: &Ctx, pairs: Vec<ItemPair>, critical: Option<usize>) -> anyhow::Result<StudyConfig> {
    let mut cfg = StudyConfig::new(pairs, ctx.seed);
    cfg.critical_per_session = pick(critical, ctx.file.study.critical_per_session, cfg.critical_per_session);
    if let Some(f) = ctx.file.qc.speed_factor {
        cfg.speed_factor = f;
    }
    cfg.char_length = match ctx.file.study.char_length.as_deref() {
        None | Some("longer") => CharLengthMode::Longer,
        Some("sum") => CharLengthMode::Sum,
        Some(other) => {
            return Err(lexdrift_core::Error::Config(format!("unknown char_length mode {other:?}")).into());
        }
    };
    Ok(cfg)
}

pub fn serve(ctx: &Ctx, args: ServeArgs) -> anyhow::Result<()> {
    let mut run = Run::start("serve", &args)?;
    let pairs = load_pairs(&mut run, &args.pairs)?;
    let config = study_config(ctx, pairs, args.critical_per_session)?;
    let n_pairs = config.pairs.len();

    let existing = args.log.exists();
    let events = if existing {
        Some(BufReader::new(File::open(&args.log)?))
    } else {
        if let Some(dir) = args.log.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        None
    };
    let sink = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&args.log)
        .with_context(|| format!("opening log {}", args.log.display()))?;
    let engine = match events {
        Some(r) => StudyEngine::replay(config, r, Box::new(sink), Box::new(SystemClock))
            .with_context(|| format!("replaying {}", args.log.display()))?,
        None => StudyEngine::new(config, Box::new(sink), Box::new(SystemClock))?,
    };
    if existing {
        log::info!(
            "replayed {} session(s) from {}",
            engine.snapshot().len(),
            args.log.display()
        );
    }
    let engine = Arc::new(engine);
    let admin_token = args.admin_token.clone().or_else(|| ctx.file.study.admin_token.clone());
    if admin_token.is_none() {
        log::warn!("no admin token configured; export is disabled");
    }
    let static_dir = args
        .static_dir
        .clone()
        .or_else(|| ctx.file.study.static_dir.as_ref().map(PathBuf::from));
    let app = router(
        AppState {
            engine: engine.clone(),
            admin_token,
        },
        static_dir,
    );
    let addr = format!("{}:{}", args.host, args.port);
    ctx.say(format!("serving {n_pairs} item pairs on http://{addr}"));

    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        lexdrift_net::spawn_expiry(engine, Duration::from_secs(60), IDLE_TIMEOUT_MS);
        lexdrift_net::serve(&addr, app).await
    })?;
    Ok(())
}

pub fn simulate(ctx: &Ctx, args: SimulateArgs) -> anyhow::Result<()> {
    let mut run = Run::start("simulate", &args)?;
    run.seed("seed", ctx.seed);
    match args.what {
        SimulateWhat::Corpora {
            out_dir,
            documents,
            tokens_per_document,
        } => {
            let cfg = CorpusConfig {
                documents,
                tokens_per_document,
                seed: ctx.seed,
                ..CorpusConfig::default()
            };
            let (a, b) = synth::corpus_pair(&cfg)?;
            for corpus in [&a, &b] {
                let mut out = run.output(&out_dir.join(format!("{}.jsonl", corpus.corpus_id)))?;
                write_tagged_records(corpus, &mut out)?;
                out.flush()?;
            }
            run.finish()?;
            ctx.say(format!(
                "wrote {} and {} documents ({} / {} tokens)",
                a.documents.len(),
                b.documents.len(),
                a.total_tokens(),
                b.total_tokens()
            ));
        }
        SimulateWhat::Variants {
            out,
            abstracts,
            per_abstract,
        } => {
            let cfg = VariantConfig {
                abstracts,
                per_abstract,
                seed: ctx.seed,
                ..VariantConfig::default()
            };
            let records = synth::variant_records(&cfg);
            let mut w = run.output(&out)?;
            for r in &records {
                serde_json::to_writer(&mut w, r)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
            drop(w);
            run.finish()?;
            ctx.say(format!("wrote {} variants for {abstracts} abstracts", records.len()));
        }
        SimulateWhat::Responses {
            pairs,
            out,
            participants,
        } => {
            let pairs = load_pairs(&mut run, &pairs)?;
            let config = study_config(ctx, pairs, None)?;
            let engine = StudyEngine::new(
                config,
                Box::new(std::io::sink()),
                Box::new(SteppingClock::new(SIM_EPOCH_MS, 1_000)),
            )?;
            let sim = StudySimConfig {
                participants,
                seed: ctx.seed,
                ..StudySimConfig::default()
            };
            let records = synth::simulate_study(&engine, &sim)?;
            let mut w = run.output(&out)?;
            write_records(&records, &mut w)?;
            w.flush()?;
            drop(w);
            run.finish()?;
            ctx.say(format!("{participants} participants, {} trial records", records.len()));
        }
    }
    Ok(())
}
