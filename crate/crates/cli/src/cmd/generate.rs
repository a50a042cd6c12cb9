use std::io::{BufRead, Write};
use std::time::Duration;

use anyhow::Context;
use lexdrift_core::corpus::{split_for_continuation, word_count};
use lexdrift_core::genclient::{CleanMode, EndpointProfile, GenClient, RetryPolicy};
use lexdrift_net::HttpTransport;
use serde_json::{json, Map, Value};

use crate::config::pick;
use crate::manifest::Run;
use crate::{CleanKind, Ctx, GenerateArgs, GenerateTask};

fn client(ctx: &Ctx, args: &GenerateArgs, profile: EndpointProfile) -> anyhow::Result<GenClient<HttpTransport>> {
    let api = &ctx.file.api;
    let base = args
        .base_url
        .clone()
        .or_else(|| api.base_url.clone())
        .ok_or_else(|| lexdrift_core::Error::Config("no API base URL (--base-url or LEXDRIFT_API_BASE)".into()))?;
    let key = args.api_key.clone().or_else(|| api.api_key.clone());
    let mut transport =
        HttpTransport::new(&base, key)?.with_timeout(Duration::from_secs(api.timeout_secs.unwrap_or(120)));
    if let Some(path) = args.path.as_deref().or(api.path.as_deref()) {
        transport = transport.with_path(path);
    }
    for (name, model) in &api.models {
        let p: EndpointProfile = name.parse()?;
        transport = transport.with_model(p, model);
    }
    if let Some(model) = &args.model {
        transport = transport.with_model(profile, model);
    }
    let defaults = RetryPolicy::default();
    let retry = RetryPolicy {
        attempts: api.attempts.unwrap_or(defaults.attempts),
        initial_backoff_ms: api.backoff_ms.unwrap_or(defaults.initial_backoff_ms),
        multiplier: defaults.multiplier,
    };
    let rate = pick(args.rate, api.rate_per_second, 2.0);
    Ok(GenClient::new(transport)
        .with_retry(retry)
        .with_rate_limit((rate > 0.0).then_some(rate))?
        .with_params(api.params.clone()))
}

fn read_objects(reader: impl BufRead) -> anyhow::Result<Vec<Map<String, Value>>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Value>(&line).with_context(|| format!("line {}", i + 1))? {
            Value::Object(m) => out.push(m),
            _ => anyhow::bail!("line {}: expected a JSON object", i + 1),
        }
    }
    Ok(out)
}

fn field<'a>(obj: &'a Map<String, Value>, name: &str, line: usize) -> anyhow::Result<&'a str> {
    obj.get(name)
        .and_then(Value::as_str)
        .ok_or_else(|| anyhow::anyhow!("record {line}: missing string field {name:?}"))
}

fn id_of(obj: &Map<String, Value>, line: usize) -> String {
    ["id", "abstract_id", "doc_id"]
        .iter()
        .find_map(|k| match obj.get(*k) {
            Some(Value::String(s)) => Some(s.clone()),
            Some(Value::Number(n)) => Some(n.to_string()),
            _ => None,
        })
        .unwrap_or_else(|| line.to_string())
}

fn default_profile(task: GenerateTask) -> EndpointProfile {
    match task {
        GenerateTask::Continue => EndpointProfile::BaseModel,
        GenerateTask::Variants => EndpointProfile::InstructModel,
        GenerateTask::Keywords | GenerateTask::Clean => EndpointProfile::Cleaner,
    }
}

pub fn run(ctx: &Ctx, args: GenerateArgs) -> anyhow::Result<()> {
    let profile = match &args.profile {
        Some(p) => p.parse()?,
        None => default_profile(args.task),
    };
    let gen = client(ctx, &args, profile)?;
    let mut run = Run::start("generate", &args)?;
    run.seed("base_seed", ctx.seed);
    let inputs = read_objects(run.input(&args.input)?)?;
    let mut out = run.output(&args.out)?;
    let mut emit = |v: Value| -> anyhow::Result<()> {
        serde_json::to_writer(&mut out, &v)?;
        out.write_all(b"\n")?;
        Ok(())
    };

    let (mut written, mut failed, mut skipped) = (0usize, 0usize, 0usize);
    for (i, obj) in inputs.iter().enumerate() {
        let line = i + 1;
        let id = id_of(obj, line);
        let result = match args.task {
            GenerateTask::Continue => {
                let text = field(obj, "text", line)?;
                if word_count(text) < args.min_words {
                    skipped += 1;
                    continue;
                }
                let (first, second) = split_for_continuation(text)?;
                gen.continue_abstract(profile, &first).map(|c| {
                    vec![json!({
                        "id": id,
                        "profile": profile,
                        "first_half": first,
                        "original_second_half": second,
                        "continuation": c,
                    })]
                })
            }
            GenerateTask::Keywords => gen
                .summarize_keywords(field(obj, "text", line)?)
                .map(|k| vec![json!({"id": id, "keywords": k})]),
            GenerateTask::Variants => {
                let keywords = field(obj, "keywords", line)?;
                let results = gen.generate_variants(keywords, args.n, ctx.seed);
                let mut ok = Vec::new();
                for (j, r) in results.into_iter().enumerate() {
                    match r {
                        Ok(text) => ok.push(json!({
                            "abstract_id": id,
                            "variant_id": (j + 1).to_string(),
                            "seed": ctx.seed.wrapping_add(j as u64),
                            "text": text,
                        })),
                        Err(e) => {
                            failed += 1;
                            log::warn!("abstract {id} variant {}: {e}", j + 1);
                        }
                    }
                }
                Ok(ok)
            }
            GenerateTask::Clean => {
                let mode = match args.clean_mode {
                    CleanKind::Continuation => CleanMode::ContinuationClean,
                    CleanKind::Variant => CleanMode::VariantClean,
                };
                let text = field(obj, "text", line)?;
                gen.clean_text(text, mode).map(|cleaned| {
                    let mut o = obj.clone();
                    o.insert("raw_text".into(), Value::String(text.to_string()));
                    o.insert("text".into(), Value::String(cleaned));
                    vec![Value::Object(o)]
                })
            }
        };
        match result {
            Ok(values) => {
                for v in values {
                    emit(v)?;
                    written += 1;
                }
            }
            Err(e) => {
                failed += 1;
                log::warn!("record {id}: {e}");
            }
        }
    }
    out.flush()?;
    drop(out);
    run.finish()?;
    ctx.say(format!("{written} written, {failed} failed, {skipped} skipped"));
    if written == 0 && failed > 0 {
        anyhow::bail!("every generation request failed");
    }
    Ok(())
}
