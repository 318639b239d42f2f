//! Subcommand implementations.

use std::collections::BTreeMap;
use std::io::Write;

use anyhow::{anyhow, Context};
use evoprompt_core::assembly::{assemble, reassemble_after_update, PromptState};
use evoprompt_core::config::EngineConfig;
use evoprompt_core::domain::{
    detect_trigger, ExecutionTrace, GuidelineDomain, StreamLabel, TriggerPolicy,
};
use evoprompt_core::gateway::Gateway;
use evoprompt_core::memory::{
    optimize_domain, StrategicInsert, StrategicMemory, TacticalMemory,
};
use evoprompt_core::orchestrator::{parse_suite, Engine, PerspectiveStream, SyntheticAgent};
use evoprompt_core::routing::{classify, route, GuidelineSource, MemoryView, RoutingOutcome};
use evoprompt_core::synthesis::{select_best, synthesize_candidates, SynthesisContext};
use evoprompt_core::testkit::HintResponder;

use crate::args::{MemoryAction, ReplayArgs, RunArgs};
use crate::config_resolve;
use crate::CliError;

/// Builds the gateway: the configured provider, or the deterministic
/// responder teeing fixtures into `record`.
fn build_gateway(config: &EngineConfig, record: Option<&std::path::PathBuf>) -> Result<Gateway, CliError> {
    match record {
        Some(dir) => Ok(Gateway::new(Box::new(
            evoprompt_core::gateway::RecordingProvider::new(HintResponder::new(), dir),
        ))),
        None => Ok(Gateway::new(
            config.provider.build().map_err(|e| CliError::config(anyhow!(e)))?,
        )),
    }
}

/// `run`: evaluate a suite, write the JSON and text reports, print the text
/// report. Task failures do not affect the exit code; engine faults do.
pub fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let config = config_resolve::resolve(&args.config)?;
    let suite_text = std::fs::read_to_string(&args.suite)
        .with_context(|| format!("cannot read suite {}", args.suite.display()))
        .map_err(CliError::config)?;
    let tasks = parse_suite(&suite_text).map_err(|e| CliError::config(anyhow!(e)))?;

    let gateway = build_gateway(&config, args.record.as_ref())?;
    let engine = Engine::with_gateway(config, gateway).map_err(|e| CliError::config(anyhow!(e)))?;
    let report = engine
        .evaluate_suite(&tasks, &|task, _stream| {
            Box::new(SyntheticAgent::new(
                task.agent_name.clone().unwrap_or_else(|| "worker".to_string()),
            ))
        })
        .map_err(CliError::engine)?;

    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&args.report_json, &json)
        .with_context(|| format!("cannot write {}", args.report_json.display()))
        .map_err(CliError::engine)?;
    let text = report.render_text();
    std::fs::write(&args.report_text, &text)
        .with_context(|| format!("cannot write {}", args.report_text.display()))
        .map_err(CliError::engine)?;
    print!("{text}");
    println!(
        "Reports written to {} and {}",
        args.report_json.display(),
        args.report_text.display()
    );
    Ok(())
}

/// Per-agent replay state: memories plus the evolving prompt.
struct ReplayLane {
    strategic: StrategicMemory,
    tactical: TacticalMemory,
    prompt: PromptState,
    baseline_texts: Vec<String>,
}

/// `replay`: walk a recorded trace, fire triggers, run the full synthesis
/// pipeline against the configured provider, and print the memory deltas.
/// Nothing is persisted — existing snapshots are read as the baseline only.
pub fn cmd_replay(args: &ReplayArgs) -> Result<(), CliError> {
    let config = config_resolve::resolve(&args.config)?;
    let text = std::fs::read_to_string(&args.trace)
        .with_context(|| format!("cannot read trace {}", args.trace.display()))
        .map_err(CliError::config)?;
    let task_id = args.task_id.clone().unwrap_or_else(|| {
        args.trace
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "replay".to_string())
    });
    let trace = ExecutionTrace::from_ndjson(&task_id, &text).map_err(|e| CliError::config(anyhow!(e)))?;
    let task_instruction = args.task_instruction.clone().unwrap_or_else(|| task_id.clone());
    let stream = StreamLabel::from_str_lossy(&args.stream);
    let rubric = PerspectiveStream::new(stream.clone(), &config.memory_root).enhancement_rubric;

    let gateway = Gateway::new(config.provider.build().map_err(|e| CliError::config(anyhow!(e)))?);
    let mut policy = TriggerPolicy::new(config.enhancement_frequency);
    let mut lanes: BTreeMap<String, ReplayLane> = BTreeMap::new();
    let mut accepted = 0usize;

    println!("Replaying {} steps from {}", trace.steps.len(), args.trace.display());
    for step in &trace.steps {
        let Some(trigger) = detect_trigger(step, &mut policy) else {
            continue;
        };
        let lane = match lanes.get(&step.agent_name) {
            Some(_) => lanes.get_mut(&step.agent_name).expect("just checked"),
            None => {
                let strategic = StrategicMemory::load_or_new(
                    &config.memory_root,
                    &stream,
                    &step.agent_name,
                    config.optimizer_limits(),
                )
                .map_err(CliError::engine)?;
                let tactical = TacticalMemory::new(&task_id, config.tactical_cap);
                let prompt = assemble(
                    &args.base_prompt,
                    &strategic.all(),
                    tactical.entries(),
                    config.placement,
                );
                let baseline_texts = strategic.texts();
                lanes.entry(step.agent_name.clone()).or_insert(ReplayLane {
                    strategic,
                    tactical,
                    prompt,
                    baseline_texts,
                })
            }
        };

        let mut applied_rules = lane.strategic.texts();
        for t in lane.tactical.texts() {
            if !applied_rules.contains(&t) {
                applied_rules.push(t);
            }
        }
        let ctx = SynthesisContext {
            agent_name: &step.agent_name,
            agent_role: &args.agent_role,
            task_instruction: &task_instruction,
            step,
            trigger: &trigger,
            current_system_prompt: &lane.prompt.assembled_system_text,
            applied_rules: &applied_rules,
            perspective: &stream,
            enhancement_rubric: rubric,
        };
        let candidates = match synthesize_candidates(&gateway, &ctx, config.n_candidates) {
            Ok(c) => c,
            Err(e) => {
                println!("  step {:>3} {:?}: synthesis failed ({e}); skipped", step.step_number, trigger.mode);
                continue;
            }
        };
        if candidates.is_empty() {
            println!("  step {:>3} {:?}: no improvement suggested", step.step_number, trigger.mode);
            continue;
        }
        let best = match select_best(&gateway, &candidates, &ctx) {
            Ok(b) => b,
            Err(e) => {
                println!("  step {:>3} {:?}: selection failed ({e}); skipped", step.step_number, trigger.mode);
                continue;
            }
        };
        let view = MemoryView {
            strategic_texts: lane.strategic.texts(),
            tactical_texts: lane.tactical.texts(),
        };
        let cls = match classify(&gateway, &best, &view, &GuidelineDomain::ALL) {
            Ok(c) => c,
            Err(e) => {
                println!("  step {:>3} {:?}: classification failed ({e}); skipped", step.step_number, trigger.mode);
                continue;
            }
        };
        let source = GuidelineSource {
            agent_name: step.agent_name.clone(),
            task_id: task_id.clone(),
            step_number: step.step_number,
            stream: stream.clone(),
        };
        let outcome = route(&best, &cls, config.c_thresh, config.accept_thresh, &source);
        println!(
            "  step {:>3} {:?} [{}] → {}",
            step.step_number,
            trigger.mode,
            step.agent_name,
            outcome.kind_str()
        );
        let inserted = match outcome {
            RoutingOutcome::Strategic(g) => {
                println!("        + [{} {:.2}] {}", g.domain, g.confidence, g.text);
                matches!(lane.strategic.insert(g, &gateway), StrategicInsert::Inserted(_))
            }
            RoutingOutcome::Tactical(g) => {
                println!("        + [tactical {:.2}] {}", g.confidence, g.text);
                lane.tactical.insert(g);
                true
            }
            _ => false,
        };
        if inserted {
            accepted += 1;
            lane.prompt =
                reassemble_after_update(&lane.prompt, &lane.strategic.all(), lane.tactical.entries());
        }
    }

    println!("\nMemory deltas (not persisted):");
    if accepted == 0 {
        println!("  (none)");
    }
    for (agent, lane) in &lanes {
        let new_strategic: Vec<String> = lane
            .strategic
            .texts()
            .into_iter()
            .filter(|t| !lane.baseline_texts.contains(t))
            .collect();
        if !new_strategic.is_empty() || !lane.tactical.is_empty() {
            println!("  agent {agent}:");
            for t in &new_strategic {
                println!("    strategic + {t}");
            }
            for g in lane.tactical.entries() {
                println!("    tactical  + {}", g.text);
            }
        }
    }
    Ok(())
}

fn load_all_snapshots(
    config: &EngineConfig,
    stream_filter: Option<&str>,
    agent_filter: Option<&str>,
) -> Result<Vec<StrategicMemory>, CliError> {
    let root = &config.memory_root;
    let mut stores = Vec::new();
    if !root.is_dir() {
        return Ok(stores);
    }
    let mut stream_dirs: Vec<_> = std::fs::read_dir(root)
        .map_err(|e| CliError::engine(anyhow!(e)))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .collect();
    stream_dirs.sort_by_key(|e| e.file_name());
    for stream_dir in stream_dirs {
        let stream_name = stream_dir.file_name().to_string_lossy().into_owned();
        if stream_filter.is_some_and(|f| f != stream_name) {
            continue;
        }
        let stream = StreamLabel::from_str_lossy(&stream_name);
        let mut files: Vec<_> = std::fs::read_dir(stream_dir.path())
            .map_err(|e| CliError::engine(anyhow!(e)))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort_by_key(|e| e.file_name());
        for file in files {
            let agent = file
                .path()
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            if agent_filter.is_some_and(|f| f != agent) {
                continue;
            }
            let store = StrategicMemory::load(root, &stream, &agent, config.optimizer_limits())
                .map_err(|e| CliError::engine(anyhow!(e)))?;
            stores.push(store);
        }
    }
    Ok(stores)
}

/// `memory`: inspect snapshots, force-run the optimizer, or clear a stream.
pub fn cmd_memory(action: &MemoryAction) -> Result<(), CliError> {
    match action {
        MemoryAction::Inspect { stream, agent, config } => {
            let config = config_resolve::resolve(config)?;
            let stores = load_all_snapshots(&config, stream.as_deref(), agent.as_deref())?;
            if stores.is_empty() {
                println!("(no memory)");
                return Ok(());
            }
            for store in stores {
                println!("stream {} / agent {}:", store.stream, store.agent_name);
                for (domain, bucket) in store.buckets() {
                    println!("  {} ({} guidelines)", domain, bucket.len());
                    for g in bucket {
                        println!("    [{:.2}] {}", g.confidence, g.text);
                    }
                }
            }
            Ok(())
        }
        MemoryAction::Optimize {
            stream,
            agent,
            domain,
            config,
        } => {
            let config = config_resolve::resolve(config)?;
            let stream = StreamLabel::from_str_lossy(stream);
            let domain = parse_domain(domain)?;
            let mut store =
                StrategicMemory::load(&config.memory_root, &stream, agent, config.optimizer_limits())
                    .map_err(|e| CliError::engine(anyhow!(e)))?;
            let gateway = Gateway::new(config.provider.build().map_err(|e| CliError::config(anyhow!(e)))?);
            let (optimized, report) =
                optimize_domain(store.bucket(domain), domain, &gateway, &config.optimizer_limits());
            store.replace_bucket(domain, optimized);
            store.save(&config.memory_root).map_err(|e| CliError::engine(anyhow!(e)))?;
            println!(
                "optimized {domain}: before={} after={} iterations={}",
                report.before_count, report.after_count, report.iterations_used
            );
            for c in &report.conflicts_resolved {
                println!("  conflict {:?} → {}", c.pair, c.merged_text);
            }
            for s in &report.subsumptions_pruned {
                println!("  pruned #{} (subsumed by #{}): {}", s.specific, s.general, s.removed_text);
            }
            for m in &report.consolidations_merged {
                println!("  merged {:?} → {}", m.group, m.merged_text);
            }
            if let Some(failure) = &report.failure {
                println!("  degraded: {failure}");
            }
            Ok(())
        }
        MemoryAction::Clear { stream, yes, config } => {
            let config = config_resolve::resolve(config)?;
            let dir = config.memory_root.join(stream);
            if !dir.is_dir() {
                println!("(no memory for stream {stream})");
                return Ok(());
            }
            if !*yes && !confirm(&format!("Delete all snapshots under {}?", dir.display()))? {
                println!("aborted");
                return Ok(());
            }
            std::fs::remove_dir_all(&dir).map_err(|e| CliError::engine(anyhow!(e)))?;
            println!("cleared {}", dir.display());
            Ok(())
        }
    }
}

fn parse_domain(raw: &str) -> Result<GuidelineDomain, CliError> {
    GuidelineDomain::ALL
        .iter()
        .copied()
        .find(|d| d.wire_name() == raw)
        .ok_or_else(|| {
            CliError::config(anyhow!(
                "unknown domain {raw:?}; expected one of {}",
                GuidelineDomain::ALL
                    .iter()
                    .map(|d| d.wire_name())
                    .collect::<Vec<_>>()
                    .join(", ")
            ))
        })
}

fn confirm(question: &str) -> Result<bool, CliError> {
    print!("{question} [y/N] ");
    std::io::stdout().flush().ok();
    let mut answer = String::new();
    std::io::stdin()
        .read_line(&mut answer)
        .map_err(|e| CliError::engine(anyhow!(e)))?;
    Ok(matches!(answer.trim(), "y" | "Y" | "yes"))
}
