//! Episode orchestration: the act → trigger → synthesize → select →
//! classify → route → (optimize) → reassemble loop, perspective streams,
//! and suite evaluation.

mod adapter;
mod report;
pub mod synthetic;

pub use adapter::{
    parse_suite, AdapterFault, AgentAdapter, SuccessCheck, SuiteParseError, TaskSpec,
    DEFAULT_MAX_STEPS,
};
pub use report::{
    GuidelineSummary, ModeDomainCount, RoutingRecord, RunReport, StreamEpisodeReport,
    SuiteAggregate, SuiteReport, TaskReport,
};
pub use synthetic::{InjectorKind, InjectorSpec, SyntheticAgent};

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{assemble, reassemble_after_update, PromptState};
use crate::config::{ConfigError, EngineConfig};
use crate::domain::{
    detect_trigger, ExecutionTrace, Guideline, GuidelineDomain, GuidelineMode, GuidelineScope,
    StepOutcome, StreamLabel, TraceStatus, TriggerEvent, TriggerPolicy,
};
use crate::gateway::{Gateway, GatewayError, RubricKind};
use crate::memory::{MemoryError, StrategicInsert, StrategicMemory, TacticalMemory};
use crate::routing::{classify, route, GuidelineSource, MemoryView, RoutingOutcome};
use crate::synthesis::{select_best, synthesize_candidates, SynthesisContext, SynthesisError};

/// One independent evolution lane: its own persona rubric, its own memory
/// subtree, its own prompt states. Streams share nothing mutable.
#[derive(Debug, Clone)]
pub struct PerspectiveStream {
    pub label: StreamLabel,
    pub enhancement_rubric: RubricKind,
    /// Memory root shared by all streams; this stream only touches
    /// `<memory_root>/<label>/`.
    pub memory_root: PathBuf,
    pub prompt_states: BTreeMap<String, PromptState>,
}

impl PerspectiveStream {
    pub fn new(label: StreamLabel, memory_root: impl Into<PathBuf>) -> PerspectiveStream {
        let enhancement_rubric = match &label {
            StreamLabel::Efficiency => RubricKind::EnhancementEfficiency,
            StreamLabel::Thoroughness | StreamLabel::Custom(_) => RubricKind::EnhancementThoroughness,
        };
        PerspectiveStream {
            label,
            enhancement_rubric,
            memory_root: memory_root.into(),
            prompt_states: BTreeMap::new(),
        }
    }

    /// The directory this stream's snapshots live in.
    pub fn stream_dir(&self) -> PathBuf {
        self.memory_root.join(self.label.as_str())
    }
}

/// Phase-by-phase audit log of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum EngineEvent {
    Act {
        step: u32,
        outcome: StepOutcome,
    },
    Trigger {
        step: u32,
        mode: GuidelineMode,
    },
    Synthesize {
        step: u32,
        requested: usize,
        produced: usize,
    },
    Select {
        step: u32,
        chosen_index: usize,
    },
    Classify {
        step: u32,
        scope: GuidelineScope,
        confidence: f64,
        is_duplicate: bool,
    },
    Route {
        step: u32,
        outcome: String,
    },
    Optimize {
        step: u32,
        domain: GuidelineDomain,
        before: usize,
        after: usize,
        iterations: usize,
    },
    Reassemble {
        step: u32,
        generation: u64,
    },
}

impl EngineEvent {
    pub fn phase_name(&self) -> &'static str {
        match self {
            EngineEvent::Act { .. } => "act",
            EngineEvent::Trigger { .. } => "trigger",
            EngineEvent::Synthesize { .. } => "synthesize",
            EngineEvent::Select { .. } => "select",
            EngineEvent::Classify { .. } => "classify",
            EngineEvent::Route { .. } => "route",
            EngineEvent::Optimize { .. } => "optimize",
            EngineEvent::Reassemble { .. } => "reassemble",
        }
    }
}

/// Everything one episode produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub task_id: String,
    pub stream: StreamLabel,
    pub success: bool,
    pub steps_used: usize,
    pub errors_seen: usize,
    pub repeated_error_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_error_step: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completed_at_step: Option<u32>,
    /// Guidelines actually admitted into a memory this episode.
    pub guidelines_created: Vec<Guideline>,
    pub routing_outcomes: Vec<RoutingRecord>,
    pub events: Vec<EngineEvent>,
    pub trace: ExecutionTrace,
    pub final_generation: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<String>,
}

impl EpisodeResult {
    fn failed_placeholder(task_id: &str, stream: StreamLabel, fault: String) -> EpisodeResult {
        EpisodeResult {
            task_id: task_id.to_string(),
            stream,
            success: false,
            steps_used: 0,
            errors_seen: 0,
            repeated_error_steps: 0,
            first_error_step: None,
            completed_at_step: None,
            guidelines_created: Vec::new(),
            routing_outcomes: Vec::new(),
            events: Vec::new(),
            trace: ExecutionTrace::new(task_id),
            final_generation: 0,
            fault: Some(fault),
        }
    }

    fn to_stream_report(&self) -> StreamEpisodeReport {
        StreamEpisodeReport {
            stream: self.stream.clone(),
            success: self.success,
            steps_used: self.steps_used,
            errors_seen: self.errors_seen,
            repeated_error_steps: self.repeated_error_steps,
            first_error_step: self.first_error_step,
            completed_at_step: self.completed_at_step,
            guidelines: self.guidelines_created.iter().map(GuidelineSummary::from).collect(),
            routing: self.routing_outcomes.clone(),
            fault: self.fault.clone(),
        }
    }
}

/// All streams' runs over one task, OR-aggregated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub task_id: String,
    pub success: bool,
    pub per_stream: Vec<EpisodeResult>,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Creates one agent per (task, stream). Returned boxes must be `Send` so
/// streams can run on their own threads.
pub type AgentFactory<'a> = dyn Fn(&TaskSpec, &StreamLabel) -> Box<dyn AgentAdapter> + Sync + 'a;

pub struct Engine {
    config: EngineConfig,
    gateway: Gateway,
}

impl Engine {
    /// Builds the engine, constructing the provider from the config.
    pub fn new(config: EngineConfig) -> Result<Engine, EngineError> {
        config.validate()?;
        let provider = config.provider.build()?;
        Ok(Engine {
            config,
            gateway: Gateway::new(provider),
        })
    }

    /// Builds the engine around an explicit gateway (custom providers,
    /// recording wrappers).
    pub fn with_gateway(config: EngineConfig, gateway: Gateway) -> Result<Engine, EngineError> {
        config.validate()?;
        Ok(Engine { config, gateway })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    /// The configured perspective streams: efficiency, then thoroughness,
    /// then numbered thoroughness-persona lanes beyond K = 2.
    pub fn default_streams(&self) -> Vec<PerspectiveStream> {
        (0..self.config.k_streams)
            .map(|i| {
                let label = match i {
                    0 => StreamLabel::Efficiency,
                    1 => StreamLabel::Thoroughness,
                    n => StreamLabel::Custom(format!("stream_{}", n + 1)),
                };
                PerspectiveStream::new(label, &self.config.memory_root)
            })
            .collect()
    }

    /// Runs one episode of the evolution loop for one agent in one stream.
    ///
    /// Strategic memory is loaded at entry and saved at exit; tactical
    /// memory lives and dies with the episode. Mid-episode engine errors
    /// (decode failures, missing fixtures) skip that update and keep the
    /// episode going; only infrastructure failures (corrupt snapshots, io)
    /// abort.
    pub fn run_episode(
        &self,
        task: &TaskSpec,
        agent: &mut dyn AgentAdapter,
        stream: &mut PerspectiveStream,
    ) -> Result<EpisodeResult, EngineError> {
        task.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let limits = self.config.optimizer_limits();
        let mut strategic =
            StrategicMemory::load_or_new(&stream.memory_root, &stream.label, agent.name(), limits)?;
        let mut tactical = TacticalMemory::new(&task.task_id, self.config.tactical_cap);
        let mut prompt = assemble(
            agent.base_prompt(),
            &strategic.all(),
            tactical.entries(),
            self.config.placement,
        );
        let mut policy = TriggerPolicy::new(self.config.enhancement_frequency);
        let mut trace = ExecutionTrace::new(&task.task_id);
        let mut events: Vec<EngineEvent> = Vec::new();
        let mut guidelines_created: Vec<Guideline> = Vec::new();
        let mut routing_outcomes: Vec<RoutingRecord> = Vec::new();
        let mut fault: Option<String> = None;

        for _ in 0..task.max_steps {
            let step = match agent.act(&prompt, task, &trace) {
                Ok(step) => step,
                Err(e) => {
                    fault = Some(e.to_string());
                    trace.finish(TraceStatus::Failed);
                    break;
                }
            };
            if let Err(e) = trace.append(step.clone()) {
                fault = Some(format!("adapter emitted an invalid step: {e}"));
                trace.finish(TraceStatus::Failed);
                break;
            }
            events.push(EngineEvent::Act {
                step: step.step_number,
                outcome: step.outcome,
            });

            if self.config.evolution_enabled {
                if let Some(trigger) = detect_trigger(&step, &mut policy) {
                    events.push(EngineEvent::Trigger {
                        step: trigger.step_ref,
                        mode: trigger.mode,
                    });
                    self.handle_trigger(
                        task,
                        agent,
                        stream,
                        &trigger,
                        &trace,
                        &mut strategic,
                        &mut tactical,
                        &mut prompt,
                        &mut events,
                        &mut guidelines_created,
                        &mut routing_outcomes,
                    );
                }
            }

            if task.success_check.evaluate(&step) {
                trace.finish(TraceStatus::Completed);
                break;
            }
        }
        if trace.status == TraceStatus::Running {
            trace.finish(TraceStatus::MaxSteps);
        }

        strategic.save(&stream.memory_root)?;
        tactical.clear();
        stream.prompt_states.insert(agent.name().to_string(), prompt.clone());

        let first_error_step = trace
            .steps
            .iter()
            .find(|s| s.outcome == StepOutcome::Error)
            .map(|s| s.step_number);
        let completed_at_step = (trace.status == TraceStatus::Completed)
            .then(|| trace.steps.last().map(|s| s.step_number).unwrap_or(0));
        Ok(EpisodeResult {
            task_id: task.task_id.clone(),
            stream: stream.label.clone(),
            success: trace.status == TraceStatus::Completed,
            steps_used: trace.steps.len(),
            errors_seen: trace.error_count(),
            repeated_error_steps: trace.repeated_error_steps(),
            first_error_step,
            completed_at_step,
            guidelines_created,
            routing_outcomes,
            events,
            final_generation: prompt.generation,
            trace,
            fault,
        })
    }

    /// The synthesis pipeline for one trigger. Any pipeline error logs a
    /// warning and leaves the episode to continue with its current prompt.
    #[allow(clippy::too_many_arguments)]
    fn handle_trigger(
        &self,
        task: &TaskSpec,
        agent: &dyn AgentAdapter,
        stream: &PerspectiveStream,
        trigger: &TriggerEvent,
        trace: &ExecutionTrace,
        strategic: &mut StrategicMemory,
        tactical: &mut TacticalMemory,
        prompt: &mut PromptState,
        events: &mut Vec<EngineEvent>,
        guidelines_created: &mut Vec<Guideline>,
        routing_outcomes: &mut Vec<RoutingRecord>,
    ) {
        let step = trace
            .steps
            .iter()
            .find(|s| s.step_number == trigger.step_ref)
            .expect("trigger references an appended step");

        let mut applied_rules = strategic.texts();
        for text in tactical.texts() {
            if !applied_rules.contains(&text) {
                applied_rules.push(text);
            }
        }
        let ctx = SynthesisContext {
            agent_name: agent.name(),
            agent_role: agent.role(),
            task_instruction: &task.instruction,
            step,
            trigger,
            current_system_prompt: &prompt.assembled_system_text,
            applied_rules: &applied_rules,
            perspective: &stream.label,
            enhancement_rubric: stream.enhancement_rubric,
        };

        let candidates = match synthesize_candidates(&self.gateway, &ctx, self.config.n_candidates) {
            Ok(candidates) => candidates,
            Err(e @ SynthesisError::AllCandidatesFailed { .. }) => {
                log::warn!("step {}: {e}; update skipped", trigger.step_ref);
                events.push(EngineEvent::Synthesize {
                    step: trigger.step_ref,
                    requested: self.config.n_candidates,
                    produced: 0,
                });
                return;
            }
            Err(e) => {
                log::warn!("step {}: synthesis error {e}; update skipped", trigger.step_ref);
                return;
            }
        };
        events.push(EngineEvent::Synthesize {
            step: trigger.step_ref,
            requested: self.config.n_candidates,
            produced: candidates.len(),
        });
        if candidates.is_empty() {
            return;
        }

        let best = match select_best(&self.gateway, &candidates, &ctx) {
            Ok(best) => best,
            Err(e) => {
                log::warn!("step {}: selection failed ({e}); update skipped", trigger.step_ref);
                return;
            }
        };
        events.push(EngineEvent::Select {
            step: trigger.step_ref,
            chosen_index: best.candidate_index,
        });

        let view = MemoryView {
            strategic_texts: strategic.texts(),
            tactical_texts: tactical.texts(),
        };
        let cls = match classify(&self.gateway, &best, &view, &GuidelineDomain::ALL) {
            Ok(cls) => cls,
            Err(e) => {
                log::warn!("step {}: classification failed ({e}); update skipped", trigger.step_ref);
                return;
            }
        };
        events.push(EngineEvent::Classify {
            step: trigger.step_ref,
            scope: cls.scope,
            confidence: cls.confidence,
            is_duplicate: cls.is_duplicate,
        });

        let source = GuidelineSource {
            agent_name: agent.name().to_string(),
            task_id: task.task_id.clone(),
            step_number: trigger.step_ref,
            stream: stream.label.clone(),
        };
        let outcome = route(&best, &cls, self.config.c_thresh, self.config.accept_thresh, &source);
        events.push(EngineEvent::Route {
            step: trigger.step_ref,
            outcome: outcome.kind_str().to_string(),
        });
        routing_outcomes.push(RoutingRecord {
            step: trigger.step_ref,
            mode: trigger.mode,
            outcome: outcome.kind_str().to_string(),
            domain: outcome.accepted().map(|g| g.domain),
            confidence: outcome.accepted().map(|g| g.confidence),
        });

        let inserted = match outcome {
            RoutingOutcome::Strategic(g) => match strategic.insert(g.clone(), &self.gateway) {
                StrategicInsert::Inserted(report) => {
                    if let Some(report) = report {
                        if let Some(failure) = &report.failure {
                            log::warn!(
                                "optimization of {} bucket degraded: {failure}",
                                report.domain
                            );
                        }
                        events.push(EngineEvent::Optimize {
                            step: trigger.step_ref,
                            domain: report.domain,
                            before: report.before_count,
                            after: report.after_count,
                            iterations: report.iterations_used,
                        });
                    }
                    guidelines_created.push(g);
                    true
                }
                StrategicInsert::RejectedDuplicateText => {
                    log::warn!(
                        "step {}: strategic insert rejected (duplicate text)",
                        trigger.step_ref
                    );
                    false
                }
            },
            RoutingOutcome::Tactical(g) => {
                tactical.insert(g.clone());
                guidelines_created.push(g);
                true
            }
            RoutingOutcome::DroppedDuplicate | RoutingOutcome::RejectedLowConfidence => false,
        };

        if inserted {
            *prompt = reassemble_after_update(prompt, &strategic.all(), tactical.entries());
            events.push(EngineEvent::Reassemble {
                step: trigger.step_ref,
                generation: prompt.generation,
            });
        }
    }

    /// Runs every stream's episode for one task, in parallel, and
    /// OR-aggregates success. A crashing stream counts as that stream's
    /// failure and does not abort the others.
    pub fn run_perspectives(
        &self,
        task: &TaskSpec,
        mut agents: Vec<Box<dyn AgentAdapter>>,
        streams: &mut [PerspectiveStream],
    ) -> EnsembleResult {
        assert_eq!(
            agents.len(),
            streams.len(),
            "one agent per stream is required"
        );
        let per_stream: Vec<EpisodeResult> = std::thread::scope(|scope| {
            let handles: Vec<_> = streams
                .iter_mut()
                .zip(agents.iter_mut())
                .map(|(stream, agent)| {
                    let label = stream.label.clone();
                    (
                        label,
                        scope.spawn(move || self.run_episode(task, agent.as_mut(), stream)),
                    )
                })
                .collect();
            handles
                .into_iter()
                .map(|(label, handle)| match handle.join() {
                    Ok(Ok(result)) => result,
                    Ok(Err(e)) => EpisodeResult::failed_placeholder(
                        &task.task_id,
                        label,
                        format!("stream error: {e}"),
                    ),
                    Err(_) => EpisodeResult::failed_placeholder(
                        &task.task_id,
                        label,
                        "stream panicked".to_string(),
                    ),
                })
                .collect()
        });
        EnsembleResult {
            task_id: task.task_id.clone(),
            success: per_stream.iter().any(|r| r.success),
            per_stream,
        }
    }

    /// Evaluates a whole suite: every task, `runs_per_task` independent
    /// runs OR-aggregated, strategic memory accumulating across tasks.
    pub fn evaluate_suite(
        &self,
        tasks: &[TaskSpec],
        factory: &AgentFactory<'_>,
    ) -> Result<SuiteReport, EngineError> {
        assert!(!tasks.is_empty(), "suite must contain at least one task");
        let mut streams = self.default_streams();
        let mut task_reports = Vec::with_capacity(tasks.len());
        for task in tasks {
            let mut runs = Vec::with_capacity(self.config.runs_per_task);
            let mut task_success = false;
            for run_index in 0..self.config.runs_per_task {
                let agents: Vec<Box<dyn AgentAdapter>> = streams
                    .iter()
                    .map(|stream| factory(task, &stream.label))
                    .collect();
                let ensemble = self.run_perspectives(task, agents, &mut streams);
                self.write_traces(&ensemble, run_index)?;
                task_success |= ensemble.success;
                runs.push(RunReport {
                    run_index,
                    ensemble_success: ensemble.success,
                    streams: ensemble.per_stream.iter().map(|r| r.to_stream_report()).collect(),
                });
            }
            task_reports.push(TaskReport {
                task_id: task.task_id.clone(),
                success: task_success,
                runs,
            });
        }
        Ok(SuiteReport::assemble(task_reports))
    }

    fn write_traces(&self, ensemble: &EnsembleResult, run_index: usize) -> Result<(), EngineError> {
        let Some(dir) = &self.config.trace_dir else {
            return Ok(());
        };
        fs::create_dir_all(dir)?;
        for episode in &ensemble.per_stream {
            let name = format!(
                "{}__{}__run{}.ndjson",
                episode.task_id, episode.stream, run_index
            );
            fs::write(dir.join(name), episode.trace.to_ndjson())?;
        }
        Ok(())
    }
}
