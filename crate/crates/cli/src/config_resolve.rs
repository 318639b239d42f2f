//! Config resolution: built-in defaults, overlaid by the config file, the
//! `EVOPROMPT_*` environment, and finally command-line flags.

use std::path::PathBuf;

use anyhow::{anyhow, Context};
use evoprompt_core::assembly::PlacementStrategy;
use evoprompt_core::config::EngineConfig;
use evoprompt_core::gateway::ProviderKind;

use crate::args::ConfigArgs;
use crate::CliError;

fn env_string(key: &str) -> Option<String> {
    std::env::var(format!("EVOPROMPT_{key}")).ok().filter(|v| !v.is_empty())
}

fn env_parse<T: std::str::FromStr>(key: &str) -> Result<Option<T>, CliError> {
    match env_string(key) {
        None => Ok(None),
        Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
            CliError::config(anyhow!("environment variable EVOPROMPT_{key} has invalid value {raw:?}"))
        }),
    }
}

fn parse_placement(raw: &str) -> Result<PlacementStrategy, CliError> {
    PlacementStrategy::parse(raw).ok_or_else(|| {
        CliError::config(anyhow!(
            "placement must be one of system|user|split|hybrid, got {raw:?}"
        ))
    })
}

/// Components of the provider setting, merged across layers before the
/// final `ProviderKind` is assembled.
#[derive(Default)]
struct ProviderParts {
    kind: Option<String>,
    fixtures: Option<PathBuf>,
    endpoint: Option<String>,
    model: Option<String>,
    credential_env: Option<String>,
}

impl ProviderParts {
    fn from_base(base: &ProviderKind) -> ProviderParts {
        match base {
            ProviderKind::Scripted { fixtures_dir } => ProviderParts {
                kind: Some("scripted".to_string()),
                fixtures: Some(fixtures_dir.clone()),
                ..ProviderParts::default()
            },
            ProviderKind::Live {
                endpoint,
                model,
                credential_env,
            } => ProviderParts {
                kind: Some("live".to_string()),
                endpoint: Some(endpoint.clone()),
                model: Some(model.clone()),
                credential_env: Some(credential_env.clone()),
                ..ProviderParts::default()
            },
        }
    }

    fn overlay(&mut self, other: ProviderParts) {
        if other.kind.is_some() {
            self.kind = other.kind;
        }
        if other.fixtures.is_some() {
            self.fixtures = other.fixtures;
        }
        if other.endpoint.is_some() {
            self.endpoint = other.endpoint;
        }
        if other.model.is_some() {
            self.model = other.model;
        }
        if other.credential_env.is_some() {
            self.credential_env = other.credential_env;
        }
    }

    fn build(self) -> Result<ProviderKind, CliError> {
        match self.kind.as_deref().unwrap_or("scripted") {
            "scripted" => Ok(ProviderKind::Scripted {
                fixtures_dir: self.fixtures.unwrap_or_else(|| PathBuf::from("fixtures")),
            }),
            "live" => Ok(ProviderKind::Live {
                endpoint: self
                    .endpoint
                    .ok_or_else(|| CliError::config(anyhow!("live provider requires --endpoint")))?,
                model: self
                    .model
                    .ok_or_else(|| CliError::config(anyhow!("live provider requires --model")))?,
                credential_env: self
                    .credential_env
                    .unwrap_or_else(|| "EVOPROMPT_API_KEY".to_string()),
            }),
            other => Err(CliError::config(anyhow!(
                "provider must be live or scripted, got {other:?}"
            ))),
        }
    }
}

pub fn resolve(args: &ConfigArgs) -> Result<EngineConfig, CliError> {
    // Layer 1: defaults, optionally replaced field-by-field from the file.
    let mut cfg = match &args.config {
        None => EngineConfig::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config file {}", path.display()))
                .map_err(CliError::config)?;
            serde_json::from_str(&text)
                .with_context(|| format!("config file {} is not valid", path.display()))
                .map_err(CliError::config)?
        }
    };
    let mut provider = ProviderParts::from_base(&cfg.provider);

    // Layer 2: environment.
    if let Some(v) = env_parse::<usize>("N_CANDIDATES")? {
        cfg.n_candidates = v;
    }
    if let Some(v) = env_parse::<usize>("K_STREAMS")? {
        cfg.k_streams = v;
    }
    if let Some(v) = env_parse::<f64>("C_THRESH")? {
        cfg.c_thresh = v;
    }
    if let Some(v) = env_parse::<f64>("ACCEPT_THRESH")? {
        cfg.accept_thresh = v;
    }
    if let Some(v) = env_parse::<usize>("PER_DOMAIN_CAP")? {
        cfg.per_domain_cap = v;
    }
    if let Some(v) = env_parse::<usize>("TARGET_AFTER_OPT")? {
        cfg.target_after_opt = v;
    }
    if let Some(v) = env_parse::<usize>("MAX_OPT_ITERATIONS")? {
        cfg.max_opt_iterations = v;
    }
    if let Some(v) = env_parse::<usize>("TACTICAL_CAP")? {
        cfg.tactical_cap = v;
    }
    if let Some(v) = env_parse::<u32>("ENHANCEMENT_FREQUENCY")? {
        cfg.enhancement_frequency = v;
    }
    if let Some(raw) = env_string("PLACEMENT") {
        cfg.placement = parse_placement(&raw)?;
    }
    if let Some(raw) = env_string("MEMORY_ROOT") {
        cfg.memory_root = PathBuf::from(raw);
    }
    if let Some(v) = env_parse::<usize>("RUNS_PER_TASK")? {
        cfg.runs_per_task = v;
    }
    provider.overlay(ProviderParts {
        kind: env_string("PROVIDER"),
        fixtures: env_string("FIXTURES_DIR").map(PathBuf::from),
        endpoint: env_string("ENDPOINT"),
        model: env_string("MODEL"),
        credential_env: env_string("CREDENTIAL_ENV"),
    });

    // Layer 3: flags.
    if let Some(v) = args.n_candidates {
        cfg.n_candidates = v;
    }
    if let Some(v) = args.k_streams {
        cfg.k_streams = v;
    }
    if let Some(v) = args.c_thresh {
        cfg.c_thresh = v;
    }
    if let Some(v) = args.accept_thresh {
        cfg.accept_thresh = v;
    }
    if let Some(v) = args.per_domain_cap {
        cfg.per_domain_cap = v;
    }
    if let Some(v) = args.target_after_opt {
        cfg.target_after_opt = v;
    }
    if let Some(v) = args.max_opt_iterations {
        cfg.max_opt_iterations = v;
    }
    if let Some(v) = args.tactical_cap {
        cfg.tactical_cap = v;
    }
    if let Some(v) = args.enhancement_frequency {
        cfg.enhancement_frequency = v;
    }
    if let Some(raw) = &args.placement {
        cfg.placement = parse_placement(raw)?;
    }
    if let Some(v) = &args.memory_root {
        cfg.memory_root = v.clone();
    }
    if let Some(v) = args.runs_per_task {
        cfg.runs_per_task = v;
    }
    if args.no_evolution {
        cfg.evolution_enabled = false;
    }
    if let Some(v) = &args.trace_dir {
        cfg.trace_dir = Some(v.clone());
    }
    provider.overlay(ProviderParts {
        kind: args.provider.clone(),
        fixtures: args.fixtures.clone(),
        endpoint: args.endpoint.clone(),
        model: args.model.clone(),
        credential_env: args.credential_env.clone(),
    });

    cfg.provider = provider.build()?;
    cfg.validate().map_err(|e| CliError::config(anyhow!(e)))?;
    Ok(cfg)
}
