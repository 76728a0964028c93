pub mod compare;
pub mod report;
pub mod scenario;

use divprompt_core::gateway::{BackendKind, Confusion};
use divprompt_core::sensitivity::{sensitivity_sweep, SensitivityPoint, SweepConfig};
use divprompt_core::{Engine, EngineConfig, Gateway, GatewayConfig, Session, SessionError};
use thiserror::Error;

pub use report::Report;
pub use scenario::Scenario;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Parse(String),
    #[error("reports describe different scenarios: {0}")]
    MismatchedScenarios(String),
    #[error("the sensitivity sweep needs the mock backend, whose accuracy can be controlled")]
    RefusesHttpBackend,
    #[error("backend failure: {0}")]
    Backend(SessionError),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("server failed: {0}")]
    Serve(String),
    #[error("i/o failed: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 for bad input, 3 for backend failures, 4 for violated invariants.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) | CliError::MismatchedScenarios(_) | CliError::RefusesHttpBackend => 2,
            CliError::Backend(_) => 3,
            CliError::Invariant(_) => 4,
            CliError::Serve(_) | CliError::Io(_) => 1,
        }
    }
}

impl From<SessionError> for CliError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Gateway(_) => CliError::Backend(e),
            SessionError::InvalidCount { .. } | SessionError::EmptyContext => CliError::Parse(e.to_string()),
            other => CliError::Invariant(other.to_string()),
        }
    }
}

/// Gateway used for a scenario: the scenario's mock settings unless an
/// explicit configuration overrides them.
pub fn scenario_gateway(scenario: &Scenario, overrides: Option<&GatewayConfig>) -> Result<Gateway, CliError> {
    match overrides {
        Some(config) if config.backend == BackendKind::Http => Gateway::from_config(config).map_err(|e| CliError::Parse(e.to_string())),
        _ => Ok(Gateway::mock(scenario.mock.q, scenario.mock.sigma, Confusion::Uniform)),
    }
}

/// Configures every attribute, regenerates `iterations` times and returns
/// the session with its report.
pub fn run_scenario(scenario: &Scenario, gateway: Gateway) -> Result<(Session, Report), CliError> {
    let engine = Engine::new(
        gateway,
        EngineConfig { mode: scenario.mode, max_images: scenario.n.max(1), ..EngineConfig::default() },
    );
    let mut session = engine.create_session("run", &scenario.context, scenario.n, scenario.seed)?;
    for block in &scenario.attributes {
        let spec = block.spec()?;
        engine.add_attribute(&mut session, spec.name(), Some(spec.labels().to_vec()))?;
        match block.weights()? {
            Some(w) => engine.set_distribution(&mut session, spec.name(), w)?,
            None => engine.balance(&mut session, spec.name())?,
        }
    }
    for _ in 0..scenario.iterations {
        engine.regenerate(&mut session, None)?;
    }
    let report = Report::build(scenario, &session)?;
    report.check_consistency()?;
    Ok((session, report))
}

pub fn run_sweep(config: &SweepConfig, backend: BackendKind) -> Result<Vec<SensitivityPoint>, CliError> {
    if backend == BackendKind::Http {
        return Err(CliError::RefusesHttpBackend);
    }
    sensitivity_sweep(config).map_err(|e| match e {
        SessionError::InvalidEvent(msg) => CliError::Parse(msg),
        other => CliError::from(other),
    })
}
