//! Experiment requests shared by `POST /experiments` and `screenrec eval`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use screenrec_core::eval::{
    run_plan, synthetic_corpus, BackendSummaries, EvalContext, EvalError, EvalPlan, EvalReport, SummaryProvider, SyntheticSpec,
};
use screenrec_core::models::ModelParams;
use screenrec_core::session::{load_session_dataset, LoadOptions, SessionError};
use screenrec_core::summarizer::SummarizeOptions;
use screenrec_core::Exec;

use crate::service::Service;

/// Generated corpus parameters; see [`SyntheticSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticParams {
    pub sessions: usize,
    pub items: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        let d = SyntheticSpec::default();
        SyntheticParams { sessions: d.sessions, items: d.items, noise: d.noise, seed: d.seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRequest {
    #[serde(flatten)]
    pub plan: EvalPlan,
    /// Session file to evaluate on, relative paths resolved against the
    /// request's base directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Evaluate on a generated corpus instead of a session file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticParams>,
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("request names neither a dataset nor a synthetic corpus")]
    NoDataset,
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentOutcome {
    pub report: EvalReport,
    /// Append-only JSONL file the rows were added to.
    pub report_path: PathBuf,
    pub csv_path: PathBuf,
}

pub fn run_experiment_request(
    service: &Service,
    request: &ExperimentRequest,
    base_dir: &Path,
) -> Result<ExperimentOutcome, ExperimentError> {
    let report = if let Some(p) = &request.synthetic {
        let corpus = synthetic_corpus(&SyntheticSpec { sessions: p.sessions, items: p.items, noise: p.noise, seed: p.seed, ..SyntheticSpec::default() });
        let ctx = EvalContext {
            catalog: &corpus.catalog,
            embedder: service.embedder(),
            summaries: Some(&corpus.summaries),
            model_params: ModelParams::default(),
            exec: Exec::default(),
        };
        run_plan(&request.plan, &corpus.sessions, &ctx)?
    } else {
        let path = request.dataset.as_ref().ok_or(ExperimentError::NoDataset)?;
        let path = if path.is_relative() { base_dir.join(path) } else { path.clone() };
        let data = load_session_dataset(&path, &LoadOptions { strict: false, store: Some(service.screenshots()) })?;
        for ex in &data.excluded {
            tracing::warn!(line = ex.line, session = %ex.session_id, reason = %ex.reason, "session excluded");
        }
        let catalog = service.catalog();
        let summaries = BackendSummaries {
            backend: service.backend(),
            prompt: service.prompt().clone(),
            options: SummarizeOptions { batch_size: service.config().batch_size, max_in_flight: service.config().max_in_flight },
        };
        let ctx = EvalContext {
            catalog: &catalog,
            embedder: service.embedder(),
            summaries: Some(&summaries as &dyn SummaryProvider),
            model_params: ModelParams::default(),
            exec: Exec::default(),
        };
        run_plan(&request.plan, &data.sessions, &ctx)?
    };
    let report_path = report.append_to(service.config().reports_dir())?;
    let csv_path = report_path.with_extension("csv");
    std::fs::write(&csv_path, report.to_csv())?;
    Ok(ExperimentOutcome { report, report_path, csv_path })
}
