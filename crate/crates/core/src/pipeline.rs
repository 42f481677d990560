//! File-level workflow: adjudicate annotator files into a merged review
//! file, and re-adjudicate a reviewed file relative to its enforced fields.

use thiserror::Error;

use crate::conll::{
    self, number_chains, parse_merged_for_readjudication, result_cells, serialize_labeled_result, serialize_merged,
    AnnotatedDocument, Annotation, ConllError, Document, LabeledChain,
};
use crate::enforcement::ForcedSpec;
use crate::instance::{build_instance, ForcedMode, Instance, InstanceError};
use crate::objective::Objective;
use crate::solver::{solve, SolveOutcome, SolverConfig};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Conll(#[from] ConllError),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error("cannot tell the number of annotator columns; the file has no `#columns` header and {0} columns")]
    UnknownLayout(usize),
}

#[derive(Debug, Clone)]
pub struct AdjudicationRun {
    pub document: Document,
    pub instance: Instance,
    pub outcome: SolveOutcome,
    /// Result chains with their output labels; empty without a solution.
    pub chains: Vec<LabeledChain>,
    /// Enforced result cells of the input, kept verbatim in the output.
    pub enforced_cells: Option<Vec<String>>,
}

impl AdjudicationRun {
    pub fn annotations(&self) -> &[Annotation] {
        self.instance.annotations()
    }

    pub fn result_cells(&self) -> Result<Vec<String>, ConllError> {
        result_cells(
            self.document.token_count(),
            &self.chains,
            self.enforced_cells.as_deref(),
        )
    }

    pub fn merged_text(&self) -> Result<String, ConllError> {
        serialize_merged(&self.document, self.annotations(), &self.result_cells()?)
    }

    pub fn result_text(&self) -> Result<String, ConllError> {
        serialize_labeled_result(&self.document, &self.chains)
    }
}

fn run(
    document: Document,
    annotations: &[Annotation],
    forced: Option<&ForcedSpec>,
    enforced_cells: Option<Vec<String>>,
    mode: ForcedMode,
    objective: &Objective,
    config: &SolverConfig,
) -> Result<AdjudicationRun, PipelineError> {
    let instance = build_instance(document.token_count(), annotations, forced, mode)?;
    let outcome = solve(&instance, objective, config);
    let labels = instance.forced().labels();
    let chains = outcome
        .best
        .as_ref()
        .map(|b| number_chains(&b.chains, &labels))
        .unwrap_or_default();
    Ok(AdjudicationRun {
        document,
        instance,
        outcome,
        chains,
        enforced_cells,
    })
}

/// Adjudicate single-annotator files over one token sequence.
pub fn adjudicate_documents(
    documents: &[AnnotatedDocument],
    objective: &Objective,
    config: &SolverConfig,
) -> Result<AdjudicationRun, PipelineError> {
    conll::check_same_tokens(documents)?;
    let annotations: Vec<Annotation> = documents.iter().map(|d| d.annotation.clone()).collect();
    let document = documents[0].document.clone();
    run(
        document,
        &annotations,
        None,
        None,
        ForcedMode::Annotator,
        objective,
        config,
    )
}

/// Number of annotator columns of a merged file: from its `#columns` header
/// when present, otherwise every column but the first and the last.
pub fn merged_annotator_count(text: &str) -> Result<usize, PipelineError> {
    if let Some(ids) = conll::merged_annotator_ids(text) {
        return Ok(ids.len());
    }
    let columns = text
        .lines()
        .find(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| l.split_whitespace().count())
        .unwrap_or(0);
    if columns < 4 {
        return Err(PipelineError::UnknownLayout(columns));
    }
    Ok(columns - 2)
}

/// Re-adjudicate a merged review file. Fields prefixed with `=` in the
/// result column are enforced and copied to the output unchanged.
pub fn readjudicate_merged(
    text: &str,
    annotator_count: Option<usize>,
    mode: ForcedMode,
    objective: &Objective,
    config: &SolverConfig,
) -> Result<AdjudicationRun, PipelineError> {
    let count = match annotator_count {
        Some(c) => c,
        None => merged_annotator_count(text)?,
    };
    let merged = parse_merged_for_readjudication(text, count)?;
    let forced = (!merged.forced.is_empty()).then_some(&merged.forced);
    run(
        merged.document,
        &merged.annotations,
        forced,
        Some(merged.result_cells),
        mode,
        objective,
        config,
    )
}
