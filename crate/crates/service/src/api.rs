//! Request and response bodies. Spans are `{start, end}`, 1-based and
//! inclusive.

use serde::{Deserialize, Serialize};

use coref_adjudication::conll::LabeledChain;
use coref_adjudication::enforcement::ForcedChain;
use coref_adjudication::objective::CostBreakdown;
use coref_adjudication::solver::{InfeasibilityWitness, SolveStats, Status};
use coref_adjudication::Span;

#[derive(Debug, Clone, Deserialize)]
pub struct FileUpload {
    /// File name; its stem is the default annotator id.
    pub name: String,
    pub content: String,
}

/// Either annotator files or one merged review file.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct CreateSession {
    #[serde(default)]
    pub files: Vec<FileUpload>,
    #[serde(default)]
    pub annotators: Option<Vec<String>>,
    #[serde(default)]
    pub merged: Option<String>,
    /// Count the enforced result as one more annotator (default true).
    #[serde(default)]
    pub forced_annotator: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub revision: u64,
    pub token_count: usize,
    pub annotators: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenView {
    pub index: usize,
    pub surface: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnforcementView {
    pub chains: Vec<ForcedChain>,
    pub locked_tokens: Vec<usize>,
    pub empty_tokens: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub revision: u64,
    pub tokens: Vec<TokenView>,
    pub annotators: Vec<String>,
    /// One cell list per annotator, in annotator order.
    pub columns: Vec<Vec<String>>,
    /// Current result column with `=` marks; `None` before the first solve.
    pub result: Option<Vec<String>>,
    /// Revision the result column was solved at.
    pub result_revision: Option<u64>,
    pub enforcements: EnforcementView,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    /// Force a mention into the forced chain `chain`, or a fresh one.
    ForceMention {
        span: Span,
        chain: Option<String>,
    },
    ForceSame {
        first: Span,
        second: Span,
    },
    ForceDifferent {
        first: Span,
        second: Span,
    },
    ForceEmpty {
        token: usize,
    },
    LockToken {
        token: usize,
    },
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct EnforcementRequest {
    #[serde(default)]
    pub actions: Vec<Action>,
    /// Drop all enforcements before applying `actions`.
    #[serde(default)]
    pub reset: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnforcementResponse {
    pub revision: u64,
    pub enforcements: EnforcementView,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct SolveRequest {
    /// `u`, `ua`, `v` or `va`; default `v`.
    pub objective: Option<String>,
    /// `mm` or `cm`; default `mm`.
    pub strategy: Option<String>,
    /// Time budget in seconds; default from the server configuration.
    pub budget_s: Option<f64>,
    /// Optimal solutions to collect; default 10.
    pub enumerate: Option<usize>,
    /// Enforcement changes applied before solving.
    #[serde(default)]
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainView {
    pub label: String,
    pub spans: Vec<Span>,
}

impl From<&LabeledChain> for ChainView {
    fn from(c: &LabeledChain) -> Self {
        ChainView {
            label: c.label.clone(),
            spans: c.spans.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkAudit {
    pub first: Span,
    pub second: Span,
    pub evidence: usize,
    pub omit: u64,
    #[serde(rename = "use")]
    pub use_: u64,
    pub selected: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimumView {
    pub cost: u64,
    pub links: Vec<(Span, Span)>,
    pub chains: Vec<Vec<Span>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveResponse {
    pub revision: u64,
    pub status: Status,
    pub objective: String,
    pub strategy: String,
    pub cost: Option<CostBreakdown>,
    pub lower_bound: u64,
    pub gap: Option<f64>,
    pub chains: Vec<ChainView>,
    pub links: Vec<LinkAudit>,
    pub optima: Vec<OptimumView>,
    pub result: Vec<String>,
    pub chain_bound: usize,
    pub bound_limited: bool,
    pub stats: SolveStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveState {
    Idle,
    Running,
    Done,
    Cancelled,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatusView {
    pub state: SolveState,
    /// Revision of the running or last finished solve.
    pub revision: Option<u64>,
    pub elapsed_s: f64,
    pub status: Option<String>,
    pub cost: Option<u64>,
    pub lower_bound: Option<u64>,
}

/// Body of every error response.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<InfeasibilityWitness>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub revision: Option<u64>,
}
