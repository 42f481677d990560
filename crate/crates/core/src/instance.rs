//! Canonicalized adjudication instances.
//!
//! Annotator mentions are projected onto canonical mentions (their spans) and
//! every pair of canonical mentions that some annotator put into one chain
//! becomes an annotated link. The number of supporting annotators of a link
//! is its evidence.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::conll::Annotation;
use crate::enforcement::{EnforcementError, ForcedSpec};
use crate::objective::Objective;
use crate::span::Span;

pub type LinkId = usize;
pub type MentionId = usize;

/// Annotator id of the pseudo-annotator that carries enforced chains.
pub const FORCED_ANNOTATOR: &str = "forced";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InstanceError {
    #[error("at least two annotations are required, got {0}")]
    TooFewAnnotators(usize),
    #[error("annotator `{annotator}`: mention {span} lies outside the document of {token_count} tokens")]
    SpanOutOfRange {
        annotator: String,
        span: Span,
        token_count: usize,
    },
    #[error("annotator id `{0}` is reserved")]
    ReservedAnnotatorId(String),
    #[error(transparent)]
    Enforcement(#[from] EnforcementError),
}

/// How enforced chains enter the instance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ForcedMode {
    /// Enforced chains form one more annotation: they add evidence to their
    /// links and count towards the number of annotators.
    #[default]
    Annotator,
    /// Enforced chains add no evidence and do not change the annotator
    /// count; forced pairs nobody annotated become links with zero evidence.
    Excluded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Link {
    pub m1: MentionId,
    pub m2: MentionId,
    /// Indexes into [`Instance::annotators`], ascending.
    pub supporters: Vec<usize>,
}

impl Link {
    pub fn evidence(&self) -> usize {
        self.supporters.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LinkCosts {
    pub omit: u64,
    #[serde(rename = "use")]
    pub use_: u64,
}

#[derive(Debug, Clone)]
pub struct Instance {
    token_count: usize,
    annotators: Vec<String>,
    annotations: Vec<Annotation>,
    cmentions: Vec<Span>,
    links: Vec<Link>,
    forced: ForcedSpec,
    forced_mode: ForcedMode,
    mention_index: HashMap<Span, MentionId>,
    link_index: HashMap<(MentionId, MentionId), LinkId>,
}

/// Build an instance from at least two annotations over `token_count` tokens.
pub fn build_instance(
    token_count: usize,
    annotations: &[Annotation],
    forced: Option<&ForcedSpec>,
    forced_mode: ForcedMode,
) -> Result<Instance, InstanceError> {
    if annotations.len() < 2 {
        return Err(InstanceError::TooFewAnnotators(annotations.len()));
    }
    for a in annotations {
        if a.annotator == FORCED_ANNOTATOR {
            return Err(InstanceError::ReservedAnnotatorId(a.annotator.clone()));
        }
        for m in &a.mentions {
            if !m.span.is_valid_for(token_count) {
                return Err(InstanceError::SpanOutOfRange {
                    annotator: a.annotator.clone(),
                    span: m.span,
                    token_count,
                });
            }
        }
    }
    let forced = forced.cloned().unwrap_or_default();
    forced.validate(token_count)?;

    let mut annotators: Vec<String> = annotations.iter().map(|a| a.annotator.clone()).collect();
    let forced_counts = forced_mode == ForcedMode::Annotator && !forced.chains().is_empty();
    if forced_counts {
        annotators.push(FORCED_ANNOTATOR.to_string());
    }

    // canonical pair -> supporting annotator indexes
    let mut pairs: BTreeMap<(Span, Span), BTreeSet<usize>> = BTreeMap::new();
    let mut chain_sets: Vec<Vec<Vec<Span>>> = annotations
        .iter()
        .map(|a| a.chains().into_iter().map(|(_, spans)| spans).collect())
        .collect();
    chain_sets.push(forced.chains().iter().map(|c| c.spans.clone()).collect());
    for (a, chains) in chain_sets.iter().enumerate() {
        let is_forced = a == annotations.len();
        if is_forced && !forced_counts && forced_mode == ForcedMode::Annotator {
            continue;
        }
        for chain in chains {
            let mut spans = chain.clone();
            spans.sort();
            spans.dedup();
            for (i, x) in spans.iter().enumerate() {
                for y in &spans[i + 1..] {
                    let entry = pairs.entry((*x, *y)).or_default();
                    if !(is_forced && forced_mode == ForcedMode::Excluded) {
                        entry.insert(a);
                    }
                }
            }
        }
    }

    let mut spans: BTreeSet<Span> = pairs.keys().flat_map(|(a, b)| [*a, *b]).collect();
    spans.extend(forced.forced_mentions());
    let cmentions: Vec<Span> = spans.into_iter().collect();
    let mention_index: HashMap<Span, MentionId> = cmentions.iter().enumerate().map(|(i, s)| (*s, i)).collect();

    let mut links: Vec<Link> = pairs
        .into_iter()
        .map(|((a, b), supporters)| Link {
            m1: mention_index[&a],
            m2: mention_index[&b],
            supporters: supporters.into_iter().collect(),
        })
        .collect();
    links.sort_by(|x, y| {
        y.evidence()
            .cmp(&x.evidence())
            .then(x.m1.cmp(&y.m1))
            .then(x.m2.cmp(&y.m2))
    });
    let link_index = links.iter().enumerate().map(|(i, l)| ((l.m1, l.m2), i)).collect();

    Ok(Instance {
        token_count,
        annotators,
        annotations: annotations.to_vec(),
        cmentions,
        links,
        forced,
        forced_mode,
        mention_index,
        link_index,
    })
}

impl Instance {
    pub fn token_count(&self) -> usize {
        self.token_count
    }

    /// Number of annotations, the forced pseudo-annotator included when it
    /// counts.
    pub fn u(&self) -> usize {
        self.annotators.len()
    }

    pub fn annotators(&self) -> &[String] {
        &self.annotators
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    pub fn cmentions(&self) -> &[Span] {
        &self.cmentions
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn forced(&self) -> &ForcedSpec {
        &self.forced
    }

    pub fn forced_mode(&self) -> ForcedMode {
        self.forced_mode
    }

    pub fn mention_id(&self, span: Span) -> Option<MentionId> {
        self.mention_index.get(&span).copied()
    }

    pub fn link_between(&self, a: MentionId, b: MentionId) -> Option<LinkId> {
        let key = if a <= b { (a, b) } else { (b, a) };
        self.link_index.get(&key).copied()
    }

    pub fn link_by_spans(&self, a: Span, b: Span) -> Option<LinkId> {
        self.link_between(self.mention_id(a)?, self.mention_id(b)?)
    }

    pub fn link_spans(&self, id: LinkId) -> (Span, Span) {
        let l = &self.links[id];
        (self.cmentions[l.m1], self.cmentions[l.m2])
    }

    /// Largest number of chains in any single annotation.
    pub fn max_chain_count(&self) -> usize {
        self.annotations.iter().map(Annotation::chain_count).max().unwrap_or(0)
    }

    /// Same annotations, new enforcement.
    pub fn with_forced(&self, forced: Option<&ForcedSpec>) -> Result<Instance, InstanceError> {
        build_instance(self.token_count, &self.annotations, forced, self.forced_mode)
    }

    pub fn link_costs(&self, objective: &Objective) -> Vec<LinkCosts> {
        link_costs(self, objective)
    }
}

/// Omit and use cost of every link, indexed by link id.
pub fn link_costs(instance: &Instance, objective: &Objective) -> Vec<LinkCosts> {
    let u = instance.u() as u64;
    instance
        .links
        .iter()
        .map(|l| {
            let e = l.evidence() as u64;
            LinkCosts {
                omit: objective.w_omit * e,
                use_: objective.w_use * u.saturating_sub(e),
            }
        })
        .collect()
}

/// Render the instance input as ASP facts: `mention(A,M,S,E).`, `cm(A,C,M).`
/// and `empty(T).`, with annotators `a1, a2, …`, the enforced annotation as
/// `forced`, and chains and mentions numbered globally.
pub fn export_asp_facts(instance: &Instance) -> String {
    let mut out = String::new();
    let mut mention = 0usize;
    let mut chain = 0usize;
    let mut emit = |out: &mut String, annotator: &str, chains: Vec<Vec<Span>>| {
        for spans in chains {
            chain += 1;
            for span in spans {
                mention += 1;
                let _ = writeln!(out, "mention({annotator},m{mention},{},{}).", span.start, span.end);
                let _ = writeln!(out, "cm({annotator},c{chain},m{mention}).");
            }
        }
    };
    for (k, a) in instance.annotations.iter().enumerate() {
        let chains = a.chains().into_iter().map(|(_, s)| s).collect();
        emit(&mut out, &format!("a{}", k + 1), chains);
    }
    let forced_chains = instance.forced.chains().iter().map(|c| c.spans.clone()).collect();
    emit(&mut out, FORCED_ANNOTATOR, forced_chains);
    for t in instance.forced.empty_tokens() {
        let _ = writeln!(out, "empty({t}).");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnnotationWarning {
    SingletonChain { chain: String, span: Span },
    NestedCoreference { chain: String, outer: Span, inner: Span },
    DuplicateSpan { span: Span },
}

/// Report singleton chains, nested mentions inside one chain, and spans
/// annotated more than once. None of these are rejected.
pub fn validate_annotation(annotation: &Annotation) -> Vec<AnnotationWarning> {
    let mut warnings = Vec::new();
    for (chain, spans) in annotation.chains() {
        if spans.len() == 1 {
            warnings.push(AnnotationWarning::SingletonChain {
                chain: chain.clone(),
                span: spans[0],
            });
        }
        let mut sorted = spans.clone();
        sorted.sort();
        sorted.dedup();
        for (i, a) in sorted.iter().enumerate() {
            for b in &sorted[i + 1..] {
                if a.nests_with(b) {
                    let (outer, inner) = if a.start <= b.start && b.end <= a.end {
                        (*a, *b)
                    } else {
                        (*b, *a)
                    };
                    warnings.push(AnnotationWarning::NestedCoreference {
                        chain: chain.clone(),
                        outer,
                        inner,
                    });
                }
            }
        }
    }
    let mut counts: BTreeMap<Span, usize> = BTreeMap::new();
    for m in &annotation.mentions {
        *counts.entry(m.span).or_default() += 1;
    }
    for (span, n) in counts {
        if n > 1 {
            warnings.push(AnnotationWarning::DuplicateSpan { span });
        }
    }
    warnings
}
