//! Human-enforced constraints for semi-automatic re-adjudication.
//!
//! A [`ForcedSpec`] collects forced chains (mentions that must appear, grouped
//! by the chain they must share), tokens whose boundary information is locked
//! by the adjudicator, and tokens that must stay free of mention boundaries.
//! Mentions in the same forced chain must end up in one result chain; mentions
//! of different forced chains must end up in different result chains.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::span::Span;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForcedChain {
    pub label: String,
    pub spans: Vec<Span>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForcedSpec {
    chains: Vec<ForcedChain>,
    locked_tokens: BTreeSet<usize>,
    empty_tokens: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnforcementError {
    #[error("mention {0} is forced into two different chains")]
    SpanInTwoChains(Span),
    #[error("mentions {0} and {1} are forced both into one chain and into different chains")]
    SameAndDifferent(Span, Span),
    #[error("forced mention {span} has a boundary at token {token}, which is forced empty")]
    BoundaryAtEmptyToken { span: Span, token: usize },
    #[error("forced mention {span} lies outside the document (1..{token_count})")]
    OutOfRange { span: Span, token_count: usize },
    #[error("token {token} lies outside the document (1..{token_count})")]
    TokenOutOfRange { token: usize, token_count: usize },
}

/// One way a candidate result fails the enforced constraints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// A forced mention does not occur in any result chain.
    MissingMention { span: Span },
    /// A non-forced result mention starts at a token whose starts are enforced.
    StartAtLockedToken { span: Span, token: usize },
    /// A non-forced result mention ends at a token whose ends are enforced.
    EndAtLockedToken { span: Span, token: usize },
    /// A result mention has a boundary on a token enforced to be empty.
    BoundaryAtEmptyToken { span: Span, token: usize },
    /// Two mentions forced into one chain sit in different result chains.
    SameChainSplit { first: Span, second: Span },
    /// Two mentions forced into different chains share a result chain.
    DifferentChainsJoined { first: Span, second: Span },
}

impl ForcedSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.chains.is_empty() && self.locked_tokens.is_empty() && self.empty_tokens.is_empty()
    }

    pub fn chains(&self) -> &[ForcedChain] {
        &self.chains
    }

    /// Force `span` to exist as a member of the forced chain `label`.
    pub fn force_mention(&mut self, span: Span, label: &str) -> Result<(), EnforcementError> {
        if let Some(existing) = self.label_of(span) {
            if existing == label {
                return Ok(());
            }
            return Err(EnforcementError::SpanInTwoChains(span));
        }
        match self.chains.iter_mut().find(|c| c.label == label) {
            Some(chain) => {
                chain.spans.push(span);
                chain.spans.sort();
            }
            None => self.chains.push(ForcedChain {
                label: label.to_string(),
                spans: vec![span],
            }),
        }
        Ok(())
    }

    /// Force two mentions into one chain, reusing a forced chain one of them
    /// already belongs to.
    pub fn force_same(&mut self, first: Span, second: Span) -> Result<(), EnforcementError> {
        match (self.label_of(first), self.label_of(second)) {
            (Some(a), Some(b)) if a != b => Err(EnforcementError::SameAndDifferent(first, second)),
            (Some(a), _) => {
                let a = a.to_string();
                self.force_mention(second, &a)
            }
            (None, Some(b)) => {
                let b = b.to_string();
                self.force_mention(first, &b)
            }
            (None, None) => {
                let label = self.fresh_label();
                self.force_mention(first, &label)?;
                self.force_mention(second, &label)
            }
        }
    }

    /// Force two mentions into different chains, opening fresh forced chains
    /// for mentions that are not forced yet.
    pub fn force_different(&mut self, first: Span, second: Span) -> Result<(), EnforcementError> {
        if first == second {
            return Err(EnforcementError::SameAndDifferent(first, second));
        }
        match (self.label_of(first), self.label_of(second)) {
            (Some(a), Some(b)) if a == b => Err(EnforcementError::SameAndDifferent(first, second)),
            (Some(_), Some(_)) => Ok(()),
            (Some(_), None) => {
                let label = self.fresh_label();
                self.force_mention(second, &label)
            }
            (None, Some(_)) => {
                let label = self.fresh_label();
                self.force_mention(first, &label)
            }
            (None, None) => {
                let label = self.fresh_label();
                self.force_mention(first, &label)?;
                let label = self.fresh_label();
                self.force_mention(second, &label)
            }
        }
    }

    pub fn force_empty(&mut self, token: usize) {
        self.empty_tokens.insert(token);
    }

    /// Lock a token: only forced mentions may start or end there.
    pub fn lock_token(&mut self, token: usize) {
        self.locked_tokens.insert(token);
    }

    pub fn label_of(&self, span: Span) -> Option<&str> {
        self.chains
            .iter()
            .find(|c| c.spans.contains(&span))
            .map(|c| c.label.as_str())
    }

    pub fn forced_mentions(&self) -> BTreeSet<Span> {
        self.chains.iter().flat_map(|c| c.spans.iter().copied()).collect()
    }

    /// Label assignment for every forced mention, used to keep result chain
    /// numbering aligned with the enforced fields.
    pub fn labels(&self) -> BTreeMap<Span, String> {
        self.chains
            .iter()
            .flat_map(|c| c.spans.iter().map(move |s| (*s, c.label.clone())))
            .collect()
    }

    pub fn same_pairs(&self) -> Vec<(Span, Span)> {
        let mut out = Vec::new();
        for chain in &self.chains {
            for (i, a) in chain.spans.iter().enumerate() {
                for b in &chain.spans[i + 1..] {
                    out.push(ordered(*a, *b));
                }
            }
        }
        out.sort();
        out
    }

    pub fn diff_pairs(&self) -> Vec<(Span, Span)> {
        let mut out = Vec::new();
        for (i, c1) in self.chains.iter().enumerate() {
            for c2 in &self.chains[i + 1..] {
                for a in &c1.spans {
                    for b in &c2.spans {
                        out.push(ordered(*a, *b));
                    }
                }
            }
        }
        out.sort();
        out
    }

    /// Tokens at which only forced mentions may start.
    pub fn start_tokens(&self) -> BTreeSet<usize> {
        let mut out = self.locked_tokens.clone();
        out.extend(self.chains.iter().flat_map(|c| c.spans.iter().map(|s| s.start)));
        out
    }

    /// Tokens at which only forced mentions may end.
    pub fn end_tokens(&self) -> BTreeSet<usize> {
        let mut out = self.locked_tokens.clone();
        out.extend(self.chains.iter().flat_map(|c| c.spans.iter().map(|s| s.end)));
        out
    }

    pub fn locked_tokens(&self) -> &BTreeSet<usize> {
        &self.locked_tokens
    }

    pub fn empty_tokens(&self) -> &BTreeSet<usize> {
        &self.empty_tokens
    }

    /// Whether a candidate mention may appear in a result at all, judged
    /// only by the token-level enforcement.
    pub fn admits_mention(&self, span: Span) -> bool {
        if self.empty_tokens.contains(&span.start) || self.empty_tokens.contains(&span.end) {
            return false;
        }
        if self.label_of(span).is_some() {
            return true;
        }
        !self.start_tokens().contains(&span.start) && !self.end_tokens().contains(&span.end)
    }

    pub fn validate(&self, token_count: usize) -> Result<(), EnforcementError> {
        let mut seen = BTreeSet::new();
        for chain in &self.chains {
            for span in &chain.spans {
                if !span.is_valid_for(token_count) {
                    return Err(EnforcementError::OutOfRange {
                        span: *span,
                        token_count,
                    });
                }
                if !seen.insert(*span) {
                    return Err(EnforcementError::SpanInTwoChains(*span));
                }
                for token in [span.start, span.end] {
                    if self.empty_tokens.contains(&token) {
                        return Err(EnforcementError::BoundaryAtEmptyToken { span: *span, token });
                    }
                }
            }
        }
        for &token in self.locked_tokens.iter().chain(&self.empty_tokens) {
            if token == 0 || token > token_count {
                return Err(EnforcementError::TokenOutOfRange { token, token_count });
            }
        }
        Ok(())
    }

    fn fresh_label(&self) -> String {
        let used: BTreeSet<u64> = self.chains.iter().filter_map(|c| c.label.parse().ok()).collect();
        let mut n = 1u64;
        while used.contains(&n) || self.chains.iter().any(|c| c.label == n.to_string()) {
            n += 1;
        }
        n.to_string()
    }
}

fn ordered(a: Span, b: Span) -> (Span, Span) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Audit result chains against enforced constraints.
pub fn check_enforcement(forced: &ForcedSpec, chains: &[Vec<Span>]) -> Vec<Violation> {
    let mut violations = Vec::new();
    if forced.is_empty() {
        return violations;
    }
    let mut chain_of: BTreeMap<Span, usize> = BTreeMap::new();
    for (i, chain) in chains.iter().enumerate() {
        for span in chain {
            chain_of.insert(*span, i);
        }
    }
    let forced_mentions = forced.forced_mentions();
    for span in &forced_mentions {
        if !chain_of.contains_key(span) {
            violations.push(Violation::MissingMention { span: *span });
        }
    }
    let starts = forced.start_tokens();
    let ends = forced.end_tokens();
    for span in chain_of.keys() {
        for token in [span.start, span.end] {
            if forced.empty_tokens.contains(&token) {
                violations.push(Violation::BoundaryAtEmptyToken { span: *span, token });
            }
        }
        if forced_mentions.contains(span) {
            continue;
        }
        if starts.contains(&span.start) && !forced.empty_tokens.contains(&span.start) {
            violations.push(Violation::StartAtLockedToken {
                span: *span,
                token: span.start,
            });
        }
        if ends.contains(&span.end) && !forced.empty_tokens.contains(&span.end) {
            violations.push(Violation::EndAtLockedToken {
                span: *span,
                token: span.end,
            });
        }
    }
    for (a, b) in forced.same_pairs() {
        if let (Some(x), Some(y)) = (chain_of.get(&a), chain_of.get(&b)) {
            if x != y {
                violations.push(Violation::SameChainSplit { first: a, second: b });
            }
        }
    }
    for (a, b) in forced.diff_pairs() {
        if let (Some(x), Some(y)) = (chain_of.get(&a), chain_of.get(&b)) {
            if x == y {
                violations.push(Violation::DifferentChainsJoined { first: a, second: b });
            }
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(a: usize, b: usize) -> Span {
        Span::new(a, b)
    }

    fn example_six() -> ForcedSpec {
        let mut f = ForcedSpec::new();
        f.force_mention(s(1, 3), "2").unwrap();
        f.force_mention(s(6, 6), "2").unwrap();
        f.lock_token(1);
        f.lock_token(6);
        f
    }

    #[test]
    fn example_six_result_has_no_violations() {
        let f = example_six();
        let chains = vec![vec![s(1, 3), s(6, 6)], vec![s(2, 2), s(4, 4)]];
        assert!(check_enforcement(&f, &chains).is_empty());
    }

    #[test]
    fn mention_at_locked_start_is_reported() {
        let f = example_six();
        let chains = vec![vec![s(1, 3), s(6, 6)], vec![s(1, 1), s(4, 4)]];
        let v = check_enforcement(&f, &chains);
        assert_eq!(
            v,
            vec![
                Violation::StartAtLockedToken {
                    span: s(1, 1),
                    token: 1
                },
                Violation::EndAtLockedToken {
                    span: s(1, 1),
                    token: 1
                }
            ]
        );
    }

    #[test]
    fn empty_spec_accepts_anything() {
        let f = ForcedSpec::new();
        let chains = vec![vec![s(1, 1), s(1, 3)]];
        assert!(check_enforcement(&f, &chains).is_empty());
    }

    #[test]
    fn split_join_and_missing() {
        let mut f = ForcedSpec::new();
        f.force_same(s(1, 1), s(3, 3)).unwrap();
        f.force_different(s(1, 1), s(5, 5)).unwrap();
        let chains = vec![vec![s(1, 1), s(5, 5)]];
        let v = check_enforcement(&f, &chains);
        assert!(v.contains(&Violation::MissingMention { span: s(3, 3) }));
        assert!(v.contains(&Violation::DifferentChainsJoined {
            first: s(1, 1),
            second: s(5, 5)
        }));
        let chains = vec![vec![s(1, 1), s(2, 2)], vec![s(3, 3), s(4, 4)]];
        let v = check_enforcement(&f, &chains);
        assert!(v.contains(&Violation::SameChainSplit {
            first: s(1, 1),
            second: s(3, 3)
        }));
    }

    #[test]
    fn contradictory_pairs_are_rejected() {
        let mut f = ForcedSpec::new();
        f.force_same(s(1, 1), s(3, 3)).unwrap();
        assert_eq!(
            f.force_different(s(1, 1), s(3, 3)),
            Err(EnforcementError::SameAndDifferent(s(1, 1), s(3, 3)))
        );
        let mut g = ForcedSpec::new();
        g.force_different(s(1, 1), s(3, 3)).unwrap();
        assert!(g.force_same(s(1, 1), s(3, 3)).is_err());
    }

    #[test]
    fn forced_boundary_on_empty_token_fails_validation() {
        let mut f = ForcedSpec::new();
        f.force_same(s(1, 2), s(4, 4)).unwrap();
        f.force_empty(2);
        assert_eq!(
            f.validate(6),
            Err(EnforcementError::BoundaryAtEmptyToken {
                span: s(1, 2),
                token: 2
            })
        );
        f = ForcedSpec::new();
        f.force_same(s(1, 2), s(4, 9)).unwrap();
        assert!(matches!(f.validate(6), Err(EnforcementError::OutOfRange { .. })));
    }

    #[test]
    fn admits_mention_respects_tokens() {
        let mut f = example_six();
        f.force_empty(5);
        assert!(f.admits_mention(s(1, 3)));
        assert!(!f.admits_mention(s(1, 1)));
        assert!(!f.admits_mention(s(5, 5)));
        assert!(!f.admits_mention(s(2, 3)));
        assert!(f.admits_mention(s(2, 2)));
    }
}
