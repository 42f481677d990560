//! Objective functions and the audit of candidate solutions.
//!
//! Three cost components are combined:
//! omitting an annotated link costs `w_omit` per supporting annotator (C1),
//! using a link costs `w_use` per annotator who did not give it (C2), and
//! putting two mentions without any annotated link into one chain (C3) is
//! either forbidden or costs a fixed weight per pair.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::enforcement::{check_enforcement, Violation};
use crate::instance::{link_costs, Instance, LinkId};
use crate::span::Span;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ObjectiveError {
    #[error("unknown objective `{0}` (expected one of u, ua, v, va)")]
    UnknownTag(String),
    #[error("link {0} does not belong to the instance")]
    UnknownLink(LinkId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ObjectiveTag {
    U,
    UA,
    V,
    VA,
}

impl ObjectiveTag {
    pub const ALL: [ObjectiveTag; 4] = [ObjectiveTag::U, ObjectiveTag::UA, ObjectiveTag::V, ObjectiveTag::VA];
}

impl FromStr for ObjectiveTag {
    type Err = ObjectiveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "u" => Ok(ObjectiveTag::U),
            "ua" => Ok(ObjectiveTag::UA),
            "v" => Ok(ObjectiveTag::V),
            "va" => Ok(ObjectiveTag::VA),
            _ => Err(ObjectiveError::UnknownTag(s.to_string())),
        }
    }
}

impl fmt::Display for ObjectiveTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObjectiveTag::U => "U",
            ObjectiveTag::UA => "UA",
            ObjectiveTag::V => "V",
            ObjectiveTag::VA => "VA",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum C3Mode {
    Hard,
    Soft(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Objective {
    pub tag: ObjectiveTag,
    pub w_omit: u64,
    pub w_use: u64,
    pub c3: C3Mode,
}

impl Objective {
    pub fn new(tag: ObjectiveTag) -> Self {
        let (w_omit, w_use, c3) = weights(tag);
        Objective { tag, w_omit, w_use, c3 }
    }

    /// Multiply every weight by `k`.
    pub fn scaled(self, k: u64) -> Self {
        Objective {
            w_omit: self.w_omit * k,
            w_use: self.w_use * k,
            c3: match self.c3 {
                C3Mode::Hard => C3Mode::Hard,
                C3Mode::Soft(w) => C3Mode::Soft(w * k),
            },
            ..self
        }
    }

    pub fn c3_weight(&self) -> Option<u64> {
        match self.c3 {
            C3Mode::Hard => None,
            C3Mode::Soft(w) => Some(w),
        }
    }
}

fn weights(tag: ObjectiveTag) -> (u64, u64, C3Mode) {
    match tag {
        ObjectiveTag::U => (2, 0, C3Mode::Hard),
        ObjectiveTag::V => (2, 1, C3Mode::Hard),
        ObjectiveTag::UA => (2, 0, C3Mode::Soft(1)),
        ObjectiveTag::VA => (2, 1, C3Mode::Soft(1)),
    }
}

/// `(w_omit, w_use, c3 mode)` for an objective name.
pub fn objective_weights(tag: &str) -> Result<(u64, u64, C3Mode), ObjectiveError> {
    Ok(weights(tag.parse()?))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CostBreakdown {
    pub c1: u64,
    pub c2: u64,
    pub c3: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Solution {
    /// Selected link ids, ascending.
    pub selected: Vec<LinkId>,
    /// Connected components of the selected links, each sorted, ordered by
    /// first mention.
    pub chains: Vec<Vec<Span>>,
    pub breakdown: CostBreakdown,
}

impl Solution {
    pub fn cost(&self) -> u64 {
        self.breakdown.total
    }

    /// Selected links as span pairs, sorted.
    pub fn link_spans(&self, instance: &Instance) -> Vec<(Span, Span)> {
        let mut v: Vec<_> = self.selected.iter().map(|&l| instance.link_spans(l)).collect();
        v.sort();
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InfeasibilityReport {
    /// Co-resident pairs without evidence, when C3 is hard.
    pub c3_pairs: Vec<(Span, Span)>,
    pub nested_pairs: Vec<(Span, Span)>,
    pub singleton_chains: Vec<Span>,
    pub violations: Vec<Violation>,
    pub chains: Vec<Vec<Span>>,
    pub breakdown: CostBreakdown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "feasibility", rename_all = "snake_case")]
pub enum Evaluation {
    Feasible(Solution),
    Infeasible(InfeasibilityReport),
}

impl Evaluation {
    pub fn solution(self) -> Option<Solution> {
        match self {
            Evaluation::Feasible(s) => Some(s),
            Evaluation::Infeasible(_) => None,
        }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self, Evaluation::Feasible(_))
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Connected components (of size two or more) of a set of links, as sorted
/// span lists ordered by first mention.
pub fn chains_of(instance: &Instance, selected: &[LinkId]) -> Vec<Vec<Span>> {
    let n = instance.cmentions().len();
    let mut parent: Vec<usize> = (0..n).collect();
    let mut touched = vec![false; n];
    for &l in selected {
        let link = &instance.links()[l];
        touched[link.m1] = true;
        touched[link.m2] = true;
        let (a, b) = (find(&mut parent, link.m1), find(&mut parent, link.m2));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut groups: BTreeMap<usize, Vec<Span>> = BTreeMap::new();
    for m in 0..n {
        if touched[m] {
            let r = find(&mut parent, m);
            groups.entry(r).or_default().push(instance.cmentions()[m]);
        }
    }
    let mut chains: Vec<Vec<Span>> = groups.into_values().collect();
    chains.sort();
    chains
}

/// Cost and feasibility of selecting exactly the links in `selected`.
pub fn evaluate(instance: &Instance, objective: &Objective, selected: &[LinkId]) -> Result<Evaluation, ObjectiveError> {
    let links = instance.links();
    let mut chosen = vec![false; links.len()];
    for &l in selected {
        if l >= links.len() {
            return Err(ObjectiveError::UnknownLink(l));
        }
        chosen[l] = true;
    }
    let costs = link_costs(instance, objective);
    let mut breakdown = CostBreakdown::default();
    for (l, c) in costs.iter().enumerate() {
        if chosen[l] {
            breakdown.c2 += c.use_;
        } else {
            breakdown.c1 += c.omit;
        }
    }
    let selected: Vec<LinkId> = (0..links.len()).filter(|&l| chosen[l]).collect();
    let chains = chains_of(instance, &selected);

    let id = |s: &Span| instance.mention_id(*s).expect("chain mention is a cmention");
    let mut c3_pairs = Vec::new();
    let mut nested_pairs = Vec::new();
    let mut singleton_chains = Vec::new();
    for chain in &chains {
        if chain.len() < 2 {
            singleton_chains.push(chain[0]);
        }
        for (i, a) in chain.iter().enumerate() {
            for b in &chain[i + 1..] {
                if a.nests_with(b) {
                    nested_pairs.push((*a, *b));
                }
                if instance.link_between(id(a), id(b)).is_none() {
                    c3_pairs.push((*a, *b));
                }
            }
        }
    }
    let violations = check_enforcement(instance.forced(), &chains);
    let hard_c3 = match objective.c3 {
        C3Mode::Hard => !c3_pairs.is_empty(),
        C3Mode::Soft(w) => {
            breakdown.c3 = w * c3_pairs.len() as u64;
            false
        }
    };
    breakdown.total = breakdown.c1 + breakdown.c2 + breakdown.c3;
    if hard_c3 || !nested_pairs.is_empty() || !singleton_chains.is_empty() || !violations.is_empty() {
        if !hard_c3 {
            c3_pairs.clear();
        }
        return Ok(Evaluation::Infeasible(InfeasibilityReport {
            c3_pairs,
            nested_pairs,
            singleton_chains,
            violations,
            chains,
            breakdown,
        }));
    }
    Ok(Evaluation::Feasible(Solution {
        selected,
        chains,
        breakdown,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conll::{Annotation, Mention};
    use crate::enforcement::ForcedSpec;
    use crate::instance::{build_instance, ForcedMode};

    fn s(a: usize, b: usize) -> Span {
        Span::new(a, b)
    }

    fn sample() -> Vec<Annotation> {
        let chains: [(&str, &[(&str, &[(usize, usize)])]); 4] = [
            ("a", &[("2", &[(1, 3), (6, 6)]), ("3", &[(2, 2), (4, 4)])]),
            ("b", &[("3", &[(1, 3), (5, 5)])]),
            ("c", &[("1", &[(1, 3), (6, 6)]), ("2", &[(1, 1), (4, 4)])]),
            ("d", &[("2", &[(1, 3), (5, 5)]), ("4", &[(2, 2), (6, 6)])]),
        ];
        chains
            .iter()
            .map(|(id, cs)| {
                let mut a = Annotation::new(*id);
                for (label, spans) in cs.iter() {
                    for &(x, y) in spans.iter() {
                        a.mentions.push(Mention {
                            span: s(x, y),
                            chain: label.to_string(),
                        });
                    }
                }
                a
            })
            .collect()
    }

    fn select(inst: &Instance, pairs: &[((usize, usize), (usize, usize))]) -> Vec<LinkId> {
        pairs
            .iter()
            .map(|(a, b)| inst.link_by_spans(s(a.0, a.1), s(b.0, b.1)).unwrap())
            .collect()
    }

    fn cost(inst: &Instance, tag: ObjectiveTag, sel: &[LinkId]) -> Evaluation {
        evaluate(inst, &Objective::new(tag), sel).unwrap()
    }

    #[test]
    fn weights_table() {
        assert_eq!(objective_weights("v").unwrap(), (2, 1, C3Mode::Hard));
        assert_eq!(objective_weights("U").unwrap(), (2, 0, C3Mode::Hard));
        assert_eq!(objective_weights("ua").unwrap(), (2, 0, C3Mode::Soft(1)));
        assert_eq!(objective_weights("va").unwrap(), (2, 1, C3Mode::Soft(1)));
        assert_eq!(
            objective_weights("w").unwrap_err(),
            ObjectiveError::UnknownTag("w".into())
        );
    }

    #[test]
    fn sample_costs() {
        let inst = build_instance(6, &sample(), None, ForcedMode::Annotator).unwrap();
        let chosen = select(&inst, &[((1, 3), (5, 5)), ((1, 1), (4, 4)), ((2, 2), (6, 6))]);
        let Evaluation::Feasible(sol) = cost(&inst, ObjectiveTag::U, &chosen) else {
            panic!("infeasible")
        };
        assert_eq!(sol.breakdown.total, 6);
        assert_eq!(
            sol.chains,
            vec![vec![s(1, 1), s(4, 4)], vec![s(1, 3), s(5, 5)], vec![s(2, 2), s(6, 6)]]
        );

        assert_eq!(cost(&inst, ObjectiveTag::V, &chosen).solution().unwrap().cost(), 14);

        let left = select(&inst, &[((1, 3), (5, 5))]);
        let right = select(&inst, &[((1, 3), (6, 6))]);
        assert_eq!(cost(&inst, ObjectiveTag::V, &left).solution().unwrap().cost(), 12);
        assert_eq!(cost(&inst, ObjectiveTag::V, &right).solution().unwrap().cost(), 12);
        // (1,3)-(6,6) and (1,3)-(5,5) together leave (5,5)-(6,6) without evidence
        let both = select(&inst, &[((1, 3), (6, 6)), ((1, 3), (5, 5))]);
        let Evaluation::Infeasible(report) = cost(&inst, ObjectiveTag::V, &both) else {
            panic!("feasible")
        };
        assert_eq!(report.c3_pairs, vec![(s(5, 5), s(6, 6))]);

        let sol = cost(&inst, ObjectiveTag::VA, &both).solution().unwrap();
        assert_eq!(
            sol.breakdown,
            CostBreakdown {
                c1: 6,
                c2: 4,
                c3: 1,
                total: 11
            }
        );
        assert_eq!(sol.chains, vec![vec![s(1, 3), s(5, 5), s(6, 6)]]);
    }

    #[test]
    fn empty_selection_costs_all_omissions() {
        let inst = build_instance(6, &sample(), None, ForcedMode::Annotator).unwrap();
        for tag in ObjectiveTag::ALL {
            let sol = cost(&inst, tag, &[]).solution().unwrap();
            assert_eq!(sol.cost(), 2 * 7);
            assert!(sol.chains.is_empty());
        }
    }

    #[test]
    fn unknown_link_is_an_error() {
        let inst = build_instance(6, &sample(), None, ForcedMode::Annotator).unwrap();
        assert_eq!(
            evaluate(&inst, &Objective::new(ObjectiveTag::U), &[99]).unwrap_err(),
            ObjectiveError::UnknownLink(99)
        );
    }

    #[test]
    fn nested_pairs_are_infeasible() {
        let inst = build_instance(6, &sample(), None, ForcedMode::Annotator).unwrap();
        let sel = select(&inst, &[((1, 3), (5, 5)), ((2, 2), (6, 6)), ((1, 3), (6, 6))]);
        let Evaluation::Infeasible(report) = cost(&inst, ObjectiveTag::UA, &sel) else {
            panic!("feasible")
        };
        assert_eq!(report.nested_pairs, vec![(s(1, 3), s(2, 2))]);
        assert!(report.c3_pairs.is_empty());
    }

    #[test]
    fn enforcement_is_audited() {
        let mut forced = ForcedSpec::new();
        forced.force_mention(s(1, 3), "2").unwrap();
        forced.force_mention(s(6, 6), "2").unwrap();
        forced.lock_token(1);
        forced.lock_token(6);
        let inst = build_instance(6, &sample(), Some(&forced), ForcedMode::Annotator).unwrap();
        let resolved = select(&inst, &[((1, 3), (6, 6)), ((2, 2), (4, 4))]);
        let sol = cost(&inst, ObjectiveTag::U, &resolved).solution().unwrap();
        assert_eq!(sol.cost(), 8);
        let with_11 = select(&inst, &[((1, 3), (6, 6)), ((1, 1), (4, 4))]);
        let Evaluation::Infeasible(report) = cost(&inst, ObjectiveTag::U, &with_11) else {
            panic!("feasible")
        };
        assert_eq!(
            report.violations,
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
    fn scaling_multiplies_costs() {
        let inst = build_instance(6, &sample(), None, ForcedMode::Annotator).unwrap();
        let sel = select(&inst, &[((1, 3), (6, 6)), ((2, 2), (4, 4))]);
        let base = evaluate(&inst, &Objective::new(ObjectiveTag::VA), &sel)
            .unwrap()
            .solution()
            .unwrap();
        let scaled = evaluate(&inst, &Objective::new(ObjectiveTag::VA).scaled(3), &sel)
            .unwrap()
            .solution()
            .unwrap();
        assert_eq!(scaled.cost(), 3 * base.cost());
    }
}
