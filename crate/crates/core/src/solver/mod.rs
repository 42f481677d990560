//! Exact anytime optimization of adjudication instances.
//!
//! The instance is split into independent components of the link graph and
//! each component is searched by branch-and-bound, either over link
//! inclusion ([`Strategy::Mm`]) or over mention-to-chain assignment
//! ([`Strategy::Cm`]). One budget (time, nodes, cancellation) is shared by
//! all components; components left when it runs out keep a greedy
//! incumbent.

mod budget;
mod cm;
mod mm;
mod problem;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Duration;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::instance::{link_costs, Instance, LinkId};
use crate::objective::{evaluate, Objective, Solution};
use crate::span::Span;

use budget::Budget;
use problem::{decompose, Problem};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown strategy `{0}` (expected mm or cm)")]
pub struct UnknownStrategy(pub String);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Mm,
    Cm,
}

impl FromStr for Strategy {
    type Err = UnknownStrategy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mm" => Ok(Strategy::Mm),
            "cm" => Ok(Strategy::Cm),
            _ => Err(UnknownStrategy(s.to_string())),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Mm => "mm",
            Strategy::Cm => "cm",
        })
    }
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub strategy: Strategy,
    pub time_budget: Option<Duration>,
    pub node_budget: Option<u64>,
    /// Collect up to this many optimal selections; 0 returns one optimum.
    pub enumerate_optima_up_to: usize,
    /// Searches are always deterministic; the flag is kept for callers
    /// that record their configuration.
    pub deterministic: bool,
    pub cancel: Option<Arc<AtomicBool>>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            strategy: Strategy::Mm,
            time_budget: Some(Duration::from_secs(300)),
            node_budget: None,
            enumerate_optima_up_to: 0,
            deterministic: true,
            cancel: None,
        }
    }
}

impl SolverConfig {
    pub fn with_strategy(strategy: Strategy) -> Self {
        SolverConfig {
            strategy,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Optimal,
    Feasible,
    Infeasible,
    BudgetExhaustedNoSolution,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Optimal => "optimal",
            Status::Feasible => "feasible",
            Status::Infeasible => "infeasible",
            Status::BudgetExhaustedNoSolution => "budget_exhausted_no_solution",
        })
    }
}

/// One enforcement constraint taking part in an infeasibility.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    ForcedMention { span: Span },
    SameChain { first: Span, second: Span },
    DifferentChains { first: Span, second: Span },
}

/// A set of constraints that cannot be satisfied together.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InfeasibilityWitness {
    pub reason: String,
    pub constraints: Vec<Constraint>,
}

fn secs<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SolveStats {
    pub nodes: u64,
    pub prunes: u64,
    #[serde(serialize_with = "secs", rename = "elapsed_s")]
    pub elapsed: Duration,
    pub components: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveOutcome {
    pub status: Status,
    pub best: Option<Solution>,
    pub lower_bound: u64,
    /// Optimal solutions when enumeration was requested, sorted by their
    /// link lists; empty otherwise.
    pub optima: Vec<Solution>,
    pub stats: SolveStats,
    pub chain_bound: usize,
    /// The reported solution has more chains than the chain bound.
    pub bound_limited: bool,
    pub witness: Option<InfeasibilityWitness>,
}

impl SolveOutcome {
    /// `(cost − lower_bound) / lower_bound`; `None` without a solution or
    /// when the bound is zero but the cost is not.
    pub fn gap(&self) -> Option<f64> {
        let best = self.best.as_ref()?.cost();
        if best == self.lower_bound {
            Some(0.0)
        } else if self.lower_bound == 0 {
            None
        } else {
            Some((best - self.lower_bound) as f64 / self.lower_bound as f64)
        }
    }
}

/// Search state shared by both strategies for one component.
#[derive(Debug, Clone)]
pub(crate) struct SearchResult {
    pub best: Option<(Vec<bool>, u64)>,
    pub optima: Vec<Vec<bool>>,
    pub lower_bound: u64,
    pub complete: bool,
    enumerate: usize,
    seen: BTreeSet<Vec<bool>>,
}

impl SearchResult {
    fn new(incumbent: Option<(Vec<bool>, u64)>, enumerate: usize) -> Self {
        SearchResult {
            best: incumbent,
            optima: Vec::new(),
            lower_bound: 0,
            complete: false,
            enumerate,
            seen: BTreeSet::new(),
        }
    }

    /// Whether a subtree with this bound can be skipped.
    #[inline]
    fn prunes(&self, bound: u64) -> bool {
        match &self.best {
            None => false,
            Some((_, best)) if self.enumerate > self.optima.len() => bound > *best,
            Some((_, best)) => bound >= *best,
        }
    }

    fn record(&mut self, selected: &[bool], cost: u64) {
        match &self.best {
            Some((_, best)) if cost > *best => {}
            Some((_, best)) if cost == *best => {
                if self.optima.len() < self.enumerate && self.seen.insert(selected.to_vec()) {
                    self.optima.push(selected.to_vec());
                }
            }
            _ => {
                self.best = Some((selected.to_vec(), cost));
                self.optima.clear();
                self.seen.clear();
                if self.enumerate > 0 {
                    self.seen.insert(selected.to_vec());
                    self.optima.push(selected.to_vec());
                }
            }
        }
    }

    fn finish_complete(&mut self) {
        self.complete = true;
        self.lower_bound = self.best.as_ref().map_or(u64::MAX, |b| b.1);
    }

    fn finish_aborted(&mut self, bound: u64) {
        self.complete = false;
        self.lower_bound = self.best.as_ref().map_or(bound, |b| b.1.min(bound));
    }
}

/// Maximum number of chains a result may need: the largest per-annotator
/// chain count scaled by 6/5, never below that count.
pub fn chain_bound(instance: &Instance) -> usize {
    let c = instance.max_chain_count();
    (6 * c / 5).max(c)
}

/// Committed cost of the decided links plus `min(omit, use)` for each
/// undecided one. C3 costs of pairs already joined by selected links are
/// included under soft C3, so with every link decided this equals the
/// evaluated cost of a feasible selection.
pub fn lower_bound(instance: &Instance, objective: &Objective, decisions: &[Option<bool>]) -> u64 {
    assert_eq!(decisions.len(), instance.links().len(), "one decision slot per link");
    let costs = link_costs(instance, objective);
    let mut total = 0;
    let mut selected = Vec::new();
    for (l, (d, c)) in decisions.iter().zip(&costs).enumerate() {
        total += match d {
            Some(true) => {
                selected.push(l);
                c.use_
            }
            Some(false) => c.omit,
            None => c.omit.min(c.use_),
        };
    }
    if let Some(w) = objective.c3_weight() {
        for chain in crate::objective::chains_of(instance, &selected) {
            for (i, a) in chain.iter().enumerate() {
                for b in &chain[i + 1..] {
                    if instance.link_by_spans(*a, *b).is_none() {
                        total += w;
                    }
                }
            }
        }
    }
    total
}

fn run_component(p: &Problem, strategy: Strategy, budget: &mut Budget, enumerate: usize, slots: usize) -> SearchResult {
    let mut r = search_component(p, strategy, budget, enumerate, slots);
    if !r.complete {
        let bound = p.static_bound();
        r.lower_bound = r.lower_bound.max(r.best.as_ref().map_or(bound, |b| b.1.min(bound)));
    }
    r
}

fn search_component(
    p: &Problem,
    strategy: Strategy,
    budget: &mut Budget,
    enumerate: usize,
    slots: usize,
) -> SearchResult {
    let incumbent = p.greedy();
    if budget.check() {
        let mut r = SearchResult::new(incumbent, enumerate);
        r.finish_aborted(p.root_bound());
        return r;
    }
    match strategy {
        Strategy::Mm => mm::search(p, budget, enumerate, incumbent),
        Strategy::Cm => {
            let all = p.n() / 2;
            let first = slots.min(all).max(1);
            let r = cm::search(p, budget, enumerate, incumbent, first);
            if first >= all || budget.exhausted() {
                if first >= all {
                    return r;
                }
                // the restricted search proves nothing about the full one
                let mut r = r;
                r.complete = false;
                r.lower_bound = r.best.as_ref().map_or(p.root_bound(), |b| b.1.min(p.root_bound()));
                return r;
            }
            let mut full = cm::search(p, budget, enumerate, r.best.clone(), all);
            if full.optima.is_empty() && enumerate > 0 {
                full.optima = r.optima;
            }
            full
        }
    }
}

/// Minimum-cost feasible solution of `instance` under `objective`.
pub fn solve(instance: &Instance, objective: &Objective, config: &SolverConfig) -> SolveOutcome {
    let mut budget = Budget::new(config.time_budget, config.node_budget, config.cancel.clone());
    let enumerate = config.enumerate_optima_up_to;
    let n_bound = chain_bound(instance);
    let decomposition = decompose(instance, objective, enumerate > 0);
    let infeasible = |budget: &Budget, witness: InfeasibilityWitness, components: usize| SolveOutcome {
        status: Status::Infeasible,
        best: None,
        lower_bound: 0,
        optima: Vec::new(),
        stats: SolveStats {
            nodes: budget.nodes,
            prunes: budget.prunes,
            elapsed: budget.elapsed(),
            components,
        },
        chain_bound: n_bound,
        bound_limited: false,
        witness: Some(witness),
    };
    if let Some(witness) = decomposition.infeasible {
        return infeasible(&budget, witness, 0);
    }

    let problems = &decomposition.problems;
    let mut results = Vec::with_capacity(problems.len());
    for p in problems {
        let r = run_component(p, config.strategy, &mut budget, enumerate, n_bound);
        if r.complete && r.best.is_none() {
            let witness = p.witness("no selection satisfies the enforcement in this component");
            return infeasible(&budget, witness, problems.len());
        }
        results.push(r);
    }

    let lower_bound = decomposition.fixed_cost + results.iter().map(|r| r.lower_bound).sum::<u64>();
    let stats = SolveStats {
        nodes: budget.nodes,
        prunes: budget.prunes,
        elapsed: budget.elapsed(),
        components: problems.len(),
    };
    if results.iter().any(|r| r.best.is_none()) {
        return SolveOutcome {
            status: Status::BudgetExhaustedNoSolution,
            best: None,
            lower_bound,
            optima: Vec::new(),
            stats,
            chain_bound: n_bound,
            bound_limited: false,
            witness: None,
        };
    }

    let to_solution = |choice: &[&[bool]]| -> Solution {
        let mut selected: Vec<LinkId> = Vec::new();
        for (p, sel) in problems.iter().zip(choice) {
            selected.extend(
                p.links
                    .iter()
                    .zip(sel.iter())
                    .filter(|(_, s)| **s)
                    .map(|(l, _)| l.global),
            );
        }
        selected.sort_unstable();
        evaluate(instance, objective, &selected)
            .expect("selection uses instance links")
            .solution()
            .expect("component searches only report feasible selections")
    };

    let best_choice: Vec<&[bool]> = results
        .iter()
        .map(|r| r.best.as_ref().map(|b| b.0.as_slice()).unwrap())
        .collect();
    let mut best = to_solution(&best_choice);
    debug_assert_eq!(
        best.cost(),
        decomposition.fixed_cost + results.iter().map(|r| r.best.as_ref().unwrap().1).sum::<u64>()
    );

    let mut optima = Vec::new();
    if enumerate > 0 {
        let lists: Vec<Vec<&[bool]>> = results
            .iter()
            .map(|r| {
                if r.optima.is_empty() {
                    vec![r.best.as_ref().unwrap().0.as_slice()]
                } else {
                    r.optima.iter().map(Vec::as_slice).collect()
                }
            })
            .collect();
        let mut odometer = vec![0usize; lists.len()];
        'product: while optima.len() < enumerate {
            let choice: Vec<&[bool]> = lists.iter().zip(&odometer).map(|(l, &i)| l[i]).collect();
            optima.push(to_solution(&choice));
            for k in (0..odometer.len()).rev() {
                odometer[k] += 1;
                if odometer[k] < lists[k].len() {
                    continue 'product;
                }
                odometer[k] = 0;
            }
            break;
        }
        optima.sort_by_cached_key(|s| s.link_spans(instance));
        best = optima[0].clone();
    }

    let status = if best.cost() == lower_bound {
        Status::Optimal
    } else {
        Status::Feasible
    };
    let bound_limited = best.chains.len() > n_bound;
    SolveOutcome {
        status,
        best: Some(best),
        lower_bound,
        optima,
        stats,
        chain_bound: n_bound,
        bound_limited,
        witness: None,
    }
}
