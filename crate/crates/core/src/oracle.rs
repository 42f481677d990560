//! Exhaustive optimizer for small instances, used to check the solver.
//! Every subset of links is scored with [`evaluate`]; nothing else from the
//! solver is consulted.

use thiserror::Error;

use crate::instance::{Instance, LinkId};
use crate::objective::{evaluate, Evaluation, Objective};

pub const MAX_ORACLE_LINKS: usize = 22;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("instance has {links} links; the oracle handles at most {limit}")]
pub struct TooManyLinks {
    pub links: usize,
    pub limit: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OracleResult {
    Optimal {
        cost: u64,
        /// Every optimal selection, each sorted, in ascending order.
        selections: Vec<Vec<LinkId>>,
    },
    Infeasible,
}

impl OracleResult {
    pub fn cost(&self) -> Option<u64> {
        match self {
            OracleResult::Optimal { cost, .. } => Some(*cost),
            OracleResult::Infeasible => None,
        }
    }
}

/// Visit all link subsets in Gray-code order and keep the cheapest feasible
/// ones.
pub fn brute_force_optimum(instance: &Instance, objective: &Objective) -> Result<OracleResult, TooManyLinks> {
    let count = instance.links().len();
    if count > MAX_ORACLE_LINKS {
        return Err(TooManyLinks {
            links: count,
            limit: MAX_ORACLE_LINKS,
        });
    }
    let mut best: Option<u64> = None;
    let mut selections: Vec<Vec<LinkId>> = Vec::new();
    let mut mask: u32 = 0;
    let mut selected: Vec<LinkId> = Vec::with_capacity(count);
    for step in 0u32..(1u32 << count) {
        if step > 0 {
            // flip the lowest set bit position of the step counter
            mask ^= 1 << step.trailing_zeros();
        }
        selected.clear();
        selected.extend((0..count).filter(|&l| mask >> l & 1 == 1));
        let Evaluation::Feasible(sol) = evaluate(instance, objective, &selected).expect("own links") else {
            continue;
        };
        let cost = sol.cost();
        match best {
            Some(b) if cost > b => {}
            Some(b) if cost == b => selections.push(selected.clone()),
            _ => {
                best = Some(cost);
                selections.clear();
                selections.push(selected.clone());
            }
        }
    }
    Ok(match best {
        Some(cost) => {
            selections.sort();
            OracleResult::Optimal { cost, selections }
        }
        None => OracleResult::Infeasible,
    })
}
