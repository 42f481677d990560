//! Splitting an instance into independent components and the compact
//! per-component representation both search strategies work on.

use std::collections::{BTreeMap, BTreeSet};

use crate::instance::{link_costs, Instance, LinkId, MentionId};
use crate::objective::Objective;
use crate::solver::{Constraint, InfeasibilityWitness};
use crate::span::Span;

#[derive(Debug, Clone)]
pub(crate) struct LocalLink {
    pub a: usize,
    pub b: usize,
    pub omit: u64,
    pub use_: u64,
    pub global: LinkId,
    /// Both endpoints belong to one forced chain.
    pub forced: bool,
}

impl LocalLink {
    #[inline]
    pub fn min_cost(&self) -> u64 {
        self.omit.min(self.use_)
    }
}

/// One connected component of the candidate link graph.
#[derive(Debug, Clone)]
pub(crate) struct Problem {
    /// Global mention ids, ascending.
    pub mentions: Vec<MentionId>,
    pub spans: Vec<Span>,
    /// In instance (branching) order.
    pub links: Vec<LocalLink>,
    pub words: usize,
    /// Row-major `n × words` bit matrices.
    pub evidence: Vec<u64>,
    pub blocked: Vec<u64>,
    pub c3_weight: Option<u64>,
    pub required: Vec<usize>,
    pub same: Vec<(usize, usize)>,
    pub diff: Vec<(usize, usize)>,
}

#[inline]
pub(crate) fn bit(row: &[u64], i: usize) -> bool {
    row[i / 64] >> (i % 64) & 1 == 1
}

#[inline]
pub(crate) fn set_bit(row: &mut [u64], i: usize) {
    row[i / 64] |= 1 << (i % 64);
}

#[inline]
pub(crate) fn clear_bit(row: &mut [u64], i: usize) {
    row[i / 64] &= !(1 << (i % 64));
}

#[inline]
pub(crate) fn intersects(a: &[u64], b: &[u64]) -> bool {
    a.iter().zip(b).any(|(x, y)| x & y != 0)
}

#[inline]
pub(crate) fn and_count(a: &[u64], b: &[u64]) -> u64 {
    a.iter().zip(b).map(|(x, y)| (x & y).count_ones() as u64).sum()
}

impl Problem {
    pub fn n(&self) -> usize {
        self.mentions.len()
    }

    #[inline]
    pub fn row<'a>(&self, matrix: &'a [u64], m: usize) -> &'a [u64] {
        &matrix[m * self.words..(m + 1) * self.words]
    }

    pub fn is_enforced(&self) -> bool {
        !self.required.is_empty()
    }

    /// Sum of `min(omit, use)` over all links; a bound on every selection.
    pub fn root_bound(&self) -> u64 {
        self.links.iter().map(LocalLink::min_cost).sum()
    }

    /// Root bound plus a packing of conflicting link pairs. Links `ab` and
    /// `bc` cannot both be selected when `a` and `c` are blocked, so one of
    /// them pays its omission surcharge. Pairs are packed greedily with
    /// every link in at most one pair.
    pub fn static_bound(&self) -> u64 {
        let surcharge: Vec<u64> = self.links.iter().map(|l| l.omit - l.min_cost()).collect();
        let mut incident: Vec<Vec<usize>> = vec![Vec::new(); self.n()];
        for (l, link) in self.links.iter().enumerate() {
            if surcharge[l] > 0 {
                incident[link.a].push(l);
                incident[link.b].push(l);
            }
        }
        let other = |l: usize, m: usize| {
            let link = &self.links[l];
            if link.a == m {
                link.b
            } else {
                link.a
            }
        };
        let mut pairs: Vec<(u64, usize, usize)> = Vec::new();
        for (m, ls) in incident.iter().enumerate() {
            for (i, &l1) in ls.iter().enumerate() {
                let blocked = self.row(&self.blocked, other(l1, m));
                for &l2 in &ls[i + 1..] {
                    if bit(blocked, other(l2, m)) {
                        pairs.push((surcharge[l1].min(surcharge[l2]), l1, l2));
                    }
                }
            }
        }
        pairs.sort_unstable_by(|x, y| y.cmp(x));
        let mut used = vec![false; self.links.len()];
        let mut extra = 0;
        for (gain, l1, l2) in pairs {
            if !used[l1] && !used[l2] {
                used[l1] = true;
                used[l2] = true;
                extra += gain;
            }
        }
        self.root_bound() + extra
    }

    /// Exact component-level cost of a selection, `None` if infeasible.
    pub fn evaluate(&self, selected: &[bool]) -> Option<u64> {
        let n = self.n();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut touched = vec![false; n];
        let mut cost = 0;
        for (l, link) in self.links.iter().enumerate() {
            if selected[l] {
                cost += link.use_;
                touched[link.a] = true;
                touched[link.b] = true;
                let (x, y) = (find(&mut parent, link.a), find(&mut parent, link.b));
                if x != y {
                    parent[x] = y;
                }
            } else {
                cost += link.omit;
            }
        }
        if self.required.iter().any(|&m| !touched[m]) {
            return None;
        }
        for &(a, b) in &self.same {
            if find(&mut parent, a) != find(&mut parent, b) {
                return None;
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for m in 0..n {
            if touched[m] {
                let r = find(&mut parent, m);
                groups.entry(r).or_default().push(m);
            }
        }
        for members in groups.values() {
            for (i, &x) in members.iter().enumerate() {
                let blocked = self.row(&self.blocked, x);
                let evidence = self.row(&self.evidence, x);
                for &y in &members[i + 1..] {
                    if bit(blocked, y) {
                        return None;
                    }
                    if !bit(evidence, y) {
                        cost += self.c3_weight?;
                    }
                }
            }
        }
        Some(cost)
    }

    /// Quick feasible selection: forced links first, then every link whose
    /// merge is allowed and pays for itself, in branching order.
    pub fn greedy(&self) -> Option<(Vec<bool>, u64)> {
        let n = self.n();
        let mut root: Vec<usize> = (0..n).collect();
        let mut members: Vec<Vec<usize>> = (0..n).map(|m| vec![m]).collect();
        let mut merged = vec![false; self.links.len()];
        let order: Vec<usize> = (0..self.links.len())
            .filter(|&l| self.links[l].forced)
            .chain((0..self.links.len()).filter(|&l| !self.links[l].forced))
            .collect();
        for l in order {
            let link = &self.links[l];
            let (ra, rb) = (root[link.a], root[link.b]);
            if ra == rb {
                continue;
            }
            let mut blocked = false;
            let mut unevidenced = 0u64;
            for &x in &members[ra] {
                let brow = self.row(&self.blocked, x);
                let erow = self.row(&self.evidence, x);
                for &y in &members[rb] {
                    blocked |= bit(brow, y);
                    unevidenced += u64::from(!bit(erow, y));
                }
            }
            if blocked {
                continue;
            }
            let c3 = self.c3_weight.unwrap_or(0) * unevidenced;
            if !link.forced && link.use_ + c3 >= link.omit {
                continue;
            }
            merged[l] = true;
            let (keep, gone) = if members[ra].len() >= members[rb].len() {
                (ra, rb)
            } else {
                (rb, ra)
            };
            let moved = std::mem::take(&mut members[gone]);
            for &m in &moved {
                root[m] = keep;
            }
            members[keep].extend(moved);
        }
        let selected: Vec<bool> = self
            .links
            .iter()
            .enumerate()
            .map(|(l, link)| merged[l] || (root[link.a] == root[link.b] && link.use_ < link.omit))
            .collect();
        let mut best = self.evaluate(&selected).map(|c| (selected, c));
        let empty = vec![false; self.links.len()];
        if let Some(c) = self.evaluate(&empty) {
            if best.as_ref().is_none_or(|(_, b)| c < *b) {
                best = Some((empty, c));
            }
        }
        best
    }

    /// Enforcement constraints that touch this component.
    pub fn witness(&self, reason: &str) -> InfeasibilityWitness {
        let mut constraints: Vec<Constraint> = self
            .required
            .iter()
            .map(|&m| Constraint::ForcedMention { span: self.spans[m] })
            .collect();
        constraints.extend(self.same.iter().map(|&(a, b)| Constraint::SameChain {
            first: self.spans[a],
            second: self.spans[b],
        }));
        constraints.extend(self.diff.iter().map(|&(a, b)| Constraint::DifferentChains {
            first: self.spans[a],
            second: self.spans[b],
        }));
        InfeasibilityWitness {
            reason: reason.to_string(),
            constraints,
        }
    }
}

pub(crate) struct Decomposition {
    pub problems: Vec<Problem>,
    /// Omit cost of links fixed to be unselected.
    pub fixed_cost: u64,
    pub infeasible: Option<InfeasibilityWitness>,
}

struct Components {
    parent: Vec<usize>,
}

impl Components {
    fn new(n: usize) -> Self {
        Components {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (a, b) = (self.find(a), self.find(b));
        if a != b {
            self.parent[a.max(b)] = a.min(b);
        }
    }
}

/// Split the instance into independent components. Links that can never be
/// selected are fixed to omitted: links touching a mention the enforcement
/// rules out, and (in components without enforcement) links whose use cost
/// exceeds their omit cost, or equals it unless `keep_ties` is set.
pub(crate) fn decompose(instance: &Instance, objective: &Objective, keep_ties: bool) -> Decomposition {
    let forced = instance.forced();
    let costs = link_costs(instance, objective);
    let spans = instance.cmentions();
    let n = spans.len();
    let starts = forced.start_tokens();
    let ends = forced.end_tokens();
    let empty = forced.empty_tokens();
    let labels = forced.labels();
    let admitted: Vec<bool> = spans
        .iter()
        .map(|s| {
            if empty.contains(&s.start) || empty.contains(&s.end) {
                return false;
            }
            labels.contains_key(s) || (!starts.contains(&s.start) && !ends.contains(&s.end))
        })
        .collect();

    let mut fixed_cost = 0;
    let mut candidate: Vec<LinkId> = Vec::new();
    for (l, link) in instance.links().iter().enumerate() {
        if admitted[link.m1] && admitted[link.m2] {
            candidate.push(l);
        } else {
            fixed_cost += costs[l].omit;
        }
    }

    let infeasible = |reason: &str, constraints: Vec<Constraint>| Decomposition {
        problems: Vec::new(),
        fixed_cost: 0,
        infeasible: Some(InfeasibilityWitness {
            reason: reason.to_string(),
            constraints,
        }),
    };

    let mut comps = Components::new(n);
    let mut linked = vec![false; n];
    for &l in &candidate {
        let link = &instance.links()[l];
        comps.union(link.m1, link.m2);
        linked[link.m1] = true;
        linked[link.m2] = true;
    }
    for span in labels.keys() {
        let ok = instance.mention_id(*span).is_some_and(|m| linked[m]);
        if !ok {
            return infeasible(
                "forced mention has no admissible link",
                vec![Constraint::ForcedMention { span: *span }],
            );
        }
    }
    let same_pairs = forced.same_pairs();
    for &(a, b) in &same_pairs {
        let (ma, mb) = (instance.mention_id(a).unwrap(), instance.mention_id(b).unwrap());
        if comps.find(ma) != comps.find(mb) {
            return infeasible(
                "forced mentions cannot be connected by admissible links",
                vec![Constraint::SameChain { first: a, second: b }],
            );
        }
    }

    let enforced_root: BTreeSet<usize> = labels
        .keys()
        .map(|s| comps.find(instance.mention_id(*s).unwrap()))
        .collect();
    let mut kept: Vec<LinkId> = Vec::new();
    for &l in &candidate {
        let link = &instance.links()[l];
        let c = costs[l];
        let dominated = c.use_ > c.omit || (!keep_ties && c.use_ == c.omit);
        if dominated && !enforced_root.contains(&comps.find(link.m1)) {
            fixed_cost += c.omit;
        } else {
            kept.push(l);
        }
    }

    let mut comps = Components::new(n);
    for &l in &kept {
        let link = &instance.links()[l];
        comps.union(link.m1, link.m2);
    }
    let mut groups: BTreeMap<usize, (BTreeSet<MentionId>, Vec<LinkId>)> = BTreeMap::new();
    for &l in &kept {
        let link = &instance.links()[l];
        let entry = groups.entry(comps.find(link.m1)).or_default();
        entry.0.insert(link.m1);
        entry.0.insert(link.m2);
        entry.1.push(l);
    }

    let diff_pairs = forced.diff_pairs();
    let mut problems = Vec::with_capacity(groups.len());
    for (_, (mentions, links)) in groups {
        let mentions: Vec<MentionId> = mentions.into_iter().collect();
        let local: BTreeMap<MentionId, usize> = mentions.iter().enumerate().map(|(i, &m)| (m, i)).collect();
        let m = mentions.len();
        let words = m.div_ceil(64);
        let mut evidence = vec![0u64; m * words];
        let mut blocked = vec![0u64; m * words];
        let local_spans: Vec<Span> = mentions.iter().map(|&g| spans[g]).collect();
        let hard = objective.c3_weight().is_none();
        for i in 0..m {
            for j in 0..m {
                if i == j {
                    continue;
                }
                let has = instance.link_between(mentions[i], mentions[j]).is_some();
                if has {
                    set_bit(&mut evidence[i * words..(i + 1) * words], j);
                }
                if (hard && !has) || local_spans[i].nests_with(&local_spans[j]) {
                    set_bit(&mut blocked[i * words..(i + 1) * words], j);
                }
            }
        }
        let to_local = |(a, b): &(Span, Span)| -> Option<(usize, usize)> {
            let a = local.get(&instance.mention_id(*a)?)?;
            let b = local.get(&instance.mention_id(*b)?)?;
            Some((*a, *b))
        };
        let diff: Vec<(usize, usize)> = diff_pairs.iter().filter_map(to_local).collect();
        for &(a, b) in &diff {
            set_bit(&mut blocked[a * words..(a + 1) * words], b);
            set_bit(&mut blocked[b * words..(b + 1) * words], a);
        }
        let same: Vec<(usize, usize)> = same_pairs.iter().filter_map(to_local).collect();
        let required: Vec<usize> = local_spans
            .iter()
            .enumerate()
            .filter(|(_, s)| labels.contains_key(s))
            .map(|(i, _)| i)
            .collect();
        let links = links
            .into_iter()
            .map(|l| {
                let link = &instance.links()[l];
                let (sa, sb) = (spans[link.m1], spans[link.m2]);
                LocalLink {
                    a: local[&link.m1],
                    b: local[&link.m2],
                    omit: costs[l].omit,
                    use_: costs[l].use_,
                    global: l,
                    forced: matches!((labels.get(&sa), labels.get(&sb)), (Some(x), Some(y)) if x == y),
                }
            })
            .collect();
        problems.push(Problem {
            mentions,
            spans: local_spans,
            links,
            words,
            evidence,
            blocked,
            c3_weight: objective.c3_weight(),
            required,
            same,
            diff,
        });
    }
    Decomposition {
        problems,
        fixed_cost,
        infeasible: None,
    }
}
