//! Branch-and-bound over link inclusion. Chains are the components of the
//! selected links, tracked by an undoable union-find.

use super::budget::Budget;
use super::problem::{and_count, intersects, Problem};
use super::SearchResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Choice {
    Select,
    Omit,
}

struct Frame {
    depth: usize,
    pending: Option<Choice>,
    undo_len: usize,
    cost_before: u64,
    bound: u64,
}

struct Merge {
    keep: usize,
    gone: usize,
}

struct State<'p> {
    p: &'p Problem,
    parent: Vec<usize>,
    size: Vec<usize>,
    next: Vec<usize>,
    /// Members of each root.
    members: Vec<u64>,
    /// Union of the blocked rows of each root's members.
    blocks: Vec<u64>,
    merges: Vec<Merge>,
    saved_blocks: Vec<u64>,
}

impl<'p> State<'p> {
    fn new(p: &'p Problem) -> Self {
        let n = p.n();
        let w = p.words;
        let mut members = vec![0u64; n * w];
        for m in 0..n {
            members[m * w + m / 64] |= 1 << (m % 64);
        }
        State {
            p,
            parent: (0..n).collect(),
            size: vec![1; n],
            next: (0..n).collect(),
            members,
            blocks: p.blocked.clone(),
            merges: Vec::new(),
            saved_blocks: Vec::new(),
        }
    }

    #[inline]
    fn find(&self, mut x: usize) -> usize {
        while self.parent[x] != x {
            x = self.parent[x];
        }
        x
    }

    #[inline]
    fn members_of(&self, r: usize) -> &[u64] {
        &self.members[r * self.p.words..(r + 1) * self.p.words]
    }

    #[inline]
    fn blocked(&self, ra: usize, rb: usize) -> bool {
        let w = self.p.words;
        intersects(&self.blocks[ra * w..(ra + 1) * w], self.members_of(rb))
    }

    /// Co-resident pairs without evidence that merging `ra` and `rb` creates.
    fn unevidenced(&self, ra: usize, rb: usize) -> u64 {
        let (small, big) = if self.size[ra] <= self.size[rb] {
            (ra, rb)
        } else {
            (rb, ra)
        };
        let target = self.members_of(big);
        let mut evidenced = 0;
        let mut x = small;
        loop {
            evidenced += and_count(self.p.row(&self.p.evidence, x), target);
            x = self.next[x];
            if x == small {
                break;
            }
        }
        (self.size[ra] * self.size[rb]) as u64 - evidenced
    }

    fn merge(&mut self, ra: usize, rb: usize) {
        let (keep, gone) = if self.size[ra] >= self.size[rb] {
            (ra, rb)
        } else {
            (rb, ra)
        };
        let w = self.p.words;
        self.saved_blocks
            .extend_from_slice(&self.blocks[keep * w..(keep + 1) * w]);
        for i in 0..w {
            self.blocks[keep * w + i] |= self.blocks[gone * w + i];
            self.members[keep * w + i] |= self.members[gone * w + i];
        }
        self.parent[gone] = keep;
        self.size[keep] += self.size[gone];
        self.next.swap(keep, gone);
        self.merges.push(Merge { keep, gone });
    }

    fn undo_to(&mut self, len: usize) {
        let w = self.p.words;
        while self.merges.len() > len {
            let Merge { keep, gone } = self.merges.pop().unwrap();
            self.next.swap(keep, gone);
            self.size[keep] -= self.size[gone];
            self.parent[gone] = gone;
            for i in 0..w {
                self.members[keep * w + i] &= !self.members[gone * w + i];
            }
            let start = self.saved_blocks.len() - w;
            self.blocks[keep * w..(keep + 1) * w].copy_from_slice(&self.saved_blocks[start..]);
            self.saved_blocks.truncate(start);
        }
    }
}

pub(crate) fn search(
    p: &Problem,
    budget: &mut Budget,
    enumerate: usize,
    incumbent: Option<(Vec<bool>, u64)>,
) -> SearchResult {
    let links = &p.links;
    let l_count = links.len();
    let mut suffix = vec![0u64; l_count + 1];
    for j in (0..l_count).rev() {
        suffix[j] = suffix[j + 1] + links[j].min_cost();
    }
    // a required mention or same pair is settled once its last incident link is decided
    let mut last = vec![0usize; p.n()];
    for (j, l) in links.iter().enumerate() {
        last[l.a] = j + 1;
        last[l.b] = j + 1;
    }
    let mut closing_required: Vec<Vec<usize>> = vec![Vec::new(); l_count + 1];
    for &m in &p.required {
        closing_required[last[m]].push(m);
    }
    let mut closing_same: Vec<Vec<(usize, usize)>> = vec![Vec::new(); l_count + 1];
    for &(a, b) in &p.same {
        closing_same[last[a].max(last[b])].push((a, b));
    }

    let mut result = SearchResult::new(incumbent, enumerate);
    let mut st = State::new(p);
    let mut decision = vec![false; l_count];
    let mut stack: Vec<Frame> = Vec::new();
    let mut groups: Vec<(usize, usize, u64, u64)> = Vec::new();
    let mut depth = 0usize;
    let mut cost = 0u64;
    let mut aborted = false;

    'search: loop {
        let mut expand = !budget.tick();
        if !expand {
            aborted = true;
            break;
        }
        let mut bound = cost + suffix[depth];
        if expand {
            for &m in &closing_required[depth] {
                if st.size[st.find(m)] < 2 {
                    expand = false;
                }
            }
            for &(a, b) in &closing_same[depth] {
                if st.find(a) != st.find(b) {
                    expand = false;
                }
            }
            for &(a, b) in &p.same {
                let (ra, rb) = (st.find(a), st.find(b));
                if ra != rb && st.blocked(ra, rb) {
                    expand = false;
                }
            }
        }
        if expand && result.prunes(bound) {
            expand = false;
            budget.prunes += 1;
        }
        if expand && depth < l_count {
            bound = grouped_bound(&st, depth, cost, &mut groups);
            if result.prunes(bound) {
                expand = false;
                budget.prunes += 1;
            }
        }
        if expand && depth == l_count {
            result.record(&decision, cost);
            expand = false;
        }
        if expand {
            let link = &links[depth];
            let (ra, rb) = (st.find(link.a), st.find(link.b));
            let (first, second) = if ra == rb {
                if link.use_ < link.omit {
                    (Choice::Select, None)
                } else if link.use_ > link.omit {
                    (Choice::Omit, None)
                } else if enumerate > 0 {
                    (Choice::Select, Some(Choice::Omit))
                } else {
                    (Choice::Select, None)
                }
            } else if st.blocked(ra, rb) {
                (Choice::Omit, None)
            } else {
                let c3 = p.c3_weight.map_or(0, |w| w * st.unevidenced(ra, rb));
                if link.use_ + c3 <= link.omit {
                    (Choice::Select, Some(Choice::Omit))
                } else {
                    (Choice::Omit, Some(Choice::Select))
                }
            };
            stack.push(Frame {
                depth,
                pending: second,
                undo_len: st.merges.len(),
                cost_before: cost,
                bound,
            });
            cost += apply(&mut st, p, depth, first, &mut decision);
            depth += 1;
            continue;
        }
        while let Some(frame) = stack.last_mut() {
            st.undo_to(frame.undo_len);
            cost = frame.cost_before;
            if let Some(choice) = frame.pending.take() {
                depth = frame.depth;
                cost += apply(&mut st, p, depth, choice, &mut decision);
                depth += 1;
                continue 'search;
            }
            stack.pop();
        }
        break;
    }

    if aborted {
        // unexplored leaves lie under the current node or a pending branch
        let mut lb = stack.last().map_or_else(|| p.root_bound(), |f| f.bound);
        for f in &stack {
            if f.pending.is_some() {
                lb = lb.min(f.bound);
            }
        }
        result.finish_aborted(lb);
    } else {
        result.finish_complete();
    }
    result
}

fn apply(st: &mut State<'_>, p: &Problem, depth: usize, choice: Choice, decision: &mut [bool]) -> u64 {
    let link = &p.links[depth];
    match choice {
        Choice::Omit => {
            decision[depth] = false;
            link.omit
        }
        Choice::Select => {
            decision[depth] = true;
            let (ra, rb) = (st.find(link.a), st.find(link.b));
            let mut add = link.use_;
            if ra != rb {
                if let Some(w) = p.c3_weight {
                    add += w * st.unevidenced(ra, rb);
                }
                st.merge(ra, rb);
            }
            add
        }
    }
}

/// Committed cost plus, for undecided links grouped by the pair of current
/// components they join, the cheapest way to settle each group.
fn grouped_bound(st: &State<'_>, depth: usize, cost: u64, groups: &mut Vec<(usize, usize, u64, u64)>) -> u64 {
    let p = st.p;
    let mut total = cost;
    groups.clear();
    for link in &p.links[depth..] {
        let (ra, rb) = (st.find(link.a), st.find(link.b));
        if ra == rb {
            total += link.min_cost();
        } else {
            groups.push((ra.min(rb), ra.max(rb), link.omit, link.min_cost()));
        }
    }
    groups.sort_unstable_by_key(|g| (g.0, g.1));
    let mut i = 0;
    while i < groups.len() {
        let (ra, rb) = (groups[i].0, groups[i].1);
        let (mut omit, mut min) = (0, 0);
        while i < groups.len() && groups[i].0 == ra && groups[i].1 == rb {
            omit += groups[i].2;
            min += groups[i].3;
            i += 1;
        }
        total += if st.blocked(ra, rb) {
            omit
        } else if let Some(w) = p.c3_weight {
            omit.min(w * st.unevidenced(ra, rb) + min)
        } else {
            min
        };
    }
    total
}

#[cfg(test)]
mod tests {
    use super::super::problem::Problem;
    use super::*;

    #[test]
    fn union_find_undo_restores_state() {
        let p = Problem {
            mentions: vec![0, 1, 2, 3],
            spans: vec![],
            links: vec![],
            words: 1,
            evidence: vec![0b1110, 0b1101, 0b1011, 0b0111],
            blocked: vec![0b1000, 0, 0, 0b0001],
            c3_weight: Some(1),
            required: vec![],
            same: vec![],
            diff: vec![],
        };
        let mut st = State::new(&p);
        st.merge(0, 1);
        let r = st.find(0);
        assert_eq!(st.find(1), r);
        assert_eq!(st.unevidenced(r, 2), 0);
        assert!(st.blocked(r, 3));
        st.merge(r, 2);
        assert_eq!(st.size[st.find(2)], 3);
        st.undo_to(1);
        assert_ne!(st.find(2), st.find(0));
        st.undo_to(0);
        assert_eq!(st.members, vec![1, 2, 4, 8]);
        assert_eq!(st.blocks, p.blocked);
        assert_eq!(st.next, vec![0, 1, 2, 3]);
    }
}
