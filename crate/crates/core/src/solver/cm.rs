//! Branch-and-bound over mention-to-chain assignment with a bounded number
//! of gap-free chain slots. Mentions are assigned in span order, either to
//! an open slot, to the next unopened slot, or to no chain.
//!
//! A complete assignment selects every co-slot link whose use is cheaper
//! than its omission. When enforcement has to be met or all optima are
//! wanted, co-slot links that do not pay for themselves are tried as well.

use super::budget::Budget;
use super::problem::{bit, clear_bit, set_bit, Problem};
use super::SearchResult;

const NONE: usize = usize::MAX;

struct Frame {
    mention: usize,
    options_start: usize,
    options_end: usize,
    next: usize,
    cost_before: u64,
    bound: u64,
}

struct State<'p> {
    p: &'p Problem,
    slot_of: Vec<usize>,
    open: usize,
    /// `slots × words`: members and union of member blocked rows.
    members: Vec<u64>,
    blocks: Vec<u64>,
    saved: Vec<u64>,
}

impl State<'_> {
    fn assign(&mut self, m: usize, slot: usize) {
        self.slot_of[m] = slot;
        if slot == NONE {
            return;
        }
        let w = self.p.words;
        if slot == self.open {
            self.open += 1;
        }
        self.saved.extend_from_slice(&self.blocks[slot * w..(slot + 1) * w]);
        set_bit(&mut self.members[slot * w..(slot + 1) * w], m);
        let row = self.p.row(&self.p.blocked, m);
        for i in 0..w {
            self.blocks[slot * w + i] |= row[i];
        }
    }

    fn unassign(&mut self, m: usize) {
        let slot = self.slot_of[m];
        self.slot_of[m] = NONE;
        if slot == NONE {
            return;
        }
        let w = self.p.words;
        clear_bit(&mut self.members[slot * w..(slot + 1) * w], m);
        let start = self.saved.len() - w;
        self.blocks[slot * w..(slot + 1) * w].copy_from_slice(&self.saved[start..]);
        self.saved.truncate(start);
        if self.members[slot * w..(slot + 1) * w].iter().all(|&x| x == 0) {
            debug_assert_eq!(slot + 1, self.open);
            self.open -= 1;
        }
    }
}

pub(crate) fn search(
    p: &Problem,
    budget: &mut Budget,
    enumerate: usize,
    incumbent: Option<(Vec<bool>, u64)>,
    slots: usize,
) -> SearchResult {
    let n = p.n();
    let w = p.words;
    // links are settled when their later endpoint is assigned
    let mut back: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (l, link) in p.links.iter().enumerate() {
        back[link.a.max(link.b)].push(l);
    }
    let mut rest = vec![0u64; n + 1];
    for m in (0..n).rev() {
        rest[m] = rest[m + 1] + back[m].iter().map(|&l| p.links[l].min_cost()).sum::<u64>();
    }
    let mut required = vec![false; n];
    for &m in &p.required {
        required[m] = true;
    }
    let mut partner: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(a, b) in &p.same {
        partner[a.max(b)].push(a.min(b));
    }
    let repair = p.is_enforced() || enumerate > 0;

    let mut result = SearchResult::new(incumbent, enumerate);
    let mut st = State {
        p,
        slot_of: vec![NONE; n],
        open: 0,
        members: vec![0; slots * w],
        blocks: vec![0; slots * w],
        saved: Vec::new(),
    };
    let mut stack: Vec<Frame> = Vec::new();
    let mut options: Vec<(u64, usize)> = Vec::new();
    let mut mention = 0usize;
    let mut cost = 0u64;
    let mut aborted = false;

    'search: loop {
        if budget.tick() {
            aborted = true;
            break;
        }
        let bound = cost + rest[mention];
        let mut expand = true;
        if result.prunes(bound) {
            budget.prunes += 1;
            expand = false;
        }
        if expand && mention == n {
            leaf(&st, p, cost, repair, &mut result, budget);
            expand = false;
        }
        if expand {
            let start = options.len();
            let m = mention;
            let fixed = partner[m].iter().map(|&x| st.slot_of[x]).find(|&s| s != NONE);
            let candidates = (0..st.open.min(slots))
                .chain((st.open < slots).then_some(st.open))
                .chain((!required[m]).then_some(NONE));
            for slot in candidates {
                if fixed.is_some_and(|f| f != slot) {
                    continue;
                }
                if slot != NONE && slot < st.open && bit(&st.blocks[slot * w..(slot + 1) * w], m) {
                    continue;
                }
                let mut delta = 0;
                for &l in &back[m] {
                    let link = &p.links[l];
                    let other = if link.a == m { link.b } else { link.a };
                    delta += if slot != NONE && st.slot_of[other] == slot {
                        link.min_cost()
                    } else {
                        link.omit
                    };
                }
                options.push((delta, slot));
            }
            // cheapest first; the stable sort keeps slot order on ties
            options[start..].sort_by_key(|o| o.0);
            if options.len() > start {
                let (delta, slot) = options[start];
                stack.push(Frame {
                    mention: m,
                    options_start: start,
                    options_end: options.len(),
                    next: start + 1,
                    cost_before: cost,
                    bound,
                });
                st.assign(m, slot);
                cost += delta;
                mention += 1;
                continue;
            }
        }
        while let Some(frame) = stack.last_mut() {
            st.unassign(frame.mention);
            cost = frame.cost_before;
            if frame.next < frame.options_end {
                let (delta, slot) = options[frame.next];
                frame.next += 1;
                st.assign(frame.mention, slot);
                cost += delta;
                mention = frame.mention + 1;
                continue 'search;
            }
            options.truncate(frame.options_start);
            stack.pop();
        }
        break;
    }

    if aborted {
        let mut lb = stack.last().map_or_else(|| p.root_bound(), |f| f.bound);
        for f in &stack {
            if f.next < f.options_end {
                lb = lb.min(f.bound);
            }
        }
        result.finish_aborted(lb);
    } else {
        result.finish_complete();
    }
    result
}

fn leaf(st: &State<'_>, p: &Problem, committed: u64, repair: bool, result: &mut SearchResult, budget: &mut Budget) {
    let mut selected = vec![false; p.links.len()];
    let mut optional = Vec::new();
    for (l, link) in p.links.iter().enumerate() {
        let (sa, sb) = (st.slot_of[link.a], st.slot_of[link.b]);
        if sa == NONE || sa != sb {
            continue;
        }
        if link.use_ < link.omit {
            selected[l] = true;
        } else if repair {
            optional.push(l);
        }
    }
    if optional.is_empty() {
        if let Some(c) = p.evaluate(&selected) {
            result.record(&selected, c);
        }
        return;
    }
    // include/exclude each optional link, exclusion first
    let mut stack: Vec<(usize, bool)> = vec![(0, false)];
    let mut extra = 0u64;
    while let Some((i, included)) = stack.pop() {
        // entry `(i, x)` decides optional link `i - 1`
        for &l in &optional[i.saturating_sub(1)..] {
            if selected[l] {
                selected[l] = false;
                extra -= p.links[l].use_ - p.links[l].omit;
            }
        }
        if included {
            let l = optional[i - 1];
            selected[l] = true;
            extra += p.links[l].use_ - p.links[l].omit;
        }
        if result.prunes(committed + extra) {
            budget.prunes += 1;
            continue;
        }
        if i == optional.len() {
            if let Some(c) = p.evaluate(&selected) {
                result.record(&selected, c);
            }
            continue;
        }
        budget.nodes += 1;
        stack.push((i + 1, true));
        stack.push((i + 1, false));
    }
}
