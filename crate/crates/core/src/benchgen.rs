//! Synthetic annotation sets and benchmark runs.
//!
//! A ground-truth partition of non-overlapping mentions is sampled and every
//! annotator receives a noisy copy: mentions may be dropped, their
//! boundaries shifted, or moved to another chain. Two presets model the
//! two annotation cycles of the reference corpus: `ds1`, where annotators
//! chose mention boundaries themselves, and `ds2`, where mentions were given.

use std::alloc::{GlobalAlloc, Layout, System};
use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::conll::{serialize_annotation, Annotation, Document, Mention};
use crate::instance::{build_instance, ForcedMode, Instance};
use crate::objective::{Objective, ObjectiveTag};
use crate::solver::{solve, SolverConfig, Status, Strategy};
use crate::span::Span;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeneratorError {
    #[error("{0} must lie in [0, 1]")]
    Probability(&'static str),
    #[error("at least two annotators are required")]
    TooFewAnnotators,
    #[error("{mentions} mentions of up to {max_len} tokens do not fit into {tokens} tokens")]
    Capacity {
        mentions: usize,
        max_len: usize,
        tokens: usize,
    },
    #[error("chains need at least two mentions each")]
    ChainSize,
    #[error("unknown preset `{0}` (expected ds1 or ds2)")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Ds1,
    Ds2,
}

impl FromStr for Preset {
    type Err = GeneratorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ds1" => Ok(Preset::Ds1),
            "ds2" => Ok(Preset::Ds2),
            _ => Err(GeneratorError::UnknownPreset(s.to_string())),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Ds1 => "ds1",
            Preset::Ds2 => "ds2",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorParams {
    pub tokens: usize,
    pub annotators: usize,
    pub true_chains: usize,
    /// Mean chain size; every chain has at least two mentions.
    pub mentions_per_chain: f64,
    /// Longest ground-truth mention in tokens.
    pub max_mention_len: usize,
    /// Per mention boundary and annotator: probability of a shift.
    pub boundary_noise: f64,
    /// Per mention and annotator: probability of a different chain.
    pub chain_noise: f64,
    /// Per mention and annotator: probability of leaving it out.
    pub drop_rate: f64,
    pub seed: u64,
}

impl GeneratorParams {
    pub fn preset(preset: Preset, seed: u64) -> Self {
        match preset {
            Preset::Ds1 => GeneratorParams {
                tokens: 1634,
                annotators: 4,
                true_chains: 36,
                mentions_per_chain: 4.5,
                max_mention_len: 4,
                boundary_noise: 0.28,
                chain_noise: 0.06,
                drop_rate: 0.12,
                seed,
            },
            Preset::Ds2 => GeneratorParams {
                tokens: 1634,
                annotators: 10,
                true_chains: 40,
                mentions_per_chain: 4.0,
                max_mention_len: 4,
                boundary_noise: 0.0,
                chain_noise: 0.03,
                drop_rate: 0.0,
                seed,
            },
        }
    }

    fn validate(&self) -> Result<(), GeneratorError> {
        for (name, p) in [
            ("boundary_noise", self.boundary_noise),
            ("chain_noise", self.chain_noise),
            ("drop_rate", self.drop_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(GeneratorError::Probability(name));
            }
        }
        if self.annotators < 2 {
            return Err(GeneratorError::TooFewAnnotators);
        }
        if self.mentions_per_chain < 2.0 || self.max_mention_len == 0 {
            return Err(GeneratorError::ChainSize);
        }
        let mentions = self.mention_count();
        // every mention is followed by at least one free token
        if mentions * (self.max_mention_len + 1) > self.tokens {
            return Err(GeneratorError::Capacity {
                mentions,
                max_len: self.max_mention_len,
                tokens: self.tokens,
            });
        }
        Ok(())
    }

    fn mention_count(&self) -> usize {
        (self.true_chains as f64 * self.mentions_per_chain).round() as usize
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedDocument {
    pub document: Document,
    pub truth: Vec<Vec<Span>>,
    pub annotations: Vec<Annotation>,
}

impl GeneratedDocument {
    /// One CoNLL file per annotator as `(annotator id, text)`.
    pub fn files(&self) -> Vec<(String, String)> {
        self.annotations
            .iter()
            .map(|a| {
                let text = serialize_annotation(&self.document, a).expect("generated spans lie in the document");
                (a.annotator.clone(), text)
            })
            .collect()
    }

    pub fn instance(&self) -> Instance {
        build_instance(
            self.document.token_count(),
            &self.annotations,
            None,
            ForcedMode::Annotator,
        )
        .expect("generated annotations form a valid instance")
    }

    pub fn stats(&self) -> GeneratedStats {
        let mut distinct: Vec<Span> = self
            .annotations
            .iter()
            .flat_map(|a| a.mentions.iter().map(|m| m.span))
            .collect();
        distinct.sort();
        distinct.dedup();
        GeneratedStats {
            distinct_mentions: distinct.len(),
            annotated_mentions: self.annotations.iter().map(|a| a.mentions.len()).sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GeneratedStats {
    pub distinct_mentions: usize,
    pub annotated_mentions: usize,
}

fn shift(rng: &mut ChaCha8Rng) -> isize {
    let mut k = 1;
    while rng.gen_bool(0.5) {
        k += 1;
    }
    if rng.gen_bool(0.5) {
        k
    } else {
        -k
    }
}

/// Sample a ground truth and one noisy view per annotator.
pub fn generate_instance(params: &GeneratorParams) -> Result<GeneratedDocument, GeneratorError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n = params.tokens;
    let count = params.mention_count();

    // non-overlapping ground-truth mentions with a free token after each
    let mut lengths: Vec<usize> = (0..count)
        .map(|_| {
            if rng.gen_bool(0.6) {
                1
            } else {
                rng.gen_range(2..=params.max_mention_len.max(2))
                    .min(params.max_mention_len)
            }
        })
        .collect();
    lengths.shuffle(&mut rng);
    let slack = n - lengths.iter().map(|l| l + 1).sum::<usize>();
    let mut cuts: Vec<usize> = (0..count).map(|_| rng.gen_range(0..=slack)).collect();
    cuts.sort_unstable();
    let mut spans = Vec::with_capacity(count);
    let mut pos = 1;
    let mut used = 0;
    for (len, cut) in lengths.iter().zip(&cuts) {
        pos += cut - used;
        used = *cut;
        spans.push(Span::new(pos, pos + len - 1));
        pos += len + 1;
    }
    let mut occupied = vec![false; n + 2];
    for s in &spans {
        for t in s.start..=s.end {
            occupied[t] = true;
        }
    }

    // chain sizes: two each, the rest by preferential attachment
    let chains = params.true_chains;
    let mut sizes = vec![2usize; chains];
    for _ in 2 * chains..count {
        let total: usize = sizes.iter().sum();
        let mut pick = rng.gen_range(0..total);
        let mut c = 0;
        while pick >= sizes[c] {
            pick -= sizes[c];
            c += 1;
        }
        sizes[c] += 1;
    }
    let mut chain_of: Vec<usize> = sizes
        .iter()
        .enumerate()
        .flat_map(|(c, &k)| std::iter::repeat(c).take(k))
        .collect();
    chain_of.truncate(count);
    chain_of.shuffle(&mut rng);
    let mut truth: Vec<Vec<Span>> = vec![Vec::new(); chains];
    for (s, &c) in spans.iter().zip(&chain_of) {
        truth[c].push(*s);
    }

    let mut annotations = Vec::with_capacity(params.annotators);
    for a in 0..params.annotators {
        let mut ann = Annotation::new((a + 1).to_string());
        // tokens claimed in this view; widened spans claim their new tokens
        let mut taken = occupied.clone();
        for (s, &c) in spans.iter().zip(&chain_of) {
            if rng.gen_bool(params.drop_rate) {
                continue;
            }
            let mut span = *s;
            if params.boundary_noise > 0.0 {
                let mut start = s.start as isize;
                let mut end = s.end as isize;
                if rng.gen_bool(params.boundary_noise) {
                    start += shift(&mut rng);
                }
                if rng.gen_bool(params.boundary_noise) {
                    end += shift(&mut rng);
                }
                let inside = 1 <= start && start <= end && end as usize <= n;
                // a shift may not reach into another mention
                let free = inside && (start as usize..=end as usize).all(|t| (s.start <= t && t <= s.end) || !taken[t]);
                if free {
                    span = Span::new(start as usize, end as usize);
                    for t in span.start..=span.end {
                        taken[t] = true;
                    }
                }
            }
            let mut chain = c;
            if chains > 1 && rng.gen_bool(params.chain_noise) {
                chain = (c + rng.gen_range(1..chains)) % chains;
            }
            ann.mentions.push(Mention {
                span,
                chain: (chain + 1).to_string(),
            });
        }
        ann.mentions.sort();
        annotations.push(ann);
    }
    for t in &mut truth {
        t.sort();
    }
    truth.sort();
    Ok(GeneratedDocument {
        document: Document::numbered(n),
        truth,
        annotations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmallParams {
    pub annotators: (usize, usize),
    pub max_links: usize,
    pub tokens: usize,
}

impl Default for SmallParams {
    fn default() -> Self {
        SmallParams {
            annotators: (2, 6),
            max_links: 12,
            tokens: 8,
        }
    }
}

/// Random annotations over a few tokens whose instance has at most
/// `max_links` links. Spans overlap and cross freely across annotators;
/// within one annotation they never cross.
pub fn random_small_annotations(seed: u64, params: SmallParams) -> (usize, Vec<Annotation>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let n = params.tokens;
        let pool_size = rng.gen_range(4..=7);
        let mut pool: Vec<Span> = (0..pool_size)
            .map(|_| {
                let s = rng.gen_range(1..=n);
                let len = if rng.gen_bool(0.6) { 0 } else { rng.gen_range(1..=2) };
                Span::new(s, (s + len).min(n))
            })
            .collect();
        pool.sort();
        pool.dedup();
        let u = rng.gen_range(params.annotators.0..=params.annotators.1);
        let mut annotations = Vec::with_capacity(u);
        for a in 0..u {
            let mut chosen: Vec<Span> = Vec::new();
            let mut order = pool.clone();
            order.shuffle(&mut rng);
            for s in order {
                if rng.gen_bool(0.7) && chosen.iter().all(|c| !c.crosses(&s)) {
                    chosen.push(s);
                }
            }
            let chains = rng.gen_range(1..=3);
            let mut ann = Annotation::new(format!("a{}", a + 1));
            for s in chosen {
                ann.mentions.push(Mention {
                    span: s,
                    chain: rng.gen_range(1..=chains).to_string(),
                });
            }
            ann.mentions.sort();
            annotations.push(ann);
        }
        let inst = build_instance(n, &annotations, None, ForcedMode::Annotator).expect("valid small instance");
        if !inst.links().is_empty() && inst.links().len() <= params.max_links {
            return (n, annotations);
        }
    }
}

/// Counts allocated bytes and their high-water mark. Register it as the
/// global allocator of a binary to make [`peak_bytes`] meaningful.
pub struct TrackingAllocator;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for TrackingAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            let now = CURRENT.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(now, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = System.realloc(ptr, layout, new_size);
        if !p.is_null() {
            if new_size >= layout.size() {
                let now = CURRENT.fetch_add(new_size - layout.size(), Ordering::Relaxed) + new_size - layout.size();
                PEAK.fetch_max(now, Ordering::Relaxed);
            } else {
                CURRENT.fetch_sub(layout.size() - new_size, Ordering::Relaxed);
            }
        }
        p
    }
}

/// Allocation high-water mark since the last reset; zero unless
/// [`TrackingAllocator`] is the global allocator.
pub fn peak_bytes() -> usize {
    PEAK.load(Ordering::Relaxed)
}

pub fn reset_peak() {
    PEAK.store(CURRENT.load(Ordering::Relaxed), Ordering::Relaxed);
}

#[derive(Debug, Clone)]
pub struct BenchInstance {
    pub name: String,
    pub instance: Instance,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub instance: String,
    pub strategy: Strategy,
    pub objective: ObjectiveTag,
    pub repeat: usize,
    pub status: Status,
    pub time_s: f64,
    pub peak_bytes: usize,
    pub cost: Option<u64>,
    pub lower_bound: u64,
    pub gap: Option<f64>,
    pub nodes: u64,
    pub prunes: u64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

pub const REPORT_HEADER: &str =
    "instance\tstrategy\tobjective\trepeat\tstatus\ttime_s\tpeak_bytes\tcost\tlower_bound\tgap\tnodes\tprunes";

fn opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "NA".to_string(), T::to_string)
}

impl BenchReport {
    /// Header line plus one tab-separated line per run.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{:.3}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.instance,
                r.strategy,
                r.objective,
                r.repeat,
                r.status,
                r.time_s,
                r.peak_bytes,
                opt(&r.cost),
                r.lower_bound,
                r.gap.map_or_else(|| "NA".to_string(), |g| format!("{g:.4}")),
                r.nodes,
                r.prunes
            );
        }
        out
    }

    /// Per strategy and objective: runs, optimal runs, mean time and mean gap.
    pub fn summary_table(&self) -> String {
        let mut keys: Vec<(Strategy, ObjectiveTag)> = self.rows.iter().map(|r| (r.strategy, r.objective)).collect();
        keys.sort_by_key(|(s, o)| (s.to_string(), *o));
        keys.dedup();
        let mut out = format!(
            "{:<8} {:<9} {:>5} {:>7} {:>10} {:>9}\n",
            "strategy", "objective", "runs", "optimal", "mean time", "mean gap"
        );
        for (s, o) in keys {
            let rows: Vec<&BenchRow> = self
                .rows
                .iter()
                .filter(|r| r.strategy == s && r.objective == o)
                .collect();
            let optimal = rows.iter().filter(|r| r.status == Status::Optimal).count();
            let time = rows.iter().map(|r| r.time_s).sum::<f64>() / rows.len() as f64;
            let gaps: Vec<f64> = rows.iter().filter_map(|r| r.gap).collect();
            let gap = if gaps.is_empty() {
                "NA".to_string()
            } else {
                format!("{:.4}", gaps.iter().sum::<f64>() / gaps.len() as f64)
            };
            let _ = writeln!(
                out,
                "{:<8} {:<9} {:>5} {:>7} {:>9.3}s {:>9}",
                s.to_string(),
                o.to_string(),
                rows.len(),
                optimal,
                time,
                gap
            );
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct BenchSettings {
    pub strategies: Vec<Strategy>,
    pub objectives: Vec<ObjectiveTag>,
    pub time_budget: Duration,
    pub repeats: usize,
    /// Run instances on separate threads. Timings and memory figures then
    /// interfere with each other.
    pub parallel: bool,
}

fn bench_one(
    b: &BenchInstance,
    strategy: Strategy,
    objective: ObjectiveTag,
    repeat: usize,
    budget: Duration,
) -> BenchRow {
    let config = SolverConfig {
        time_budget: Some(budget),
        ..SolverConfig::with_strategy(strategy)
    };
    reset_peak();
    let started = Instant::now();
    let outcome = solve(&b.instance, &Objective::new(objective), &config);
    let time_s = started.elapsed().as_secs_f64();
    BenchRow {
        instance: b.name.clone(),
        strategy,
        objective,
        repeat,
        status: outcome.status,
        time_s,
        peak_bytes: peak_bytes(),
        cost: outcome.best.as_ref().map(|s| s.cost()),
        lower_bound: outcome.lower_bound,
        gap: outcome.gap(),
        nodes: outcome.stats.nodes,
        prunes: outcome.stats.prunes,
    }
}

/// One row per instance, strategy, objective and repeat, in that nesting.
pub fn run_benchmark(instances: &[BenchInstance], settings: &BenchSettings) -> BenchReport {
    let runs_for = |b: &BenchInstance| -> Vec<BenchRow> {
        let mut rows = Vec::new();
        for &s in &settings.strategies {
            for &o in &settings.objectives {
                for r in 0..settings.repeats.max(1) {
                    rows.push(bench_one(b, s, o, r + 1, settings.time_budget));
                }
            }
        }
        rows
    };
    let rows = if settings.parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = instances.iter().map(|b| scope.spawn(move || runs_for(b))).collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("benchmark thread panicked"))
                .collect()
        })
    } else {
        instances.iter().flat_map(runs_for).collect()
    };
    BenchReport { rows }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_files() {
        let p = GeneratorParams::preset(Preset::Ds2, 7);
        assert_eq!(
            generate_instance(&p).unwrap().files(),
            generate_instance(&p).unwrap().files()
        );
        let q = GeneratorParams { seed: 8, ..p };
        assert_ne!(
            generate_instance(&q).unwrap().files(),
            generate_instance(&p).unwrap().files()
        );
    }

    #[test]
    fn generated_files_parse() {
        for seed in 0..10 {
            for preset in [Preset::Ds1, Preset::Ds2] {
                let g = generate_instance(&GeneratorParams::preset(preset, seed)).unwrap();
                for (id, text) in g.files() {
                    crate::conll::parse_annotation(&text, &id).unwrap();
                }
            }
        }
    }

    #[test]
    fn ds2_mention_sets_are_equal() {
        let g = generate_instance(&GeneratorParams::preset(Preset::Ds2, 3)).unwrap();
        let spans = |a: &Annotation| a.mentions.iter().map(|m| m.span).collect::<Vec<_>>();
        for a in &g.annotations[1..] {
            assert_eq!(spans(a), spans(&g.annotations[0]));
        }
    }

    #[test]
    fn parameter_errors() {
        let p = GeneratorParams::preset(Preset::Ds1, 1);
        assert_eq!(
            generate_instance(&GeneratorParams {
                drop_rate: 1.5,
                ..p.clone()
            })
            .unwrap_err(),
            GeneratorError::Probability("drop_rate")
        );
        assert_eq!(
            generate_instance(&GeneratorParams {
                annotators: 1,
                ..p.clone()
            })
            .unwrap_err(),
            GeneratorError::TooFewAnnotators
        );
        assert!(matches!(
            generate_instance(&GeneratorParams { tokens: 100, ..p }).unwrap_err(),
            GeneratorError::Capacity { .. }
        ));
        assert!("ds3".parse::<Preset>().is_err());
    }

    #[test]
    fn small_instances_respect_link_limit() {
        for seed in 0..50 {
            let (n, anns) = random_small_annotations(seed, SmallParams::default());
            let inst = build_instance(n, &anns, None, ForcedMode::Annotator).unwrap();
            assert!((1..=12).contains(&inst.links().len()));
            assert!((2..=6).contains(&anns.len()));
        }
    }
}
