//! Reading and writing the CoNLL coreference column format.
//!
//! A file holds exactly one `#begin document` / `#end document` block. Every
//! token line is a whitespace-separated list of columns; the last column is
//! the coreference field, made of `|`-joined items `(X`, `X)`, `(X)` or a
//! lone `-`. Brackets of one chain id pair up last-in first-out. All columns
//! but the last are passed through verbatim.
//!
//! Merged review files carry one coreference column per annotator followed
//! by the result column. In the result column a field prefixed with `=` is
//! enforced by the human adjudicator and `=-` enforces an empty token.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use crate::enforcement::{EnforcementError, ForcedSpec};
use crate::span::Span;

pub const RESULT_COLUMN: &str = "result";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConllError {
    #[error("missing `#begin document` line")]
    MissingBegin,
    #[error("missing `#end document` line")]
    MissingEnd,
    #[error("line {line}: only one document per file is supported")]
    MultipleDocuments { line: usize },
    #[error("line {line}: content outside the document block")]
    OutsideDocument { line: usize },
    #[error("line {line}: expected {expected} columns, found {found}")]
    ColumnCount { line: usize, expected: usize, found: usize },
    #[error("line {line}: token index {found} does not follow {previous}")]
    TokenIndex { line: usize, previous: usize, found: usize },
    #[error("line {line}: malformed coreference item `{item}`")]
    MalformedItem { line: usize, item: String },
    #[error("line {line}: chain `{chain}` closed without being opened")]
    UnbalancedClose { line: usize, chain: String },
    #[error("line {line}: chain `{chain}` opened but never closed")]
    UnclosedOpen { line: usize, chain: String },
    #[error("annotator `{annotator}`: mentions {first} and {second} partially overlap")]
    CrossingSpans {
        annotator: String,
        first: Span,
        second: Span,
    },
    #[error("line {line}: enforcement prefix `=` in column {column}; only the last column may be enforced")]
    EnforcementOutsideLastColumn { line: usize, column: usize },
    #[error("token {token}: malformed enforced field `{field}`")]
    MalformedForcedField { token: usize, field: String },
    #[error("mention {span} lies outside the document of {token_count} tokens")]
    SpanOutOfRange { span: Span, token_count: usize },
    #[error("annotation `{annotator}` has {found} tokens, expected {expected}")]
    TokenCountMismatch {
        annotator: String,
        expected: usize,
        found: usize,
    },
    #[error("at least one annotator column is required")]
    NoAnnotators,
    #[error("column header lists {found} annotators, expected {expected}")]
    AnnotatorCountMismatch { expected: usize, found: usize },
    #[error("invalid enforcement: {0}")]
    Enforcement(#[from] EnforcementError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    /// 1-based position in the document.
    pub index: usize,
    pub surface: String,
    pub passthrough: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Line {
    Token(Token),
    Blank,
    Comment(String),
}

/// Token layout of one document, including sentence breaks and comments, so
/// that output reproduces everything but the coreference columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub begin: String,
    pub lines: Vec<Line>,
}

impl Document {
    pub fn tokens(&self) -> impl Iterator<Item = &Token> {
        self.lines.iter().filter_map(|l| match l {
            Line::Token(t) => Some(t),
            _ => None,
        })
    }

    pub fn token_count(&self) -> usize {
        self.tokens().count()
    }

    /// Build a bare document with one numbered column per token.
    pub fn numbered(token_count: usize) -> Self {
        Document {
            begin: "#begin document".to_string(),
            lines: (1..=token_count)
                .map(|i| {
                    Line::Token(Token {
                        index: i,
                        surface: i.to_string(),
                        passthrough: Vec::new(),
                    })
                })
                .collect(),
        }
    }

    fn passthrough_width(&self) -> usize {
        self.tokens().next().map(|t| t.passthrough.len()).unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Mention {
    pub span: Span,
    pub chain: String,
}

/// One annotator's mentions; the position in `mentions` is the mention id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub annotator: String,
    pub mentions: Vec<Mention>,
}

impl Annotation {
    pub fn new(annotator: impl Into<String>) -> Self {
        Annotation {
            annotator: annotator.into(),
            mentions: Vec::new(),
        }
    }

    /// Chains in order of their first mention.
    pub fn chains(&self) -> Vec<(String, Vec<Span>)> {
        let mut order: Vec<String> = Vec::new();
        let mut by_label: HashMap<&str, Vec<Span>> = HashMap::new();
        for m in &self.mentions {
            let entry = by_label.entry(m.chain.as_str()).or_default();
            if entry.is_empty() {
                order.push(m.chain.clone());
            }
            entry.push(m.span);
        }
        order
            .into_iter()
            .map(|label| {
                let spans = by_label.remove(label.as_str()).unwrap_or_default();
                (label, spans)
            })
            .collect()
    }

    pub fn chain_count(&self) -> usize {
        self.mentions
            .iter()
            .map(|m| m.chain.as_str())
            .collect::<BTreeSet<_>>()
            .len()
    }

    fn normalize(&mut self) {
        self.mentions.sort();
    }

    /// Reject partially overlapping mentions.
    pub fn check_crossing(&self) -> Result<(), ConllError> {
        let mut spans: Vec<Span> = self.mentions.iter().map(|m| m.span).collect();
        spans.sort();
        spans.dedup();
        for (i, a) in spans.iter().enumerate() {
            for b in &spans[i + 1..] {
                if b.start > a.end {
                    break;
                }
                if a.crosses(b) {
                    return Err(ConllError::CrossingSpans {
                        annotator: self.annotator.clone(),
                        first: *a,
                        second: *b,
                    });
                }
            }
        }
        Ok(())
    }
}

/// A parsed single-annotator file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedDocument {
    pub document: Document,
    pub annotation: Annotation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MarkKind {
    /// Enforced coreference field, without the leading `=`.
    Field(String),
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnforcementMark {
    pub token: usize,
    pub kind: MarkKind,
}

/// A parsed merged review file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergedDocument {
    pub document: Document,
    pub annotations: Vec<Annotation>,
    pub previous: Annotation,
    pub marks: Vec<EnforcementMark>,
    pub forced: ForcedSpec,
    /// Raw result column cells, `=` prefixes included.
    pub result_cells: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Item<'a> {
    Open(&'a str),
    Close(&'a str),
    Single(&'a str),
}

fn parse_cell(cell: &str, line: usize) -> Result<Vec<Item<'_>>, ConllError> {
    if cell == "-" {
        return Ok(Vec::new());
    }
    let bad = |item: &str| ConllError::MalformedItem {
        line,
        item: item.to_string(),
    };
    let valid_label =
        |label: &str| !label.is_empty() && !label.contains(['(', ')', '=', '-', '|']) || is_numeric_label(label);
    cell.split('|')
        .map(|item| {
            let opens = item.starts_with('(');
            let closes = item.ends_with(')');
            let label = match (opens, closes) {
                (true, true) if item.len() >= 3 => &item[1..item.len() - 1],
                (true, false) => &item[1..],
                (false, true) => &item[..item.len() - 1],
                _ => return Err(bad(item)),
            };
            if !valid_label(label) {
                return Err(bad(item));
            }
            Ok(match (opens, closes) {
                (true, true) => Item::Single(label),
                (true, false) => Item::Open(label),
                _ => Item::Close(label),
            })
        })
        .collect()
}

fn is_numeric_label(label: &str) -> bool {
    !label.is_empty() && label.bytes().all(|b| b.is_ascii_digit())
}

#[derive(Debug)]
enum Row {
    Cells { line: usize, cols: Vec<String> },
    Blank,
    Comment { text: String },
}

#[derive(Debug)]
struct Table {
    begin: String,
    rows: Vec<Row>,
}

fn parse_table(text: &str) -> Result<Table, ConllError> {
    let mut begin: Option<String> = None;
    let mut ended = false;
    let mut rows = Vec::new();
    let mut width: Option<usize> = None;
    let mut previous_index: Option<usize> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.starts_with("#begin document") {
            if begin.is_some() {
                return Err(ConllError::MultipleDocuments { line: line_no });
            }
            begin = Some(line.to_string());
            continue;
        }
        if line.starts_with("#end document") {
            if begin.is_none() || ended {
                return Err(ConllError::OutsideDocument { line: line_no });
            }
            ended = true;
            continue;
        }
        if line.trim().is_empty() {
            if begin.is_some() && !ended {
                rows.push(Row::Blank);
                previous_index = None;
            }
            continue;
        }
        if begin.is_none() || ended {
            return Err(ConllError::OutsideDocument { line: line_no });
        }
        if line.starts_with('#') {
            rows.push(Row::Comment { text: line.to_string() });
            continue;
        }
        let cols: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if cols.len() < 2 {
            return Err(ConllError::ColumnCount {
                line: line_no,
                expected: width.unwrap_or(2),
                found: cols.len(),
            });
        }
        match width {
            Some(w) if w != cols.len() => {
                return Err(ConllError::ColumnCount {
                    line: line_no,
                    expected: w,
                    found: cols.len(),
                })
            }
            _ => width = Some(cols.len()),
        }
        if let Ok(found) = cols[0].parse::<usize>() {
            if let Some(previous) = previous_index {
                if found != previous + 1 {
                    return Err(ConllError::TokenIndex {
                        line: line_no,
                        previous,
                        found,
                    });
                }
            }
            previous_index = Some(found);
        } else {
            previous_index = None;
        }
        rows.push(Row::Cells { line: line_no, cols });
    }
    let begin = begin.ok_or(ConllError::MissingBegin)?;
    if !ended {
        return Err(ConllError::MissingEnd);
    }
    Ok(Table { begin, rows })
}

/// Split rows into a document (leading `keep` columns) and the remaining
/// coreference columns, one `Vec` of cells per column.
fn split_table(table: Table, keep: usize) -> (Document, Vec<Vec<(usize, String)>>, Vec<String>) {
    let mut lines = Vec::new();
    let mut columns: Vec<Vec<(usize, String)>> = Vec::new();
    let mut comments = Vec::new();
    let mut index = 0;
    for row in table.rows {
        match row {
            Row::Blank => lines.push(Line::Blank),
            Row::Comment { text } => {
                if text.starts_with("#columns") {
                    comments.push(text);
                } else {
                    lines.push(Line::Comment(text));
                }
            }
            Row::Cells { line, mut cols } => {
                index += 1;
                let coref = cols.split_off(keep);
                if columns.is_empty() {
                    columns = vec![Vec::new(); coref.len()];
                }
                for (c, cell) in coref.into_iter().enumerate() {
                    columns[c].push((line, cell));
                }
                let mut cols = cols.into_iter();
                let surface = cols.next().unwrap_or_default();
                lines.push(Line::Token(Token {
                    index,
                    surface,
                    passthrough: cols.collect(),
                }));
            }
        }
    }
    (
        Document {
            begin: table.begin,
            lines,
        },
        columns,
        comments,
    )
}

/// Mentions of one coreference column, each tagged with whether its opening
/// and closing items came from flagged cells.
fn column_mentions(
    cells: &[(usize, String)],
    flagged: impl Fn(usize) -> bool,
) -> Result<Vec<(Mention, bool)>, ConllError> {
    let mut stacks: HashMap<String, Vec<(usize, usize)>> = HashMap::new();
    let mut out = Vec::new();
    for (t0, (line, cell)) in cells.iter().enumerate() {
        let token = t0 + 1;
        let cell = cell.strip_prefix('=').unwrap_or(cell);
        for item in parse_cell(cell, *line)? {
            match item {
                Item::Single(label) => out.push((
                    Mention {
                        span: Span::new(token, token),
                        chain: label.to_string(),
                    },
                    flagged(token),
                )),
                Item::Open(label) => stacks.entry(label.to_string()).or_default().push((token, *line)),
                Item::Close(label) => {
                    let (start, _) =
                        stacks
                            .get_mut(label)
                            .and_then(Vec::pop)
                            .ok_or_else(|| ConllError::UnbalancedClose {
                                line: *line,
                                chain: label.to_string(),
                            })?;
                    out.push((
                        Mention {
                            span: Span::new(start, token),
                            chain: label.to_string(),
                        },
                        flagged(start) || flagged(token),
                    ));
                }
            }
        }
    }
    let mut unclosed: Vec<(usize, String)> = stacks
        .into_iter()
        .flat_map(|(label, opens)| opens.into_iter().map(move |(_, line)| (line, label.clone())))
        .collect();
    unclosed.sort();
    if let Some((line, chain)) = unclosed.into_iter().next() {
        return Err(ConllError::UnclosedOpen { line, chain });
    }
    Ok(out)
}

fn annotation_from_column(
    annotator: &str,
    cells: &[(usize, String)],
    check_crossing: bool,
) -> Result<Annotation, ConllError> {
    for (line, cell) in cells {
        if cell.starts_with('=') {
            return Err(ConllError::MalformedItem {
                line: *line,
                item: cell.clone(),
            });
        }
    }
    let mut annotation = Annotation {
        annotator: annotator.to_string(),
        mentions: column_mentions(cells, |_| false)?.into_iter().map(|(m, _)| m).collect(),
    };
    annotation.normalize();
    if check_crossing {
        annotation.check_crossing()?;
    }
    Ok(annotation)
}

/// Parse a single-annotator file.
pub fn parse_annotation(text: &str, annotator: &str) -> Result<AnnotatedDocument, ConllError> {
    let table = parse_table(text)?;
    let width = table
        .rows
        .iter()
        .find_map(|r| match r {
            Row::Cells { cols, .. } => Some(cols.len()),
            _ => None,
        })
        .unwrap_or(2);
    let (document, columns, _) = split_table(table, width - 1);
    let cells = columns.into_iter().next().unwrap_or_default();
    let annotation = annotation_from_column(annotator, &cells, true)?;
    Ok(AnnotatedDocument { document, annotation })
}

/// Annotator ids declared by the `#columns` header of a merged file, if any.
pub fn merged_annotator_ids(text: &str) -> Option<Vec<String>> {
    text.lines().find(|l| l.starts_with("#columns")).map(|l| {
        l.split_whitespace()
            .filter_map(|c| c.strip_prefix("annotator="))
            .map(str::to_string)
            .collect()
    })
}

/// Parse a merged review file with `annotator_count` annotator columns
/// followed by the result column.
pub fn parse_merged_for_readjudication(text: &str, annotator_count: usize) -> Result<MergedDocument, ConllError> {
    if annotator_count == 0 {
        return Err(ConllError::NoAnnotators);
    }
    let table = parse_table(text)?;
    let mut width = None;
    for row in &table.rows {
        if let Row::Cells { line, cols } = row {
            width = Some(cols.len());
            if cols.len() < annotator_count + 2 {
                return Err(ConllError::ColumnCount {
                    line: *line,
                    expected: annotator_count + 2,
                    found: cols.len(),
                });
            }
            for (c, cell) in cols[..cols.len() - 1].iter().enumerate() {
                if cell.starts_with('=') {
                    return Err(ConllError::EnforcementOutsideLastColumn {
                        line: *line,
                        column: c + 1,
                    });
                }
            }
        }
    }
    let width = width.unwrap_or(annotator_count + 2);
    let (document, mut columns, comments) = split_table(table, width - annotator_count - 1);
    let ids: Vec<String> = match comments.first() {
        Some(header) => {
            let ids: Vec<String> = header
                .split_whitespace()
                .filter_map(|c| c.strip_prefix("annotator="))
                .map(str::to_string)
                .collect();
            if ids.len() != annotator_count {
                return Err(ConllError::AnnotatorCountMismatch {
                    expected: annotator_count,
                    found: ids.len(),
                });
            }
            ids
        }
        None => (1..=annotator_count).map(|i| i.to_string()).collect(),
    };
    let result_column = columns.pop().unwrap_or_default();
    let annotations = columns
        .iter()
        .zip(&ids)
        .map(|(cells, id)| annotation_from_column(id, cells, true))
        .collect::<Result<Vec<_>, _>>()?;

    let mut marks = Vec::new();
    let mut forced_tokens = BTreeSet::new();
    let mut forced = ForcedSpec::new();
    for (t0, (line, cell)) in result_column.iter().enumerate() {
        let token = t0 + 1;
        let Some(field) = cell.strip_prefix('=') else {
            continue;
        };
        let malformed = || ConllError::MalformedForcedField {
            token,
            field: cell.clone(),
        };
        if field == "-" {
            marks.push(EnforcementMark {
                token,
                kind: MarkKind::Empty,
            });
            forced.force_empty(token);
            continue;
        }
        if field.is_empty() || parse_cell(field, *line).map(|v| v.is_empty()).unwrap_or(true) {
            return Err(malformed());
        }
        marks.push(EnforcementMark {
            token,
            kind: MarkKind::Field(field.to_string()),
        });
        forced_tokens.insert(token);
        forced.lock_token(token);
    }
    let mentions =
        column_mentions(&result_column, |t| forced_tokens.contains(&t)).map_err(|e| {
            match first_forced_token(&result_column, &forced_tokens, &e) {
                Some(token) => ConllError::MalformedForcedField {
                    token,
                    field: result_column[token - 1].1.clone(),
                },
                None => e,
            }
        })?;
    let mut previous = Annotation::new(RESULT_COLUMN);
    for (mention, is_forced) in mentions {
        if is_forced {
            forced.force_mention(mention.span, &mention.chain)?;
        }
        previous.mentions.push(mention);
    }
    previous.normalize();
    forced.validate(document.token_count())?;
    let result_cells = result_column.into_iter().map(|(_, c)| c).collect();
    Ok(MergedDocument {
        document,
        annotations,
        previous,
        marks,
        forced,
        result_cells,
    })
}

/// Map a bracket error in the result column to the enforced token it stems
/// from, if the offending line carries an enforced field.
fn first_forced_token(
    column: &[(usize, String)],
    forced_tokens: &BTreeSet<usize>,
    error: &ConllError,
) -> Option<usize> {
    let line = match error {
        ConllError::UnbalancedClose { line, .. }
        | ConllError::UnclosedOpen { line, .. }
        | ConllError::MalformedItem { line, .. } => *line,
        _ => return None,
    };
    column
        .iter()
        .position(|(l, _)| *l == line)
        .map(|i| i + 1)
        .filter(|t| forced_tokens.contains(t))
}

/// A result chain with its output label.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct LabeledChain {
    pub label: String,
    pub spans: Vec<Span>,
}

/// Number chains 1, 2, … by their earliest mention. Chains that contain a
/// mention listed in `preferred` keep that mention's label; the remaining
/// chains take the smallest numbers not already in use.
pub fn number_chains(chains: &[Vec<Span>], preferred: &BTreeMap<Span, String>) -> Vec<LabeledChain> {
    let mut sorted: Vec<Vec<Span>> = chains
        .iter()
        .map(|c| {
            let mut c = c.clone();
            c.sort();
            c.dedup();
            c
        })
        .filter(|c| !c.is_empty())
        .collect();
    sorted.sort();
    let fixed: Vec<Option<String>> = sorted
        .iter()
        .map(|c| c.iter().find_map(|s| preferred.get(s).cloned()))
        .collect();
    let taken: BTreeSet<&str> = fixed.iter().flatten().map(String::as_str).collect();
    let mut next = 1u64;
    let mut out = Vec::with_capacity(sorted.len());
    for (spans, fixed) in sorted.iter().zip(&fixed) {
        let label = match fixed {
            Some(l) => l.clone(),
            None => {
                while taken.contains(next.to_string().as_str()) {
                    next += 1;
                }
                let l = next.to_string();
                next += 1;
                l
            }
        };
        out.push(LabeledChain {
            label,
            spans: spans.clone(),
        });
    }
    out
}

fn label_key(label: &str) -> (u8, u64, &str) {
    match label.parse::<u64>() {
        Ok(n) if is_numeric_label(label) => (0, n, label),
        _ => (1, 0, label),
    }
}

/// Render one coreference column. Within a cell closing items come first,
/// then opening items, then single-token items, so a cell reads in nesting
/// order and LIFO pairing is unambiguous on re-parse.
pub fn render_column(token_count: usize, mentions: &[Mention]) -> Result<Vec<String>, ConllError> {
    let mut closes: Vec<Vec<&str>> = vec![Vec::new(); token_count + 1];
    let mut singles: Vec<Vec<&str>> = vec![Vec::new(); token_count + 1];
    let mut opens: Vec<Vec<&str>> = vec![Vec::new(); token_count + 1];
    for m in mentions {
        if !m.span.is_valid_for(token_count) {
            return Err(ConllError::SpanOutOfRange {
                span: m.span,
                token_count,
            });
        }
        if m.span.start == m.span.end {
            singles[m.span.start].push(&m.chain);
        } else {
            opens[m.span.start].push(&m.chain);
            closes[m.span.end].push(&m.chain);
        }
    }
    let mut cells = Vec::with_capacity(token_count);
    for t in 1..=token_count {
        let mut items = Vec::new();
        for (group, fmt) in [(&mut closes[t], 0u8), (&mut opens[t], 2), (&mut singles[t], 1)] {
            group.sort_by_key(|l| label_key(l));
            for label in group.iter() {
                items.push(match fmt {
                    0 => format!("{label})"),
                    1 => format!("({label})"),
                    _ => format!("({label}"),
                });
            }
        }
        cells.push(if items.is_empty() {
            "-".to_string()
        } else {
            items.join("|")
        });
    }
    Ok(cells)
}

fn chains_to_mentions(chains: &[LabeledChain]) -> Vec<Mention> {
    chains
        .iter()
        .flat_map(|c| {
            c.spans.iter().map(move |s| Mention {
                span: *s,
                chain: c.label.clone(),
            })
        })
        .collect()
}

fn write_document(document: &Document, header: Option<String>, coref: &[Vec<String>]) -> String {
    let mut out = String::new();
    out.push_str(&document.begin);
    out.push('\n');
    if let Some(h) = header {
        out.push_str(&h);
        out.push('\n');
    }
    for line in &document.lines {
        match line {
            Line::Blank => out.push('\n'),
            Line::Comment(c) => {
                out.push_str(c);
                out.push('\n');
            }
            Line::Token(t) => {
                out.push_str(&t.surface);
                for p in &t.passthrough {
                    out.push('\t');
                    out.push_str(p);
                }
                for column in coref {
                    out.push('\t');
                    out.push_str(&column[t.index - 1]);
                }
                out.push('\n');
            }
        }
    }
    out.push_str("#end document\n");
    out
}

/// Write an annotation back in single-column form, labels as given.
pub fn serialize_annotation(document: &Document, annotation: &Annotation) -> Result<String, ConllError> {
    let column = render_column(document.token_count(), &annotation.mentions)?;
    Ok(write_document(document, None, &[column]))
}

/// Write a result chain partition; chains are numbered by [`number_chains`].
pub fn serialize_result(document: &Document, chains: &[Vec<Span>]) -> Result<String, ConllError> {
    let labeled = number_chains(chains, &BTreeMap::new());
    serialize_labeled_result(document, &labeled)
}

pub fn serialize_labeled_result(document: &Document, chains: &[LabeledChain]) -> Result<String, ConllError> {
    let column = render_column(document.token_count(), &chains_to_mentions(chains))?;
    Ok(write_document(document, None, &[column]))
}

/// Result column cells for a merged file: rendered chains, with enforced
/// cells of `keep` copied verbatim.
pub fn result_cells(
    token_count: usize,
    chains: &[LabeledChain],
    keep: Option<&[String]>,
) -> Result<Vec<String>, ConllError> {
    let mut cells = render_column(token_count, &chains_to_mentions(chains))?;
    if let Some(keep) = keep {
        for (cell, original) in cells.iter_mut().zip(keep) {
            if original.starts_with('=') {
                cell.clone_from(original);
            }
        }
    }
    Ok(cells)
}

/// Result cells that state `forced` in `=` notation: locked tokens carry
/// the forced items at that token, empty tokens `=-`. Other cells are empty
/// strings, ready to be passed as `keep` to [`result_cells`].
pub fn enforced_cells(token_count: usize, forced: &ForcedSpec) -> Result<Vec<String>, ConllError> {
    let mentions: Vec<Mention> = forced
        .chains()
        .iter()
        .flat_map(|c| {
            c.spans.iter().map(move |s| Mention {
                span: *s,
                chain: c.label.clone(),
            })
        })
        .collect();
    let rendered = render_column(token_count, &mentions)?;
    Ok((1..=token_count)
        .map(|t| {
            if forced.empty_tokens().contains(&t) {
                "=-".to_string()
            } else if forced.locked_tokens().contains(&t) {
                format!("={}", rendered[t - 1])
            } else {
                String::new()
            }
        })
        .collect())
}

/// Write a merged review file: annotator columns in input order, then the
/// result column, with a `#columns` header naming every column's role.
pub fn serialize_merged(
    document: &Document,
    annotations: &[Annotation],
    result: &[String],
) -> Result<String, ConllError> {
    if annotations.is_empty() {
        return Err(ConllError::NoAnnotators);
    }
    let n = document.token_count();
    if result.len() != n {
        return Err(ConllError::TokenCountMismatch {
            annotator: RESULT_COLUMN.to_string(),
            expected: n,
            found: result.len(),
        });
    }
    let mut columns = Vec::with_capacity(annotations.len() + 1);
    for a in annotations {
        columns.push(render_column(n, &a.mentions)?);
    }
    columns.push(result.to_vec());
    let mut header = String::from("#columns\ttoken");
    for _ in 0..document.passthrough_width() {
        header.push_str("\tpassthrough");
    }
    for a in annotations {
        let _ = write!(header, "\tannotator={}", a.annotator);
    }
    header.push_str("\tresult");
    Ok(write_document(document, Some(header), &columns))
}

/// Token counts of all annotated documents must agree.
pub fn check_same_tokens(documents: &[AnnotatedDocument]) -> Result<usize, ConllError> {
    let first = documents.first().ok_or(ConllError::NoAnnotators)?;
    let expected = first.document.token_count();
    for d in documents {
        let found = d.document.token_count();
        if found != expected {
            return Err(ConllError::TokenCountMismatch {
                annotator: d.annotation.annotator.clone(),
                expected,
                found,
            });
        }
    }
    Ok(expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE_A: &str = "#begin document\n1\t(2\n2\t(3)\n3\t2)\n4\t(3)\n5\t-\n6\t(2)\n#end document\n";

    fn s(a: usize, b: usize) -> Span {
        Span::new(a, b)
    }

    #[test]
    fn parses_sample_annotator_a() {
        let parsed = parse_annotation(SAMPLE_A, "a").unwrap();
        let chains = parsed.annotation.chains();
        assert_eq!(chains.len(), 2);
        let two: Vec<Span> = chains.iter().find(|c| c.0 == "2").unwrap().1.clone();
        let three: Vec<Span> = chains.iter().find(|c| c.0 == "3").unwrap().1.clone();
        assert_eq!(two, vec![s(1, 3), s(6, 6)]);
        assert_eq!(three, vec![s(2, 2), s(4, 4)]);
        assert_eq!(parsed.document.token_count(), 6);
    }

    #[test]
    fn all_dash_column_has_no_mentions() {
        let text = "#begin document\nw1 -\nw2 -\nw3 -\nw4 -\nw5 -\n#end document\n";
        let parsed = parse_annotation(text, "x").unwrap();
        assert!(parsed.annotation.mentions.is_empty());
        assert_eq!(parsed.document.token_count(), 5);
    }

    #[test]
    fn lifo_pairing_within_one_chain() {
        let text = "#begin document\n1 (7\n2 (7\n3 7)\n4 -\n5 7)\n#end document\n";
        let parsed = parse_annotation(text, "x").unwrap();
        let spans: Vec<Span> = parsed.annotation.mentions.iter().map(|m| m.span).collect();
        assert_eq!(spans, vec![s(1, 5), s(2, 3)]);
    }

    #[test]
    fn bracket_errors_carry_line_numbers() {
        let text = "#begin document\n1 -\n2 4)\n#end document\n";
        assert_eq!(
            parse_annotation(text, "x").unwrap_err(),
            ConllError::UnbalancedClose {
                line: 3,
                chain: "4".into()
            }
        );
        let text = "#begin document\n1 (4\n2 -\n#end document\n";
        assert_eq!(
            parse_annotation(text, "x").unwrap_err(),
            ConllError::UnclosedOpen {
                line: 2,
                chain: "4".into()
            }
        );
    }

    #[test]
    fn crossing_spans_are_rejected() {
        let text = "#begin document\n1 (1\n2 (2\n3 1)\n4 2)\n#end document\n";
        assert!(matches!(
            parse_annotation(text, "x").unwrap_err(),
            ConllError::CrossingSpans { .. }
        ));
    }

    #[test]
    fn duplicate_token_index_is_rejected() {
        let text = "#begin document\n1 -\n1 -\n#end document\n";
        assert_eq!(
            parse_annotation(text, "x").unwrap_err(),
            ConllError::TokenIndex {
                line: 3,
                previous: 1,
                found: 1
            }
        );
    }

    #[test]
    fn structural_errors() {
        assert_eq!(
            parse_annotation("1 -\n", "x").unwrap_err(),
            ConllError::OutsideDocument { line: 1 }
        );
        assert_eq!(parse_annotation("", "x").unwrap_err(), ConllError::MissingBegin);
        assert_eq!(
            parse_annotation("#begin document\n1 -\n", "x").unwrap_err(),
            ConllError::MissingEnd
        );
        let two = "#begin document\n1 -\n#end document\n#begin document\n1 -\n#end document\n";
        assert_eq!(
            parse_annotation(two, "x").unwrap_err(),
            ConllError::MultipleDocuments { line: 4 }
        );
        let bad = "#begin document\n1 (x\n2 x)(\n#end document\n";
        assert!(matches!(
            parse_annotation(bad, "x").unwrap_err(),
            ConllError::MalformedItem { line: 3, .. }
        ));
    }

    #[test]
    fn passthrough_and_layout_survive_round_trip() {
        let text = "#begin document (doc); part 000\ndoc 0 0 John NNP (1)\ndoc 0 1 left VBD -\n\n# a comment\ndoc 0 0 He PRP (1)\n#end document\n";
        let parsed = parse_annotation(text, "x").unwrap();
        let out = serialize_annotation(&parsed.document, &parsed.annotation).unwrap();
        assert_eq!(
            out,
            "#begin document (doc); part 000\ndoc\t0\t0\tJohn\tNNP\t(1)\ndoc\t0\t1\tleft\tVBD\t-\n\n# a comment\ndoc\t0\t0\tHe\tPRP\t(1)\n#end document\n"
        );
        let again = parse_annotation(&out, "x").unwrap();
        assert_eq!(again, parsed);
    }

    #[test]
    fn chain_numbering_follows_earliest_mention() {
        let chains = vec![vec![s(2, 2), s(6, 6)], vec![s(5, 5), s(1, 3)], vec![s(4, 4), s(1, 1)]];
        let labeled = number_chains(&chains, &BTreeMap::new());
        assert_eq!(labeled[0].spans, vec![s(1, 1), s(4, 4)]);
        assert_eq!(labeled[0].label, "1");
        assert_eq!(labeled[1].label, "2");
        assert_eq!(labeled[2].label, "3");
        let preferred = BTreeMap::from([(s(6, 6), "1".to_string())]);
        let labeled = number_chains(&chains, &preferred);
        let labels: Vec<&str> = labeled.iter().map(|c| c.label.as_str()).collect();
        assert_eq!(labels, vec!["2", "3", "1"]);
    }

    #[test]
    fn result_serialization_of_the_sample() {
        let doc = Document::numbered(6);
        let chains = vec![vec![s(1, 3), s(5, 5)], vec![s(1, 1), s(4, 4)], vec![s(2, 2), s(6, 6)]];
        let out = serialize_result(&doc, &chains).unwrap();
        assert_eq!(
            out,
            "#begin document\n1\t(2|(1)\n2\t(3)\n3\t2)\n4\t(1)\n5\t(2)\n6\t(3)\n#end document\n"
        );
        assert_eq!(
            serialize_result(&doc, &[]).unwrap(),
            "#begin document\n1\t-\n2\t-\n3\t-\n4\t-\n5\t-\n6\t-\n#end document\n"
        );
        assert!(matches!(
            serialize_result(&doc, &[vec![s(1, 7), s(2, 2)]]),
            Err(ConllError::SpanOutOfRange { .. })
        ));
    }

    #[test]
    fn close_before_open_in_one_cell() {
        let doc = Document::numbered(5);
        let chains = vec![vec![s(1, 3), s(3, 5)]];
        let out = serialize_result(&doc, &chains).unwrap();
        assert!(out.contains("3\t1)|(1\n"));
        let merged = format!("{}", out.replace("\t", "\t-\t"));
        let parsed = parse_merged_for_readjudication(&merged, 1).unwrap();
        let spans: Vec<Span> = parsed.previous.mentions.iter().map(|m| m.span).collect();
        assert_eq!(spans, vec![s(1, 3), s(3, 5)]);
    }

    fn pinned_review() -> String {
        [
            "#begin document",
            "#columns\ttoken\tannotator=a\tannotator=b\tannotator=c\tannotator=d\tresult",
            "1\t(2\t(3\t(1|(2)\t(2\t=(2",
            "2\t(3)\t-\t-\t(4)\t(3)",
            "3\t2)\t3)\t1)\t2)\t2)",
            "4\t(3)\t-\t(2)\t-\t(1)",
            "5\t-\t(3)\t-\t(2)\t(2)",
            "6\t(2)\t-\t(1)\t(4)\t=(2)",
            "#end document",
            "",
        ]
        .join("\n")
    }

    #[test]
    fn enforced_cells_restate_the_marks() {
        let parsed = parse_merged_for_readjudication(&pinned_review(), 4).unwrap();
        let cells = enforced_cells(6, &parsed.forced).unwrap();
        assert_eq!(cells, vec!["=(2", "", "", "", "", "=(2)"]);
        let mut forced = parsed.forced.clone();
        forced.force_empty(5);
        assert_eq!(enforced_cells(6, &forced).unwrap()[4], "=-");
    }

    #[test]
    fn merged_file_marks_and_forced_spec() {
        let parsed = parse_merged_for_readjudication(&pinned_review(), 4).unwrap();
        assert_eq!(parsed.annotations.len(), 4);
        assert_eq!(parsed.annotations[2].annotator, "c");
        assert_eq!(
            parsed.marks,
            vec![
                EnforcementMark {
                    token: 1,
                    kind: MarkKind::Field("(2".into())
                },
                EnforcementMark {
                    token: 6,
                    kind: MarkKind::Field("(2)".into())
                },
            ]
        );
        assert_eq!(parsed.forced.same_pairs(), vec![(s(1, 3), s(6, 6))]);
        assert!(parsed.forced.start_tokens().contains(&1));
        assert!(!parsed.forced.admits_mention(s(1, 1)));
        assert!(parsed.forced.admits_mention(s(2, 2)));
    }

    #[test]
    fn merged_without_marks_and_with_empty_mark() {
        let text = pinned_review().replace("=(2)", "(3)").replace("=(2", "(1)|(2");
        let parsed = parse_merged_for_readjudication(&text, 4).unwrap();
        assert!(parsed.marks.is_empty());
        assert!(parsed.forced.is_empty());

        let doc = Document::numbered(7);
        let ann = Annotation {
            annotator: "a".into(),
            mentions: vec![
                Mention {
                    span: s(1, 1),
                    chain: "1".into(),
                },
                Mention {
                    span: s(3, 3),
                    chain: "1".into(),
                },
            ],
        };
        let mut cells = result_cells(7, &[], None).unwrap();
        cells[6] = "=-".into();
        let text = serialize_merged(&doc, &[ann.clone(), ann], &cells).unwrap();
        let parsed = parse_merged_for_readjudication(&text, 2).unwrap();
        assert_eq!(
            parsed.marks,
            vec![EnforcementMark {
                token: 7,
                kind: MarkKind::Empty
            }]
        );
        assert!(parsed.forced.empty_tokens().contains(&7));
    }

    #[test]
    fn enforcement_errors() {
        let text = pinned_review().replace("2\t(3)\t-", "2\t=(3)\t-");
        assert_eq!(
            parse_merged_for_readjudication(&text, 4).unwrap_err(),
            ConllError::EnforcementOutsideLastColumn { line: 4, column: 2 }
        );
        let text = pinned_review().replace("=(2)", "=(");
        assert!(matches!(
            parse_merged_for_readjudication(&text, 4).unwrap_err(),
            ConllError::MalformedForcedField { token: 6, .. }
        ));
        let text = pinned_review().replace("=(2)", "=");
        assert!(matches!(
            parse_merged_for_readjudication(&text, 4).unwrap_err(),
            ConllError::MalformedForcedField { token: 6, .. }
        ));
        let text = pinned_review().replace("\t=(2)", "\t=(2)|=(4)");
        assert!(parse_merged_for_readjudication(&text, 4).is_err());
        // the forced open at token 1 loses its close
        let text = pinned_review().replace("3\t2)\t3)\t1)\t2)\t2)", "3\t2)\t3)\t1)\t2)\t-");
        assert!(matches!(
            parse_merged_for_readjudication(&text, 4).unwrap_err(),
            ConllError::MalformedForcedField { token: 1, .. }
        ));
    }

    #[test]
    fn merged_layout() {
        let doc = Document::numbered(3);
        let ann = Annotation {
            annotator: "x".into(),
            mentions: vec![
                Mention {
                    span: s(1, 1),
                    chain: "1".into(),
                },
                Mention {
                    span: s(3, 3),
                    chain: "1".into(),
                },
            ],
        };
        let cells = result_cells(3, &[], None).unwrap();
        assert_eq!(serialize_merged(&doc, &[], &cells), Err(ConllError::NoAnnotators));
        let text = serialize_merged(&doc, &[ann.clone(), ann.clone(), ann], &cells).unwrap();
        for line in text.lines().filter(|l| !l.starts_with('#')) {
            assert_eq!(line.split('\t').count(), 1 + 3 + 1);
        }
        assert_eq!(merged_annotator_ids(&text).unwrap(), vec!["x", "x", "x"]);
    }
}
