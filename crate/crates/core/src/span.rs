use std::fmt;

use serde::{Deserialize, Serialize};

/// A mention boundary pair over 1-based token indexes, both ends inclusive.
///
/// Spans order lexicographically on `(start, end)`, which is also the
/// canonical order of mentions throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end, "span start after end: ({start},{end})");
        Span { start, end }
    }

    pub fn is_valid_for(&self, token_count: usize) -> bool {
        1 <= self.start && self.start <= self.end && self.end <= token_count
    }

    /// True when one span contains the other and they are not identical.
    pub fn nests_with(&self, other: &Span) -> bool {
        self != other
            && ((self.start <= other.start && other.end <= self.end)
                || (other.start <= self.start && self.end <= other.end))
    }

    /// True when the spans share tokens but neither contains the other.
    pub fn crosses(&self, other: &Span) -> bool {
        let overlap = self.start <= other.end && other.start <= self.end;
        overlap && !self.nests_with(other) && self != other
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.start, self.end)
    }
}
