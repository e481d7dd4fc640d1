//! Exact-match span scoring over BIO sequences.

use std::collections::BTreeSet;

use super::corpus::Tag;
use crate::error::{Error, Result};

/// A typed slot span with inclusive token bounds.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub ty: String,
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(ty: impl Into<String>, start: usize, end: usize) -> Self {
        Span {
            ty: ty.into(),
            start,
            end,
        }
    }
}

/// Collects maximal spans. `B-x` always opens a span; an `I-x` that does not
/// continue an open `x` span opens a new one. Unparseable labels count as `O`.
pub fn extract_spans<S: AsRef<str>>(labels: &[S]) -> BTreeSet<Span> {
    let mut out = BTreeSet::new();
    let mut open: Option<(&str, usize)> = None;
    for (i, s) in labels.iter().enumerate() {
        let tag = Tag::parse(s.as_ref()).unwrap_or(Tag::Outside);
        let next = match tag {
            Tag::Outside => None,
            Tag::Begin(t) => Some((t, i)),
            Tag::Inside(t) => match open {
                Some((o, start)) if o == t => Some((o, start)),
                _ => Some((t, i)),
            },
        };
        if let Some((t, start)) = open {
            if next.is_none_or(|(_, s)| s != start) {
                out.insert(Span::new(t, start, i - 1));
            }
        }
        open = next;
    }
    if let Some((t, start)) = open {
        out.insert(Span::new(t, start, labels.len() - 1));
    }
    out
}

/// Renders spans back into a BIO sequence of length `len`.
pub fn spans_to_bio(spans: &BTreeSet<Span>, len: usize) -> Vec<String> {
    let mut out = vec!["O".to_string(); len];
    for s in spans {
        for (i, slot) in out.iter_mut().enumerate().take(s.end + 1).skip(s.start) {
            *slot = if i == s.start {
                format!("B-{}", s.ty)
            } else {
                format!("I-{}", s.ty)
            };
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpanScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
}

/// Micro-averaged exact-match precision, recall and F1.
///
/// With no gold and no predicted spans at all the scores are 1.0: the
/// prediction agrees with the gold exactly.
pub fn span_f1(gold: &[BTreeSet<Span>], pred: &[BTreeSet<Span>]) -> Result<SpanScores> {
    if gold.len() != pred.len() {
        return Err(Error::InvalidInput(format!(
            "{} gold span sets vs {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let (mut tp, mut n_pred, mut n_gold) = (0, 0, 0);
    for (g, p) in gold.iter().zip(pred) {
        tp += g.intersection(p).count();
        n_pred += p.len();
        n_gold += g.len();
    }
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            if n_gold == 0 && n_pred == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(tp, n_pred);
    let recall = ratio(tp, n_gold);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(SpanScores {
        precision,
        recall,
        f1,
        true_pos: tp,
        false_pos: n_pred - tp,
        false_neg: n_gold - tp,
    })
}
