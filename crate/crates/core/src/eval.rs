//! Chunk-level scoring with conlleval semantics.

use std::ops::AddAssign;

use crate::corpus::ChunkTag;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Chunk {
    pub start: usize,
    /// Inclusive.
    pub end: usize,
    pub kind: String,
}

/// Maximal chunks of an IOB2 sequence, sorted by position.
///
/// An `I-X` that does not continue an `X` chunk opens a new one, as
/// conlleval does. Tags outside the IOB2 grammar count as `O`.
pub fn extract_chunks<S: AsRef<str>>(tags: &[S]) -> Vec<Chunk> {
    let mut chunks = Vec::new();
    let mut open: Option<(usize, &str)> = None;
    for (t, tag) in tags.iter().enumerate() {
        let tag = ChunkTag::parse(tag.as_ref()).unwrap_or(ChunkTag::Outside);
        let continues = matches!((tag, open), (ChunkTag::Inside(ty), Some((_, cur))) if ty == cur);
        if continues {
            continue;
        }
        if let Some((start, kind)) = open.take() {
            chunks.push(Chunk {
                start,
                end: t - 1,
                kind: kind.to_string(),
            });
        }
        if let Some(ty) = tag.chunk_type() {
            open = Some((t, ty));
        }
    }
    if let Some((start, kind)) = open {
        chunks.push(Chunk {
            start,
            end: tags.len() - 1,
            kind: kind.to_string(),
        });
    }
    chunks
}

/// Raw match counts; add them up across sentences, then call
/// [`ChunkCounts::metrics`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ChunkCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ChunkCounts {
    pub fn of_sentence<S: AsRef<str>, G: AsRef<str>>(pred: &[S], gold: &[G]) -> Result<Self> {
        if pred.len() != gold.len() {
            return Err(Error::LengthMismatch {
                left: pred.len(),
                right: gold.len(),
            });
        }
        let p = extract_chunks(pred);
        let g = extract_chunks(gold);
        // Both lists are sorted and disjoint, so a merge finds exact matches.
        let (mut i, mut j, mut tp) = (0, 0, 0);
        while i < p.len() && j < g.len() {
            match p[i].cmp(&g[j]) {
                std::cmp::Ordering::Equal => {
                    tp += 1;
                    i += 1;
                    j += 1;
                }
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
            }
        }
        Ok(ChunkCounts {
            tp,
            fp: p.len() - tp,
            fn_: g.len() - tp,
        })
    }

    pub fn metrics(&self) -> ChunkMetrics {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        ChunkMetrics {
            precision,
            recall,
            f1,
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
        }
    }
}

impl AddAssign for ChunkCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.tp += rhs.tp;
        self.fp += rhs.fp;
        self.fn_ += rhs.fn_;
    }
}

impl std::iter::Sum for ChunkCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(ChunkCounts::default(), |mut acc, c| {
            acc += c;
            acc
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChunkMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Micro-averaged chunk precision/recall/F1 over a corpus.
pub fn score<S: AsRef<str>, G: AsRef<str>>(pred: &[Vec<S>], gold: &[Vec<G>]) -> Result<ChunkMetrics> {
    if pred.len() != gold.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: gold.len(),
        });
    }
    let mut counts = ChunkCounts::default();
    for (p, g) in pred.iter().zip(gold) {
        counts += ChunkCounts::of_sentence(p, g)?;
    }
    Ok(counts.metrics())
}

pub fn token_accuracy<S: AsRef<str>, G: AsRef<str>>(pred: &[Vec<S>], gold: &[Vec<G>]) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: gold.len(),
        });
    }
    let (mut correct, mut total) = (0usize, 0usize);
    for (p, g) in pred.iter().zip(gold) {
        if p.len() != g.len() {
            return Err(Error::LengthMismatch {
                left: p.len(),
                right: g.len(),
            });
        }
        correct += p.iter().zip(g).filter(|(a, b)| a.as_ref() == b.as_ref()).count();
        total += p.len();
    }
    Ok(if total == 0 { 0.0 } else { correct as f64 / total as f64 })
}
