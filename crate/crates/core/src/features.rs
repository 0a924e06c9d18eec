//! Attribute templates, the feature dictionary and sparse feature vectors.
//!
//! A *state feature* pairs an observation attribute (e.g. `w[-1]|w[0]=the|cat`)
//! with a label; a *transition feature* pairs two labels. State features are
//! only registered for (attribute, label) pairs observed in training data;
//! all `L * L` transition features are always present.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::corpus::{Dataset, LabelAlphabet, Sentence};
use crate::error::{Error, Result};

pub const BOS: &str = "__BOS__";
pub const EOS: &str = "__EOS__";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Column {
    Word,
    Pos,
}

type Template = &'static [(Column, i32)];

use Column::{Pos as P, Word as W};

const SMALL: &[Template] = &[
    &[(W, -2)],
    &[(W, -1)],
    &[(W, 0)],
    &[(W, 1)],
    &[(W, 2)],
    &[(W, -1), (W, 0)],
    &[(W, 0), (W, 1)],
    &[(P, -2)],
    &[(P, -1)],
    &[(P, 0)],
    &[(P, 1)],
    &[(P, 2)],
    &[(P, -2), (P, -1)],
    &[(P, -1), (P, 0)],
    &[(P, 0), (P, 1)],
    &[(P, 1), (P, 2)],
];

const LARGE_EXTRA: &[Template] = &[
    &[(P, -2), (P, -1), (P, 0)],
    &[(P, -1), (P, 0), (P, 1)],
    &[(P, 0), (P, 1), (P, 2)],
    &[(W, 0), (P, 0)],
    &[(W, -1), (P, 0)],
    &[(W, 0), (P, -1)],
    &[(W, 1), (P, 0)],
    &[(W, 0), (P, 1)],
    &[(W, -1), (W, 1)],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateSet {
    Small,
    Large,
    /// No state templates at all; only transition features.
    Empty,
}

impl TemplateSet {
    fn templates(self) -> impl Iterator<Item = Template> {
        let (base, extra): (&[Template], &[Template]) = match self {
            TemplateSet::Small => (SMALL, &[]),
            TemplateSet::Large => (SMALL, LARGE_EXTRA),
            TemplateSet::Empty => (&[], &[]),
        };
        base.iter().chain(extra.iter()).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            TemplateSet::Small => "small",
            TemplateSet::Large => "large",
            TemplateSet::Empty => "empty",
        }
    }

    pub fn len(self) -> usize {
        self.templates().count()
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for TemplateSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TemplateSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(TemplateSet::Small),
            "large" => Ok(TemplateSet::Large),
            "empty" => Ok(TemplateSet::Empty),
            other => Err(Error::InvalidConfig(format!("unknown template set `{other}`"))),
        }
    }
}

fn offset_name(offset: i32) -> String {
    if offset == 0 {
        "0".to_string()
    } else {
        format!("{offset:+}")
    }
}

/// Attribute strings for position `t`, in template order.
pub fn extract_attributes(sentence: &Sentence, t: usize, set: TemplateSet) -> Vec<String> {
    let tokens = sentence.tokens();
    let value = |col: Column, offset: i32| -> &str {
        let i = t as i64 + offset as i64;
        if i < 0 {
            BOS
        } else if i as usize >= tokens.len() {
            EOS
        } else {
            let tok = &tokens[i as usize];
            match col {
                Column::Word => tok.word(),
                Column::Pos => tok.pos(),
            }
        }
    };
    set.templates()
        .map(|template| {
            let mut name = String::new();
            let mut val = String::new();
            for (k, &(col, offset)) in template.iter().enumerate() {
                if k > 0 {
                    name.push('|');
                    val.push('|');
                }
                name.push(match col {
                    Column::Word => 'w',
                    Column::Pos => 'p',
                });
                name.push('[');
                name.push_str(&offset_name(offset));
                name.push(']');
                val.push_str(value(col, offset));
            }
            name.push('=');
            name.push_str(&val);
            name
        })
        .collect()
}

/// Sparse real vector: `(id, value)` pairs with strictly increasing ids and
/// no stored zeros.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    entries: Vec<(u32, f64)>,
}

impl SparseVector {
    /// Sums duplicate ids and drops zeros.
    pub fn from_pairs(mut pairs: Vec<(u32, f64)>) -> Self {
        pairs.sort_by_key(|&(i, _)| i);
        let mut entries: Vec<(u32, f64)> = Vec::with_capacity(pairs.len());
        for (i, v) in pairs {
            match entries.last_mut() {
                Some((j, acc)) if *j == i => *acc += v,
                _ => entries.push((i, v)),
            }
        }
        entries.retain(|&(_, v)| v != 0.0);
        SparseVector { entries }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: u32) -> f64 {
        self.entries
            .binary_search_by_key(&id, |&(i, _)| i)
            .map_or(0.0, |k| self.entries[k].1)
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, v)| v * dense[i as usize]).sum()
    }

    /// `self - other`, over the union of supports.
    pub fn sub(&self, other: &SparseVector) -> SparseVector {
        let (a, b) = (&self.entries, &other.entries);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() || j < b.len() {
            let entry = match (a.get(i), b.get(j)) {
                (Some(&(ia, va)), Some(&(ib, vb))) if ia == ib => {
                    i += 1;
                    j += 1;
                    (ia, va - vb)
                }
                (Some(&(ia, va)), Some(&(ib, _))) if ia < ib => {
                    i += 1;
                    (ia, va)
                }
                (Some(&(ia, va)), None) => {
                    i += 1;
                    (ia, va)
                }
                (_, Some(&(ib, vb))) => {
                    j += 1;
                    (ib, -vb)
                }
                (None, None) => unreachable!(),
            };
            if entry.1 != 0.0 {
                out.push(entry);
            }
        }
        SparseVector { entries: out }
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, &(_, v)| m.max(v.abs()))
    }

    pub fn to_dense(&self, d: usize) -> Vec<f64> {
        let mut out = vec![0.0; d];
        for &(i, v) in &self.entries {
            out[i as usize] = v;
        }
        out
    }
}

/// A sentence with attributes resolved to dictionary ids. Unknown attribute
/// strings are dropped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    attrs: Vec<Vec<u32>>,
}

impl Instance {
    pub fn len(&self) -> usize {
        self.attrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attrs.is_empty()
    }

    pub fn attributes(&self, t: usize) -> &[u32] {
        &self.attrs[t]
    }
}

/// Frozen mapping from (attribute, label) and (label, label) keys to ids in
/// `[0, d)`. State features occupy `[0, num_state)`, transitions follow in
/// row-major `(prev, cur)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureIndex {
    templates: TemplateSet,
    labels: LabelAlphabet,
    attr_ids: HashMap<String, u32>,
    attr_names: Vec<String>,
    // CSR layout: entries for attribute `a` are
    // `state_entries[state_offsets[a]..state_offsets[a + 1]]`, sorted by label.
    state_offsets: Vec<usize>,
    state_entries: Vec<(u32, u32)>,
    num_state: usize,
}

impl FeatureIndex {
    /// Registers state features for observed (attribute, gold label) pairs,
    /// numbering them in first-encounter order.
    pub fn build(dataset: &Dataset, templates: TemplateSet) -> Self {
        let labels = dataset.labels().clone();
        let mut attr_ids: HashMap<String, u32> = HashMap::new();
        let mut attr_names: Vec<String> = Vec::new();
        let mut per_attr: Vec<Vec<(u32, u32)>> = Vec::new();
        let mut num_state = 0u32;
        for sentence in dataset.sentences() {
            for (t, token) in sentence.tokens().iter().enumerate() {
                let label = labels.id(token.chunk()).expect("alphabet covers dataset") as u32;
                for attr in extract_attributes(sentence, t, templates) {
                    let a = match attr_ids.get(&attr) {
                        Some(&a) => a,
                        None => {
                            let a = attr_names.len() as u32;
                            attr_ids.insert(attr.clone(), a);
                            attr_names.push(attr);
                            per_attr.push(Vec::new());
                            a
                        }
                    };
                    let slot = &mut per_attr[a as usize];
                    if !slot.iter().any(|&(l, _)| l == label) {
                        slot.push((label, num_state));
                        num_state += 1;
                    }
                }
            }
        }
        Self::assemble(templates, labels, attr_names, per_attr)
    }

    /// Rebuilds an index from stored entries, validating that the state
    /// feature ids form exactly `[0, num_state)`.
    pub fn from_parts(
        templates: TemplateSet,
        labels: LabelAlphabet,
        attributes: Vec<(String, Vec<(u32, u32)>)>,
    ) -> Result<Self> {
        let mut seen = Vec::new();
        let mut names = Vec::with_capacity(attributes.len());
        let mut per_attr = Vec::with_capacity(attributes.len());
        for (name, entries) in attributes {
            for &(label, fid) in &entries {
                if label as usize >= labels.len() {
                    return Err(Error::ModelFormat(format!("label id {label} out of range")));
                }
                let fid = fid as usize;
                if fid >= seen.len() {
                    seen.resize(fid + 1, false);
                }
                if std::mem::replace(&mut seen[fid], true) {
                    return Err(Error::ModelFormat(format!("duplicate feature id {fid}")));
                }
            }
            names.push(name);
            per_attr.push(entries);
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::ModelFormat("feature ids are not contiguous".into()));
        }
        let index = Self::assemble(templates, labels, names, per_attr);
        if index.attr_ids.len() != index.attr_names.len() {
            return Err(Error::ModelFormat("duplicate attribute".into()));
        }
        Ok(index)
    }

    fn assemble(
        templates: TemplateSet,
        labels: LabelAlphabet,
        attr_names: Vec<String>,
        per_attr: Vec<Vec<(u32, u32)>>,
    ) -> Self {
        let attr_ids = attr_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as u32))
            .collect();
        let mut state_offsets = Vec::with_capacity(per_attr.len() + 1);
        let mut state_entries = Vec::new();
        state_offsets.push(0);
        for mut entries in per_attr {
            entries.sort_unstable();
            state_entries.extend(entries);
            state_offsets.push(state_entries.len());
        }
        let num_state = state_entries.len();
        FeatureIndex {
            templates,
            labels,
            attr_ids,
            attr_names,
            state_offsets,
            state_entries,
            num_state,
        }
    }

    pub fn templates(&self) -> TemplateSet {
        self.templates
    }

    pub fn labels(&self) -> &LabelAlphabet {
        &self.labels
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn num_attributes(&self) -> usize {
        self.attr_names.len()
    }

    pub fn num_state_features(&self) -> usize {
        self.num_state
    }

    /// Total feature count `d`.
    pub fn dim(&self) -> usize {
        self.num_state + self.labels.len() * self.labels.len()
    }

    pub fn attribute_name(&self, attr: u32) -> &str {
        &self.attr_names[attr as usize]
    }

    pub fn attribute_id(&self, attr: &str) -> Option<u32> {
        self.attr_ids.get(attr).copied()
    }

    /// `(label, feature id)` pairs registered for an attribute, by label.
    #[inline]
    pub fn state_features(&self, attr: u32) -> &[(u32, u32)] {
        let a = attr as usize;
        &self.state_entries[self.state_offsets[a]..self.state_offsets[a + 1]]
    }

    #[inline]
    pub fn transition_id(&self, prev: usize, cur: usize) -> u32 {
        (self.num_state + prev * self.labels.len() + cur) as u32
    }

    /// Human-readable feature name, as used by the text export.
    pub fn feature_name(&self, id: u32) -> String {
        let id = id as usize;
        if id >= self.num_state {
            let k = id - self.num_state;
            let l = self.labels.len();
            return format!("trans:{}:{}", self.labels.name(k / l), self.labels.name(k % l));
        }
        let pos = self
            .state_entries
            .iter()
            .position(|&(_, f)| f as usize == id)
            .expect("id < d");
        let attr = self.state_offsets.partition_point(|&o| o <= pos) - 1;
        let label = self.state_entries[pos].0 as usize;
        format!("state:{}:{}", self.labels.name(label), self.attr_names[attr])
    }

    /// Feature names for every id, in id order.
    pub fn feature_names(&self) -> Vec<String> {
        let mut names = vec![String::new(); self.dim()];
        for a in 0..self.attr_names.len() {
            for &(label, fid) in self.state_features(a as u32) {
                names[fid as usize] = format!("state:{}:{}", self.labels.name(label as usize), self.attr_names[a]);
            }
        }
        for (id, name) in names.iter_mut().enumerate().skip(self.num_state) {
            *name = self.feature_name(id as u32);
        }
        names
    }

    /// Stored entries per attribute, in attribute-id order.
    pub fn attribute_entries(&self) -> impl Iterator<Item = (&str, &[(u32, u32)])> + '_ {
        (0..self.attr_names.len()).map(move |a| (self.attr_names[a].as_str(), self.state_features(a as u32)))
    }

    pub fn compile(&self, sentence: &Sentence) -> Instance {
        let attrs = (0..sentence.len())
            .map(|t| {
                extract_attributes(sentence, t, self.templates)
                    .iter()
                    .filter_map(|a| self.attribute_id(a))
                    .collect()
            })
            .collect();
        Instance { attrs }
    }

    /// `Phi(x, y)` for label ids `labels`.
    pub fn global_features(&self, inst: &Instance, labels: &[usize]) -> SparseVector {
        debug_assert_eq!(inst.len(), labels.len());
        let mut pairs = Vec::new();
        for (t, &y) in labels.iter().enumerate() {
            for &a in inst.attributes(t) {
                let entries = self.state_features(a);
                if let Ok(k) = entries.binary_search_by_key(&(y as u32), |&(l, _)| l) {
                    pairs.push((entries[k].1, 1.0));
                }
            }
            if t > 0 {
                pairs.push((self.transition_id(labels[t - 1], y), 1.0));
            }
        }
        SparseVector::from_pairs(pairs)
    }

    /// `Phi(x, y)` for a sentence and a tag sequence.
    pub fn global_feature_vector<S: AsRef<str>>(&self, sentence: &Sentence, labels: &[S]) -> Result<SparseVector> {
        if labels.len() != sentence.len() {
            return Err(Error::LengthMismatch {
                left: sentence.len(),
                right: labels.len(),
            });
        }
        let ids = self.labels.encode(labels)?;
        Ok(self.global_features(&self.compile(sentence), &ids))
    }
}
