//! CoNLL-2000 chunking data: one token per line (`word pos chunk`), blank
//! lines between sentences.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A chunk tag in IOB2 notation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChunkTag<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

impl<'a> ChunkTag<'a> {
    /// Parses `O`, `B-<TYPE>` or `I-<TYPE>`; anything else is `None`.
    pub fn parse(tag: &'a str) -> Option<Self> {
        if tag == "O" {
            return Some(ChunkTag::Outside);
        }
        let (prefix, ty) = tag.split_once('-')?;
        if ty.is_empty() {
            return None;
        }
        match prefix {
            "B" => Some(ChunkTag::Begin(ty)),
            "I" => Some(ChunkTag::Inside(ty)),
            _ => None,
        }
    }

    pub fn chunk_type(&self) -> Option<&'a str> {
        match *self {
            ChunkTag::Outside => None,
            ChunkTag::Begin(t) | ChunkTag::Inside(t) => Some(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token {
    word: String,
    pos: String,
    chunk: String,
}

impl Token {
    pub fn new(word: impl Into<String>, pos: impl Into<String>, chunk: impl Into<String>) -> Result<Self> {
        let token = Token {
            word: word.into(),
            pos: pos.into(),
            chunk: chunk.into(),
        };
        token.validate().map_err(|message| Error::Parse { line: 0, message })?;
        Ok(token)
    }

    fn validate(&self) -> Result<(), String> {
        if self.word.is_empty() || self.pos.is_empty() || self.chunk.is_empty() {
            return Err("empty column".to_string());
        }
        if ChunkTag::parse(&self.chunk).is_none() {
            return Err(format!("malformed chunk tag `{}`", self.chunk));
        }
        Ok(())
    }

    pub fn word(&self) -> &str {
        &self.word
    }

    pub fn pos(&self) -> &str {
        &self.pos
    }

    pub fn chunk(&self) -> &str {
        &self.chunk
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sentence {
    tokens: Vec<Token>,
}

impl Sentence {
    pub fn new(tokens: Vec<Token>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Empty);
        }
        Ok(Sentence { tokens })
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn chunks(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.chunk.as_str()).collect()
    }
}

/// Ordered set of chunk tags. Ids follow lexicographic order of the tags.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelAlphabet {
    labels: Vec<String>,
    ids: HashMap<String, usize>,
}

impl LabelAlphabet {
    pub fn new<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = labels.into_iter().map(Into::into).collect();
        let labels: Vec<String> = set.into_iter().collect();
        let ids = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        LabelAlphabet { labels, ids }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.ids.get(label).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn names(&self) -> &[String] {
        &self.labels
    }

    /// Maps a tag sequence to label ids, failing on the first unknown tag.
    pub fn encode<S: AsRef<str>>(&self, tags: &[S]) -> Result<Vec<usize>> {
        tags.iter()
            .map(|t| {
                let t = t.as_ref();
                self.id(t).ok_or_else(|| Error::UnknownLabel(t.to_string()))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusStats {
    pub sentences: usize,
    pub tokens: usize,
    pub labels: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    sentences: Vec<Sentence>,
    labels: LabelAlphabet,
}

impl Dataset {
    /// Builds a dataset; the label alphabet is exactly the set of chunk tags
    /// present in `sentences`.
    pub fn new(sentences: Vec<Sentence>) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::Empty);
        }
        let labels = LabelAlphabet::new(sentences.iter().flat_map(|s| s.tokens.iter().map(|t| t.chunk.as_str())));
        Ok(Dataset { sentences, labels })
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn labels(&self) -> &LabelAlphabet {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn stats(&self) -> CorpusStats {
        CorpusStats {
            sentences: self.sentences.len(),
            tokens: self.sentences.iter().map(Sentence::len).sum(),
            labels: self.labels.len(),
        }
    }

    /// Deterministic permutation of the sentences for a given seed.
    pub fn shuffle(&self, seed: u64) -> Dataset {
        let mut sentences = self.sentences.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sentences.shuffle(&mut rng);
        Dataset {
            sentences,
            labels: self.labels.clone(),
        }
    }

    /// First `n` sentences (all of them if `n` exceeds the size).
    pub fn head(&self, n: usize) -> Result<Dataset> {
        Dataset::new(self.sentences.iter().take(n).cloned().collect())
    }

    pub fn to_conll(&self) -> String {
        let mut out = String::new();
        for sentence in &self.sentences {
            for t in &sentence.tokens {
                let _ = writeln!(out, "{} {} {}", t.word, t.pos, t.chunk);
            }
            out.push('\n');
        }
        out
    }
}

/// A sentence read from a 4-column file: `word pos gold predicted`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedSentence {
    pub gold: Sentence,
    pub predicted: Vec<String>,
}

type Block<'a> = Vec<(usize, Vec<&'a str>)>;

fn split_blocks(text: &str, columns: usize) -> Result<Vec<Block<'_>>> {
    let mut blocks = Vec::new();
    let mut current: Block<'_> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_ascii_whitespace().collect();
        if fields.is_empty() {
            if !current.is_empty() {
                blocks.push(std::mem::take(&mut current));
            }
            continue;
        }
        if fields.len() != columns {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected {columns} columns, found {}", fields.len()),
            });
        }
        current.push((i + 1, fields));
    }
    if !current.is_empty() {
        blocks.push(current);
    }
    if blocks.is_empty() {
        return Err(Error::Empty);
    }
    Ok(blocks)
}

fn block_to_sentence(block: &Block<'_>, strict: bool) -> Result<Sentence> {
    let mut tokens = Vec::with_capacity(block.len());
    let mut prev = ChunkTag::Outside;
    for (line, fields) in block {
        let token = Token {
            word: fields[0].to_string(),
            pos: fields[1].to_string(),
            chunk: fields[2].to_string(),
        };
        token
            .validate()
            .map_err(|message| Error::Parse { line: *line, message })?;
        let tag = ChunkTag::parse(fields[2]).expect("validated");
        if strict {
            if let ChunkTag::Inside(ty) = tag {
                if prev.chunk_type() != Some(ty) {
                    return Err(Error::Parse {
                        line: *line,
                        message: format!("IOB2 violation: `{}` does not continue a {ty} chunk", fields[2]),
                    });
                }
            }
        }
        prev = tag;
        tokens.push(token);
    }
    Sentence::new(tokens)
}

/// Parses 3-column CoNLL text. In strict mode an `I-X` that does not follow
/// `B-X`/`I-X` is rejected.
pub fn parse_conll(text: &str, strict: bool) -> Result<Dataset> {
    let blocks = split_blocks(text, 3)?;
    let sentences = blocks
        .iter()
        .map(|b| block_to_sentence(b, strict))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(sentences)
}

/// Parses 4-column `word pos gold predicted` text, as written by the tagger.
pub fn parse_tagged(text: &str) -> Result<Vec<TaggedSentence>> {
    split_blocks(text, 4)?
        .into_iter()
        .map(|block| {
            let gold_block: Block<'_> = block.iter().map(|(line, f)| (*line, f[..3].to_vec())).collect();
            let gold = block_to_sentence(&gold_block, false)?;
            let predicted = block.iter().map(|(_, f)| f[3].to_string()).collect();
            Ok(TaggedSentence { gold, predicted })
        })
        .collect()
}

/// Reads a whole file, transparently decompressing `*.gz`.
pub fn read_text(path: &Path) -> Result<String> {
    let file = File::open(path)?;
    let mut text = String::new();
    if path.extension().is_some_and(|e| e == "gz") {
        MultiGzDecoder::new(BufReader::new(file)).read_to_string(&mut text)?;
    } else {
        BufReader::new(file).read_to_string(&mut text)?;
    }
    Ok(text)
}

pub fn read_conll(path: &Path, strict: bool) -> Result<Dataset> {
    parse_conll(&read_text(path)?, strict)
}
