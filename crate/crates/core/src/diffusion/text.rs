//! The grammar-vocabulary text encoder standing in for a pretrained text
//! model: a deterministic tokenizer over the fixed prompt vocabulary and a
//! trainable 64-dim embedding table that is frozen after a warm-up epoch.

use crate::nn::{Graph, Init, NodeId, ParamStore};
use crate::prompt::tokenize;
use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::ops::Range;

pub const TOKEN_DIM: usize = 64;

/// Fixed vocabulary covering everything the prompt grammar can emit.
/// Index 0 is the unknown token.
pub fn vocab() -> &'static [&'static str] {
    &[
        "<unk>", "a", "and", "car", "cars", "crossing", "day", "driving", "eight", "five",
        "four", "image", "lane", "lanes", "line", "lines", "night", "no", "objects", "on", "one",
        "pedestrian", "pedestrians", "rainy", "road", "seven", "six", "straight", "street-view",
        "sunny", "the", "three", "traffic", "truck", "trucks", "two", "with", "zero", "0", "1",
        "2", "3", "4", "5", "6", "7", "8", "9",
    ]
}

/// SHA-256 of the vocabulary; checkpoints embed it so stale checkpoints are
/// rejected when the grammar changes.
pub fn vocab_sha256() -> String {
    let mut hasher = Sha256::new();
    for w in vocab() {
        hasher.update(w.as_bytes());
        hasher.update([0]);
    }
    format!("{:x}", hasher.finalize())
}

fn token_id(tok: &str) -> usize {
    vocab().iter().position(|&w| w == tok).unwrap_or(0)
}

/// Plural-stripping stem used for phrase lookups ("lanes" matches "lane").
fn stem(tok: &str) -> &str {
    if tok.len() >= 4 && tok.ends_with('s') && !tok.ends_with("ss") {
        &tok[..tok.len() - 1]
    } else {
        tok
    }
}

/// A tokenized text with its embedding vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    pub tokens: Vec<usize>,
    pub embeddings: Array2<f64>,
}

/// Embedding-table text encoder. The table lives in the owning model's
/// parameter store; after the warm-up epoch the trainer masks its gradient,
/// freezing the embeddings.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub table: usize,
}

impl TextEncoder {
    pub fn new(ps: &mut ParamStore, name: &str, rng: &mut ChaCha8Rng) -> TextEncoder {
        let table = ps.add(
            &format!("{name}.table"),
            &[vocab().len(), TOKEN_DIM],
            Init::Normal { fan_in: 4 },
            rng,
        );
        TextEncoder { table }
    }

    pub fn token_ids(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| token_id(t)).collect()
    }

    /// Graph-side encoding: (S, TOKEN_DIM) differentiable into the table.
    pub fn encode_node(&self, g: &mut Graph, pids: &[NodeId], text: &str) -> NodeId {
        let ids = self.token_ids(text);
        assert!(!ids.is_empty(), "cannot encode empty text");
        g.gather_rows(pids[self.table], ids)
    }

    /// Frozen-mode encoding straight from the store; deterministic.
    pub fn encode(&self, store: &ParamStore, text: &str) -> TextEmbedding {
        let ids = self.token_ids(text);
        let table = store.value(self.table);
        let table2 = table
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("embedding table is 2-d");
        let mut emb = Array2::zeros((ids.len(), TOKEN_DIM));
        for (i, &id) in ids.iter().enumerate() {
            emb.row_mut(i).assign(&table2.row(id));
        }
        TextEmbedding {
            tokens: ids,
            embeddings: emb,
        }
    }
}

/// Finds the first contiguous run of tokens in `text` whose stems belong to
/// the stem set of `phrase`; used to select the "lane lines" span. The
/// canonical topology text says "3 lanes", so the lookup is by stem, not by
/// exact sequence.
pub fn find_phrase_span(text: &str, phrase: &str) -> Option<Range<usize>> {
    let text_tokens = tokenize(text);
    let stems: Vec<String> = tokenize(phrase).iter().map(|t| stem(t).to_string()).collect();
    if stems.is_empty() {
        return None;
    }
    let mut start = None;
    for (i, tok) in text_tokens.iter().enumerate() {
        let hit = stems.iter().any(|s| s == stem(tok));
        match (hit, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => return Some(s..i),
            _ => {}
        }
    }
    start.map(|s| s..text_tokens.len())
}
