use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::NewsArticle;

pub const PAD_INDEX: u32 = 0;
pub const OOV_INDEX: u32 = 1;

/// Token to index map. Index 0 is padding, 1 is out-of-vocabulary; the rest
/// are ordered by descending frequency, ties broken lexicographically.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn build(news: &[NewsArticle], min_count: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for article in news {
            for token in &article.tokens {
                *counts.entry(token.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count)
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut tokens = vec!["<pad>".to_string(), "<oov>".to_string()];
        tokens.extend(ranked.into_iter().map(|(t, _)| t.to_string()));
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, index }
    }

    /// Restore the lookup table after deserialization.
    pub fn reindex(self) -> Self {
        Self::from_tokens(self.tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(OOV_INDEX)
    }

    pub fn token(&self, index: u32) -> Option<&str> {
        self.tokens.get(index as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

pub fn build_vocab(news: &[NewsArticle], min_count: usize) -> Vocab {
    Vocab::build(news, min_count)
}

/// Fixed-length title with a parallel padding mask.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedTitle {
    pub indices: Vec<u32>,
    pub mask: Vec<bool>,
}

impl EncodedTitle {
    /// A title with no real tokens; its pooled embedding is the zero vector.
    pub fn is_degenerate(&self) -> bool {
        !self.mask.iter().any(|&m| m)
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Keep the first `max_len` tokens and pad the tail with index 0.
pub fn encode_title<S: AsRef<str>>(tokens: &[S], vocab: &Vocab, max_len: usize) -> EncodedTitle {
    let mut indices = vec![PAD_INDEX; max_len];
    let mut mask = vec![false; max_len];
    for (slot, token) in tokens.iter().take(max_len).enumerate() {
        indices[slot] = vocab.get(token.as_ref());
        mask[slot] = true;
    }
    EncodedTitle { indices, mask }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::NewsId;

    fn article(tokens: &[&str]) -> NewsArticle {
        NewsArticle {
            id: NewsId(0),
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            topic: 0,
        }
    }

    #[test]
    fn frequency_then_lexicographic_order() {
        let vocab = Vocab::build(&[article(&["a", "b", "a"])], 1);
        assert_eq!(vocab.get("a"), 2);
        assert_eq!(vocab.get("b"), 3);
        assert_eq!(vocab.get("zzz"), OOV_INDEX);

        let vocab = Vocab::build(&[article(&["d", "c", "e", "c", "e"])], 1);
        assert_eq!(vocab.tokens()[2..], ["c", "e", "d"]);
    }

    #[test]
    fn min_count_above_all_frequencies_leaves_reserved_only() {
        let vocab = Vocab::build(&[article(&["a", "b", "a"])], 10);
        assert_eq!(vocab.len(), 2);
        assert_eq!(vocab.get("a"), OOV_INDEX);
    }

    #[test]
    fn rebuilding_gives_identical_map() {
        let news = [article(&["x", "y", "y", "z"]), article(&["z", "w"])];
        assert_eq!(Vocab::build(&news, 1), Vocab::build(&news, 1));
    }

    #[test]
    fn short_titles_are_padded() {
        let vocab = Vocab::build(&[article(&["a", "b", "c"])], 1);
        let e = encode_title(&["a", "b", "c"], &vocab, 5);
        assert_eq!(e.indices, vec![2, 3, 4, 0, 0]);
        assert_eq!(e.mask, vec![true, true, true, false, false]);
        assert!(!e.is_degenerate());
    }

    #[test]
    fn long_titles_keep_the_front() {
        let toks = ["a", "b", "c", "d", "e", "f", "g"];
        let vocab = Vocab::build(&[article(&toks)], 1);
        let e = encode_title(&toks, &vocab, 5);
        let expected: Vec<u32> = toks[..5].iter().map(|t| vocab.get(t)).collect();
        assert_eq!(e.indices, expected);
        assert!(e.mask.iter().all(|&m| m));
    }

    #[test]
    fn empty_title_is_degenerate() {
        let vocab = Vocab::build(&[article(&["a"])], 1);
        let e = encode_title::<&str>(&[], &vocab, 4);
        assert_eq!(e.indices, vec![0; 4]);
        assert!(e.is_degenerate());
    }

    #[test]
    fn serde_round_trip_restores_lookup() {
        let vocab = Vocab::build(&[article(&["a", "b", "a"])], 1);
        let json = serde_json::to_string(&vocab).unwrap();
        let back: Vocab = serde_json::from_str::<Vocab>(&json).unwrap().reindex();
        assert_eq!(back, vocab);
        assert_eq!(back.get("b"), 3);
    }
}
