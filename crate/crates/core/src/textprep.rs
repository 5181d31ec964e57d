//! Text normalization and the tri-letter word-n-gram encoding.
//!
//! Every text goes through the same two steps before it reaches the network:
//! lowercase/strip to `[a-z0-9]` tokens, then encode each token as a bag of
//! boundary-marked letter trigrams. The trigram space is the full enumerable
//! base-37 code — no dictionary, no hashing collisions — which is what makes
//! embedding total over tokens never seen in training.

use crate::error::{CmaError, Result};

/// Number of distinct letter trigrams: 37^3 over the alphabet `{#, a-z, 0-9}`.
pub const TRIGRAM_DIM: usize = 37 * 37 * 37;

/// Hard cap on tokens per text; longer texts are truncated.
pub const MAX_TOKENS: usize = 64;

/// Lowercase, replace everything outside `[a-z0-9]` with spaces, collapse
/// whitespace runs, and trim. Idempotent; may return an empty string.
pub fn normalize(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for ch in raw.chars().flat_map(|c| c.to_lowercase()) {
        if ch.is_ascii_lowercase() || ch.is_ascii_digit() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(ch);
        } else {
            pending_space = true;
        }
    }
    out
}

/// Normalize and split into at most [`MAX_TOKENS`] tokens.
pub fn tokens(raw: &str) -> Vec<String> {
    normalize(raw)
        .split(' ')
        .filter(|t| !t.is_empty())
        .take(MAX_TOKENS)
        .map(str::to_owned)
        .collect()
}

fn char_code(c: char) -> Result<u32> {
    match c {
        '#' => Ok(0),
        'a'..='z' => Ok(c as u32 - 'a' as u32 + 1),
        '0'..='9' => Ok(c as u32 - '0' as u32 + 27),
        other => Err(CmaError::Encoding(format!(
            "character {other:?} outside tri-letter alphabet; normalize first"
        ))),
    }
}

/// Sparse bag of letter trigrams for one word.
///
/// Entries are `(trigram index, count)` sorted by index; counts are at least 1
/// and the total count equals the word length (a word of length k wrapped in
/// `#` markers has exactly k consecutive triples).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriLetterVector {
    entries: Vec<(u32, u32)>,
}

impl TriLetterVector {
    pub fn entries(&self) -> &[(u32, u32)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_count(&self) -> u32 {
        self.entries.iter().map(|&(_, c)| c).sum()
    }

    pub fn count(&self, index: u32) -> u32 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map(|pos| self.entries[pos].1)
            .unwrap_or(0)
    }
}

/// Encode one normalized word as its tri-letter bag.
///
/// The word is wrapped with `#` on both sides and all consecutive character
/// triples are emitted with multiplicity. Index = c0·37² + c1·37 + c2 with
/// `#`→0, `a`..`z`→1..26, `0`..`9`→27..36.
pub fn tri_letters(word: &str) -> Result<TriLetterVector> {
    if word.is_empty() {
        return Err(CmaError::Encoding("empty word".to_owned()));
    }
    let mut codes = Vec::with_capacity(word.len() + 2);
    codes.push(0u32);
    for c in word.chars() {
        codes.push(char_code(c)?);
    }
    codes.push(0u32);

    let mut entries: Vec<(u32, u32)> = Vec::with_capacity(word.len());
    for triple in codes.windows(3) {
        let index = triple[0] * 37 * 37 + triple[1] * 37 + triple[2];
        match entries.binary_search_by_key(&index, |&(i, _)| i) {
            Ok(pos) => entries[pos].1 += 1,
            Err(pos) => entries.insert(pos, (index, 1)),
        }
    }
    Ok(TriLetterVector { entries })
}

/// One convolution input slot: the n tri-letter bags of a word window laid
/// out side by side, entries as `(offset index, count)` with the j-th window
/// position shifted by `j × TRIGRAM_DIM`. Sorted by index.
pub type WindowSlot = Vec<(u32, u32)>;

/// Per-position convolution inputs for a token sequence.
///
/// `slots.len()` always equals the token count; positions whose window runs
/// past the ends of the sequence simply omit those thirds (boundary padding
/// is the empty vector).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowedSequence {
    pub slots: Vec<WindowSlot>,
}

/// Build the windowed sequence for `tokens` with an odd window size `n`.
pub fn window(tokens: &[String], n: usize) -> Result<WindowedSequence> {
    if n == 0 || n % 2 == 0 {
        return Err(CmaError::Config(format!("window size must be odd, got {n}")));
    }
    let half = (n - 1) / 2;
    let tris: Vec<TriLetterVector> = tokens
        .iter()
        .map(|t| tri_letters(t))
        .collect::<Result<_>>()?;

    let mut slots = Vec::with_capacity(tokens.len());
    for t in 0..tokens.len() {
        let mut slot: WindowSlot = Vec::new();
        for j in 0..n {
            let pos = t as isize - half as isize + j as isize;
            if pos < 0 || pos as usize >= tokens.len() {
                continue;
            }
            let base = (j * TRIGRAM_DIM) as u32;
            for &(idx, count) in tris[pos as usize].entries() {
                slot.push((base + idx, count));
            }
        }
        slots.push(slot);
    }
    Ok(WindowedSequence { slots })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_strips_punctuation_and_case() {
        assert_eq!(normalize("Card-Printing,  Adelaide!!"), "card printing adelaide");
        assert_eq!(normalize("ORAL   B brush"), "oral b brush");
        assert_eq!(normalize(""), "");
    }

    #[test]
    fn normalize_keeps_digits_and_drops_unicode() {
        assert_eq!(normalize("Oral-B 3000"), "oral b 3000");
        assert_eq!(normalize("café"), "caf");
        assert_eq!(normalize("---"), "");
    }

    #[test]
    fn tri_letters_cat() {
        let v = tri_letters("cat").unwrap();
        // #ca, cat, at#
        assert_eq!(v.entries(), &[(112, 1), (2109, 1), (4164, 1)]);
        assert_eq!(v.total_count(), 3);
    }

    #[test]
    fn tri_letters_single_char() {
        let v = tri_letters("a").unwrap();
        // "#a#" = 0·37² + 1·37 + 0
        assert_eq!(v.entries(), &[(37, 1)]);
    }

    #[test]
    fn tri_letters_counts_multiplicity() {
        // "#aaaa#" yields #aa, aaa, aaa, aa#
        let v = tri_letters("aaaa").unwrap();
        assert_eq!(v.total_count(), 4);
        let aaa = 1 * 37 * 37 + 1 * 37 + 1;
        assert_eq!(v.count(aaa), 2);
    }

    #[test]
    fn tri_letters_rejects_unnormalized_input() {
        assert!(tri_letters("Cat").is_err());
        assert!(tri_letters("c t").is_err());
        assert!(tri_letters("").is_err());
    }

    #[test]
    fn window_single_token() {
        let toks = vec!["cat".to_owned()];
        let w = window(&toks, 3).unwrap();
        assert_eq!(w.slots.len(), 1);
        let expected: Vec<(u32, u32)> = tri_letters("cat")
            .unwrap()
            .entries()
            .iter()
            .map(|&(i, c)| (i + TRIGRAM_DIM as u32, c))
            .collect();
        assert_eq!(w.slots[0], expected);
    }

    #[test]
    fn window_n1_is_per_word() {
        let toks = vec!["a".to_owned(), "b".to_owned()];
        let w = window(&toks, 1).unwrap();
        assert_eq!(w.slots.len(), 2);
        assert_eq!(w.slots[0], tri_letters("a").unwrap().entries().to_vec());
        assert_eq!(w.slots[1], tri_letters("b").unwrap().entries().to_vec());
    }

    #[test]
    fn window_concatenates_neighbors() {
        let toks: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let w = window(&toks, 3).unwrap();
        let mut expected: Vec<(u32, u32)> = Vec::new();
        for (j, word) in ["x", "y", "z"].iter().enumerate() {
            for &(i, c) in tri_letters(word).unwrap().entries() {
                expected.push((i + (j * TRIGRAM_DIM) as u32, c));
            }
        }
        assert_eq!(w.slots[1], expected);
    }

    #[test]
    fn window_empty_tokens_is_valid() {
        let w = window(&[], 3).unwrap();
        assert!(w.slots.is_empty());
    }

    #[test]
    fn window_rejects_even_n() {
        assert!(window(&["a".to_owned()], 2).is_err());
    }

    #[test]
    fn tokens_caps_length() {
        let long = vec!["tok"; 200].join(" ");
        assert_eq!(tokens(&long).len(), MAX_TOKENS);
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in ".{0,80}") {
            let once = normalize(&s);
            prop_assert_eq!(normalize(&once), once);
        }

        #[test]
        fn tri_letter_total_count_equals_word_length(w in "[a-z0-9]{1,24}") {
            let v = tri_letters(&w).unwrap();
            prop_assert_eq!(v.total_count() as usize, w.len());
            prop_assert!(!v.is_empty());
        }

        #[test]
        fn window_len_matches_token_count(
            toks in proptest::collection::vec("[a-z0-9]{1,8}", 0..12),
            half in 0usize..3,
        ) {
            let n = 2 * half + 1;
            let toks: Vec<String> = toks;
            let w = window(&toks, n).unwrap();
            prop_assert_eq!(w.slots.len(), toks.len());
        }

        #[test]
        fn every_normalized_token_encodes(s in ".{1,40}") {
            for t in tokens(&s) {
                let v = tri_letters(&t).unwrap();
                prop_assert!(!v.is_empty());
            }
        }
    }
}
