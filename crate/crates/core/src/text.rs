//! Tokenization shared by every lexical feature, the perturbation fallbacks
//! and the bigram miner.
//!
//! Words are unicode word-boundary segments, lowercased. Sentences end at
//! `.`, `!` or `?` followed by whitespace (or end of text), unless the token
//! carrying the period is a known abbreviation or a single-letter initial.

use unicode_normalization::UnicodeNormalization;
use unicode_segmentation::UnicodeSegmentation;

const ABBREVIATIONS: &[&str] = &[
    "mr.", "mrs.", "ms.", "dr.", "prof.", "sr.", "jr.", "st.", "vs.", "etc.", "e.g.", "i.e.", "inc.", "ltd.", "co.",
    "corp.", "no.", "jan.", "feb.", "mar.", "apr.", "jun.", "jul.", "aug.", "sep.", "sept.", "oct.", "nov.", "dec.",
    "u.s.", "u.k.", "a.m.", "p.m.", "approx.", "fig.", "gen.", "gov.", "sen.", "rep.", "mt.",
];

/// Deterministic tokenization rules.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizationPolicy {
    pub lowercase: bool,
    pub abbreviations: Vec<String>,
}

impl Default for TokenizationPolicy {
    fn default() -> Self {
        Self { lowercase: true, abbreviations: ABBREVIATIONS.iter().map(|s| s.to_string()).collect() }
    }
}

impl TokenizationPolicy {
    pub fn words(&self, text: &str) -> Vec<String> {
        text.unicode_words().map(|w| if self.lowercase { w.to_lowercase() } else { w.to_string() }).collect()
    }

    /// Splits `text` into trimmed sentences. Fragments without any word
    /// characters are folded into the preceding sentence.
    pub fn sentences<'a>(&self, text: &'a str) -> Vec<&'a str> {
        let mut spans: Vec<(usize, usize)> = Vec::new();
        let mut start = 0usize;
        let mut iter = text.char_indices().peekable();

        while let Some((idx, ch)) = iter.next() {
            if !matches!(ch, '.' | '!' | '?') {
                continue;
            }
            // absorb runs of terminal punctuation and closing quotes/brackets
            let mut end = idx + ch.len_utf8();
            while let Some(&(j, next)) = iter.peek() {
                if matches!(next, '.' | '!' | '?' | '"' | '\'' | ')' | ']' | '”' | '’' | '»') {
                    end = j + next.len_utf8();
                    iter.next();
                } else {
                    break;
                }
            }
            let at_boundary = match iter.peek() {
                None => true,
                Some(&(_, next)) => next.is_whitespace(),
            };
            if !at_boundary || (ch == '.' && self.is_abbreviation(&text[start..end])) {
                continue;
            }
            spans.push((start, end));
            start = end;
        }
        if start < text.len() {
            spans.push((start, text.len()));
        }

        let mut out: Vec<(usize, usize)> = Vec::new();
        for (s, e) in spans {
            let piece = text[s..e].trim();
            if piece.is_empty() {
                continue;
            }
            let has_word = piece.unicode_words().next().is_some();
            match out.last_mut() {
                Some(last) if !has_word => last.1 = e,
                _ => out.push((s, e)),
            }
        }
        out.into_iter().map(|(s, e)| text[s..e].trim()).filter(|s| !s.is_empty()).collect()
    }

    fn is_abbreviation(&self, sentence_so_far: &str) -> bool {
        let last = match sentence_so_far.split_whitespace().last() {
            Some(tok) => tok,
            None => return false,
        };
        let last = last.trim_start_matches(['(', '"', '\'', '“', '‘']);
        let lower = last.to_lowercase();
        if self.abbreviations.contains(&lower) {
            return true;
        }
        // single-letter initial such as "J."
        let mut chars = last.chars();
        matches!((chars.next(), chars.next(), chars.next()), (Some(c), Some('.'), None) if c.is_uppercase())
    }

    /// Word bigrams taken within sentences; no bigram spans a sentence
    /// boundary.
    pub fn sentence_bigrams(&self, text: &str) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for sentence in self.sentences(text) {
            let words = self.words(sentence);
            out.extend(words.windows(2).map(|w| (w[0].clone(), w[1].clone())));
        }
        out
    }

    /// Lowercased, punctuation-free form: word tokens joined by one space.
    pub fn normalized(&self, text: &str) -> String {
        self.words(text).join(" ")
    }
}

/// Unicode NFC normalization applied to all ingested text.
pub fn nfc(text: &str) -> String {
    text.nfc().collect()
}

pub fn words(text: &str) -> Vec<String> {
    TokenizationPolicy::default().words(text)
}

pub fn sentences(text: &str) -> Vec<&str> {
    TokenizationPolicy::default().sentences(text)
}

pub fn sentence_bigrams(text: &str) -> Vec<(String, String)> {
    TokenizationPolicy::default().sentence_bigrams(text)
}

pub fn normalized(text: &str) -> String {
    TokenizationPolicy::default().normalized(text)
}

/// True when `needle` occurs in `haystack` on whole-token boundaries; both
/// arguments are expected in [`normalized`] form.
pub(crate) fn contains_tokens(haystack: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return true;
    }
    let hay = format!(" {haystack} ");
    hay.contains(&format!(" {needle} "))
}
