//! Per-participant stressor vocabulary and typeahead ranking.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::domain::Timestamp;

const SEED_FILE: &str = include_str!("../data/seed_stressors.txt");

/// Canonical form used for lexicon keys: NFC, lowercase, single spaces.
pub fn normalize_stressor(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    nfc.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

/// The bundled 80-entry seed vocabulary, normalized, in file order.
pub fn seed_stressors() -> Vec<String> {
    parse_seed_list(SEED_FILE)
}

/// One stressor per line; blank lines and `#` comments ignored; duplicates
/// under normalization collapse to the first occurrence.
pub fn parse_seed_list(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let norm = normalize_stressor(line);
        if !out.contains(&norm) {
            out.push(norm);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub text: String,
    pub first_seen: Timestamp,
    pub use_count: u32,
    pub seeded: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StressorLexicon {
    entries: BTreeMap<String, LexiconEntry>,
}

impl StressorLexicon {
    pub fn with_seed(seed: &[String], at: Timestamp) -> Self {
        let entries = seed
            .iter()
            .map(|s| {
                let text = normalize_stressor(s);
                (text.clone(), LexiconEntry { text, first_seen: at, use_count: 0, seeded: true })
            })
            .collect();
        Self { entries }
    }

    pub fn seeded(at: Timestamp) -> Self {
        Self::with_seed(&seed_stressors(), at)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, text: &str) -> Option<&LexiconEntry> {
        self.entries.get(&normalize_stressor(text))
    }

    pub fn entries(&self) -> impl Iterator<Item = &LexiconEntry> {
        self.entries.values()
    }

    /// Records one use of `text`; returns true if the entry is new.
    pub fn record_use(&mut self, text: &str, at: Timestamp) -> bool {
        let key = normalize_stressor(text);
        if key.is_empty() {
            return false;
        }
        match self.entries.get_mut(&key) {
            Some(e) => {
                e.use_count += 1;
                false
            }
            None => {
                self.entries.insert(key.clone(), LexiconEntry { text: key, first_seen: at, use_count: 1, seeded: false });
                true
            }
        }
    }

    /// Undoes one use (an annotation moved to a different stressor). Entries
    /// are never removed.
    pub fn release_use(&mut self, text: &str) {
        if let Some(e) = self.entries.get_mut(&normalize_stressor(text)) {
            e.use_count = e.use_count.saturating_sub(1);
        }
    }

    /// Case-insensitive matches: prefix matches first, then other substring
    /// matches; within each group by use count (desc), then text.
    pub fn autocomplete(&self, query: &str, limit: usize) -> Vec<String> {
        let q = normalize_stressor(query);
        if q.is_empty() || limit == 0 {
            return Vec::new();
        }
        let mut hits: Vec<(bool, u32, &str)> = self
            .entries
            .values()
            .filter_map(|e| {
                if e.text.starts_with(&q) {
                    Some((false, e.use_count, e.text.as_str()))
                } else if e.text.contains(&q) {
                    Some((true, e.use_count, e.text.as_str()))
                } else {
                    None
                }
            })
            .collect();
        hits.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)).then(a.2.cmp(b.2)));
        hits.into_iter().take(limit).map(|h| h.2.to_string()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_has_eighty_unique_entries() {
        let seed = seed_stressors();
        assert_eq!(seed.len(), 80);
        assert_eq!(seed[0], "traffic/transportation");
    }

    #[test]
    fn normalization_merges_variants() {
        assert_eq!(normalize_stressor("  Anxiety "), "anxiety");
        assert_eq!(normalize_stressor("Too   much\twork"), "too much work");
        // precomposed vs combining accent
        assert_eq!(normalize_stressor("caf\u{e9}"), normalize_stressor("cafe\u{301}"));
    }

    #[test]
    fn prefix_before_substring() {
        let lex = StressorLexicon::seeded(0);
        let hits = lex.autocomplete("tra", 10);
        assert_eq!(hits[0], "traffic/transportation");
        assert!(hits.iter().all(|h| h.contains("tra")));
        assert!(lex.autocomplete("zzzqq", 5).is_empty());
    }

    #[test]
    fn use_count_breaks_ties() {
        let mut lex = StressorLexicon::with_seed(&["work a".into(), "work b".into()], 0);
        lex.record_use("work b", 1);
        assert_eq!(lex.autocomplete("work", 2), vec!["work b", "work a"]);
        lex.release_use("work b");
        assert_eq!(lex.autocomplete("work", 2), vec!["work a", "work b"]);
    }

    #[test]
    fn novel_entries_grow_lexicon() {
        let mut lex = StressorLexicon::seeded(0);
        assert!(lex.record_use("Grading Exams", 5));
        assert!(!lex.record_use("grading  exams", 6));
        assert_eq!(lex.len(), 81);
        assert!(lex.autocomplete("grad", 10).contains(&"grading exams".to_string()));
        assert_eq!(lex.get("GRADING EXAMS").unwrap().use_count, 2);
    }
}
