use std::collections::HashSet;
use std::sync::Mutex;

use super::format::FormattedPair;

/// Concurrent insert-if-absent set of dedup keys.
#[derive(Debug, Default)]
pub struct SeenKeys {
    keys: Mutex<HashSet<String>>,
}

impl SeenKeys {
    /// Returns true if `key` was not seen before (and records it).
    pub fn insert(&self, key: &str) -> bool {
        let mut keys = self.keys.lock().expect("dedup set poisoned");
        if keys.contains(key) {
            false
        } else {
            keys.insert(key.to_owned());
            true
        }
    }
}

/// Stable first-occurrence-wins deduplication. Returns the kept pairs and
/// the number dropped.
pub fn deduplicate(pairs: impl IntoIterator<Item = FormattedPair>) -> (Vec<FormattedPair>, usize) {
    let seen = SeenKeys::default();
    let mut dropped = 0;
    let kept = pairs
        .into_iter()
        .filter(|p| {
            let fresh = seen.insert(&p.dedup_key);
            dropped += usize::from(!fresh);
            fresh
        })
        .collect();
    (kept, dropped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::format::Style;

    fn pair(doc: &str, code: &str) -> FormattedPair {
        FormattedPair::new(doc.into(), "def f():".into(), code.into(), Style::Pangu, String::new())
    }

    #[test]
    fn identical_pair_emitted_once() {
        let (kept, dropped) = deduplicate(vec![pair("a", "x"), pair("a", "x")]);
        assert_eq!((kept.len(), dropped), (1, 1));
    }

    #[test]
    fn docstring_is_part_of_the_key() {
        let (kept, _) = deduplicate(vec![pair("a", "x"), pair("b", "x")]);
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn ten_unique_five_duplicates() {
        let mut input: Vec<_> = (0..10).map(|i| pair(&format!("d{i}"), "x")).collect();
        input.extend((0..5).map(|i| pair(&format!("d{i}"), "x")));
        let (kept, dropped) = deduplicate(input);
        assert_eq!((kept.len(), dropped), (10, 5));
        assert_eq!(kept[3].docstring, "d3");
    }
}
