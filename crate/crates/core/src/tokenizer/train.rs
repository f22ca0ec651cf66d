use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};

use super::{byte_token, pretokenize, split_controls, Sym, TokenId, Vocabulary, WORD_BOUNDARY_STR};
use crate::{Error, Result};

type Pair = (TokenId, TokenId);

/// Learns a byte-pair vocabulary of exactly `target_size` tokens.
///
/// Layout: control symbols, the 256 byte-fallback tokens, the word-boundary
/// marker, the sorted character alphabet of the corpus, then merged tokens
/// in merge order. Ties between equally frequent pairs go to the pair with
/// the smallest ids, so training is deterministic.
pub fn train_vocabulary<'a>(
    corpus: impl IntoIterator<Item = &'a str>,
    target_size: usize,
    control: &[&str],
) -> Result<Vocabulary> {
    let controls: Vec<String> = control.iter().map(|s| (*s).to_owned()).collect();
    let mut piece_counts: HashMap<Vec<String>, u64> = HashMap::new();
    let mut alphabet: BTreeSet<String> = BTreeSet::new();
    for text in corpus {
        for (chunk, is_control) in split_controls(text, &controls) {
            if is_control {
                continue;
            }
            for piece in pretokenize(chunk) {
                if piece.iter().any(|s| matches!(s, Sym::Byte(_))) {
                    continue;
                }
                let syms: Vec<String> = piece
                    .into_iter()
                    .map(|s| match s {
                        Sym::Text(t) => t,
                        Sym::Byte(_) => unreachable!(),
                    })
                    .collect();
                for s in &syms {
                    if s != WORD_BOUNDARY_STR {
                        alphabet.insert(s.clone());
                    }
                }
                *piece_counts.entry(syms).or_default() += 1;
            }
        }
    }

    let mut tokens: Vec<String> = controls.clone();
    tokens.extend((0..=255u8).map(byte_token));
    tokens.push(WORD_BOUNDARY_STR.to_owned());
    tokens.extend(alphabet.iter().cloned());
    let base = tokens.len();
    if target_size <= base {
        return Err(Error::Config(format!(
            "target vocabulary size {target_size} must exceed the {base} control, byte and alphabet tokens"
        )));
    }
    let mut ids: HashMap<String, TokenId> = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as TokenId))
        .collect();

    // Deterministic word order.
    let mut pieces: Vec<(Vec<String>, u64)> = piece_counts.into_iter().collect();
    pieces.sort();
    let mut words: Vec<Vec<TokenId>> = pieces
        .iter()
        .map(|(syms, _)| syms.iter().map(|s| ids[s]).collect())
        .collect();
    let counts: Vec<i64> = pieces.iter().map(|(_, c)| *c as i64).collect();

    let mut pair_counts: HashMap<Pair, i64> = HashMap::new();
    let mut pair_words: HashMap<Pair, HashSet<usize>> = HashMap::new();
    for (w, word) in words.iter().enumerate() {
        for pair in word.windows(2) {
            let pair = (pair[0], pair[1]);
            *pair_counts.entry(pair).or_default() += counts[w];
            pair_words.entry(pair).or_default().insert(w);
        }
    }
    let mut heap: BinaryHeap<(i64, Reverse<Pair>)> =
        pair_counts.iter().map(|(p, c)| (*c, Reverse(*p))).collect();

    let mut merges: Vec<(String, String)> = Vec::new();
    while tokens.len() < target_size {
        let Some((count, Reverse(pair))) = heap.pop() else {
            return Err(Error::VocabularyTooSmall {
                achievable: tokens.len(),
                requested: target_size,
            });
        };
        if pair_counts.get(&pair).copied() != Some(count) {
            continue;
        }
        if count <= 0 {
            return Err(Error::VocabularyTooSmall {
                achievable: tokens.len(),
                requested: target_size,
            });
        }
        let (left, right) = (tokens[pair.0 as usize].clone(), tokens[pair.1 as usize].clone());
        let merged = format!("{left}{right}");
        let new_id = match ids.get(&merged) {
            Some(id) => *id,
            None => {
                let id = tokens.len() as TokenId;
                tokens.push(merged.clone());
                ids.insert(merged, id);
                id
            }
        };
        merges.push((left, right));

        let affected: Vec<usize> = {
            let mut v: Vec<usize> = pair_words.remove(&pair).unwrap_or_default().into_iter().collect();
            v.sort_unstable();
            v
        };
        pair_counts.remove(&pair);
        let mut touched: HashSet<Pair> = HashSet::new();
        for w in affected {
            let word = &words[w];
            let c = counts[w];
            for p in word.windows(2) {
                let p = (p[0], p[1]);
                if p != pair {
                    *pair_counts.entry(p).or_default() -= c;
                    touched.insert(p);
                }
            }
            let mut merged_word = Vec::with_capacity(word.len());
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len() && (word[i], word[i + 1]) == pair {
                    merged_word.push(new_id);
                    i += 2;
                } else {
                    merged_word.push(word[i]);
                    i += 1;
                }
            }
            for p in merged_word.windows(2) {
                let p = (p[0], p[1]);
                *pair_counts.entry(p).or_default() += c;
                pair_words.entry(p).or_default().insert(w);
                touched.insert(p);
            }
            words[w] = merged_word;
        }
        let mut touched: Vec<Pair> = touched.into_iter().collect();
        touched.sort_unstable();
        for p in touched {
            match pair_counts.get(&p).copied() {
                Some(c) if c > 0 => heap.push((c, Reverse(p))),
                Some(_) => {
                    pair_counts.remove(&p);
                    pair_words.remove(&p);
                }
                None => {}
            }
        }
    }
    Vocabulary::from_parts(tokens, merges, controls)
}
