use std::collections::HashMap;

use super::TermKind;

#[derive(Debug, Clone, Default)]
struct Node {
    children: HashMap<char, usize>,
    // (entry index, kind); at most one entry per kind by lexicon invariant
    terminals: Vec<(usize, TermKind)>,
}

/// Character trie over the normalized surface forms of one language.
#[derive(Debug, Clone)]
pub(crate) struct Trie {
    nodes: Vec<Node>,
}

impl Default for Trie {
    fn default() -> Self {
        Self {
            nodes: vec![Node::default()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Hit {
    pub start: usize,
    pub end: usize,
    pub entry: usize,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

impl Trie {
    pub fn insert(&mut self, surface: &str, entry: usize, kind: TermKind) {
        let mut node = 0;
        for c in surface.chars() {
            node = match self.nodes[node].children.get(&c) {
                Some(&next) => next,
                None => {
                    self.nodes.push(Node::default());
                    let next = self.nodes.len() - 1;
                    self.nodes[node].children.insert(c, next);
                    next
                }
            };
        }
        let terminals = &mut self.nodes[node].terminals;
        if !terminals.contains(&(entry, kind)) {
            terminals.push((entry, kind));
        }
    }

    /// Leftmost-longest scan. With `word_boundaries`, a candidate must start
    /// and end next to a non-word character (or the text edge); a longer
    /// candidate that violates the end boundary yields to a shorter one.
    pub fn scan(&self, text: &str, word_boundaries: bool, kind: Option<TermKind>) -> Vec<Hit> {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let byte_at = |i: usize| chars.get(i).map_or(text.len(), |&(b, _)| b);
        let mut hits = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            if word_boundaries && i > 0 && is_word_char(chars[i - 1].1) && is_word_char(chars[i].1) {
                i += 1;
                continue;
            }
            let mut best: Option<(usize, usize)> = None;
            let mut node = 0;
            let mut j = i;
            while j < chars.len() {
                let Some(&next) = self.nodes[node].children.get(&chars[j].1) else {
                    break;
                };
                node = next;
                j += 1;
                let Some(entry) = self.nodes[node]
                    .terminals
                    .iter()
                    .find(|(_, k)| kind.is_none_or(|want| want == *k))
                    .map(|(e, _)| *e)
                else {
                    continue;
                };
                let end_ok = !word_boundaries
                    || j == chars.len()
                    || !(is_word_char(chars[j - 1].1) && is_word_char(chars[j].1));
                if end_ok {
                    best = Some((j, entry));
                }
            }
            match best {
                Some((end, entry)) => {
                    hits.push(Hit {
                        start: byte_at(i),
                        end: byte_at(end),
                        entry,
                    });
                    i = end;
                }
                None => i += 1,
            }
        }
        hits
    }
}
