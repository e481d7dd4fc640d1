use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::corpus::Utterance;

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

/// Lowercased word vocabulary with reserved padding and unknown ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocab { words, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.words
    }
}

pub fn normalize(word: &str) -> String {
    word.to_lowercase()
}

impl Vocab {
    /// Sorted vocabulary over the lowercased training tokens.
    pub fn build(corpus: &[Utterance]) -> Self {
        let words: BTreeSet<String> = corpus
            .iter()
            .flat_map(|u| u.tokens.iter().map(|t| normalize(t)))
            .collect();
        let mut all = vec![PAD.to_string(), UNK.to_string()];
        all.extend(words.into_iter().filter(|w| w != PAD && w != UNK));
        all.into()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(&normalize(word)).copied().unwrap_or(UNK_ID)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }
}
