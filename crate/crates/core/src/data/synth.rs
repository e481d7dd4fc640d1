//! Seeded template grammar for desk-scale corpora.
//!
//! Templates are whitespace-separated words with `{type}` placeholders; each
//! placeholder is filled with a value drawn from that type's lexicon and
//! tagged `B-type I-type ...`.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::Utterance;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntentTemplates {
    pub intent: String,
    pub templates: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grammar {
    pub intents: Vec<IntentTemplates>,
    pub lexicons: BTreeMap<String, Vec<String>>,
}

enum Piece<'a> {
    Word(&'a str),
    Slot(&'a str),
}

fn pieces(template: &str) -> impl Iterator<Item = Piece<'_>> {
    template.split_whitespace().map(|w| {
        match w.strip_prefix('{').and_then(|r| r.strip_suffix('}')) {
            Some(ty) => Piece::Slot(ty),
            None => Piece::Word(w),
        }
    })
}

fn placeholders(template: &str) -> Vec<&str> {
    let mut v: Vec<&str> = pieces(template)
        .filter_map(|p| match p {
            Piece::Slot(t) => Some(t),
            Piece::Word(_) => None,
        })
        .collect();
    v.sort_unstable();
    v
}

impl Grammar {
    pub fn validate(&self) -> Result<()> {
        let n_templates: usize = self.intents.iter().map(|i| i.templates.len()).sum();
        if n_templates == 0 {
            return Err(Error::InvalidInput("grammar has no templates".into()));
        }
        if self.intents.len() < 2 {
            return Err(Error::InvalidInput("grammar needs at least two intents".into()));
        }
        if self.lexicons.len() < 2 {
            return Err(Error::InvalidInput("grammar needs at least two slot types".into()));
        }
        for (ty, values) in &self.lexicons {
            if ty == "O" || ty.is_empty() || values.is_empty() {
                return Err(Error::InvalidInput(format!("bad lexicon for slot type {ty:?}")));
            }
        }
        for it in &self.intents {
            if it.templates.is_empty() {
                return Err(Error::InvalidInput(format!("intent {} has no templates", it.intent)));
            }
            for t in &it.templates {
                for ty in placeholders(t) {
                    if !self.lexicons.contains_key(ty) {
                        return Err(Error::InvalidInput(format!(
                            "template {t:?} uses unknown slot type {ty}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Renders `template` with lexicon draws.
    fn fill<R: Rng>(&self, intent: &str, template: &str, rng: &mut R) -> Utterance {
        let values: Vec<(String, String)> = pieces(template)
            .filter_map(|p| match p {
                Piece::Slot(ty) => Some((ty.to_string(), self.lexicons[ty].choose(rng).unwrap().clone())),
                Piece::Word(_) => None,
            })
            .collect();
        render(intent, template, &values)
    }

    /// Three intents over four slot types, several templates each.
    pub fn default_grammar() -> Self {
        let intents = [
            (
                "book_flight",
                &[
                    "book a flight to {city} on {day}",
                    "i need a ticket to {city} for {day}",
                    "i want to fly from {city} to {city}",
                    "list flights from {city} to {city}",
                    "show me flights from {city} to {city} on {day}",
                    "find me a flight from {city} to {city} leaving {day}",
                    "find flights to {city}",
                    "are there flights to {city}",
                ][..],
            ),
            (
                "get_weather",
                &[
                    "what is the weather in {city}",
                    "how is the weather in {city}",
                    "will it rain in {city} on {day}",
                    "weather forecast for {day} in {city}",
                    "tell me the weather on {day}",
                    "what will the weather be {day}",
                ][..],
            ),
            (
                "play_music",
                &[
                    "play {song} by {artist}",
                    "put on {song} by {artist}",
                    "play some {artist}",
                    "play something by {artist}",
                    "i want to hear {song}",
                    "put on {song}",
                ][..],
            ),
        ];
        let lexicons = [
            (
                "city",
                &[
                    "boston", "denver", "chicago", "dallas", "seattle", "miami", "atlanta",
                    "new york", "san francisco", "los angeles", "salt lake city",
                ][..],
            ),
            (
                "day",
                &[
                    "monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday",
                    "tomorrow", "next friday", "this weekend",
                ][..],
            ),
            (
                "song",
                &[
                    "hey jude", "let it be", "blue in green", "so what", "purple rain",
                    "hotel california", "take five", "imagine",
                ][..],
            ),
            (
                "artist",
                &[
                    "the beatles", "miles davis", "prince", "eagles", "dave brubeck", "adele",
                    "queen", "john lennon",
                ][..],
            ),
        ];
        Grammar {
            intents: intents
                .iter()
                .map(|(name, ts)| IntentTemplates {
                    intent: name.to_string(),
                    templates: ts.iter().map(|s| s.to_string()).collect(),
                })
                .collect(),
            lexicons: lexicons
                .iter()
                .map(|(ty, vs)| (ty.to_string(), vs.iter().map(|s| s.to_string()).collect()))
                .collect(),
        }
    }
}

/// Renders a template with explicit slot values in placeholder order.
fn render(intent: &str, template: &str, values: &[(String, String)]) -> Utterance {
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let mut next = values.iter();
    for p in pieces(template) {
        match p {
            Piece::Word(w) => {
                tokens.push(w.to_string());
                tags.push("O".to_string());
            }
            Piece::Slot(ty) => {
                let (_, value) = next.next().expect("one value per placeholder");
                for (k, w) in value.split_whitespace().enumerate() {
                    tokens.push(w.to_string());
                    tags.push(if k == 0 { format!("B-{ty}") } else { format!("I-{ty}") });
                }
            }
        }
    }
    Utterance {
        tokens,
        intent: intent.to_string(),
        bio_tags: tags,
    }
}

/// Draws `n` utterances: intent, then template, then slot values, all
/// uniformly from a ChaCha stream seeded with `seed`.
pub fn generate_synthetic_corpus(seed: u64, n: usize, grammar: &Grammar) -> Result<Vec<Utterance>> {
    grammar.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let it = grammar.intents.choose(&mut rng).unwrap();
            let t = it.templates.choose(&mut rng).unwrap();
            grammar.fill(&it.intent, t, &mut rng)
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModificationKind {
    SlotOnly,
    TextOnly,
    Both,
}

impl ModificationKind {
    pub const ALL: [ModificationKind; 3] = [Self::SlotOnly, Self::TextOnly, Self::Both];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::SlotOnly => "slot-only",
            Self::TextOnly => "text-only",
            Self::Both => "both",
        }
    }
}

/// An original utterance, a meaning-preserving variant and the positive slot
/// type whose attention is compared.
#[derive(Clone, Debug, PartialEq)]
pub struct ModificationPair {
    pub pair_id: String,
    pub kind: ModificationKind,
    pub slot_type: String,
    pub original: Utterance,
    pub modified: Utterance,
}

/// Builds `per_kind` variants of each kind for `n_originals` utterances.
///
/// Slot-only variants redraw slot values in the same template; text-only
/// variants move the same values into another template of the same intent
/// with the same placeholder multiset; `Both` does both.
pub fn generate_modification_pairs(
    seed: u64,
    n_originals: usize,
    per_kind: usize,
    grammar: &Grammar,
) -> Result<Vec<ModificationPair>> {
    grammar.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // (intent index, template, alternatives with identical placeholders)
    let mut candidates = Vec::new();
    for it in &grammar.intents {
        for t in &it.templates {
            let ph = placeholders(t);
            if ph.is_empty() {
                continue;
            }
            let alts: Vec<&String> = it
                .templates
                .iter()
                .filter(|o| *o != t && placeholders(o) == ph)
                .collect();
            if !alts.is_empty() {
                candidates.push((it.intent.as_str(), t.as_str(), alts));
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::InvalidInput(
            "grammar has no pair of templates sharing slot placeholders".into(),
        ));
    }

    let draw_values = |t: &str, rng: &mut ChaCha8Rng| -> Vec<(String, String)> {
        pieces(t)
            .filter_map(|p| match p {
                Piece::Slot(ty) => Some((ty.to_string(), grammar.lexicons[ty].choose(rng).unwrap().clone())),
                Piece::Word(_) => None,
            })
            .collect()
    };
    // values keyed by type in the order the alternative template asks for them
    let reorder = |from: &[(String, String)], to: &str| -> Vec<(String, String)> {
        let mut pool: Vec<(String, String)> = from.to_vec();
        pieces(to)
            .filter_map(|p| match p {
                Piece::Slot(ty) => {
                    let k = pool.iter().position(|(t, _)| t == ty).expect("same placeholders");
                    Some(pool.remove(k))
                }
                Piece::Word(_) => None,
            })
            .collect()
    };

    let mut out = Vec::new();
    for n in 0..n_originals {
        let (intent, template, alts) = candidates.choose(&mut rng).unwrap();
        let values = draw_values(template, &mut rng);
        let original = render(intent, template, &values);
        let types = original.slot_types();
        let slot_type = types.choose(&mut rng).unwrap().to_string();
        for kind in ModificationKind::ALL {
            for k in 0..per_kind {
                let modified = match kind {
                    ModificationKind::SlotOnly => render(intent, template, &draw_values(template, &mut rng)),
                    ModificationKind::TextOnly => {
                        let alt = alts.choose(&mut rng).unwrap();
                        render(intent, alt, &reorder(&values, alt))
                    }
                    ModificationKind::Both => {
                        let alt = alts.choose(&mut rng).unwrap();
                        render(intent, alt, &draw_values(alt, &mut rng))
                    }
                };
                out.push(ModificationPair {
                    pair_id: format!("{n}.{}.{k}", kind.as_str()),
                    kind,
                    slot_type: slot_type.clone(),
                    original: original.clone(),
                    modified,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_given_seed() {
        let g = Grammar::default_grammar();
        let a = generate_synthetic_corpus(7, 100, &g).unwrap();
        let b = generate_synthetic_corpus(7, 100, &g).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_synthetic_corpus(8, 100, &g).unwrap());
    }

    #[test]
    fn single_word_fills() {
        let u = render(
            "f",
            "book a flight to {city} on {day}",
            &[("city".into(), "boston".into()), ("day".into(), "monday".into())],
        );
        assert_eq!(u.bio_tags, ["O", "O", "O", "O", "B-city", "O", "B-day"]);
        assert_eq!(u.tokens.join(" "), "book a flight to boston on monday");
    }

    #[test]
    fn multi_word_fill_uses_inside_tags() {
        let u = render("f", "fly to {city}", &[("city".into(), "new york".into())]);
        assert_eq!(u.bio_tags, ["O", "O", "B-city", "I-city"]);
    }

    #[test]
    fn zero_utterances() {
        assert!(generate_synthetic_corpus(1, 0, &Grammar::default_grammar()).unwrap().is_empty());
    }

    #[test]
    fn no_templates_is_error() {
        let mut g = Grammar::default_grammar();
        g.intents.iter_mut().for_each(|i| i.templates.clear());
        assert!(generate_synthetic_corpus(1, 5, &g).is_err());
    }

    #[test]
    fn every_generated_utterance_is_valid() {
        let g = Grammar::default_grammar();
        for (i, u) in generate_synthetic_corpus(3, 300, &g).unwrap().iter().enumerate() {
            u.validate(i).unwrap();
        }
    }

    #[test]
    fn modification_pairs_keep_semantics() {
        let g = Grammar::default_grammar();
        let pairs = generate_modification_pairs(5, 10, 2, &g).unwrap();
        assert_eq!(pairs.len(), 60);
        for p in &pairs {
            assert_eq!(p.original.intent, p.modified.intent);
            let mut a = p.original.slot_types();
            let mut b = p.modified.slot_types();
            a.sort_unstable();
            b.sort_unstable();
            assert_eq!(a, b);
            assert!(a.contains(&p.slot_type.as_str()));
            if p.kind == ModificationKind::TextOnly {
                let vals = |u: &Utterance| {
                    let mut v: Vec<_> = u
                        .tokens
                        .iter()
                        .zip(&u.bio_tags)
                        .filter(|(_, t)| *t != "O")
                        .map(|(w, t)| (w.clone(), t.clone()))
                        .collect();
                    v.sort();
                    v
                };
                assert_eq!(vals(&p.original), vals(&p.modified));
            }
        }
    }
}
