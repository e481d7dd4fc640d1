use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const TOKENS_FILE: &str = "seq.in";
pub const TAGS_FILE: &str = "seq.out";
pub const INTENTS_FILE: &str = "label";

/// One labeled utterance: tokens, utterance intent and one BIO tag per token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Utterance {
    pub tokens: Vec<String>,
    pub intent: String,
    pub bio_tags: Vec<String>,
}

/// A parsed BIO tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tag<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

impl<'a> Tag<'a> {
    pub fn parse(s: &'a str) -> Option<Tag<'a>> {
        match s {
            "O" => Some(Tag::Outside),
            _ => {
                let (prefix, ty) = s.split_once('-')?;
                if ty.is_empty() || ty == "O" {
                    return None;
                }
                match prefix {
                    "B" => Some(Tag::Begin(ty)),
                    "I" => Some(Tag::Inside(ty)),
                    _ => None,
                }
            }
        }
    }

    /// Slot type, or `None` for `O`.
    pub fn slot_type(&self) -> Option<&'a str> {
        match *self {
            Tag::Outside => None,
            Tag::Begin(t) | Tag::Inside(t) => Some(t),
        }
    }
}

/// Checks the BIO rule: every `I-x` follows `B-x` or `I-x`.
pub fn validate_bio<S: AsRef<str>>(tags: &[S]) -> std::result::Result<(), String> {
    let mut open: Option<&str> = None;
    for (i, s) in tags.iter().enumerate() {
        let s = s.as_ref();
        let tag = Tag::parse(s).ok_or_else(|| format!("position {i}: malformed tag {s:?}"))?;
        open = match tag {
            Tag::Outside => None,
            Tag::Begin(t) => Some(t),
            Tag::Inside(t) => {
                if open != Some(t) {
                    return Err(format!("position {i}: {s} does not continue a {t} span"));
                }
                Some(t)
            }
        };
    }
    Ok(())
}

impl Utterance {
    pub fn new(tokens: Vec<String>, intent: impl Into<String>, bio_tags: Vec<String>) -> Result<Self> {
        let u = Utterance {
            tokens,
            intent: intent.into(),
            bio_tags,
        };
        u.validate(0)?;
        Ok(u)
    }

    /// Checks length agreement and the BIO rule; `index` is used in errors.
    pub fn validate(&self, index: usize) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::Bio {
                index,
                msg: "empty utterance".into(),
            });
        }
        if self.tokens.len() != self.bio_tags.len() {
            return Err(Error::Bio {
                index,
                msg: format!("{} tokens but {} tags", self.tokens.len(), self.bio_tags.len()),
            });
        }
        validate_bio(&self.bio_tags).map_err(|msg| Error::Bio { index, msg })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Distinct non-O slot types present, in order of first appearance.
    pub fn slot_types(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for t in &self.bio_tags {
            if let Some(ty) = Tag::parse(t).and_then(|t| t.slot_type()) {
                if !out.contains(&ty) {
                    out.push(ty);
                }
            }
        }
        out
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Reads the three parallel files `seq.in`, `seq.out` and `label` from `dir`.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Vec<Utterance>> {
    let dir = dir.as_ref();
    let tok_path = dir.join(TOKENS_FILE);
    let tag_path = dir.join(TAGS_FILE);
    let int_path = dir.join(INTENTS_FILE);
    let toks = read_lines(&tok_path)?;
    let tags = read_lines(&tag_path)?;
    let ints = read_lines(&int_path)?;

    let n = toks.len();
    for (path, len) in [(&tag_path, tags.len()), (&int_path, ints.len())] {
        if len != n {
            return Err(Error::Format {
                path: path.clone(),
                line: len.min(n) + 1,
                msg: format!("{len} lines but {} has {n}", tok_path.display()),
            });
        }
    }

    let mut out = Vec::with_capacity(n);
    for (i, ((t, g), intent)) in toks.iter().zip(&tags).zip(&ints).enumerate() {
        let tokens: Vec<String> = t.split_whitespace().map(str::to_string).collect();
        let bio: Vec<String> = g.split_whitespace().map(str::to_string).collect();
        if tokens.len() != bio.len() {
            return Err(Error::Format {
                path: tag_path.clone(),
                line: i + 1,
                msg: format!("{} tags for {} tokens", bio.len(), tokens.len()),
            });
        }
        let intent = intent.trim();
        if intent.is_empty() {
            return Err(Error::Format {
                path: int_path.clone(),
                line: i + 1,
                msg: "empty intent label".into(),
            });
        }
        let u = Utterance {
            tokens,
            intent: intent.to_string(),
            bio_tags: bio,
        };
        u.validate(i)?;
        out.push(u);
    }
    Ok(out)
}

/// Writes `utterances` in the three-file format, creating `dir` if needed.
pub fn write_corpus(dir: impl AsRef<Path>, utterances: &[Utterance]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut toks = String::new();
    let mut tags = String::new();
    let mut ints = String::new();
    for u in utterances {
        toks.push_str(&u.tokens.join(" "));
        toks.push('\n');
        tags.push_str(&u.bio_tags.join(" "));
        tags.push('\n');
        ints.push_str(&u.intent);
        ints.push('\n');
    }
    for (name, body) in [(TOKENS_FILE, toks), (TAGS_FILE, tags), (INTENTS_FILE, ints)] {
        let p: PathBuf = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, toks: &str, tags: &str, ints: &str) {
        fs::write(dir.join(TOKENS_FILE), toks).unwrap();
        fs::write(dir.join(TAGS_FILE), tags).unwrap();
        fs::write(dir.join(INTENTS_FILE), ints).unwrap();
    }

    #[test]
    fn loads_aligned_files() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "fly to boston\nplay hey jude\n",
            "O O B-city\nO B-song I-song\n",
            "flight\nmusic\n",
        );
        let c = load_corpus(dir.path()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[1].tokens, ["play", "hey", "jude"]);
        assert_eq!(c[1].slot_types(), ["song"]);
    }

    #[test]
    fn short_tag_line_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a b\nc d e\n", "O O\nO O\n", "x\ny\n");
        match load_corpus(dir.path()).unwrap_err() {
            Error::Format { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn line_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a\nb\nc\n", "O\nO\n", "x\ny\nz\n");
        match load_corpus(dir.path()).unwrap_err() {
            Error::Format { line, path, .. } => {
                assert_eq!(line, 3);
                assert!(path.ends_with(TAGS_FILE));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn dangling_inside_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a b\nto boston\n", "O O\nI-city O\n", "x\ny\n");
        match load_corpus(dir.path()).unwrap_err() {
            Error::Bio { index, .. } => assert_eq!(index, 1),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn bio_rule() {
        assert!(validate_bio(&["B-a", "I-a", "I-a", "O", "B-b"]).is_ok());
        assert!(validate_bio(&["B-a", "I-b"]).is_err());
        assert!(validate_bio(&["O", "I-a"]).is_err());
        assert!(validate_bio(&["X-a"]).is_err());
        assert!(validate_bio(&["B-"]).is_err());
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let u = vec![
            Utterance::new(
                vec!["a".into(), "b".into()],
                "i1",
                vec!["B-x".into(), "I-x".into()],
            )
            .unwrap(),
        ];
        write_corpus(dir.path(), &u).unwrap();
        assert_eq!(load_corpus(dir.path()).unwrap(), u);
    }
}
