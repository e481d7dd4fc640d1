use std::collections::BTreeMap;

use super::{AttentionBundle, Explainer};
use crate::data::{ModificationKind, ModificationPair, OUTSIDE};
use crate::error::{Error, Result};

/// Token keys used for alignment: the lowercased word for `O` tokens and
/// the BIO tag for slot tokens, so that substituted slot values still line
/// up with each other.
pub fn alignment_keys(b: &AttentionBundle) -> Vec<String> {
    b.tokens
        .iter()
        .zip(&b.tags)
        .map(|(tok, tag)| if tag == OUTSIDE { tok.to_lowercase() } else { tag.clone() })
        .collect()
}

/// Longest-common-subsequence alignment of two key sequences as index pairs.
pub fn align_rows<S: PartialEq>(a: &[S], b: &[S]) -> Vec<(usize, usize)> {
    let (n, m) = (a.len(), b.len());
    let mut dp = vec![vec![0usize; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            dp[i][j] = if a[i] == b[j] {
                dp[i + 1][j + 1] + 1
            } else {
                dp[i + 1][j].max(dp[i][j + 1])
            };
        }
    }
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::with_capacity(dp[0][0]);
    while i < n && j < m {
        if a[i] == b[j] {
            out.push((i, j));
            i += 1;
            j += 1;
        } else if dp[i + 1][j] >= dp[i][j + 1] {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        0.0
    } else {
        dot / (nu * nv)
    }
}

/// Mean cosine similarity between aligned attention rows of `slot_type`,
/// clipped to `[0, 1]`. Rows are compared on the aligned columns only.
/// Without an explicit alignment the bundles must have equal length and
/// positions are matched one to one.
pub fn compare_attention_consistency(
    a: &AttentionBundle,
    b: &AttentionBundle,
    slot_type: &str,
    alignment: Option<&[(usize, usize)]>,
) -> Result<f64> {
    let (ma, mb) = (a.matrix(slot_type)?, b.matrix(slot_type)?);
    let identity: Vec<(usize, usize)>;
    let pairs = match alignment {
        Some(p) => p,
        None => {
            if a.len() != b.len() {
                return Err(Error::InvalidInput(format!(
                    "lengths {} and {} differ; an alignment is required",
                    a.len(),
                    b.len()
                )));
            }
            identity = (0..a.len()).map(|i| (i, i)).collect();
            &identity
        }
    };
    if pairs.is_empty() {
        return Err(Error::InvalidInput("empty alignment".into()));
    }
    if pairs.iter().any(|&(i, j)| i >= a.len() || j >= b.len()) {
        return Err(Error::Index("alignment index outside the utterance".into()));
    }
    let mut total = 0.0;
    for &(i, j) in pairs {
        let u: Vec<f64> = pairs.iter().map(|&(c, _)| ma[i][c]).collect();
        let v: Vec<f64> = pairs.iter().map(|&(_, c)| mb[j][c]).collect();
        total += cosine(&u, &v);
    }
    Ok((total / pairs.len() as f64).clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairScore {
    pub pair_id: String,
    pub kind: ModificationKind,
    pub slot_type: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyReport {
    pub pairs: Vec<PairScore>,
}

impl ConsistencyReport {
    pub const TSV_HEADER: &'static str = "pair_id\tcategory\tscore";

    pub fn category_means(&self) -> BTreeMap<ModificationKind, f64> {
        let mut acc: BTreeMap<ModificationKind, (f64, usize)> = BTreeMap::new();
        for p in &self.pairs {
            let e = acc.entry(p.kind).or_default();
            e.0 += p.score;
            e.1 += 1;
        }
        acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut s = format!("{}\n", Self::TSV_HEADER);
        for p in &self.pairs {
            s.push_str(&format!("{}\t{}\t{:.6}\n", p.pair_id, p.kind.as_str(), p.score));
        }
        for (k, m) in self.category_means() {
            s.push_str(&format!("mean\t{}\t{m:.6}\n", k.as_str()));
        }
        s
    }
}

/// Scores every modification pair on its designated slot type, aligning
/// the two utterances by [`alignment_keys`].
pub fn consistency_report(explainer: &Explainer<'_>, pairs: &[ModificationPair]) -> Result<ConsistencyReport> {
    let mut out = Vec::with_capacity(pairs.len());
    for p in pairs {
        let a = explainer.extract(&p.original.tokens, Some(&p.original.bio_tags))?;
        let b = explainer.extract(&p.modified.tokens, Some(&p.modified.bio_tags))?;
        let alignment = align_rows(&alignment_keys(&a), &alignment_keys(&b));
        let score = compare_attention_consistency(&a, &b, &p.slot_type, Some(&alignment))?;
        out.push(PairScore {
            pair_id: p.pair_id.clone(),
            kind: p.kind,
            slot_type: p.slot_type.clone(),
            score,
        });
    }
    Ok(ConsistencyReport { pairs: out })
}
