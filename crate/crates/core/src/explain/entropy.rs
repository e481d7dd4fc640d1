use super::AttentionBundle;
use crate::error::{Error, Result};

/// Percentages reported by default.
pub const DEFAULT_K_LIST: [f64; 3] = [100.0, 10.0, 5.0];

/// Base-2 Shannon entropy of `weights` after normalizing them to sum to one.
/// Zero entries contribute nothing.
pub fn entropy(weights: &[f64]) -> Result<f64> {
    if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(Error::InvalidInput("entropy of negative or non-finite weights".into()));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidInput("entropy of an all-zero weight list".into()));
    }
    Ok(-weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|&w| {
            let p = w / total;
            p * p.log2()
        })
        .sum::<f64>())
}

/// The largest `max(1, floor(k * n / 100))` values, in descending order.
pub fn top_k(weights: &[f64], k_percent: f64) -> Vec<f64> {
    let mut v = weights.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    let keep = ((k_percent * v.len() as f64 / 100.0).floor() as usize).clamp(1, v.len().max(1));
    v.truncate(keep);
    v
}

/// Which list of weights one entropy value is computed over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Granularity {
    /// The whole matrix flattened into one list.
    #[default]
    Flatten,
    /// Each row separately, entropies averaged over rows.
    Row,
}

impl std::str::FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flatten" => Ok(Granularity::Flatten),
            "row" => Ok(Granularity::Row),
            _ => Err(Error::Config(format!("granularity must be flatten or row, got {s:?}"))),
        }
    }
}

fn matrix_entropy(m: &[Vec<f64>], k: f64, g: Granularity) -> Result<f64> {
    match g {
        Granularity::Flatten => {
            let flat: Vec<f64> = m.iter().flatten().copied().collect();
            entropy(&top_k(&flat, k))
        }
        Granularity::Row => {
            let mut s = 0.0;
            for row in m {
                s += entropy(&top_k(row, k))?;
            }
            Ok(s / m.len() as f64)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntropyRow {
    pub k: f64,
    pub pos_entropy: f64,
    pub neg_entropy: f64,
    /// `neg_entropy - pos_entropy`
    pub diff: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntropyReport {
    pub rows: Vec<EntropyRow>,
    /// Utterances with at least one positive and one negative type.
    pub utterances: usize,
    /// Utterances skipped for lacking one of the two groups.
    pub skipped: usize,
    pub granularity: Granularity,
}

impl EntropyReport {
    pub const TSV_HEADER: &'static str = "k\tpos_entropy\tneg_entropy\tdiff";

    pub fn row(&self, k: f64) -> Option<&EntropyRow> {
        self.rows.iter().find(|r| r.k == k)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = format!("{}\n", Self::TSV_HEADER);
        for r in &self.rows {
            s.push_str(&format!(
                "{}\t{:.6}\t{:.6}\t{:.6}\n",
                r.k, r.pos_entropy, r.neg_entropy, r.diff
            ));
        }
        s
    }
}

/// Average top-k entropy of positive versus negative slot types.
///
/// Per utterance, each type's matrix gives one entropy; those are averaged
/// within the positive and the negative group, and the group means are
/// averaged over utterances. Only utterances that have both groups take
/// part, so every reported difference is a mean of paired differences.
pub fn topk_entropy_analysis(bundles: &[AttentionBundle], k_list: &[f64], granularity: Granularity) -> Result<EntropyReport> {
    if bundles.is_empty() {
        return Err(Error::InvalidInput("entropy analysis over an empty corpus".into()));
    }
    if let Some(k) = k_list.iter().find(|&&k| !(k > 0.0 && k <= 100.0)) {
        return Err(Error::Config(format!("k = {k} is not a percentage in (0, 100]")));
    }
    if bundles.iter().all(|b| b.positive.is_empty()) {
        return Err(Error::InvalidInput("no utterance has a positive slot type".into()));
    }
    if bundles.iter().all(|b| b.negative.is_empty()) {
        return Err(Error::InvalidInput("no utterance has a negative slot type".into()));
    }
    let paired: Vec<&AttentionBundle> = bundles
        .iter()
        .filter(|b| !b.positive.is_empty() && !b.negative.is_empty())
        .collect();
    if paired.is_empty() {
        return Err(Error::InvalidInput(
            "no utterance has both positive and negative slot types".into(),
        ));
    }
    let group_mean = |b: &AttentionBundle, idx: &[usize], k: f64| -> Result<f64> {
        let mut s = 0.0;
        for &t in idx {
            s += matrix_entropy(&b.matrices[t], k, granularity)?;
        }
        Ok(s / idx.len() as f64)
    };
    let mut rows = Vec::with_capacity(k_list.len());
    for &k in k_list {
        let (mut pos, mut neg) = (0.0, 0.0);
        for b in &paired {
            pos += group_mean(b, &b.positive, k)?;
            neg += group_mean(b, &b.negative, k)?;
        }
        let n = paired.len() as f64;
        let (pos, neg) = (pos / n, neg / n);
        rows.push(EntropyRow {
            k,
            pos_entropy: pos,
            neg_entropy: neg,
            diff: neg - pos,
        });
    }
    Ok(EntropyReport {
        rows,
        utterances: paired.len(),
        skipped: bundles.len() - paired.len(),
        granularity,
    })
}
