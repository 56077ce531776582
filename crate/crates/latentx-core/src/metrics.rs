//! Native BLEU@4 and ROUGE-L for scoring generated explanations against
//! reference texts.
//!
//! Scores are stored on a 0..1 scale; reports render them multiplied by 100.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::tokenize;

const MAX_NGRAM: usize = 4;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("hypothesis tokenizes to nothing (pair {index})")]
    EmptyHypothesis { index: usize },
    #[error("pair {index} has no references")]
    NoReferences { index: usize },
    #[error("no pairs to evaluate")]
    EmptyInput,
}

/// One hypothesis with at least one reference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalPair {
    pub hypothesis: String,
    pub references: Vec<String>,
}

impl EvalPair {
    pub fn new(hypothesis: impl Into<String>, references: Vec<String>) -> Self {
        EvalPair {
            hypothesis: hypothesis.into(),
            references,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts: HashMap<&[String], usize> = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

struct PooledCounts {
    matched: [usize; MAX_NGRAM],
    total: [usize; MAX_NGRAM],
    hyp_len: usize,
    ref_len: usize,
}

fn pool_pair(index: usize, pair: &EvalPair) -> Result<PooledCounts, MetricError> {
    if pair.references.is_empty() {
        return Err(MetricError::NoReferences { index });
    }
    let hyp = tokenize(&pair.hypothesis);
    if hyp.is_empty() {
        return Err(MetricError::EmptyHypothesis { index });
    }
    let refs: Vec<Vec<String>> = pair.references.iter().map(|r| tokenize(r)).collect();

    let mut matched = [0usize; MAX_NGRAM];
    let mut total = [0usize; MAX_NGRAM];
    for n in 1..=MAX_NGRAM {
        let hyp_counts = ngram_counts(&hyp, n);
        let ref_counts: Vec<HashMap<&[String], usize>> =
            refs.iter().map(|r| ngram_counts(r, n)).collect();
        for (gram, &count) in &hyp_counts {
            let max_ref = ref_counts
                .iter()
                .map(|rc| rc.get(gram).copied().unwrap_or(0))
                .max()
                .unwrap_or(0);
            matched[n - 1] += count.min(max_ref);
            total[n - 1] += count;
        }
    }

    // Effective reference length: closest to the hypothesis length,
    // shorter on ties.
    let ref_len = refs
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(hyp.len()), len))
        .unwrap_or(0);

    Ok(PooledCounts {
        matched,
        total,
        hyp_len: hyp.len(),
        ref_len,
    })
}

/// Corpus-level BLEU@4: geometric mean of modified 1..4-gram precisions
/// over pooled counts, times the brevity penalty. A zero n-gram precision
/// is smoothed to `1 / (2 * candidate n-gram count)`; orders with no
/// candidate n-grams (hypothesis shorter than n) smooth with count 1.
pub fn bleu4(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut matched = [0usize; MAX_NGRAM];
    let mut total = [0usize; MAX_NGRAM];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (index, pair) in pairs.iter().enumerate() {
        let pooled = pool_pair(index, pair)?;
        for n in 0..MAX_NGRAM {
            matched[n] += pooled.matched[n];
            total[n] += pooled.total[n];
        }
        hyp_len += pooled.hyp_len;
        ref_len += pooled.ref_len;
    }

    let mut log_sum = 0.0f64;
    for n in 0..MAX_NGRAM {
        let p = if matched[n] > 0 {
            matched[n] as f64 / total[n] as f64
        } else {
            1.0 / (2.0 * total[n].max(1) as f64)
        };
        log_sum += p.ln();
    }
    let brevity = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(brevity * (log_sum / MAX_NGRAM as f64).exp())
}

/// Sentence-level BLEU@4 of a single pair, same smoothing as [`bleu4`].
pub fn bleu4_sentence(pair: &EvalPair) -> Result<f64, MetricError> {
    bleu4(std::slice::from_ref(pair))
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut table = vec![0usize; (a.len() + 1) * (b.len() + 1)];
    let cols = b.len() + 1;
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            table[i * cols + j] = if a[i - 1] == b[j - 1] {
                table[(i - 1) * cols + (j - 1)] + 1
            } else {
                table[(i - 1) * cols + j].max(table[i * cols + (j - 1)])
            };
        }
    }
    table[a.len() * cols + b.len()]
}

/// ROUGE-L of one pair: LCS-based precision and recall with balanced F.
/// For multiple references the best-F reference wins.
pub fn rouge_l(pair: &EvalPair) -> Result<RougeScore, MetricError> {
    if pair.references.is_empty() {
        return Err(MetricError::NoReferences { index: 0 });
    }
    let hyp = tokenize(&pair.hypothesis);
    if hyp.is_empty() {
        return Err(MetricError::EmptyHypothesis { index: 0 });
    }
    let mut best = RougeScore {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };
    for reference in &pair.references {
        let ref_tokens = tokenize(reference);
        if ref_tokens.is_empty() {
            continue;
        }
        let lcs = lcs_len(&hyp, &ref_tokens) as f64;
        let precision = lcs / hyp.len() as f64;
        let recall = lcs / ref_tokens.len() as f64;
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        if f1 > best.f1 {
            best = RougeScore {
                precision,
                recall,
                f1,
            };
        }
    }
    Ok(best)
}

/// Per-pair scores plus corpus aggregates: pooled-count BLEU and the mean
/// of per-pair ROUGE-L F.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu4: f64,
    pub rouge_l_f: f64,
    pub per_pair: Vec<PairReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairReport {
    pub bleu4: f64,
    pub rouge_l: RougeScore,
}

pub fn evaluate(pairs: &[EvalPair]) -> Result<MetricReport, MetricError> {
    let corpus_bleu = bleu4(pairs)?;
    let mut per_pair = Vec::with_capacity(pairs.len());
    let mut rouge_sum = 0.0;
    for pair in pairs {
        let rouge = rouge_l(pair)?;
        rouge_sum += rouge.f1;
        per_pair.push(PairReport {
            bleu4: bleu4_sentence(pair)?,
            rouge_l: rouge,
        });
    }
    Ok(MetricReport {
        bleu4: corpus_bleu,
        rouge_l_f: rouge_sum / pairs.len() as f64,
        per_pair,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(hyp: &str, refs: &[&str]) -> EvalPair {
        EvalPair::new(hyp, refs.iter().map(|r| r.to_string()).collect())
    }

    #[test]
    fn identical_long_hypothesis_scores_one() {
        let p = pair(
            "the object moves to the right",
            &["the object moves to the right"],
        );
        let score = bleu4(&[p.clone()]).unwrap();
        assert!((score - 1.0).abs() < 1e-12);
        let rouge = rouge_l(&p).unwrap();
        assert_eq!((rouge.precision, rouge.recall, rouge.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn identical_short_hypothesis_scores_via_smoothing() {
        let p = pair("object moves", &["object moves"]);
        let score = bleu4(&[p]).unwrap();
        assert!(score >= 0.7, "smoothed identity score {score}");
        assert!(score < 1.0);
    }

    #[test]
    fn disjoint_tokens_score_near_zero() {
        // The smoothing floor is 1/(2·count) per order, so a hypothesis
        // must be long for the smoothed score to sink below 0.01.
        let hyp = (0..60).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let reference = (0..60).map(|i| format!("r{i}")).collect::<Vec<_>>().join(" ");
        let p = pair(&hyp, &[&reference]);
        let score = bleu4(&[p]).unwrap();
        assert!(score < 0.01, "disjoint BLEU {score}");
        assert!(score > 0.0, "smoothing keeps the score positive");

        let short = pair("alpha beta gamma delta", &["one two three four"]);
        let rouge = rouge_l(&short).unwrap();
        assert_eq!((rouge.precision, rouge.recall, rouge.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn rouge_l_hand_case() {
        // hyp "a b c" vs ref "a c": LCS=2, P=2/3, R=1, F=0.8.
        let p = pair("a b c", &["a c"]);
        let rouge = rouge_l(&p).unwrap();
        assert!((rouge.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((rouge.recall - 1.0).abs() < 1e-12);
        assert!((rouge.f1 - 0.8).abs() < 1e-12);
    }

    #[test]
    fn empty_hypothesis_rejected() {
        let p = pair("...", &["a b"]);
        assert!(matches!(
            bleu4(&[p.clone()]),
            Err(MetricError::EmptyHypothesis { .. })
        ));
        assert!(matches!(
            rouge_l(&p),
            Err(MetricError::EmptyHypothesis { .. })
        ));
    }

    #[test]
    fn corpus_bleu_invariant_under_reordering() {
        let a = pair("the cat sat on the mat", &["the cat sat on a mat"]);
        let b = pair("a dog runs fast", &["the dog runs very fast"]);
        let c = pair("green trees by the river", &["tall green trees near a river"]);
        let fwd = bleu4(&[a.clone(), b.clone(), c.clone()]).unwrap();
        let rev = bleu4(&[c, b, a]).unwrap();
        assert!((fwd - rev).abs() < 1e-15);
    }

    #[test]
    fn multi_reference_takes_best_f() {
        let p = pair("a b c d", &["x y z", "a b c d"]);
        let rouge = rouge_l(&p).unwrap();
        assert_eq!(rouge.f1, 1.0);
    }

    #[test]
    fn report_aggregates() {
        let pairs = vec![
            pair("the cat sat on the mat", &["the cat sat on a mat"]),
            pair("a b c", &["a c"]),
        ];
        let report = evaluate(&pairs).unwrap();
        assert_eq!(report.per_pair.len(), 2);
        let mean_f = (report.per_pair[0].rouge_l.f1 + report.per_pair[1].rouge_l.f1) / 2.0;
        assert!((report.rouge_l_f - mean_f).abs() < 1e-15);
    }
}
