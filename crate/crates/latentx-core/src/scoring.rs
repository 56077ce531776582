//! Certainty scoring over sampled explanations, final-response selection,
//! and threshold calibration against interpretability labels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{EmbeddingVector, ResponseSample};
use crate::NO_CLEAR_EXPLANATION;

/// Certainty threshold used when no calibration input is supplied.
pub const DEFAULT_EPSILON: f64 = 0.2617;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("need at least two responses to score, got {0}")]
    TooFewResponses(usize),
    #[error("embedding {index} has zero norm; cosine similarity is undefined")]
    ZeroNormEmbedding { index: usize },
    #[error("embedding {index} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("calibration set is empty")]
    EmptyCalibrationSet,
    #[error("calibration record {index} has a non-finite certainty")]
    NonFiniteCertainty { index: usize },
}

/// Cosine similarity. Bitwise-identical vectors short-circuit to exactly 1,
/// so identical responses score 1 without floating-point residue.
fn cosine(a: &[f64], b: &[f64]) -> Result<f64, ScoreError> {
    if a == b {
        return Ok(1.0);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let norm_a: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let norm_b: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok((dot / (norm_a * norm_b)).clamp(-1.0, 1.0))
}

/// Per-response scores and their mean.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scores {
    pub per_response: Vec<f64>,
    pub certainty: f64,
}

/// Mean pairwise cosine similarity: per response, the mean similarity to
/// every other response; the certainty is the mean over all ordered pairs,
/// which equals the arithmetic mean of the per-response scores.
pub fn score(embeddings: &[EmbeddingVector]) -> Result<Scores, ScoreError> {
    let n = embeddings.len();
    if n < 2 {
        return Err(ScoreError::TooFewResponses(n));
    }
    let dim = embeddings[0].values.len();
    for (index, emb) in embeddings.iter().enumerate() {
        if emb.values.len() != dim {
            return Err(ScoreError::DimensionMismatch {
                index,
                got: emb.values.len(),
                expected: dim,
            });
        }
        if emb.values.iter().all(|v| *v == 0.0) {
            return Err(ScoreError::ZeroNormEmbedding { index });
        }
    }

    let mut per_response = vec![0.0f64; n];
    for i in 0..n {
        let mut sum = 0.0;
        for j in 0..n {
            if i != j {
                sum += cosine(&embeddings[i].values, &embeddings[j].values)?;
            }
        }
        per_response[i] = sum / (n - 1) as f64;
    }
    let certainty = per_response.iter().sum::<f64>() / n as f64;
    Ok(Scores {
        per_response,
        certainty,
    })
}

/// The scored response set with the final selection applied.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoredResponses {
    pub samples: Vec<ResponseSample>,
    pub embeddings: Vec<EmbeddingVector>,
    pub per_response: Vec<f64>,
    pub certainty: f64,
    pub selected_index: usize,
    pub final_text: String,
}

/// Fill in the argmax selection: the highest-scoring response (ties break
/// to the lowest index) when the certainty clears `epsilon`, otherwise the
/// no-explanation literal. Boundary equality accepts.
pub fn select(
    samples: Vec<ResponseSample>,
    embeddings: Vec<EmbeddingVector>,
    scores: Scores,
    epsilon: f64,
) -> ScoredResponses {
    let selected_index = scores
        .per_response
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            a.partial_cmp(b)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(ib.cmp(ia))
        })
        .map(|(i, _)| i)
        .unwrap_or(0);
    let final_text = if scores.certainty >= epsilon {
        samples[selected_index].text.clone()
    } else {
        NO_CLEAR_EXPLANATION.to_string()
    };
    ScoredResponses {
        samples,
        embeddings,
        per_response: scores.per_response,
        certainty: scores.certainty,
        selected_index,
        final_text,
    }
}

/// One labeled run: its certainty and the binary interpretability label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub run_id: String,
    pub certainty: f64,
    pub label: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CalibrationSet {
    pub records: Vec<CalibrationRecord>,
}

/// A calibrated threshold and the objective value it achieves.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Threshold {
    pub epsilon: f64,
    pub objective: f64,
}

/// Jaccard index over the positive-indicator index sets, with the empty
/// pair defined as 1.
fn jaccard(predicted: &[bool], truth: &[bool]) -> f64 {
    let mut intersection = 0usize;
    let mut union = 0usize;
    for (&p, &t) in predicted.iter().zip(truth) {
        if p && t {
            intersection += 1;
        }
        if p || t {
            union += 1;
        }
    }
    if union == 0 {
        1.0
    } else {
        intersection as f64 / union as f64
    }
}

fn objective_at(set: &CalibrationSet, epsilon: f64) -> f64 {
    let predicted: Vec<bool> = set.records.iter().map(|r| r.certainty >= epsilon).collect();
    let truth: Vec<bool> = set.records.iter().map(|r| r.label).collect();
    jaccard(&predicted, &truth)
}

/// Pick the threshold maximizing the Jaccard agreement between the
/// thresholded certainties and the labels. Candidates are the distinct
/// certainties, the midpoints of consecutive sorted certainties, and one
/// value just above the maximum (which predicts nothing); ties resolve to
/// the smallest candidate.
pub fn calibrate(set: &CalibrationSet) -> Result<Threshold, ScoreError> {
    if set.records.is_empty() {
        return Err(ScoreError::EmptyCalibrationSet);
    }
    for (index, record) in set.records.iter().enumerate() {
        if !record.certainty.is_finite() {
            return Err(ScoreError::NonFiniteCertainty { index });
        }
    }
    let mut sorted: Vec<f64> = set.records.iter().map(|r| r.certainty).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted.dedup();

    let mut candidates = sorted.clone();
    for pair in sorted.windows(2) {
        candidates.push((pair[0] + pair[1]) / 2.0);
    }
    candidates.push(sorted[sorted.len() - 1] + 1e-6);
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut best = Threshold {
        epsilon: candidates[0],
        objective: objective_at(set, candidates[0]),
    };
    for &epsilon in &candidates[1..] {
        let objective = objective_at(set, epsilon);
        if objective > best.objective {
            best = Threshold { epsilon, objective };
        }
    }
    Ok(best)
}

/// Parse a calibration file: one record per line, `run_id certainty label`,
/// delimited by whitespace or commas; `#` starts a comment.
pub fn parse_calibration_file(text: &str) -> Result<CalibrationSet, String> {
    let mut records = Vec::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        };
        let fields: Vec<&str> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|f| !f.is_empty())
            .collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 3 {
            return Err(format!(
                "line {line_no}: expected `run_id certainty label`, got {} fields",
                fields.len()
            ));
        }
        let certainty: f64 = fields[1]
            .parse()
            .map_err(|_| format!("line {line_no}: bad certainty `{}`", fields[1]))?;
        let label = match fields[2] {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(format!("line {line_no}: bad label `{other}` (want 0 or 1)")),
        };
        records.push(CalibrationRecord {
            run_id: fields[0].to_string(),
            certainty,
            label,
        });
    }
    Ok(CalibrationSet { records })
}
