use alloc::string::String;
use alloc::vec;

use super::{MetricError, TokenSeq};

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// ROUGE-L F1 on a 0–100 scale.
pub fn rouge_l(candidate: &TokenSeq, reference: &TokenSeq) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let l = lcs_len(candidate.tokens(), reference.tokens());
    if l == 0 {
        return Ok(0.0);
    }
    // 2PR / (P + R) with P = l/|c| and R = l/|r|, without the rounding of
    // the two divisions.
    Ok(100.0 * 2.0 * l as f64 / (candidate.len() + reference.len()) as f64)
}
