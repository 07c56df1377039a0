use alloc::vec;
use alloc::vec::Vec;

use super::{MetricError, TokenSeq};

const ALPHA: f64 = 0.9;
const BETA: f64 = 3.0;
const GAMMA: f64 = 0.5;

/// METEOR with exact unigram matching, 0–100.
///
/// The alignment always has the maximum number of matches. Fewest chunks
/// is approximated by repeatedly aligning the longest common run of still
/// unmatched tokens (earliest candidate position, then earliest reference
/// position, on ties), which is exact whenever one run covers everything.
pub fn meteor(candidate: &TokenSeq, reference: &TokenSeq) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let (c, r) = (candidate.tokens(), reference.tokens());
    if c.is_empty() {
        return Ok(0.0);
    }
    let align = align_runs(c, r);
    let matches = align.iter().filter(|a| a.is_some()).count();
    if matches == 0 {
        return Ok(0.0);
    }
    let mut chunks = 0usize;
    let mut prev: Option<usize> = None;
    for a in &align {
        match (a, prev) {
            (Some(j), Some(pj)) if *j == pj + 1 => {}
            (Some(_), _) => chunks += 1,
            (None, _) => {}
        }
        prev = *a;
    }
    let m = matches as f64;
    let p = m / c.len() as f64;
    let rc = m / r.len() as f64;
    let f = p * rc / (ALPHA * p + (1.0 - ALPHA) * rc);
    let penalty = GAMMA * libm::pow(chunks as f64 / m, BETA);
    Ok(100.0 * f * (1.0 - penalty))
}

/// For each candidate position, the aligned reference position.
fn align_runs(c: &[alloc::string::String], r: &[alloc::string::String]) -> Vec<Option<usize>> {
    let mut align = vec![None; c.len()];
    let mut ref_used = vec![false; r.len()];
    let mut run = vec![0usize; r.len() + 1];
    loop {
        // Longest run ending at (i, j) over unmatched tokens, one DP row at a time.
        let mut best = (0usize, 0usize, 0usize);
        run.iter_mut().for_each(|v| *v = 0);
        for i in 0..c.len() {
            let mut diag = 0;
            for j in 0..r.len() {
                let up_left = diag;
                diag = run[j + 1];
                run[j + 1] = if align[i].is_none() && !ref_used[j] && c[i] == r[j] { up_left + 1 } else { 0 };
                let len = run[j + 1];
                let start = (i + 1 - len, j + 1 - len);
                if len > best.2 || (len == best.2 && len > 0 && start < (best.0, best.1)) {
                    best = (start.0, start.1, len);
                }
            }
        }
        let (ci, rj, len) = best;
        if len == 0 {
            return align;
        }
        for t in 0..len {
            align[ci + t] = Some(rj + t);
            ref_used[rj + t] = true;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::tokenize;
    use super::*;

    #[test]
    fn identical_four_tokens() {
        let s = tokenize("a b c d");
        assert_eq!(meteor(&s, &s).unwrap(), 99.21875);
    }

    #[test]
    fn single_token() {
        let s = tokenize("x");
        assert_eq!(meteor(&s, &s).unwrap(), 50.0);
    }

    #[test]
    fn disjoint_and_empty() {
        assert_eq!(meteor(&tokenize("a b"), &tokenize("c d")).unwrap(), 0.0);
        assert_eq!(meteor(&tokenize(""), &tokenize("c d")).unwrap(), 0.0);
    }

    #[test]
    fn swapped_halves_make_two_chunks() {
        // m = 4, chunks = 2: F = 1, penalty = 0.5 · (1/2)³
        let v = meteor(&tokenize("c d a b"), &tokenize("a b c d")).unwrap();
        assert_eq!(v, 100.0 * (1.0 - 0.5 * 0.125));
    }

    #[test]
    fn repeated_tokens_still_align_maximally() {
        // "the" appears twice on each side; all five tokens match in one run.
        let s = tokenize("the cat and the dog");
        let v = meteor(&s, &s).unwrap();
        assert_eq!(v, 100.0 * (1.0 - 0.5 / 125.0));
    }
}
