use super::{ngram_counts, MetricError, TokenSeq};

const MAX_N: usize = 4;
/// Chen-Cherry smoothing constant `K`.
const SMOOTH_K: f64 = 5.0;

/// Sentence-level BLEU-4 with smoothing method 4, on a 0–100 scale.
///
/// A zero-count precision at order `n` (the `m`-th such order) becomes
/// `1 / (2^m · K / ln |c|) / max(1, #n-grams)`; orders still at zero (a
/// one-token candidate) drop out of the geometric mean.
pub fn bleu_dc(candidate: &TokenSeq, reference: &TokenSeq) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let (c, r) = (candidate.tokens(), reference.tokens());
    let hyp_len = c.len();
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let mut numer = [0usize; MAX_N];
    let mut denom = [0usize; MAX_N];
    for n in 1..=MAX_N {
        let hyp = ngram_counts(c, n);
        let refc = ngram_counts(r, n);
        numer[n - 1] = hyp.iter().map(|(g, &k)| k.min(refc.get(g).copied().unwrap_or(0))).sum();
        denom[n - 1] = hyp.values().sum::<usize>().max(1);
    }
    if numer[0] == 0 {
        return Ok(0.0);
    }

    let mut p = [0.0f64; MAX_N];
    let mut inc = 1i32;
    for i in 0..MAX_N {
        p[i] = numer[i] as f64 / denom[i] as f64;
        if numer[i] == 0 && hyp_len > 1 {
            let smoothed = 1.0 / (libm::pow(2.0, inc as f64) * SMOOTH_K / libm::log(hyp_len as f64));
            p[i] = smoothed / denom[i] as f64;
            inc += 1;
        }
    }
    let log_sum: f64 = p.iter().filter(|&&x| x > 0.0).map(|&x| 0.25 * libm::log(x)).sum();
    let ref_len = r.len();
    let bp = if hyp_len > ref_len { 1.0 } else { libm::exp(1.0 - ref_len as f64 / hyp_len as f64) };
    Ok(100.0 * bp * libm::exp(log_sum))
}
