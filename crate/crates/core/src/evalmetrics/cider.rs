use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use super::{ngram_counts, MetricError, TokenSeq};

const MAX_N: usize = 4;

/// Per-example CIDEr (0–10): the mean over n = 1..4 of the cosine between
/// TF-IDF n-gram vectors, times 10. Document frequencies come from the
/// references; `idf = ln(N / max(1, df))`.
pub fn cider_per_example(candidates: &[TokenSeq], references: &[TokenSeq]) -> Result<Vec<f64>, MetricError> {
    if candidates.len() != references.len() {
        return Err(MetricError::LengthMismatch { candidates: candidates.len(), references: references.len() });
    }
    let n_docs = references.len();
    if n_docs < 2 {
        return Err(MetricError::CorpusTooSmall(n_docs));
    }
    let log_n = libm::log(n_docs as f64);
    let mut scores = alloc::vec![0.0; n_docs];
    for n in 1..=MAX_N {
        let ref_counts: Vec<BTreeMap<&[String], usize>> =
            references.iter().map(|r| ngram_counts(r.tokens(), n)).collect();
        let mut df: BTreeMap<&[String], usize> = BTreeMap::new();
        for counts in &ref_counts {
            for g in counts.keys() {
                *df.entry(*g).or_insert(0) += 1;
            }
        }
        let idf = |g: &[String]| log_n - libm::log(df.get(g).copied().unwrap_or(0).max(1) as f64);
        for (i, cand) in candidates.iter().enumerate() {
            let cc = ngram_counts(cand.tokens(), n);
            let rc = &ref_counts[i];
            let norm = |m: &BTreeMap<&[String], usize>| {
                libm::sqrt(m.iter().map(|(g, &k)| (k as f64 * idf(g)) * (k as f64 * idf(g))).sum::<f64>())
            };
            let (nc, nr) = (norm(&cc), norm(rc));
            if nc == 0.0 || nr == 0.0 {
                continue;
            }
            let dot: f64 = cc
                .iter()
                .filter_map(|(g, &k)| rc.get(g).map(|&kr| (k as f64 * idf(g)) * (kr as f64 * idf(g))))
                .sum();
            scores[i] += dot / (nc * nr);
        }
    }
    for s in &mut scores {
        *s *= 10.0 / MAX_N as f64;
    }
    Ok(scores)
}

/// Corpus CIDEr: the mean of the per-example scores.
pub fn cider(candidates: &[TokenSeq], references: &[TokenSeq]) -> Result<f64, MetricError> {
    let per = cider_per_example(candidates, references)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::super::tokenize;
    use super::*;
    use alloc::vec;

    #[test]
    fn self_similarity_is_ten() {
        let refs = vec![tokenize("open the file and read it"), tokenize("close the socket now please")];
        let v = cider(&refs, &refs).unwrap();
        assert!((v - 10.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn no_shared_ngrams_is_zero() {
        let refs = vec![tokenize("a b c d"), tokenize("e f g h")];
        let cands = vec![tokenize("x y z w"), tokenize("p q r s")];
        assert_eq!(cider(&cands, &refs).unwrap(), 0.0);
    }

    #[test]
    fn corpus_of_one_is_rejected() {
        let r = vec![tokenize("a")];
        assert_eq!(cider(&r, &r), Err(MetricError::CorpusTooSmall(1)));
    }
}
