use std::collections::HashMap;

use sotana_core::evalmetrics::{
    bleu_dc, cider, cider_per_example, meteor, pass_at_k, rouge_l, score_corpus, tokenize, MetricError, TokenSeq,
};

#[derive(serde::Deserialize)]
struct BleuCase {
    candidate: String,
    reference: String,
    bleu: f64,
}

#[test]
fn bleu_matches_recorded_nltk_values() {
    let text = include_str!("fixtures/bleu_nltk.jsonl");
    let cases: Vec<BleuCase> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(cases.len() >= 50);
    for c in &cases {
        let got = bleu_dc(&tokenize(&c.candidate), &tokenize(&c.reference)).unwrap();
        assert!((got - c.bleu).abs() <= 1e-6, "{:?} vs {:?}: {got} != {}", c.candidate, c.reference, c.bleu);
    }
}

#[test]
fn bleu_edges() {
    let r = tokenize("the cat sat on the mat");
    assert!((bleu_dc(&r, &r).unwrap() - 100.0).abs() < 1e-9);
    assert_eq!(bleu_dc(&tokenize("dog"), &r).unwrap(), 0.0);
    assert_eq!(bleu_dc(&TokenSeq::default(), &r).unwrap(), 0.0);
    assert_eq!(bleu_dc(&r, &TokenSeq::default()), Err(MetricError::EmptyReference));
}

#[test]
fn meteor_hand_values() {
    let four = tokenize("open the file now");
    assert_eq!(meteor(&four, &four).unwrap(), 99.21875);
    assert_eq!(meteor(&tokenize("x"), &tokenize("x")).unwrap(), 50.0);
    assert_eq!(meteor(&tokenize("a b"), &tokenize("c d")).unwrap(), 0.0);
    assert_eq!(meteor(&TokenSeq::default(), &four).unwrap(), 0.0);
    // m = 2, P = 1, R = 1/2, F = 0.5/(0.9 + 0.05), two chunks.
    let got = meteor(&tokenize("a c"), &tokenize("a b c d")).unwrap();
    let f = 0.5 / 0.95;
    let want = 100.0 * f * (1.0 - 0.5 * 1.0);
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

#[test]
fn rouge_hand_values_and_symmetry() {
    let c = tokenize("the cat");
    let r = tokenize("the cat sat on the mat");
    assert_eq!(rouge_l(&c, &r).unwrap(), 50.0);
    assert_eq!(rouge_l(&r, &r).unwrap(), 100.0);
    assert_eq!(rouge_l(&tokenize("x y"), &r).unwrap(), 0.0);
    let pairs = [("a b c d e", "a c e b"), ("one two", "two one three"), ("q", "q q q")];
    for (x, y) in pairs {
        let (x, y) = (tokenize(x), tokenize(y));
        assert_eq!(rouge_l(&x, &y).unwrap(), rouge_l(&y, &x).unwrap());
    }
}

/// TF-IDF cosine CIDEr written from the definition with string keys.
fn cider_brute(cands: &[&str], refs: &[&str]) -> f64 {
    let split = |s: &str| -> Vec<String> { s.split_whitespace().map(String::from).collect() };
    let grams = |toks: &[String], n: usize| -> HashMap<String, f64> {
        let mut m = HashMap::new();
        if toks.len() >= n {
            for i in 0..=toks.len() - n {
                *m.entry(toks[i..i + n].join("\u{1}")).or_insert(0.0) += 1.0;
            }
        }
        m
    };
    let big_n = refs.len() as f64;
    let mut total = 0.0;
    for i in 0..cands.len() {
        let mut per_n = 0.0;
        for n in 1..=4 {
            let ref_grams: Vec<HashMap<String, f64>> = refs.iter().map(|r| grams(&split(r), n)).collect();
            let idf = |g: &str| {
                let df = ref_grams.iter().filter(|m| m.contains_key(g)).count();
                (big_n / df.max(1) as f64).ln()
            };
            let weigh = |m: &HashMap<String, f64>| -> HashMap<String, f64> {
                m.iter().map(|(g, c)| (g.clone(), c * idf(g))).collect()
            };
            let vc = weigh(&grams(&split(cands[i]), n));
            let vr = weigh(&ref_grams[i]);
            let dot: f64 = vc.iter().map(|(g, x)| x * vr.get(g).unwrap_or(&0.0)).sum();
            let nc = vc.values().map(|x| x * x).sum::<f64>().sqrt();
            let nr = vr.values().map(|x| x * x).sum::<f64>().sqrt();
            if nc > 0.0 && nr > 0.0 {
                per_n += dot / (nc * nr);
            }
        }
        total += 10.0 * per_n / 4.0;
    }
    total / cands.len() as f64
}

#[test]
fn cider_matches_brute_force() {
    let refs = ["how do i read a file in python", "use pathinfo to get the extension", "the list is empty so return none"];
    let cands = ["read a file in python with open", "use pathinfo to get the file extension", "return none if list is empty"];
    let tk = |v: &[&str]| v.iter().map(|s| tokenize(s)).collect::<Vec<_>>();
    let got = cider(&tk(&cands), &tk(&refs)).unwrap();
    let want = cider_brute(&cands, &refs);
    assert!((got - want).abs() <= 1e-9, "{got} vs {want}");
    assert!(got > 0.0 && got < 10.0);
}

#[test]
fn cider_corpus_properties() {
    let refs: Vec<TokenSeq> = ["a b c d", "e f g h i", "j k l m"].iter().map(|s| tokenize(s)).collect();
    assert!((cider(&refs, &refs).unwrap() - 10.0).abs() < 1e-12);
    let cands: Vec<TokenSeq> = ["a b x d", "f g h", "m l k j"].iter().map(|s| tokenize(s)).collect();
    let base = cider(&cands, &refs).unwrap();
    let order = [2, 0, 1];
    let pc: Vec<TokenSeq> = order.iter().map(|&i| cands[i].clone()).collect();
    let pr: Vec<TokenSeq> = order.iter().map(|&i| refs[i].clone()).collect();
    assert!((cider(&pc, &pr).unwrap() - base).abs() < 1e-12);
    let none: Vec<TokenSeq> = ["x", "y", "z"].iter().map(|s| tokenize(s)).collect();
    assert_eq!(cider(&none, &refs).unwrap(), 0.0);
    assert_eq!(cider(&refs[..1], &refs[..1]), Err(MetricError::CorpusTooSmall(1)));
    assert_eq!(cider_per_example(&refs, &refs).unwrap().len(), 3);
}

#[test]
fn pass_at_k_equals_subset_enumeration() {
    for n in 1..=12u32 {
        for c in 0..=n {
            // Samples 0..c are the correct ones.
            let correct_mask: u32 = (1u32 << c) - 1;
            let mut total = vec![0u64; n as usize + 1];
            let mut hit = vec![0u64; n as usize + 1];
            for subset in 0u32..(1 << n) {
                let k = subset.count_ones() as usize;
                total[k] += 1;
                if subset & correct_mask != 0 {
                    hit[k] += 1;
                }
            }
            for k in 1..=n {
                let want = hit[k as usize] as f64 / total[k as usize] as f64;
                let got = pass_at_k(n as u64, c as u64, k as u64).unwrap();
                assert!((got - want).abs() <= 1e-12, "n={n} c={c} k={k}: {got} vs {want}");
            }
        }
    }
    assert_eq!(pass_at_k(5, 2, 1).unwrap(), 0.4);
}

#[test]
fn corpus_report_stays_in_range() {
    let ids: Vec<String> = (0..3).map(|i| format!("q{i}")).collect();
    let c: Vec<TokenSeq> = ["use pathinfo ( ) .", "call open", ""].iter().map(|s| tokenize(s)).collect();
    let r: Vec<TokenSeq> = ["use pathinfo ( ) .", "call open ( ) then read", "nothing here"].iter().map(|s| tokenize(s)).collect();
    let rep = score_corpus(&ids, &c, &r).unwrap();
    for e in &rep.per_example {
        for v in [e.bleu, e.meteor, e.rouge_l] {
            assert!((0.0..=100.0).contains(&v));
        }
    }
    assert!((0.0..=10.0).contains(&rep.corpus.cider));
    let mean = rep.per_example.iter().map(|e| e.rouge_l).sum::<f64>() / 3.0;
    assert_eq!(rep.corpus.rouge_l_mean, mean);
}
