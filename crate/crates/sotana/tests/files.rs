use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde_json::{json, Value};
use sotana::checkpoint::{self, CheckpointError, Kind};
use sotana::config::{ConfigError, RunConfig, KEYS};
use sotana::jsonl::{load_code_summaries, load_codegen_tasks, load_so_questions, read_strict, LoadError};
use sotana::report::{self, mean_std_cell, ReportError};
use sotana_core::corpus::{ExclusionReason, SoQuestion, BIGBLOCK};
use sotana_core::microlm::{FrozenWeight, LoraSpec, MicroModel, ModelConfig};
use sotana_core::rng::seeded;
use sotana_core::study::MeanStd;

fn write(path: &Path, text: &str) {
    std::fs::File::create(path).unwrap().write_all(text.as_bytes()).unwrap();
}

#[test]
fn so_file_with_506_records_loads_420() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("so.jsonl");
    let mut text = String::new();
    for i in 0..506 {
        // 86 tainted records, spread over title, body and answer.
        let tainted = i % 5 == 0 && i < 430;
        let mut q = SoQuestion {
            id: format!("{i}"),
            title: format!("Why does my loop skip items? {i}"),
            body: "I remove elements while iterating.".into(),
            answer: "Iterate over a copy.".into(),
        };
        if tainted {
            match i % 3 {
                0 => q.body = format!("code:\n{BIGBLOCK}\n"),
                1 => q.answer = format!("Try this: {BIGBLOCK}"),
                _ => q.title = format!("{BIGBLOCK} fails"),
            }
        }
        text.push_str(&serde_json::to_string(&q).unwrap());
        text.push('\n');
        if i == 10 {
            text.push('\n');
        }
    }
    write(&path, &text);
    let (qs, report) = load_so_questions(&path).unwrap();
    assert_eq!(qs.len(), 420);
    assert_eq!(report.loaded, 420);
    assert_eq!(report.count(ExclusionReason::Bigblock), 86);
    assert!(qs.iter().all(|q| !format!("{}{}{}", q.title, q.body, q.answer).contains(BIGBLOCK)));
}

#[test]
fn malformed_records_are_reported_with_line_numbers() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("so.jsonl");
    write(
        &path,
        "{\"id\":\"1\",\"title\":\"t\",\"body\":\"b\",\"answer\":\"a\"}\n{not json\n{\"id\":\"3\",\"title\":\" \",\"body\":\"b\",\"answer\":\"a\"}\n",
    );
    let (qs, report) = load_so_questions(&path).unwrap();
    assert_eq!(qs.len(), 1);
    assert_eq!(report.count(ExclusionReason::Malformed), 1);
    assert_eq!(report.count(ExclusionReason::EmptyField), 1);
    let lines: Vec<usize> = report.errors.iter().map(|e| e.line).collect();
    assert_eq!(lines, [2, 3]);

    let strict = read_strict::<SoQuestion>(&path).unwrap_err();
    assert!(matches!(strict, LoadError::Record { line: 2, .. }), "{strict}");
    assert!(matches!(load_so_questions(&tmp.path().join("missing.jsonl")), Err(LoadError::Io { .. })));
}

#[test]
fn summaries_and_codegen_tasks_load() {
    let tmp = tempfile::tempdir().unwrap();
    let summ = tmp.path().join("summ.jsonl");
    let mut text = String::new();
    for i in 0..30 {
        text.push_str(&json!({"code": format!("def f{i}(): pass"), "summary": format!("Defines f{i}.")}).to_string());
        text.push('\n');
    }
    write(&summ, &text);
    let (pairs, _) = load_code_summaries(&summ, 25).unwrap();
    assert_eq!(pairs.len(), 25);
    assert_eq!(pairs[24].code, "def f24(): pass");

    let tasks = tmp.path().join("tasks.jsonl");
    let task = json!({"task_id": "t/0", "prompt": "def f():\n", "tests": "def check(c):\n    assert c() == 1\n", "entry_point": "f"});
    write(&tasks, &format!("{task}\n"));
    let (ts, _) = load_codegen_tasks(&tasks).unwrap();
    assert_eq!(ts.len(), 1);
    assert_eq!(ts[0].entry_point, "f");
}

fn tiny() -> ModelConfig {
    ModelConfig { d_model: 16, n_layers: 1, n_heads: 2, d_ff: 32, max_seq_len: 32, ..ModelConfig::default() }
}

/// Base drawn from `seed`, adapters with non-zero B so they matter.
fn trained_like(seed: u64, int8: bool) -> MicroModel {
    let mut rng = seeded(seed);
    let mut m = MicroModel::new_base(tiny(), &mut rng).unwrap();
    if int8 {
        m.quantize_frozen();
    }
    let mut m = m.inject_lora(LoraSpec { rank: 4, ..LoraSpec::default() }, &mut seeded(99)).unwrap();
    for (i, l) in m.linears_mut().into_iter().enumerate() {
        let a = l.adapter_mut().unwrap();
        for (j, v) in a.b.data_mut().iter_mut().enumerate() {
            *v = ((i * 31 + j) % 17) as f64 * 0.01 - 0.08;
        }
    }
    m
}

#[test]
fn checkpoints_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    for int8 in [false, true] {
        let model = trained_like(5, int8);
        for kind in [Kind::Full, Kind::Adapters] {
            let path = tmp.path().join(format!("m-{int8}-{kind:?}.json"));
            checkpoint::save(&path, &model, 5, kind).unwrap();
            let back = checkpoint::load(&path).unwrap();
            assert_eq!(back.base_seed, 5);
            assert_eq!(back.model, model, "int8={int8} kind={kind:?}");
            let is_int8 = back.model.linears().iter().all(|l| matches!(l.weight(), FrozenWeight::Int8(_)));
            assert_eq!(is_int8, int8);
            let tokens = [1, 2, 3, 4];
            assert_eq!(back.model.logits(&tokens).unwrap(), model.logits(&tokens).unwrap());
        }
    }
    let full = std::fs::metadata(tmp.path().join("m-false-Full.json")).unwrap().len();
    let adapters = std::fs::metadata(tmp.path().join("m-false-Adapters.json")).unwrap().len();
    assert!(adapters < full);
}

#[test]
fn adapters_only_needs_adapters() {
    let tmp = tempfile::tempdir().unwrap();
    let base = MicroModel::new_base(tiny(), &mut seeded(1)).unwrap();
    let err = checkpoint::save(&tmp.path().join("x.json"), &base, 1, Kind::Adapters).unwrap_err();
    assert!(matches!(err, CheckpointError::Model { .. }));
}

fn edit(path: &Path, f: impl FnOnce(&mut Value)) {
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    f(&mut v);
    write(path, &v.to_string());
}

#[test]
fn bad_checkpoints_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let model = trained_like(2, false);
    let path = tmp.path().join("a.json");

    checkpoint::save(&path, &model, 2, Kind::Adapters).unwrap();
    edit(&path, |v| v["version"] = json!(2));
    assert!(matches!(checkpoint::load(&path), Err(CheckpointError::Version { found: 2, .. })));

    checkpoint::save(&path, &model, 2, Kind::Adapters).unwrap();
    edit(&path, |v| v["format"] = json!("something-else"));
    assert!(matches!(checkpoint::load(&path), Err(CheckpointError::Format { .. })));

    // A and B swapped: each factor is well formed but the shapes do not fit.
    checkpoint::save(&path, &model, 2, Kind::Adapters).unwrap();
    edit(&path, |v| {
        let ad = &mut v["adapters"][0]["adapter"];
        let a = ad["a"].take();
        ad["a"] = ad["b"].take();
        ad["b"] = a;
    });
    assert!(matches!(checkpoint::load(&path), Err(CheckpointError::Model { .. })));

    checkpoint::save(&path, &model, 2, Kind::Adapters).unwrap();
    edit(&path, |v| {
        v["adapters"].as_array_mut().unwrap().pop();
    });
    assert!(checkpoint::load(&path).is_err());

    write(&path, "not json");
    assert!(matches!(checkpoint::load(&path), Err(CheckpointError::Format { .. })));
}

#[test]
fn config_file_then_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("run.conf");
    write(&path, "# sweep run\ntrain.rank = 4\nrng_seed=11\nforge.model = \"local-model\"  # quoted\n\n");
    let mut cfg = RunConfig::from_file(&path).unwrap();
    assert_eq!(cfg.usize("train.rank").unwrap(), 4);
    assert_eq!(cfg.rng_seed().unwrap(), 11);
    assert_eq!(cfg.str("forge.model"), "local-model");
    cfg.set_pair("train.rank=16").unwrap();
    assert_eq!(cfg.train_config().unwrap().rank, 16);
    assert_eq!(cfg.train_config().unwrap().rng_seed, 11);

    let echo = cfg.echo();
    for (key, _, _) in KEYS {
        assert!(echo.contains(&format!("{key} = ")), "{key} missing from echo");
    }

    let bad = tmp.path().join("bad.conf");
    write(&bad, "train.rnak = 4\n");
    assert!(matches!(RunConfig::from_file(&bad), Err(ConfigError::UnknownKey { .. })));
    write(&bad, "train.rank 4\n");
    assert!(matches!(RunConfig::from_file(&bad), Err(ConfigError::Syntax { .. })));
    let mut cfg = RunConfig::default();
    cfg.set_pair("train.rank=lots").unwrap();
    assert!(matches!(cfg.train_config(), Err(ConfigError::BadValue { .. })));
}

#[test]
fn every_config_key_is_documented() {
    let doc = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/config.md")).unwrap();
    for (key, default, _) in KEYS {
        assert!(doc.contains(&format!("`{key}`")), "{key} missing from docs/config.md");
        assert!(doc.contains(default), "default of {key} missing from docs/config.md");
    }
}

#[test]
fn mean_std_cells() {
    assert_eq!(mean_std_cell(&MeanStd { mean: 2.5183, std: 0.7449 }), "2.52 (±0.74)");
    assert_eq!(mean_std_cell(&MeanStd::of(&[1.0, 3.0])), "2.00 (±1.00)");
}

fn metric_file(dir: &Path, name: &str, bleu: f64) -> std::path::PathBuf {
    let path = dir.join(format!("{name}.json"));
    let ids = vec!["a".to_string(), "b".to_string()];
    let toks = |s: &str| sotana_core::evalmetrics::tokenize(s);
    let mut r = sotana_core::evalmetrics::score_corpus(
        &ids,
        &[toks("use a list comprehension"), toks("call sorted")],
        &[toks("use a list comprehension here"), toks("call sorted with a key")],
    )
    .unwrap();
    r.corpus.bleu_mean = bleu;
    sotana::jsonl::write_json(&path, &r).unwrap();
    path
}

#[test]
fn report_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let a = metric_file(tmp.path(), "ours", 12.3456);
    let b = metric_file(tmp.path(), "baseline", 7.0);
    let pass = tmp.path().join("codegen.json");
    let pr = sotana_core::evalmetrics::pass_report(1, &[("t0".into(), 1, 1), ("t1".into(), 1, 0)]).unwrap();
    sotana::jsonl::write_json(&pass, &pr).unwrap();

    let out = report::render_files(&[a, b, pass]).unwrap();
    let header = out.text.lines().find(|l| l.starts_with("Run ") && l.contains("BLEU")).unwrap();
    let cols: Vec<&str> = header.split_whitespace().collect();
    assert_eq!(cols, ["Run", "BLEU", "Meteor", "Rouge-L", "Cider"]);
    assert!(out.text.lines().any(|l| l.starts_with("ours") && l.contains("12.35")));
    assert!(out.text.lines().any(|l| l.starts_with("codegen") && l.trim_end().ends_with("50.00")));
    let names: Vec<&str> = out.csv.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["metrics", "pass"]);
    let mut rdr = csv::Reader::from_reader(out.csv[0].1.as_bytes());
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(&rows[1][0], "baseline");
    assert_eq!(&rows[1][1], "7.00");
}

#[test]
fn report_errors_name_the_file_and_field() {
    assert_eq!(report::render_files(&[]), Err(ReportError::NoInputs));
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("broken.json");
    write(&path, r#"{"per_task": [], "k": 1}"#);
    match report::render_files(&[path.clone()]) {
        Err(ReportError::Schema { path: p, field, .. }) => {
            assert_eq!(p, path);
            assert_eq!(field, "$.pass_at_k");
        }
        other => panic!("unexpected {other:?}"),
    }
    write(&path, r#"{"rows": []}"#);
    assert!(matches!(report::render_files(&[path.clone()]), Err(ReportError::Schema { ref field, .. }) if field == "$"));
    write(&path, "[1, 2");
    assert!(matches!(report::render_files(&[path]), Err(ReportError::Unreadable { .. })));
}

#[test]
fn study_report_renders_human_table() {
    use sotana::report::StudyReport;
    use sotana_core::study::{AggregateTable, AgreementReport, Dimension, ModelScores};
    let ms = |m| MeanStd { mean: m, std: 0.5 };
    let mut models = BTreeMap::new();
    models.insert(
        "tuned".to_string(),
        ModelScores { pairs: 225, alignment: ms(2.518), accuracy: ms(2.0), readability: ms(2.9) },
    );
    let alpha = Dimension::ALL.iter().map(|d| (*d, Some(0.61))).collect();
    let rep = StudyReport {
        aggregate: AggregateTable { models, excluded: vec![] },
        agreement: AgreementReport { alpha_per_dimension: alpha, pairwise_tau: vec![] },
    };
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("study.json");
    sotana::jsonl::write_json(&path, &rep).unwrap();
    let out = report::render_files(&[path]).unwrap();
    let row = out.text.lines().find(|l| l.starts_with("tuned")).unwrap();
    assert!(row.contains("225") && row.contains("2.52 (±0.50)") && row.contains("2.90 (±0.50)"), "{row}");
    assert!(out.text.contains("0.610"));
}
