mod common;

use std::path::{Path, PathBuf};

use common::{dead_endpoint, run_cli, spearman_oracle, synthetic};
use entail_guard::dataset::{parse_predictions, Label};

fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, contents).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const THREE: &str = r#"[
  {"id":"a","task":"DM","src":"I jumped into the flaxcron to do some swimming.","tgt":"A pool of water.","hyp":"A slender, slender","model":"flan-t5-definition-en-base"},
  {"id":"b","task":"MT","src":"the dog sleeps","tgt":"","hyp":"the dog sleeps"},
  {"id":"c","task":"PG","src":"the cat sits","tgt":"","hyp":"an animal sits"}
]"#;

#[test]
fn detect_with_mock_writes_predictions_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "in.json", THREE);
    let out = dir.path().join("pred.json");
    let r = run_cli(&["detect", "--input", s(&input), "--backend", "mock", "--mode", "bi", "--output", s(&out)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let verdicts = parse_predictions(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(verdicts.len(), 3);
    // fallback rule: identical texts entail, others get 0.1
    assert_eq!(verdicts[1].score, 0.0);
    assert!((verdicts[0].score - 0.9).abs() < 1e-12);
    assert_eq!(verdicts[2].label, Label::Hallucination);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run-manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["mode"], "bidirectional");
    assert_eq!(manifest["config"]["threshold"], 0.5);
    assert_eq!(manifest["samples"], 3);
}

#[test]
fn missing_input_exits_one_with_usage() {
    let r = run_cli(&["detect", "--backend", "mock", "--mode", "bi", "--output", "x.json"]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("Usage"), "{}", r.stderr);
}

#[test]
fn unreadable_input_exits_one() {
    let r = run_cli(&["detect", "--input", "/nonexistent/in.json", "--backend", "mock", "--mode", "bi", "--output", "x.json"]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("/nonexistent/in.json"));
}

#[test]
fn unreachable_remote_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "in.json", THREE);
    let endpoint = dead_endpoint();
    let r = run_cli(&[
        "detect", "--input", s(&input), "--backend", "remote", "--endpoint", &endpoint,
        "--mode", "bi", "--output", s(&dir.path().join("p.json")),
    ]);
    assert_eq!(r.code, 2, "{}", r.stderr);
    assert!(r.stderr.contains("sample a"), "{}", r.stderr);
}

#[test]
fn remote_backend_through_cli() {
    let server = common::serve(|req| (200, common::triple_json(req.pairs.len(), 0.8, 0.1, 0.1)));
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "in.json", THREE);
    let out = dir.path().join("p.json");
    let spec = format!("remote:{}", server.url);
    let r = run_cli(&["detect", "--input", s(&input), "--backend", &spec, "--multilingual", "--mode", "uni", "--output", s(&out)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let v = parse_predictions(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(v.iter().all(|v| (v.score - 0.2).abs() < 1e-12));
    assert_eq!(v[0].provenance.backend, server.url);
}

#[test]
fn local_backend_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "in.json", THREE);
    let out = dir.path().join("p.json");
    let model_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/models/constant_enc");
    let status = common::bin()
        .args(["detect", "--input", s(&input), "--backend", "local", "--mode", "bi", "--output", s(&out)])
        .env("ENTAIL_GUARD_MODEL_DIR", &model_dir)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0), "{}", String::from_utf8_lossy(&status.stderr));
    let v = parse_predictions(&std::fs::read_to_string(&out).unwrap()).unwrap();
    // constant logits (2, 0, -2): score = 1 - 0.866813...
    assert!(v.iter().all(|v| (v.score - 0.133_186_667_802_665).abs() < 1e-6));
    assert_eq!(v[0].provenance.backend, "constant-enc");
}

#[test]
fn mt_routing_uses_separate_backend() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "in.json", THREE);
    let table = write(
        dir.path(),
        "mt.json",
        r#"{"identity":"mt-table","default":{"entailment":0.3,"neutral":0.4,"contradiction":0.3}}"#,
    );
    let out = dir.path().join("p.json");
    let mt = format!("mock:{}", s(&table));
    let r = run_cli(&["detect", "--input", s(&input), "--backend", "mock", "--backend-mt", &mt, "--mode", "bi", "--output", s(&out)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let v = parse_predictions(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v[1].provenance.backend, "mt-table");
    assert_eq!(v[0].provenance.backend, "mock");
    // identical src/hyp still entail under the identity rule
    assert_eq!(v[1].score, 0.0);
}

const GOLD_FOUR: &str = r#"[
  {"id":"1","task":"DM","tgt":"t one","hyp":"h one","label":"Hallucination","p(Hallucination)":0.8},
  {"id":"2","task":"PG","src":"same","hyp":"same","label":"Not Hallucination","p(Hallucination)":0.0},
  {"id":"3","task":"MT","src":"s three","hyp":"h three","label":"Hallucination","p(Hallucination)":0.6},
  {"id":"4","task":"PG","src":"a b","hyp":"a b","label":"Not Hallucination","p(Hallucination)":0.2}
]"#;

#[test]
fn evaluate_perfect_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let gold = write(dir.path(), "gold.json", GOLD_FOUR);
    let pred = dir.path().join("pred.json");
    let r = run_cli(&["detect", "--input", s(&gold), "--backend", "mock", "--mode", "bi", "--output", s(&pred)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let report = dir.path().join("report.md");
    let r = run_cli(&["evaluate", "--pred", s(&pred), "--gold", s(&gold), "--report", s(&report)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains("accuracy=1.000000"), "{}", r.stdout);
    assert!(r.stdout.lines().any(|l| l.starts_with("spearman=")));
    let md = std::fs::read_to_string(report).unwrap();
    assert!(md.contains("| mock | 1.000000 | 1.000000 | 1.000000 |"), "{md}");
}

#[test]
fn evaluate_without_gold_labels() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "in.json", THREE);
    let pred = dir.path().join("pred.json");
    assert_eq!(run_cli(&["detect", "--input", s(&input), "--backend", "mock", "--mode", "bi", "--output", s(&pred)]).code, 0);
    let r = run_cli(&["evaluate", "--pred", s(&pred), "--gold", s(&input)]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("gold annotation missing"), "{}", r.stderr);
}

#[test]
fn evaluate_id_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let gold = write(dir.path(), "gold.json", GOLD_FOUR);
    let pred = write(
        dir.path(),
        "pred.json",
        r#"[{"id":"zz","label":"Hallucination","p_hallucination":0.9,"mode":"bidirectional","judgments":[],
            "provenance":{"rule":"hyp_entails_tgt","decision":"threshold","threshold":0.5,"backend":"mock"}}]"#,
    );
    let r = run_cli(&["evaluate", "--pred", s(&pred), "--gold", s(&gold)]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("zz"));
}

/// Six hand-built predictions; expected values from a brute-force count and
/// the integer-rank Spearman oracle.
#[test]
fn evaluate_six_sample_fixture_matches_oracle() {
    let golds = [
        ("g1", "DM", "Hallucination", 1.0),
        ("g2", "DM", "Not Hallucination", 0.2),
        ("g3", "MT", "Hallucination", 0.6),
        ("g4", "MT", "Not Hallucination", 0.4),
        ("g5", "PG", "Hallucination", 0.8),
        ("g6", "PG", "Not Hallucination", 0.2),
    ];
    let preds = [
        ("g1", "Hallucination", 0.9),
        ("g2", "Hallucination", 0.7),
        ("g3", "Not Hallucination", 0.3),
        ("g4", "Not Hallucination", 0.1),
        ("g5", "Hallucination", 0.7),
        ("g6", "Not Hallucination", 0.05),
    ];
    let gold_json: Vec<_> = golds
        .iter()
        .map(|(id, task, label, p)| {
            serde_json::json!({"id": id, "task": task, "src": "s", "tgt": "t", "hyp": "h", "label": label, "p(Hallucination)": p})
        })
        .collect();
    let pred_json: Vec<_> = preds
        .iter()
        .map(|(id, label, score)| {
            serde_json::json!({"id": id, "label": label, "p_hallucination": score, "mode": "bidirectional", "judgments": [],
                "provenance": {"rule": "bidirectional_equivalence", "decision": "threshold", "threshold": 0.5, "backend": "mock"}})
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let gold = write(dir.path(), "gold.json", &serde_json::to_string(&gold_json).unwrap());
    let pred = write(dir.path(), "pred.json", &serde_json::to_string(&pred_json).unwrap());
    let report = dir.path().join("report.json");
    let r = run_cli(&["evaluate", "--pred", s(&pred), "--gold", s(&gold), "--report", s(&report)]);
    assert_eq!(r.code, 0, "{}", r.stderr);

    let correct = preds.iter().zip(&golds).filter(|(p, g)| p.1 == g.2).count();
    let expected_acc = correct as f64 / 6.0;
    let xs: Vec<f64> = preds.iter().map(|p| p.2).collect();
    let ys: Vec<f64> = golds.iter().map(|g| g.3).collect();
    let expected_rho = spearman_oracle(&xs, &ys);

    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert!((v["accuracy"].as_f64().unwrap() - expected_acc).abs() < 1e-12);
    assert!((v["spearman_rho"].as_f64().unwrap() - expected_rho).abs() < 1e-12);
    assert_eq!(v["confusion"]["tp"], 2);
    assert_eq!(v["confusion"]["fp"], 1);
    assert_eq!(v["confusion"]["tn"], 2);
    assert_eq!(v["confusion"]["fn"], 1);
    assert!(r.stdout.contains(&format!("accuracy={expected_acc:.6}")));
}

fn compare(dir: &Path, dataset: &str, table: Option<&str>) -> (common::Run, String) {
    let input = write(dir, "data.json", dataset);
    let out = dir.join("table.md");
    let mut args = vec!["compare".to_string(), "--input".into(), s(&input).into(), "--gold".into(), s(&input).into()];
    match table {
        Some(t) => {
            let t = write(dir, "table.json", t);
            args.extend(["--backend".into(), format!("mock:{}", s(&t))]);
        }
        None => args.extend(["--backend".into(), "mock".into()]),
    }
    args.extend(["--output".into(), s(&out).into(), "--stats".into()]);
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let r = run_cli(&refs);
    let md = std::fs::read_to_string(out).unwrap_or_default();
    (r, md)
}

#[test]
fn compare_detects_bidirectional_flips() {
    // samples 2 and 3 are caught only by the reverse direction
    let dataset = r#"[
      {"id":"1","task":"PG","src":"s1","hyp":"h1","label":"Not Hallucination","p(Hallucination)":0.0},
      {"id":"2","task":"PG","src":"s2","hyp":"h2","label":"Hallucination","p(Hallucination)":1.0},
      {"id":"3","task":"PG","src":"s3","hyp":"h3","label":"Hallucination","p(Hallucination)":0.8},
      {"id":"4","task":"PG","src":"s4","hyp":"h4","label":"Hallucination","p(Hallucination)":0.6}
    ]"#;
    let e = |p: &str, h: &str, v: f64| format!(
        r#"{{"premise":"{p}","hypothesis":"{h}","entailment":{v},"neutral":{n},"contradiction":0}}"#,
        n = 1.0 - v
    );
    let table = format!(
        r#"{{"entries":[{}]}}"#,
        [
            e("s1", "h1", 0.9), e("h1", "s1", 0.9),
            e("s2", "h2", 0.2), e("h2", "s2", 0.9),
            e("s3", "h3", 0.1), e("h3", "s3", 0.8),
            e("s4", "h4", 0.2), e("h4", "s4", 0.3),
        ]
        .join(",")
    );
    let dir = tempfile::tempdir().unwrap();
    let (r, md) = compare(dir.path(), dataset, Some(&table));
    assert_eq!(r.code, 0, "{}", r.stderr);
    // uni (hyp2src): 1 N ok, 2 N miss, 3 N miss, 4 H ok -> 0.5; bi: all correct
    assert!(md.contains("| mock | 0.500000 | 1.000000 |"), "{md}");
    assert!(r.stdout.contains("backend_calls=8"), "{}", r.stdout);
}

#[test]
fn compare_identical_texts_gives_equal_modes() {
    let dataset = r#"[
      {"id":"1","task":"PG","src":"x y","hyp":"x y","label":"Not Hallucination","p(Hallucination)":0.0},
      {"id":"2","task":"MT","src":"u v","hyp":"u v","label":"Hallucination","p(Hallucination)":0.8}
    ]"#;
    let dir = tempfile::tempdir().unwrap();
    let (r, md) = compare(dir.path(), dataset, None);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(md.contains("| mock | 0.500000 | 0.500000 |"), "{md}");
}

#[test]
fn compare_dm_only_is_mode_independent() {
    let dataset = r#"[
      {"id":"1","task":"DM","tgt":"a pool of water","hyp":"a slender slender","label":"Hallucination","p(Hallucination)":1.0},
      {"id":"2","task":"DM","tgt":"a container","hyp":"a container","label":"Hallucination","p(Hallucination)":0.6}
    ]"#;
    let dir = tempfile::tempdir().unwrap();
    let (r, md) = compare(dir.path(), dataset, None);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(md.contains("| mock | 0.500000 | 0.500000 |"), "{md}");
    assert!(r.stdout.contains("backend_calls=2"), "{}", r.stdout);
}

#[test]
fn replay_reproduces_predictions() {
    let fx = synthetic();
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "in.json", &fx.dataset);
    let table = write(dir.path(), "table.json", &fx.table);
    let out = dir.path().join("pred.json");
    let spec = format!("mock:{}", s(&table));
    let r = run_cli(&["detect", "--input", s(&input), "--backend", &spec, "--mode", "uni", "--direction", "src2hyp", "--output", s(&out)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let replayed = dir.path().join("again.json");
    let manifest = dir.path().join("run-manifest.json");
    let r = run_cli(&["replay", "--manifest", s(&manifest), "--output", s(&replayed)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&replayed).unwrap());
}

#[test]
fn lenient_run_records_failures() {
    let server = common::serve(|req| {
        if req.pairs.iter().any(|p| p.premise.contains("poison")) {
            (500, "{}".into())
        } else {
            (200, common::triple_json(req.pairs.len(), 0.9, 0.05, 0.05))
        }
    });
    let dataset = r#"[
      {"id":"ok","task":"PG","src":"fine","hyp":"good"},
      {"id":"bad","task":"PG","src":"poison","hyp":"good"}
    ]"#;
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "in.json", dataset);
    let out = dir.path().join("p.json");
    let spec = format!("remote:{}", server.url);
    let r = run_cli(&["detect", "--input", s(&input), "--backend", &spec, "--mode", "uni", "--direction", "src2hyp", "--lenient", "--batch-size", "1", "--output", s(&out)]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("sample bad"), "{}", r.stderr);
    let v = parse_predictions(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].id, "ok");
}
