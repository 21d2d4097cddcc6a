#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use entail_guard::nli::EntailRequest;

/// Minimal single-threaded HTTP/1.1 server for protocol tests. The handler
/// maps each decoded request to a status code and a raw JSON body.
pub struct TestServer {
    pub url: String,
    pub requests: Arc<AtomicUsize>,
}

pub fn serve<F>(handler: F) -> TestServer
where
    F: Fn(EntailRequest) -> (u16, String) + Send + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let requests = Arc::new(AtomicUsize::new(0));
    let counter = requests.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        length = v.trim().parse().unwrap();
                    }
                }
            }
            let mut body = vec![0u8; length];
            reader.read_exact(&mut body).unwrap();
            counter.fetch_add(1, Ordering::SeqCst);
            let (status, reply) = if request_line.starts_with("POST /v1/entail ") {
                handler(serde_json::from_slice(&body).unwrap())
            } else {
                (404, "{}".to_string())
            };
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
        }
    });
    TestServer { url, requests }
}

/// An address nothing listens on.
pub fn dead_endpoint() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    format!("http://{addr}")
}

pub fn triple_json(n: usize, e: f64, nn: f64, c: f64) -> String {
    let one = format!(r#"{{"entailment":{e},"neutral":{nn},"contradiction":{c}}}"#);
    format!(r#"{{"judgments":[{}]}}"#, vec![one; n].join(","))
}

/// Spearman via exact integer arithmetic on doubled average ranks.
/// Independent of the library's sort-based ranking and float Pearson.
pub fn spearman_oracle(xs: &[f64], ys: &[f64]) -> f64 {
    fn doubled_ranks(v: &[f64]) -> Vec<i128> {
        v.iter()
            .map(|a| {
                let below = v.iter().filter(|b| *b < a).count() as i128;
                let equal = v.iter().filter(|b| *b == a).count() as i128;
                2 * below + equal + 1
            })
            .collect()
    }
    let (r, s) = (doubled_ranks(xs), doubled_ranks(ys));
    let n = r.len() as i128;
    let (sr, ss): (i128, i128) = (r.iter().sum(), s.iter().sum());
    let srs: i128 = r.iter().zip(&s).map(|(a, b)| a * b).sum();
    let srr: i128 = r.iter().map(|a| a * a).sum();
    let sss: i128 = s.iter().map(|a| a * a).sum();
    let num = n * srs - sr * ss;
    let dx = n * srr - sr * sr;
    let dy = n * sss - ss * ss;
    num as f64 / (dx as f64).sqrt() / (dy as f64).sqrt()
}

/// Synthetic dataset: 20 samples per task with a mock table whose outcomes
/// are fixed by design.
///
/// DM, pattern i % 4 with p_entail(hyp -> tgt) = 0.2, 0.9, 0.45, 0.7:
///   scores 0.8 H, 0.1 N, 0.55 H, 0.3 N; gold H, N, N, N -> 15/20 correct.
/// MT and PG, (src -> hyp, hyp -> src) = (0.9, 0.9), (0.9, 0.3), (0.3, 0.9), (0.2, 0.2):
///   unidirectional hyp2src scores 0.1 N, 0.7 H, 0.1 N, 0.8 H
///   bidirectional scores         0.1 N, 0.7 H, 0.7 H, 0.8 H
///   gold N, H, H, N -> uni 10/20, bi 15/20 correct.
pub struct Synthetic {
    pub dataset: String,
    pub table: String,
    pub uni_correct: usize,
    pub bi_correct: usize,
    pub unique_pairs: usize,
    pub len: usize,
}

pub fn synthetic() -> Synthetic {
    let mut records = Vec::new();
    let mut entries = Vec::new();
    let entry = |p: &str, h: &str, e: f64| {
        serde_json::json!({
            "premise": p, "hypothesis": h,
            "entailment": e, "neutral": (1.0 - e) / 2.0, "contradiction": (1.0 - e) / 2.0
        })
    };
    let dm_entail = [0.2, 0.9, 0.45, 0.7];
    let dm_gold = [("Hallucination", 0.8), ("Not Hallucination", 0.0), ("Not Hallucination", 0.4), ("Not Hallucination", 0.2)];
    for i in 0..20 {
        let k = i % 4;
        let (src, tgt, hyp) = (
            format!("dm context {i}"),
            format!("dm target definition {i}"),
            format!("dm model definition {i}"),
        );
        entries.push(entry(&hyp, &tgt, dm_entail[k]));
        records.push(serde_json::json!({
            "id": format!("dm-{i:02}"), "task": "DM", "src": src, "tgt": tgt, "hyp": hyp,
            "model": "", "label": dm_gold[k].0, "p(Hallucination)": dm_gold[k].1
        }));
    }
    let fwd_back = [(0.9, 0.9), (0.9, 0.3), (0.3, 0.9), (0.2, 0.2)];
    let eq_gold = [("Not Hallucination", 0.2), ("Hallucination", 0.8), ("Hallucination", 0.6), ("Not Hallucination", 0.4)];
    for task in ["MT", "PG"] {
        for i in 0..20 {
            let k = i % 4;
            let lower = task.to_lowercase();
            let (src, hyp) = (format!("{lower} source {i}"), format!("{lower} output {i}"));
            entries.push(entry(&src, &hyp, fwd_back[k].0));
            entries.push(entry(&hyp, &src, fwd_back[k].1));
            records.push(serde_json::json!({
                "id": format!("{lower}-{i:02}"), "task": task, "src": src, "tgt": "", "hyp": hyp,
                "model": "some-model", "label": eq_gold[k].0, "p(Hallucination)": eq_gold[k].1
            }));
        }
    }
    Synthetic {
        dataset: serde_json::to_string_pretty(&records).unwrap(),
        table: serde_json::to_string_pretty(&serde_json::json!({ "identity": "synthetic-mock", "entries": entries })).unwrap(),
        uni_correct: 15 + 10 + 10,
        bi_correct: 15 + 15 + 15,
        unique_pairs: 20 + 40 + 40,
        len: 60,
    }
}

pub fn bin() -> std::process::Command {
    std::process::Command::new(env!("CARGO_BIN_EXE_entail-guard"))
}

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn run_cli(args: &[&str]) -> Run {
    let out = bin().args(args).env_remove("ENTAIL_GUARD_MODEL_DIR").output().unwrap();
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}
