use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use persumm_core::scoring::{
    pair_key, score, text_hash, HttpScorer, LexicalScorer, ScoreFixture, ScoreRequest, ScoreResponse, Scorer,
};
use persumm_core::Error;
use serde_json::{json, Value};

/// In-process stand-in for the scoring sidecar. Answers with the lexical
/// scorer, records every batch size, and fails on demand.
struct MockSidecar {
    url: String,
    batches: Arc<Mutex<Vec<usize>>>,
    hits: Arc<AtomicUsize>,
}

#[derive(Clone, Copy)]
enum Mode {
    Ok,
    ServerError,
    BadRequest,
    ShortReply,
}

fn spawn(mode: Mode) -> MockSidecar {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    let batches = Arc::new(Mutex::new(Vec::new()));
    let hits = Arc::new(AtomicUsize::new(0));
    let (b, h) = (batches.clone(), hits.clone());
    thread::spawn(move || {
        let lex = LexicalScorer::new(16);
        for mut req in server.incoming_requests() {
            h.fetch_add(1, Ordering::SeqCst);
            let mut body = String::new();
            req.as_reader().read_to_string(&mut body).unwrap();
            let (status, reply) = handle(&lex, mode, req.url(), &body, &b);
            let resp = tiny_http::Response::from_string(reply.to_string()).with_status_code(status).with_header(
                "Content-Type: application/json".parse::<tiny_http::Header>().unwrap(),
            );
            let _ = req.respond(resp);
        }
    });
    MockSidecar { url, batches, hits }
}

fn handle(lex: &LexicalScorer, mode: Mode, route: &str, body: &str, batches: &Mutex<Vec<usize>>) -> (u16, Value) {
    if route == "/v1/health" {
        return (200, json!({"status": "ok", "dim": 16}));
    }
    match mode {
        Mode::ServerError => return (503, json!({"error": "model warming up"})),
        Mode::BadRequest => return (400, json!({"error": "malformed body"})),
        _ => {}
    }
    let v: Value = serde_json::from_str(body).unwrap();
    let strings = |key: &str| -> Vec<String> {
        v[key].as_array().unwrap().iter().map(|s| s.as_str().unwrap().to_string()).collect()
    };
    let (n, mut reply) = match route {
        "/v1/embed" => {
            let texts = strings("texts");
            (texts.len(), json!({"vectors": lex.embed(&texts).unwrap()}))
        }
        "/v1/entail" => {
            let pairs: Vec<(String, String)> = v["pairs"]
                .as_array()
                .unwrap()
                .iter()
                .map(|p| (p[0].as_str().unwrap().to_string(), p[1].as_str().unwrap().to_string()))
                .collect();
            (pairs.len(), json!({"probs": lex.entail(&pairs).unwrap()}))
        }
        "/v1/relevance" => {
            let sents = strings("sentences");
            let q = v["question"].as_str().unwrap();
            (sents.len(), json!({"probs": lex.relevance(q, &sents).unwrap()}))
        }
        _ => return (404, json!({"error": "no such route"})),
    };
    batches.lock().unwrap().push(n);
    if let Mode::ShortReply = mode {
        for key in ["vectors", "probs"] {
            if let Some(a) = reply.get_mut(key).and_then(Value::as_array_mut) {
                a.pop();
            }
        }
    }
    (200, reply)
}

fn texts(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("sentence number {i} about topic{}", i % 7)).collect()
}

#[test]
fn all_endpoints_round_trip_in_order() {
    let mock = spawn(Mode::Ok);
    let client = HttpScorer::new(&mock.url);
    let lex = LexicalScorer::new(16);
    client.health().unwrap();

    let t = texts(5);
    assert_eq!(client.embed(&t).unwrap(), lex.embed(&t).unwrap());

    let pairs: Vec<(String, String)> = t.iter().zip(t.iter().rev()).map(|(a, b)| (a.clone(), b.clone())).collect();
    assert_eq!(client.entail(&pairs).unwrap(), lex.entail(&pairs).unwrap());

    let q = "what about topic3";
    assert_eq!(client.relevance(q, &t).unwrap(), lex.relevance(q, &t).unwrap());
}

#[test]
fn large_batches_are_chunked_at_64() {
    let mock = spawn(Mode::Ok);
    let client = HttpScorer::new(&mock.url);
    let t = texts(150);
    let got = client.embed(&t).unwrap();
    assert_eq!(got.len(), 150);
    assert_eq!(got, LexicalScorer::new(16).embed(&t).unwrap());
    assert_eq!(*mock.batches.lock().unwrap(), vec![64, 64, 22]);
}

#[test]
fn server_errors_are_retried_then_reported() {
    let mock = spawn(Mode::ServerError);
    let client = HttpScorer::new(&mock.url).with_retries(2);
    match client.embed(&texts(1)) {
        Err(Error::Transport { retries, message }) => {
            assert_eq!(retries, 2);
            assert!(message.contains("503") && message.contains("model warming up"), "{message}");
        }
        other => panic!("expected transport error, got {other:?}"),
    }
    assert_eq!(mock.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let mock = spawn(Mode::BadRequest);
    let client = HttpScorer::new(&mock.url).with_retries(2);
    assert!(matches!(client.relevance("q", &texts(2)), Err(Error::Transport { retries: 0, .. })));
    assert_eq!(mock.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn length_mismatch_is_a_transport_error() {
    let mock = spawn(Mode::ShortReply);
    let client = HttpScorer::new(&mock.url);
    assert!(matches!(client.embed(&texts(3)), Err(Error::Transport { .. })));
}

#[test]
fn unreachable_service_fails_health() {
    let client = HttpScorer::new("http://127.0.0.1:9").with_retries(0);
    assert!(matches!(client.health(), Err(Error::Transport { .. })));
}

#[test]
fn repeated_requests_are_identical() {
    let mock = spawn(Mode::Ok);
    let client = HttpScorer::new(&mock.url);
    let t = texts(70);
    assert_eq!(client.embed(&t).unwrap(), client.embed(&t).unwrap());
}

#[test]
fn fixture_reproduces_service_within_tolerance() {
    let mock = spawn(Mode::Ok);
    let client = HttpScorer::new(&mock.url);
    let t = texts(12);
    let q = "question on topic1 and topic2".to_string();
    let pairs: Vec<(String, String)> = t.iter().flat_map(|a| t.iter().take(3).map(move |b| (b.clone(), a.clone()))).collect();

    let mut fx = ScoreFixture::new(16);
    for (s, v) in t.iter().zip(client.embed(&t).unwrap()) {
        fx.embeddings.insert(text_hash(s), v);
    }
    for ((p, c), prob) in pairs.iter().zip(client.entail(&pairs).unwrap()) {
        fx.entailments.insert(pair_key(p, c), prob);
    }
    for (s, prob) in t.iter().zip(client.relevance(&q, &t).unwrap()) {
        fx.relevance.insert(pair_key(&q, s), prob);
    }
    // Round-trip through JSON, as a fixture file would.
    let fx: ScoreFixture = serde_json::from_str(&serde_json::to_string(&fx).unwrap()).unwrap();
    fx.validate().unwrap();

    let reqs = [
        ScoreRequest::Embed { texts: t.clone() },
        ScoreRequest::Entail { pairs: pairs.clone() },
        ScoreRequest::Relevance { question: q.clone(), sentences: t.clone() },
    ];
    for req in &reqs {
        match (score(req, &fx).unwrap(), score(req, &client).unwrap()) {
            (ScoreResponse::Vectors(a), ScoreResponse::Vectors(b)) => {
                for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
                    assert!((x - y).abs() <= 1e-6);
                }
            }
            (ScoreResponse::Probs(a), ScoreResponse::Probs(b)) => {
                assert_eq!(a.len(), b.len());
                assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-6));
            }
            _ => panic!("response kinds differ"),
        }
    }
}

#[test]
fn hashing_normalizes_case_and_whitespace() {
    assert_eq!(text_hash("Hello   World\n"), text_hash("hello world"));
    assert_eq!(text_hash("hello world").len(), 16);
    assert_ne!(text_hash("hello world"), text_hash("hello  worlds"));
}
