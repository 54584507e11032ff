use std::net::SocketAddr;

use pvguard_core::config::{AdapterConfig, PipelineConfig};
use pvguard_core::lexicon::Lexicon;
use pvguard_core::model::{synthesize_corpus, synthesize_pairs, HttpAdapterConfig};
use pvguard_core::pipeline::{BinaryCategory, Engine, LikertQuestion, ReviewCase, ReviewStatus, Routing};
use pvguard_server::{serve, ServeOptions};
use serde_json::{json, Value};

const TOKEN: &str = "secret";

async fn start(config: PipelineConfig) -> (String, tokio::sync::oneshot::Sender<()>) {
    let (tx, rx) = tokio::sync::oneshot::channel();
    let (addr_tx, addr_rx) = tokio::sync::oneshot::channel::<SocketAddr>();
    let opts = ServeOptions {
        store_path: None,
        token: Some(TOKEN.into()),
    };
    tokio::spawn(async move {
        serve(config, "127.0.0.1:0".parse().unwrap(), opts, |a| addr_tx.send(a).unwrap(), async {
            let _ = rx.await;
        })
        .await
        .unwrap();
    });
    (format!("http://{}", addr_rx.await.unwrap()), tx)
}

fn assessment(reviewer: &str, dosage_error: bool) -> Value {
    let likert: serde_json::Map<String, Value> = LikertQuestion::ALL.iter().map(|q| (q.as_str().to_string(), json!(4))).collect();
    json!({
        "reviewer_id": reviewer,
        "likert": likert,
        "binary_flags": {BinaryCategory::WrongDosage.as_str(): dosage_error},
        "free_text": "checked",
    })
}

#[tokio::test(flavor = "multi_thread")]
async fn review_workflow_over_http() {
    let (base, stop) = start(PipelineConfig::default()).await;
    let http = reqwest::Client::new();
    let lex = Lexicon::builtin();
    let doc = &synthesize_pairs(&lex, 1, 77)[0].doc;
    let post = |path: &str, body: &Value| http.post(format!("{base}{path}")).bearer_auth(TOKEN).json(body).send();

    let unauth = http.post(format!("{base}/api/cases")).json(doc).send().await.unwrap();
    assert_eq!(unauth.status(), 401);
    let body: Value = unauth.json().await.unwrap();
    assert_eq!(body["error"]["code"], "unauthorized");

    let first = post("/api/cases", &json!(doc)).await.unwrap();
    assert_eq!(first.status(), 201);
    let report: Value = first.json().await.unwrap();
    assert_eq!(report["routing"], "auto_pass", "{report}");
    let again = post("/api/cases", &json!(doc)).await.unwrap();
    assert_eq!(again.status(), 200);
    assert_eq!(again.json::<Value>().await.unwrap(), report);

    let bad = post("/api/cases", &json!({"case_id": "x"})).await.unwrap();
    assert_eq!(bad.status(), 400);
    assert_eq!(bad.json::<Value>().await.unwrap()["error"]["code"], "invalid_document");

    let id = &doc.case_id;
    let c: ReviewCase = post(&format!("/api/cases/{id}/assessments"), &assessment("a", false)).await.unwrap().json().await.unwrap();
    assert_eq!(c.status, ReviewStatus::InReview);
    let dup = post(&format!("/api/cases/{id}/assessments"), &assessment("a", false)).await.unwrap();
    assert_eq!(dup.status(), 409);
    assert_eq!(dup.json::<Value>().await.unwrap()["error"]["code"], "duplicate_reviewer");
    let c: ReviewCase = post(&format!("/api/cases/{id}/assessments"), &assessment("b", true)).await.unwrap().json().await.unwrap();
    assert_eq!(c.status, ReviewStatus::Disagreement);

    let queue: Vec<Value> = http.get(format!("{base}/api/queue?status=disagreement")).send().await.unwrap().json().await.unwrap();
    assert_eq!(queue.len(), 1);
    assert_eq!(queue[0]["routing"], "auto_pass");
    let bad_status = http.get(format!("{base}/api/queue?status=bogus")).send().await.unwrap();
    assert_eq!(bad_status.status(), 400);

    let mut record = assessment("senior", false);
    record["clinically_acceptable"] = json!(true);
    let c: ReviewCase = post(&format!("/api/cases/{id}/adjudication"), &record).await.unwrap().json().await.unwrap();
    assert_eq!(c.status, ReviewStatus::Closed);
    assert!(c.adjudication.unwrap().clinically_acceptable);
    let late = post(&format!("/api/cases/{id}/assessments"), &assessment("c", false)).await.unwrap();
    assert_eq!(late.json::<Value>().await.unwrap()["error"]["code"], "case_closed");

    let html = http.get(format!("{base}/api/cases/{id}/annotated")).send().await.unwrap();
    assert!(html.headers()["content-type"].to_str().unwrap().starts_with("text/html"));
    let html = html.text().await.unwrap();
    assert!(html.contains("panel target") && html.contains("drug-matched"));

    let missing = http.get(format!("{base}/api/cases/nope")).send().await.unwrap();
    assert_eq!(missing.status(), 404);
    assert_eq!(missing.json::<Value>().await.unwrap()["error"]["code"], "unknown_case");
    stop.send(()).unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn extraneous_documents_are_rejected() {
    let (base, stop) = start(PipelineConfig::default()).await;
    let http = reqwest::Client::new();
    let corpus = synthesize_corpus(&Lexicon::builtin(), 0, 4, 5);
    for item in corpus {
        let r: Value = http.post(format!("{base}/api/cases")).bearer_auth(TOKEN).json(&item.doc).send().await.unwrap().json().await.unwrap();
        assert_eq!(r["routing"], "reject");
        assert!(r.get("mismatch").is_none());
    }
    let all: Vec<Value> = http.get(format!("{base}/api/queue")).send().await.unwrap().json().await.unwrap();
    assert_eq!(all.len(), 4);
    stop.send(()).unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn http_adapter_talks_to_the_model_endpoints() {
    let (base, stop) = start(PipelineConfig::default()).await;
    let docs: Vec<_> = synthesize_pairs(&Lexicon::builtin(), 3, 8).into_iter().map(|p| p.doc).collect();
    let remote_cfg = PipelineConfig {
        adapter: AdapterConfig::Http(HttpAdapterConfig::new(base.clone())),
        ..PipelineConfig::default()
    };
    let (local, remote) = tokio::task::spawn_blocking(move || {
        let local = Engine::from_config(PipelineConfig::default()).unwrap();
        let remote = Engine::from_config(remote_cfg).unwrap();
        let out = (local.process_batch(&docs, 1), remote.process_batch(&docs, 2));
        drop(remote);
        out
    })
    .await
    .unwrap();
    for (l, r) in local.iter().zip(&remote) {
        assert_eq!(l.routing, Routing::AutoPass);
        assert_eq!(l.routing, r.routing);
        assert_eq!(l.target_text, r.target_text);
        assert_eq!(l.dluq.as_ref().unwrap().distance, r.dluq.as_ref().unwrap().distance);
    }
    let empty = reqwest::Client::new()
        .post(format!("{base}/v1/translate"))
        .json(&json!({"input": ""}))
        .send()
        .await
        .unwrap();
    assert_eq!(empty.status(), 400);
    stop.send(()).unwrap();
}
