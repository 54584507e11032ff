use std::collections::BTreeMap;

use pvguard_client::Client;
use pvguard_core::config::PipelineConfig;
use pvguard_core::lexicon::Lexicon;
use pvguard_core::model::synthesize_pairs;
use pvguard_core::pipeline::{LikertQuestion, ReviewStatus, ReviewerAssessment, Routing, Timestamp};
use pvguard_server::{serve, ServeOptions};

async fn start(token: Option<&str>) -> (String, tokio::sync::oneshot::Sender<()>) {
    let (tx, rx) = tokio::sync::oneshot::channel();
    let (addr_tx, addr_rx) = tokio::sync::oneshot::channel();
    let opts = ServeOptions {
        store_path: None,
        token: token.map(String::from),
    };
    tokio::spawn(async move {
        serve(PipelineConfig::default(), "127.0.0.1:0".parse().unwrap(), opts, |a| addr_tx.send(a).unwrap(), async {
            let _ = rx.await;
        })
        .await
        .unwrap();
    });
    (format!("http://{}", addr_rx.await.unwrap()), tx)
}

fn assessment(reviewer: &str) -> ReviewerAssessment {
    ReviewerAssessment {
        reviewer_id: reviewer.into(),
        likert: LikertQuestion::ALL.iter().map(|&q| (q, 5)).collect(),
        binary_flags: BTreeMap::new(),
        free_text: None,
        submitted_at: Timestamp::from_timestamp(1_700_000_000, 0).unwrap(),
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn client_drives_the_review_api() {
    let (base, stop) = start(Some("tok")).await;
    let client = Client::new(&base, Some("tok".into()));
    let docs: Vec<_> = synthesize_pairs(&Lexicon::builtin(), 3, 21).into_iter().map(|p| p.doc).collect();
    for d in &docs {
        assert_eq!(client.ingest(d).await.unwrap().routing, Routing::AutoPass);
    }
    let queue = client.queue(Some(ReviewStatus::Pending)).await.unwrap();
    assert_eq!(queue.len(), 3);
    let id = &docs[0].case_id;
    client.submit_assessment(id, &assessment("a")).await.unwrap();
    let c = client.submit_assessment(id, &assessment("b")).await.unwrap();
    assert_eq!(c.status, ReviewStatus::InReview);
    assert_eq!(client.close(id).await.unwrap().status, ReviewStatus::Closed);
    assert_eq!(client.case(id).await.unwrap().assessments.len(), 2);
    assert!(client.annotated_html(id).await.unwrap().contains("<!DOCTYPE html>"));

    let err = client.close(&docs[1].case_id).await.unwrap_err();
    assert_eq!(err.code(), Some("case_closed"));
    let anonymous = Client::new(&base, None);
    assert_eq!(anonymous.ingest(&docs[2]).await.unwrap_err().code(), Some("unauthorized"));
    assert_eq!(anonymous.case("missing").await.unwrap_err().code(), Some("unknown_case"));
    stop.send(()).unwrap();
}
