use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use crpo::providers::{
    BackendError, FnBackend, Input, Payload, ProviderClient, ProviderConfig, ProviderError, ProviderKind,
};

fn cfg(kind: ProviderKind) -> ProviderConfig {
    ProviderConfig::new(kind, "test")
}

type Calls = Arc<Mutex<Vec<Vec<String>>>>;
type BackendResult = Result<Vec<Payload>, BackendError>;

/// Reward backend scoring `chars / 10` and logging every request.
fn logging_reward() -> (Calls, FnBackend<impl Fn(ProviderKind, &[Input]) -> BackendResult>) {
    let calls: Calls = Arc::default();
    let log = calls.clone();
    let backend = FnBackend(move |_kind: ProviderKind, inputs: &[Input]| {
        let mut seen = Vec::new();
        let out = inputs
            .iter()
            .map(|i| match i {
                Input::Pair { response, .. } => {
                    seen.push(response.clone());
                    Payload::Scalar(response.chars().count() as f64 / 10.0)
                }
                Input::Text(t) => {
                    seen.push(t.clone());
                    Payload::Scalar(0.0)
                }
            })
            .collect();
        log.lock().unwrap().push(seen);
        Ok(out)
    });
    (calls, backend)
}

fn pairs(n: usize) -> Vec<(String, String)> {
    (0..n).map(|i| ("prompt".to_string(), format!("response {i}"))).collect()
}

#[test]
fn duplicates_are_sent_once() {
    let (calls, backend) = logging_reward();
    let client = ProviderClient::new(cfg(ProviderKind::Reward), Box::new(backend), None).unwrap();
    let mut items = pairs(3);
    items.push(items[0].clone());
    // canonically equal to the second item
    items.push(("prompt ".to_string(), " response 1".to_string()));
    let scores = client.reward_batch(&items).unwrap();
    assert_eq!(scores[0], scores[3]);
    assert_eq!(scores[1], scores[4]);
    assert_eq!(calls.lock().unwrap().len(), 1);
    assert_eq!(calls.lock().unwrap()[0].len(), 3);
    let c = client.counters();
    assert_eq!((c.upstream_calls, c.misses, c.cache_hits), (1, 3, 2));

    client.reward_batch(&items).unwrap();
    assert_eq!(calls.lock().unwrap().len(), 1);
    assert_eq!(client.counters().cache_hits, 7);
}

#[test]
fn requests_are_chunked_by_max_batch() {
    let (calls, backend) = logging_reward();
    let mut c = cfg(ProviderKind::Reward);
    c.max_batch = 4;
    let client = ProviderClient::new(c, Box::new(backend), None).unwrap();
    let scores = client.reward_batch(&pairs(10)).unwrap();
    assert_eq!(scores.len(), 10);
    let sizes: Vec<usize> = calls.lock().unwrap().iter().map(Vec::len).collect();
    assert_eq!(sizes, vec![4, 4, 2]);
    assert_eq!(scores[9], "response 9".len() as f64 / 10.0);
}

#[test]
fn transient_failures_are_retried() {
    let attempts = Arc::new(AtomicUsize::new(0));
    let n = attempts.clone();
    let backend = FnBackend(move |_: ProviderKind, inputs: &[Input]| {
        if n.fetch_add(1, Ordering::SeqCst) < 2 {
            return Err(BackendError { message: "busy".into(), failed: vec![1] });
        }
        Ok(inputs.iter().map(|_| Payload::Scalar(1.0)).collect())
    });
    let client = ProviderClient::new(cfg(ProviderKind::Reward), Box::new(backend), None).unwrap();
    assert_eq!(client.reward_batch(&pairs(3)).unwrap(), vec![1.0; 3]);
    assert_eq!(client.counters().upstream_calls, 3);
}

#[test]
fn persistent_failure_reports_indices() {
    let backend =
        FnBackend(|_: ProviderKind, _: &[Input]| Err(BackendError { message: "nope".into(), failed: vec![0] }));
    let mut c = cfg(ProviderKind::Reward);
    c.retries = 1;
    let client = ProviderClient::new(c, Box::new(backend), None).unwrap();
    let mut items = pairs(2);
    items.push(items[0].clone());
    match client.reward_batch(&items) {
        Err(ProviderError::Failed { attempts, indices, message, .. }) => {
            assert_eq!(attempts, 2);
            assert_eq!(indices, vec![0, 2]);
            assert_eq!(message, "nope");
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(client.counters().upstream_calls, 2);
}

#[test]
fn invalid_inputs_and_outputs_are_rejected() {
    let (_, backend) = logging_reward();
    let client = ProviderClient::new(cfg(ProviderKind::Reward), Box::new(backend), None).unwrap();
    let err = client.reward_batch(&[("p".into(), "ok".into()), ("p".into(), "  ".into())]).unwrap_err();
    assert!(matches!(err, ProviderError::InvalidInput { index: 1, .. }), "{err}");

    let backend = FnBackend(|_: ProviderKind, inputs: &[Input]| {
        Ok(inputs.iter().map(|_| Payload::Logprobs(vec![-0.5, 0.25])).collect())
    });
    let client = ProviderClient::new(cfg(ProviderKind::Likelihood), Box::new(backend), None).unwrap();
    let err = client.loglikelihood("p", "r").unwrap_err();
    assert!(matches!(err, ProviderError::InvalidOutput { index: 0, .. }), "{err}");

    let backend = FnBackend(|_: ProviderKind, inputs: &[Input]| {
        Ok(inputs.iter().enumerate().map(|(i, _)| Payload::Vector(vec![1.0; i + 1])).collect())
    });
    let client = ProviderClient::new(cfg(ProviderKind::Embedding), Box::new(backend), None).unwrap();
    let err = client.embed_batch(&["a".into(), "b".into()]).unwrap_err();
    assert!(matches!(err, ProviderError::InvalidOutput { index: 1, .. }), "{err}");
}

#[test]
fn cache_survives_a_new_client() {
    let dir = tempfile::tempdir().unwrap();
    let (calls, backend) = logging_reward();
    let first = ProviderClient::new(cfg(ProviderKind::Reward), Box::new(backend), Some(dir.path())).unwrap();
    let a = first.reward_batch(&pairs(5)).unwrap();
    drop(first);
    assert!(dir.path().join("reward.jsonl").exists());

    let (calls2, backend) = logging_reward();
    let second = ProviderClient::new(cfg(ProviderKind::Reward), Box::new(backend), Some(dir.path())).unwrap();
    assert_eq!(second.reward_batch(&pairs(5)).unwrap(), a);
    assert_eq!(calls.lock().unwrap().len(), 1);
    assert!(calls2.lock().unwrap().is_empty());
    let c = second.counters();
    assert_eq!((c.upstream_calls, c.misses, c.cache_hits), (0, 0, 5));

    // a different model id does not share entries
    let (calls3, backend) = logging_reward();
    let mut other = cfg(ProviderKind::Reward);
    other.model_id = "other".into();
    let third = ProviderClient::new(other, Box::new(backend), Some(dir.path())).unwrap();
    third.reward_batch(&pairs(5)).unwrap();
    assert_eq!(calls3.lock().unwrap().len(), 1);
}

#[test]
fn torn_cache_line_is_ignored() {
    let dir = tempfile::tempdir().unwrap();
    let (_, backend) = logging_reward();
    let client = ProviderClient::new(cfg(ProviderKind::Reward), Box::new(backend), Some(dir.path())).unwrap();
    client.reward_batch(&pairs(2)).unwrap();
    drop(client);
    let path = dir.path().join("reward.jsonl");
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("{\"key\": \"abc\", \"payl");
    std::fs::write(&path, text).unwrap();
    let (calls, backend) = logging_reward();
    let client = ProviderClient::new(cfg(ProviderKind::Reward), Box::new(backend), Some(dir.path())).unwrap();
    client.reward_batch(&pairs(2)).unwrap();
    assert!(calls.lock().unwrap().is_empty());
    // an entry appended after the torn line survives
    client.reward_batch(&pairs(3)).unwrap();
    drop(client);
    let (calls, backend) = logging_reward();
    let client = ProviderClient::new(cfg(ProviderKind::Reward), Box::new(backend), Some(dir.path())).unwrap();
    client.reward_batch(&pairs(3)).unwrap();
    assert!(calls.lock().unwrap().is_empty());
}

/// Serves `replies` in order, one connection each, and returns the request
/// bodies it saw.
fn serve(replies: Vec<(u16, String)>) -> (String, thread::JoinHandle<Vec<(String, String)>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/score", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let mut seen = Vec::new();
        for (status, body) in replies {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            let mut auth = String::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = line.trim().to_string();
                }
                if line == "\r\n" || line.is_empty() {
                    break;
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            seen.push((String::from_utf8(buf).unwrap(), auth));
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
        seen
    });
    (url, handle)
}

#[test]
fn http_backend_round_trip_with_retry() {
    let (url, server) = serve(vec![
        (503, "{}".into()),
        (200, r#"{"outputs": [0.25, null]}"#.into()),
        (200, r#"{"outputs": [0.25, 0.75]}"#.into()),
    ]);
    let mut c = ProviderConfig::new(ProviderKind::Reward, url);
    c.model_id = "rm-small".into();
    c.bearer_token = Some("secret".into());
    c.timeout_ms = 5_000;
    let client = ProviderClient::from_config(c, None).unwrap();
    let scores = client.reward_batch(&[("p".into(), "one".into()), ("p".into(), "two".into())]).unwrap();
    assert_eq!(scores, vec![0.25, 0.75]);
    assert_eq!(client.counters().upstream_calls, 3);

    let seen = server.join().unwrap();
    let body: serde_json::Value = serde_json::from_str(&seen[0].0).unwrap();
    assert_eq!(body["model"], "rm-small");
    assert_eq!(body["inputs"][1]["response"], "two");
    assert_eq!(seen[0].1, "Authorization: Bearer secret");
}

#[test]
fn http_backend_gives_up_after_retries() {
    let (url, server) = serve(vec![(500, "{}".into()), (500, "{}".into())]);
    let mut c = ProviderConfig::new(ProviderKind::Embedding, url);
    c.retries = 1;
    let client = ProviderClient::from_config(c, None).unwrap();
    let err = client.embed_batch(&["x".into()]).unwrap_err();
    assert!(matches!(err, ProviderError::Failed { attempts: 2, .. }), "{err}");
    server.join().unwrap();
}

#[test]
fn endpoint_schemes() {
    let err = ProviderClient::from_config(ProviderConfig::new(ProviderKind::Reward, ""), None).err().unwrap();
    assert!(matches!(err, ProviderError::NoEndpoint { .. }));
    let err = ProviderClient::from_config(ProviderConfig::new(ProviderKind::Reward, "ftp://x"), None).err().unwrap();
    assert!(matches!(err, ProviderError::Config { .. }));
    let err = ProviderClient::from_config(ProviderConfig::new(ProviderKind::Reward, "stub:bogus"), None).err().unwrap();
    assert!(matches!(err, ProviderError::Config { .. }));
    let c = ProviderClient::from_config(ProviderConfig::new(ProviderKind::Likelihood, "stub:uniform:8"), None).unwrap();
    let lp = c.loglikelihood("p", "three word answer").unwrap();
    assert_eq!(lp, vec![-(8f64.ln()); 3]);
}

#[test]
fn file_store_lookup() {
    use crpo::providers::store_line;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.jsonl");
    let line = store_line(ProviderKind::Reward, &Input::pair("Prompt", "Answer"), &Payload::Scalar(0.5));
    std::fs::write(&path, format!("{line}\n\n")).unwrap();
    let c = ProviderClient::from_config(ProviderConfig::new(ProviderKind::Reward, path.display().to_string()), None)
        .unwrap();
    // canonical forms share a digest
    assert_eq!(c.reward(" Prompt", "Answer ").unwrap(), 0.5);
    let err = c.reward("Prompt", "Other").unwrap_err();
    assert!(matches!(err, ProviderError::Failed { ref indices, .. } if indices == &vec![0]), "{err}");
}
