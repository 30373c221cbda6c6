//! HTTP providers against a throwaway local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use hiertree_core::data::{EmbedError, EmbeddingProvider, HttpEmbeddingProvider};
use hiertree_core::gateway::{
    DescriptionProvider, Gateway, GatewayError, GatewaySettings, HttpChatProvider, ProviderError,
    ProviderRequest, ResponseCache, TemplateSet,
};
use serde_json::{json, Value};

type Handler = dyn Fn(usize, &Value) -> (u16, String) + Send + Sync;
/// Request bodies with their Authorization header, in arrival order.
type Log = Arc<Mutex<Vec<(Value, Option<String>)>>>;

struct Server {
    url: String,
    hits: Arc<AtomicUsize>,
    bodies: Log,
}

/// Serves one JSON POST per connection; `handler` gets the request ordinal and body.
fn serve(handler: Box<Handler>) -> Server {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let bodies: Log = Arc::new(Mutex::new(Vec::new()));
    let (h, b) = (hits.clone(), bodies.clone());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            let mut auth = None;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = Some(line["authorization:".len()..].trim().to_string());
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let value: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
            let n = h.fetch_add(1, Ordering::SeqCst);
            b.lock().unwrap().push((value.clone(), auth));
            let (status, text) = handler(n, &value);
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            );
            let _ = stream.write_all(reply.as_bytes());
        }
    });
    Server { url, hits, bodies }
}

fn chat_reply(content: &str) -> String {
    json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

fn request(prompt: &str) -> ProviderRequest {
    ProviderRequest {
        template: "initial".into(),
        system: "be brief".into(),
        prompt: prompt.into(),
        temperature: 0.0,
        max_tokens: 64,
    }
}

#[test]
fn chat_provider_sends_openai_shape_and_reads_content() {
    let server = serve(Box::new(|_, _| (200, chat_reply("- whiskers"))));
    let p = HttpChatProvider::new(
        &server.url,
        Some("k123".into()),
        "m1",
        Duration::from_secs(5),
    )
    .unwrap();
    let r = p.complete(&request("describe a cat")).unwrap();
    assert_eq!(r.text, "- whiskers");
    assert_eq!(r.provider_id, "http:m1");

    let (body, auth) = server.bodies.lock().unwrap()[0].clone();
    assert_eq!(auth.as_deref(), Some("Bearer k123"));
    assert_eq!(body["model"], "m1");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["max_tokens"], 64);
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["content"], "describe a cat");
}

#[test]
fn chat_provider_error_kinds() {
    let server = serve(Box::new(|n, _| match n {
        0 => (503, "busy".into()),
        1 => (401, "no".into()),
        _ => (200, "{\"choices\": []}".into()),
    }));
    let p = HttpChatProvider::new(&server.url, None, "m", Duration::from_secs(5)).unwrap();
    let e = p.complete(&request("a")).unwrap_err();
    assert!(e.is_transient(), "{e}");
    let e = p.complete(&request("a")).unwrap_err();
    assert_eq!(
        e,
        ProviderError::Status {
            status: 401,
            body: "no".into()
        }
    );
    assert!(!e.is_transient());
    assert!(matches!(
        p.complete(&request("a")),
        Err(ProviderError::BadResponse(_))
    ));
}

fn gateway_for(url: &str, cache: ResponseCache, attempts: u32) -> Gateway {
    let settings = GatewaySettings {
        max_attempts: attempts,
        backoff_base: Duration::from_millis(1),
        ..GatewaySettings::default()
    };
    let p = HttpChatProvider::new(url, None, "m", Duration::from_secs(5)).unwrap();
    Gateway::new(Arc::new(p), cache, TemplateSet::default(), settings).unwrap()
}

#[test]
fn gateway_retries_transient_failures_then_caches() {
    let server = serve(Box::new(|n, _| {
        if n < 2 {
            (500, "oops".into())
        } else {
            (200, chat_reply("- mane\n- tawny coat"))
        }
    }));
    let dir = tempfile::tempdir().unwrap();
    let g = gateway_for(&server.url, ResponseCache::open(dir.path()).unwrap(), 3);
    let set = g.initial_descriptions("lion").unwrap();
    assert_eq!(set.lines(), ["mane", "tawny coat"]);
    assert_eq!(server.hits.load(Ordering::SeqCst), 3);

    // a fresh gateway over the same directory never touches the network
    let g2 = gateway_for(&server.url, ResponseCache::open(dir.path()).unwrap(), 3);
    assert_eq!(g2.initial_descriptions("lion").unwrap(), set);
    assert_eq!(server.hits.load(Ordering::SeqCst), 3);
    assert_eq!(g2.stats().cache_hits, 1);
    assert_eq!(g.cache_digest(), g2.cache_digest());
}

#[test]
fn gateway_gives_up_after_max_attempts() {
    let server = serve(Box::new(|_, _| (429, "slow down".into())));
    let g = gateway_for(&server.url, ResponseCache::in_memory(), 2);
    let e = g.initial_descriptions("lion").unwrap_err();
    assert!(matches!(e, GatewayError::ProviderUnavailable(_)), "{e}");
    assert_eq!(server.hits.load(Ordering::SeqCst), 2);
}

fn vectors_for(body: &Value, dim: usize) -> String {
    let n = body["texts"].as_array().map_or(1, |a| a.len());
    let vs: Vec<Vec<f32>> = (0..n)
        .map(|i| {
            let mut v = vec![0.0; dim];
            v[i % dim] = 2.0;
            v
        })
        .collect();
    json!({ "vectors": vs }).to_string()
}

#[test]
fn embedding_provider_normalizes_and_caches_on_disk() {
    let server = serve(Box::new(|_, body| (200, vectors_for(body, 4))));
    let dir = tempfile::tempdir().unwrap();
    let texts: Vec<String> = vec!["a".into(), "b".into()];
    let p = HttpEmbeddingProvider::new(
        &server.url,
        4,
        Some(dir.path().into()),
        Duration::from_secs(5),
    )
    .unwrap();
    let vs = p.embed_text(&texts).unwrap();
    assert_eq!(vs[0].as_slice(), [1.0, 0.0, 0.0, 0.0]);
    assert_eq!(vs[1].as_slice(), [0.0, 1.0, 0.0, 0.0]);
    assert_eq!(p.network_calls(), 1);
    assert_eq!(
        server.bodies.lock().unwrap()[0].0,
        json!({"texts": ["a", "b"]})
    );

    let again = HttpEmbeddingProvider::new(
        &server.url,
        4,
        Some(dir.path().into()),
        Duration::from_secs(5),
    )
    .unwrap();
    assert_eq!(again.embed_text(&texts).unwrap(), vs);
    assert_eq!(again.network_calls(), 0);

    let img = again.embed_image_ref("img_1").unwrap();
    assert_eq!(img.dim(), 4);
    assert_eq!(again.network_calls(), 1);
    assert_eq!(
        server.bodies.lock().unwrap()[1].0,
        json!({"image_id": "img_1"})
    );
}

#[test]
fn embedding_provider_rejects_wrong_dimension() {
    let server = serve(Box::new(|_, body| (200, vectors_for(body, 3))));
    let p = HttpEmbeddingProvider::new(&server.url, 4, None, Duration::from_secs(5)).unwrap();
    let e = p.embed_text(&["a".to_string()]).unwrap_err();
    assert!(
        matches!(
            e,
            EmbedError::DimMismatch {
                expected: 4,
                found: 3
            }
        ),
        "{e}"
    );
}

#[test]
fn embedding_provider_rejects_wrong_count() {
    let server = serve(Box::new(|_, _| {
        (200, json!({"vectors": [[1.0, 0.0]]}).to_string())
    }));
    let p = HttpEmbeddingProvider::new(&server.url, 2, None, Duration::from_secs(5)).unwrap();
    let e = p
        .embed_text(&["a".to_string(), "b".to_string()])
        .unwrap_err();
    assert!(matches!(e, EmbedError::SchemaMismatch(_)), "{e}");
}
