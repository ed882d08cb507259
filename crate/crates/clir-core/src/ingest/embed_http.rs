//! Client for the external embedding service.
//!
//! The service contract is `POST {endpoint}/embed` with body
//! `{"texts": [...]}` answering `{"vectors": [[...]]}`. Inference is never
//! run in-process; this client is how precomputed- or merged-model
//! embeddings enter the pipeline.

use std::time::Duration;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::ingest::emb1::EmbeddingMatrix;

/// Connection and batching parameters, normally filled from CLI flags or
/// the `CLIR_EMBED_ENDPOINT` / `CLIR_EMBED_BATCH` environment variables.
#[derive(Debug, Clone)]
pub struct EmbedClientConfig {
    pub endpoint: String,
    pub batch_size: usize,
    pub timeout: Duration,
    /// Total attempts per batch, transient failures included.
    pub max_attempts: u32,
    /// First backoff delay; doubles per retry.
    pub backoff: Duration,
}

impl EmbedClientConfig {
    pub fn new(endpoint: impl Into<String>, batch_size: usize) -> Self {
        EmbedClientConfig {
            endpoint: endpoint.into(),
            batch_size,
            timeout: Duration::from_secs(30),
            max_attempts: 3,
            backoff: Duration::from_millis(250),
        }
    }
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
}

/// Embeds `texts` through the remote service, one output row per input text
/// in input order. Rows are labeled with their input index; callers that
/// track their own ids can rebuild the matrix from [`embed_vectors`].
pub fn embed_remote(texts: &[String], cfg: &EmbedClientConfig) -> Result<EmbeddingMatrix> {
    let (vectors, dim) = embed_vectors(texts, cfg)?;
    let ids = (0..texts.len()).map(|i| i.to_string()).collect();
    EmbeddingMatrix::new(ids, vectors, dim, false)
}

/// Same as [`embed_remote`] but returns the flat row-major vector block and
/// its dimensionality.
pub fn embed_vectors(texts: &[String], cfg: &EmbedClientConfig) -> Result<(Vec<f32>, usize)> {
    if texts.is_empty() {
        return Err(Error::Precondition("no texts to embed".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Precondition("batch size must be positive".into()));
    }
    let client = reqwest::blocking::Client::builder()
        .timeout(cfg.timeout)
        .build()
        .map_err(|e| Error::Transport(format!("cannot build http client: {e}")))?;
    let url = format!("{}/embed", cfg.endpoint.trim_end_matches('/'));

    let mut vectors = Vec::with_capacity(texts.len());
    let mut dim: Option<usize> = None;
    for (batch_index, batch) in texts.chunks(cfg.batch_size).enumerate() {
        let rows = request_batch(&client, &url, batch, cfg)?;
        if rows.len() != batch.len() {
            return Err(Error::Protocol(format!(
                "batch {batch_index}: sent {} texts, got {} vectors",
                batch.len(),
                rows.len()
            )));
        }
        for row in rows {
            match dim {
                None => {
                    if row.is_empty() {
                        return Err(Error::Protocol("service returned empty vectors".into()));
                    }
                    dim = Some(row.len());
                }
                Some(d) if d != row.len() => {
                    return Err(Error::Protocol(format!(
                        "dimension disagreement: batch {batch_index} returned {} after earlier {d}",
                        row.len()
                    )));
                }
                Some(_) => {}
            }
            vectors.extend_from_slice(&row);
        }
    }
    Ok((vectors, dim.expect("at least one batch")))
}

fn request_batch(
    client: &reqwest::blocking::Client,
    url: &str,
    batch: &[String],
    cfg: &EmbedClientConfig,
) -> Result<Vec<Vec<f32>>> {
    let body = serde_json::json!({ "texts": batch });
    let mut last_failure = String::new();
    for attempt in 0..cfg.max_attempts {
        if attempt > 0 {
            std::thread::sleep(cfg.backoff * 2u32.pow(attempt - 1));
        }
        match client.post(url).json(&body).send() {
            Ok(response) => {
                let status = response.status();
                if status.is_success() {
                    let parsed: EmbedResponse = response
                        .json()
                        .map_err(|e| Error::Protocol(format!("unparseable response body: {e}")))?;
                    return Ok(parsed.vectors);
                }
                last_failure = format!("HTTP {status}");
                log::debug!("embed batch attempt {} failed: {last_failure}", attempt + 1);
            }
            Err(e) => {
                last_failure = e.to_string();
                log::debug!("embed batch attempt {} failed: {last_failure}", attempt + 1);
            }
        }
    }
    Err(Error::Transport(format!(
        "{url}: still failing after {} attempts: {last_failure}",
        cfg.max_attempts
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::{TcpListener, TcpStream};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    /// Minimal single-threaded HTTP/1.1 test double. `script` maps the
    /// request counter and decoded texts to (status, body). The server
    /// stops after `expected_requests`.
    fn spawn_server<F>(expected_requests: usize, script: F) -> (String, Arc<AtomicUsize>)
    where
        F: Fn(usize, &[String]) -> (u16, String) + Send + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let counter = Arc::new(AtomicUsize::new(0));
        let seen = counter.clone();
        std::thread::spawn(move || {
            for _ in 0..expected_requests {
                let Ok((stream, _)) = listener.accept() else { return };
                let n = seen.fetch_add(1, Ordering::SeqCst);
                handle(stream, n, &script);
            }
        });
        (format!("http://{addr}"), counter)
    }

    fn handle<F>(mut stream: TcpStream, n: usize, script: &F)
    where
        F: Fn(usize, &[String]) -> (u16, String),
    {
        stream
            .set_read_timeout(Some(Duration::from_secs(5)))
            .unwrap();
        let mut buf = Vec::new();
        let mut chunk = [0u8; 4096];
        let (head_end, total_len) = loop {
            let read = stream.read(&mut chunk).unwrap_or(0);
            if read == 0 {
                return;
            }
            buf.extend_from_slice(&chunk[..read]);
            if let Some(pos) = find_header_end(&buf) {
                let head = String::from_utf8_lossy(&buf[..pos]);
                let content_length = head
                    .lines()
                    .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(str::trim).map(String::from))
                    .and_then(|v| v.parse::<usize>().ok())
                    .unwrap_or(0);
                break (pos + 4, pos + 4 + content_length);
            }
        };
        while buf.len() < total_len {
            let read = stream.read(&mut chunk).unwrap_or(0);
            if read == 0 {
                break;
            }
            buf.extend_from_slice(&chunk[..read]);
        }
        let body: serde_json::Value =
            serde_json::from_slice(&buf[head_end..total_len]).unwrap_or(serde_json::Value::Null);
        let texts: Vec<String> = body
            .get("texts")
            .and_then(|t| serde_json::from_value(t.clone()).ok())
            .unwrap_or_default();
        let (status, reply) = script(n, &texts);
        let response = format!(
            "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
            reply.len()
        );
        let _ = stream.write_all(response.as_bytes());
    }

    fn find_header_end(buf: &[u8]) -> Option<usize> {
        buf.windows(4).position(|w| w == b"\r\n\r\n")
    }

    fn fast_config(endpoint: &str, batch_size: usize) -> EmbedClientConfig {
        EmbedClientConfig {
            endpoint: endpoint.to_string(),
            batch_size,
            timeout: Duration::from_secs(5),
            max_attempts: 3,
            backoff: Duration::from_millis(1),
        }
    }

    /// Encodes each text's trailing index into the first vector component.
    fn identity_reply(texts: &[String]) -> (u16, String) {
        let vectors: Vec<Vec<f32>> = texts
            .iter()
            .map(|t| {
                let idx: f32 = t.rsplit('-').next().unwrap().parse().unwrap();
                vec![idx, 1.0]
            })
            .collect();
        (200, serde_json::json!({ "vectors": vectors }).to_string())
    }

    #[test]
    fn batches_and_preserves_order() {
        let (endpoint, counter) = spawn_server(3, |_, texts| identity_reply(texts));
        let texts: Vec<String> = (0..5).map(|i| format!("text-{i}")).collect();
        let matrix = embed_remote(&texts, &fast_config(&endpoint, 2)).unwrap();
        assert_eq!(counter.load(Ordering::SeqCst), 3);
        assert_eq!(matrix.len(), 5);
        assert_eq!(matrix.dim(), 2);
        for i in 0..5 {
            assert_eq!(matrix.row(i)[0], i as f32);
        }
    }

    #[test]
    fn retries_transient_failures() {
        let (endpoint, counter) = spawn_server(3, |n, texts| {
            if n < 2 {
                (503, "{\"error\":\"busy\"}".to_string())
            } else {
                identity_reply(texts)
            }
        });
        let texts = vec!["text-0".to_string()];
        let matrix = embed_remote(&texts, &fast_config(&endpoint, 8)).unwrap();
        assert_eq!(counter.load(Ordering::SeqCst), 3);
        assert_eq!(matrix.row(0), &[0.0, 1.0]);
    }

    #[test]
    fn gives_up_after_three_attempts() {
        let (endpoint, counter) = spawn_server(3, |_, _| (500, "{}".to_string()));
        let texts = vec!["text-0".to_string()];
        let err = embed_remote(&texts, &fast_config(&endpoint, 8)).unwrap_err();
        assert!(matches!(err, Error::Transport(_)), "{err}");
        assert_eq!(counter.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn dimension_disagreement_is_protocol_error() {
        let (endpoint, _) = spawn_server(2, |n, texts| {
            let width = if n == 0 { 4 } else { 5 };
            let vectors: Vec<Vec<f32>> = texts.iter().map(|_| vec![0.0; width]).collect();
            (200, serde_json::json!({ "vectors": vectors }).to_string())
        });
        let texts: Vec<String> = (0..2).map(|i| format!("text-{i}")).collect();
        let err = embed_remote(&texts, &fast_config(&endpoint, 1)).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)), "{err}");
    }

    #[test]
    fn empty_input_is_precondition_error() {
        let err = embed_remote(&[], &fast_config("http://127.0.0.1:9", 2)).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)), "{err}");
    }

    #[test]
    fn row_count_mismatch_is_protocol_error() {
        let (endpoint, _) = spawn_server(1, |_, _| {
            (200, serde_json::json!({ "vectors": [[1.0, 2.0]] }).to_string())
        });
        let texts: Vec<String> = (0..2).map(|i| format!("text-{i}")).collect();
        let err = embed_remote(&texts, &fast_config(&endpoint, 4)).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)), "{err}");
    }
}
