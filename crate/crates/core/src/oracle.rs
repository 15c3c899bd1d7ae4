//! Pluggable text similarity and semantic-equivalence judges.

use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::numerics::rouge_l_f;

/// Similarity of two texts in `[0, 1]`.
pub trait SimilarityOracle: Send + Sync {
    fn similarity(&self, a: &str, b: &str) -> Result<f64>;
}

/// Does `premise` entail `hypothesis`?
pub trait EquivalenceOracle: Send + Sync {
    fn entails(&self, premise: &str, hypothesis: &str) -> Result<bool>;

    /// Bidirectional equivalence.
    fn equivalent(&self, a: &str, b: &str) -> Result<bool> {
        Ok(self.entails(a, b)? && self.entails(b, a)?)
    }
}

/// Rouge-L F-measure; the default similarity.
#[derive(Debug, Clone, Copy, Default)]
pub struct RougeL;

impl SimilarityOracle for RougeL {
    fn similarity(&self, a: &str, b: &str) -> Result<f64> {
        Ok(rouge_l_f(a, b))
    }
}

impl<F> SimilarityOracle for F
where
    F: Fn(&str, &str) -> f64 + Send + Sync,
{
    fn similarity(&self, a: &str, b: &str) -> Result<f64> {
        Ok(self(a, b))
    }
}

fn normalize(text: &str) -> String {
    text.trim().nfc().flat_map(char::to_lowercase).collect::<String>()
}

/// Equal after NFC normalization, trimming and lowercasing.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMatch;

impl EquivalenceOracle for ExactMatch {
    fn entails(&self, premise: &str, hypothesis: &str) -> Result<bool> {
        Ok(normalize(premise) == normalize(hypothesis))
    }
}

/// Rouge-L F-measure at or above a threshold. Symmetric.
#[derive(Debug, Clone, Copy)]
pub struct RougeThreshold {
    pub threshold: f64,
}

impl Default for RougeThreshold {
    fn default() -> Self {
        Self { threshold: 0.5 }
    }
}

impl EquivalenceOracle for RougeThreshold {
    fn entails(&self, premise: &str, hypothesis: &str) -> Result<bool> {
        Ok(rouge_l_f(premise, hypothesis) >= self.threshold)
    }
}

/// Never equivalent; every generation forms its own cluster.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeverEquivalent;

impl EquivalenceOracle for NeverEquivalent {
    fn entails(&self, _: &str, _: &str) -> Result<bool> {
        Ok(false)
    }
}

#[derive(Debug, Serialize)]
struct EntailmentRequest<'a> {
    premise: &'a str,
    hypothesis: &'a str,
}

#[derive(Debug, Deserialize)]
struct EntailmentResponse {
    entails: bool,
}

/// Delegates entailment to an HTTP service:
/// `POST {"premise", "hypothesis"}` answered by `{"entails": bool}`.
pub struct HttpEntailment {
    url: String,
    agent: ureq::Agent,
}

impl HttpEntailment {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            url: url.into(),
            agent,
        }
    }
}

impl EquivalenceOracle for HttpEntailment {
    fn entails(&self, premise: &str, hypothesis: &str) -> Result<bool> {
        let mut response = self
            .agent
            .post(&self.url)
            .send_json(EntailmentRequest { premise, hypothesis })
            .map_err(|e| Error::Oracle(format!("POST {}: {e}", self.url)))?;
        let body: EntailmentResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| Error::Oracle(format!("bad response from {}: {e}", self.url)))?;
        Ok(body.entails)
    }
}

/// Serializes calls to an oracle that is not safe for concurrent use.
pub struct Serialized<O> {
    inner: Mutex<O>,
}

impl<O> Serialized<O> {
    pub fn new(inner: O) -> Self {
        Self {
            inner: Mutex::new(inner),
        }
    }
}

impl<O: EquivalenceOracle> EquivalenceOracle for Serialized<O> {
    fn entails(&self, premise: &str, hypothesis: &str) -> Result<bool> {
        let guard = self
            .inner
            .lock()
            .map_err(|_| Error::Oracle("oracle mutex poisoned".into()))?;
        guard.entails(premise, hypothesis)
    }
}

impl<O: SimilarityOracle> SimilarityOracle for Serialized<O> {
    fn similarity(&self, a: &str, b: &str) -> Result<f64> {
        let guard = self
            .inner
            .lock()
            .map_err(|_| Error::Oracle("oracle mutex poisoned".into()))?;
        guard.similarity(a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::thread;

    #[test]
    fn exact_match_normalizes() {
        assert!(ExactMatch.equivalent(" Paris", "paris ").unwrap());
        assert!(!ExactMatch.equivalent("Paris", "Lyon").unwrap());
    }

    #[test]
    fn rouge_threshold_is_symmetric() {
        let o = RougeThreshold::default();
        assert!(o.equivalent("the city of Paris", "city of Paris").unwrap());
        assert!(!o.equivalent("Paris", "Lyon").unwrap());
    }

    /// Answers `requests` HTTP requests with "entails" true iff the premise
    /// contains the hypothesis.
    fn spawn_entailment_server(requests: usize) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        thread::spawn(move || {
            for stream in listener.incoming().take(requests) {
                let mut stream = stream.unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut content_length = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        content_length = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0; content_length];
                reader.read_exact(&mut body).unwrap();
                let req: serde_json::Value = serde_json::from_slice(&body).unwrap();
                let entails = req["premise"]
                    .as_str()
                    .unwrap()
                    .contains(req["hypothesis"].as_str().unwrap());
                let payload = format!("{{\"entails\":{entails}}}");
                write!(
                    stream,
                    "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                    payload.len(),
                    payload
                )
                .unwrap();
            }
        });
        format!("http://{addr}/entails")
    }

    #[test]
    fn http_client_queries_both_directions() {
        let url = spawn_entailment_server(5);
        let oracle = HttpEntailment::new(url, Duration::from_secs(5));
        assert!(oracle.entails("Paris, France", "Paris").unwrap());
        // one direction holds, the other does not
        assert!(!oracle.equivalent("Paris, France", "Paris").unwrap());
        assert!(oracle.equivalent("Paris", "Paris").unwrap());
    }

    #[test]
    fn http_failure_is_oracle_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/", listener.local_addr().unwrap());
        drop(listener);
        let oracle = HttpEntailment::new(url, Duration::from_millis(500));
        assert!(matches!(oracle.entails("a", "b"), Err(Error::Oracle(_))));
    }

    #[test]
    fn serialized_adapter_forwards() {
        let o = Serialized::new(ExactMatch);
        assert!(o.equivalent("a", "A").unwrap());
        let s = Serialized::new(RougeL);
        assert_eq!(s.similarity("a b c", "a c").unwrap(), 0.8);
    }
}
