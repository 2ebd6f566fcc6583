//! Line-delimited JSON contract for out-of-process backends.
//!
//! Each request is one UTF-8 JSON object per line; each response is one
//! line. Prompt bytes are passed through untouched.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Capabilities, ProbeBackend, TokenDistribution};
use crate::adapters::LineClient;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireOp {
    Info,
    NextToken,
    LayerTrace,
    SequenceLogprob,
    CountTokens,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub op: WireOp,
    #[serde(default)]
    pub model_id: String,
    #[serde(default)]
    pub prompt: String,
    /// Ablation mask as a string of `0`/`1`, for logging on the backend side.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl WireRequest {
    fn new(op: WireOp, model_id: &str) -> Self {
        WireRequest {
            op,
            model_id: model_id.to_owned(),
            prompt: String::new(),
            mask: None,
            top_k: None,
            continuation: None,
            text: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireInfo {
    pub model_id: String,
    pub capabilities: Capabilities,
    #[serde(default)]
    pub layer_count: Option<usize>,
    #[serde(default = "one")]
    pub max_in_flight: usize,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub info: Option<WireInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<TokenDistribution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
}

fn truncate_top_k(mut dist: TokenDistribution, k: usize) -> TokenDistribution {
    dist.entries.sort_by(|a, b| b.prob.total_cmp(&a.prob).then(a.id.cmp(&b.id)));
    dist.entries.truncate(k.max(1));
    dist
}

/// Answers one request with `backend`.
pub fn handle(backend: &dyn ProbeBackend, req: &WireRequest) -> WireResponse {
    let result: Result<WireResponse> = (|| {
        Ok(match req.op {
            WireOp::Info => WireResponse {
                info: Some(WireInfo {
                    model_id: backend.model_id().to_owned(),
                    capabilities: backend.capabilities(),
                    layer_count: backend.layer_count(),
                    max_in_flight: backend.max_in_flight(),
                }),
                ..Default::default()
            },
            WireOp::NextToken => {
                let dist = backend.next_token(&req.prompt)?;
                let dist = match req.top_k {
                    Some(k) => truncate_top_k(dist, k),
                    None => dist,
                };
                WireResponse { distribution: Some(dist), ..Default::default() }
            }
            WireOp::LayerTrace => WireResponse { trace: Some(backend.layer_trace(&req.prompt)?), ..Default::default() },
            WireOp::SequenceLogprob => {
                let cont = req.continuation.as_deref().unwrap_or_default();
                WireResponse { logprob: Some(backend.sequence_logprob(&req.prompt, cont)?), ..Default::default() }
            }
            WireOp::CountTokens => {
                let text = req.text.as_deref().unwrap_or_default();
                WireResponse { count: Some(backend.count_tokens(text)?), ..Default::default() }
            }
        })
    })();
    result.unwrap_or_else(|e| WireResponse { error: Some(e.to_string()), ..Default::default() })
}

/// Serves requests from `input` until end of stream.
pub fn serve(backend: &dyn ProbeBackend, input: impl BufRead, mut output: impl Write) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = match serde_json::from_str::<WireRequest>(&line) {
            Ok(req) => handle(backend, &req),
            Err(e) => WireResponse { error: Some(format!("bad request: {e}")), ..Default::default() },
        };
        serde_json::to_writer(&mut output, &resp)?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}

/// A backend living in a child process that speaks the wire contract on
/// its standard input and output.
pub struct ProcessBackend {
    client: LineClient,
    info: WireInfo,
}

impl ProcessBackend {
    pub fn spawn(command: &str) -> Result<Self> {
        let client = LineClient::spawn(command)?;
        let resp = call(&client, &WireRequest::new(WireOp::Info, ""))?;
        let info = resp.info.ok_or_else(|| Error::InvalidOutput("info response without info".into()))?;
        Ok(ProcessBackend { client, info })
    }

    fn request(&self, op: WireOp) -> WireRequest {
        WireRequest::new(op, &self.info.model_id)
    }
}

fn call(client: &LineClient, req: &WireRequest) -> Result<WireResponse> {
    let value = serde_json::to_value(req).expect("request serializes");
    let raw = client.call(&value)?;
    let resp: WireResponse =
        serde_json::from_value(raw).map_err(|e| Error::InvalidOutput(format!("bad backend response: {e}")))?;
    match resp.error {
        Some(msg) => Err(Error::transport(msg)),
        None => Ok(resp),
    }
}

fn missing(field: &str) -> Error {
    Error::InvalidOutput(format!("backend response lacks {field}"))
}

impl ProbeBackend for ProcessBackend {
    fn model_id(&self) -> &str {
        &self.info.model_id
    }

    fn capabilities(&self) -> Capabilities {
        self.info.capabilities
    }

    fn layer_count(&self) -> Option<usize> {
        self.info.layer_count
    }

    fn max_in_flight(&self) -> usize {
        self.info.max_in_flight.max(1)
    }

    fn count_tokens(&self, text: &str) -> Result<usize> {
        let req = WireRequest { text: Some(text.to_owned()), ..self.request(WireOp::CountTokens) };
        call(&self.client, &req)?.count.ok_or_else(|| missing("count"))
    }

    fn next_token(&self, prompt: &str) -> Result<TokenDistribution> {
        let req = WireRequest { prompt: prompt.to_owned(), ..self.request(WireOp::NextToken) };
        call(&self.client, &req)?.distribution.ok_or_else(|| missing("distribution"))
    }

    fn layer_trace(&self, prompt: &str) -> Result<Vec<String>> {
        let req = WireRequest { prompt: prompt.to_owned(), ..self.request(WireOp::LayerTrace) };
        call(&self.client, &req)?.trace.ok_or_else(|| missing("trace"))
    }

    fn sequence_logprob(&self, prompt: &str, continuation: &str) -> Result<f64> {
        let req = WireRequest {
            prompt: prompt.to_owned(),
            continuation: Some(continuation.to_owned()),
            ..self.request(WireOp::SequenceLogprob)
        };
        call(&self.client, &req)?.logprob.ok_or_else(|| missing("logprob"))
    }
}
