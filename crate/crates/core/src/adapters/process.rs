use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde_json::{json, Value};

use crate::corpus::{LanguageTag, QualityEstimator, TextGenerator, Translator};
use crate::error::{Error, Result};
use crate::filtergate::{EntailmentModel, Judge, NliLabel};

struct Pipe {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// A child process (run through `sh -c`) answering one JSON line per request line.
pub struct LineClient {
    command: String,
    pipe: Mutex<Pipe>,
}

impl LineClient {
    pub fn spawn(command: &str) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::transport(format!("cannot start {command:?}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(LineClient { command: command.to_owned(), pipe: Mutex::new(Pipe { child, stdin, stdout }) })
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    /// Sends one request and waits for its response line. A response
    /// carrying an `error` field becomes a transport error.
    pub fn call(&self, request: &Value) -> Result<Value> {
        let mut pipe = self.pipe.lock().map_err(|_| Error::transport("adapter pipe poisoned"))?;
        let mut line = serde_json::to_string(request).expect("request serializes");
        line.push('\n');
        pipe.stdin
            .write_all(line.as_bytes())
            .and_then(|_| pipe.stdin.flush())
            .map_err(|e| Error::transport(format!("{}: write failed: {e}", self.command)))?;
        let mut reply = String::new();
        let n = pipe
            .stdout
            .read_line(&mut reply)
            .map_err(|e| Error::transport(format!("{}: read failed: {e}", self.command)))?;
        if n == 0 {
            return Err(Error::transport(format!("{}: adapter closed its output", self.command)));
        }
        let value: Value =
            serde_json::from_str(&reply).map_err(|e| Error::InvalidOutput(format!("{}: {e}", self.command)))?;
        if let Some(msg) = value.get("error").and_then(Value::as_str) {
            return Err(Error::transport(format!("{}: {msg}", self.command)));
        }
        Ok(value)
    }
}

impl Drop for LineClient {
    fn drop(&mut self) {
        if let Ok(pipe) = self.pipe.get_mut() {
            let _ = pipe.child.kill();
            let _ = pipe.child.wait();
        }
    }
}

fn field<'a>(value: &'a Value, name: &str) -> Result<&'a Value> {
    value.get(name).ok_or_else(|| Error::InvalidOutput(format!("adapter response lacks {name:?}")))
}

fn text_field(value: &Value, name: &str) -> Result<String> {
    field(value, name)?
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| Error::InvalidOutput(format!("{name:?} is not a string")))
}

pub struct ProcessTranslator(pub LineClient);

impl Translator for ProcessTranslator {
    fn translate(&self, text: &str, source: &LanguageTag, target: &LanguageTag) -> Result<String> {
        let resp = self.0.call(&json!({"op": "translate", "text": text, "source": source, "target": target}))?;
        text_field(&resp, "text")
    }
}

pub struct ProcessQualityEstimator(pub LineClient);

impl QualityEstimator for ProcessQualityEstimator {
    fn score(&self, source: &str, hypothesis: &str) -> Result<f64> {
        let resp = self.0.call(&json!({"op": "qe", "source": source, "hypothesis": hypothesis}))?;
        field(&resp, "score")?.as_f64().ok_or_else(|| Error::InvalidOutput("score is not a number".into()))
    }
}

pub struct ProcessGenerator(pub LineClient);

impl TextGenerator for ProcessGenerator {
    fn generate(&self, prompt: &str) -> Result<String> {
        text_field(&self.0.call(&json!({"op": "generate", "prompt": prompt}))?, "text")
    }
}

pub struct ProcessJudge {
    pub id: String,
    pub client: LineClient,
}

impl Judge for ProcessJudge {
    fn judge_id(&self) -> &str {
        &self.id
    }

    fn reply(&self, prompt: &str) -> Result<String> {
        text_field(&self.client.call(&json!({"op": "generate", "prompt": prompt}))?, "text")
    }
}

/// Accepts either `{"entailed": bool}` or a three-way `{"label": ...}`.
pub struct ProcessNli(pub LineClient);

impl EntailmentModel for ProcessNli {
    fn entails(&self, premise: &str, hypothesis: &str) -> Result<bool> {
        let resp = self.0.call(&json!({"op": "entail", "premise": premise, "hypothesis": hypothesis}))?;
        if let Some(b) = resp.get("entailed").and_then(Value::as_bool) {
            return Ok(b);
        }
        let label = text_field(&resp, "label")?;
        NliLabel::parse(&label)
            .map(NliLabel::is_entailment)
            .ok_or_else(|| Error::InvalidOutput(format!("unknown NLI label {label:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_process_roundtrip() {
        // `cat` echoes the request, so the response carries the request fields.
        let client = LineClient::spawn("cat").unwrap();
        let resp = client.call(&json!({"op": "generate", "text": "hello"})).unwrap();
        assert_eq!(resp["text"], "hello");
        let gen = ProcessGenerator(LineClient::spawn("sed -u 's/\"prompt\"/\"text\"/'").unwrap());
        assert_eq!(gen.generate("A claim. [1]").unwrap(), "A claim. [1]");
    }

    #[test]
    fn error_field_is_transport_error() {
        let client = LineClient::spawn("cat").unwrap();
        let err = client.call(&json!({"error": "model offline"})).unwrap_err();
        assert!(err.is_retryable());
    }

    #[test]
    fn closed_pipe_is_transport_error() {
        let client = LineClient::spawn("true").unwrap();
        let err = client.call(&json!({"op": "x"})).unwrap_err();
        assert!(err.is_retryable(), "{err}");
    }

    #[test]
    fn nli_label_mapping() {
        let nli = ProcessNli(LineClient::spawn("sed -u 's/.*/{\"label\":\"neutral\"}/'").unwrap());
        assert!(!nli.entails("p", "h").unwrap());
        let nli = ProcessNli(LineClient::spawn("sed -u 's/.*/{\"label\":\"entailment\"}/'").unwrap());
        assert!(nli.entails("p", "h").unwrap());
    }
}
