//! Instantiates adapters from config spec strings.
//!
//! Specs are either a built-in name or `cmd:<shell command>`.

use crate::adapters::{
    IdentityTranslator, LeadGenerator, LexicalBackend, LexicalJudge, LexicalNli, LineClient, ProcessGenerator,
    ProcessJudge, ProcessNli, ProcessQualityEstimator, ProcessTranslator,
};
use crate::corpus::{QualityEstimator, TextGenerator, Translator};
use crate::error::{Error, Result};
use crate::filtergate::{EntailmentModel, Judge};
use crate::probe::wire::ProcessBackend;
use crate::probe::ProbeBackend;

fn command(spec: &str) -> Option<&str> {
    spec.strip_prefix("cmd:").map(str::trim)
}

fn unknown(kind: &str, spec: &str) -> Error {
    Error::Config(format!("unknown {kind} adapter {spec:?}"))
}

pub fn backend(spec: &str) -> Result<Box<dyn ProbeBackend>> {
    if let Some(cmd) = command(spec) {
        return Ok(Box::new(ProcessBackend::spawn(cmd)?));
    }
    match spec.split_once(':') {
        None if spec == "lexical" => Ok(Box::new(LexicalBackend::default())),
        Some(("lexical", layers)) => {
            let n = layers.parse().map_err(|_| Error::Config(format!("bad layer count in {spec:?}")))?;
            Ok(Box::new(LexicalBackend::with_layers(n)))
        }
        _ => Err(unknown("backend", spec)),
    }
}

pub fn translator(spec: &str) -> Result<Box<dyn Translator>> {
    match (command(spec), spec) {
        (Some(cmd), _) => Ok(Box::new(ProcessTranslator(LineClient::spawn(cmd)?))),
        (None, "identity") => Ok(Box::new(IdentityTranslator)),
        _ => Err(unknown("translator", spec)),
    }
}

pub fn quality_estimator(spec: &str) -> Result<Box<dyn QualityEstimator>> {
    match command(spec) {
        Some(cmd) => Ok(Box::new(ProcessQualityEstimator(LineClient::spawn(cmd)?))),
        None => Err(unknown("quality estimator", spec)),
    }
}

pub fn generator(spec: &str) -> Result<Box<dyn TextGenerator>> {
    match (command(spec), spec) {
        (Some(cmd), _) => Ok(Box::new(ProcessGenerator(LineClient::spawn(cmd)?))),
        (None, "lead") => Ok(Box::new(LeadGenerator)),
        _ => Err(unknown("generator", spec)),
    }
}

/// `lexical:<id>` or `<id>=cmd:<command>`.
pub fn judge(spec: &str) -> Result<Box<dyn Judge>> {
    if let Some(id) = spec.strip_prefix("lexical:") {
        return Ok(Box::new(LexicalJudge { id: id.to_owned() }));
    }
    match spec.split_once('=') {
        Some((id, rest)) if command(rest).is_some() => Ok(Box::new(ProcessJudge {
            id: id.trim().to_owned(),
            client: LineClient::spawn(command(rest).expect("checked"))?,
        })),
        _ => Err(unknown("judge", spec)),
    }
}

pub fn nli(spec: &str) -> Result<Box<dyn EntailmentModel>> {
    match (command(spec), spec) {
        (Some(cmd), _) => Ok(Box::new(ProcessNli(LineClient::spawn(cmd)?))),
        (None, "lexical") => Ok(Box::new(LexicalNli::default())),
        _ => Err(unknown("nli", spec)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_resolve() {
        assert_eq!(backend("lexical").unwrap().layer_count(), Some(8));
        assert_eq!(backend("lexical:4").unwrap().layer_count(), Some(4));
        assert_eq!(judge("lexical:j1").unwrap().judge_id(), "j1");
        assert!(translator("identity").is_ok());
        assert!(generator("lead").is_ok());
        assert!(nli("lexical").is_ok());
    }

    #[test]
    fn unknown_specs_fail() {
        assert!(matches!(backend("gpt"), Err(Error::Config(_))));
        assert!(judge("plain").is_err());
        assert!(quality_estimator("lexical").is_err());
        assert!(backend("lexical:x").is_err());
    }
}
