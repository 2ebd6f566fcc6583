use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{DatasetFormat, LanguageTag, DEFAULT_TOTAL_WORDS};
use crate::error::{Error, Result};
use crate::metrics::{TestKind, DEFAULT_LAMBDA, DEFAULT_MASK_COUNT};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    EnglishPreference,
    QueryLanguage,
    RelevanceVsLanguage,
    LayerAnalysis,
    Attribution,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Experiment::EnglishPreference,
        Experiment::QueryLanguage,
        Experiment::RelevanceVsLanguage,
        Experiment::LayerAnalysis,
        Experiment::Attribution,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::EnglishPreference => "english_preference",
            Experiment::QueryLanguage => "query_language",
            Experiment::RelevanceVsLanguage => "relevance_vs_language",
            Experiment::LayerAnalysis => "layer_analysis",
            Experiment::Attribution => "attribution",
        }
    }

    /// Comparisons per target language in this design's gap family.
    pub fn comparisons_per_language(self) -> usize {
        match self {
            Experiment::QueryLanguage => 3,
            Experiment::RelevanceVsLanguage => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.as_str() == s.replace('-', "_"))
            .ok_or_else(|| Error::Config(format!("unknown experiment {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub model_id: String,
    /// `lexical` or `cmd:<shell command>` speaking the probe wire protocol.
    #[serde(default = "default_backend")]
    pub backend: String,
    /// Target languages; English is always evaluated as the baseline.
    #[serde(deserialize_with = "languages_from_list_or_csv")]
    pub languages: Vec<LanguageTag>,
    pub dataset: PathBuf,
    #[serde(default = "default_format")]
    pub dataset_format: String,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Bonferroni family size; defaults to the number of comparisons in the design.
    #[serde(default)]
    pub family_size: Option<usize>,
    #[serde(default = "default_mask_count")]
    pub mask_count: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub test: TestKind,
    #[serde(default = "default_retries")]
    pub retries: usize,
    #[serde(default = "default_total_words")]
    pub total_words: usize,
    #[serde(default = "default_translator")]
    pub translator: String,
    #[serde(default = "default_generator")]
    pub generator: String,
    #[serde(default = "default_judges")]
    pub judges: Vec<String>,
    #[serde(default = "default_nli")]
    pub nli: String,
    #[serde(default)]
    pub quality_estimator: Option<String>,
    /// Caps the number of dataset entries read.
    #[serde(default)]
    pub max_queries: Option<usize>,
}

fn default_backend() -> String {
    "lexical".into()
}
fn default_format() -> String {
    "eli5_webgpt".into()
}
fn default_cache_dir() -> PathBuf {
    PathBuf::from(".langpref-cache")
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_mask_count() -> usize {
    DEFAULT_MASK_COUNT
}
fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}
fn default_retries() -> usize {
    2
}
fn default_total_words() -> usize {
    DEFAULT_TOTAL_WORDS
}
fn default_translator() -> String {
    "identity".into()
}
fn default_generator() -> String {
    "lead".into()
}
fn default_judges() -> Vec<String> {
    vec!["lexical:a".into(), "lexical:b".into(), "lexical:c".into()]
}
fn default_nli() -> String {
    "lexical".into()
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ListOrCsv {
    List(Vec<String>),
    Csv(String),
}

fn languages_from_list_or_csv<'de, D: serde::Deserializer<'de>>(
    d: D,
) -> std::result::Result<Vec<LanguageTag>, D::Error> {
    let raw = match ListOrCsv::deserialize(d)? {
        ListOrCsv::List(v) => v,
        ListOrCsv::Csv(s) => s.split(',').map(str::to_owned).collect(),
    };
    raw.iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(LanguageTag::new)
        .collect::<Result<Vec<_>>>()
        .map_err(serde::de::Error::custom)
}

pub fn parse_languages(csv: &str) -> Result<Vec<LanguageTag>> {
    csv.split(',').map(str::trim).filter(|s| !s.is_empty()).map(LanguageTag::new).collect()
}

impl ExperimentConfig {
    pub fn new(
        experiment: Experiment,
        model_id: &str,
        languages: Vec<LanguageTag>,
        dataset: impl Into<PathBuf>,
    ) -> Self {
        ExperimentConfig {
            experiment,
            model_id: model_id.to_owned(),
            backend: default_backend(),
            languages,
            dataset: dataset.into(),
            dataset_format: default_format(),
            cache_dir: default_cache_dir(),
            out_dir: default_out_dir(),
            seed: 0,
            family_size: None,
            mask_count: DEFAULT_MASK_COUNT,
            lambda: DEFAULT_LAMBDA,
            test: TestKind::Paired,
            retries: default_retries(),
            total_words: DEFAULT_TOTAL_WORDS,
            translator: default_translator(),
            generator: default_generator(),
            judges: default_judges(),
            nli: default_nli(),
            quality_estimator: None,
            max_queries: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            for p in [&mut cfg.dataset, &mut cfg.cache_dir, &mut cfg.out_dir] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.languages.iter().all(LanguageTag::is_en) {
            return Err(Error::Config("at least one non-English target language is required".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for l in &self.languages {
            if !seen.insert(l) {
                return Err(Error::Config(format!("language {l} listed twice")));
            }
        }
        if self.model_id.trim().is_empty() {
            return Err(Error::Config("model_id must not be empty".into()));
        }
        if self.family_size == Some(0) {
            return Err(Error::Config("family_size must be at least 1".into()));
        }
        if self.mask_count == 0 {
            return Err(Error::Config("mask_count must be at least 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be finite and non-negative, got {}", self.lambda)));
        }
        if self.judges.is_empty() {
            return Err(Error::Config("at least one judge is required".into()));
        }
        self.format()?;
        if self.experiment == Experiment::RelevanceVsLanguage && self.format()? != DatasetFormat::Miracl {
            return Err(Error::Config("relevance_vs_language needs a miracl-format dataset".into()));
        }
        Ok(())
    }

    pub fn format(&self) -> Result<DatasetFormat> {
        self.dataset_format.parse()
    }

    /// Target languages with English removed.
    pub fn targets(&self) -> Vec<LanguageTag> {
        self.languages.iter().filter(|l| !l.is_en()).cloned().collect()
    }

    /// English followed by the targets.
    pub fn eval_languages(&self) -> Vec<LanguageTag> {
        std::iter::once(LanguageTag::en()).chain(self.targets()).collect()
    }

    pub fn effective_family_size(&self) -> usize {
        self.family_size.unwrap_or_else(|| self.targets().len() * self.experiment.comparisons_per_language())
    }

    /// `<out_dir>/<experiment>__<model>`.
    pub fn run_dir(&self) -> PathBuf {
        let model: String = self
            .model_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
            .collect();
        self.out_dir.join(format!("{}__{model}", self.experiment))
    }

    /// SHA-256 over every field that can change results, plus the dataset bytes.
    pub fn digest(&self) -> Result<String> {
        let dataset = std::fs::read(&self.dataset).map_err(|e| Error::io(&self.dataset, e))?;
        let relevant = serde_json::json!({
            "experiment": self.experiment,
            "model_id": self.model_id,
            "backend": self.backend,
            "languages": self.languages,
            "dataset_sha256": hex::encode(Sha256::digest(&dataset)),
            "dataset_format": self.dataset_format,
            "seed": self.seed,
            "family_size": self.effective_family_size(),
            "mask_count": self.mask_count,
            "lambda": self.lambda,
            "test": self.test,
            "total_words": self.total_words,
            "translator": self.translator,
            "generator": self.generator,
            "judges": self.judges,
            "nli": self.nli,
            "quality_estimator": self.quality_estimator,
            "max_queries": self.max_queries,
        });
        Ok(hex::encode(Sha256::digest(relevant.to_string().as_bytes())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_toml() {
        let cfg = ExperimentConfig::from_toml(
            "experiment = \"english_preference\"\nmodel_id = \"m\"\nlanguages = \"fr, sw\"\ndataset = \"d.jsonl\"\nseed = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.targets().len(), 2);
        assert_eq!(cfg.eval_languages()[0], LanguageTag::en());
        assert_eq!(cfg.effective_family_size(), 2);
        assert_eq!((cfg.mask_count, cfg.lambda), (64, 0.01));
        let list = ExperimentConfig::from_toml(
            "experiment = \"query_language\"\nmodel_id = \"m\"\nlanguages = [\"fr\", \"ko\"]\ndataset = \"d\"\n",
        )
        .unwrap();
        assert_eq!(list.effective_family_size(), 6);
    }

    #[test]
    fn rejects_bad_configs() {
        let base = "model_id = \"m\"\ndataset = \"d\"\n";
        assert!(ExperimentConfig::from_toml(&format!("experiment = \"nope\"\nlanguages = \"fr\"\n{base}")).is_err());
        assert!(
            ExperimentConfig::from_toml(&format!("experiment = \"attribution\"\nlanguages = \"en\"\n{base}")).is_err()
        );
        assert!(ExperimentConfig::from_toml(&format!(
            "experiment = \"attribution\"\nlanguages = \"fr\"\nbogus = 1\n{base}"
        ))
        .is_err());
        assert!(ExperimentConfig::from_toml(&format!(
            "experiment = \"relevance_vs_language\"\nlanguages = \"fr\"\n{base}"
        ))
        .is_err());
    }

    #[test]
    fn digest_tracks_result_fields() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("d.jsonl");
        std::fs::write(&data, "x").unwrap();
        let a = ExperimentConfig::new(Experiment::EnglishPreference, "m", vec![LanguageTag::new("fr").unwrap()], &data);
        let mut b = a.clone();
        b.retries = 9;
        b.cache_dir = "elsewhere".into();
        assert_eq!(a.digest().unwrap(), b.digest().unwrap());
        b.lambda = 0.5;
        assert_ne!(a.digest().unwrap(), b.digest().unwrap());
        let mut c = a.clone();
        c.seed = 1;
        assert_ne!(a.digest().unwrap(), c.digest().unwrap());
        let before = a.digest().unwrap();
        std::fs::write(&data, "y").unwrap();
        assert_ne!(a.digest().unwrap(), before);
    }

    #[test]
    fn run_dir_is_sanitized() {
        let a = ExperimentConfig::new(Experiment::Attribution, "org/model 8B", vec![], "d");
        assert_eq!(a.run_dir(), PathBuf::from("out/attribution__org_model_8B"));
    }
}
