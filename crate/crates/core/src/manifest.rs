//! Experiment manifests: which corpora to use and how to train on them.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{MonoCorpus, ParallelCorpus, SplitSpec, Splits};
use crate::decoder::DecodeConfig;
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;
use crate::transformer::Hyperparams;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    #[default]
    Parallel,
    Mono,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Test,
    Val,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub path: PathBuf,
    #[serde(default)]
    pub tag: String,
    #[serde(default)]
    pub role: Role,
    /// A pre-split file; unsplit parallel files are split with the manifest's ratios.
    #[serde(default)]
    pub split: Option<SplitPart>,
}

/// Key under `tokenizer_factors` for the model trained on all tags together.
pub const JOINT_KEY: &str = "joint";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Manifest {
    pub datasets: Vec<DatasetEntry>,
    pub split: SplitSpec,
    /// Alphabet factor per tag, plus [`JOINT_KEY`]; missing keys use `default_factor`.
    pub tokenizer_factors: BTreeMap<String, f64>,
    pub default_factor: f64,
    pub model: Hyperparams,
    pub train: TrainConfig,
    /// Update cap for models trained on augmented sets; `train.max_updates` otherwise.
    pub augmented_max_updates: Option<u64>,
    /// Decoding used for evaluation.
    pub decode: DecodeConfig,
    /// Decoding used by reverse models when synthesizing pseudo-sources.
    pub synthesis: DecodeConfig,
    /// Monolingual sentences for the first augmented run; the second uses all.
    pub subset: Option<usize>,
    pub seeds: Vec<u64>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            datasets: Vec::new(),
            split: SplitSpec::default(),
            tokenizer_factors: BTreeMap::new(),
            default_factor: 1.5,
            model: Hyperparams::default(),
            train: TrainConfig::default(),
            augmented_max_updates: None,
            decode: DecodeConfig::default(),
            synthesis: DecodeConfig::greedy(),
            subset: None,
            seeds: vec![1],
            base_dir: PathBuf::new(),
        }
    }
}

impl Manifest {
    /// Parse JSON, or TOML when the extension is `.toml`; relative paths
    /// resolve against the manifest's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_toml = path.extension().is_some_and(|e| e == "toml");
        let mut m = Self::parse(&text, is_toml).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn parse(text: &str, is_toml: bool) -> Result<Self> {
        if is_toml {
            toml::from_str(text).map_err(|e| Error::invalid(format!("manifest: {e}")))
        } else {
            Ok(serde_json::from_str(text)?)
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.train.validate()?;
        self.decode.validate()?;
        self.synthesis.validate()?;
        if self.augmented_max_updates == Some(0) {
            return Err(Error::invalid("augmented_max_updates must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("manifest lists no seeds"));
        }
        for d in &self.datasets {
            if d.role == Role::Parallel && d.tag.is_empty() {
                return Err(Error::invalid(format!("parallel dataset {} has no tag", d.path.display())));
            }
        }
        if !self.datasets.iter().any(|d| d.role == Role::Parallel) {
            return Err(Error::invalid("manifest lists no parallel datasets"));
        }
        for (k, &f) in &self.tokenizer_factors {
            if !(f >= 1.0) {
                return Err(Error::invalid(format!("tokenizer factor {f} for {k} must be at least 1")));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn factor_for(&self, key: &str) -> f64 {
        self.tokenizer_factors.get(key).copied().unwrap_or(self.default_factor)
    }

    pub fn tags(&self) -> Vec<String> {
        let mut tags: Vec<String> = self
            .datasets
            .iter()
            .filter(|d| d.role == Role::Parallel)
            .map(|d| d.tag.clone())
            .collect();
        tags.sort();
        tags.dedup();
        tags
    }

    /// Train/test/val parts per tag.
    pub fn splits(&self) -> Result<BTreeMap<String, Splits>> {
        let mut out = BTreeMap::new();
        for tag in self.tags() {
            let mut parts: BTreeMap<SplitPart, Vec<ParallelCorpus>> = BTreeMap::new();
            for d in self.datasets.iter().filter(|d| d.role == Role::Parallel && d.tag == tag) {
                let corpus = ParallelCorpus::load(self.resolve(&d.path), &tag)?;
                match d.split {
                    Some(part) => parts.entry(part).or_default().push(corpus),
                    None => {
                        let s = corpus.split(&self.split)?;
                        parts.entry(SplitPart::Train).or_default().push(s.train);
                        parts.entry(SplitPart::Test).or_default().push(s.test);
                        parts.entry(SplitPart::Val).or_default().push(s.val);
                    }
                }
            }
            let mut take = |part: SplitPart, name: &str| -> Result<ParallelCorpus> {
                let list = parts.remove(&part).unwrap_or_default();
                if list.is_empty() {
                    return Err(Error::invalid(format!("tag {tag} has no {name} data")));
                }
                ParallelCorpus::merge(&list, &format!("{tag}-{name}"))
            };
            let splits = Splits {
                train: take(SplitPart::Train, "train")?,
                test: take(SplitPart::Test, "test")?,
                val: take(SplitPart::Val, "val")?,
            };
            out.insert(tag, splits);
        }
        Ok(out)
    }

    /// All monolingual datasets, concatenated in listed order.
    pub fn mono(&self) -> Result<MonoCorpus> {
        let mut sentences = Vec::new();
        for d in self.datasets.iter().filter(|d| d.role == Role::Mono) {
            sentences.extend(MonoCorpus::load(self.resolve(&d.path))?.sentences);
        }
        if sentences.is_empty() {
            return Err(Error::invalid("manifest lists no monolingual sentences"));
        }
        Ok(MonoCorpus::new("mono", sentences))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_agree() {
        let toml_text = r#"
            seeds = [1, 2]
            subset = 50
            [[datasets]]
            path = "p.tsv"
            tag = "P"
            [[datasets]]
            path = "mono.txt"
            role = "mono"
            [model]
            d_model = 32
            [train]
            max_epochs = 3
        "#;
        let a = Manifest::parse(toml_text, true).unwrap();
        let b = Manifest::parse(&a.to_json().unwrap(), false).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.model.d_model, 32);
        assert_eq!(a.model.heads, 4);
        assert_eq!(a.train.max_epochs, 3);
        assert_eq!(a.train.base_lr, 1e-3);
        assert_eq!(a.tags(), ["P"]);
        a.validate().unwrap();
    }

    #[test]
    fn rejects_untagged_parallel_data() {
        let m = Manifest::parse(r#"{"datasets":[{"path":"x.tsv"}]}"#, false).unwrap();
        assert!(m.validate().is_err());
    }

    #[test]
    fn augmented_update_cap_must_be_positive() {
        let text = r#"{"datasets":[{"path":"x.tsv","tag":"X"}],"augmented_max_updates":0}"#;
        assert!(Manifest::parse(text, false).unwrap().validate().is_err());
        let text = text.replace(":0}", ":5}");
        assert_eq!(Manifest::parse(&text, false).unwrap().augmented_max_updates, Some(5));
    }
}
