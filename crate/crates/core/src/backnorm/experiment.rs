use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{build_augmented_set, synthesize_pseudo_parallel, SynthesisReport, Upsampling};
use crate::corpus::{MonoCorpus, ParallelCorpus, Splits};
use crate::decoder::normalize_lines;
use crate::error::{Error, Result};
use crate::manifest::{Manifest, JOINT_KEY};
use crate::metrics::{render_table, CerTable, TableRow};
use crate::tokenizer::BpeModel;
use crate::trainer::{train, StopReason, TrainConfig};
use crate::transformer::{Checkpoint, TokenizerRef, Transformer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Row {
    Specific,
    Joint,
    SpecificBn,
    JointBn,
    SpecificBnPrime,
    JointBnPrime,
}

impl Row {
    pub const ALL: [Row; 6] = [
        Row::Specific,
        Row::Joint,
        Row::SpecificBn,
        Row::JointBn,
        Row::SpecificBnPrime,
        Row::JointBnPrime,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Row::Specific => "Specific",
            Row::Joint => "Joint",
            Row::SpecificBn => "Specific+BN",
            Row::JointBn => "Joint+BN",
            Row::SpecificBnPrime => "Specific+BN'",
            Row::JointBnPrime => "Joint+BN'",
        }
    }

    pub fn from_label(s: &str) -> Option<Row> {
        Row::ALL.into_iter().find(|r| r.label().eq_ignore_ascii_case(s))
    }

    fn is_joint(self) -> bool {
        matches!(self, Row::Joint | Row::JointBn | Row::JointBnPrime)
    }

    fn augmented(self) -> bool {
        !matches!(self, Row::Specific | Row::Joint)
    }

    fn full_mono(self) -> bool {
        matches!(self, Row::SpecificBnPrime | Row::JointBnPrime)
    }

    fn slug(self) -> String {
        self.label().to_lowercase().replace('+', "-").replace('\'', "-full")
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentOptions {
    pub rows: Vec<Row>,
    /// Overrides the manifest's subset size.
    pub subset: Option<usize>,
    /// Where checkpoints, logs, pseudo corpora and reports are written.
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            rows: vec![Row::Specific, Row::Joint, Row::SpecificBn, Row::JointBn],
            subset: None,
            out_dir: None,
        }
    }
}

/// Scores of one row for one seed, plus how each of its models was trained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowResult {
    pub table: CerTable,
    /// Upsampling accounting per trained model (augmented rows only).
    pub upsampling: BTreeMap<String, Upsampling>,
    pub epochs: BTreeMap<String, usize>,
    pub stops: BTreeMap<String, StopReason>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub rows: BTreeMap<String, RowResult>,
    pub copy_baseline: CerTable,
    pub synthesis: Vec<SynthesisReport>,
}

/// Seed-averaged CERs of one row (unrounded percentages).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanRow {
    pub tags: BTreeMap<String, f64>,
    pub joint: f64,
    pub tag_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<String>,
    pub seeds: Vec<SeedReport>,
    pub mean: BTreeMap<String, MeanRow>,
    pub copy_baseline: MeanRow,
    pub subset: Option<usize>,
    pub mono_sentences: usize,
    pub tokenizer_hashes: BTreeMap<String, String>,
    pub assumptions: Vec<String>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Seed-mean table shaped like the baseline and augmentation tables.
    pub fn to_table(&self) -> String {
        let row = |label: &str, m: &MeanRow| TableRow {
            label: label.to_string(),
            tags: m.tags.clone(),
            joint: m.joint,
            mean: m.tag_mean,
        };
        let mut rows: Vec<TableRow> = self
            .rows
            .iter()
            .filter_map(|r| self.mean.get(r).map(|m| row(r, m)))
            .collect();
        rows.push(row("Copy", &self.copy_baseline));
        render_table(&rows)
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    /// Wall-clock seconds per stage, keyed `seed/stage`.
    pub timings: BTreeMap<String, f64>,
}

const ASSUMPTIONS: [&str; 5] = [
    "Joint column is the micro-averaged CER over the union test set",
    "joint augmented models train on the pseudo-parallel corpora of every tag",
    "upsampling counts tokens on both sides under the forward model's tokenizer",
    "joint augmented models use the joint tokenizer trained on the original training data",
    "the subset run uses the first k sentences of the seed's shuffle of the monolingual corpus",
];

struct Ctx<'a> {
    manifest: &'a Manifest,
    splits: &'a BTreeMap<String, Splits>,
    tokenizers: &'a BTreeMap<String, (BpeModel, TokenizerRef)>,
    out: Option<PathBuf>,
    timings: BTreeMap<String, f64>,
}

struct Trained {
    model: Transformer<f32>,
    epoch: usize,
    stop: StopReason,
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

impl Ctx<'_> {
    fn seed_dir(&self, seed: u64) -> Option<PathBuf> {
        self.out.as_ref().map(|o| o.join(format!("seed-{seed}")))
    }

    fn train_model(
        &mut self,
        seed: u64,
        name: &str,
        key: &str,
        train_set: &ParallelCorpus,
        val: &ParallelCorpus,
        augmented: bool,
    ) -> Result<Trained> {
        let start = Instant::now();
        let (tok, tok_ref) = &self.tokenizers[key];
        let mut cfg = TrainConfig {
            seed,
            ..self.manifest.train.clone()
        };
        if augmented && self.manifest.augmented_max_updates.is_some() {
            cfg.max_updates = self.manifest.augmented_max_updates;
        }
        let dir = self.seed_dir(seed);
        let mut log_file = match &dir {
            Some(d) => {
                let p = d.join("logs").join(format!("{name}.jsonl"));
                fs::create_dir_all(p.parent().unwrap()).map_err(|e| Error::io(&p, e))?;
                Some(BufWriter::new(File::create(&p).map_err(|e| Error::io(&p, e))?))
            }
            None => None,
        };
        let outcome = train(
            &self.manifest.model,
            &cfg,
            train_set,
            val,
            tok,
            tok_ref.clone(),
            log_file.as_mut().map(|w| w as &mut dyn Write),
        )?;
        if let Some(w) = log_file.as_mut() {
            w.flush().map_err(|e| Error::io("training log", e))?;
        }
        let mut ckpt: Checkpoint = outcome.checkpoint;
        ckpt.meta.labels.insert("model".into(), name.to_string());
        if let Some(d) = &dir {
            let p = d.join("models").join(format!("{name}.ckpt"));
            fs::create_dir_all(p.parent().unwrap()).map_err(|e| Error::io(&p, e))?;
            ckpt.save(&p)?;
        }
        self.timings.insert(format!("{seed}/train {name}"), start.elapsed().as_secs_f64());
        Ok(Trained {
            model: ckpt.model()?,
            epoch: outcome.best_epoch.unwrap_or(0),
            stop: outcome.stop,
        })
    }

    fn hypotheses(&mut self, seed: u64, name: &str, model: &Transformer<f32>, key: &str, test: &ParallelCorpus) -> Result<Vec<String>> {
        let start = Instant::now();
        let sources: Vec<&str> = test.sources().collect();
        let out = normalize_lines(model, &self.tokenizers[key].0, &sources, &self.manifest.decode)?;
        self.timings.insert(format!("{seed}/evaluate {name}"), start.elapsed().as_secs_f64());
        Ok(out.into_iter().map(|o| o.text).collect())
    }
}

/// Train per-tag reverse models, synthesize pseudo-parallel data from the
/// monolingual corpus, and train/evaluate the requested rows for every seed
/// listed in the manifest.
pub fn run_backnorm_experiment(manifest: &Manifest, options: &ExperimentOptions) -> Result<ExperimentOutcome> {
    manifest.validate()?;
    let mut rows = options.rows.clone();
    rows.sort();
    rows.dedup();
    if rows.is_empty() {
        return Err(Error::invalid("no experiment rows selected"));
    }
    let needs_mono = rows.iter().any(|r| r.augmented());
    let subset = options.subset.or(manifest.subset);

    let splits = stage("load corpora", manifest.splits())?;
    let tags: Vec<String> = splits.keys().cloned().collect();
    let mono = if needs_mono {
        let m = stage("load monolingual corpus", manifest.mono())?;
        if let Some(k) = subset {
            if k > m.len() {
                return Err(Error::invalid(format!(
                    "subset size {k} exceeds the {} monolingual sentences",
                    m.len()
                )));
            }
        }
        Some(m)
    } else {
        None
    };

    let joint_train = ParallelCorpus::merge(splits.values().map(|s| &s.train), "joint-train")?;
    let joint_val = ParallelCorpus::merge(splits.values().map(|s| &s.val), "joint-val")?;
    let joint_test = ParallelCorpus::merge(splits.values().map(|s| &s.test), "joint-test")?;

    let mut tokenizers = BTreeMap::new();
    for (tag, s) in &splits {
        let tok = stage(&format!("tokenizer {tag}"), BpeModel::train(&s.train, manifest.factor_for(tag)))?;
        tokenizers.insert(tag.clone(), tok);
    }
    tokenizers.insert(
        JOINT_KEY.to_string(),
        stage("tokenizer joint", BpeModel::train(&joint_train, manifest.factor_for(JOINT_KEY)))?,
    );
    let mut tokenizer_hashes = BTreeMap::new();
    let mut tok_refs = BTreeMap::new();
    if let Some(out) = &options.out_dir {
        let dir = out.join("tokenizers");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for (key, tok) in tokenizers {
        let file = format!("tokenizers/{key}.bpe");
        if let Some(out) = &options.out_dir {
            tok.save(out.join(&file))?;
        }
        tokenizer_hashes.insert(key.clone(), tok.content_hash());
        let r = TokenizerRef::of(&tok, file);
        tok_refs.insert(key, (tok, r));
    }
    if let Some(out) = &options.out_dir {
        write_file(&out.join("manifest.json"), &manifest.to_json()?)?;
    }

    let copy_baseline = CerTable::copy_baseline(&joint_test)?;
    let mut ctx = Ctx {
        manifest,
        splits: &splits,
        tokenizers: &tok_refs,
        out: options.out_dir.clone(),
        timings: BTreeMap::new(),
    };
    let mut seed_reports = Vec::new();
    for &seed in &manifest.seeds {
        seed_reports.push(run_seed(&mut ctx, seed, &rows, &tags, mono.as_ref(), subset, &joint_train, &joint_val, &joint_test, &copy_baseline)?);
    }

    let labels: Vec<String> = rows.iter().map(|r| r.label().to_string()).collect();
    let mean = labels
        .iter()
        .map(|l| {
            let tables: Vec<&CerTable> = seed_reports.iter().map(|s| &s.rows[l].table).collect();
            (l.clone(), mean_row(&tables))
        })
        .collect();
    let report = ExperimentReport {
        rows: labels,
        mean,
        copy_baseline: mean_row(&[&copy_baseline]),
        seeds: seed_reports,
        subset,
        mono_sentences: mono.as_ref().map_or(0, MonoCorpus::len),
        tokenizer_hashes,
        assumptions: ASSUMPTIONS.iter().map(|s| s.to_string()).collect(),
    };
    if let Some(out) = &options.out_dir {
        write_file(&out.join("report.json"), &report.to_json()?)?;
        write_file(&out.join("table.txt"), &report.to_table())?;
    }
    Ok(ExperimentOutcome {
        report,
        timings: ctx.timings,
    })
}

fn mean_row(tables: &[&CerTable]) -> MeanRow {
    let n = tables.len().max(1) as f64;
    let mut tags: BTreeMap<String, f64> = BTreeMap::new();
    for t in tables {
        for (k, v) in &t.tags {
            *tags.entry(k.clone()).or_default() += v.exact_cer() / n;
        }
    }
    let tag_mean = tags.values().sum::<f64>() / tags.len().max(1) as f64;
    MeanRow {
        joint: tables.iter().map(|t| t.joint.exact_cer()).sum::<f64>() / n,
        tags,
        tag_mean,
    }
}

#[allow(clippy::too_many_arguments)]
fn run_seed(
    ctx: &mut Ctx,
    seed: u64,
    rows: &[Row],
    tags: &[String],
    mono: Option<&MonoCorpus>,
    subset: Option<usize>,
    joint_train: &ParallelCorpus,
    joint_val: &ParallelCorpus,
    joint_test: &ParallelCorpus,
    copy_baseline: &CerTable,
) -> Result<SeedReport> {
    let splits = ctx.splits;
    let seed_dir = ctx.seed_dir(seed);

    // Pseudo-parallel data per tag: the subset part and the remainder.
    let mut pseudo_subset: BTreeMap<String, ParallelCorpus> = BTreeMap::new();
    let mut pseudo_full: BTreeMap<String, ParallelCorpus> = BTreeMap::new();
    let mut synthesis = Vec::new();
    if let Some(mono) = mono {
        let shuffled = mono.shuffled(seed);
        let k = subset.unwrap_or(shuffled.len());
        let want_full = rows.iter().any(|r| r.full_mono());
        let head = MonoCorpus::new(format!("mono-{seed}-head"), shuffled.sentences[..k].to_vec());
        let tail = MonoCorpus::new(format!("mono-{seed}-tail"), shuffled.sentences[k..].to_vec());
        for tag in tags {
            let name = format!("reverse-{tag}");
            let s = &splits[tag];
            let reverse = stage(
                &format!("seed {seed}: train {name}"),
                ctx.train_model(seed, &name, tag, &s.train.reversed(), &s.val.reversed(), false),
            )?;
            let start = Instant::now();
            let tok = &ctx.tokenizers[tag].0;
            let synth_cfg = &ctx.manifest.synthesis;
            let (head_pairs, mut head_report) = stage(
                &format!("seed {seed}: synthesize {tag}"),
                synthesize_pseudo_parallel(&reverse.model, tok, &head, synth_cfg, &format!("{tag}-bn")),
            )?;
            let mut full = head_pairs.clone();
            if want_full && !tail.is_empty() {
                let (tail_pairs, tail_report) = stage(
                    &format!("seed {seed}: synthesize {tag}"),
                    synthesize_pseudo_parallel(&reverse.model, tok, &tail, synth_cfg, &format!("{tag}-bn")),
                )?;
                full.pairs.extend(tail_pairs.pairs);
                head_report.produced += tail_report.produced;
                head_report.skipped.extend(tail_report.skipped.into_iter().map(|(i, e)| (i + k, e)));
            }
            head_report.tag = tag.clone();
            ctx.timings.insert(format!("{seed}/synthesize {tag}"), start.elapsed().as_secs_f64());
            if let Some(d) = &seed_dir {
                let dir = d.join("pseudo");
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                head_pairs.save(d.join("pseudo").join(format!("{tag}-subset.tsv")))?;
                if want_full {
                    full.save(d.join("pseudo").join(format!("{tag}-full.tsv")))?;
                }
            }
            synthesis.push(head_report);
            pseudo_subset.insert(tag.clone(), head_pairs);
            pseudo_full.insert(tag.clone(), full);
        }
    }

    let mut results = BTreeMap::new();
    for &row in rows {
        let pseudo = if row.full_mono() { &pseudo_full } else { &pseudo_subset };
        let mut result = RowResult {
            table: copy_baseline.clone(),
            upsampling: BTreeMap::new(),
            epochs: BTreeMap::new(),
            stops: BTreeMap::new(),
        };
        let mut hyps = Vec::new();
        let mut test_parts = Vec::new();
        let groups: Vec<(String, &str)> = if row.is_joint() {
            vec![(format!("{}", row.slug()), JOINT_KEY)]
        } else {
            tags.iter().map(|t| (format!("{}-{t}", row.slug()), t.as_str())).collect()
        };
        for (name, key) in groups {
            let (originals, val, test): (Vec<&ParallelCorpus>, &ParallelCorpus, &ParallelCorpus) = if key == JOINT_KEY {
                (splits.values().map(|s| &s.train).collect(), joint_val, joint_test)
            } else {
                let s = &splits[key];
                (vec![&s.train], &s.val, &s.test)
            };
            let label = format!("seed {seed}: {name}");
            let train_set = if row.augmented() {
                let pseudos: Vec<ParallelCorpus> = if key == JOINT_KEY {
                    pseudo.values().cloned().collect()
                } else {
                    pseudo.get(key).cloned().into_iter().collect()
                };
                let originals: Vec<ParallelCorpus> = originals.into_iter().cloned().collect();
                let aug = stage(&label, build_augmented_set(&originals, &pseudos, &ctx.tokenizers[key].0))?;
                result.upsampling.insert(name.clone(), aug.accounting);
                aug.corpus
            } else if key == JOINT_KEY {
                joint_train.clone()
            } else {
                originals[0].clone()
            };
            let trained = stage(&label, ctx.train_model(seed, &name, key, &train_set, val, row.augmented()))?;
            result.epochs.insert(name.clone(), trained.epoch);
            result.stops.insert(name.clone(), trained.stop);
            hyps.extend(stage(&label, ctx.hypotheses(seed, &name, &trained.model, key, test))?);
            test_parts.push(test);
        }
        let test_union = ParallelCorpus::merge(test_parts, "test")?;
        result.table = CerTable::score(&hyps, &test_union)?;
        if let Some(d) = &seed_dir {
            let lines: String = hyps.iter().map(|h| format!("{h}\n")).collect();
            write_file(&d.join("hypotheses").join(format!("{}.txt", row.slug())), &lines)?;
        }
        results.insert(row.label().to_string(), result);
    }
    let report = SeedReport {
        seed,
        rows: results,
        copy_baseline: copy_baseline.clone(),
        synthesis,
    };
    if let Some(d) = &seed_dir {
        write_file(&d.join("report.json"), &serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report)
}
