mod meta;

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use norma::backnorm::{run_backnorm_experiment, ExperimentOptions, Row};
use norma::corpus::{MonoCorpus, ParallelCorpus, SplitSpec};
use norma::decoder::{normalize_text, DecodeConfig};
use norma::manifest::{Manifest, JOINT_KEY};
use norma::metrics::evaluate;
use norma::noisegen::{bundled_profiles, generate_corpus, synthetic_mono, NoiseProfile};
use norma::tokenizer::BpeModel;
use norma::trainer::{train_from, TrainConfig};
use norma::transformer::{Checkpoint, Hyperparams, TokenizerRef, Transformer};
use norma::Error;

use meta::{sidecar, RunMetadata};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_INTERNAL: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "norma", version, about = "Neural spelling normalization for low-resource languages")]
struct Cli {
    /// Worker threads for inference and evaluation; 1 runs everything sequentially.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Split a parallel TSV into train/test/val parts.
    Split(SplitArgs),
    /// Train a BPE model, or sweep several alphabet factors.
    Tokenizer(TokenizerArgs),
    /// Train one model on the corpora of a manifest.
    Train(TrainArgs),
    /// Normalize text line by line.
    Normalize(NormalizeArgs),
    /// Score a model on tagged test sets.
    Evaluate(EvaluateArgs),
    /// Run the backnormalization experiment of a manifest end to end.
    Backnorm(BacknormArgs),
    /// Generate a synthetic parallel corpus from clean text.
    Synth(SynthArgs),
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is not in (0, 1)"))
    }
}

fn parse_factor(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v >= 1.0 {
        Ok(v)
    } else {
        Err(format!("alphabet factor {v} must be at least 1"))
    }
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    tag: String,
    #[arg(long, default_value_t = 0.7, value_parser = parse_fraction)]
    train: f64,
    #[arg(long, default_value_t = 0.2, value_parser = parse_fraction)]
    test: f64,
    #[arg(long, default_value_t = 0.1, value_parser = parse_fraction)]
    val: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    outdir: PathBuf,
}

#[derive(Args, Debug)]
struct TokenizerArgs {
    /// Parallel TSV; both sides feed the model.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = parse_factor, conflicts_with = "factors")]
    factor: Option<f64>,
    /// Comma-separated factors; `--out` is then a directory.
    #[arg(long, value_parser = parse_factor, value_delimiter = ',')]
    factors: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Direction {
    Forward,
    Reverse,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// JSON or TOML file with `model` and/or `train` sections overriding the manifest.
    #[arg(long, env = "NORMA_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Direction::Forward)]
    direction: Direction,
    /// Restrict training to these tags (default: all parallel datasets).
    #[arg(long, value_delimiter = ',')]
    tags: Vec<String>,
    /// Use this tokenizer instead of training one.
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    /// Continue from this checkpoint; its tokenizer hash must match.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Override the training seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct DecodeArgs {
    /// Beam width; 1 is greedy search.
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long, conflicts_with = "beam")]
    greedy: bool,
    #[arg(long)]
    length_penalty: Option<f64>,
    #[arg(long)]
    max_output_factor: Option<f64>,
}

impl DecodeArgs {
    fn config(&self) -> DecodeConfig {
        let mut cfg = match (self.greedy, self.beam) {
            (true, _) => DecodeConfig::greedy(),
            (false, Some(n)) => DecodeConfig::beam(n),
            (false, None) => DecodeConfig::default(),
        };
        if let Some(a) = self.length_penalty {
            cfg.length_penalty = a;
        }
        if let Some(f) = self.max_output_factor {
            cfg.max_output_factor = f;
        }
        cfg
    }
}

#[derive(Args, Debug)]
struct NormalizeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    tokenizer: PathBuf,
    /// Input file, or `-` for standard input.
    #[arg(long = "in", default_value = "-")]
    input: String,
    /// Output file, or `-` for standard output.
    #[arg(long, default_value = "-")]
    out: String,
    #[command(flatten)]
    decode: DecodeArgs,
    /// Print a warning line for every input line that hit the length cap.
    #[arg(long)]
    flag_truncated: bool,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    tokenizer: PathBuf,
    /// `TAG=path.tsv`, or a path whose file name up to the first dot is the tag. Repeatable.
    #[arg(long, required = true)]
    test: Vec<String>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value = "Model")]
    label: String,
    #[command(flatten)]
    decode: DecodeArgs,
}

#[derive(Args, Debug)]
struct BacknormArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    subset: Option<usize>,
    /// Rows to train, e.g. `Specific,Joint,Joint+BN,Joint+BN'`.
    #[arg(long, value_delimiter = ',')]
    rows: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Clean text, one sentence per line.
    #[arg(long, required_unless_present_any = ["list_profiles", "sentences"], conflicts_with = "sentences")]
    mono: Option<PathBuf>,
    /// Generate this many clean sentences from the built-in lexicon instead of reading `--mono`.
    #[arg(long)]
    sentences: Option<usize>,
    #[arg(long, default_value_t = 0, requires = "sentences")]
    text_seed: u64,
    #[arg(long, default_value_t = 6, requires = "sentences")]
    max_words: usize,
    /// Also write the clean sentences here, one per line.
    #[arg(long)]
    clean_out: Option<PathBuf>,
    /// Bundled profile name or path to a profile JSON file.
    #[arg(long, default_value = "B-like")]
    profile: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "S")]
    tag: String,
    #[arg(long, required_unless_present_any = ["list_profiles", "clean_out"])]
    out: Option<PathBuf>,
    #[arg(long)]
    list_profiles: bool,
}

/// Failures sorted by exit code.
enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type CmdResult = Result<(), Failure>;

fn io_err(path: &Path, e: io::Error) -> Failure {
    Failure::Run(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn cmd_split(a: &SplitArgs) -> CmdResult {
    let spec = SplitSpec {
        train: a.train,
        test: a.test,
        val: a.val,
        seed: a.seed,
    };
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let mut record = RunMetadata::start("split").config(spec)?.seeds(&[a.seed]);
    record.input(&a.input)?;
    let corpus = ParallelCorpus::load(&a.input, &a.tag)?;
    let parts = corpus.split(&spec)?;
    create_dir(&a.outdir)?;
    for (name, part) in [("train", &parts.train), ("test", &parts.test), ("val", &parts.val)] {
        let path = a.outdir.join(format!("{}.{name}.tsv", a.tag));
        part.save(&path)?;
        record.output(&path)?;
        println!("{name}: {} pairs -> {}", part.len(), path.display());
    }
    record.write(&a.outdir.join("split.meta.json"))?;
    Ok(())
}

fn cmd_tokenizer(a: &TokenizerArgs) -> CmdResult {
    let corpus = ParallelCorpus::load(&a.input, "all")?;
    let factors: Vec<f64> = match (a.factor, a.factors.is_empty()) {
        (Some(f), _) => vec![f],
        (None, false) => a.factors.clone(),
        (None, true) => return Err(Failure::Usage("give --factor or --factors".into())),
    };
    let sweep = a.factor.is_none();
    if sweep {
        create_dir(&a.out)?;
    }
    let mut record = RunMetadata::start("tokenizer").config(&factors)?;
    record.input(&a.input)?;
    let mut csv = String::from("factor,alphabet,merges,vocab\n");
    for &f in &factors {
        let model = BpeModel::train(&corpus, f)?;
        let path = if sweep { a.out.join(format!("tokenizer-{f}.bpe")) } else { a.out.clone() };
        model.save(&path)?;
        record.output(&path)?;
        let (alpha, merges, vocab) = (model.alphabet().len(), model.merges().len(), model.vocab_size());
        println!("factor: {f}");
        println!("alphabet: {alpha}");
        println!("merges: {merges}");
        println!("vocab: {vocab}");
        csv.push_str(&format!("{f},{alpha},{merges},{vocab}\n"));
    }
    if sweep {
        let path = a.out.join("vocab.csv");
        write(&path, &csv)?;
        record.output(&path)?;
        record.write(&a.out.join("tokenizer.meta.json"))?;
    } else {
        record.write(&sidecar(&a.out))?;
    }
    Ok(())
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigOverride {
    model: Option<Hyperparams>,
    train: Option<TrainConfig>,
}

fn load_override(path: &Path) -> Result<ConfigOverride, Failure> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let parsed = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| Failure::Run(Error::InvalidInput(format!("{}: {e}", path.display()))))
}

#[derive(Serialize)]
struct TrainRecord<'a> {
    manifest: &'a Manifest,
    direction: &'a str,
    tags: &'a [String],
    model: &'a Hyperparams,
    train: &'a TrainConfig,
}

fn cmd_train(a: &TrainArgs) -> CmdResult {
    let mut manifest = Manifest::load(&a.manifest)?;
    if let Some(path) = &a.config {
        let o = load_override(path)?;
        if let Some(m) = o.model {
            manifest.model = m;
        }
        if let Some(t) = o.train {
            manifest.train = t;
        }
    }
    if let Some(seed) = a.seed {
        manifest.train.seed = seed;
    }
    manifest.train.validate()?;
    let mut splits = manifest.splits()?;
    let tags: Vec<String> = if a.tags.is_empty() { splits.keys().cloned().collect() } else { a.tags.clone() };
    for t in &tags {
        if !splits.contains_key(t) {
            return Err(Failure::Run(Error::InvalidInput(format!("manifest has no data tagged {t}"))));
        }
    }
    splits.retain(|k, _| tags.contains(k));
    let trains: Vec<ParallelCorpus> = splits.values().map(|s| s.train.clone()).collect();
    let vals: Vec<ParallelCorpus> = splits.values().map(|s| s.val.clone()).collect();
    let (mut train_set, mut val_set) = (ParallelCorpus::merge(&trains, "train")?, ParallelCorpus::merge(&vals, "val")?);
    if a.direction == Direction::Reverse {
        train_set = train_set.reversed();
        val_set = val_set.reversed();
    }

    create_dir(&a.out)?;
    let mut record = RunMetadata::start("train");
    record.input(&a.manifest)?;
    if let Some(c) = &a.config {
        record.input(c)?;
    }
    for d in &manifest.datasets {
        record.input(&manifest.resolve(&d.path))?;
    }
    let (tokenizer, tok_path) = match &a.tokenizer {
        Some(p) => {
            record.input(p)?;
            (BpeModel::load(p)?, p.clone())
        }
        None => {
            let key = if tags.len() == 1 { tags[0].as_str() } else { JOINT_KEY };
            let tok = BpeModel::train(&train_set, manifest.factor_for(key))?;
            let p = a.out.join("tokenizer.bpe");
            tok.save(&p)?;
            record.output(&p)?;
            (tok, p)
        }
    };
    let tok_ref = TokenizerRef::of(&tokenizer, tok_path.display().to_string());
    let initial = match &a.init {
        Some(p) => {
            record.input(p)?;
            Checkpoint::load_with_tokenizer(p, &tokenizer)?.model()?
        }
        None => Transformer::new(manifest.model.clone().with_vocab(tokenizer.vocab_size()), manifest.train.seed)?,
    };
    info!(
        "training {} on {} pairs ({} validation), vocab {}",
        match a.direction {
            Direction::Forward => "forward",
            Direction::Reverse => "reverse",
        },
        train_set.len(),
        val_set.len(),
        tokenizer.vocab_size()
    );
    let log_path = a.out.join("train.jsonl");
    let mut log_file = fs::File::create(&log_path).map_err(|e| io_err(&log_path, e))?;
    let outcome = train_from(initial, &manifest.train, &train_set, &val_set, &tokenizer, tok_ref, Some(&mut log_file))?;
    log_file.flush().map_err(|e| io_err(&log_path, e))?;
    let ckpt = a.out.join("model.ckpt");
    outcome.checkpoint.save(&ckpt)?;
    record.output(&ckpt)?;
    record.output(&log_path)?;
    println!(
        "stopped: {:?}; best epoch {:?}; checkpoint {} ({})",
        outcome.stop,
        outcome.best_epoch,
        ckpt.display(),
        outcome.checkpoint.content_hash()?
    );
    let direction = format!("{:?}", a.direction).to_lowercase();
    let config = TrainRecord {
        manifest: &manifest,
        direction: &direction,
        tags: &tags,
        model: &outcome.checkpoint.hyperparams,
        train: &manifest.train,
    };
    record
        .config(&config)?
        .seeds(&[manifest.train.seed])
        .write(&a.out.join("metadata.json"))?;
    Ok(())
}

fn load_model(model: &Path, tokenizer: &Path) -> Result<(Transformer<f32>, BpeModel), Failure> {
    let tok = BpeModel::load(tokenizer)?;
    let ckpt = Checkpoint::load_with_tokenizer(model, &tok)?;
    Ok((ckpt.model()?, tok))
}

fn cmd_normalize(a: &NormalizeArgs) -> CmdResult {
    let cfg = a.decode.config();
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let (model, tok) = load_model(&a.model, &a.tokenizer)?;
    let mut text = String::new();
    if a.input == "-" {
        io::stdin().read_to_string(&mut text).map_err(|e| io_err(Path::new("<stdin>"), e))?;
    } else {
        let p = Path::new(&a.input);
        let bytes = fs::read(p).map_err(|e| io_err(p, e))?;
        text = String::from_utf8(bytes).map_err(|_| Error::InvalidInput(format!("{}: invalid UTF-8", p.display())))?;
    }
    let had_newline = text.ends_with('\n');
    let body = text.strip_suffix('\n').unwrap_or(&text);
    let (mut out, truncated) = if text.is_empty() { (String::new(), Vec::new()) } else { normalize_text(&model, &tok, body, &cfg)? };
    if had_newline {
        out.push('\n');
    }
    if a.flag_truncated {
        for line in &truncated {
            eprintln!("warning: line {line}: output hit the length cap and was truncated");
        }
    } else if !truncated.is_empty() {
        warn!("{} line(s) hit the length cap; rerun with --flag-truncated to list them", truncated.len());
    }
    if a.out == "-" {
        io::stdout().write_all(out.as_bytes()).map_err(|e| io_err(Path::new("<stdout>"), e))?;
    } else {
        let p = Path::new(&a.out);
        write(p, &out)?;
        let mut record = RunMetadata::start("normalize").config(&cfg)?;
        record.input(&a.model)?;
        record.input(&a.tokenizer)?;
        if a.input != "-" {
            record.input(Path::new(&a.input))?;
        }
        record.output(p)?;
        record.write(&sidecar(p))?;
    }
    Ok(())
}

fn parse_test_arg(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((tag, path)) if !tag.is_empty() => (tag.to_string(), PathBuf::from(path)),
        _ => {
            let p = PathBuf::from(arg);
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let tag = name.split('.').next().unwrap_or("test").to_string();
            (tag, p)
        }
    }
}

fn cmd_evaluate(a: &EvaluateArgs) -> CmdResult {
    let cfg = a.decode.config();
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let (model, tok) = load_model(&a.model, &a.tokenizer)?;
    let mut record = RunMetadata::start("evaluate").config(&cfg)?;
    record.input(&a.model)?;
    record.input(&a.tokenizer)?;
    let mut parts = Vec::new();
    for t in &a.test {
        let (tag, path) = parse_test_arg(t);
        record.input(&path)?;
        parts.push(ParallelCorpus::load(&path, &tag)?);
    }
    let test = ParallelCorpus::merge(&parts, "test")?;
    let report = evaluate(&model, &tok, &test, &cfg)?;
    print!("{}", report.to_table(&a.label));
    if report.truncated > 0 {
        warn!("{} test line(s) hit the length cap", report.truncated);
    }
    if let Some(p) = &a.report {
        write(p, &(report.to_json()? + "\n"))?;
        record.output(p)?;
        record.write(&sidecar(p))?;
    }
    Ok(())
}

fn cmd_backnorm(a: &BacknormArgs) -> CmdResult {
    let manifest = Manifest::load(&a.manifest)?;
    let mut rows = Vec::new();
    for r in &a.rows {
        rows.push(Row::from_label(r).ok_or_else(|| Failure::Usage(format!("unknown row {r:?}")))?);
    }
    let mut options = ExperimentOptions {
        subset: a.subset,
        out_dir: Some(a.out.clone()),
        ..Default::default()
    };
    if !rows.is_empty() {
        options.rows = rows;
    }
    create_dir(&a.out)?;
    let labels: Vec<&str> = options.rows.iter().map(|r| r.label()).collect();
    let config = serde_json::json!({ "manifest": &manifest, "rows": labels, "subset": a.subset });
    let mut record = RunMetadata::start("backnorm").config(config)?.seeds(&manifest.seeds);
    record.input(&a.manifest)?;
    for d in &manifest.datasets {
        record.input(&manifest.resolve(&d.path))?;
    }
    let outcome = run_backnorm_experiment(&manifest, &options)?;
    print!("{}", outcome.report.to_table());
    for name in ["report.json", "table.txt"] {
        let p = a.out.join(name);
        if p.exists() {
            record.output(&p)?;
        }
    }
    let timings = serde_json::to_string_pretty(&outcome.timings).map_err(Error::from)?;
    let p = a.out.join("timings.json");
    write(&p, &(timings + "\n"))?;
    record.write(&a.out.join("metadata.json"))?;
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> CmdResult {
    if a.list_profiles {
        for p in bundled_profiles() {
            println!("{}\t{} rules", p.name, p.rules.len());
        }
        return Ok(());
    }
    let mono = match (&a.mono, a.sentences) {
        (Some(path), _) => MonoCorpus::load(path)?,
        (None, Some(n)) => synthetic_mono(n, a.max_words, a.text_seed),
        (None, None) => return Err(Failure::Usage("either --mono or --sentences is required".into())),
    };
    if let Some(clean) = &a.clean_out {
        mono.save(clean)?;
        println!("{} clean sentences written to {}", mono.len(), clean.display());
    }
    let Some(out) = &a.out else {
        return Ok(());
    };
    let profile = NoiseProfile::load(&a.profile)?;
    let generated = generate_corpus(&mono, &profile, a.seed, &a.tag)?;
    generated.corpus.save(out)?;
    println!(
        "{} pairs; profile {}; generator CER estimate {:.2}%",
        generated.corpus.len(),
        profile.name,
        generated.expected_cer()
    );
    let mut record = RunMetadata::start("synth").config(&profile)?.seeds(&[a.seed, a.text_seed]);
    if let Some(path) = &a.mono {
        record.input(path)?;
    }
    record.output(out)?;
    record.write(&sidecar(out))?;
    Ok(())
}

fn run(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Split(a) => cmd_split(a),
        Command::Tokenizer(a) => cmd_tokenizer(a),
        Command::Train(a) => cmd_train(a),
        Command::Normalize(a) => cmd_normalize(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Backnorm(a) => cmd_backnorm(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn configure_threads(threads: usize) {
    norma::parallel::set_enabled(threads != 1);
    #[cfg(feature = "parallel")]
    if threads > 1 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            warn!("could not size the thread pool: {e}");
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    configure_threads(cli.threads);
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { EXIT_DATA } else { EXIT_INTERNAL })
        }
    }
}
