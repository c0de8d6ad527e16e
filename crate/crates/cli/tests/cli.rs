use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn norma(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_norma"))
        .args(args)
        .env_remove("NORMA_CONFIG")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_mono(dir: &Path, n: usize) -> std::path::PathBuf {
    let words = ["ciassa", "ægua", "caña", "scöa", "figgeu", "mòllo", "vêgio", "pan"];
    let lines: String = (0..n)
        .map(|i| format!("{} {} {}.\n", words[i % 8], words[(i / 8) % 8], words[(i * 3 + 1) % 8]))
        .collect();
    let path = dir.join("mono.txt");
    fs::write(&path, lines).unwrap();
    path
}

fn synth(dir: &Path, profile: &str, tag: &str, n: usize) -> std::path::PathBuf {
    let mono = write_mono(dir, n);
    let out = dir.join(format!("{tag}.tsv"));
    let o = norma(&["synth", "--mono", p(&mono), "--profile", profile, "--seed", "3", "--tag", tag, "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let o = norma(&["split", "--tag", "P", "--outdir", "x"]);
    assert_eq!(code(&o), 2);
    let o = norma(&["frobnicate"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn synth_lists_profiles_and_is_deterministic() {
    let o = norma(&["synth", "--list-profiles"]);
    assert_eq!(code(&o), 0);
    let listed = stdout(&o);
    for name in ["C-like", "P-like", "B-like", "G-like", "identity"] {
        assert!(listed.contains(name), "{listed}");
    }

    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "G-like", "G", 40);
    let first = fs::read(&a).unwrap();
    let a = synth(dir.path(), "G-like", "G", 40);
    assert_eq!(fs::read(&a).unwrap(), first);
    assert!(dir.path().join("G.tsv.meta.json").exists());

    let id = synth(dir.path(), "identity", "I", 10);
    for line in fs::read_to_string(id).unwrap().lines() {
        let (s, t) = line.split_once('\t').unwrap();
        assert_eq!(s, t);
    }
}

#[test]
fn split_writes_three_parts_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let input = synth(dir.path(), "B-like", "B", 50);
    let out = dir.path().join("parts");
    let run = || {
        let o = norma(&["split", "--input", p(&input), "--tag", "B", "--seed", "4", "--outdir", p(&out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        ["train", "test", "val"].map(|part| fs::read_to_string(out.join(format!("B.{part}.tsv"))).unwrap())
    };
    let first = run();
    assert_eq!(first.each_ref().map(|s| s.lines().count()), [35, 10, 5]);
    assert_eq!(run(), first);
    let meta = fs::read_to_string(out.join("split.meta.json")).unwrap();
    assert!(meta.contains("\"seeds\"") && meta.contains("\"inputs\""));

    let o = norma(&["split", "--input", p(&input), "--tag", "B", "--train", "0.5", "--outdir", p(&out)]);
    assert_eq!(code(&o), 2, "fractions that do not sum to one");
    let o = norma(&["split", "--input", p(&dir.path().join("nope.tsv")), "--tag", "B", "--outdir", p(&out)]);
    assert_eq!(code(&o), 3);
}

#[test]
fn tokenizer_single_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let input = synth(dir.path(), "P-like", "P", 30);
    let model = dir.path().join("tok.bpe");
    let o = norma(&["tokenizer", "--input", p(&input), "--factor", "1", "--out", p(&model)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("merges: 0"), "{}", stdout(&o));
    assert!(model.exists());

    let o = norma(&["tokenizer", "--input", p(&input), "--factor", "0.5", "--out", p(&model)]);
    assert_eq!(code(&o), 2);

    let sweep = dir.path().join("sweep");
    let o = norma(&["tokenizer", "--input", p(&input), "--factors", "1,1.25,1.5,1.75,2", "--out", p(&sweep)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(sweep.join("vocab.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "factor,alphabet,merges,vocab");
    assert_eq!(rows.len(), 6);
    for row in &rows[1..] {
        let f: Vec<f64> = row.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(f[3], (f[0] * f[1]).ceil() + 4.0, "{row}");
        assert!(sweep.join(format!("tokenizer-{}.bpe", f[0])).exists());
    }
}

fn manifest(dir: &Path) -> std::path::PathBuf {
    let b = synth(dir, "B-like", "B", 60);
    let c = synth(dir, "C-like", "C", 60);
    let text = format!(
        r#"{{
  "datasets": [
    {{"path": "{}", "tag": "B"}},
    {{"path": "{}", "tag": "C"}},
    {{"path": "mono.txt", "role": "mono"}}
  ],
  "model": {{"enc_layers": 1, "dec_layers": 1, "heads": 2, "d_model": 16, "d_ff": 32, "dropout": 0.1}},
  "train": {{"max_epochs": 2, "warmup_updates": 10, "val_cer_pairs": 0, "seed": 5}},
  "decode": {{"strategy": "greedy"}},
  "seeds": [1]
}}"#,
        b.file_name().unwrap().to_str().unwrap(),
        c.file_name().unwrap().to_str().unwrap()
    );
    let path = dir.join("manifest.json");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn train_normalize_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path());
    let out = dir.path().join("fwd");
    let o = norma(&["--threads", "1", "train", "--manifest", p(&m), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = out.join("model.ckpt");
    let tok = out.join("tokenizer.bpe");
    let first = fs::read(&ckpt).unwrap();
    assert_eq!(fs::read_to_string(out.join("train.jsonl")).unwrap().lines().count(), 2);
    assert!(fs::read_to_string(out.join("metadata.json")).unwrap().contains("\"direction\": \"forward\""));

    // Same seed, same bytes.
    let o = norma(&["--threads", "1", "train", "--manifest", p(&m), "--out", p(&out)]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(&ckpt).unwrap(), first);

    let rev = dir.path().join("rev");
    let o = norma(&["train", "--manifest", p(&m), "--direction", "reverse", "--tags", "B", "--out", p(&rev)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_ne!(fs::read(rev.join("model.ckpt")).unwrap(), first);

    // A checkpoint paired with the wrong tokenizer is a data error.
    let o = norma(&["normalize", "--model", p(&ckpt), "--tokenizer", p(&rev.join("tokenizer.bpe"))]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("hash"));
    let o = norma(&[
        "train", "--manifest", p(&m), "--tokenizer", p(&rev.join("tokenizer.bpe")), "--init", p(&ckpt), "--out",
        p(&dir.path().join("bad")),
    ]);
    assert_eq!(code(&o), 3);

    // stdin to stdout, line count preserved, blank lines untouched.
    let input = "ciassa pan.\n   \nfiggeu caña.\n";
    let mut child = Command::new(env!("CARGO_BIN_EXE_norma"))
        .args(["normalize", "--model", p(&ckpt), "--tokenizer", p(&tok), "--in", "-", "--out", "-", "--beam", "1"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(code(&o), 0);
    let beam1 = stdout(&o);
    assert_eq!(beam1.lines().count(), 3);
    assert_eq!(beam1.lines().nth(1), Some("   "));

    let in_file = dir.path().join("in.txt");
    fs::write(&in_file, input).unwrap();
    let out_file = dir.path().join("out.txt");
    let o = norma(&["normalize", "--model", p(&ckpt), "--tokenizer", p(&tok), "--in", p(&in_file), "--out", p(&out_file), "--greedy", "--flag-truncated"]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_to_string(&out_file).unwrap(), beam1);
    assert!(dir.path().join("out.txt.meta.json").exists());

    let report = dir.path().join("report.json");
    let o = norma(&[
        "evaluate", "--model", p(&ckpt), "--tokenizer", p(&tok), "--test", &format!("B={}", p(&dir.path().join("B.tsv"))),
        "--test", p(&dir.path().join("C.tsv")), "--report", p(&report), "--greedy",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = stdout(&o);
    let header = table.lines().next().unwrap();
    assert!(header.find(" B").unwrap() < header.find(" C").unwrap());
    assert!(header.contains("Joint"));
    assert!(table.lines().any(|l| l.starts_with("Copy")));
    let json = fs::read_to_string(&report).unwrap();
    assert!(json.contains("\"copy_baseline\"") && json.contains("\"aggregation\": \"micro\""));
}

#[test]
fn evaluate_on_identity_data_scores_zero_for_copy() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path());
    let out = dir.path().join("m");
    assert_eq!(code(&norma(&["train", "--manifest", p(&m), "--out", p(&out)])), 0);
    let id = synth(dir.path(), "identity", "I", 12);
    let o = norma(&[
        "evaluate", "--model", p(&out.join("model.ckpt")), "--tokenizer", p(&out.join("tokenizer.bpe")), "--test",
        p(&id), "--greedy",
    ]);
    assert_eq!(code(&o), 0);
    let copy = stdout(&o).lines().find(|l| l.starts_with("Copy")).unwrap().to_string();
    assert!(copy.split_whitespace().skip(1).all(|c| c == "0.00"), "{copy}");
}

#[test]
fn config_file_and_environment_override_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path());
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "[train]\nmax_epochs = 1\nwarmup_updates = 5\nval_cer_pairs = 0\n").unwrap();
    let out = dir.path().join("o");
    let o = Command::new(env!("CARGO_BIN_EXE_norma"))
        .args(["train", "--manifest", p(&m), "--out", p(&out)])
        .env("NORMA_CONFIG", &cfg)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(out.join("train.jsonl")).unwrap().lines().count(), 1);

    fs::write(&cfg, "[train]\nmax_epochz = 1\n").unwrap();
    let o = norma(&["train", "--manifest", p(&m), "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(code(&o), 3);
}

#[test]
fn backnorm_rejects_oversized_subset() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path());
    let o = norma(&["backnorm", "--manifest", p(&m), "--subset", "100000", "--out", p(&dir.path().join("bn"))]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let o = norma(&["backnorm", "--manifest", p(&m), "--rows", "Nonsense", "--out", p(&dir.path().join("bn"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn backnorm_writes_a_table_shaped_report() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path());
    let out = dir.path().join("bn");
    let o = norma(&["backnorm", "--manifest", p(&m), "--subset", "20", "--rows", "Specific,Joint+BN", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = stdout(&o);
    assert!(table.lines().any(|l| l.starts_with("Specific ")), "{table}");
    assert!(table.lines().any(|l| l.starts_with("Joint+BN ")), "{table}");
    for f in ["report.json", "table.txt", "metadata.json", "timings.json", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(out.join("seed-1").is_dir());
}

#[test]
fn synth_can_generate_its_own_clean_text() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("mono.txt");
    let o = norma(&["synth", "--sentences", "25", "--text-seed", "4", "--clean-out", p(&clean)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(&clean).unwrap().lines().count(), 25);

    let out = dir.path().join("G.tsv");
    let args = ["synth", "--sentences", "25", "--text-seed", "4", "--profile", "G-like", "--tag", "G", "--out", p(&out)];
    assert_eq!(code(&norma(&args)), 0);
    let first = fs::read_to_string(&out).unwrap();
    let targets: Vec<&str> = first.lines().map(|l| l.split('\t').nth(1).unwrap()).collect();
    let clean_text = fs::read_to_string(&clean).unwrap();
    assert_eq!(targets, clean_text.lines().collect::<Vec<_>>());
    assert_eq!(code(&norma(&args)), 0);
    assert_eq!(fs::read_to_string(&out).unwrap(), first);

    let both = norma(&["synth", "--sentences", "5", "--mono", p(&clean), "--out", p(&out)]);
    assert_eq!(code(&both), 2);
}
