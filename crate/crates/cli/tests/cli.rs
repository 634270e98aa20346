use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use tempfile::TempDir;

const CORPUS: &str = include_str!("../../core/tests/data/snippet_ro.txt");

fn rodiac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rodiac")).args(args).output().expect("binary runs")
}

fn rodiac_stdin(args: &[&str], input: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_rodiac"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Workspace {
        Workspace { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let path = self.path(name);
        fs::write(&path, text).unwrap();
        path
    }

    fn prepared(&self) -> PathBuf {
        let corpus = self.write("corpus.txt", CORPUS);
        let out = self.path("data");
        let o = rodiac(&["prepare", "--corpus", p(&corpus), "--out", p(&out), "--split", "0.6,0.2,0.2", "--seed", "1"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        out
    }

    /// Vector file with one 8-dimensional vector per lowercase word form.
    fn vectors(&self) -> PathBuf {
        let mut words: Vec<String> =
            CORPUS.split(|c: char| !c.is_alphabetic()).filter(|w| !w.is_empty()).map(str::to_lowercase).collect();
        words.sort();
        words.dedup();
        let mut text = format!("{} 8\n", words.len());
        for (i, w) in words.iter().enumerate() {
            let v: Vec<String> = (0..8).map(|d| format!("{:.3}", ((i * 7 + d * 13) % 17) as f32 / 17.0 - 0.5)).collect();
            text.push_str(&format!("{w} {}\n", v.join(" ")));
        }
        self.write("vectors.vec", &text)
    }

    fn chars_only_config(&self, data: &Path) -> PathBuf {
        let text = format!(
            "# chars only\ndata_dir = {}\ncheckpoint = chars.ckpt\nlog = chars.log\nuse_word_path = false\nuse_sentence_path = false\n\
             char_emb_dim = 8\nchar_lstm_h = 8\nhidden_sizes = 16\nepochs = 2\nbatch_size = 64\nlr = 0.01\n",
            data.display()
        );
        self.write("chars.conf", &text)
    }
}

#[test]
fn prepare_writes_sentences_manifest_and_histogram() {
    let ws = Workspace::new();
    let data = ws.prepared();
    let sentences = fs::read_to_string(data.join("sentences.txt")).unwrap();
    assert_eq!(sentences.lines().count(), 50);
    let manifest = fs::read_to_string(data.join("split.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 50);
    assert!(manifest.lines().all(|l| ["train", "dev", "test"].contains(&l.split('\t').nth(1).unwrap())));

    let corpus = ws.path("corpus.txt");
    let o = rodiac(&["prepare", "--corpus", p(&corpus), "--out", p(&ws.path("again")), "--split", "0.6,0.2,0.2", "--seed", "1"]);
    let out = stdout(&o);
    for letter in ['a', 'ă', 'â', 'i', 'î', 's', 'ș', 't', 'ț'] {
        let expected = CORPUS.chars().filter(|&c| c.to_lowercase().next() == Some(letter)).count();
        assert!(out.lines().any(|l| l == format!("{letter}\t{expected}")), "{letter} {expected}\n{out}");
    }
    assert_eq!(fs::read(data.join("split.tsv")).unwrap(), fs::read(ws.path("again/split.tsv")).unwrap());
}

#[test]
fn prepare_two_sentences_and_ratio_filter() {
    let ws = Workspace::new();
    let two = ws.write("two.txt", "Ana știe. Tata vine acasă!\n");
    let o = rodiac(&["prepare", "--corpus", p(&two), "--out", p(&ws.path("two")), "--split", "1,0,0", "--seed", "0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_to_string(ws.path("two/sentences.txt")).unwrap(), "Ana știe.\nTata vine acasă!\n");

    let ascii = ws.write("ascii.txt", "This is plain. Nothing marked here.\n");
    let o = rodiac(&[
        "prepare", "--corpus", p(&ascii), "--out", p(&ws.path("x")), "--split", "0.8,0.1,0.1", "--seed", "0",
        "--min-diacritic-ratio", "0.5",
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("no sentences"));

    let o = rodiac(&["prepare", "--corpus", p(&two), "--out", p(&ws.path("y")), "--split", "0.5,0.1", "--seed", "0"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn embed_merges_and_is_deterministic() {
    let ws = Workspace::new();
    let vec = ws.write("toy.vec", "3 2\nfata 1 2\nfață 3 4\nsat 5 6\n");
    let cache = ws.path("toy.cache");
    let o = rodiac(&["embed", "--vectors", p(&vec), "--out", p(&cache)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("3 words"));
    assert!(stdout(&o).contains("2 diacritic-free keys"));
    let first = fs::read(&cache).unwrap();
    assert_eq!(code(&rodiac(&["embed", "--vectors", p(&vec), "--out", p(&cache)])), 0);
    assert_eq!(first, fs::read(&cache).unwrap());

    let missing = ws.path("missing.vec");
    let o = rodiac(&["embed", "--vectors", p(&missing), "--out", p(&cache)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("missing.vec"));
}

#[test]
fn chars_only_train_evaluate_restore() {
    let ws = Workspace::new();
    let data = ws.prepared();
    let conf = ws.chars_only_config(&data);
    let o = rodiac(&["train", "--config", p(&conf)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let log = fs::read_to_string(ws.path("chars.log")).unwrap();
    assert_eq!(log.lines().count(), 2);
    for line in log.lines() {
        assert!(stdout(&o).contains(line));
        assert_eq!(line.split('\t').count(), 4);
    }

    // same seed, same log apart from wall time
    fs::rename(ws.path("chars.log"), ws.path("first.log")).unwrap();
    assert_eq!(code(&rodiac(&["train", "--config", p(&conf)])), 0);
    let strip_time = |s: String| -> Vec<String> {
        s.lines().map(|l| l.rsplit_once('\t').unwrap().0.to_owned()).collect()
    };
    assert_eq!(
        strip_time(fs::read_to_string(ws.path("first.log")).unwrap()),
        strip_time(fs::read_to_string(ws.path("chars.log")).unwrap())
    );

    let ck = ws.path("chars.ckpt");
    let o = rodiac(&["evaluate", "--checkpoint", p(&ck), "--split", "test"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = stdout(&o);
    assert!(report.contains("Letter  Precision  Recall   F-Score"));
    let rows: Vec<&str> = report.lines().skip_while(|l| !l.starts_with("Letter")).skip(1).take(9).collect();
    let firsts: Vec<char> = rows.iter().map(|r| r.chars().next().unwrap()).collect();
    assert_eq!(firsts, vec!['a', 'ă', 'â', 'i', 'î', 's', 'ș', 't', 'ț']);
    assert!(report.contains("unigram baseline"));

    let o = rodiac(&["evaluate", "--checkpoint", p(&ck), "--split", "dev", "--tsv"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("metric\tletter\tvalue\n"));
    assert!(stdout(&o).contains("baseline_char_acc\t-\t"));

    let plain = ws.write("plain.txt", "0123 xyz, bmw!\n\nCeva de spus despre tara si stiinta.\r\nfara final");
    let o = rodiac(&["restore", "--checkpoint", p(&ck), "--input", p(&plain)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let restored = stdout(&o);
    assert!(restored.starts_with("0123 xyz, bmw!\n\n"));
    let strip = |s: &str| s.chars().map(|c| match c { 'ă' | 'â' => 'a', 'î' => 'i', 'ș' => 's', 'ț' => 't', 'Ă' | 'Â' => 'A', 'Î' => 'I', 'Ș' => 'S', 'Ț' => 'T', c => c }).collect::<String>();
    assert_eq!(strip(&restored), fs::read_to_string(&plain).unwrap());

    let o = rodiac_stdin(&["restore", "--checkpoint", p(&ck)], "xyz 42\n");
    assert_eq!(stdout(&o), "xyz 42\n");
    let o = rodiac_stdin(&["restore", "--checkpoint", p(&ck), "--preserve-existing"], "știință și țară\n");
    assert_eq!(stdout(&o), "știință și țară\n");
}

#[test]
fn full_model_needs_embedding_cache() {
    let ws = Workspace::new();
    let data = ws.prepared();
    let base = format!(
        "data_dir={}\nchar_emb_dim=4\nchar_lstm_h=4\nhidden_sizes=8\nword_dim=8\nsent_lstm_h=4\nepochs=1\ncheckpoint=full.ckpt\nlog=full.log\n",
        data.display()
    );
    let conf = ws.write("full.conf", &base);
    let o = rodiac(&["train", "--config", p(&conf)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("embed"), "{}", stderr(&o));

    let conf = ws.write("full2.conf", &format!("{base}embeddings=nowhere.cache\n"));
    let o = rodiac(&["train", "--config", p(&conf)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("embed"));

    let vec = ws.vectors();
    let cache = ws.path("emb.cache");
    assert_eq!(code(&rodiac(&["embed", "--vectors", p(&vec), "--out", p(&cache)])), 0);
    let o = rodiac(&["train", "--config", p(&conf), "--set", &format!("embeddings={}", cache.display())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = rodiac(&["evaluate", "--checkpoint", p(&ws.path("full.ckpt")), "--split", "dev"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn config_errors_are_usage_errors() {
    let ws = Workspace::new();
    let data = ws.prepared();
    let conf = ws.write("bad.conf", &format!("data_dir={}\nepoch=3\n", data.display()));
    let o = rodiac(&["train", "--config", p(&conf)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("epoch"));

    let conf = ws.chars_only_config(&data);
    let log = ws.path("override.log");
    let o = rodiac(&["train", "--config", p(&conf), "--set", "epochs=1", "--set", &format!("log={}", log.display())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_to_string(&log).unwrap().lines().count(), 1);

    assert_eq!(code(&rodiac(&["train", "--config", p(&conf), "--set", "window=4"])), 1);
    assert_eq!(code(&rodiac(&["train", "--config", p(&ws.path("none.conf"))])), 2);
}

#[test]
fn gradcheck_exit_codes() {
    let o = rodiac(&["gradcheck"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let line = stdout(&o).lines().next().unwrap().to_owned();
    let err: f64 = line.split_whitespace().nth(3).unwrap().parse().unwrap();
    assert!(err < 1e-4, "{line}");
    assert_eq!(stdout(&rodiac(&["gradcheck", "--seed", "3"])), stdout(&rodiac(&["gradcheck", "--seed", "3"])));
    assert_eq!(code(&rodiac(&["gradcheck", "--threshold", "1e-30"])), 3);
    assert_eq!(code(&rodiac(&["gradcheck", "--eps", "0.5"])), 1);
}

#[test]
fn usage_and_missing_inputs() {
    assert_eq!(code(&rodiac(&[])), 1);
    assert_eq!(code(&rodiac(&["restore"])), 1);
    assert_eq!(code(&rodiac(&["evaluate", "--checkpoint", "x", "--split", "train"])), 1);
    assert_eq!(code(&rodiac(&["--help"])), 0);
    let o = rodiac(&["restore", "--checkpoint", "/nonexistent/model.ckpt"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("/nonexistent/model.ckpt"));
    let ws = Workspace::new();
    let junk = ws.write("junk.ckpt", "not a checkpoint");
    assert_eq!(code(&rodiac(&["evaluate", "--checkpoint", p(&junk), "--split", "dev"])), 2);
}
