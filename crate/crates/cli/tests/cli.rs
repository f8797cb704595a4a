use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn linescribe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_linescribe"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = linescribe(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    linescribe(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

/// Synthesizes a small dataset and trains a one-epoch desk checkpoint.
fn trained() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let f = Fixture { _dir: dir, root };
    fs::write(f.path("abc.txt"), "a\nb\nc\n").unwrap();
    let out = ok(&[
        "synth", "--alphabet", s(&f.path("abc.txt")), "--count", "12", "--min-len", "1", "--max-len", "3",
        "--seed", "5", "--out", s(&f.path("data")),
    ]);
    assert!(out.trim().ends_with("manifest.tsv"));
    ok(&[
        "train", "--manifest", s(&f.path("data/manifest.tsv")), "--alphabet", s(&f.path("abc.txt")),
        "--net", "desk", "--epochs", "1", "--lr", "0.01", "--epoch-fraction", "1", "--pad-width", "80",
        "--seed", "1", "--out", s(&f.path("model.ckpt")),
    ]);
    f
}

#[test]
fn full_command_chain() {
    let f = trained();
    let ckpt = f.path("model.ckpt");
    let image = f.path("data/line_000000.pgm");
    let emit = f.path("line_000000.emit");
    ok(&["emit", "--ckpt", s(&ckpt), "--image", s(&image), "--out", s(&emit)]);
    assert!(fs::read_to_string(&emit).unwrap().starts_with("CTC-EMIT v1"));

    let from_emit = ok(&["decode", "--emit", s(&emit), "--alphabet", s(&f.path("abc.txt")), "--method", "naive"]);
    let from_image = ok(&["decode", "--ckpt", s(&ckpt), "--image", s(&image), "--method", "naive"]);
    assert_eq!(from_emit, from_image);
    let fields: Vec<&str> = from_emit.trim_end().split('\t').collect();
    assert_eq!(fields.len(), 4);
    assert_eq!((fields[0], fields[3]), ("line_000000", "naive"));

    fs::write(f.path("corpus.txt"), "abc cab bca aab\n").unwrap();
    ok(&[
        "lm-train", "--corpus", s(&f.path("corpus.txt")), "--order", "3", "--lambda", "0.9",
        "--alphabet", s(&f.path("abc.txt")), "--out", s(&f.path("lm.txt")),
    ]);
    let beam = ok(&[
        "decode", "--emit", s(&emit), "--method", "beam", "--lm", s(&f.path("lm.txt")), "--alpha", "0.5",
        "--beam", "8", "--cn", "4",
    ]);
    assert!(beam.trim_end().ends_with("\tbeam"));

    fs::write(f.path("lexicon.txt"), "a\nab\nabc\nc\n").unwrap();
    let lex = ok(&["decode", "--emit", s(&emit), "--alphabet", s(&f.path("abc.txt")), "--method", "lexicon",
        "--lexicon", s(&f.path("lexicon.txt"))]);
    let word = lex.split('\t').nth(1).unwrap();
    assert!(["a", "ab", "abc", "c", ""].contains(&word));

    let report = f.path("report.json");
    let lines = f.path("lines.tsv");
    ok(&[
        "eval", "--ckpt", s(&ckpt), "--manifest", s(&f.path("data/manifest.tsv")), "--method", "naive",
        "--workers", "2", "--lines", s(&lines), "--report", s(&report),
    ]);
    let json: String = fs::read_to_string(&report).unwrap();
    assert!(json.contains("\"word_accuracy\""));
    assert_eq!(fs::read_to_string(&lines).unwrap().lines().count(), 12);
}

#[test]
fn exit_codes() {
    let f = trained();
    let ckpt = f.path("model.ckpt");
    let image = f.path("data/line_000000.pgm");

    // usage errors
    assert_eq!(code(&["decode", "--bogus"]), 2);
    assert_eq!(code(&["train"]), 2);
    // invalid input: lexicon method without a lexicon
    assert_eq!(code(&["decode", "--ckpt", s(&ckpt), "--image", s(&image), "--method", "lexicon"]), 2);
    // I/O
    assert_eq!(code(&["decode", "--ckpt", s(&ckpt), "--image", s(&f.path("missing.pgm"))]), 3);
    // incompatible checkpoint
    fs::write(f.path("bad.ckpt"), b"XXXXnot a checkpoint").unwrap();
    assert_eq!(code(&["emit", "--ckpt", s(&f.path("bad.ckpt")), "--image", s(&image), "--out", s(&f.path("e"))]), 4);
    // LM over a different alphabet
    fs::write(f.path("xy.txt"), "x\ny\n").unwrap();
    fs::write(f.path("corpus.txt"), "xy yx\n").unwrap();
    ok(&["lm-train", "--corpus", s(&f.path("corpus.txt")), "--alphabet", s(&f.path("xy.txt")), "--out", s(&f.path("xy.lm"))]);
    assert_eq!(
        code(&["decode", "--ckpt", s(&ckpt), "--image", s(&image), "--method", "beam", "--lm", s(&f.path("xy.lm"))]),
        4
    );
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("ab.txt"), "a\nb\n").unwrap();
    let alphabet = dir.path().join("ab.txt");
    for out in ["one", "two"] {
        ok(&["synth", "--alphabet", s(&alphabet), "--count", "5", "--seed", "9", "--out", s(&dir.path().join(out))]);
    }
    for name in ["manifest.tsv", "line_000000.pgm", "line_000004.pgm"] {
        assert_eq!(
            fs::read(dir.path().join("one").join(name)).unwrap(),
            fs::read(dir.path().join("two").join(name)).unwrap()
        );
    }
}
