use std::fs;
use std::path::Path;

use linescribe::charnet::{build_network, NetworkConfig};
use linescribe::decode::{Lexicon, Method};
use linescribe::harness::{evaluate, run_pipeline, DecoderConfig, Model, PipelineConfig};
use linescribe::lm::NGramModel;
use linescribe::synth::{generate_dataset, GlyphSet};
use linescribe::textline::{load_manifest, WindowConfig};
use linescribe::{Alphabet, Error};

fn setup(dir: &Path, lines: usize) -> (Model, std::path::PathBuf) {
    let alphabet = Alphabet::new("abc".chars()).unwrap();
    let glyphs = GlyphSet::generate(alphabet.clone(), 1).unwrap();
    let manifest = generate_dataset(&glyphs, lines, (1, 4), 2, dir.join("data")).unwrap();
    let windows = WindowConfig {
        pad_width: 80,
        ..WindowConfig::single_scale()
    };
    let params = build_network(&NetworkConfig::desk(4, 1, 3)).unwrap();
    let model = Model::new(params, alphabet, windows).unwrap();
    model.save(dir.join("model.ckpt")).unwrap();
    (model, manifest)
}

#[test]
fn worker_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let (_, manifest) = setup(dir.path(), 12);
    let mut outputs = Vec::new();
    for workers in [1, 8] {
        let lines = dir.path().join(format!("lines{workers}.tsv"));
        let report = dir.path().join(format!("report{workers}.json"));
        let cfg = PipelineConfig {
            workers,
            lines_out: Some(lines.clone()),
            report_out: Some(report.clone()),
            ..PipelineConfig::new(dir.path().join("model.ckpt"), &manifest, Method::Beam)
        };
        run_pipeline(&cfg).unwrap();
        outputs.push((fs::read(lines).unwrap(), fs::read(report).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let tsv = String::from_utf8(outputs[0].0.clone()).unwrap();
    assert_eq!(tsv.lines().count(), 12);
    for line in tsv.lines() {
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(fields.len(), 4);
        assert!(fields[0].starts_with("line_"));
        assert!(fields[2].parse::<f64>().is_ok());
        assert_eq!(fields[3], "beam");
    }
}

#[test]
fn missing_image_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _) = setup(dir.path(), 1);
    let manifest = dir.path().join("broken.tsv");
    fs::write(&manifest, "nowhere/gone.pgm\tab\n").unwrap();
    let cfg = PipelineConfig::new(dir.path().join("model.ckpt"), &manifest, Method::Naive);
    match run_pipeline(&cfg) {
        Err(Error::Io { path, .. }) => assert!(path.ends_with("nowhere/gone.pgm")),
        other => panic!("expected an I/O error, got {other:?}"),
    }
    assert!(matches!(
        run_pipeline(&PipelineConfig::new(dir.path().join("absent.ckpt"), &manifest, Method::Naive)),
        Err(Error::Io { .. })
    ));
}

#[test]
fn language_model_over_another_alphabet_is_incompatible() {
    let dir = tempfile::tempdir().unwrap();
    let (_, manifest) = setup(dir.path(), 2);
    let lm = NGramModel::train("abcd dcba", 3, Alphabet::new("abcd".chars()).unwrap(), 0.9).unwrap();
    let lm_path = dir.path().join("lm.txt");
    lm.save(&lm_path).unwrap();
    let cfg = PipelineConfig {
        lm: Some(lm_path),
        ..PipelineConfig::new(dir.path().join("model.ckpt"), &manifest, Method::Beam)
    };
    assert!(matches!(run_pipeline(&cfg), Err(Error::IncompatibleCheckpoint(_))));
}

#[test]
fn lexicon_answers_come_from_the_lexicon() {
    let dir = tempfile::tempdir().unwrap();
    let (model, manifest) = setup(dir.path(), 6);
    let records = load_manifest(manifest).unwrap();
    let lexicon = Lexicon::from_words(["ab", "cab", "b"], &model.alphabet).unwrap();
    let report = evaluate(&model, &records, &DecoderConfig::lexicon(lexicon), 2, false).unwrap();
    assert_eq!(report.lines.len(), 6);
    for l in &report.lines {
        assert!(["ab", "cab", "b", ""].contains(&l.hypothesis.as_str()));
    }
    assert_eq!(report.counts.words_total, 6);
}
