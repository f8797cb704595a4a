use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::metrics::{total_edits, word_accuracy};
use super::Model;
use crate::alphabet::Alphabet;
use crate::ctc::EmissionMatrix;
use crate::decode::{
    beam_search_decode, best_path_decode, token_passing_decode, DecodeOptions, Lexicon, Method,
};
use crate::error::{Error, Result};
use crate::lm::NGramModel;
use crate::textline::{load_manifest, read_pgm, ManifestRecord};

/// A fully resolved transcription scheme.
#[derive(Clone, Debug)]
pub struct DecoderConfig {
    pub method: Method,
    pub lexicon: Option<Lexicon>,
    pub lm: Option<NGramModel>,
    pub alpha: f64,
    pub beam_width: usize,
    pub candidate_count: usize,
}

impl DecoderConfig {
    pub fn naive() -> Self {
        DecoderConfig {
            method: Method::Naive,
            lexicon: None,
            lm: None,
            alpha: 0.0,
            beam_width: 32,
            candidate_count: 10,
        }
    }

    pub fn lexicon(lexicon: Lexicon) -> Self {
        DecoderConfig {
            method: Method::Lexicon,
            lexicon: Some(lexicon),
            ..Self::naive()
        }
    }

    /// Builds a decoder for `alphabet` from optional lexicon and LM files.
    /// `alpha` defaults to 1 with a model and 0 without; `candidate_count`
    /// defaults to 10, capped at the class count.
    pub fn from_files(
        method: Method,
        alphabet: &Alphabet,
        lexicon: Option<&Path>,
        lm: Option<&Path>,
        alpha: Option<f64>,
        beam_width: usize,
        candidate_count: Option<usize>,
    ) -> Result<Self> {
        let lexicon = lexicon.map(|p| Lexicon::load(p, alphabet)).transpose()?;
        let lm = lm.map(NGramModel::load).transpose()?;
        let cfg = DecoderConfig {
            method,
            alpha: alpha.unwrap_or(if lm.is_some() { 1.0 } else { 0.0 }),
            lexicon,
            lm,
            beam_width,
            candidate_count: candidate_count.unwrap_or(10.min(alphabet.num_classes())),
        };
        cfg.validate(alphabet)?;
        Ok(cfg)
    }

    pub fn validate(&self, alphabet: &Alphabet) -> Result<()> {
        if let Some(lm) = &self.lm {
            if lm.alphabet() != alphabet {
                return Err(Error::IncompatibleCheckpoint(
                    "language model alphabet differs from the model's".into(),
                ));
            }
        }
        match self.method {
            Method::Naive => Ok(()),
            Method::Lexicon if self.lexicon.is_none() => Err(Error::invalid("lexicon decoding needs a lexicon")),
            Method::Lexicon => Ok(()),
            Method::Beam => self.options().validate(alphabet.num_classes()),
        }
    }

    fn options(&self) -> DecodeOptions<'_> {
        DecodeOptions {
            beam_width: self.beam_width,
            candidate_count: self.candidate_count,
            alpha: self.alpha,
            lm: self.lm.as_ref().map(|m| m as _),
        }
    }

    /// Transcript and score for one emission matrix. A lexicon with no
    /// feasible word yields an empty transcript scored `-inf`.
    pub fn transcribe(&self, emissions: &EmissionMatrix, alphabet: &Alphabet) -> Result<(String, f64)> {
        match self.method {
            Method::Naive => {
                let d = best_path_decode(emissions);
                Ok((alphabet.decode(d.labels.labels()), d.log_score))
            }
            Method::Lexicon => {
                let lexicon = self
                    .lexicon
                    .as_ref()
                    .ok_or_else(|| Error::invalid("lexicon decoding needs a lexicon"))?;
                match token_passing_decode(emissions, lexicon, true) {
                    Ok(m) => Ok((alphabet.decode(m.labels(lexicon).labels()), m.log_score)),
                    Err(Error::NoFeasibleWord) => Ok((String::new(), f64::NEG_INFINITY)),
                    Err(e) => Err(e),
                }
            }
            Method::Beam => {
                let d = beam_search_decode(emissions, &self.options())?;
                Ok((alphabet.decode(d.labels.labels()), d.log_score))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LineResult {
    pub line_id: String,
    pub truth: String,
    pub hypothesis: String,
    pub log_score: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct EvalCounts {
    pub chars: usize,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub words_total: usize,
    pub words_correct: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub decoder: String,
    pub case_insensitive: bool,
    pub word_accuracy: f64,
    /// `None` when the truth holds no characters.
    pub accurate_rate: Option<f64>,
    pub counts: EvalCounts,
    pub lines: Vec<LineResult>,
}

impl EvalReport {
    pub fn from_lines(decoder: Method, lines: Vec<LineResult>, case_insensitive: bool) -> Result<Self> {
        let fold = |s: &str| if case_insensitive { s.to_lowercase() } else { s.to_string() };
        let pairs: Vec<(String, String)> = lines.iter().map(|l| (fold(&l.truth), fold(&l.hypothesis))).collect();
        let word_accuracy = word_accuracy(&pairs, false)?;
        let edits = total_edits(&pairs);
        let words_correct = pairs.iter().filter(|(t, h)| t == h).count();
        Ok(EvalReport {
            decoder: decoder.name().to_string(),
            case_insensitive,
            word_accuracy,
            accurate_rate: edits.accurate_rate().ok(),
            counts: EvalCounts {
                chars: edits.chars,
                substitutions: edits.substitutions,
                deletions: edits.deletions,
                insertions: edits.insertions,
                words_total: pairs.len(),
                words_correct,
            },
            lines,
        })
    }

    /// `line_id TAB transcript TAB log_score TAB decoder` per line.
    pub fn lines_tsv(&self) -> String {
        let mut out = String::new();
        for l in &self.lines {
            writeln!(out, "{}\t{}\t{}\t{}", l.line_id, l.hypothesis, l.log_score, self.decoder)
                .expect("writing to a String");
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Transcribes and scores every record with `workers` threads. The report
/// does not depend on the worker count.
pub fn evaluate(
    model: &Model,
    records: &[ManifestRecord],
    decoder: &DecoderConfig,
    workers: usize,
    case_insensitive: bool,
) -> Result<EvalReport> {
    decoder.validate(&model.alphabet)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
    let lines = pool.install(|| {
        records
            .par_iter()
            .map(|r| {
                let e = model.emissions(&read_pgm(&r.resolved)?)?;
                let (hypothesis, log_score) = decoder.transcribe(&e, &model.alphabet)?;
                Ok(LineResult {
                    line_id: r.line_id(),
                    truth: r.transcript.clone(),
                    hypothesis,
                    log_score,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    EvalReport::from_lines(decoder.method, lines, case_insensitive)
}

/// Everything `run_pipeline` needs, as paths and flags.
#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    pub method: Method,
    pub lexicon: Option<PathBuf>,
    pub lm: Option<PathBuf>,
    pub alpha: Option<f64>,
    pub beam_width: usize,
    pub candidate_count: Option<usize>,
    pub workers: usize,
    /// Defaults on for the case-collapsed 36-character English alphabet.
    pub case_insensitive: Option<bool>,
    /// Per-line TSV destination.
    pub lines_out: Option<PathBuf>,
    /// JSON report destination.
    pub report_out: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn new(checkpoint: impl Into<PathBuf>, manifest: impl Into<PathBuf>, method: Method) -> Self {
        PipelineConfig {
            checkpoint: checkpoint.into(),
            manifest: manifest.into(),
            method,
            lexicon: None,
            lm: None,
            alpha: None,
            beam_width: 32,
            candidate_count: None,
            workers: 1,
            case_insensitive: None,
            lines_out: None,
            report_out: None,
        }
    }
}

/// Loads the model and manifest, evaluates, and writes the requested
/// outputs.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<EvalReport> {
    let model = Model::load(&cfg.checkpoint)?;
    let records = load_manifest(&cfg.manifest)?;
    if records.is_empty() {
        return Err(Error::invalid("manifest has no records"));
    }
    let decoder = DecoderConfig::from_files(
        cfg.method,
        &model.alphabet,
        cfg.lexicon.as_deref(),
        cfg.lm.as_deref(),
        cfg.alpha,
        cfg.beam_width,
        cfg.candidate_count,
    )?;
    let case_insensitive = cfg
        .case_insensitive
        .unwrap_or_else(|| model.alphabet.is_case_collapsed_english());
    let report = evaluate(&model, &records, &decoder, cfg.workers, case_insensitive)?;
    if let Some(path) = &cfg.lines_out {
        std::fs::write(path, report.lines_tsv()).map_err(|e| Error::io(path, e))?;
    }
    if let Some(path) = &cfg.report_out {
        std::fs::write(path, report.to_json()).map_err(|e| Error::io(path, e))?;
    }
    Ok(report)
}
