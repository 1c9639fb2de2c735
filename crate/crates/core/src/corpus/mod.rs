//! The corpus data model: speakers, utterances, manifest ingestion,
//! preprocessing, the synthetic generator and the scenario splitter.
//!
//! A complete speaker contributes 10 digits × 3 batches × 7 repetitions =
//! 210 utterances. Domain labels are derived, never stored: 0 iff the
//! speaker is a control.

pub mod split;
pub mod synth;
pub mod wav;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const DIGITS: usize = 10;
pub const BATCHES: usize = 3;
pub const REPETITIONS: usize = 7;
/// Utterances per complete speaker.
pub const PER_SPEAKER: usize = DIGITS * BATCHES * REPETITIONS;

/// Manifest header line; required, and written back verbatim.
pub const MANIFEST_HEADER: &str = "speaker_id,is_control,severity,digit,batch,repetition,path";

#[derive(Debug)]
pub enum CorpusError {
    NotWav,
    UnsupportedEncoding(String),
    TruncatedFile(String),
    MalformedRow { line: usize, message: String },
    MissingFile(PathBuf),
    DuplicateCell { line: usize, speaker: String, digit: usize, batch: usize, repetition: usize },
    EmptyWaveform,
    InvalidGeometry(String),
    UnknownSpeaker(String),
    NotDysarthric(String),
    IncompleteSpeaker { id: String, missing: String },
    Io(std::io::Error),
}

impl fmt::Display for CorpusError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorpusError::NotWav => write!(f, "not a RIFF/WAVE file"),
            CorpusError::UnsupportedEncoding(msg) => write!(f, "unsupported WAV encoding: {msg}"),
            CorpusError::TruncatedFile(msg) => write!(f, "truncated or malformed WAV: {msg}"),
            CorpusError::MalformedRow { line, message } => {
                write!(f, "manifest line {line}: {message}")
            }
            CorpusError::MissingFile(p) => write!(f, "missing file {}", p.display()),
            CorpusError::DuplicateCell { line, speaker, digit, batch, repetition } => write!(
                f,
                "manifest line {line}: duplicate cell {speaker}/digit{digit}/batch{batch}/rep{repetition}"
            ),
            CorpusError::EmptyWaveform => write!(f, "empty waveform"),
            CorpusError::InvalidGeometry(msg) => write!(f, "invalid corpus geometry: {msg}"),
            CorpusError::UnknownSpeaker(id) => write!(f, "unknown speaker {id}"),
            CorpusError::NotDysarthric(id) => write!(f, "speaker {id} is not dysarthric"),
            CorpusError::IncompleteSpeaker { id, missing } => {
                write!(f, "speaker {id} is incomplete: missing {missing}")
            }
            CorpusError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for CorpusError {}

impl From<std::io::Error> for CorpusError {
    fn from(e: std::io::Error) -> Self {
        CorpusError::Io(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Severity {
    Mild,
    Moderate,
    High,
    Control,
}

impl Severity {
    pub fn as_str(&self) -> &'static str {
        match self {
            Severity::Mild => "mild",
            Severity::Moderate => "moderate",
            Severity::High => "high",
            Severity::Control => "control",
        }
    }

    pub fn parse(s: &str) -> Option<Severity> {
        match s {
            "mild" => Some(Severity::Mild),
            "moderate" => Some(Severity::Moderate),
            "high" => Some(Severity::High),
            "control" => Some(Severity::Control),
            _ => None,
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerRecord {
    pub id: String,
    pub is_control: bool,
    pub severity: Severity,
    /// Listener-rated intelligibility in [0, 100] when known.
    pub intelligibility: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Utterance {
    pub speaker: String,
    pub digit: usize,
    /// 1-based batch of iterations (the unit rotated in evaluation).
    pub batch: usize,
    /// 1-based repetition within the batch.
    pub repetition: usize,
    /// Fixed-length waveform in [−1, 1].
    pub waveform: Vec<f64>,
    /// 0 for healthy (control) speech, 1 for dysarthric.
    pub domain: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub speakers: Vec<SpeakerRecord>,
    pub utterances: Vec<Utterance>,
    pub sample_rate: u32,
    pub input_length: usize,
}

impl Corpus {
    pub fn speaker(&self, id: &str) -> Option<&SpeakerRecord> {
        self.speakers.iter().find(|s| s.id == id)
    }

    pub fn dysarthric_speakers(&self) -> impl Iterator<Item = &SpeakerRecord> {
        self.speakers.iter().filter(|s| !s.is_control)
    }

    pub fn control_speakers(&self) -> impl Iterator<Item = &SpeakerRecord> {
        self.speakers.iter().filter(|s| s.is_control)
    }

    /// Indices of all utterances by the given speaker.
    pub fn utterances_of(&self, speaker: &str) -> Vec<usize> {
        self.utterances
            .iter()
            .enumerate()
            .filter(|(_, u)| u.speaker == speaker)
            .map(|(i, _)| i)
            .collect()
    }

    /// Checks the structural invariants: referenced speakers exist, all
    /// waveforms share the input length, domain labels match the control
    /// flag.
    pub fn validate(&self) -> Result<(), CorpusError> {
        for rec in &self.speakers {
            if rec.is_control != (rec.severity == Severity::Control) {
                return Err(CorpusError::InvalidGeometry(format!(
                    "speaker {}: control flag and severity disagree",
                    rec.id
                )));
            }
        }
        for u in &self.utterances {
            let rec = self
                .speaker(&u.speaker)
                .ok_or_else(|| CorpusError::UnknownSpeaker(u.speaker.clone()))?;
            if u.waveform.len() != self.input_length {
                return Err(CorpusError::InvalidGeometry(format!(
                    "utterance {}/{}/{}/{} has length {}, corpus expects {}",
                    u.speaker,
                    u.digit,
                    u.batch,
                    u.repetition,
                    u.waveform.len(),
                    self.input_length
                )));
            }
            let expect = if rec.is_control { 0 } else { 1 };
            if u.domain != expect {
                return Err(CorpusError::InvalidGeometry(format!(
                    "utterance of {} has domain {}, speaker implies {}",
                    u.speaker, u.domain, expect
                )));
            }
        }
        Ok(())
    }
}

/// Peak-normalizes (max |x| → 1 unless all-zero) and fixes the length:
/// shorter waveforms are zero-padded symmetrically (extra zero goes to the
/// right), longer ones center-cropped (extra sample dropped at the right).
pub fn preprocess(waveform: &[f64], target_length: usize) -> Result<Vec<f64>, CorpusError> {
    if waveform.is_empty() {
        return Err(CorpusError::EmptyWaveform);
    }
    let peak = waveform.iter().fold(0.0_f64, |m, &x| m.max(x.abs()));
    let scale = if peak > 0.0 { 1.0 / peak } else { 1.0 };
    let normalized: Vec<f64> = waveform.iter().map(|&x| x * scale).collect();

    let n = normalized.len();
    let mut out = vec![0.0; target_length];
    if n <= target_length {
        let left = (target_length - n) / 2;
        out[left..left + n].copy_from_slice(&normalized);
    } else {
        let start = (n - target_length) / 2;
        out.copy_from_slice(&normalized[start..start + target_length]);
    }
    Ok(out)
}

// ── manifest ─────────────────────────────────────────────────────────

/// A cell of the speaker × digit × batch × repetition grid.
pub type Cell = (String, usize, usize, usize);

/// Outcome of loading a manifest: the corpus plus a completeness report of
/// grid cells with no utterance.
#[derive(Debug)]
pub struct ManifestLoad {
    pub corpus: Corpus,
    pub missing_cells: Vec<Cell>,
}

struct ManifestRow {
    line: usize,
    speaker: String,
    is_control: bool,
    severity: Severity,
    digit: usize,
    batch: usize,
    repetition: usize,
    path: String,
}

fn parse_manifest_rows(
    text: &str,
) -> Result<(Vec<ManifestRow>, BTreeMap<String, f64>), CorpusError> {
    let mut rows = Vec::new();
    let mut intelligibility = BTreeMap::new();
    let mut saw_header = false;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        // `#!` comments carry optional speaker metadata that the 7-column
        // row format has no room for; plain `#` lines are free text.
        if let Some(rest) = line.strip_prefix("#!") {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            if parts.len() == 4 && parts[0] == "speaker" && parts[2] == "intelligibility" {
                if let Ok(v) = parts[3].parse::<f64>() {
                    intelligibility.insert(parts[1].to_string(), v);
                }
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        if !saw_header {
            if line != MANIFEST_HEADER {
                return Err(CorpusError::MalformedRow {
                    line: line_no,
                    message: format!("expected header `{MANIFEST_HEADER}`"),
                });
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(CorpusError::MalformedRow {
                line: line_no,
                message: format!("expected 7 comma-separated fields, got {}", fields.len()),
            });
        }
        let bad = |message: String| CorpusError::MalformedRow { line: line_no, message };
        let is_control = match fields[1] {
            "0" => false,
            "1" => true,
            other => return Err(bad(format!("is_control must be 0 or 1, got `{other}`"))),
        };
        let severity = Severity::parse(fields[2])
            .ok_or_else(|| bad(format!("unknown severity `{}`", fields[2])))?;
        if is_control != (severity == Severity::Control) {
            return Err(bad("control flag and severity disagree".to_string()));
        }
        let digit: usize =
            fields[3].parse().map_err(|_| bad(format!("bad digit `{}`", fields[3])))?;
        if digit >= DIGITS {
            return Err(bad(format!("digit {digit} out of range 0-9")));
        }
        let batch: usize =
            fields[4].parse().map_err(|_| bad(format!("bad batch `{}`", fields[4])))?;
        if !(1..=BATCHES).contains(&batch) {
            return Err(bad(format!("batch {batch} out of range 1-3")));
        }
        let repetition: usize =
            fields[5].parse().map_err(|_| bad(format!("bad repetition `{}`", fields[5])))?;
        if !(1..=REPETITIONS).contains(&repetition) {
            return Err(bad(format!("repetition {repetition} out of range 1-7")));
        }
        if fields[6].is_empty() {
            return Err(bad("empty path".to_string()));
        }
        rows.push(ManifestRow {
            line: line_no,
            speaker: fields[0].to_string(),
            is_control,
            severity,
            digit,
            batch,
            repetition,
            path: fields[6].to_string(),
        });
    }
    if !saw_header && !rows.is_empty() {
        unreachable!("rows imply a header");
    }
    Ok((rows, intelligibility))
}

/// Loads a manifest and every WAV it references, resampling to
/// `sample_rate` and preprocessing to `input_length`. WAV paths are
/// resolved relative to the manifest's directory.
pub fn load_manifest(
    path: &Path,
    sample_rate: u32,
    input_length: usize,
) -> Result<ManifestLoad, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CorpusError::MissingFile(path.to_path_buf())
        } else {
            CorpusError::Io(e)
        }
    })?;
    let (rows, intelligibility) = parse_manifest_rows(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));

    let mut speakers: Vec<SpeakerRecord> = Vec::new();
    let mut seen: BTreeSet<Cell> = BTreeSet::new();
    let mut utterances = Vec::new();

    for row in &rows {
        match speakers.iter().find(|s| s.id == row.speaker) {
            None => speakers.push(SpeakerRecord {
                id: row.speaker.clone(),
                is_control: row.is_control,
                severity: row.severity,
                intelligibility: intelligibility.get(&row.speaker).copied(),
            }),
            Some(existing) => {
                if existing.is_control != row.is_control || existing.severity != row.severity {
                    return Err(CorpusError::MalformedRow {
                        line: row.line,
                        message: format!(
                            "speaker {} re-declared with different metadata",
                            row.speaker
                        ),
                    });
                }
            }
        }
        let cell: Cell = (row.speaker.clone(), row.digit, row.batch, row.repetition);
        if !seen.insert(cell) {
            return Err(CorpusError::DuplicateCell {
                line: row.line,
                speaker: row.speaker.clone(),
                digit: row.digit,
                batch: row.batch,
                repetition: row.repetition,
            });
        }
        let (raw, rate) = wav::load_wav(&base.join(&row.path))?;
        let resampled = wav::resample_linear(&raw, rate, sample_rate);
        let waveform = preprocess(&resampled, input_length)?;
        utterances.push(Utterance {
            speaker: row.speaker.clone(),
            digit: row.digit,
            batch: row.batch,
            repetition: row.repetition,
            waveform,
            domain: if row.is_control { 0 } else { 1 },
        });
    }

    let mut missing_cells = Vec::new();
    for s in &speakers {
        for digit in 0..DIGITS {
            for batch in 1..=BATCHES {
                for rep in 1..=REPETITIONS {
                    let cell = (s.id.clone(), digit, batch, rep);
                    if !seen.contains(&cell) {
                        missing_cells.push(cell);
                    }
                }
            }
        }
    }

    let corpus = Corpus { speakers, utterances, sample_rate, input_length };
    corpus.validate()?;
    Ok(ManifestLoad { corpus, missing_cells })
}

/// Writes the corpus as WAV files plus a manifest; the inverse of
/// [`load_manifest`] on corpus metadata. Returns the manifest path.
pub fn save_manifest(corpus: &Corpus, dir: &Path) -> Result<PathBuf, CorpusError> {
    std::fs::create_dir_all(dir)?;
    let manifest_path = dir.join("manifest.csv");
    let mut out = std::fs::File::create(&manifest_path)?;
    writeln!(out, "{MANIFEST_HEADER}")?;
    for s in &corpus.speakers {
        if let Some(v) = s.intelligibility {
            writeln!(out, "#! speaker {} intelligibility {v}", s.id)?;
        }
    }
    let mut order: Vec<usize> = (0..corpus.utterances.len()).collect();
    order.sort_by_key(|&i| {
        let u = &corpus.utterances[i];
        (u.speaker.clone(), u.digit, u.batch, u.repetition)
    });
    for &i in &order {
        let u = &corpus.utterances[i];
        let rel = format!("wav/{}/d{}_b{}_r{}.wav", u.speaker, u.digit, u.batch, u.repetition);
        wav::save_wav(&dir.join(&rel), &u.waveform, corpus.sample_rate)?;
        let rec = corpus.speaker(&u.speaker).expect("validated speaker");
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            u.speaker, rec.is_control as u8, rec.severity, u.digit, u.batch, u.repetition, rel
        )?;
    }
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preprocess_pads_symmetrically() {
        let wave: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let out = preprocess(&wave, 16).unwrap();
        assert_eq!(out.len(), 16);
        assert!(out[..3].iter().all(|&x| x == 0.0));
        assert!(out[13..].iter().all(|&x| x == 0.0));
        assert_eq!(out[3], 0.1); // peak 1.0 → unchanged
        assert_eq!(out[12], 1.0);
    }

    #[test]
    fn preprocess_center_crops() {
        let wave: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let out = preprocess(&wave, 16).unwrap();
        // keep samples 2..18, scaled by the peak 19
        assert!((out[0] - 2.0 / 19.0).abs() < 1e-15);
        assert!((out[15] - 17.0 / 19.0).abs() < 1e-15);
    }

    #[test]
    fn preprocess_all_zero_is_safe() {
        let out = preprocess(&[0.0; 8], 4).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
        assert!(matches!(preprocess(&[], 4), Err(CorpusError::EmptyWaveform)));
    }

    #[test]
    fn preprocess_normalizes_peak() {
        let out = preprocess(&[0.25, -0.5], 2).unwrap();
        assert_eq!(out, vec![0.5, -1.0]);
    }

    fn write_minimal_corpus(dir: &Path) -> PathBuf {
        let manifest = dir.join("manifest.csv");
        let mut text = String::from("# test corpus\n");
        text.push_str(MANIFEST_HEADER);
        text.push('\n');
        for (spk, ctl, sev) in [("C01", 1, "control"), ("D01", 0, "mild")] {
            for digit in 0..2 {
                let rel = format!("{spk}_{digit}.wav");
                let samples: Vec<f64> = (0..32).map(|i| ((i + digit) as f64 * 0.3).sin() * 0.5).collect();
                wav::save_wav(&dir.join(&rel), &samples, 8000).unwrap();
                text.push_str(&format!("{spk},{ctl},{sev},{digit},1,1,{rel}\n"));
            }
        }
        std::fs::write(&manifest, text).unwrap();
        manifest
    }

    #[test]
    fn manifest_load_and_completeness() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_minimal_corpus(dir.path());
        let loaded = load_manifest(&manifest, 8000, 32).unwrap();
        assert_eq!(loaded.corpus.speakers.len(), 2);
        assert_eq!(loaded.corpus.utterances.len(), 4);
        // each speaker is missing 210 − 2 cells
        assert_eq!(loaded.missing_cells.len(), 2 * (PER_SPEAKER - 2));
        assert_eq!(loaded.corpus.utterances[0].domain, 0);
        assert_eq!(loaded.corpus.utterances[2].domain, 1);
    }

    #[test]
    fn empty_manifest_is_an_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        std::fs::write(&path, format!("{MANIFEST_HEADER}\n")).unwrap();
        let loaded = load_manifest(&path, 8000, 32).unwrap();
        assert!(loaded.corpus.utterances.is_empty());
        assert!(loaded.corpus.speakers.is_empty());
    }

    #[test]
    fn out_of_range_digit_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        std::fs::write(&path, format!("{MANIFEST_HEADER}\nX,0,mild,10,1,1,x.wav\n")).unwrap();
        match load_manifest(&path, 8000, 32) {
            Err(CorpusError::MalformedRow { line: 2, message }) => {
                assert!(message.contains("digit"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_cell_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let rel = "a.wav";
        wav::save_wav(&dir.path().join(rel), &[0.1, 0.2], 8000).unwrap();
        let path = dir.path().join("manifest.csv");
        std::fs::write(
            &path,
            format!("{MANIFEST_HEADER}\nX,0,mild,3,1,1,{rel}\nX,0,mild,3,1,1,{rel}\n"),
        )
        .unwrap();
        assert!(matches!(
            load_manifest(&path, 8000, 32),
            Err(CorpusError::DuplicateCell { line: 3, .. })
        ));
    }

    #[test]
    fn missing_wav_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        std::fs::write(&path, format!("{MANIFEST_HEADER}\nX,0,mild,3,1,1,gone.wav\n")).unwrap();
        assert!(matches!(load_manifest(&path, 8000, 32), Err(CorpusError::MissingFile(_))));
    }

    #[test]
    fn header_is_required() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        std::fs::write(&path, "X,0,mild,3,1,1,x.wav\n").unwrap();
        assert!(matches!(
            load_manifest(&path, 8000, 32),
            Err(CorpusError::MalformedRow { line: 1, .. })
        ));
    }

    #[test]
    fn save_then_load_is_identity_on_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_minimal_corpus(dir.path());
        let first = load_manifest(&manifest, 8000, 32).unwrap().corpus;

        let out_dir = dir.path().join("resaved");
        let resaved = save_manifest(&first, &out_dir).unwrap();
        let second = load_manifest(&resaved, 8000, 32).unwrap().corpus;

        assert_eq!(first.speakers, second.speakers);
        assert_eq!(first.utterances.len(), second.utterances.len());
        let key = |u: &Utterance| (u.speaker.clone(), u.digit, u.batch, u.repetition, u.domain);
        let mut a: Vec<_> = first.utterances.iter().map(key).collect();
        let mut b: Vec<_> = second.utterances.iter().map(key).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }
}
