//! Deterministic synthetic corpus generator.
//!
//! Each digit has a prototype signal: three sinusoidal partials at a
//! digit-specific frequency triple under a digit-specific amplitude
//! envelope. Every speaker applies a fixed random timbre offset (partial
//! gains, a small frequency multiplier, fresh phases per repetition).
//! Dysarthric speakers additionally apply severity-scaled distortions:
//!
//! - a random piecewise-linear time warp whose knot pattern is partly a
//!   per-speaker signature and partly per-utterance jitter,
//! - tempo scaling around a per-speaker bias,
//! - low-frequency amplitude tremor,
//! - additive Gaussian noise at a severity-dependent SNR.
//!
//! Magnitudes grow mild → moderate → high, which is what the spectral
//! distance ordering test pins down. Everything is derived from the seed
//! through fixed stream paths, so the corpus is bit-reproducible and
//! independent of generation order.

use super::{Corpus, CorpusError, Severity, SpeakerRecord, Utterance, BATCHES, DIGITS, REPETITIONS};
use crate::rng::{derive_seed, SplitMix64};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthGeometry {
    pub n_control: usize,
    pub n_mild: usize,
    pub n_moderate: usize,
    pub n_high: usize,
    pub sample_rate: u32,
    pub input_length: usize,
}

impl Default for SynthGeometry {
    /// 13 control and 15 dysarthric speakers (5 mild / 3 moderate / 7
    /// high). The waveform scale (2 kHz, 0.4 s) keeps a full experiment
    /// table within CPU-minutes; real 16 kHz data goes through the
    /// manifest path instead.
    fn default() -> Self {
        SynthGeometry {
            n_control: 13,
            n_mild: 5,
            n_moderate: 3,
            n_high: 7,
            sample_rate: 2000,
            input_length: 800,
        }
    }
}

impl SynthGeometry {
    pub fn n_dysarthric(&self) -> usize {
        self.n_mild + self.n_moderate + self.n_high
    }

    fn validate(&self) -> Result<(), CorpusError> {
        if self.sample_rate == 0 || self.input_length < 64 {
            return Err(CorpusError::InvalidGeometry(
                "sample_rate must be positive and input_length at least 64".to_string(),
            ));
        }
        if self.n_control == 0 || self.n_dysarthric() == 0 {
            return Err(CorpusError::InvalidGeometry(
                "need at least one control and one dysarthric speaker".to_string(),
            ));
        }
        Ok(())
    }
}

/// Distortion magnitudes per severity tier `[mild, moderate, high]`.
/// These are generator defaults tuned until the spectral-distance ordering
/// and the end-to-end direction checks hold; they claim no fidelity to any
/// clinical population.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionParams {
    /// Local time-warp magnitude (fraction of local tempo).
    pub warp: [f64; 3],
    /// Tempo scaling range.
    pub tempo: [f64; 3],
    /// Additive noise level in dB SNR.
    pub snr_db: [f64; 3],
    /// Amplitude tremor modulation depth.
    pub tremor_depth: [f64; 3],
}

impl Default for DistortionParams {
    fn default() -> Self {
        DistortionParams {
            warp: [0.05, 0.11, 0.20],
            tempo: [0.05, 0.08, 0.14],
            snr_db: [30.0, 22.0, 17.0],
            tremor_depth: [0.10, 0.13, 0.16],
        }
    }
}

fn tier_index(severity: Severity) -> Option<usize> {
    match severity {
        Severity::Mild => Some(0),
        Severity::Moderate => Some(1),
        Severity::High => Some(2),
        Severity::Control => None,
    }
}

/// The clean prototype for a digit: what every rendition of that digit is
/// a distortion of. Used by the generator and as the reference point of
/// the spectral-distance oracle.
pub fn digit_prototype(geom: &SynthGeometry, digit: usize) -> Vec<f64> {
    assert!(digit < DIGITS);
    let traits = SpeakerTraits::neutral();
    let phases = [0.0, 0.0, 0.0];
    render(geom, digit, &traits, &phases, 1.0, &WarpMap::identity())
}

const KNOTS: usize = 4;

struct WarpMap {
    /// Source fraction at interior knots 0.2, 0.4, 0.6, 0.8.
    knots: [f64; KNOTS],
}

impl WarpMap {
    fn identity() -> WarpMap {
        WarpMap { knots: [0.2, 0.4, 0.6, 0.8] }
    }

    /// Output fraction → source fraction, piecewise linear through
    /// (0,0), (0.2, k₀) … (0.8, k₃), (1,1).
    fn source_fraction(&self, u: f64) -> f64 {
        let gap = 1.0 / (KNOTS + 1) as f64;
        let seg = ((u / gap) as usize).min(KNOTS);
        let (u0, v0) = if seg == 0 { (0.0, 0.0) } else { (seg as f64 * gap, self.knots[seg - 1]) };
        let (u1, v1) = if seg == KNOTS { (1.0, 1.0) } else { ((seg + 1) as f64 * gap, self.knots[seg]) };
        v0 + (u - u0) / (u1 - u0) * (v1 - v0)
    }
}

struct SpeakerTraits {
    freq_mult: f64,
    amp_mults: [f64; 3],
    /// Consistent per-speaker tempo deviation; zero for controls.
    tempo_bias: f64,
    /// Consistent per-speaker warp signature (knot displacements).
    warp_bias: [f64; KNOTS],
    tremor_freq: f64,
}

impl SpeakerTraits {
    fn neutral() -> SpeakerTraits {
        SpeakerTraits {
            freq_mult: 1.0,
            amp_mults: [1.0; 3],
            tempo_bias: 0.0,
            warp_bias: [0.0; KNOTS],
            tremor_freq: 5.0,
        }
    }

    fn draw(rng: &mut SplitMix64, severity: Severity, params: &DistortionParams) -> SpeakerTraits {
        let mut traits = SpeakerTraits {
            freq_mult: rng.uniform(0.98, 1.02),
            amp_mults: [
                rng.uniform(0.85, 1.15),
                rng.uniform(0.85, 1.15),
                rng.uniform(0.85, 1.15),
            ],
            tempo_bias: 0.0,
            warp_bias: [0.0; KNOTS],
            tremor_freq: rng.uniform(3.0, 8.0),
        };
        if let Some(tier) = tier_index(severity) {
            // Magnitudes bounded away from zero: every dysarthric speaker
            // has a real signature of roughly tier-sized strength, so tier
            // averages reflect the tier and not the speaker draw. Tempo
            // bias is always positive — impaired speech is systematically
            // slower — while warp signatures are signed per knot
            // (irregular local timing).
            traits.tempo_bias = rng.uniform(0.4, 0.8) * params.tempo[tier];
            for b in &mut traits.warp_bias {
                let sign = if rng.next_f64() < 0.5 { -1.0 } else { 1.0 };
                *b = sign * rng.uniform(0.4, 0.7) * params.warp[tier];
            }
        }
        traits
    }
}

/// Frequency triple and envelope parameters for one digit.
///
/// Two kinds of cue coexist by design. The base frequency is digit-spaced
/// closely enough that a severity-scaled time warp moves a digit into its
/// neighbours' territory — an absolute-frequency shortcut that works on
/// clean control speech and breaks under distortion. The partial RATIOS
/// are also digit-specific, and a local time warp rescales all partials
/// together, so the ratio signature survives any warp; distortion-robust
/// classification stays possible for a model that keys on it.
fn digit_partials(digit: usize) -> ([f64; 3], [f64; 3], f64) {
    let d = digit as f64;
    let f1 = 160.0 + 14.0 * d;
    let r2 = 1.6 + 0.09 * d;
    let r3 = 2.9 - 0.07 * d;
    let freqs = [f1, r2 * f1, r3 * f1];
    let amps = [1.0, 0.68 + 0.02 * d, 0.45 + 0.015 * d];
    let envelope_power = 0.6 + 0.12 * d;
    (freqs, amps, envelope_power)
}

/// Renders a digit through a speaker's timbre at the warped/tempo-scaled
/// time base, already peak-normalized and length-exact.
fn render(
    geom: &SynthGeometry,
    digit: usize,
    traits: &SpeakerTraits,
    phases: &[f64; 3],
    tempo: f64,
    warp: &WarpMap,
) -> Vec<f64> {
    let n = geom.input_length;
    let sr = geom.sample_rate as f64;
    let (freqs, amps, envelope_power) = digit_partials(digit);

    // Base rendition on the undistorted time axis.
    let base: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let u = i as f64 / (n - 1) as f64;
            let env = (std::f64::consts::PI * u).sin().max(0.0).powf(envelope_power);
            let mut acc = 0.0;
            for p in 0..3 {
                acc += amps[p]
                    * traits.amp_mults[p]
                    * (std::f64::consts::TAU * freqs[p] * traits.freq_mult * t + phases[p]).sin();
            }
            env * acc
        })
        .collect();

    // Piecewise-linear resampling through the warp map and tempo factor.
    let out: Vec<f64> = (0..n)
        .map(|i| {
            let u = i as f64 / (n - 1) as f64;
            let pos = warp.source_fraction(u) * tempo * (n - 1) as f64;
            let lo = pos.floor() as isize;
            if lo < 0 || lo as usize >= n {
                return 0.0;
            }
            let lo = lo as usize;
            if lo + 1 >= n {
                base[n - 1]
            } else {
                let frac = pos - lo as f64;
                base[lo] * (1.0 - frac) + base[lo + 1] * frac
            }
        })
        .collect();

    super::preprocess(&out, n).expect("non-empty render")
}

fn synth_utterance(
    geom: &SynthGeometry,
    params: &DistortionParams,
    digit: usize,
    traits: &SpeakerTraits,
    severity: Severity,
    rng: &mut SplitMix64,
) -> Vec<f64> {
    let phases = [
        rng.uniform(0.0, std::f64::consts::TAU),
        rng.uniform(0.0, std::f64::consts::TAU),
        rng.uniform(0.0, std::f64::consts::TAU),
    ];

    let tier = tier_index(severity);
    // Source-position rate: a slowdown of s plays the word stretched by
    // 1 + s, so the fixed window sees the first 1/(1+s) of it (the quiet
    // envelope tail is what falls off) and all partials shift down
    // together — no aliasing, ratios intact.
    let slowdown = match tier {
        None => rng.uniform(-0.01, 0.01),
        Some(t) => traits.tempo_bias + rng.uniform(-0.3, 0.3) * params.tempo[t],
    };
    let tempo = 1.0 / (1.0 + slowdown.max(-0.5));

    let gap = 1.0 / (KNOTS + 1) as f64;
    let mut warp = WarpMap::identity();
    if let Some(t) = tier {
        for (k, knot) in warp.knots.iter_mut().enumerate() {
            let d = traits.warp_bias[k] + rng.uniform(-0.25, 0.25) * params.warp[t];
            *knot += d.clamp(-0.45, 0.45) * gap;
        }
    }

    let mut wave = render(geom, digit, traits, &phases, tempo, &warp);

    if let Some(t) = tier {
        // amplitude tremor
        let depth = params.tremor_depth[t] * rng.uniform(0.7, 1.3);
        let freq = traits.tremor_freq * rng.uniform(0.9, 1.1);
        let phase = rng.uniform(0.0, std::f64::consts::TAU);
        let sr = geom.sample_rate as f64;
        for (i, x) in wave.iter_mut().enumerate() {
            *x *= 1.0 + depth * (std::f64::consts::TAU * freq * i as f64 / sr + phase).sin();
        }
        // additive noise at a severity-dependent SNR
        let rms = (wave.iter().map(|x| x * x).sum::<f64>() / wave.len() as f64).sqrt();
        let snr = params.snr_db[t] + rng.uniform(-2.0, 2.0);
        let sigma = rms * 10.0_f64.powf(-snr / 20.0);
        for x in wave.iter_mut() {
            *x += sigma * rng.normal();
        }
        wave = super::preprocess(&wave, geom.input_length).expect("non-empty");
    }
    wave
}

/// Generates a corpus with the default distortion parameters.
pub fn synth_corpus(geom: &SynthGeometry, seed: u64) -> Result<Corpus, CorpusError> {
    synth_corpus_with(geom, &DistortionParams::default(), seed)
}

/// Fully deterministic: the same seed yields a bit-identical corpus.
pub fn synth_corpus_with(
    geom: &SynthGeometry,
    params: &DistortionParams,
    seed: u64,
) -> Result<Corpus, CorpusError> {
    geom.validate()?;

    let mut speakers = Vec::new();
    for i in 0..geom.n_control {
        speakers.push((format!("C{:02}", i + 1), Severity::Control));
    }
    for i in 0..geom.n_dysarthric() {
        let severity = if i < geom.n_mild {
            Severity::Mild
        } else if i < geom.n_mild + geom.n_moderate {
            Severity::Moderate
        } else {
            Severity::High
        };
        speakers.push((format!("D{:02}", i + 1), severity));
    }

    let mut records = Vec::new();
    let mut utterances = Vec::new();
    for (spk_idx, (id, severity)) in speakers.iter().enumerate() {
        let mut spk_rng = SplitMix64::new(derive_seed(seed, &[1, spk_idx as u64]));
        let traits = SpeakerTraits::draw(&mut spk_rng, *severity, params);
        let intelligibility = match severity {
            Severity::Control => spk_rng.uniform(96.0, 100.0),
            Severity::Mild => spk_rng.uniform(70.0, 95.0),
            Severity::Moderate => spk_rng.uniform(40.0, 70.0),
            Severity::High => spk_rng.uniform(8.0, 40.0),
        };
        records.push(SpeakerRecord {
            id: id.clone(),
            is_control: *severity == Severity::Control,
            severity: *severity,
            intelligibility: Some((intelligibility * 10.0).round() / 10.0),
        });
        let domain = if *severity == Severity::Control { 0 } else { 1 };
        for digit in 0..DIGITS {
            for batch in 1..=BATCHES {
                for rep in 1..=REPETITIONS {
                    let mut rng = SplitMix64::new(derive_seed(
                        seed,
                        &[2, spk_idx as u64, digit as u64, batch as u64, rep as u64],
                    ));
                    let waveform =
                        synth_utterance(geom, params, digit, &traits, *severity, &mut rng);
                    utterances.push(Utterance {
                        speaker: id.clone(),
                        digit,
                        batch,
                        repetition: rep,
                        waveform,
                        domain,
                    });
                }
            }
        }
    }

    let corpus = Corpus {
        speakers: records,
        utterances,
        sample_rate: geom.sample_rate,
        input_length: geom.input_length,
    };
    corpus.validate()?;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::fnv1a;

    fn corpus_digest(c: &Corpus) -> u64 {
        let mut bytes = Vec::new();
        for u in &c.utterances {
            bytes.extend_from_slice(u.speaker.as_bytes());
            bytes.push(u.digit as u8);
            bytes.push(u.batch as u8);
            bytes.push(u.repetition as u8);
            for &x in &u.waveform {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
        }
        fnv1a(&bytes)
    }

    #[test]
    fn paper_geometry_counts() {
        let corpus = synth_corpus(&SynthGeometry::default(), 7).unwrap();
        assert_eq!(corpus.speakers.len(), 28);
        assert_eq!(corpus.utterances.len(), 5880);
        assert_eq!(corpus.utterances.iter().filter(|u| u.domain == 0).count(), 2730);
        assert_eq!(corpus.dysarthric_speakers().count(), 15);
    }

    #[test]
    fn same_seed_same_corpus() {
        let geom = SynthGeometry { n_control: 2, n_mild: 1, n_moderate: 1, n_high: 1, ..Default::default() };
        let a = synth_corpus(&geom, 7).unwrap();
        let b = synth_corpus(&geom, 7).unwrap();
        assert_eq!(corpus_digest(&a), corpus_digest(&b));
        let c = synth_corpus(&geom, 8).unwrap();
        assert_ne!(corpus_digest(&a), corpus_digest(&c));
    }

    #[test]
    fn waveforms_are_bounded_and_exact_length() {
        let geom = SynthGeometry { n_control: 1, n_mild: 1, n_moderate: 0, n_high: 1, ..Default::default() };
        let corpus = synth_corpus(&geom, 3).unwrap();
        for u in &corpus.utterances {
            assert_eq!(u.waveform.len(), geom.input_length);
            assert!(u.waveform.iter().all(|x| x.abs() <= 1.0 + 1e-12));
        }
    }

    #[test]
    fn invalid_geometry_is_rejected() {
        let geom = SynthGeometry { n_control: 0, ..Default::default() };
        assert!(matches!(synth_corpus(&geom, 1), Err(CorpusError::InvalidGeometry(_))));
    }

    // ── spectral distance ordering ──────────────────────────────────
    //
    // Oracle: L2 distance between magnitude spectra of an utterance and
    // its digit prototype, averaged per severity tier, must be strictly
    // ordered mild < moderate < high.

    fn fft(re: &mut [f64], im: &mut [f64]) {
        let n = re.len();
        assert!(n.is_power_of_two());
        let mut j = 0;
        for i in 1..n {
            let mut bit = n >> 1;
            while j & bit != 0 {
                j ^= bit;
                bit >>= 1;
            }
            j |= bit;
            if i < j {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let ang = -std::f64::consts::TAU / len as f64;
            for start in (0..n).step_by(len) {
                for k in 0..len / 2 {
                    let w_re = (ang * k as f64).cos();
                    let w_im = (ang * k as f64).sin();
                    let (a, b) = (start + k, start + k + len / 2);
                    let t_re = re[b] * w_re - im[b] * w_im;
                    let t_im = re[b] * w_im + im[b] * w_re;
                    re[b] = re[a] - t_re;
                    im[b] = im[a] - t_im;
                    re[a] += t_re;
                    im[a] += t_im;
                }
            }
            len <<= 1;
        }
    }

    fn magnitude_spectrum(wave: &[f64]) -> Vec<f64> {
        let n = wave.len().next_power_of_two();
        let mut re = vec![0.0; n];
        let mut im = vec![0.0; n];
        re[..wave.len()].copy_from_slice(wave);
        fft(&mut re, &mut im);
        (0..n / 2).map(|i| (re[i] * re[i] + im[i] * im[i]).sqrt()).collect()
    }

    #[test]
    fn spectral_distance_is_ordered_by_severity() {
        let geom = SynthGeometry::default();
        let corpus = synth_corpus(&geom, 7).unwrap();
        let prototypes: Vec<Vec<f64>> =
            (0..DIGITS).map(|d| magnitude_spectrum(&digit_prototype(&geom, d))).collect();

        let mut sums = [0.0_f64; 3];
        let mut counts = [0usize; 3];
        for u in &corpus.utterances {
            let tier = match corpus.speaker(&u.speaker).unwrap().severity {
                Severity::Mild => 0,
                Severity::Moderate => 1,
                Severity::High => 2,
                Severity::Control => continue,
            };
            let spec = magnitude_spectrum(&u.waveform);
            let dist: f64 = spec
                .iter()
                .zip(&prototypes[u.digit])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            sums[tier] += dist;
            counts[tier] += 1;
        }
        let means: Vec<f64> = (0..3).map(|t| sums[t] / counts[t] as f64).collect();
        assert!(
            means[0] < means[1] && means[1] < means[2],
            "tier means not ordered: mild {:.3}, moderate {:.3}, high {:.3}",
            means[0],
            means[1],
            means[2]
        );
    }
}
