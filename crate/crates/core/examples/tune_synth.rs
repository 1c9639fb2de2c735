// Dev probe: tier-mean spectral distances for candidate distortion params.
use wavdann::corpus::synth::{digit_prototype, synth_corpus_with, DistortionParams, SynthGeometry};
use wavdann::corpus::Severity;

fn fft(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
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
                let (w_re, w_im) = ((ang * k as f64).cos(), (ang * k as f64).sin());
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

fn spectrum(wave: &[f64]) -> Vec<f64> {
    let n = wave.len().next_power_of_two();
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    re[..wave.len()].copy_from_slice(wave);
    fft(&mut re, &mut im);
    (0..n / 2).map(|i| (re[i] * re[i] + im[i] * im[i]).sqrt()).collect()
}

fn tier_means(params: &DistortionParams, seed: u64) -> [f64; 3] {
    let geom = SynthGeometry::default();
    let corpus = synth_corpus_with(&geom, params, seed).unwrap();
    let protos: Vec<Vec<f64>> = (0..10).map(|d| spectrum(&digit_prototype(&geom, d))).collect();
    let mut sums = [0.0; 3];
    let mut counts = [0usize; 3];
    for u in &corpus.utterances {
        let tier = match corpus.speaker(&u.speaker).unwrap().severity {
            Severity::Mild => 0,
            Severity::Moderate => 1,
            Severity::High => 2,
            Severity::Control => continue,
        };
        let s = spectrum(&u.waveform);
        let d: f64 = s.iter().zip(&protos[u.digit]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        sums[tier] += d;
        counts[tier] += 1;
    }
    [sums[0] / counts[0] as f64, sums[1] / counts[1] as f64, sums[2] / counts[2] as f64]
}

fn main() {
    let candidates = vec![("current", DistortionParams::default())];
    for (name, params) in candidates {
        for seed in [1u64, 2, 3, 4, 5, 6, 7, 8, 9, 10] {
            let m = tier_means(&params, seed);
            let ok = m[0] < m[1] && m[1] < m[2];
            println!(
                "{name:<12} seed {seed}: mild {:.2}  moderate {:.2}  high {:.2}  {}",
                m[0],
                m[1],
                m[2],
                if ok { "ordered" } else { "NOT ordered" }
            );
        }
    }
}
