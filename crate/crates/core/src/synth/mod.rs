//! Synthetic data with known ground truth for tests and demos.

mod corpus;

pub use corpus::{
    generate_corpus, speaker_voices, synth_session, Band, SpeakerVoice, SynthCorpus, SynthCorpusConfig, SynthSession,
    SynthUtterance,
};

use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::episodic::{LabeledUtteranceStore, Utterance};
use crate::features::FeatureMatrix;

/// Store whose speakers have Gaussian frame distributions. Speaker means
/// are drawn from N(0, separation²) per coefficient; frames add
/// N(0, noise²) around them.
pub fn gaussian_store(
    n_speakers: usize,
    utts_per_speaker: usize,
    frames: usize,
    dim: usize,
    separation: f64,
    noise: f64,
    seed: u64,
) -> LabeledUtteranceStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut utts = Vec::with_capacity(n_speakers * utts_per_speaker);
    for s in 0..n_speakers {
        let mean: Vec<f64> = (0..dim).map(|_| separation * unit.sample(&mut rng)).collect();
        for u in 0..utts_per_speaker {
            let m = Array2::from_shape_fn((frames, dim), |(_, j)| mean[j] + noise * unit.sample(&mut rng));
            utts.push(Utterance {
                id: format!("spk{s:03}-utt{u:03}"),
                speaker: format!("spk{s:03}"),
                features: Arc::new(FeatureMatrix::new(m, 0.01, 0.025)),
            });
        }
    }
    LabeledUtteranceStore::new(utts)
}

/// `k` Gaussian clusters of `per_cluster` points in `dim` dimensions.
/// Centres sit on scaled orthogonal axes so every pair is `separation`
/// apart; points add isotropic N(0, sigma²) noise. Requires k ≤ dim.
pub fn gaussian_clusters(
    k: usize,
    per_cluster: usize,
    dim: usize,
    sigma: f64,
    separation: f64,
    seed: u64,
) -> (Array2<f64>, Vec<usize>) {
    assert!(k <= dim, "need k ≤ dim for orthogonal centres");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let r = separation / std::f64::consts::SQRT_2;
    let mut data = Array2::zeros((k * per_cluster, dim));
    let mut labels = Vec::with_capacity(k * per_cluster);
    for c in 0..k {
        for i in 0..per_cluster {
            let row = c * per_cluster + i;
            for j in 0..dim {
                let centre = if j == c { r } else { 0.0 };
                data[[row, j]] = centre + sigma * unit.sample(&mut rng);
            }
            labels.push(c);
        }
    }
    (data, labels)
}

fn ms(t: f64) -> f64 {
    (t * 1000.0).round() / 1000.0
}

/// A reference with turn-taking among `n_speakers` (occasional overlaps
/// and pauses) and a hypothesis derived from it by boundary jitter,
/// relabelling, label errors, dropped turns and false alarms. Times are
/// on a 1 ms grid.
pub fn random_rttm_pair(
    session: &str,
    n_speakers: usize,
    duration: f64,
    rng: &mut impl rand::Rng,
) -> (Vec<crate::diarization::RttmSegment>, Vec<crate::diarization::RttmSegment>) {
    use crate::diarization::RttmSegment;
    let mut reference = Vec::new();
    let mut t = 0.0;
    let mut prev = usize::MAX;
    while t < duration {
        let mut spk = rng.random_range(0..n_speakers);
        if spk == prev {
            spk = (spk + 1) % n_speakers;
        }
        let len = ms(rng.random_range(0.5..6.0));
        let on = ms(t);
        reference.push(RttmSegment::new(session, on, len, &format!("ref{spk}")));
        prev = spk;
        t = on + len;
        let r: f64 = rng.random();
        if r < 0.2 {
            t -= rng.random_range(0.1..len.min(1.0));
        } else if r < 0.5 {
            t += rng.random_range(0.05..1.0);
        }
    }
    let mut perm: Vec<usize> = (0..n_speakers).collect();
    for i in (1..n_speakers).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let mut hyp = Vec::new();
    for s in &reference {
        if rng.random::<f64>() < 0.05 {
            continue;
        }
        let on = ms((s.onset + rng.random_range(-0.3..0.3)).max(0.0));
        let off = ms(s.offset() + rng.random_range(-0.3..0.3));
        if off - on < 0.05 {
            continue;
        }
        let ref_idx: usize = s.speaker[3..].parse().expect("ref label");
        let lab = if rng.random::<f64>() < 0.85 { perm[ref_idx] } else { rng.random_range(0..n_speakers) };
        hyp.push(RttmSegment::new(session, on, ms(off - on), &format!("hyp{lab}")));
    }
    for _ in 0..(duration / 20.0).ceil() as usize {
        let on = ms(rng.random_range(0.0..duration));
        hyp.push(RttmSegment::new(session, on, ms(rng.random_range(0.2..1.0)), &format!("hyp{}", rng.random_range(0..n_speakers))));
    }
    (reference, hyp)
}

/// Samples from the two-covariance model with isotropic covariances:
/// class offsets N(0, between_var·I), sample noise N(0, within_var·I),
/// zero global mean. Labels are class indices.
pub fn two_covariance_data(
    n_classes: usize,
    per_class: usize,
    dim: usize,
    between_var: f64,
    within_var: f64,
    seed: u64,
) -> (Array2<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let (sb, sw) = (between_var.sqrt(), within_var.sqrt());
    let mut data = Array2::zeros((n_classes * per_class, dim));
    let mut labels = Vec::with_capacity(n_classes * per_class);
    for c in 0..n_classes {
        let y: Vec<f64> = (0..dim).map(|_| sb * unit.sample(&mut rng)).collect();
        for i in 0..per_class {
            for j in 0..dim {
                data[[c * per_class + i, j]] = y[j] + sw * unit.sample(&mut rng);
            }
            labels.push(c);
        }
    }
    (data, labels)
}

/// Target scores from N(1, 1) and nontarget scores from N(−1, 1).
pub fn gaussian_scores(n_target: usize, n_nontarget: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tar = Normal::new(1.0, 1.0).expect("valid normal");
    let non = Normal::new(-1.0, 1.0).expect("valid normal");
    let t = (0..n_target).map(|_| tar.sample(&mut rng)).collect();
    let n = (0..n_nontarget).map(|_| non.sample(&mut rng)).collect();
    (t, n)
}
