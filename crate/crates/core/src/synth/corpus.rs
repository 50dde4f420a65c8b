//! Band-limited-noise speakers. Each speaker draws three narrow frequency
//! bands from a shared inventory, with no two speakers sharing more than
//! one, and modulates their noise at speaker-specific rates over a faint
//! broadband floor. Held-out speakers only use bands that some training
//! speaker also uses, so they differ from the training set by their band
//! combination rather than by unseen frequencies.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::diarization::RttmSegment;
use crate::episodic::{LabeledUtteranceStore, Utterance};
use crate::error::Result;
use crate::features::{extract_features, MfccConfig, Waveform};

const BANDS_PER_SPEAKER: usize = 3;
const LOW_HZ: f64 = 300.0;
const HIGH_HZ: f64 = 6000.0;
/// Broadband floor amplitude relative to one band.
const FLOOR: f64 = 0.01;
/// Per-render level range (±dB) and spectral tilt exponent range.
const LEVEL_DB: f64 = 10.0;
const TILT: f64 = 0.5;
/// Renders are scaled down to this peak so 16-bit WAV output never clips.
const PEAK: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub centre_hz: f64,
    pub width_hz: f64,
    pub gain: f64,
    /// Envelope rate of the amplitude modulation.
    pub rate_hz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerVoice {
    pub id: String,
    pub bands: Vec<Band>,
}

/// `n` voices over a log-spaced inventory of max(n, 6) band slots. Voices
/// `n_train..n` draw only from slots used by voices `0..n_train`.
pub fn speaker_voices(n: usize, n_train: usize, seed: u64) -> Vec<SpeakerVoice> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slots = n.max(2 * BANDS_PER_SPEAKER);
    let ratio = (HIGH_HZ / LOW_HZ).ln() / slots as f64;
    let mut chosen: Vec<Vec<usize>> = Vec::with_capacity(n);
    for s in 0..n {
        let pool: Vec<usize> = if s < n_train || n_train == 0 {
            (0..slots).collect()
        } else {
            let mut used: Vec<usize> = chosen[..n_train].iter().flatten().copied().collect();
            used.sort_unstable();
            used.dedup();
            used
        };
        let pick = pick_slots(&pool, &chosen, &mut rng);
        chosen.push(pick);
    }
    chosen
        .iter()
        .enumerate()
        .map(|(s, picked)| SpeakerVoice {
            id: format!("spk{s:02}"),
            bands: picked
                .iter()
                .map(|&slot| {
                    let centre_hz = LOW_HZ * ((slot as f64 + 0.5) * ratio).exp();
                    Band {
                        centre_hz,
                        width_hz: 0.08 * centre_hz,
                        gain: rng.random_range(0.5..1.0),
                        rate_hz: rng.random_range(2.0..8.0),
                    }
                })
                .collect(),
        })
        .collect()
}

/// Random band set from `pool` sharing at most one slot with every earlier
/// set; falls back to the least-overlapping draw when the pool is too small
/// for that.
fn pick_slots(pool: &[usize], earlier: &[Vec<usize>], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let k = BANDS_PER_SPEAKER.min(pool.len());
    let mut best: Option<(usize, Vec<usize>)> = None;
    for _ in 0..2000 {
        let mut c: Vec<usize> = pool.choose_multiple(rng, k).copied().collect();
        c.sort_unstable();
        let shared = earlier
            .iter()
            .map(|e| c.iter().filter(|x| e.contains(x)).count())
            .max()
            .unwrap_or(0);
        if shared <= 1 {
            return c;
        }
        if best.as_ref().is_none_or(|(b, _)| shared < *b) {
            best = Some((shared, c));
        }
    }
    best.expect("at least one draw").1
}

/// White Gaussian noise shaped by a Gaussian magnitude bump in frequency.
fn band_noise(n: usize, sr: f64, centre: f64, width: f64, rng: &mut dyn RngCore) -> Vec<f64> {
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut buf: Vec<Complex<f64>> = (0..n).map(|_| Complex::new(unit.sample(rng), 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, b) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * sr / n as f64;
        let z = (f - centre) / width;
        *b *= (-0.5 * z * z).exp();
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let raw: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let rms = (raw.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt().max(1e-300);
    raw.into_iter().map(|v| v / rms).collect()
}

fn floor_noise(n: usize, rng: &mut dyn RngCore) -> Vec<f64> {
    let unit = Normal::new(0.0, FLOOR).expect("valid normal");
    (0..n).map(|_| unit.sample(rng)).collect()
}

impl SpeakerVoice {
    /// `seconds` of this voice; envelope phases and small gain changes are
    /// drawn per call.
    pub fn render(&self, seconds: f64, sample_rate: u32, rng: &mut dyn RngCore) -> Vec<f64> {
        let sr = sample_rate as f64;
        let n = (seconds * sr).round() as usize;
        // channel nuisance per call: overall level and spectral tilt
        let level = 10f64.powf(rng.random_range(-LEVEL_DB..LEVEL_DB) / 20.0);
        let tilt = rng.random_range(-TILT..TILT);
        let mut out = floor_noise(n, rng);
        for b in &self.bands {
            let noise = band_noise(n, sr, b.centre_hz, b.width_hz, rng);
            let phase = rng.random_range(0.0..2.0 * PI);
            let gain = level * b.gain * (b.centre_hz / 1000.0).powf(tilt) * rng.random_range(0.85..1.15);
            for (i, (o, v)) in out.iter_mut().zip(noise).enumerate() {
                let env = 0.55 + 0.45 * (2.0 * PI * b.rate_hz * i as f64 / sr + phase).sin();
                *o += 0.1 * gain * env * v;
            }
        }
        let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > PEAK {
            out.iter_mut().for_each(|v| *v *= PEAK / peak);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpusConfig {
    pub n_speakers: usize,
    /// Speakers `0..n_train` provide training utterances; the rest are
    /// held out for evaluation episodes and sessions.
    pub n_train: usize,
    pub sample_rate: u32,
    pub utts_per_speaker: usize,
    pub utt_seconds: f64,
    pub n_sessions: usize,
    pub turns_per_session: usize,
    pub turn_seconds: f64,
    /// Silence between turns, drawn uniformly from this range.
    pub pause: (f64, f64),
    pub seed: u64,
}

impl Default for SynthCorpusConfig {
    fn default() -> Self {
        Self {
            n_speakers: 16,
            n_train: 12,
            sample_rate: 16000,
            utts_per_speaker: 16,
            utt_seconds: 2.0,
            n_sessions: 4,
            turns_per_session: 8,
            turn_seconds: 5.0,
            pause: (0.25, 0.75),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthUtterance {
    pub id: String,
    pub speaker: String,
    pub held_out: bool,
    pub audio: Waveform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSession {
    pub id: String,
    pub audio: Waveform,
    pub reference: Vec<RttmSegment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub voices: Vec<SpeakerVoice>,
    pub utterances: Vec<SynthUtterance>,
    pub sessions: Vec<SynthSession>,
}

/// Two held-out speakers alternate turns, separated by floor-only pauses;
/// sessions open and close with a pause.
pub fn synth_session(
    id: &str,
    voices: [&SpeakerVoice; 2],
    turns: usize,
    turn_seconds: f64,
    pause: (f64, f64),
    sample_rate: u32,
    rng: &mut dyn RngCore,
) -> SynthSession {
    let sr = sample_rate as f64;
    let mut samples = Vec::new();
    let mut reference = Vec::new();
    let gap = |rng: &mut dyn RngCore, samples: &mut Vec<f64>| {
        let secs = rng.random_range(pause.0..=pause.1);
        let n = (secs * sr).round() as usize;
        samples.extend(floor_noise(n, rng));
    };
    gap(rng, &mut samples);
    for t in 0..turns {
        let v = voices[t % 2];
        let onset = samples.len() as f64 / sr;
        let audio = v.render(turn_seconds, sample_rate, rng);
        reference.push(RttmSegment::new(id, onset, audio.len() as f64 / sr, &v.id));
        samples.extend(audio);
        gap(rng, &mut samples);
    }
    SynthSession {
        id: id.to_string(),
        audio: Waveform::new(samples, sample_rate),
        reference,
    }
}

impl SynthCorpus {
    /// Feature stores for the training and held-out speakers.
    pub fn stores(&self, mfcc: &MfccConfig, cmn_window: f64) -> Result<(LabeledUtteranceStore, LabeledUtteranceStore)> {
        let mut train = Vec::new();
        let mut held = Vec::new();
        for u in &self.utterances {
            let utt = Utterance {
                id: u.id.clone(),
                speaker: u.speaker.clone(),
                features: Arc::new(extract_features(&u.audio, mfcc, cmn_window)?),
            };
            if u.held_out {
                held.push(utt);
            } else {
                train.push(utt);
            }
        }
        Ok((LabeledUtteranceStore::new(train), LabeledUtteranceStore::new(held)))
    }
}

pub fn generate_corpus(cfg: &SynthCorpusConfig) -> SynthCorpus {
    assert!(cfg.n_train <= cfg.n_speakers, "n_train exceeds n_speakers");
    let voices = speaker_voices(cfg.n_speakers, cfg.n_train, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut utterances = Vec::new();
    for (s, v) in voices.iter().enumerate() {
        for u in 0..cfg.utts_per_speaker {
            utterances.push(SynthUtterance {
                id: format!("{}-u{u:03}", v.id),
                speaker: v.id.clone(),
                held_out: s >= cfg.n_train,
                audio: Waveform::new(v.render(cfg.utt_seconds, cfg.sample_rate, &mut rng), cfg.sample_rate),
            });
        }
    }
    let held: Vec<&SpeakerVoice> = voices[cfg.n_train..].iter().collect();
    let mut sessions = Vec::new();
    if held.len() >= 2 {
        for i in 0..cfg.n_sessions {
            let pair = rand::seq::index::sample(&mut rng, held.len(), 2);
            sessions.push(synth_session(
                &format!("sess{i:02}"),
                [held[pair.index(0)], held[pair.index(1)]],
                cfg.turns_per_session,
                cfg.turn_seconds,
                cfg.pause,
                cfg.sample_rate,
                &mut rng,
            ));
        }
    }
    SynthCorpus {
        voices,
        utterances,
        sessions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthCorpusConfig {
        SynthCorpusConfig {
            n_speakers: 4,
            n_train: 2,
            utts_per_speaker: 2,
            utt_seconds: 0.5,
            n_sessions: 2,
            turns_per_session: 3,
            turn_seconds: 1.0,
            ..SynthCorpusConfig::default()
        }
    }

    #[test]
    fn voices_share_at_most_one_band() {
        for seed in 0..5 {
            let v = speaker_voices(16, 12, seed);
            let slots = |s: &SpeakerVoice| -> Vec<u64> { s.bands.iter().map(|b| b.centre_hz.round() as u64).collect() };
            for (i, a) in v.iter().enumerate() {
                assert_eq!(a.bands.len(), 3);
                assert!(a.bands.iter().all(|b| b.centre_hz > LOW_HZ && b.centre_hz < HIGH_HZ));
                for b in &v[..i] {
                    let shared = slots(a).iter().filter(|c| slots(b).contains(c)).count();
                    assert!(shared <= 1, "seed {seed}: {} and {} share {shared}", a.id, b.id);
                }
            }
            let train: Vec<u64> = v[..12].iter().flat_map(slots).collect();
            assert!(v[12..].iter().flat_map(slots).all(|c| train.contains(&c)));
        }
    }

    #[test]
    fn corpus_layout_and_determinism() {
        let c = generate_corpus(&small());
        assert_eq!(c, generate_corpus(&small()));
        assert_eq!(c.utterances.len(), 8);
        assert_eq!(c.utterances.iter().filter(|u| u.held_out).count(), 4);
        assert!(c.utterances.iter().all(|u| u.audio.samples.len() == 8000));
        assert!(c.utterances.iter().all(|u| u.audio.samples.iter().all(|s| s.abs() < 1.0)));
        assert_eq!(c.sessions.len(), 2);
        for s in &c.sessions {
            assert_eq!(s.reference.len(), 3);
            let spk: Vec<&str> = s.reference.iter().map(|r| r.speaker.as_str()).collect();
            assert_eq!(spk[0], spk[2]);
            assert_ne!(spk[0], spk[1]);
            assert!(spk.iter().all(|x| *x == "spk02" || *x == "spk03"));
            // turns are disjoint, ordered and inside the audio
            for w in s.reference.windows(2) {
                assert!(w[1].onset >= w[0].onset + w[0].duration + 0.25 - 1e-9);
            }
            let end = s.reference.last().map(|r| r.onset + r.duration).unwrap();
            assert!(end + 0.25 <= s.audio.duration() + 1e-9);
        }
    }

    #[test]
    fn band_noise_concentrates_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = band_noise(4096, 16000.0, 2000.0, 100.0, &mut rng);
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(4096).process(&mut buf);
        let (mut inside, mut total) = (0.0, 0.0);
        for (k, c) in buf.iter().enumerate().take(2049) {
            let f = k as f64 * 16000.0 / 4096.0;
            total += c.norm_sqr();
            if (f - 2000.0).abs() < 300.0 {
                inside += c.norm_sqr();
            }
        }
        assert!(inside / total > 0.99);
    }
}
