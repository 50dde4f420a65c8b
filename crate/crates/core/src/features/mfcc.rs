use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{FeatureMatrix, Waveform};
use crate::error::{Error, Result};

/// Front-end parameters. Defaults: 30 cepstra from 30 mel filters, 25 ms
/// Hamming window every 10 ms, pre-emphasis 0.97.
#[derive(Debug, Clone, PartialEq)]
pub struct MfccConfig {
    pub num_ceps: usize,
    pub num_filters: usize,
    pub frame_width: f64,
    pub frame_shift: f64,
    pub pre_emphasis: f64,
    pub low_freq: f64,
    /// Upper filterbank edge; `None` means Nyquist.
    pub high_freq: Option<f64>,
    pub log_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            num_ceps: 30,
            num_filters: 30,
            frame_width: 0.025,
            frame_shift: 0.010,
            pre_emphasis: 0.97,
            low_freq: 20.0,
            high_freq: None,
            log_floor: 1e-10,
        }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Precomputed window, filterbank and FFT plan for one sample rate.
pub struct MfccExtractor {
    cfg: MfccConfig,
    sample_rate: u32,
    frame_len: usize,
    hop: usize,
    fft_len: usize,
    window: Vec<f64>,
    /// num_filters × (fft_len/2 + 1)
    filters: Array2<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for MfccExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MfccExtractor")
            .field("cfg", &self.cfg)
            .field("sample_rate", &self.sample_rate)
            .field("fft_len", &self.fft_len)
            .finish()
    }
}

impl MfccExtractor {
    pub fn new(cfg: MfccConfig, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Parameter("sample rate must be positive".into()));
        }
        if cfg.num_ceps == 0 || cfg.num_ceps > cfg.num_filters {
            return Err(Error::Parameter(format!(
                "num_ceps {} must be in [1, num_filters={}]",
                cfg.num_ceps, cfg.num_filters
            )));
        }
        let sr = sample_rate as f64;
        let frame_len = (cfg.frame_width * sr).round() as usize;
        let hop = (cfg.frame_shift * sr).round() as usize;
        if frame_len < 2 || hop == 0 {
            return Err(Error::Parameter("frame width/shift too small".into()));
        }
        let fft_len = frame_len.next_power_of_two();
        let window = (0..frame_len)
            .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (frame_len - 1) as f64).cos())
            .collect();
        let high = cfg.high_freq.unwrap_or(sr / 2.0);
        if !(0.0..high).contains(&cfg.low_freq) || high > sr / 2.0 {
            return Err(Error::Parameter(format!(
                "filterbank range [{}, {high}] invalid for {sample_rate} Hz",
                cfg.low_freq
            )));
        }
        let filters = mel_filterbank(cfg.num_filters, fft_len, sr, cfg.low_freq, high);
        let fft = FftPlanner::new().plan_fft_forward(fft_len);
        Ok(Self {
            cfg,
            sample_rate,
            frame_len,
            hop,
            fft_len,
            window,
            filters,
            fft,
        })
    }

    pub fn config(&self) -> &MfccConfig {
        &self.cfg
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn fft_len(&self) -> usize {
        self.fft_len
    }

    /// num_filters × (fft_len/2 + 1) triangular weights.
    pub fn filters(&self) -> &Array2<f64> {
        &self.filters
    }

    pub fn num_frames(&self, num_samples: usize) -> usize {
        if num_samples < self.frame_len {
            0
        } else {
            (num_samples - self.frame_len) / self.hop + 1
        }
    }

    fn check_input(&self, w: &Waveform) -> Result<usize> {
        if w.sample_rate != self.sample_rate {
            return Err(Error::UnsupportedFormat(format!(
                "sample rate {} differs from extractor rate {}",
                w.sample_rate, self.sample_rate
            )));
        }
        let t = self.num_frames(w.samples.len());
        if t == 0 {
            return Err(Error::EmptyInput(format!(
                "{} samples is shorter than one {}-sample frame",
                w.samples.len(),
                self.frame_len
            )));
        }
        Ok(t)
    }

    /// Linear (pre-log) mel filterbank energies, T × num_filters.
    pub fn filterbank_energies(&self, w: &Waveform) -> Result<Array2<f64>> {
        let t = self.check_input(w)?;
        let nbins = self.fft_len / 2 + 1;
        let mut out = Array2::zeros((t, self.cfg.num_filters));
        let mut buf = vec![Complex::new(0.0, 0.0); self.fft_len];
        let mut mag = vec![0.0; nbins];
        for f in 0..t {
            let frame = &w.samples[f * self.hop..f * self.hop + self.frame_len];
            for b in buf.iter_mut() {
                *b = Complex::new(0.0, 0.0);
            }
            for n in 0..self.frame_len {
                let prev = if n == 0 { frame[0] } else { frame[n - 1] };
                let x = frame[n] - self.cfg.pre_emphasis * prev;
                buf[n] = Complex::new(x * self.window[n], 0.0);
            }
            self.fft.process(&mut buf);
            for (k, m) in mag.iter_mut().enumerate() {
                *m = buf[k].norm();
            }
            for (m, row) in self.filters.outer_iter().enumerate() {
                out[[f, m]] = row.iter().zip(&mag).map(|(a, b)| a * b).sum();
            }
        }
        Ok(out)
    }

    pub fn compute(&self, w: &Waveform) -> Result<FeatureMatrix> {
        let energies = self.filterbank_energies(w)?;
        let m = self.cfg.num_filters;
        let dct = dct_matrix(self.cfg.num_ceps, m);
        let floor = self.cfg.log_floor;
        let logs = energies.mapv(|e| e.max(floor).ln());
        let frames = logs.dot(&dct.t());
        Ok(FeatureMatrix::new(
            frames,
            self.hop as f64 / self.sample_rate as f64,
            self.frame_len as f64 / self.sample_rate as f64,
        ))
    }
}

/// One-shot MFCC extraction.
pub fn compute_mfcc(w: &Waveform, cfg: &MfccConfig) -> Result<FeatureMatrix> {
    MfccExtractor::new(cfg.clone(), w.sample_rate)?.compute(w)
}

fn mel_filterbank(num_filters: usize, fft_len: usize, sr: f64, low: f64, high: f64) -> Array2<f64> {
    let nbins = fft_len / 2 + 1;
    let (mlo, mhi) = (hz_to_mel(low), hz_to_mel(high));
    let step = (mhi - mlo) / (num_filters + 1) as f64;
    let mut fb = Array2::zeros((num_filters, nbins));
    for m in 0..num_filters {
        let left = mlo + m as f64 * step;
        let centre = left + step;
        let right = centre + step;
        for k in 0..nbins {
            let mel = hz_to_mel(k as f64 * sr / fft_len as f64);
            let w = if mel > left && mel <= centre {
                (mel - left) / (centre - left)
            } else if mel > centre && mel < right {
                (right - mel) / (right - centre)
            } else {
                0.0
            };
            fb[[m, k]] = w;
        }
    }
    fb
}

/// Orthonormal DCT-II basis, num_ceps × n.
fn dct_matrix(num_ceps: usize, n: usize) -> Array2<f64> {
    let mut d = Array2::zeros((num_ceps, n));
    for i in 0..num_ceps {
        let scale = if i == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        for j in 0..n {
            d[[i, j]] = scale * (PI * i as f64 * (j as f64 + 0.5) / n as f64).cos();
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, secs: f64) -> Waveform {
        let n = (secs * 16000.0) as usize;
        Waveform::new(
            (0..n)
                .map(|i| 0.5 * (2.0 * PI * freq * i as f64 / 16000.0).sin())
                .collect(),
            16000,
        )
    }

    #[test]
    fn one_second_gives_98_frames() {
        let f = compute_mfcc(&tone(440.0, 1.0), &MfccConfig::default()).unwrap();
        assert_eq!(f.num_frames(), 98);
        assert_eq!(f.dim(), 30);
        assert!(f.frames.iter().all(|v| v.is_finite()));
        assert!((f.frame_shift - 0.01).abs() < 1e-12);
        assert!((f.frame_width - 0.025).abs() < 1e-12);
    }

    #[test]
    fn frame_count_formula() {
        let ex = MfccExtractor::new(MfccConfig::default(), 16000).unwrap();
        for n in [400usize, 401, 559, 560, 561, 16000, 12345] {
            let w = Waveform::new(vec![0.1; n], 16000);
            let f = ex.compute(&w).unwrap();
            assert_eq!(f.num_frames(), (n - 400) / 160 + 1, "n={n}");
        }
    }

    #[test]
    fn zeros_give_identical_frames() {
        let f = compute_mfcc(&Waveform::new(vec![0.0; 8000], 16000), &MfccConfig::default()).unwrap();
        let first = f.frames.row(0).to_owned();
        for row in f.frames.outer_iter() {
            assert_eq!(row, first);
        }
        // log floor only feeds c0
        let expected_c0 = (1e-10f64).ln() * (30f64).sqrt();
        assert!((first[0] - expected_c0).abs() < 1e-9);
        assert!(first.iter().skip(1).all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn too_short_is_empty_input() {
        let w = Waveform::new(vec![0.0; 399], 16000);
        assert!(matches!(
            compute_mfcc(&w, &MfccConfig::default()),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn deterministic() {
        let w = tone(1234.0, 0.5);
        let a = compute_mfcc(&w, &MfccConfig::default()).unwrap();
        let b = compute_mfcc(&w, &MfccConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mel_round_trip() {
        for hz in [0.0, 20.0, 700.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }

    #[test]
    fn dct_is_orthonormal() {
        let d = dct_matrix(30, 30);
        let g = d.dot(&d.t());
        for i in 0..30 {
            for j in 0..30 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g[[i, j]] - e).abs() < 1e-12);
            }
        }
    }

    /// Direct O(N²) DFT and a filterbank evaluated from Hz edge points.
    fn reference_energies(samples: &[f64], sr: f64, frame: usize, hop: usize, nfft: usize, nfilt: usize) -> Vec<Vec<f64>> {
        let mel = |hz: f64| 2595.0 * (1.0 + hz / 700.0).log10();
        let (lo, hi) = (mel(20.0), mel(sr / 2.0));
        let edges: Vec<f64> = (0..nfilt + 2).map(|i| lo + (hi - lo) * i as f64 / (nfilt + 1) as f64).collect();
        let t = (samples.len() - frame) / hop + 1;
        let mut out = Vec::new();
        for f in 0..t {
            let x: Vec<f64> = (0..frame)
                .map(|n| {
                    let s = &samples[f * hop..];
                    let prev = if n == 0 { s[0] } else { s[n - 1] };
                    let hamming = 0.54 - 0.46 * (2.0 * PI * n as f64 / (frame as f64 - 1.0)).cos();
                    (s[n] - 0.97 * prev) * hamming
                })
                .collect();
            let mags: Vec<f64> = (0..=nfft / 2)
                .map(|k| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (n, v) in x.iter().enumerate() {
                        let ang = -2.0 * PI * (k * n % nfft) as f64 / nfft as f64;
                        re += v * ang.cos();
                        im += v * ang.sin();
                    }
                    (re * re + im * im).sqrt()
                })
                .collect();
            let row = (0..nfilt)
                .map(|m| {
                    let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
                    mags.iter()
                        .enumerate()
                        .map(|(k, a)| {
                            let b = mel(k as f64 * sr / nfft as f64);
                            let w = if b > l && b <= c {
                                (b - l) / (c - l)
                            } else if b > c && b < r {
                                (r - b) / (r - c)
                            } else {
                                0.0
                            };
                            w * a
                        })
                        .sum()
                })
                .collect();
            out.push(row);
        }
        out
    }

    #[test]
    fn tone_filterbank_matches_direct_dft() {
        let w = tone(1000.0, 0.1);
        let ex = MfccExtractor::new(MfccConfig::default(), 16000).unwrap();
        let got = ex.filterbank_energies(&w).unwrap();
        let want = reference_energies(&w.samples, 16000.0, 400, 160, 512, 30);
        assert_eq!(got.nrows(), want.len());
        let mut worst = 0.0f64;
        for (f, row) in want.iter().enumerate() {
            for (m, &e) in row.iter().enumerate() {
                worst = worst.max((got[[f, m]] - e).abs() / e.abs().max(1e-300));
            }
        }
        assert!(worst < 1e-6, "worst relative error {worst}");
    }
}
