//! Audio front end: WAV ingestion, MFCC extraction and sliding-window
//! cepstral mean normalization.

mod archive;
mod cmn;
mod mfcc;
mod wav;

pub use archive::{read_features, write_features, FEATURE_MAGIC, FEATURE_VERSION};
pub use cmn::sliding_cmn;
pub use mfcc::{compute_mfcc, hz_to_mel, mel_to_hz, MfccConfig, MfccExtractor};
pub use wav::{read_wav, write_wav, Waveform};

use ndarray::{s, Array2, ArrayView2};

use crate::error::Result;

/// MFCC extraction followed by sliding CMN over `cmn_window` seconds
/// (skipped when the window is 0).
pub fn extract_features(w: &Waveform, cfg: &MfccConfig, cmn_window: f64) -> Result<FeatureMatrix> {
    let f = compute_mfcc(w, cfg)?;
    Ok(if cmn_window > 0.0 { sliding_cmn(&f, cmn_window) } else { f })
}

/// Frame-level features for one recording (or one slice of it).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    /// T×F, one row per frame.
    pub frames: Array2<f64>,
    pub frame_shift: f64,
    pub frame_width: f64,
    /// Time of the first frame's left edge, in seconds.
    pub start_time: f64,
}

impl FeatureMatrix {
    pub fn new(frames: Array2<f64>, frame_shift: f64, frame_width: f64) -> Self {
        Self {
            frames,
            frame_shift,
            frame_width,
            start_time: 0.0,
        }
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.frames.view()
    }

    /// Frames whose centre lies in `[onset, offset)` (times in seconds,
    /// absolute on the recording timeline).
    pub fn slice_time(&self, onset: f64, offset: f64) -> FeatureMatrix {
        let t = self.num_frames();
        let centre = |i: usize| self.start_time + i as f64 * self.frame_shift + 0.5 * self.frame_width;
        let first = (0..t).find(|&i| centre(i) >= onset).unwrap_or(t);
        let last = (first..t).find(|&i| centre(i) >= offset).unwrap_or(t);
        FeatureMatrix {
            frames: self.frames.slice(s![first..last, ..]).to_owned(),
            frame_shift: self.frame_shift,
            frame_width: self.frame_width,
            start_time: self.start_time + first as f64 * self.frame_shift,
        }
    }
}
