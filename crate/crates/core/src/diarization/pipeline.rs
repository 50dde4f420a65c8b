use ndarray::{concatenate, Axis};

use super::rttm::{speech_regions, RttmSegment};
use super::segment::{midpoint_spans, uniform_segment};
use crate::clustering::{ahc_cluster, cosine_affinity, nme_sc, AhcStop, DEFAULT_MAX_SPEAKERS};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::nets::{embed_batch, NetworkWeights, Tap};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Clusterer {
    NmeSc,
    /// Average-linkage AHC on cosine scores, stopping below the threshold.
    Ahc { threshold: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiarizeOptions {
    pub width: f64,
    pub step: f64,
    pub clusterer: Clusterer,
    pub oracle_k: Option<usize>,
    pub max_speakers: usize,
    pub seed: u64,
}

impl Default for DiarizeOptions {
    fn default() -> Self {
        Self {
            width: 1.5,
            step: 0.75,
            clusterer: Clusterer::NmeSc,
            oracle_k: None,
            max_speakers: DEFAULT_MAX_SPEAKERS,
            seed: 0,
        }
    }
}

/// Frames of one window, edge-padded to at least `min_frames`.
fn window_frames(f: &FeatureMatrix, onset: f64, offset: f64, min_frames: usize) -> FeatureMatrix {
    let mut w = f.slice_time(onset, offset);
    if w.num_frames() == 0 {
        // window narrower than the frame hop: take the frame nearest its centre
        let centre = 0.5 * (onset + offset);
        let i = (((centre - f.start_time - 0.5 * f.frame_width) / f.frame_shift).round().max(0.0) as usize)
            .min(f.num_frames().saturating_sub(1));
        w = FeatureMatrix::new(f.frames.slice(ndarray::s![i..i + 1, ..]).to_owned(), f.frame_shift, f.frame_width);
    }
    let t = w.num_frames();
    if t < min_frames {
        let before = (min_frames - t) / 2;
        let after = min_frames - t - before;
        let first = w.frames.slice(ndarray::s![0..1, ..]).to_owned();
        let last = w.frames.slice(ndarray::s![t - 1..t, ..]).to_owned();
        let mut parts = vec![];
        parts.extend(std::iter::repeat_n(first.view(), before));
        parts.push(w.frames.view());
        parts.extend(std::iter::repeat_n(last.view(), after));
        w.frames = concatenate(Axis(0), &parts).expect("equal widths");
    }
    w
}

/// Labels each oracle-speech window, projects labels onto the timeline by
/// midpoint splitting, and merges contiguous turns of one label.
pub fn diarize_session(
    session: &str,
    features: &FeatureMatrix,
    weights: &NetworkWeights,
    tap: &Tap,
    reference: &[RttmSegment],
    opts: &DiarizeOptions,
) -> Result<Vec<RttmSegment>> {
    if features.num_frames() == 0 {
        return Err(Error::EmptyInput(format!("session {session} has no feature frames")));
    }
    let regions = speech_regions(reference);
    if regions.is_empty() {
        return Ok(Vec::new());
    }
    let windows = uniform_segment(&regions, opts.width, opts.step);
    let labels = if windows.len() == 1 {
        vec![0]
    } else {
        let rf = weights.spec.receptive_field();
        let mats: Vec<FeatureMatrix> = windows
            .iter()
            .map(|&(a, b)| window_frames(features, a, b, rf))
            .collect();
        let refs: Vec<&FeatureMatrix> = mats.iter().collect();
        let emb = embed_batch(weights, &refs, tap)?;
        let aff = cosine_affinity(&emb)?;
        match opts.clusterer {
            Clusterer::NmeSc => nme_sc(&aff, opts.oracle_k, opts.max_speakers, opts.seed)?.0,
            Clusterer::Ahc { threshold } => {
                let stop = match opts.oracle_k {
                    Some(k) => AhcStop::TargetK(k.min(aff.nrows())),
                    None => AhcStop::Threshold(threshold),
                };
                ahc_cluster(&aff, stop)?
            }
        }
    };
    let spans = midpoint_spans(&regions, &windows);
    Ok(merge_turns(session, &spans, &labels))
}

/// Builds turns from labelled spans, merging touching spans that share a
/// label.
pub fn merge_turns(session: &str, spans: &[(f64, f64)], labels: &[usize]) -> Vec<RttmSegment> {
    let mut out: Vec<(f64, f64, usize)> = Vec::new();
    for (&(a, b), &l) in spans.iter().zip(labels) {
        if b <= a {
            continue;
        }
        match out.last_mut() {
            Some(last) if last.2 == l && (a - last.1).abs() < 1e-9 => last.1 = b,
            _ => out.push((a, b, l)),
        }
    }
    out.into_iter()
        .map(|(a, b, l)| RttmSegment::new(session, a, b - a, &format!("spk{l}")))
        .collect()
}
