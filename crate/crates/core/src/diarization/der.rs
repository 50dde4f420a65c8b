use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use ndarray::Array2;

use super::rttm::RttmSegment;
use crate::error::{Error, Result};

/// Minimum-cost assignment of rows to columns for a rectangular cost
/// matrix. `result[r]` is the column of row `r`, or `None` when there are
/// more rows than columns and `r` is left over.
pub fn hungarian(cost: &Array2<f64>) -> Vec<Option<usize>> {
    let (nr, nc) = cost.dim();
    if nr == 0 || nc == 0 {
        return vec![None; nr];
    }
    if nr > nc {
        let t = hungarian(&cost.t().to_owned());
        let mut out = vec![None; nr];
        for (c, r) in t.into_iter().enumerate() {
            if let Some(r) = r {
                out[r] = Some(c);
            }
        }
        return out;
    }
    // potentials over 1-based rows/cols; column 0 is a virtual start
    let (n, m) = (nr, nc);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = Some(j - 1);
        }
    }
    out
}

/// Missed, false-alarm and confusion time over the scored timeline.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DerBreakdown {
    pub missed: f64,
    pub false_alarm: f64,
    pub speaker_error: f64,
    pub scored_total: f64,
}

impl DerBreakdown {
    pub fn der(&self) -> f64 {
        (self.missed + self.false_alarm + self.speaker_error) / self.scored_total
    }

    pub fn add(&mut self, o: &DerBreakdown) {
        self.missed += o.missed;
        self.false_alarm += o.false_alarm;
        self.speaker_error += o.speaker_error;
        self.scored_total += o.scored_total;
    }
}

/// Elementary interval of the session timeline with the speakers active
/// throughout it.
struct Piece {
    dur: f64,
    refs: Vec<usize>,
    hyps: Vec<usize>,
}

fn index_labels(segs: &[RttmSegment]) -> (Vec<String>, Vec<usize>) {
    let mut names: Vec<String> = segs.iter().map(|s| s.speaker.clone()).collect();
    names.sort();
    names.dedup();
    let ids = segs
        .iter()
        .map(|s| names.binary_search(&s.speaker).expect("present"))
        .collect();
    (names, ids)
}

/// Splits the timeline at every boundary and drops excluded pieces: those
/// with overlapping reference speech (when `exclude_overlap`) and those
/// within `collar` of a reference boundary.
fn scored_pieces(
    reference: &[RttmSegment],
    ref_ids: &[usize],
    hyp: &[RttmSegment],
    hyp_ids: &[usize],
    exclude_overlap: bool,
    collar: f64,
) -> Vec<Piece> {
    let mut cuts: Vec<f64> = Vec::new();
    for s in reference.iter().chain(hyp) {
        cuts.push(s.onset);
        cuts.push(s.offset());
    }
    let mut no_score: Vec<(f64, f64)> = Vec::new();
    if collar > 0.0 {
        for s in reference {
            for t in [s.onset, s.offset()] {
                no_score.push((t - collar, t + collar));
                cuts.push(t - collar);
                cuts.push(t + collar);
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut out = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let mid = 0.5 * (a + b);
        if no_score.iter().any(|&(x, y)| mid > x && mid < y) {
            continue;
        }
        let active = |segs: &[RttmSegment], ids: &[usize]| -> Vec<usize> {
            let mut v: Vec<usize> = segs
                .iter()
                .zip(ids)
                .filter(|(s, _)| s.onset <= mid && mid < s.offset())
                .map(|(_, &i)| i)
                .collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        let refs = active(reference, ref_ids);
        if exclude_overlap && refs.len() >= 2 {
            continue;
        }
        let hyps = active(hyp, hyp_ids);
        if refs.is_empty() && hyps.is_empty() {
            continue;
        }
        out.push(Piece { dur: b - a, refs, hyps });
    }
    out
}

fn assignment(pieces: &[Piece], n_ref: usize, n_hyp: usize) -> Vec<Option<usize>> {
    let mut overlap = Array2::<f64>::zeros((n_hyp, n_ref));
    for p in pieces {
        for &h in &p.hyps {
            for &r in &p.refs {
                overlap[[h, r]] += p.dur;
            }
        }
    }
    hungarian(&overlap.mapv(|v| -v))
}

/// One-to-one hypothesis → reference label map maximizing co-occurring
/// time. Hypothesis labels left unmatched are absent from the map.
pub fn optimal_speaker_map(reference: &[RttmSegment], hyp: &[RttmSegment]) -> HashMap<String, String> {
    let (rn, rid) = index_labels(reference);
    let (hn, hid) = index_labels(hyp);
    let pieces = scored_pieces(reference, &rid, hyp, &hid, false, 0.0);
    assignment(&pieces, rn.len(), hn.len())
        .into_iter()
        .enumerate()
        .filter_map(|(h, r)| r.map(|r| (hn[h].clone(), rn[r].clone())))
        .collect()
}

/// Interval-exact diarization error of one session. The speaker map is
/// fitted on the scored timeline.
pub fn der_score(
    reference: &[RttmSegment],
    hyp: &[RttmSegment],
    exclude_overlap: bool,
    collar: f64,
) -> Result<DerBreakdown> {
    let (rn, rid) = index_labels(reference);
    let (hn, hid) = index_labels(hyp);
    let pieces = scored_pieces(reference, &rid, hyp, &hid, exclude_overlap, collar);
    let map = assignment(&pieces, rn.len(), hn.len());
    let mut d = DerBreakdown::default();
    for p in &pieces {
        let (nr, nh) = (p.refs.len() as f64, p.hyps.len() as f64);
        let correct = p
            .hyps
            .iter()
            .filter(|&&h| map[h].is_some_and(|r| p.refs.contains(&r)))
            .count() as f64;
        d.scored_total += p.dur * nr;
        d.missed += p.dur * (nr - nh).max(0.0);
        d.false_alarm += p.dur * (nh - nr).max(0.0);
        d.speaker_error += p.dur * (nr.min(nh) - correct);
    }
    if !(d.scored_total > 0.0) {
        return Err(Error::Evaluation("no scored reference speech; DER is undefined".into()));
    }
    Ok(d)
}

/// Groups segments by session id.
pub fn by_session(segs: &[RttmSegment]) -> BTreeMap<String, Vec<RttmSegment>> {
    let mut m: BTreeMap<String, Vec<RttmSegment>> = BTreeMap::new();
    for s in segs {
        m.entry(s.session.clone()).or_default().push(s.clone());
    }
    m
}

/// Scores every reference session; a session absent from the hypothesis
/// counts as fully missed. Returns per-session rows and their sum.
pub fn score_sessions(
    reference: &[RttmSegment],
    hyp: &[RttmSegment],
    exclude_overlap: bool,
    collar: f64,
) -> Result<(Vec<(String, DerBreakdown)>, DerBreakdown)> {
    let refs = by_session(reference);
    let hyps = by_session(hyp);
    if let Some(extra) = hyps.keys().find(|k| !refs.contains_key(*k)) {
        return Err(Error::Evaluation(format!("hypothesis session '{extra}' has no reference")));
    }
    let mut rows = Vec::new();
    let mut total = DerBreakdown::default();
    for (sess, r) in &refs {
        let h = hyps.get(sess).map_or(&[][..], Vec::as_slice);
        let d = der_score(r, h, exclude_overlap, collar)?;
        total.add(&d);
        rows.push((sess.clone(), d));
    }
    Ok((rows, total))
}

/// Tab-separated report, one line per session plus an `ALL` line. DER is
/// given in percent.
pub fn format_der_report(rows: &[(String, DerBreakdown)], total: &DerBreakdown) -> String {
    let mut s = String::from("session\tmissed\tfa\tspkerr\ttotal\tder\n");
    for (name, d) in rows.iter().map(|(n, d)| (n.as_str(), d)).chain([("ALL", total)]) {
        let _ = writeln!(
            s,
            "{name}\t{:.3}\t{:.3}\t{:.3}\t{:.3}\t{:.2}",
            d.missed,
            d.false_alarm,
            d.speaker_error,
            d.scored_total,
            100.0 * d.der()
        );
    }
    s
}
