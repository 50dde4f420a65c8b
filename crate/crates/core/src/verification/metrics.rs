use crate::error::{Error, Result};

/// Target prior for the detection cost; C_miss = C_fa = 1.
pub const P_TARGET: f64 = 0.01;

/// One verification trial; `score` is filled in by scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub enroll: String,
    pub test: String,
    pub is_target: bool,
    pub score: Option<f64>,
}

impl TrialRecord {
    pub fn new(enroll: impl Into<String>, test: impl Into<String>, is_target: bool) -> Self {
        TrialRecord {
            enroll: enroll.into(),
            test: test.into(),
            is_target,
            score: None,
        }
    }
}

/// Detection metrics. `min_dcf_norm` divides `min_dcf` by
/// min(P_target, 1 − P_target).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionMetrics {
    pub eer: f64,
    pub min_dcf: f64,
    pub min_dcf_norm: f64,
    pub p_target: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
}

/// Error-rate curve over every distinct score plus +inf, thresholds
/// ascending: FAR(t) = P(nontarget ≥ t), FRR(t) = P(target < t).
pub fn det_curve(targets: &[f64], nontargets: &[f64]) -> Result<Vec<(f64, f64, f64)>> {
    if targets.is_empty() || nontargets.is_empty() {
        return Err(Error::Evaluation(format!(
            "need target and nontarget trials, got {} and {}",
            targets.len(),
            nontargets.len()
        )));
    }
    if let Some(s) = targets.iter().chain(nontargets).find(|s| !s.is_finite()) {
        return Err(Error::Evaluation(format!("non-finite score {s}")));
    }
    // (score, is_target), ascending
    let mut all: Vec<(f64, bool)> = targets
        .iter()
        .map(|&s| (s, true))
        .chain(nontargets.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (nt, nn) = (targets.len() as f64, nontargets.len() as f64);
    let mut curve = Vec::new();
    let (mut below_t, mut below_n) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        curve.push((t, (nontargets.len() - below_n) as f64 / nn, below_t as f64 / nt));
        while i < all.len() && all[i].0 == t {
            if all[i].1 {
                below_t += 1;
            } else {
                below_n += 1;
            }
            i += 1;
        }
    }
    curve.push((f64::INFINITY, 0.0, 1.0));
    Ok(curve)
}

/// Equal error rate from a curve: the first threshold where FRR ≥ FAR,
/// linearly interpolated against the preceding threshold.
pub fn eer_from_curve(curve: &[(f64, f64, f64)]) -> f64 {
    let i = curve
        .iter()
        .position(|&(_, far, frr)| frr >= far)
        .expect("the +inf threshold has FRR = 1 ≥ FAR = 0");
    let (_, far1, frr1) = curve[i];
    if i == 0 || frr1 == far1 {
        return 0.5 * (far1 + frr1);
    }
    let (_, far0, frr0) = curve[i - 1];
    let d0 = far0 - frr0;
    let d1 = far1 - frr1;
    let a = d0 / (d0 - d1);
    far0 + a * (far1 - far0)
}

pub fn evaluate_scores(targets: &[f64], nontargets: &[f64], p_target: f64) -> Result<DetectionMetrics> {
    if !(p_target > 0.0 && p_target < 1.0) {
        return Err(Error::Parameter(format!("P_target {p_target} must lie in (0, 1)")));
    }
    let curve = det_curve(targets, nontargets)?;
    let min_dcf = curve
        .iter()
        .map(|&(_, far, frr)| p_target * frr + (1.0 - p_target) * far)
        .fold(f64::INFINITY, f64::min);
    Ok(DetectionMetrics {
        eer: eer_from_curve(&curve),
        min_dcf,
        min_dcf_norm: min_dcf / p_target.min(1.0 - p_target),
        p_target,
        n_target: targets.len(),
        n_nontarget: nontargets.len(),
    })
}

pub fn evaluate_trials(trials: &[TrialRecord], p_target: f64) -> Result<DetectionMetrics> {
    let mut targets = Vec::new();
    let mut nontargets = Vec::new();
    for t in trials {
        let s = t.score.ok_or_else(|| {
            Error::Evaluation(format!("trial {} {} has no score", t.enroll, t.test))
        })?;
        if t.is_target {
            targets.push(s);
        } else {
            nontargets.push(s);
        }
    }
    evaluate_scores(&targets, &nontargets, p_target)
}

pub fn format_metrics(m: &DetectionMetrics) -> String {
    format!(
        "targets\t{}\nnontargets\t{}\nEER\t{:.4}%\nminDCF(p={})\t{:.6}\nminDCF_norm\t{:.6}\n",
        m.n_target,
        m.n_nontarget,
        100.0 * m.eer,
        m.p_target,
        m.min_dcf,
        m.min_dcf_norm
    )
}
