//! Run configuration: flat `section.key = value` lines over five sections
//! (features, model, train, diarize, verify). Every key has a default and
//! unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::diarization::{Clusterer, DiarizeOptions};
use crate::episodic::TrainConfig;
use crate::error::{Error, Result};
use crate::features::MfccConfig;
use crate::kv;
use crate::nets::{EncoderSpec, HeadSpec, Tap, TdnnLayerSpec};
use crate::verification::{DEFAULT_LDA_DIM, DEFAULT_PLDA_ITERS, P_TARGET};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub mfcc: MfccConfig,
    /// Sliding CMN window in seconds; 0 disables normalization.
    pub cmn_window: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            mfcc: MfccConfig::default(),
            cmn_window: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiarizeConfig {
    pub width: f64,
    pub step: f64,
    pub clusterer: Clusterer,
    /// `None` picks the spec's default tap.
    pub tap: Option<Tap>,
    /// Take the speaker count from the reference RTTM.
    pub oracle_k: bool,
    pub max_speakers: usize,
    pub seed: u64,
    pub collar: f64,
    pub exclude_overlap: bool,
}

impl Default for DiarizeConfig {
    fn default() -> Self {
        let d = DiarizeOptions::default();
        Self {
            width: d.width,
            step: d.step,
            clusterer: d.clusterer,
            tap: None,
            oracle_k: false,
            max_speakers: d.max_speakers,
            seed: d.seed,
            collar: 0.0,
            exclude_overlap: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Plda,
    Cosine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub lda_dim: usize,
    pub backend: BackendKind,
    pub p_target: f64,
    pub plda_iters: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            lda_dim: DEFAULT_LDA_DIM,
            backend: BackendKind::Plda,
            p_target: P_TARGET,
            plda_iters: DEFAULT_PLDA_ITERS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub features: FeatureConfig,
    pub model: EncoderSpec,
    pub train: TrainConfig,
    pub diarize: DiarizeConfig,
    pub verify: VerifyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            features: FeatureConfig::default(),
            model: EncoderSpec::protonet(MfccConfig::default().num_ceps),
            train: TrainConfig::default(),
            diarize: DiarizeConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or("none".into(), T::to_string)
}

fn parse_opt<T: std::str::FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    if v == "none" {
        Ok(None)
    } else {
        kv::parse_value(key, v).map(Some)
    }
}

impl RunConfig {
    /// Every key in canonical order.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let f = &self.features;
        let m = &f.mfcc;
        let t = &self.train;
        let d = &self.diarize;
        let v = &self.verify;
        let (clusterer, threshold) = match d.clusterer {
            Clusterer::NmeSc => ("nme_sc", 0.0),
            Clusterer::Ahc { threshold } => ("ahc", threshold),
        };
        let head: Vec<(&str, String)> = vec![
            ("features.num_ceps", m.num_ceps.to_string()),
            ("features.num_filters", m.num_filters.to_string()),
            ("features.frame_width", m.frame_width.to_string()),
            ("features.frame_shift", m.frame_shift.to_string()),
            ("features.pre_emphasis", m.pre_emphasis.to_string()),
            ("features.low_freq", m.low_freq.to_string()),
            ("features.high_freq", m.high_freq.map_or("nyquist".into(), |h| h.to_string())),
            ("features.log_floor", m.log_floor.to_string()),
            ("features.cmn_window", f.cmn_window.to_string()),
        ];
        let mut out: Vec<(String, String)> = head.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        out.extend(self.model.to_kv());
        let rest: Vec<(&str, String)> = vec![
            ("train.mode", t.mode.name().into()),
            ("train.way", t.way.to_string()),
            ("train.shot", t.shot.to_string()),
            ("train.n_query", t.n_query.to_string()),
            ("train.episodes", t.episodes.to_string()),
            ("train.lr0", t.lr0.to_string()),
            ("train.gamma", t.gamma.to_string()),
            ("train.decay_interval", t.decay_interval.to_string()),
            ("train.lr_floor", t.lr_floor.to_string()),
            ("train.adam_beta1", t.adam_beta1.to_string()),
            ("train.adam_beta2", t.adam_beta2.to_string()),
            ("train.adam_eps", t.adam_eps.to_string()),
            ("train.grad_accum", t.grad_accum.to_string()),
            ("train.minibatch", t.minibatch.to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.dropout", t.dropout.to_string()),
            ("train.bn_momentum", t.bn_momentum.to_string()),
            ("train.warmup_frac", t.warmup_frac.to_string()),
            ("train.lr_peak", t.lr_peak.to_string()),
            ("train.crop_frames", opt(&t.crop_frames)),
            ("train.checkpoint_every", t.checkpoint_every.to_string()),
            ("train.checkpoint_path", opt(&t.checkpoint_path.as_ref().map(|p| p.display()))),
            ("diarize.width", d.width.to_string()),
            ("diarize.step", d.step.to_string()),
            ("diarize.clusterer", clusterer.into()),
            ("diarize.ahc_threshold", threshold.to_string()),
            ("diarize.tap", d.tap.as_ref().map_or("auto".into(), Tap::to_string)),
            ("diarize.oracle_k", d.oracle_k.to_string()),
            ("diarize.max_speakers", d.max_speakers.to_string()),
            ("diarize.seed", d.seed.to_string()),
            ("diarize.collar", d.collar.to_string()),
            ("diarize.exclude_overlap", d.exclude_overlap.to_string()),
            ("verify.lda_dim", v.lda_dim.to_string()),
            (
                "verify.backend",
                match v.backend {
                    BackendKind::Plda => "plda",
                    BackendKind::Cosine => "cosine",
                }
                .into(),
            ),
            ("verify.p_target", v.p_target.to_string()),
            ("verify.plda_iters", v.plda_iters.to_string()),
        ];
        out.extend(rest.into_iter().map(|(k, v)| (k.to_string(), v)));
        out
    }

    /// Canonical text; parses back to an identical config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut section = String::new();
        for (k, v) in self.to_kv() {
            let sec = k.split('.').next().unwrap_or_default();
            if sec != section {
                if !section.is_empty() {
                    s.push('\n');
                }
                s.push_str(&format!("# {sec}\n"));
                section = sec.to_string();
            }
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    /// Overrides the defaults with the given lines.
    pub fn from_text(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeMap::new();
        let mut model_keys = BTreeMap::new();
        let mut threshold = None;
        let mut clusterer = None;
        for (line, key, value) in kv::parse_lines(text)? {
            if let Some(prev) = seen.insert(key.clone(), line) {
                return Err(Error::Config(format!("{key}: set on lines {prev} and {line}")));
            }
            let k = key.as_str();
            let v = value.as_str();
            let m = &mut cfg.features.mfcc;
            let t = &mut cfg.train;
            let d = &mut cfg.diarize;
            match k {
                "features.num_ceps" => m.num_ceps = kv::parse_value(k, v)?,
                "features.num_filters" => m.num_filters = kv::parse_value(k, v)?,
                "features.frame_width" => m.frame_width = kv::parse_value(k, v)?,
                "features.frame_shift" => m.frame_shift = kv::parse_value(k, v)?,
                "features.pre_emphasis" => m.pre_emphasis = kv::parse_value(k, v)?,
                "features.low_freq" => m.low_freq = kv::parse_value(k, v)?,
                "features.high_freq" => {
                    m.high_freq = if v == "nyquist" { None } else { Some(kv::parse_value(k, v)?) }
                }
                "features.log_floor" => m.log_floor = kv::parse_value(k, v)?,
                "features.cmn_window" => cfg.features.cmn_window = kv::parse_value(k, v)?,
                "model.input_dim" | "model.tdnn" | "model.segment_dims" | "model.head" | "model.n_speakers"
                | "model.head_dims" | "model.comparison" | "model.var_floor" | "model.bn_eps" => {
                    model_keys.insert(key.clone(), value.clone());
                }
                "train.mode" => t.mode = v.parse().map_err(|_| bad_value(k, v))?,
                "train.way" => t.way = kv::parse_value(k, v)?,
                "train.shot" => t.shot = kv::parse_value(k, v)?,
                "train.n_query" => t.n_query = kv::parse_value(k, v)?,
                "train.episodes" => t.episodes = kv::parse_value(k, v)?,
                "train.lr0" => t.lr0 = kv::parse_value(k, v)?,
                "train.gamma" => t.gamma = kv::parse_value(k, v)?,
                "train.decay_interval" => t.decay_interval = kv::parse_value(k, v)?,
                "train.lr_floor" => t.lr_floor = kv::parse_value(k, v)?,
                "train.adam_beta1" => t.adam_beta1 = kv::parse_value(k, v)?,
                "train.adam_beta2" => t.adam_beta2 = kv::parse_value(k, v)?,
                "train.adam_eps" => t.adam_eps = kv::parse_value(k, v)?,
                "train.grad_accum" => t.grad_accum = kv::parse_value(k, v)?,
                "train.minibatch" => t.minibatch = kv::parse_value(k, v)?,
                "train.seed" => t.seed = kv::parse_value(k, v)?,
                "train.dropout" => t.dropout = kv::parse_value(k, v)?,
                "train.bn_momentum" => t.bn_momentum = kv::parse_value(k, v)?,
                "train.warmup_frac" => t.warmup_frac = kv::parse_value(k, v)?,
                "train.lr_peak" => t.lr_peak = kv::parse_value(k, v)?,
                "train.crop_frames" => t.crop_frames = parse_opt(k, v)?,
                "train.checkpoint_every" => t.checkpoint_every = kv::parse_value(k, v)?,
                "train.checkpoint_path" => t.checkpoint_path = parse_opt::<PathBuf>(k, v)?,
                "diarize.width" => d.width = kv::parse_value(k, v)?,
                "diarize.step" => d.step = kv::parse_value(k, v)?,
                "diarize.clusterer" => clusterer = Some(value.clone()),
                "diarize.ahc_threshold" => threshold = Some(kv::parse_value::<f64>(k, v)?),
                "diarize.tap" => {
                    d.tap = if v == "auto" {
                        None
                    } else {
                        Some(v.parse().map_err(|_| bad_value(k, v))?)
                    }
                }
                "diarize.oracle_k" => d.oracle_k = kv::parse_value(k, v)?,
                "diarize.max_speakers" => d.max_speakers = kv::parse_value(k, v)?,
                "diarize.seed" => d.seed = kv::parse_value(k, v)?,
                "diarize.collar" => d.collar = kv::parse_value(k, v)?,
                "diarize.exclude_overlap" => d.exclude_overlap = kv::parse_value(k, v)?,
                "verify.lda_dim" => cfg.verify.lda_dim = kv::parse_value(k, v)?,
                "verify.backend" => {
                    cfg.verify.backend = match v {
                        "plda" => BackendKind::Plda,
                        "cosine" => BackendKind::Cosine,
                        _ => return Err(bad_value(k, v)),
                    }
                }
                "verify.p_target" => cfg.verify.p_target = kv::parse_value(k, v)?,
                "verify.plda_iters" => cfg.verify.plda_iters = kv::parse_value(k, v)?,
                _ => return Err(Error::Config(format!("unknown key '{key}' on line {line}"))),
            }
        }
        cfg.diarize.clusterer = match clusterer.as_deref() {
            None | Some("nme_sc") => Clusterer::NmeSc,
            Some("ahc") => Clusterer::Ahc {
                threshold: threshold.unwrap_or(0.0),
            },
            Some(other) => return Err(bad_value("diarize.clusterer", other)),
        };
        if !model_keys.contains_key("model.input_dim") {
            let dim = cfg.features.mfcc.num_ceps.to_string();
            model_keys.insert("model.input_dim".into(), dim);
        }
        cfg.model = model_from_keys(&model_keys)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Small-scale settings for the bundled synthetic corpus: a narrow
    /// TDNN, 4-way 2-shot episodes, and no CMN because the synthetic voices
    /// are stationary spectral signatures that mean removal would erase.
    pub fn synthetic_demo() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.features.cmn_window = 0.0;
        cfg.model = EncoderSpec {
            input_dim: cfg.features.mfcc.num_ceps,
            tdnn: vec![
                TdnnLayerSpec::new(64, 1, 5),
                TdnnLayerSpec::new(64, 2, 3),
                TdnnLayerSpec::new(64, 3, 3),
                TdnnLayerSpec::new(128, 1, 1),
            ],
            segment_dims: vec![64],
            head: HeadSpec::Protonet { dims: vec![32] },
            comparison: None,
            ..cfg.model
        };
        cfg.train = TrainConfig {
            way: 4,
            shot: 2,
            n_query: 2,
            episodes: 500,
            lr0: 3e-3,
            gamma: 0.8,
            decay_interval: 50,
            crop_frames: Some(150),
            checkpoint_every: 0,
            ..TrainConfig::default()
        };
        cfg.diarize.oracle_k = true;
        // LDA output must stay below the 12 training speakers
        cfg.verify.lda_dim = 8;
        cfg
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.features.mfcc;
        if self.model.input_dim != m.num_ceps {
            return Err(Error::Config(format!(
                "model.input_dim {} differs from features.num_ceps {}",
                self.model.input_dim, m.num_ceps
            )));
        }
        if !(m.frame_width > 0.0 && m.frame_shift > 0.0) || self.features.cmn_window < 0.0 {
            return Err(Error::Config(
                "features.frame_width and features.frame_shift must be positive, features.cmn_window ≥ 0".into(),
            ));
        }
        self.train.validate()?;
        let d = &self.diarize;
        if !(d.width > 0.0 && d.step > 0.0 && d.step <= d.width) {
            return Err(Error::Config("diarize.step must lie in (0, diarize.width]".into()));
        }
        if d.max_speakers == 0 || d.collar < 0.0 {
            return Err(Error::Config("diarize.max_speakers must be positive and diarize.collar ≥ 0".into()));
        }
        if let Some(tap) = &d.tap {
            tap.dim(&self.model).map_err(|e| Error::Config(format!("diarize.tap: {e}")))?;
        }
        let v = &self.verify;
        if v.lda_dim == 0 || !(v.p_target > 0.0 && v.p_target < 1.0) {
            return Err(Error::Config("verify.lda_dim must be positive and verify.p_target in (0, 1)".into()));
        }
        Ok(())
    }

    /// Diarization options with the oracle speaker count filled in by the caller.
    pub fn diarize_options(&self, oracle_k: Option<usize>) -> DiarizeOptions {
        let d = &self.diarize;
        DiarizeOptions {
            width: d.width,
            step: d.step,
            clusterer: d.clusterer,
            oracle_k,
            max_speakers: d.max_speakers,
            seed: d.seed,
        }
    }

    pub fn tap(&self) -> Tap {
        self.diarize.tap.clone().unwrap_or_else(|| Tap::default_for(&self.model))
    }
}

fn bad_value(key: &str, v: &str) -> Error {
    Error::Config(format!("{key}: invalid value '{v}'"))
}

fn model_from_keys(keys: &BTreeMap<String, String>) -> Result<EncoderSpec> {
    let head = keys.get("model.head").map(String::as_str).unwrap_or("protonet");
    let allowed: &[&str] = match head {
        "xvector" => &["model.n_speakers"],
        "protonet" => &["model.head_dims"],
        _ => &["model.head_dims", "model.comparison"],
    };
    for k in ["model.n_speakers", "model.head_dims", "model.comparison"] {
        if keys.contains_key(k) && !allowed.contains(&k) {
            return Err(Error::Config(format!("{k} is not valid for the {head} head")));
        }
    }
    EncoderSpec::from_kv(keys).map_err(|e| match e {
        Error::Spec(msg) => Error::Config(format!("model: {msg}")),
        other => other,
    })
}
