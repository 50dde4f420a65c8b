use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{accuracy, build_episode_graph, classification_graph, random_crop, EpisodeGraph};
use super::store::{sample_episode, LabeledUtteranceStore};
use crate::autograd::{adam_step, AdamState, NormMode, TensorMap};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::nets::{save_weights, GraphMode, HeadSpec, NetworkWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Protonet,
    Relation,
    XvectorBaseline,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Protonet => "protonet",
            TrainMode::Relation => "relation",
            TrainMode::XvectorBaseline => "xvector_baseline",
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "protonet" => Ok(TrainMode::Protonet),
            "relation" => Ok(TrainMode::Relation),
            "xvector_baseline" | "xvector" => Ok(TrainMode::XvectorBaseline),
            other => Err(Error::Config(format!("unknown training mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub way: usize,
    pub shot: usize,
    pub n_query: usize,
    /// Total steps: episodes in meta modes, minibatches in baseline mode.
    pub episodes: usize,
    pub lr0: f64,
    pub gamma: f64,
    pub decay_interval: usize,
    pub lr_floor: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub grad_accum: usize,
    pub minibatch: usize,
    pub seed: u64,
    /// Baseline only; applied after hidden ReLUs.
    pub dropout: f64,
    pub bn_momentum: f64,
    /// Baseline warmup share of the run and the lr it reaches.
    pub warmup_frac: f64,
    pub lr_peak: f64,
    /// Random crop length in frames; required in baseline mode.
    pub crop_frames: Option<usize>,
    pub checkpoint_every: usize,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Protonet,
            way: 400,
            shot: 2,
            n_query: 1,
            episodes: 100_000,
            lr0: 1e-4,
            gamma: 0.9,
            decay_interval: 10,
            lr_floor: 1e-6,
            adam_beta1: 0.9,
            adam_beta2: 0.99,
            adam_eps: 1e-8,
            grad_accum: 1,
            minibatch: 32,
            seed: 0,
            dropout: 0.1,
            bn_momentum: 0.1,
            warmup_frac: 0.1,
            lr_peak: 2e-3,
            crop_frames: None,
            checkpoint_every: 1000,
            checkpoint_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.way < 2 {
            return bad("train.way must be at least 2");
        }
        if self.shot < 1 {
            return bad("train.shot must be at least 1");
        }
        if !(self.lr0 > 0.0) {
            return bad("train.lr0 must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("train.gamma must lie in (0, 1]");
        }
        if self.decay_interval == 0 || self.grad_accum == 0 || self.minibatch == 0 {
            return bad("train.decay_interval, train.grad_accum and train.minibatch must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad("train.dropout must lie in [0, 1) and train.bn_momentum in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.warmup_frac) || !(self.lr_peak > 0.0) || self.lr_floor < 0.0 {
            return bad("train.warmup_frac must lie in [0, 1), train.lr_peak > 0, train.lr_floor ≥ 0");
        }
        let unit = 0.0..1.0;
        if !unit.contains(&self.adam_beta1) || !unit.contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return bad("train.adam_beta1 and train.adam_beta2 must lie in [0, 1), train.adam_eps > 0");
        }
        if self.crop_frames == Some(0) {
            return bad("train.crop_frames must be positive");
        }
        Ok(())
    }
}

/// Step-decayed meta-learning rate with a floor.
pub fn lr_schedule(step: usize, cfg: &TrainConfig) -> f64 {
    let k = (step / cfg.decay_interval.max(1)) as f64;
    (cfg.lr0 * cfg.gamma.powf(k)).max(cfg.lr_floor)
}

/// Baseline rate: linear rise from lr0 to lr_peak over the warmup share,
/// then exponential decay reaching lr_floor at the last step.
pub fn baseline_lr(step: usize, cfg: &TrainConfig) -> f64 {
    let total = cfg.episodes.max(1);
    let warm = ((total as f64 * cfg.warmup_frac).round() as usize).max(1);
    if step < warm {
        return cfg.lr0 + (cfg.lr_peak - cfg.lr0) * step as f64 / warm as f64;
    }
    let floor = cfg.lr_floor.max(f64::MIN_POSITIVE);
    let span = (total - 1).saturating_sub(warm).max(1) as f64;
    let frac = ((step - warm) as f64 / span).min(1.0);
    cfg.lr_peak * (floor / cfg.lr_peak).powf(frac)
}

pub fn learning_rate(step: usize, cfg: &TrainConfig) -> f64 {
    match cfg.mode {
        TrainMode::XvectorBaseline => baseline_lr(step, cfg),
        _ => lr_schedule(step, cfg),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    /// Query accuracy in meta modes, minibatch accuracy in baseline mode.
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.loss).collect()
    }

    /// Tab-separated `step lr loss query_acc` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&format!("{}\t{:e}\t{:.10}\t{:.6}\n", e.step, e.lr, e.loss, e.accuracy));
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_text().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Trailing moving average; element `i` averages values `i..i + window`.
pub fn smoothed_loss(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || values.len() < window {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(values.len() - window + 1);
    let mut acc: f64 = values[..window].iter().sum();
    out.push(acc / window as f64);
    for i in window..values.len() {
        acc += values[i] - values[i - window];
        out.push(acc / window as f64);
    }
    out
}

fn check_mode(weights: &NetworkWeights, mode: TrainMode) -> Result<()> {
    let ok = matches!(
        (&weights.spec.head, mode),
        (HeadSpec::Protonet { .. }, TrainMode::Protonet)
            | (HeadSpec::RelationEncoder { .. }, TrainMode::Relation)
            | (HeadSpec::XVector { .. }, TrainMode::XvectorBaseline)
    );
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "training mode {} does not match a {} network",
            mode.name(),
            weights.spec.head.name()
        )))
    }
}

/// Exponential moving update of running batch-norm statistics. The
/// variance enters unbiased.
fn update_running_stats(weights: &mut NetworkWeights, eg: &EpisodeGraph, momentum: f64) -> Result<()> {
    for (layer, id) in &eg.batch_norms {
        let Some((mean, var)) = eg.graph.batch_stats(*id) else {
            continue;
        };
        let n = eg.graph.value(*id)?.nrows() as f64;
        let corr = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        let rm = weights
            .buffers
            .get_mut(&format!("{layer}.bn.running_mean"))
            .ok_or_else(|| Error::State(format!("missing running mean for {layer}")))?;
        for (r, m) in rm.iter_mut().zip(mean) {
            *r = (1.0 - momentum) * *r + momentum * m;
        }
        let rv = weights
            .buffers
            .get_mut(&format!("{layer}.bn.running_var"))
            .ok_or_else(|| Error::State(format!("missing running var for {layer}")))?;
        for (r, v) in rv.iter_mut().zip(var) {
            *r = (1.0 - momentum) * *r + momentum * v * corr;
        }
    }
    Ok(())
}

fn baseline_graph(
    store: &LabeledUtteranceStore,
    weights: &NetworkWeights,
    cfg: &TrainConfig,
    step: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeGraph> {
    let crop = cfg
        .crop_frames
        .ok_or_else(|| Error::Config("baseline training needs train.crop_frames".into()))?;
    let n = cfg.minibatch.min(store.len());
    let picks = sample(rng, store.len(), n).into_vec();
    let mut owned = Vec::with_capacity(n);
    for &i in &picks {
        let u = store.utterance(i);
        if u.features.num_frames() < crop {
            return Err(Error::Batch(format!(
                "utterance {} has {} frames, shorter than the {crop}-frame crop",
                u.id,
                u.features.num_frames()
            )));
        }
        let frames = random_crop(&u.features, crop, rng);
        let label = store.class_of(&u.speaker).expect("speaker indexed");
        owned.push((FeatureMatrix::new(frames, u.features.frame_shift, u.features.frame_width), label));
    }
    let batch: Vec<(&FeatureMatrix, usize)> = owned.iter().map(|(f, y)| (f, *y)).collect();
    let mode = GraphMode {
        norm: NormMode::Train,
        dropout: (cfg.dropout > 0.0).then_some((cfg.dropout, cfg.seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))),
    };
    classification_graph(&batch, weights, mode)
}

/// Runs `cfg.episodes` steps from `initial` weights. Meta modes use one
/// episode per step; the baseline uses one minibatch per step. Adam steps
/// after every `grad_accum` steps on the averaged gradient.
pub fn train(
    store: &LabeledUtteranceStore,
    cfg: &TrainConfig,
    initial: NetworkWeights,
) -> Result<(NetworkWeights, TrainLog)> {
    cfg.validate()?;
    check_mode(&initial, cfg.mode)?;
    if let HeadSpec::XVector { n_speakers } = initial.spec.head {
        if store.num_speakers() > n_speakers {
            return Err(Error::Config(format!(
                "store has {} speakers but the network outputs {n_speakers} classes",
                store.num_speakers()
            )));
        }
    }
    let mut weights = initial;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut log = TrainLog::default();
    let mut acc_grads: Option<TensorMap> = None;
    let mut pending = 0usize;

    for step in 0..cfg.episodes {
        let lr = learning_rate(step, cfg);
        let wrap = |e: Error| Error::Training {
            step,
            source: Box::new(e),
        };
        let mut eg = match cfg.mode {
            TrainMode::XvectorBaseline => baseline_graph(store, &weights, cfg, step, &mut rng),
            _ => {
                let ep = sample_episode(store, cfg.way, cfg.shot, cfg.n_query, &mut rng).map_err(wrap)?;
                let crop = cfg.crop_frames.map(|n| (n, &mut rng as &mut dyn rand::RngCore));
                build_episode_graph(store, &ep, &weights, GraphMode::TRAIN, crop)
            }
        }
        .map_err(wrap)?;
        eg.graph.forward(&(&eg.inputs, &weights)).map_err(wrap)?;
        let loss = eg.graph.scalar(eg.loss).map_err(wrap)?;
        let acc = accuracy(eg.graph.value(eg.logits).map_err(wrap)?, &eg.targets);
        let grads = eg.graph.backward(eg.loss).map_err(wrap)?;
        update_running_stats(&mut weights, &eg, cfg.bn_momentum).map_err(wrap)?;

        let acc_map = acc_grads.get_or_insert_with(TensorMap::new);
        for (name, g) in grads {
            if !weights.params.contains_key(&name) {
                continue;
            }
            match acc_map.get_mut(&name) {
                Some(a) => *a += &g,
                None => {
                    acc_map.insert(name, g);
                }
            }
        }
        pending += 1;
        if pending == cfg.grad_accum || step + 1 == cfg.episodes {
            let mut g = acc_grads.take().unwrap_or_default();
            if pending > 1 {
                let inv = 1.0 / pending as f64;
                g.values_mut().for_each(|t| *t *= inv);
            }
            adam_step(&mut weights.params, &g, &mut adam, lr).map_err(wrap)?;
            pending = 0;
        }
        log.entries.push(LogEntry {
            step,
            lr,
            loss,
            accuracy: acc,
        });
        if let Some(path) = &cfg.checkpoint_path {
            if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
                save_weights(&weights, path).map_err(wrap)?;
            }
        }
    }
    Ok((weights, log))
}

/// Mean query accuracy over `n` fresh episodes in inference mode.
pub fn evaluate_episodes(
    store: &LabeledUtteranceStore,
    weights: &NetworkWeights,
    way: usize,
    shot: usize,
    n_query: usize,
    n: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..n {
        let ep = sample_episode(store, way, shot, n_query, &mut rng)?;
        let mut eg = build_episode_graph(store, &ep, weights, GraphMode::INFERENCE, None)?;
        eg.graph.forward(&(&eg.inputs, weights))?;
        total += accuracy(eg.graph.value(eg.logits)?, &eg.targets);
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}
