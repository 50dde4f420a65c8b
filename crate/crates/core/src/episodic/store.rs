use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::features::{read_features, FeatureMatrix};

#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub speaker: String,
    pub features: Arc<FeatureMatrix>,
}

/// Labelled utterances indexed by speaker. Speakers are kept in sorted
/// order, which also fixes their class index for classification training.
#[derive(Debug, Clone, Default)]
pub struct LabeledUtteranceStore {
    utterances: Vec<Utterance>,
    index: BTreeMap<String, Vec<usize>>,
}

impl LabeledUtteranceStore {
    pub fn new(utterances: Vec<Utterance>) -> Self {
        let mut index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, u) in utterances.iter().enumerate() {
            index.entry(u.speaker.clone()).or_default().push(i);
        }
        Self { utterances, index }
    }

    /// Reads a manifest of `utt_id speaker_id feature_path` lines. Relative
    /// feature paths resolve against the manifest's directory.
    pub fn load_manifest(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut utts = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    line: n + 1,
                    msg: format!("expected 'utt_id speaker_id feature_path', got {} fields", fields.len()),
                });
            }
            let fp = Path::new(fields[2]);
            let fp = if fp.is_absolute() { fp.to_path_buf() } else { base.join(fp) };
            utts.push(Utterance {
                id: fields[0].to_string(),
                speaker: fields[1].to_string(),
                features: Arc::new(read_features(&fp)?),
            });
        }
        Ok(Self::new(utts))
    }

    /// Drops speakers with fewer than `min` utterances.
    pub fn filter_min_utterances(self, min: usize) -> Self {
        let keep: Vec<Utterance> = self
            .utterances
            .into_iter()
            .filter(|u| self.index[&u.speaker].len() >= min)
            .collect();
        Self::new(keep)
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn num_speakers(&self) -> usize {
        self.index.len()
    }

    pub fn speakers(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }

    pub fn utterance(&self, i: usize) -> &Utterance {
        &self.utterances[i]
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn of_speaker(&self, speaker: &str) -> &[usize] {
        self.index.get(speaker).map_or(&[], Vec::as_slice)
    }

    /// Sorted-order class index of a speaker.
    pub fn class_of(&self, speaker: &str) -> Option<usize> {
        self.index.keys().position(|s| s == speaker)
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.utterances.first().map(|u| u.features.dim())
    }
}

/// One few-shot task. Row `c` of `supports`/`queries` holds utterance
/// indices of class `c`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub classes: Vec<String>,
    pub supports: Vec<Vec<usize>>,
    pub queries: Vec<Vec<usize>>,
}

impl Episode {
    pub fn way(&self) -> usize {
        self.classes.len()
    }

    pub fn num_supports(&self) -> usize {
        self.supports.iter().map(Vec::len).sum()
    }

    pub fn num_queries(&self) -> usize {
        self.queries.iter().map(Vec::len).sum()
    }
}

/// Draws `way` speakers without replacement, then `shot + n_query`
/// distinct utterances of each.
pub fn sample_episode(
    store: &LabeledUtteranceStore,
    way: usize,
    shot: usize,
    n_query: usize,
    rng: &mut impl Rng,
) -> Result<Episode> {
    if way < 2 || shot < 1 {
        return Err(Error::Sampling(format!("need way ≥ 2 and shot ≥ 1, got way={way} shot={shot}")));
    }
    let need = shot + n_query;
    let eligible: Vec<&String> = store
        .index
        .iter()
        .filter(|(_, u)| u.len() >= need)
        .map(|(s, _)| s)
        .collect();
    if eligible.len() < way {
        return Err(Error::Sampling(format!(
            "{way}-way episodes need {way} speakers with ≥ {need} utterances; only {} of {} qualify",
            eligible.len(),
            store.num_speakers()
        )));
    }
    let mut ep = Episode {
        classes: Vec::with_capacity(way),
        supports: Vec::with_capacity(way),
        queries: Vec::with_capacity(way),
    };
    for ci in sample(rng, eligible.len(), way) {
        let spk = eligible[ci];
        let pool = &store.index[spk];
        let picked: Vec<usize> = sample(rng, pool.len(), need).into_iter().map(|i| pool[i]).collect();
        ep.classes.push(spk.clone());
        ep.supports.push(picked[..shot].to_vec());
        ep.queries.push(picked[shot..].to_vec());
    }
    Ok(ep)
}
