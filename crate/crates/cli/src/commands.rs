use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{concatenate, Array2, Axis};
use rayon::prelude::*;

use metaspk::config::{BackendKind, RunConfig};
use metaspk::diarization::{by_session, diarize_session, format_der_report, read_rttm, score_sessions, write_rttm};
use metaspk::episodic::{smoothed_loss, train, LabeledUtteranceStore};
use metaspk::features::{extract_features, read_wav, write_features, write_wav, FeatureMatrix};
use metaspk::nets::{build_network, embed_batch, load_weights, load_weights_for, save_weights, HeadSpec, NetworkWeights, Tap};
use metaspk::synth::{generate_corpus, SynthCorpusConfig};
use metaspk::verification::{
    evaluate_trials, fit_backend, format_metrics, index_labels, read_backend, read_embeddings, read_trials,
    write_backend, write_embeddings, write_scores, Backend, EmbeddingSet, TrialRecord,
};
use metaspk::{Error, Result};

use crate::args::{Cli, Command, GlobalOpts};

pub fn run(cli: Cli) -> Result<()> {
    let cfg = effective_config(&cli.global)?;
    if cli.global.dump_config {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    if let Some(n) = cli.global.jobs {
        if n == 0 {
            return Err(Error::Parameter("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Parameter(format!("cannot size the worker pool: {e}")))?;
    }
    let Some(command) = cli.command else {
        return Err(Error::Parameter("no subcommand given; see --help".into()));
    };
    match command {
        Command::Features { input, out_dir } => features(&cfg, &input, &out_dir),
        Command::Train { manifest, out, log, init } => train_cmd(&cfg, &manifest, &out, log, init),
        Command::Embed { weights, manifest, out, tap } => embed(&cfg, &weights, &manifest, &out, tap.as_deref()),
        Command::Diarize { weights, sessions, reference, out, oracle_k, tap } => {
            diarize(&cfg, &weights, &sessions, &reference, &out, oracle_k, tap.as_deref())
        }
        Command::ScoreDer { reference, hypothesis, collar, exclude_overlap } => {
            score_der(&cfg, &reference, &hypothesis, collar, exclude_overlap)
        }
        Command::ScoreTrials { embeddings, trials, out, backend, train_embeddings, train_list, save_backend } => {
            let fit = train_embeddings.zip(train_list);
            score_trials(&cfg, &embeddings, &trials, &out, backend, fit, save_backend)
        }
        Command::EvalEer { scores } => eval_eer(&cfg, &scores),
        Command::Info { weights } => info(&weights),
        Command::GenSynth { out_dir, speakers, train_speakers, sessions } => {
            gen_synth(&out_dir, speakers, train_speakers, sessions, cli.global.seed.unwrap_or(0))
        }
    }
}

fn effective_config(g: &GlobalOpts) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.train.seed = seed;
        cfg.diarize.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// `(id, speaker, path)` entries of a directory of WAVs or of a list file.
/// Relative list paths resolve against the list's directory.
fn wav_entries(input: &Path) -> Result<Vec<(String, String, PathBuf)>> {
    if input.is_dir() {
        let mut out = Vec::new();
        for entry in fs::read_dir(input).map_err(|e| Error::io(input, e))? {
            let path = entry.map_err(|e| Error::io(input, e))?.path();
            if path.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")) {
                let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                out.push((id, "-".to_string(), path));
            }
        }
        out.sort();
        return Ok(out);
    }
    let base = input.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (n, line) in read_text(input)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 {
            return Err(Error::Parse {
                line: n + 1,
                msg: format!("expected 'id speaker wav_path', got {} fields", f.len()),
            });
        }
        out.push((f[0].to_string(), f[1].to_string(), base.join(f[2])));
    }
    Ok(out)
}

fn features(cfg: &RunConfig, input: &Path, out_dir: &Path) -> Result<()> {
    let entries = wav_entries(input)?;
    let mut seen = std::collections::HashSet::new();
    if let Some((id, _, _)) = entries.iter().find(|(id, _, _)| !seen.insert(id.as_str())) {
        return Err(Error::InvalidInput(format!("duplicate utterance id '{id}'")));
    }
    create_dir(out_dir)?;
    let frames: Vec<usize> = entries
        .par_iter()
        .map(|(id, _, wav)| {
            let f = extract_features(&read_wav(wav)?, &cfg.features.mfcc, cfg.features.cmn_window)?;
            write_features(out_dir.join(format!("{id}.feat")), &f)?;
            Ok(f.num_frames())
        })
        .collect::<Result<_>>()?;
    let mut list = String::new();
    for (id, spk, _) in &entries {
        let _ = writeln!(list, "{id} {spk} {id}.feat");
    }
    write_text(&out_dir.join("features.list"), &list)?;
    println!(
        "wrote {} feature archives ({} frames) to {}",
        entries.len(),
        frames.iter().sum::<usize>(),
        out_dir.display()
    );
    Ok(())
}

fn train_cmd(cfg: &RunConfig, manifest: &Path, out: &Path, log: Option<PathBuf>, init: Option<PathBuf>) -> Result<()> {
    let store = LabeledUtteranceStore::load_manifest(manifest)?;
    let initial = match init {
        Some(p) => load_weights_for(p, &cfg.model)?,
        None => build_network(&cfg.model, cfg.train.seed)?,
    };
    let (weights, trace) = train(&store, &cfg.train, initial)?;
    save_weights(&weights, out)?;
    let log = log.unwrap_or_else(|| {
        let mut p = out.as_os_str().to_owned();
        p.push(".log");
        PathBuf::from(p)
    });
    trace.write(&log)?;
    let losses = trace.losses();
    let last = smoothed_loss(&losses, 50).last().copied().unwrap_or(f64::NAN);
    println!(
        "trained {} steps on {} speakers ({} utterances); smoothed final loss {last:.4}",
        losses.len(),
        store.num_speakers(),
        store.len()
    );
    Ok(())
}

fn resolve_tap(flag: Option<&str>, cfg: &RunConfig, w: &NetworkWeights) -> Result<Tap> {
    let tap = match flag {
        Some(s) => s.parse()?,
        None => cfg.diarize.tap.clone().unwrap_or_else(|| Tap::default_for(&w.spec)),
    };
    tap.dim(&w.spec)?;
    Ok(tap)
}

fn embed(cfg: &RunConfig, weights: &Path, manifest: &Path, out: &Path, tap: Option<&str>) -> Result<()> {
    let w = load_weights(weights)?;
    let tap = resolve_tap(tap, cfg, &w)?;
    let store = LabeledUtteranceStore::load_manifest(manifest)?;
    let utts = store.utterances();
    let parts: Vec<Array2<f64>> = utts
        .par_chunks(32)
        .map(|chunk| {
            let feats: Vec<&FeatureMatrix> = chunk.iter().map(|u| &*u.features).collect();
            embed_batch(&w, &feats, &tap)
        })
        .collect::<Result<_>>()?;
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    let vectors = if views.is_empty() {
        Array2::zeros((0, tap.dim(&w.spec)?))
    } else {
        concatenate(Axis(0), &views).expect("equal widths")
    };
    let set = EmbeddingSet::new(utts.iter().map(|u| u.id.clone()).collect(), vectors)?;
    write_embeddings(out, &set)?;
    println!("wrote {} embeddings of dimension {} ({tap}) to {}", set.len(), set.dim(), out.display());
    Ok(())
}

fn diarize(
    cfg: &RunConfig,
    weights: &Path,
    sessions: &Path,
    reference: &Path,
    out: &Path,
    oracle_k: bool,
    tap: Option<&str>,
) -> Result<()> {
    let w = load_weights(weights)?;
    let tap = resolve_tap(tap, cfg, &w)?;
    let store = LabeledUtteranceStore::load_manifest(sessions)?;
    let refs = by_session(&read_rttm(reference)?);
    let oracle = oracle_k || cfg.diarize.oracle_k;
    let hyps: Vec<_> = store
        .utterances()
        .par_iter()
        .map(|u| {
            let r = refs
                .get(&u.id)
                .ok_or_else(|| Error::InvalidInput(format!("session '{}' has no reference segments", u.id)))?;
            let k = oracle.then(|| {
                let mut spk: Vec<&str> = r.iter().map(|s| s.speaker.as_str()).collect();
                spk.sort_unstable();
                spk.dedup();
                spk.len()
            });
            diarize_session(&u.id, &u.features, &w, &tap, r, &cfg.diarize_options(k))
        })
        .collect::<Result<_>>()?;
    let segs: Vec<_> = hyps.into_iter().flatten().collect();
    write_rttm(out, &segs)?;
    println!("wrote {} segments for {} sessions to {}", segs.len(), store.len(), out.display());
    Ok(())
}

fn score_der(cfg: &RunConfig, reference: &Path, hyp: &Path, collar: Option<f64>, exclude_overlap: bool) -> Result<()> {
    let collar = collar.unwrap_or(cfg.diarize.collar);
    if !(collar >= 0.0) {
        return Err(Error::Parameter(format!("collar {collar} must be ≥ 0")));
    }
    let (rows, total) =
        score_sessions(&read_rttm(reference)?, &read_rttm(hyp)?, exclude_overlap || cfg.diarize.exclude_overlap, collar)?;
    print!("{}", format_der_report(&rows, &total));
    println!("DER {:.2}%", 100.0 * total.der());
    Ok(())
}

/// `id → speaker` from the first two columns of a list.
fn speaker_labels(path: &Path) -> Result<HashMap<String, String>> {
    let mut out = HashMap::new();
    for (n, line) in read_text(path)?.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() || f[0].starts_with('#') {
            continue;
        }
        if f.len() < 2 {
            return Err(Error::Parse { line: n + 1, msg: "expected 'id speaker ...'".into() });
        }
        out.insert(f[0].to_string(), f[1].to_string());
    }
    Ok(out)
}

fn fit_from_archive(cfg: &RunConfig, archive: &Path, list: &Path) -> Result<Backend> {
    let set = read_embeddings(archive)?;
    let labels = speaker_labels(list)?;
    let speakers: Vec<String> = set
        .ids
        .iter()
        .map(|id| {
            labels
                .get(id)
                .cloned()
                .ok_or_else(|| Error::InvalidInput(format!("embedding '{id}' has no speaker in {}", list.display())))
        })
        .collect::<Result<_>>()?;
    let (backend, history) = fit_backend(&set.vectors, &index_labels(&speakers), cfg.verify.lda_dim, cfg.verify.plda_iters)?;
    eprintln!(
        "fitted LDA({})+PLDA on {} embeddings; log-likelihood {:.3} → {:.3}",
        cfg.verify.lda_dim,
        set.len(),
        history.first().copied().unwrap_or(f64::NAN),
        history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(backend)
}

fn score_trials(
    cfg: &RunConfig,
    embeddings: &Path,
    trials: &Path,
    out: &Path,
    backend: Option<PathBuf>,
    fit: Option<(PathBuf, PathBuf)>,
    save: Option<PathBuf>,
) -> Result<()> {
    let backend = match (backend, fit) {
        (Some(_), Some(_)) => {
            return Err(Error::Parameter("give either --backend or --train-embeddings, not both".into()));
        }
        (Some(p), None) => read_backend(p)?,
        (None, Some((archive, list))) => fit_from_archive(cfg, &archive, &list)?,
        (None, None) => match cfg.verify.backend {
            BackendKind::Cosine => Backend::Cosine,
            BackendKind::Plda => {
                return Err(Error::Parameter(
                    "the PLDA back end needs --backend FILE or --train-embeddings with --train-list".into(),
                ));
            }
        },
    };
    if let Some(p) = save {
        write_backend(p, &backend)?;
    }
    let set = read_embeddings(embeddings)?;
    let scorer = backend.prepare(&set)?;
    let trials = read_trials(trials, false)?;
    let scored: Vec<TrialRecord> = trials.par_iter().map(|t| scorer.score_trial(t)).collect::<Result<_>>()?;
    write_scores(out, &scored)?;
    println!("scored {} trials to {}", scored.len(), out.display());
    Ok(())
}

fn eval_eer(cfg: &RunConfig, scores: &Path) -> Result<()> {
    let m = evaluate_trials(&read_trials(scores, true)?, cfg.verify.p_target)?;
    print!("{}", format_metrics(&m));
    Ok(())
}

fn info(path: &Path) -> Result<()> {
    let w = load_weights(path)?;
    let spec = &w.spec;
    let total = w.param_count();
    println!("head: {}", spec.head.name());
    println!("parameters: {total} ({:.2}M)", total as f64 / 1e6);
    if matches!(spec.head, HeadSpec::RelationEncoder { .. }) {
        let cmp = spec.comparison_param_count();
        println!("  encoder: {}, comparison: {cmp}", total - cmp);
    }
    println!("embedding dim: {}", spec.embedding_dim());
    println!("receptive field: {} frames", spec.receptive_field());
    println!("fingerprint: {:016x}", spec.fingerprint());
    print!("{}", spec.canonical_text());
    Ok(())
}

fn gen_synth(out_dir: &Path, speakers: usize, train_speakers: usize, sessions: usize, seed: u64) -> Result<()> {
    if speakers == 0 || train_speakers > speakers {
        return Err(Error::Parameter(format!(
            "need 0 < --train-speakers ≤ --speakers, got {train_speakers} of {speakers}"
        )));
    }
    let corpus = generate_corpus(&SynthCorpusConfig {
        n_speakers: speakers,
        n_train: train_speakers,
        n_sessions: sessions,
        seed,
        ..SynthCorpusConfig::default()
    });
    for sub in ["wav", "sessions"] {
        create_dir(&out_dir.join(sub))?;
    }
    corpus
        .utterances
        .par_iter()
        .map(|u| write_wav(out_dir.join("wav").join(format!("{}.wav", u.id)), &u.audio))
        .collect::<Result<Vec<()>>>()?;
    corpus
        .sessions
        .par_iter()
        .map(|s| write_wav(out_dir.join("sessions").join(format!("{}.wav", s.id)), &s.audio))
        .collect::<Result<Vec<()>>>()?;

    let mut lists: BTreeMap<bool, String> = BTreeMap::new();
    for u in &corpus.utterances {
        let _ = writeln!(lists.entry(u.held_out).or_default(), "{} {} wav/{}.wav", u.id, u.speaker, u.id);
    }
    write_text(&out_dir.join("train.list"), lists.get(&false).map_or("", String::as_str))?;
    write_text(&out_dir.join("heldout.list"), lists.get(&true).map_or("", String::as_str))?;
    let mut sess = String::new();
    for s in &corpus.sessions {
        let _ = writeln!(sess, "{} - sessions/{}.wav", s.id, s.id);
    }
    write_text(&out_dir.join("sessions.list"), &sess)?;
    let reference: Vec<_> = corpus.sessions.iter().flat_map(|s| s.reference.iter().cloned()).collect();
    write_rttm(out_dir.join("reference.rttm"), &reference)?;

    let held: Vec<_> = corpus.utterances.iter().filter(|u| u.held_out).collect();
    let mut trials = String::new();
    for (i, a) in held.iter().enumerate() {
        for b in &held[i + 1..] {
            let label = if a.speaker == b.speaker { "target" } else { "nontarget" };
            let _ = writeln!(trials, "{} {} {label}", a.id, b.id);
        }
    }
    write_text(&out_dir.join("trials.txt"), &trials)?;
    write_text(&out_dir.join("demo.conf"), &RunConfig::synthetic_demo().to_text())?;
    println!(
        "wrote {} utterances from {speakers} speakers ({train_speakers} for training) and {} sessions to {}",
        corpus.utterances.len(),
        corpus.sessions.len(),
        out_dir.display()
    );
    Ok(())
}
