use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  usage or configuration error (unknown config key, bad flag, bad parameter)
  2  I/O error (missing or unwritable file)
  3  numeric error (non-finite values, degenerate statistics)
  4  format error (malformed archive, RTTM, trial or manifest file)";

#[derive(Debug, Parser)]
#[command(
    name = "metaspk",
    version,
    about = "Meta-learned speaker embeddings for diarization and verification",
    after_help = EXIT_CODES,
    subcommand_required = false,
    arg_required_else_help = true
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// Run configuration (flat `section.key = value` lines); unset keys keep
    /// their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Overrides train.seed and diarize.seed, and seeds gen-synth.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for features, embed, diarize and score-trials.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,

    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    pub dump_config: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract MFCC feature archives from WAV files.
    ///
    /// INPUT is a directory of .wav files (ids are file stems) or a list of
    /// `id speaker wav_path` lines. Writes `<id>.feat` archives and a
    /// `features.list` manifest into OUT_DIR.
    Features { input: PathBuf, out_dir: PathBuf },

    /// Train an encoder episodically on a feature manifest.
    Train {
        /// `utt_id speaker_id feature_path` lines.
        manifest: PathBuf,
        /// Output weight file.
        out: PathBuf,
        /// Loss log (tab-separated step, lr, loss, accuracy); defaults to
        /// OUT with `.log` appended.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Start from these weights instead of a fresh initialization.
        #[arg(long)]
        init: Option<PathBuf>,
    },

    /// Compute one embedding per utterance of a feature manifest.
    Embed {
        weights: PathBuf,
        manifest: PathBuf,
        out: PathBuf,
        /// Extraction point: fc1 or fc2 (x-vector), embedding (meta-learned).
        #[arg(long)]
        tap: Option<String>,
    },

    /// Diarize sessions over the speech regions of a reference RTTM.
    Diarize {
        weights: PathBuf,
        /// Session feature manifest; the speaker column is ignored.
        sessions: PathBuf,
        /// Reference RTTM supplying speech regions and, with --oracle-k,
        /// the speaker count of each session.
        reference: PathBuf,
        /// Hypothesis RTTM to write.
        out: PathBuf,
        /// Cluster into the reference speaker count instead of estimating it.
        #[arg(long)]
        oracle_k: bool,
        #[arg(long)]
        tap: Option<String>,
    },

    /// Diarization error rate of a hypothesis RTTM against a reference.
    ScoreDer {
        reference: PathBuf,
        hypothesis: PathBuf,
        /// Forgiveness collar in seconds around reference boundaries.
        #[arg(long)]
        collar: Option<f64>,
        /// Skip regions where reference speakers overlap.
        #[arg(long)]
        exclude_overlap: bool,
    },

    /// Score verification trials with a cosine or LDA+PLDA back end.
    ScoreTrials {
        embeddings: PathBuf,
        /// `enroll test target|nontarget` lines.
        trials: PathBuf,
        /// Score file to write.
        out: PathBuf,
        /// Load a fitted back end.
        #[arg(long, value_name = "FILE")]
        backend: Option<PathBuf>,
        /// Labelled embeddings to fit the LDA+PLDA back end on.
        #[arg(long, value_name = "ARCHIVE", requires = "train_list")]
        train_embeddings: Option<PathBuf>,
        /// `utt_id speaker_id ...` lines labelling --train-embeddings.
        #[arg(long, value_name = "FILE")]
        train_list: Option<PathBuf>,
        /// Write the fitted back end here.
        #[arg(long, value_name = "FILE")]
        save_backend: Option<PathBuf>,
    },

    /// EER and minDCF of a score file.
    EvalEer { scores: PathBuf },

    /// Describe a weight file: architecture and parameter counts.
    Info { weights: PathBuf },

    /// Write the synthetic band-limited-noise corpus: WAVs, lists, a
    /// reference RTTM, held-out trials and a matching run configuration.
    GenSynth {
        out_dir: PathBuf,
        #[arg(long, default_value_t = 16)]
        speakers: usize,
        /// Speakers used for training; the rest are held out.
        #[arg(long, default_value_t = 12)]
        train_speakers: usize,
        #[arg(long, default_value_t = 4)]
        sessions: usize,
    },
}
