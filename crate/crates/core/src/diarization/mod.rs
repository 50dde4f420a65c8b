//! Oracle-SAD diarization: uniform segmentation, embedding, clustering,
//! timeline projection, RTTM exchange and DER scoring.

mod der;
mod pipeline;
mod rttm;
mod segment;

pub use der::{
    by_session, der_score, format_der_report, hungarian, optimal_speaker_map, score_sessions, DerBreakdown,
};
pub use pipeline::{diarize_session, merge_turns, Clusterer, DiarizeOptions};
pub use rttm::{format_rttm, parse_rttm, read_rttm, speech_regions, write_rttm, RttmSegment};
pub use segment::{midpoint_spans, uniform_segment, MIN_SEGMENT};
