//! Trial lists, score files, the embedding archive and the back-end model.
//!
//! Embedding archive: "MSPKEMB1", u32 count, u32 dim, then per record a
//! u32 byte length, the UTF-8 utterance id and `dim` f32 values, all
//! little-endian.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};

use super::lda::Lda;
use super::metrics::TrialRecord;
use super::plda::PldaModel;
use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 8] = b"MSPKEMB1";

fn parse_label(line: usize, s: &str) -> Result<bool> {
    match s {
        "target" => Ok(true),
        "nontarget" => Ok(false),
        other => Err(Error::Parse {
            line,
            msg: format!("expected 'target' or 'nontarget', got '{other}'"),
        }),
    }
}

/// Parses "enroll test target|nontarget [score]" lines.
pub fn parse_trials(text: &str, with_scores: bool) -> Result<Vec<TrialRecord>> {
    let want = if with_scores { 4 } else { 3 };
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let f: Vec<&str> = raw.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        if f.len() != want {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected {want} fields, found {}", f.len()),
            });
        }
        let mut t = TrialRecord::new(f[0], f[1], parse_label(i + 1, f[2])?);
        if with_scores {
            let s: f64 = f[3].parse().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("bad score '{}'", f[3]),
            })?;
            t.score = Some(s);
        }
        out.push(t);
    }
    Ok(out)
}

pub fn read_trials(path: impl AsRef<Path>, with_scores: bool) -> Result<Vec<TrialRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trials(&text, with_scores)
}

/// Score file text; every trial must be scored.
pub fn format_scores(trials: &[TrialRecord]) -> Result<String> {
    let mut s = String::new();
    for t in trials {
        let score = t
            .score
            .ok_or_else(|| Error::Evaluation(format!("trial {} {} has no score", t.enroll, t.test)))?;
        let label = if t.is_target { "target" } else { "nontarget" };
        s.push_str(&format!("{} {} {label} {score:.8}\n", t.enroll, t.test));
    }
    Ok(s)
}

pub fn write_scores(path: impl AsRef<Path>, trials: &[TrialRecord]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_scores(trials)?).map_err(|e| Error::io(path, e))
}

/// Utterance-keyed embeddings in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingSet {
    pub ids: Vec<String>,
    pub vectors: Array2<f64>,
}

impl EmbeddingSet {
    pub fn new(ids: Vec<String>, vectors: Array2<f64>) -> Result<Self> {
        if ids.len() != vectors.nrows() {
            return Err(Error::Dimension(format!("{} ids for {} vectors", ids.len(), vectors.nrows())));
        }
        Ok(EmbeddingSet { ids, vectors })
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index(&self) -> std::collections::HashMap<&str, usize> {
        self.ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
    }
}

pub fn write_embeddings(path: impl AsRef<Path>, set: &EmbeddingSet) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    encode(&mut buf, set).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn encode(w: &mut impl Write, set: &EmbeddingSet) -> std::io::Result<()> {
    w.write_all(EMBEDDING_MAGIC)?;
    w.write_u32::<LittleEndian>(set.len() as u32)?;
    w.write_u32::<LittleEndian>(set.dim() as u32)?;
    for (id, row) in set.ids.iter().zip(set.vectors.rows()) {
        w.write_u32::<LittleEndian>(id.len() as u32)?;
        w.write_all(id.as_bytes())?;
        for v in row {
            w.write_f32::<LittleEndian>(*v as f32)?;
        }
    }
    Ok(())
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&mut bytes.as_slice()).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn decode(r: &mut &[u8]) -> std::result::Result<EmbeddingSet, String> {
    let short = |_: std::io::Error| "truncated embedding archive".to_string();
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(short)?;
    if &magic != EMBEDDING_MAGIC {
        return Err("bad magic".into());
    }
    let n = r.read_u32::<LittleEndian>().map_err(short)? as usize;
    let d = r.read_u32::<LittleEndian>().map_err(short)? as usize;
    let mut ids = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let len = r.read_u32::<LittleEndian>().map_err(short)? as usize;
        if r.len() < len {
            return Err("truncated embedding archive".into());
        }
        let (id, rest) = r.split_at(len);
        ids.push(String::from_utf8(id.to_vec()).map_err(|_| "utterance id is not UTF-8".to_string())?);
        *r = rest;
        for _ in 0..d {
            data.push(r.read_f32::<LittleEndian>().map_err(short)? as f64);
        }
    }
    if !r.is_empty() {
        return Err(format!("{} trailing bytes", r.len()));
    }
    let vectors = Array2::from_shape_vec((n, d), data).map_err(|e| e.to_string())?;
    Ok(EmbeddingSet { ids, vectors })
}

/// Scoring back end: cosine, or LDA + length norm + PLDA.
#[derive(Debug, Clone, PartialEq)]
pub enum Backend {
    Cosine,
    Plda { lda: Lda, plda: PldaModel },
}

fn vec_line(name: &str, v: impl IntoIterator<Item = f64>) -> String {
    let vals: Vec<String> = v.into_iter().map(|x| format!("{x:e}")).collect();
    format!("{name} {}\n", vals.join(" "))
}

/// Plain-text back-end model: a "backend" header line then one named
/// line per vector or matrix row, values in shortest round-trip form.
pub fn format_backend(b: &Backend) -> String {
    match b {
        Backend::Cosine => "backend cosine\n".into(),
        Backend::Plda { lda, plda } => {
            let mut s = format!(
                "backend plda {} {}\n",
                lda.input_dim(),
                lda.output_dim()
            );
            s += &vec_line("lda.mean", lda.mean.iter().copied());
            s += &vec_line("lda.eigenvalues", lda.eigenvalues.iter().copied());
            for r in lda.projection.rows() {
                s += &vec_line("lda.row", r.iter().copied());
            }
            s += &vec_line("plda.mu", plda.mu.iter().copied());
            for r in plda.between_cov.rows() {
                s += &vec_line("plda.between", r.iter().copied());
            }
            for r in plda.within_cov.rows() {
                s += &vec_line("plda.within", r.iter().copied());
            }
            s
        }
    }
}

pub fn parse_backend(text: &str) -> Result<Backend> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, head) = lines.next().ok_or_else(|| Error::Format("empty back-end file".into()))?;
    let h: Vec<&str> = head.split_whitespace().collect();
    match h.as_slice() {
        ["backend", "cosine"] => return Ok(Backend::Cosine),
        ["backend", "plda", _, _] => {}
        _ => return Err(Error::Format(format!("bad back-end header '{head}'"))),
    }
    let parse_dim = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad dimension '{s}'")))
    };
    let (din, dout) = (parse_dim(h[2])?, parse_dim(h[3])?);
    let mut rows: std::collections::BTreeMap<&str, Vec<Vec<f64>>> = Default::default();
    for (i, l) in lines {
        let mut f = l.split_whitespace();
        let name = f.next().expect("non-empty line");
        let vals = f
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("bad number in '{name}' line"),
            })?;
        rows.entry(name).or_default().push(vals);
    }
    let mut take = |name: &str, n_rows: usize, n_cols: usize| -> Result<Array2<f64>> {
        let r = rows.remove(name).unwrap_or_default();
        if r.len() != n_rows || r.iter().any(|v| v.len() != n_cols) {
            return Err(Error::Format(format!("'{name}' must be {n_rows}×{n_cols}")));
        }
        Ok(Array2::from_shape_vec((n_rows, n_cols), r.concat()).expect("checked shape"))
    };
    let row_vec = |m: Array2<f64>| Array1::from_iter(m.into_iter());
    let lda = Lda {
        mean: row_vec(take("lda.mean", 1, din)?),
        eigenvalues: take("lda.eigenvalues", 1, dout)?.into_iter().collect(),
        projection: take("lda.row", dout, din)?,
    };
    let plda = PldaModel {
        mu: row_vec(take("plda.mu", 1, dout)?),
        between_cov: take("plda.between", dout, dout)?,
        within_cov: take("plda.within", dout, dout)?,
    };
    if let Some(extra) = rows.keys().next() {
        return Err(Error::Format(format!("unknown back-end field '{extra}'")));
    }
    Ok(Backend::Plda { lda, plda })
}

pub fn write_backend(path: impl AsRef<Path>, b: &Backend) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_backend(b)).map_err(|e| Error::io(path, e))
}

pub fn read_backend(path: impl AsRef<Path>) -> Result<Backend> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_backend(&text)
}
