use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::EncoderSpec;
use crate::autograd::{Tensor, TensorMap};
use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 8] = b"MSPKWGT1";

/// Trainable parameters plus running batch-norm statistics for one spec.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    pub spec: EncoderSpec,
    pub params: TensorMap,
    pub buffers: TensorMap,
}

impl NetworkWeights {
    pub fn param_count(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).or_else(|| self.buffers.get(name))
    }

    /// Parameters of the comparison network (φ).
    pub fn comparison_params(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter().filter(|(n, _)| n.starts_with("cmp"))
    }

    /// Rounds every value to single precision, as a save/load would.
    pub fn to_f32_precision(&self) -> Self {
        let round = |m: &TensorMap| -> TensorMap {
            m.iter()
                .map(|(k, v)| (k.clone(), v.mapv(|x| x as f32 as f64)))
                .collect()
        };
        Self {
            spec: self.spec.clone(),
            params: round(&self.params),
            buffers: round(&self.buffers),
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: (usize, usize), bound: f64) -> Tensor {
    Array2::from_shape_fn(shape, |_| rng.random_range(-bound..=bound))
}

fn init_buffers(spec: &EncoderSpec) -> TensorMap {
    spec.buffer_shapes()
        .into_iter()
        .map(|(n, s)| {
            let t = if n.ends_with("running_var") {
                Tensor::ones(s)
            } else {
                Tensor::zeros(s)
            };
            (n, t)
        })
        .collect()
}

/// Allocates and initializes every parameter: weights and biases uniform in
/// ±1/√fan_in, batch-norm scale 1 and shift 0.
pub fn build_network(spec: &EncoderSpec, seed: u64) -> Result<NetworkWeights> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = spec.param_shapes();
    let mut params = TensorMap::new();
    // biases are drawn with the preceding weight's fan-in
    let mut last_fan_in = 1usize;
    for (name, shape) in shapes {
        let t = if name.ends_with(".bn.gamma") {
            Tensor::ones(shape)
        } else if name.ends_with(".bn.beta") {
            Tensor::zeros(shape)
        } else {
            if name.ends_with(".weight") {
                last_fan_in = shape.0;
            }
            uniform(&mut rng, shape, 1.0 / (last_fan_in as f64).sqrt())
        };
        params.insert(name, t);
    }
    Ok(NetworkWeights {
        spec: spec.clone(),
        params,
        buffers: init_buffers(spec),
    })
}

/// Copies the time-delay layers (parameters and running statistics) from
/// `source`, and redraws every fully connected parameter of `target`
/// uniformly in [−1/√N, 1/√N], N being that layer's parameter count.
pub fn init_from_pretrained(target: &NetworkWeights, source: &NetworkWeights, seed: u64) -> Result<NetworkWeights> {
    let mut out = target.clone();
    for (i, l) in target.spec.tdnn.iter().enumerate() {
        let layer = EncoderSpec::tdnn_name(i);
        let Some(src) = source.spec.tdnn.get(i) else {
            return Err(Error::Incompatible(format!(
                "source has no layer {layer}"
            )));
        };
        let src_in = if i == 0 {
            source.spec.input_dim
        } else {
            source.spec.tdnn[i - 1].out_dim
        };
        let tgt_in = if i == 0 {
            target.spec.input_dim
        } else {
            target.spec.tdnn[i - 1].out_dim
        };
        if src != l || src_in != tgt_in {
            return Err(Error::Incompatible(format!(
                "{layer}: source F({},{},{}) on {src_in} inputs, target F({},{},{}) on {tgt_in} inputs",
                src.out_dim, src.dilation, src.context, l.out_dim, l.dilation, l.context
            )));
        }
        for (map_t, map_s) in [
            (&mut out.params, &source.params),
            (&mut out.buffers, &source.buffers),
        ] {
            let prefix = format!("{layer}.");
            for (name, v) in map_s.iter().filter(|(n, _)| n.starts_with(&prefix)) {
                match map_t.get_mut(name) {
                    Some(t) if t.dim() == v.dim() => t.assign(v),
                    _ => {
                        return Err(Error::Incompatible(format!(
                            "{name}: shape {:?} has no counterpart in target",
                            v.dim()
                        )))
                    }
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = target
        .spec
        .fc_layers()
        .into_iter()
        .chain(target.spec.comparison_layers());
    for l in layers {
        let n = l.in_dim * l.out_dim + l.out_dim;
        let bound = 1.0 / (n as f64).sqrt();
        for suffix in ["weight", "bias"] {
            let key = format!("{}.{suffix}", l.name);
            let shape = out.params[&key].dim();
            out.params.insert(key, uniform(&mut rng, shape, bound));
        }
        if l.batch_norm {
            out.params
                .insert(format!("{}.bn.gamma", l.name), Tensor::ones((1, l.out_dim)));
            out.params
                .insert(format!("{}.bn.beta", l.name), Tensor::zeros((1, l.out_dim)));
            out.buffers
                .insert(format!("{}.bn.running_mean", l.name), Tensor::zeros((1, l.out_dim)));
            out.buffers
                .insert(format!("{}.bn.running_var", l.name), Tensor::ones((1, l.out_dim)));
        }
    }
    Ok(out)
}

/// Layout: magic, u64 spec fingerprint, u32 length + canonical spec text,
/// u32 entry count, then per entry: u8 kind (0 parameter, 1 buffer),
/// u32 length + name, u32 rows, u32 cols, rows·cols f32. Little-endian.
pub fn save_weights(weights: &NetworkWeights, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    encode(&mut buf, weights).map_err(|e| Error::io(path, e))?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, buf).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn encode(w: &mut impl Write, weights: &NetworkWeights) -> std::io::Result<()> {
    let text = weights.spec.canonical_text();
    w.write_all(WEIGHTS_MAGIC)?;
    w.write_u64::<LittleEndian>(weights.spec.fingerprint())?;
    w.write_u32::<LittleEndian>(text.len() as u32)?;
    w.write_all(text.as_bytes())?;
    let entries: Vec<(u8, &String, &Tensor)> = weights
        .params
        .iter()
        .map(|(n, t)| (0u8, n, t))
        .chain(weights.buffers.iter().map(|(n, t)| (1u8, n, t)))
        .collect();
    w.write_u32::<LittleEndian>(entries.len() as u32)?;
    for (kind, name, t) in entries {
        w.write_u8(kind)?;
        w.write_u32::<LittleEndian>(name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        w.write_u32::<LittleEndian>(t.nrows() as u32)?;
        w.write_u32::<LittleEndian>(t.ncols() as u32)?;
        for v in t.iter() {
            w.write_f32::<LittleEndian>(*v as f32)?;
        }
    }
    Ok(())
}

struct RawFile {
    fingerprint: u64,
    spec_text: String,
    entries: Vec<(u8, String, Tensor)>,
}

fn decode(r: &mut &[u8]) -> std::result::Result<RawFile, String> {
    let short = |_| "truncated weight file".to_string();
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(short)?;
    if &magic != WEIGHTS_MAGIC {
        return Err("bad magic".into());
    }
    let fingerprint = r.read_u64::<LittleEndian>().map_err(short)?;
    let read_string = |r: &mut &[u8]| -> std::result::Result<String, String> {
        let n = r.read_u32::<LittleEndian>().map_err(short)? as usize;
        if r.len() < n {
            return Err("truncated weight file".into());
        }
        let (s, rest) = r.split_at(n);
        *r = rest;
        String::from_utf8(s.to_vec()).map_err(|_| "invalid UTF-8".to_string())
    };
    let spec_text = read_string(r)?;
    let count = r.read_u32::<LittleEndian>().map_err(short)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let kind = r.read_u8().map_err(short)?;
        let name = read_string(r)?;
        let rows = r.read_u32::<LittleEndian>().map_err(short)? as usize;
        let cols = r.read_u32::<LittleEndian>().map_err(short)? as usize;
        if r.len() < rows * cols * 4 {
            return Err(format!("truncated data for '{name}'"));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(r.read_f32::<LittleEndian>().map_err(short)? as f64);
        }
        let t = Array2::from_shape_vec((rows, cols), data).map_err(|e| e.to_string())?;
        entries.push((kind, name, t));
    }
    if !r.is_empty() {
        return Err(format!("{} trailing bytes", r.len()));
    }
    Ok(RawFile {
        fingerprint,
        spec_text,
        entries,
    })
}

fn read_raw(path: &Path) -> Result<RawFile> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&mut bytes.as_slice()).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn assemble(raw: RawFile, spec: EncoderSpec) -> Result<NetworkWeights> {
    let mut params = TensorMap::new();
    let mut buffers = TensorMap::new();
    for (kind, name, t) in raw.entries {
        match kind {
            0 => params.insert(name, t),
            1 => buffers.insert(name, t),
            k => return Err(Error::Format(format!("unknown entry kind {k}"))),
        };
    }
    for (name, shape) in spec.param_shapes() {
        match params.get(&name) {
            Some(t) if t.dim() == shape => {}
            _ => return Err(Error::Format(format!("parameter '{name}' missing or misshapen"))),
        }
    }
    Ok(NetworkWeights {
        spec,
        params,
        buffers,
    })
}

/// Loads a weight file together with the spec it was saved from.
pub fn load_weights(path: impl AsRef<Path>) -> Result<NetworkWeights> {
    let path = path.as_ref();
    let raw = read_raw(path)?;
    let spec = EncoderSpec::from_canonical_text(&raw.spec_text)?;
    if spec.fingerprint() != raw.fingerprint {
        return Err(Error::Format(format!(
            "{}: fingerprint does not match embedded spec",
            path.display()
        )));
    }
    assemble(raw, spec)
}

/// Loads a weight file that must have been produced for `spec`.
pub fn load_weights_for(path: impl AsRef<Path>, spec: &EncoderSpec) -> Result<NetworkWeights> {
    let path = path.as_ref();
    let raw = read_raw(path)?;
    if raw.fingerprint != spec.fingerprint() {
        let found: std::collections::HashMap<&str, (usize, usize)> = raw
            .entries
            .iter()
            .filter(|(k, _, _)| *k == 0)
            .map(|(_, n, t)| (n.as_str(), t.dim()))
            .collect();
        for (name, shape) in spec.param_shapes() {
            match found.get(name.as_str()) {
                Some(&s) if s == shape => continue,
                Some(&s) => {
                    return Err(Error::Incompatible(format!(
                        "layer '{name}': file has {s:?}, spec expects {shape:?}"
                    )))
                }
                None => {
                    return Err(Error::Incompatible(format!(
                        "layer '{name}' missing from {}",
                        path.display()
                    )))
                }
            }
        }
        return Err(Error::Incompatible(format!(
            "{}: spec fingerprint differs (layer shapes agree)",
            path.display()
        )));
    }
    assemble(raw, spec.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::spec::{HeadSpec, TdnnLayerSpec};

    fn toy(head: HeadSpec) -> EncoderSpec {
        let comparison = matches!(head, HeadSpec::RelationEncoder { .. }).then(|| vec![6]);
        EncoderSpec {
            input_dim: 4,
            tdnn: vec![TdnnLayerSpec::new(16, 1, 3), TdnnLayerSpec::new(16, 2, 2)],
            segment_dims: vec![8],
            head,
            comparison,
            var_floor: 1e-10,
            bn_eps: 1e-5,
        }
    }

    #[test]
    fn build_is_deterministic_and_bounded() {
        let spec = toy(HeadSpec::Protonet { dims: vec![8] });
        let a = build_network(&spec, 7).unwrap();
        let b = build_network(&spec, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, build_network(&spec, 8).unwrap());
        assert_eq!(a.param_count(), spec.param_count());
        let w = &a.params["tdnn1.weight"];
        let bound = 1.0 / (12f64).sqrt();
        assert!(w.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn pretrained_copies_tdnn_and_redraws_fc() {
        let src = build_network(&toy(HeadSpec::XVector { n_speakers: 5 }), 1).unwrap();
        let tgt = build_network(&toy(HeadSpec::Protonet { dims: vec![8] }), 2).unwrap();
        let out = init_from_pretrained(&tgt, &src, 3).unwrap();
        for name in ["tdnn1.weight", "tdnn1.bias", "tdnn2.weight", "tdnn2.bn.gamma"] {
            assert_eq!(out.params[name], src.params[name]);
        }
        for l in out.spec.fc_layers() {
            let w = &out.params[&format!("{}.weight", l.name)];
            let bound = 1.0 / ((l.in_dim * l.out_dim + l.out_dim) as f64).sqrt();
            assert!(w.iter().all(|v| v.abs() <= bound));
            let max = w.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            assert!(max > 0.5 * bound);
        }
    }

    #[test]
    fn pretrained_same_architecture_is_bit_equal() {
        let spec = toy(HeadSpec::Protonet { dims: vec![8] });
        let src = build_network(&spec, 1).unwrap();
        let tgt = build_network(&spec, 2).unwrap();
        let out = init_from_pretrained(&tgt, &src, 3).unwrap();
        for (n, v) in src.params.iter().filter(|(n, _)| n.starts_with("tdnn")) {
            assert_eq!(&out.params[n], v);
        }
    }

    #[test]
    fn pretrained_shape_mismatch() {
        let src = build_network(&toy(HeadSpec::XVector { n_speakers: 5 }), 1).unwrap();
        let mut spec = toy(HeadSpec::Protonet { dims: vec![8] });
        spec.tdnn[1].context = 3;
        let tgt = build_network(&spec, 2).unwrap();
        let err = init_from_pretrained(&tgt, &src, 3).unwrap_err();
        assert!(matches!(err, Error::Incompatible(ref m) if m.contains("tdnn2")), "{err}");
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.bin");
        let w = build_network(&toy(HeadSpec::RelationEncoder { dims: vec![8] }), 4).unwrap();
        save_weights(&w, &p).unwrap();
        let back = load_weights(&p).unwrap();
        assert_eq!(back, w.to_f32_precision());
        let back2 = load_weights_for(&p, &w.spec).unwrap();
        assert_eq!(back2, back);
    }

    #[test]
    fn truncated_file_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.bin");
        let w = build_network(&toy(HeadSpec::Protonet { dims: vec![8] }), 4).unwrap();
        save_weights(&w, &p).unwrap();
        let raw = std::fs::read(&p).unwrap();
        for cut in [5, 20, raw.len() / 2, raw.len() - 1] {
            std::fs::write(&p, &raw[..cut]).unwrap();
            assert!(matches!(load_weights(&p), Err(Error::Format(_))), "cut {cut}");
        }
    }

    #[test]
    fn cross_spec_load_names_layer() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.bin");
        let w = build_network(&toy(HeadSpec::Protonet { dims: vec![8] }), 4).unwrap();
        save_weights(&w, &p).unwrap();
        let mut other = w.spec.clone();
        other.tdnn[1].out_dim = 12;
        let err = load_weights_for(&p, &other).unwrap_err();
        assert!(matches!(err, Error::Incompatible(ref m) if m.contains("tdnn2.weight")), "{err}");
    }
}
