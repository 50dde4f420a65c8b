use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kv;

/// One time-delay layer F(N, D, K): N outputs, dilation D, context K.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TdnnLayerSpec {
    pub out_dim: usize,
    pub dilation: usize,
    pub context: usize,
}

impl TdnnLayerSpec {
    pub const fn new(out_dim: usize, dilation: usize, context: usize) -> Self {
        Self {
            out_dim,
            dilation,
            context,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HeadSpec {
    /// Speaker-classification output layer.
    XVector { n_speakers: usize },
    /// Extra fully connected layers whose last output is the embedding.
    Protonet { dims: Vec<usize> },
    /// Encoder half of a relation network.
    RelationEncoder { dims: Vec<usize> },
}

impl HeadSpec {
    pub fn name(&self) -> &'static str {
        match self {
            HeadSpec::XVector { .. } => "xvector",
            HeadSpec::Protonet { .. } => "protonet",
            HeadSpec::RelationEncoder { .. } => "relation",
        }
    }
}

/// Architecture: TDNN stack → stats pooling → segment layers (fc1, fc2) →
/// head, plus the comparison network for relation models.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderSpec {
    pub input_dim: usize,
    pub tdnn: Vec<TdnnLayerSpec>,
    pub segment_dims: Vec<usize>,
    pub head: HeadSpec,
    /// Hidden widths of the comparison network g(·); input is twice the
    /// embedding width and the output is one relation score.
    pub comparison: Option<Vec<usize>>,
    pub var_floor: f64,
    pub bn_eps: f64,
}

/// TDNN stack of the full-size models. Layer 5 uses a 3-frame context.
pub const FULL_TDNN: [TdnnLayerSpec; 5] = [
    TdnnLayerSpec::new(512, 1, 5),
    TdnnLayerSpec::new(512, 2, 3),
    TdnnLayerSpec::new(512, 3, 3),
    TdnnLayerSpec::new(512, 1, 1),
    TdnnLayerSpec::new(1500, 1, 3),
];

/// One fully connected layer of the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FcLayer {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
    pub batch_norm: bool,
    pub relu: bool,
}

impl EncoderSpec {
    fn base(input_dim: usize, head: HeadSpec, comparison: Option<Vec<usize>>) -> Self {
        Self {
            input_dim,
            tdnn: FULL_TDNN.to_vec(),
            segment_dims: vec![512, 512],
            head,
            comparison,
            var_floor: 1e-10,
            bn_eps: 1e-5,
        }
    }

    pub fn xvector(input_dim: usize, n_speakers: usize) -> Self {
        Self::base(input_dim, HeadSpec::XVector { n_speakers }, None)
    }

    pub fn protonet(input_dim: usize) -> Self {
        Self::base(input_dim, HeadSpec::Protonet { dims: vec![512, 512] }, None)
    }

    pub fn relation(input_dim: usize) -> Self {
        Self::base(
            input_dim,
            HeadSpec::RelationEncoder { dims: vec![512] },
            Some(vec![512]),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Spec("input_dim must be positive".into()));
        }
        if self.tdnn.is_empty() {
            return Err(Error::Spec("at least one TDNN layer is required".into()));
        }
        for (i, l) in self.tdnn.iter().enumerate() {
            if l.out_dim == 0 || l.dilation == 0 || l.context == 0 {
                return Err(Error::Spec(format!("tdnn{} has a zero N, D or K", i + 1)));
            }
        }
        if self.segment_dims.contains(&0) {
            return Err(Error::Spec("segment layer widths must be positive".into()));
        }
        match &self.head {
            HeadSpec::XVector { n_speakers } if *n_speakers < 2 => {
                return Err(Error::Spec("x-vector head needs at least 2 speakers".into()))
            }
            HeadSpec::XVector { .. } if self.segment_dims.is_empty() => {
                return Err(Error::Spec("x-vector head needs fc1".into()))
            }
            HeadSpec::Protonet { dims } | HeadSpec::RelationEncoder { dims } => {
                if dims.is_empty() && self.segment_dims.is_empty() {
                    return Err(Error::Spec("embedding head has no fully connected layer".into()));
                }
                if dims.contains(&0) {
                    return Err(Error::Spec("head widths must be positive".into()));
                }
            }
            _ => {}
        }
        let is_relation = matches!(self.head, HeadSpec::RelationEncoder { .. });
        match (&self.comparison, is_relation) {
            (Some(_), false) => {
                return Err(Error::Spec(
                    "comparison network is only valid with a relation encoder".into(),
                ))
            }
            (None, true) => {
                return Err(Error::Spec("relation encoder requires a comparison network".into()))
            }
            (Some(h), true) if h.contains(&0) => {
                return Err(Error::Spec("comparison widths must be positive".into()))
            }
            _ => {}
        }
        if !(self.var_floor > 0.0) || !(self.bn_eps > 0.0) {
            return Err(Error::Spec("var_floor and bn_eps must be positive".into()));
        }
        Ok(())
    }

    pub fn tdnn_name(i: usize) -> String {
        format!("tdnn{}", i + 1)
    }

    pub fn pooled_dim(&self) -> usize {
        2 * self.tdnn.last().map_or(self.input_dim, |l| l.out_dim)
    }

    /// Frames consumed by the TDNN stack for one output frame.
    pub fn receptive_field(&self) -> usize {
        1 + self
            .tdnn
            .iter()
            .map(|l| (l.context - 1) * l.dilation)
            .sum::<usize>()
    }

    /// Encoder fully connected layers in order, excluding the comparison
    /// network. For meta-learning heads the last one is the embedding
    /// layer (batch norm, no ReLU); for the x-vector head the last one is
    /// the classification output (no batch norm, no ReLU).
    pub fn fc_layers(&self) -> Vec<FcLayer> {
        let mut out = Vec::new();
        let mut dim = self.pooled_dim();
        let push = |out: &mut Vec<FcLayer>, dim: &mut usize, o: usize, bn: bool, relu: bool| {
            out.push(FcLayer {
                name: format!("fc{}", out.len() + 1),
                in_dim: *dim,
                out_dim: o,
                batch_norm: bn,
                relu,
            });
            *dim = o;
        };
        match &self.head {
            HeadSpec::XVector { n_speakers } => {
                for &d in &self.segment_dims {
                    push(&mut out, &mut dim, d, true, true);
                }
                out.push(FcLayer {
                    name: "output".into(),
                    in_dim: dim,
                    out_dim: *n_speakers,
                    batch_norm: false,
                    relu: false,
                });
            }
            HeadSpec::Protonet { dims } | HeadSpec::RelationEncoder { dims } => {
                let all: Vec<usize> = self.segment_dims.iter().chain(dims).copied().collect();
                for (i, &d) in all.iter().enumerate() {
                    let last = i + 1 == all.len();
                    push(&mut out, &mut dim, d, true, !last);
                }
            }
        }
        out
    }

    /// Width of the meta-learning embedding (final encoder layer).
    pub fn embedding_dim(&self) -> usize {
        match &self.head {
            HeadSpec::XVector { .. } => self.segment_dims.last().copied().unwrap_or(0),
            _ => self.fc_layers().last().map_or(0, |l| l.out_dim),
        }
    }

    /// Comparison layers `cmp1..` mapping 2·embedding → hidden… → 1.
    pub fn comparison_layers(&self) -> Vec<FcLayer> {
        let Some(hidden) = &self.comparison else {
            return Vec::new();
        };
        let mut dim = 2 * self.embedding_dim();
        let mut out = Vec::new();
        for (i, &h) in hidden.iter().chain(std::iter::once(&1)).enumerate() {
            let last = i == hidden.len();
            out.push(FcLayer {
                name: format!("cmp{}", i + 1),
                in_dim: dim,
                out_dim: h,
                batch_norm: false,
                relu: !last,
            });
            dim = h;
        }
        out
    }

    /// Every trainable parameter's name and shape, in a fixed order.
    pub fn param_shapes(&self) -> Vec<(String, (usize, usize))> {
        let mut out = Vec::new();
        let mut cin = self.input_dim;
        for (i, l) in self.tdnn.iter().enumerate() {
            let n = Self::tdnn_name(i);
            out.push((format!("{n}.weight"), (l.context * cin, l.out_dim)));
            out.push((format!("{n}.bias"), (1, l.out_dim)));
            out.push((format!("{n}.bn.gamma"), (1, l.out_dim)));
            out.push((format!("{n}.bn.beta"), (1, l.out_dim)));
            cin = l.out_dim;
        }
        for l in self.fc_layers().iter().chain(self.comparison_layers().iter()) {
            out.push((format!("{}.weight", l.name), (l.in_dim, l.out_dim)));
            out.push((format!("{}.bias", l.name), (1, l.out_dim)));
            if l.batch_norm {
                out.push((format!("{}.bn.gamma", l.name), (1, l.out_dim)));
                out.push((format!("{}.bn.beta", l.name), (1, l.out_dim)));
            }
        }
        out
    }

    /// Non-trainable running batch-norm statistics.
    pub fn buffer_shapes(&self) -> Vec<(String, (usize, usize))> {
        let mut out = Vec::new();
        let bn_layers = self
            .tdnn
            .iter()
            .enumerate()
            .map(|(i, l)| (Self::tdnn_name(i), l.out_dim))
            .chain(
                self.fc_layers()
                    .into_iter()
                    .filter(|l| l.batch_norm)
                    .map(|l| (l.name, l.out_dim)),
            );
        for (n, d) in bn_layers {
            out.push((format!("{n}.bn.running_mean"), (1, d)));
            out.push((format!("{n}.bn.running_var"), (1, d)));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(_, (r, c))| r * c).sum()
    }

    pub fn comparison_param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .filter(|(n, _)| n.starts_with("cmp"))
            .map(|(_, (r, c))| r * c)
            .sum()
    }

    /// `model.*` key/value pairs; the canonical text is these joined by lines.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let tdnn = self
            .tdnn
            .iter()
            .map(|l| format!("{}:{}:{}", l.out_dim, l.dilation, l.context))
            .collect::<Vec<_>>()
            .join(",");
        let mut kv = vec![
            ("model.input_dim".into(), self.input_dim.to_string()),
            ("model.tdnn".into(), tdnn),
            ("model.segment_dims".into(), kv::join(&self.segment_dims)),
            ("model.head".into(), self.head.name().to_string()),
        ];
        match &self.head {
            HeadSpec::XVector { n_speakers } => {
                kv.push(("model.n_speakers".into(), n_speakers.to_string()))
            }
            HeadSpec::Protonet { dims } | HeadSpec::RelationEncoder { dims } => {
                kv.push(("model.head_dims".into(), kv::join(dims)))
            }
        }
        if let Some(c) = &self.comparison {
            kv.push(("model.comparison".into(), kv::join(c)));
        }
        kv.push(("model.var_floor".into(), format!("{:e}", self.var_floor)));
        kv.push(("model.bn_eps".into(), format!("{:e}", self.bn_eps)));
        kv
    }

    pub fn canonical_text(&self) -> String {
        self.to_kv()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// 64-bit fingerprint of the canonical text.
    pub fn fingerprint(&self) -> u64 {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
    }

    /// Builds a spec from `model.*` keys; missing keys fall back to the
    /// full-size architecture for the requested head.
    pub fn from_kv(map: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| map.get(&format!("model.{k}"));
        let input_dim = get("input_dim").map_or(Ok(30), |v| kv::parse_value("model.input_dim", v))?;
        let head_name = get("head").map(String::as_str).unwrap_or("protonet");
        let mut spec = match head_name {
            "xvector" => {
                let n = get("n_speakers").map_or(Ok(7323), |v| kv::parse_value("model.n_speakers", v))?;
                Self::xvector(input_dim, n)
            }
            "protonet" => Self::protonet(input_dim),
            "relation" => Self::relation(input_dim),
            other => return Err(Error::Config(format!("model.head: unknown head '{other}'"))),
        };
        if let Some(v) = get("tdnn") {
            spec.tdnn = v
                .split(',')
                .map(|t| {
                    let parts: Vec<usize> = kv::parse_list("model.tdnn", &t.replace(':', ","))?;
                    match parts[..] {
                        [n, d, k] => Ok(TdnnLayerSpec::new(n, d, k)),
                        _ => Err(Error::Config(format!("model.tdnn: '{t}' is not N:D:K"))),
                    }
                })
                .collect::<Result<_>>()?;
        }
        if let Some(v) = get("segment_dims") {
            spec.segment_dims = kv::parse_list("model.segment_dims", v)?;
        }
        if let Some(v) = get("head_dims") {
            let dims = kv::parse_list("model.head_dims", v)?;
            match &mut spec.head {
                HeadSpec::Protonet { dims: d } | HeadSpec::RelationEncoder { dims: d } => *d = dims,
                HeadSpec::XVector { .. } => {
                    return Err(Error::Config("model.head_dims is invalid for the x-vector head".into()))
                }
            }
        }
        if let Some(v) = get("comparison") {
            spec.comparison = Some(kv::parse_list("model.comparison", v)?);
        }
        if let Some(v) = get("var_floor") {
            spec.var_floor = kv::parse_value("model.var_floor", v)?;
        }
        if let Some(v) = get("bn_eps") {
            spec.bn_eps = kv::parse_value("model.bn_eps", v)?;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_canonical_text(text: &str) -> Result<Self> {
        let map = kv::parse_lines(text)?
            .into_iter()
            .map(|(_, k, v)| (k, v))
            .collect();
        Self::from_kv(&map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_size_counts() {
        let x = EncoderSpec::xvector(30, 7323).param_count() as f64;
        let p = EncoderSpec::protonet(30).param_count() as f64;
        let r = EncoderSpec::relation(30).param_count() as f64;
        assert!((x / 9.8e6 - 1.0).abs() < 0.10, "{x}");
        assert!((p / 6.6e6 - 1.0).abs() < 0.10, "{p}");
        assert!((r / 7.1e6 - 1.0).abs() < 0.10, "{r}");
    }

    #[test]
    fn toy_count_by_hand() {
        let spec = EncoderSpec {
            input_dim: 3,
            tdnn: vec![TdnnLayerSpec::new(16, 1, 3), TdnnLayerSpec::new(16, 2, 2)],
            segment_dims: vec![8],
            head: HeadSpec::Protonet { dims: vec![] },
            comparison: None,
            var_floor: 1e-10,
            bn_eps: 1e-5,
        };
        // tdnn1: 9·16 + 16 + 2·16, tdnn2: 32·16 + 16 + 2·16, fc1: 32·8 + 8 + 2·8
        let hand = (144 + 16 + 32) + (512 + 16 + 32) + (256 + 8 + 16);
        assert_eq!(spec.param_count(), hand);
        assert_eq!(spec.receptive_field(), 1 + 2 + 2);
        assert_eq!(spec.embedding_dim(), 8);
    }

    #[test]
    fn relation_layers() {
        let s = EncoderSpec::relation(30);
        let cmp = s.comparison_layers();
        assert_eq!((cmp[0].in_dim, cmp[0].out_dim), (1024, 512));
        assert_eq!((cmp[1].in_dim, cmp[1].out_dim), (512, 1));
        assert_eq!(s.embedding_dim(), 512);
        assert_eq!(s.fc_layers().len(), 3);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = EncoderSpec::protonet(30);
        s.comparison = Some(vec![8]);
        assert!(matches!(s.validate(), Err(Error::Spec(_))));
        let mut s = EncoderSpec::relation(30);
        s.comparison = None;
        assert!(matches!(s.validate(), Err(Error::Spec(_))));
        let mut s = EncoderSpec::protonet(30);
        s.tdnn[1].dilation = 0;
        assert!(matches!(s.validate(), Err(Error::Spec(_))));
    }

    #[test]
    fn canonical_text_round_trip() {
        for s in [
            EncoderSpec::xvector(30, 100),
            EncoderSpec::protonet(24),
            EncoderSpec::relation(30),
        ] {
            let back = EncoderSpec::from_canonical_text(&s.canonical_text()).unwrap();
            assert_eq!(back, s);
            assert_eq!(back.fingerprint(), s.fingerprint());
        }
        assert_ne!(
            EncoderSpec::protonet(30).fingerprint(),
            EncoderSpec::protonet(24).fingerprint()
        );
    }
}
