//! Binary parameter persistence.
//!
//! Every trained object saves as one little-endian file:
//!
//! ```text
//! header (16 bytes): magic "CFPD" | version u32 | kind u32 | section count u32
//! section:           name_len u32 | name utf-8 | dtype u8 | count u64 | payload
//! ```
//!
//! dtype 0 holds f64 values, dtype 1 holds u64. Section names are unique
//! per file and no longer than 64 bytes; counts are capped so a corrupt
//! length cannot trigger a huge allocation. The reader rejects anything
//! malformed with an error rather than panicking, including non-finite
//! floats and trailing bytes.
//!
//! Classifiers live one file per model under `models/<dataset>/<family>_<seed>`
//! next to a `manifest.json` that maps file names to content fingerprints.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::numerics::{Activation, DenseNet, Matrix};
use crate::zoo::{Family, Predictor, TrainedClassifier};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const KIND_CLASSIFIER: u32 = 1;
pub const KIND_VAE: u32 = 2;
pub const KIND_DENOISER: u32 = 3;
pub const KIND_DISENTANGLER: u32 = 4;
pub const KIND_CRITIC: u32 = 5;

const MAGIC: &[u8; 4] = b"CFPD";
const MAX_NAME_BYTES: usize = 64;
const MAX_SECTIONS: usize = 4096;
const MAX_SECTION_ELEMS: usize = 1 << 22;

const DTYPE_F64: u8 = 0;
const DTYPE_U64: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
enum SectionData {
    F64(Vec<f64>),
    U64(Vec<u64>),
}

/// An ordered collection of named numeric sections plus a kind tag.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamFile {
    kind: u32,
    sections: Vec<(String, SectionData)>,
}

impl ParamFile {
    pub fn new(kind: u32) -> Self {
        ParamFile {
            kind,
            sections: Vec::new(),
        }
    }

    pub fn kind(&self) -> u32 {
        self.kind
    }

    fn push(&mut self, name: &str, data: SectionData) {
        assert!(
            name.len() <= MAX_NAME_BYTES,
            "section name `{name}` too long"
        );
        assert!(
            self.sections.iter().all(|(n, _)| n != name),
            "duplicate section `{name}`"
        );
        self.sections.push((name.to_string(), data));
    }

    pub fn push_f64(&mut self, name: &str, data: Vec<f64>) {
        self.push(name, SectionData::F64(data));
    }

    pub fn push_u64(&mut self, name: &str, data: Vec<u64>) {
        self.push(name, SectionData::U64(data));
    }

    pub fn f64s(&self, name: &str) -> Result<&[f64]> {
        match self.find(name)? {
            SectionData::F64(v) => Ok(v),
            SectionData::U64(_) => Err(Error::Store(format!(
                "section `{name}` holds u64, expected f64"
            ))),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<&[u64]> {
        match self.find(name)? {
            SectionData::U64(v) => Ok(v),
            SectionData::F64(_) => Err(Error::Store(format!(
                "section `{name}` holds f64, expected u64"
            ))),
        }
    }

    /// Single-value u64 section.
    pub fn scalar_u64(&self, name: &str) -> Result<u64> {
        let v = self.u64s(name)?;
        if v.len() != 1 {
            return Err(Error::Store(format!(
                "section `{name}` has {} values, expected 1",
                v.len()
            )));
        }
        Ok(v[0])
    }

    /// Single-value f64 section.
    pub fn scalar_f64(&self, name: &str) -> Result<f64> {
        let v = self.f64s(name)?;
        if v.len() != 1 {
            return Err(Error::Store(format!(
                "section `{name}` has {} values, expected 1",
                v.len()
            )));
        }
        Ok(v[0])
    }

    fn find(&self, name: &str) -> Result<&SectionData> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| d)
            .ok_or_else(|| Error::Store(format!("missing section `{name}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.kind.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, data) in &self.sections {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match data {
                SectionData::F64(v) => {
                    out.push(DTYPE_F64);
                    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                SectionData::U64(v) => {
                    out.push(DTYPE_U64);
                    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Store("bad magic, not a parameter file".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Store(format!(
                "unsupported format version {version}"
            )));
        }
        let kind = r.u32()?;
        let n_sections = r.u32()? as usize;
        if n_sections > MAX_SECTIONS {
            return Err(Error::Store(format!(
                "section count {n_sections} exceeds cap {MAX_SECTIONS}"
            )));
        }
        let mut sections: Vec<(String, SectionData)> = Vec::with_capacity(n_sections);
        for _ in 0..n_sections {
            let name_len = r.u32()? as usize;
            if name_len == 0 || name_len > MAX_NAME_BYTES {
                return Err(Error::Store(format!("bad section name length {name_len}")));
            }
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Store("section name is not utf-8".into()))?
                .to_string();
            if sections.iter().any(|(n, _)| *n == name) {
                return Err(Error::Store(format!("duplicate section `{name}`")));
            }
            let dtype = r.u8()?;
            let count = r.u64()?;
            let count = usize::try_from(count)
                .ok()
                .filter(|&c| c <= MAX_SECTION_ELEMS)
                .ok_or_else(|| {
                    Error::Store(format!("section `{name}` length {count} exceeds cap"))
                })?;
            let payload = r.take(count.checked_mul(8).ok_or_else(|| {
                Error::Store(format!("section `{name}` byte size overflows"))
            })?)?;
            let data = match dtype {
                DTYPE_F64 => {
                    let mut v = Vec::with_capacity(count);
                    for chunk in payload.chunks_exact(8) {
                        let x = f64::from_le_bytes(chunk.try_into().expect("chunk of 8"));
                        if !x.is_finite() {
                            return Err(Error::Store(format!(
                                "section `{name}` contains a non-finite value"
                            )));
                        }
                        v.push(x);
                    }
                    SectionData::F64(v)
                }
                DTYPE_U64 => {
                    let v = payload
                        .chunks_exact(8)
                        .map(|c| u64::from_le_bytes(c.try_into().expect("chunk of 8")))
                        .collect();
                    SectionData::U64(v)
                }
                other => {
                    return Err(Error::Store(format!(
                        "section `{name}` has unknown dtype {other}"
                    )))
                }
            };
            sections.push((name, data));
        }
        if r.at != bytes.len() {
            return Err(Error::Store(format!(
                "{} trailing bytes after last section",
                bytes.len() - r.at
            )));
        }
        Ok(ParamFile { kind, sections })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(Error::io_at(parent))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(Error::io_at(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(Error::io_at(path))?;
        ParamFile::from_bytes(&bytes).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            msg: e.to_string(),
        })
    }

    /// Hex sha-256 of the serialized bytes.
    pub fn fingerprint(&self) -> String {
        sha256_hex(&[&self.to_bytes()])
    }
}

/// Hex sha-256 over the concatenation of the given byte chunks.
pub fn sha256_hex(chunks: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for c in chunks {
        h.update(c);
    }
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Store("truncated parameter file".into()))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn push_matrix(pf: &mut ParamFile, prefix: &str, m: &Matrix) {
    pf.push_u64(
        &format!("{prefix}/shape"),
        vec![m.rows() as u64, m.cols() as u64],
    );
    pf.push_f64(&format!("{prefix}/data"), m.data().to_vec());
}

pub fn read_matrix(pf: &ParamFile, prefix: &str) -> Result<Matrix> {
    let shape = pf.u64s(&format!("{prefix}/shape"))?;
    if shape.len() != 2 {
        return Err(Error::Store(format!("`{prefix}/shape` needs 2 values")));
    }
    let rows = usize::try_from(shape[0])
        .map_err(|_| Error::Store(format!("`{prefix}` rows out of range")))?;
    let cols = usize::try_from(shape[1])
        .map_err(|_| Error::Store(format!("`{prefix}` cols out of range")))?;
    let data = pf.f64s(&format!("{prefix}/data"))?;
    let need = rows.checked_mul(cols).ok_or_else(|| {
        Error::Store(format!("`{prefix}` element count overflows"))
    })?;
    if need != data.len() || need == 0 {
        return Err(Error::Store(format!(
            "`{prefix}` shape {rows}x{cols} does not match {} values",
            data.len()
        )));
    }
    let mut m = Matrix::zeros(rows, cols);
    m.data_mut().copy_from_slice(data);
    Ok(m)
}

pub fn push_net(pf: &mut ParamFile, prefix: &str, net: &DenseNet) {
    let dims: Vec<u64> = net.dims().iter().map(|&d| d as u64).collect();
    let acts: Vec<u64> = net.layers().iter().map(|l| l.act.code()).collect();
    let mut params = Vec::with_capacity(net.param_count());
    net.push_params(&mut params);
    pf.push_u64(&format!("{prefix}/dims"), dims);
    pf.push_u64(&format!("{prefix}/acts"), acts);
    pf.push_f64(&format!("{prefix}/params"), params);
}

pub fn read_net(pf: &ParamFile, prefix: &str) -> Result<DenseNet> {
    let dims: Vec<usize> = pf
        .u64s(&format!("{prefix}/dims"))?
        .iter()
        .map(|&d| {
            usize::try_from(d)
                .ok()
                .filter(|&d| d > 0 && d <= MAX_SECTION_ELEMS)
                .ok_or_else(|| Error::Store(format!("`{prefix}` has a bad layer width {d}")))
        })
        .collect::<Result<_>>()?;
    let acts: Vec<Activation> = pf
        .u64s(&format!("{prefix}/acts"))?
        .iter()
        .map(|&c| Activation::from_code(c))
        .collect::<Result<_>>()?;
    let mut net = DenseNet::zeros(&dims, &acts)?;
    let params = pf.f64s(&format!("{prefix}/params"))?;
    let used = net.load_params(params)?;
    if used != params.len() {
        return Err(Error::Store(format!(
            "`{prefix}` has {} parameters, network needs {used}",
            params.len()
        )));
    }
    Ok(net)
}

mod classifier {
    use super::*;
    use crate::zoo::linear::{LinearModel, RffKind, RffModel, Scaler};
    use crate::zoo::mlp::MlpModel;
    use crate::zoo::tree::{Forest, Gboost, Node, Tree};
    use crate::zoo::Model;

    pub fn push_scaler(pf: &mut ParamFile, prefix: &str, s: &Scaler) {
        pf.push_f64(&format!("{prefix}/mean"), s.mean.clone());
        pf.push_f64(&format!("{prefix}/std"), s.std.clone());
    }

    pub fn read_scaler(pf: &ParamFile, prefix: &str) -> Result<Scaler> {
        let mean = pf.f64s(&format!("{prefix}/mean"))?.to_vec();
        let std = pf.f64s(&format!("{prefix}/std"))?.to_vec();
        if mean.is_empty() || mean.len() != std.len() {
            return Err(Error::Store(format!(
                "`{prefix}` mean/std lengths {} vs {}",
                mean.len(),
                std.len()
            )));
        }
        if std.iter().any(|&s| s <= 0.0) {
            return Err(Error::Store(format!(
                "`{prefix}` has a non-positive standard deviation"
            )));
        }
        Ok(Scaler { mean, std })
    }

    fn push_linear(pf: &mut ParamFile, prefix: &str, m: &LinearModel) {
        pf.push_f64(&format!("{prefix}/w"), m.w.clone());
        pf.push_f64(&format!("{prefix}/b"), vec![m.b]);
    }

    fn read_linear(pf: &ParamFile, prefix: &str, dim: usize) -> Result<LinearModel> {
        let w = pf.f64s(&format!("{prefix}/w"))?.to_vec();
        if w.len() != dim {
            return Err(Error::Store(format!(
                "`{prefix}/w` has {} weights, input dimension is {dim}",
                w.len()
            )));
        }
        let b = pf.scalar_f64(&format!("{prefix}/b"))?;
        Ok(LinearModel { w, b })
    }

    /// Trees flatten to node-aligned arrays; per-tree ranges come from
    /// `offsets`. Children always follow their parent in the arena, which
    /// the reader re-checks so traversal of untrusted data terminates.
    fn push_trees(pf: &mut ParamFile, prefix: &str, trees: &[Tree]) {
        let mut offsets = vec![0u64];
        let mut kind = Vec::new();
        let mut feat = Vec::new();
        let mut thresh = Vec::new();
        let mut left = Vec::new();
        let mut right = Vec::new();
        let mut value = Vec::new();
        for t in trees {
            for node in &t.nodes {
                match node {
                    Node::Leaf { value: v } => {
                        kind.push(0);
                        feat.push(0);
                        thresh.push(0.0);
                        left.push(0);
                        right.push(0);
                        value.push(*v);
                    }
                    Node::Split {
                        feat: f,
                        thresh: th,
                        left: l,
                        right: r,
                    } => {
                        kind.push(1);
                        feat.push(*f as u64);
                        thresh.push(*th);
                        left.push(*l as u64);
                        right.push(*r as u64);
                        value.push(0.0);
                    }
                }
            }
            offsets.push(kind.len() as u64);
        }
        pf.push_u64(&format!("{prefix}/offsets"), offsets);
        pf.push_u64(&format!("{prefix}/kind"), kind);
        pf.push_u64(&format!("{prefix}/feat"), feat);
        pf.push_f64(&format!("{prefix}/thresh"), thresh);
        pf.push_u64(&format!("{prefix}/left"), left);
        pf.push_u64(&format!("{prefix}/right"), right);
        pf.push_f64(&format!("{prefix}/value"), value);
    }

    fn read_trees(pf: &ParamFile, prefix: &str, feature_dim: usize) -> Result<Vec<Tree>> {
        let offsets = pf.u64s(&format!("{prefix}/offsets"))?;
        let kind = pf.u64s(&format!("{prefix}/kind"))?;
        let feat = pf.u64s(&format!("{prefix}/feat"))?;
        let thresh = pf.f64s(&format!("{prefix}/thresh"))?;
        let left = pf.u64s(&format!("{prefix}/left"))?;
        let right = pf.u64s(&format!("{prefix}/right"))?;
        let value = pf.f64s(&format!("{prefix}/value"))?;
        let n = kind.len();
        if [feat.len(), thresh.len(), left.len(), right.len(), value.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(Error::Store(format!(
                "`{prefix}` node arrays have inconsistent lengths"
            )));
        }
        if offsets.first() != Some(&0) || offsets.last() != Some(&(n as u64)) {
            return Err(Error::Store(format!("`{prefix}/offsets` must span all nodes")));
        }
        let mut trees = Vec::with_capacity(offsets.len().saturating_sub(1));
        for w in offsets.windows(2) {
            let (start, end) = (w[0] as usize, w[1] as usize);
            if start >= end || end > n {
                return Err(Error::Store(format!(
                    "`{prefix}/offsets` range {start}..{end} is invalid"
                )));
            }
            let len = end - start;
            let mut nodes = Vec::with_capacity(len);
            for i in 0..len {
                let g = start + i;
                let node = match kind[g] {
                    0 => Node::Leaf { value: value[g] },
                    1 => {
                        let (l, r) = (left[g], right[g]);
                        if l as usize <= i || l as usize >= len || r as usize <= i || r as usize >= len
                        {
                            return Err(Error::Store(format!(
                                "`{prefix}` node {i} has out-of-order children"
                            )));
                        }
                        if feat[g] as usize >= feature_dim {
                            return Err(Error::Store(format!(
                                "`{prefix}` node {i} splits feature {} of {feature_dim}",
                                feat[g]
                            )));
                        }
                        Node::Split {
                            feat: feat[g] as u32,
                            thresh: thresh[g],
                            left: l as u32,
                            right: r as u32,
                        }
                    }
                    other => {
                        return Err(Error::Store(format!(
                            "`{prefix}` node {i} has unknown kind {other}"
                        )))
                    }
                };
                nodes.push(node);
            }
            trees.push(Tree { nodes });
        }
        Ok(trees)
    }

    fn push_rff(pf: &mut ParamFile, m: &RffModel) {
        let kind = match m.kind {
            RffKind::Rbf => 0u64,
            RffKind::Poly3 => 1,
        };
        pf.push_u64("rff/kind", vec![kind]);
        pf.push_f64("rff/gamma", vec![m.gamma]);
        pf.push_u64("rff/proj_count", vec![m.proj.len() as u64]);
        for (i, p) in m.proj.iter().enumerate() {
            push_matrix(pf, &format!("rff/proj{i}"), p);
        }
        pf.push_f64("rff/offset", m.offset.clone());
        push_scaler(pf, "rff/feature_scaler", &m.feature_scaler);
        push_linear(pf, "rff/linear", &m.linear);
    }

    fn read_rff(pf: &ParamFile, input_dim: usize) -> Result<RffModel> {
        let kind = match pf.scalar_u64("rff/kind")? {
            0 => RffKind::Rbf,
            1 => RffKind::Poly3,
            other => return Err(Error::Store(format!("unknown rff kind {other}"))),
        };
        let gamma = pf.scalar_f64("rff/gamma")?;
        if gamma <= 0.0 {
            return Err(Error::Store("rff gamma must be positive".into()));
        }
        let n_proj = pf.scalar_u64("rff/proj_count")? as usize;
        let expected = match kind {
            RffKind::Rbf => 1,
            RffKind::Poly3 => 3,
        };
        if n_proj != expected {
            return Err(Error::Store(format!(
                "rff kind needs {expected} projections, file has {n_proj}"
            )));
        }
        let mut proj = Vec::with_capacity(n_proj);
        for i in 0..n_proj {
            let m = read_matrix(pf, &format!("rff/proj{i}"))?;
            if m.cols() != input_dim {
                return Err(Error::Store(format!(
                    "rff projection {i} expects {} inputs, scaler has {input_dim}",
                    m.cols()
                )));
            }
            proj.push(m);
        }
        let n_features = proj[0].rows();
        if proj.iter().any(|p| p.rows() != n_features) {
            return Err(Error::Store("rff projections disagree on feature count".into()));
        }
        let offset = pf.f64s("rff/offset")?.to_vec();
        let need_offsets = match kind {
            RffKind::Rbf => n_features,
            RffKind::Poly3 => 0,
        };
        if offset.len() != need_offsets {
            return Err(Error::Store(format!(
                "rff offset length {} vs {need_offsets} expected",
                offset.len()
            )));
        }
        let feature_scaler = read_scaler(pf, "rff/feature_scaler")?;
        if feature_scaler.dim() != n_features {
            return Err(Error::Store("rff feature scaler dimension mismatch".into()));
        }
        let linear = read_linear(pf, "rff/linear", n_features)?;
        Ok(RffModel {
            kind,
            proj,
            offset,
            gamma,
            feature_scaler,
            linear,
        })
    }

    pub fn encode(clf: &TrainedClassifier) -> ParamFile {
        let mut pf = ParamFile::new(KIND_CLASSIFIER);
        pf.push_u64("classifier/family", vec![clf.family.code()]);
        pf.push_u64("classifier/seed", vec![clf.seed]);
        push_scaler(&mut pf, "scaler", &clf.scaler);
        match &clf.model {
            Model::Linear(m) => push_linear(&mut pf, "linear", m),
            Model::Rff(m) => push_rff(&mut pf, m),
            Model::Tree(t) => push_trees(&mut pf, "tree", std::slice::from_ref(t)),
            Model::Forest(f) => push_trees(&mut pf, "forest", &f.trees),
            Model::Gboost(g) => {
                pf.push_f64("gboost/init", vec![g.init]);
                pf.push_f64("gboost/learning_rate", vec![g.learning_rate]);
                push_trees(&mut pf, "gboost/trees", &g.trees);
            }
            Model::Mlp(m) => push_net(&mut pf, "mlp", &m.net),
        }
        pf
    }

    pub fn decode(pf: &ParamFile) -> Result<TrainedClassifier> {
        if pf.kind() != KIND_CLASSIFIER {
            return Err(Error::Store(format!(
                "expected a classifier file (kind {KIND_CLASSIFIER}), got kind {}",
                pf.kind()
            )));
        }
        let family = Family::from_code(pf.scalar_u64("classifier/family")?)?;
        let seed = pf.scalar_u64("classifier/seed")?;
        let scaler = read_scaler(pf, "scaler")?;
        let dim = scaler.dim();
        let model = match family {
            Family::Logistic | Family::LinearSvm => {
                Model::Linear(read_linear(pf, "linear", dim)?)
            }
            Family::RffRbfSvm | Family::RffPolySvm => Model::Rff(read_rff(pf, dim)?),
            Family::Tree | Family::TreeDepth5 => {
                let mut trees = read_trees(pf, "tree", dim)?;
                if trees.len() != 1 {
                    return Err(Error::Store(format!(
                        "tree classifier holds {} trees",
                        trees.len()
                    )));
                }
                Model::Tree(trees.remove(0))
            }
            Family::Forest50 => Model::Forest(Forest {
                trees: read_trees(pf, "forest", dim)?,
            }),
            Family::Gboost100 => Model::Gboost(Gboost {
                init: pf.scalar_f64("gboost/init")?,
                learning_rate: pf.scalar_f64("gboost/learning_rate")?,
                trees: read_trees(pf, "gboost/trees", dim)?,
            }),
            Family::Mlp16x8x4 | Family::Mlp16x4 => {
                let net = read_net(pf, "mlp")?;
                if net.input_dim() != dim || net.output_dim() != 1 {
                    return Err(Error::Store("mlp dimensions mismatch scaler".into()));
                }
                Model::Mlp(MlpModel { net })
            }
        };
        Ok(TrainedClassifier {
            family,
            seed,
            scaler,
            model,
        })
    }
}

pub fn encode_classifier(clf: &TrainedClassifier) -> ParamFile {
    classifier::encode(clf)
}

pub fn decode_classifier(pf: &ParamFile) -> Result<TrainedClassifier> {
    classifier::decode(pf)
}

pub use classifier::{push_scaler, read_scaler};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq, Default)]
pub struct Manifest {
    pub format_version: u32,
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io_at(path))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            msg: e.to_string(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(Error::io_at(path))
    }
}

fn check_path_component(name: &str, what: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !name.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(Error::Store(format!(
            "{what} `{name}` is not a safe path component"
        )))
    }
}

/// Classifier files under `<root>/models/<dataset>/`, one per model, with a
/// `manifest.json` of content fingerprints per dataset directory.
#[derive(Debug, Clone)]
pub struct ClassifierStore {
    root: PathBuf,
}

impl ClassifierStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ClassifierStore { root: root.into() }
    }

    pub fn dataset_dir(&self, dataset_id: &str) -> PathBuf {
        self.root.join("models").join(dataset_id)
    }

    pub fn save(&self, dataset_id: &str, clf: &TrainedClassifier) -> Result<PathBuf> {
        check_path_component(dataset_id, "dataset id")?;
        let pf = encode_classifier(clf);
        let dir = self.dataset_dir(dataset_id);
        let path = dir.join(clf.id());
        pf.write(&path)?;
        let manifest_path = dir.join("manifest.json");
        let mut manifest = if manifest_path.exists() {
            Manifest::read(&manifest_path)?
        } else {
            Manifest {
                format_version: FORMAT_VERSION,
                files: BTreeMap::new(),
            }
        };
        manifest.files.insert(clf.id(), pf.fingerprint());
        manifest.write(&manifest_path)?;
        Ok(path)
    }

    pub fn load(&self, dataset_id: &str, family: Family, seed: u64) -> Result<TrainedClassifier> {
        check_path_component(dataset_id, "dataset id")?;
        let path = self
            .dataset_dir(dataset_id)
            .join(format!("{}_{}", family.name(), seed));
        let pf = ParamFile::read(&path)?;
        decode_classifier(&pf)
    }
}
