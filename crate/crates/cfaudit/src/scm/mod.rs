//! Synthetic structural causal models with a fully known interventional
//! distribution.
//!
//! The graph is a chain: a root block `Z_n ~ N(0, I_k)` feeds `n` linear
//! layers whose matrix depends on the binary attribute `a`,
//!
//! ```text
//! Z_i = M_i Z_{i+1}        + xi_i   (a = 1)
//! Z_i = N_i Z_{i+1}        + xi_i   (a = 0)
//! X   = M_X Z_0 + r + eps_X
//! Y   ~ Bernoulli(sigmoid(f_Y(Z_n)))
//! ```
//!
//! so the label depends on the attribute only through the root block, and
//! `do(A = a)` is evaluable exactly by swapping the branch matrices. Matrix
//! entries are Uniform[-10, 10]; `f_Y` comes in six variants with frozen
//! parameter distributions. Specs are persisted as seed + hyperparameters
//! and the matrices are regenerated, never stored.

mod dataset;
pub mod eca;

pub use dataset::LabeledDataset;

use crate::numerics::net::stable_sigmoid;
use crate::numerics::{linalg, Matrix, RngStream};
use crate::{Error, Result};

pub const DEFAULT_CHAIN_LEN: usize = 3;
pub const DEFAULT_FEATURE_DIM: usize = 32;
pub const DEFAULT_NOISE_SCALE: f64 = 0.01;
pub const DEFAULT_ATTR_PRIOR: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Linear,
    Quadratic,
    Exponential,
    Interactive,
    LogExponent,
    Sin,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Linear,
        Variant::Quadratic,
        Variant::Exponential,
        Variant::Interactive,
        Variant::LogExponent,
        Variant::Sin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Linear => "linear",
            Variant::Quadratic => "quadratic",
            Variant::Exponential => "exponential",
            Variant::Interactive => "interactive",
            Variant::LogExponent => "log-exponent",
            Variant::Sin => "sin",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Variant::ALL
            .iter()
            .copied()
            .find(|v| v.name() == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown outcome variant `{name}`")))
    }
}

/// Parameters of the outcome score `f_Y`. `omega` has length `k` for the
/// elementwise variants and `k * k` (row-major, zero diagonal) for the
/// pairwise-interaction variant.
#[derive(Debug, Clone)]
pub struct FyParams {
    pub variant: Variant,
    pub omega: Vec<f64>,
    pub bias: f64,
}

impl FyParams {
    /// Draw parameters from the variant's frozen distributions.
    pub fn sample(variant: Variant, k: usize, rng: &mut RngStream) -> Self {
        let (omega, bias) = match variant {
            Variant::Linear => (
                (0..k).map(|_| rng.standard_normal()).collect(),
                rng.standard_normal(),
            ),
            Variant::Quadratic => (
                (0..k).map(|_| 2.0 * rng.standard_normal()).collect(),
                20.0 + rng.standard_normal(),
            ),
            Variant::Exponential => (
                (0..k).map(|_| rng.standard_normal()).collect(),
                10.0 + rng.standard_normal(),
            ),
            Variant::Interactive => {
                let mut omega = vec![0.0; k * k];
                for i in 0..k {
                    for j in 0..k {
                        if i != j {
                            omega[i * k + j] = rng.standard_normal();
                        }
                    }
                }
                (omega, rng.standard_normal())
            }
            Variant::LogExponent => (
                (0..k).map(|_| rng.standard_normal()).collect(),
                5.0 + rng.standard_normal(),
            ),
            Variant::Sin => (
                (0..k).map(|_| rng.standard_normal()).collect(),
                2.0 + rng.standard_normal(),
            ),
        };
        FyParams {
            variant,
            omega,
            bias,
        }
    }

    pub fn eval(&self, z: &[f64]) -> Result<f64> {
        let k = z.len();
        let val = match self.variant {
            Variant::Linear => {
                self.check_len(k)?;
                linalg::dot(&self.omega, z) + self.bias
            }
            Variant::Quadratic => {
                self.check_len(k)?;
                self.omega
                    .iter()
                    .zip(z)
                    .map(|(w, zi)| w * zi * zi)
                    .sum::<f64>()
                    + self.bias
            }
            Variant::Exponential => {
                self.check_len(k)?;
                self.omega
                    .iter()
                    .zip(z)
                    .map(|(w, zi)| w * zi.exp())
                    .sum::<f64>()
                    + self.bias
            }
            Variant::Interactive => {
                self.check_len(k * k)?;
                let mut acc = 0.0;
                for i in 0..k {
                    for j in 0..k {
                        if i != j {
                            acc += self.omega[i * k + j] * z[i] * z[j];
                        }
                    }
                }
                acc + self.bias
            }
            Variant::LogExponent => {
                self.check_len(k)?;
                let arg = linalg::dot(&self.omega, z).exp() + self.bias;
                if !(arg > 0.0) || !arg.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "outcome score ({}): log argument {arg}",
                        self.variant.name()
                    )));
                }
                arg.ln()
            }
            Variant::Sin => {
                self.check_len(k)?;
                self.omega
                    .iter()
                    .zip(z)
                    .map(|(w, zi)| w * zi.sin())
                    .sum::<f64>()
                    + self.bias
            }
        };
        if !val.is_finite() {
            return Err(Error::NonFinite(format!(
                "outcome score ({})",
                self.variant.name()
            )));
        }
        Ok(val)
    }

    fn check_len(&self, expected: usize) -> Result<()> {
        if self.omega.len() != expected {
            return Err(Error::Shape {
                context: "FyParams::eval",
                expected,
                got: self.omega.len(),
            });
        }
        Ok(())
    }
}

/// All exogenous randomness for one individual: the root block, one noise
/// vector per chain level, the feature noise, and the attribute's uniform
/// draw. Holding these fixed while switching `a` evaluates a counterfactual.
#[derive(Debug, Clone)]
pub struct ExogenousUnit {
    pub z_root: Vec<f64>,
    pub xi: Vec<Vec<f64>>,
    pub eps_x: Vec<f64>,
    pub u_attr: f64,
}

#[derive(Debug, Clone)]
pub struct Propagated {
    pub x: Vec<f64>,
    /// P(Y = 1 | this unit); depends only on the root block, never on `a`.
    pub p_y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Provenance {
    Seeded,
    Explicit,
}

#[derive(Debug, Clone)]
pub struct ScmSpec {
    variant: Variant,
    chain_len: usize,
    feature_dim: usize,
    noise_scale: f64,
    attr_prior: f64,
    /// When set, the a = 0 branch reuses the a = 1 matrices, removing every
    /// pathway from the attribute into the features.
    shared_branches: bool,
    seed: u64,
    provenance: Provenance,
    mats_a1: Vec<Matrix>,
    mats_a0: Vec<Matrix>,
    m_x: Matrix,
    r: Vec<f64>,
    fy: FyParams,
}

impl ScmSpec {
    /// Regenerate the full specification from a seed. Deterministic: the
    /// same arguments produce identical matrices and outcome parameters.
    pub fn generate(
        variant: Variant,
        chain_len: usize,
        feature_dim: usize,
        noise_scale: f64,
        attr_prior: f64,
        shared_branches: bool,
        seed: u64,
    ) -> Result<Self> {
        if chain_len < 1 {
            return Err(Error::InvalidArgument("chain_len must be >= 1".into()));
        }
        if feature_dim < 1 {
            return Err(Error::InvalidArgument("feature_dim must be >= 1".into()));
        }
        if !(noise_scale >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise_scale must be >= 0, got {noise_scale}"
            )));
        }
        if !(attr_prior > 0.0 && attr_prior < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "attr_prior must be in (0, 1), got {attr_prior}"
            )));
        }
        let k = feature_dim;
        let mut mat_rng = RngStream::new(seed, "scm/matrices");
        let draw = |rng: &mut RngStream| Matrix::from_fn(k, k, |_, _| rng.uniform_in(-10.0, 10.0));
        let mats_a1: Vec<Matrix> = (0..chain_len).map(|_| draw(&mut mat_rng)).collect();
        let drawn_a0: Vec<Matrix> = (0..chain_len).map(|_| draw(&mut mat_rng)).collect();
        let m_x = draw(&mut mat_rng);
        let mats_a0 = if shared_branches {
            mats_a1.clone()
        } else {
            drawn_a0
        };
        let mut bias_rng = RngStream::new(seed, "scm/bias");
        let r = bias_rng.normal_vec(k);
        let mut fy_rng = RngStream::new(seed, "scm/fy");
        let fy = FyParams::sample(variant, k, &mut fy_rng);
        Ok(ScmSpec {
            variant,
            chain_len,
            feature_dim,
            noise_scale,
            attr_prior,
            shared_branches,
            seed,
            provenance: Provenance::Seeded,
            mats_a1,
            mats_a0,
            m_x,
            r,
            fy,
        })
    }

    /// Build a spec from explicit matrices, for planted constructions in
    /// tests and diagnostics. Explicit specs cannot be written to disk
    /// because spec files only persist seed-derived models.
    #[allow(clippy::too_many_arguments)]
    pub fn explicit(
        fy: FyParams,
        mats_a1: Vec<Matrix>,
        mats_a0: Vec<Matrix>,
        m_x: Matrix,
        r: Vec<f64>,
        noise_scale: f64,
        attr_prior: f64,
    ) -> Result<Self> {
        if mats_a1.is_empty() || mats_a1.len() != mats_a0.len() {
            return Err(Error::InvalidArgument(
                "explicit spec needs matching, nonempty branch matrix lists".into(),
            ));
        }
        let k = m_x.cols();
        for m in mats_a1.iter().chain(&mats_a0) {
            if m.rows() != k || m.cols() != k {
                return Err(Error::Shape {
                    context: "ScmSpec::explicit branch matrix",
                    expected: k,
                    got: m.rows(),
                });
            }
        }
        if m_x.rows() != k || r.len() != k {
            return Err(Error::Shape {
                context: "ScmSpec::explicit feature map",
                expected: k,
                got: r.len(),
            });
        }
        if !(attr_prior > 0.0 && attr_prior < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "attr_prior must be in (0, 1), got {attr_prior}"
            )));
        }
        Ok(ScmSpec {
            variant: fy.variant,
            chain_len: mats_a1.len(),
            feature_dim: k,
            noise_scale,
            attr_prior,
            shared_branches: false,
            seed: 0,
            provenance: Provenance::Explicit,
            mats_a1,
            mats_a0,
            m_x,
            r,
            fy,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn chain_len(&self) -> usize {
        self.chain_len
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    pub fn attr_prior(&self) -> f64 {
        self.attr_prior
    }

    pub fn shared_branches(&self) -> bool {
        self.shared_branches
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fy(&self) -> &FyParams {
        &self.fy
    }

    /// Dataset identity string: hyperparameters + seed, stable across runs.
    pub fn id(&self) -> String {
        format!(
            "{}-k{}-n{}-s{}",
            self.variant.name(),
            self.feature_dim,
            self.chain_len,
            self.seed
        )
    }

    pub fn sample_unit(&self, rng: &mut RngStream) -> ExogenousUnit {
        let k = self.feature_dim;
        ExogenousUnit {
            z_root: rng.normal_vec(k),
            xi: (0..self.chain_len)
                .map(|_| {
                    let mut v = rng.normal_vec(k);
                    linalg::scale(&mut v, self.noise_scale);
                    v
                })
                .collect(),
            eps_x: {
                let mut v = rng.normal_vec(k);
                linalg::scale(&mut v, self.noise_scale);
                v
            },
            u_attr: rng.uniform01(),
        }
    }

    /// Deterministically push one unit through the graph under `do(A = a)`.
    pub fn propagate(&self, unit: &ExogenousUnit, a: u8) -> Result<Propagated> {
        if a > 1 {
            return Err(Error::InvalidArgument(format!(
                "attribute must be 0 or 1, got {a}"
            )));
        }
        let k = self.feature_dim;
        if unit.z_root.len() != k {
            return Err(Error::Shape {
                context: "propagate z_root",
                expected: k,
                got: unit.z_root.len(),
            });
        }
        if unit.xi.len() != self.chain_len {
            return Err(Error::Shape {
                context: "propagate xi levels",
                expected: self.chain_len,
                got: unit.xi.len(),
            });
        }
        let mats = if a == 1 { &self.mats_a1 } else { &self.mats_a0 };
        let mut z = unit.z_root.clone();
        let mut next = vec![0.0; k];
        for i in (0..self.chain_len).rev() {
            mats[i].matvec(&z, &mut next);
            for (n, xi) in next.iter_mut().zip(&unit.xi[i]) {
                *n += xi;
            }
            std::mem::swap(&mut z, &mut next);
        }
        let mut x = vec![0.0; k];
        self.m_x.matvec(&z, &mut x);
        for i in 0..k {
            x[i] += self.r[i] + unit.eps_x[i];
        }
        if !linalg::all_finite(&x) {
            return Err(Error::NonFinite("propagated features".into()));
        }
        let p_y = stable_sigmoid(self.fy.eval(&unit.z_root)?);
        Ok(Propagated { x, p_y })
    }

    /// Sample a labelled dataset of `rows` individuals. The attribute is
    /// Bernoulli(attr_prior) via the unit's uniform draw; labels are drawn
    /// from the unit's outcome probability. Byte-deterministic in
    /// (spec, seed, split).
    pub fn sample_dataset(&self, rows: usize, seed: u64, split: &str) -> Result<LabeledDataset> {
        if rows < 1 {
            return Err(Error::InvalidArgument("dataset needs at least one row".into()));
        }
        let mut rng = RngStream::new(seed, &format!("scm-data/{split}"));
        let mut features = Vec::with_capacity(rows);
        let mut attrs = Vec::with_capacity(rows);
        let mut labels = Vec::with_capacity(rows);
        for _ in 0..rows {
            let unit = self.sample_unit(&mut rng);
            let a = u8::from(unit.u_attr < self.attr_prior);
            let prop = self.propagate(&unit, a)?;
            let y = u8::from(rng.uniform01() < prop.p_y);
            features.push(prop.x);
            attrs.push(a);
            labels.push(y);
        }
        LabeledDataset::new(self.feature_dim, features, attrs, labels)
    }

    /// Serialize to the human-readable spec-file format (TOML). Matrices
    /// are regenerated from the seed on load, never written out.
    pub fn to_spec_file_string(&self) -> Result<String> {
        if self.provenance != Provenance::Seeded {
            return Err(Error::Store(
                "explicit spec has no seed; only seed-derived specs can be saved".into(),
            ));
        }
        Ok(format!(
            "format_version = 1\n\
             variant = {variant:?}\n\
             chain_len = {chain}\n\
             feature_dim = {k}\n\
             noise_scale = {sigma}\n\
             attr_prior = {prior}\n\
             shared_branches = {shared}\n\
             seed = {seed}\n",
            variant = self.variant.name(),
            chain = self.chain_len,
            k = self.feature_dim,
            sigma = self.noise_scale,
            prior = self.attr_prior,
            shared = self.shared_branches,
            seed = self.seed,
        ))
    }

    pub fn from_spec_file_str(text: &str) -> Result<Self> {
        let file: SpecFile = toml_strict(text, "scm spec")?;
        if file.format_version != 1 {
            return Err(Error::Parse {
                path: "scm spec".into(),
                msg: format!("unsupported format_version {}", file.format_version),
            });
        }
        ScmSpec::generate(
            Variant::from_name(&file.variant)?,
            file.chain_len,
            file.feature_dim,
            file.noise_scale,
            file.attr_prior,
            file.shared_branches,
            file.seed,
        )
    }

    pub fn save_spec_file(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_spec_file_string()?).map_err(Error::io_at(path))
    }

    pub fn load_spec_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io_at(path))?;
        Self::from_spec_file_str(&text).map_err(|e| match e {
            Error::Parse { msg, .. } => Error::Parse {
                path: path.display().to_string(),
                msg,
            },
            other => other,
        })
    }
}

#[derive(Debug, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    format_version: u32,
    variant: String,
    chain_len: usize,
    feature_dim: usize,
    noise_scale: f64,
    attr_prior: f64,
    #[serde(default)]
    shared_branches: bool,
    seed: u64,
}

/// Strict TOML deserialization: unknown keys are a hard error, surfaced
/// with the serde message that names the offending key.
pub(crate) fn toml_strict<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Parse {
        path: what.into(),
        msg: e.to_string(),
    })
}
