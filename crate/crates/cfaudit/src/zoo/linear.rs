//! Feature standardization, SGD-trained linear margins, and random feature
//! maps that stand in for kernel machines at fixed cost.

use crate::numerics::net::stable_sigmoid;
use crate::numerics::{linalg, Matrix, RngStream};
use crate::scm::LabeledDataset;

/// Per-feature standardization fit on the training split. Constant features
/// keep a unit scale so transforms never divide by zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub(crate) mean: Vec<f64>,
    pub(crate) std: Vec<f64>,
}

impl Scaler {
    pub fn fit(data: &LabeledDataset) -> Self {
        let k = data.feature_dim();
        let n = data.len() as f64;
        let mut mean = vec![0.0; k];
        for i in 0..data.len() {
            linalg::axpy(1.0, data.features(i), &mut mean);
        }
        linalg::scale(&mut mean, 1.0 / n);
        let mut var = vec![0.0; k];
        for i in 0..data.len() {
            for (j, v) in data.features(i).iter().enumerate() {
                let d = v - mean[j];
                var[j] += d * d;
            }
        }
        let std = var
            .iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Scaler { mean, std }
    }

    pub fn identity(dim: usize) -> Self {
        Scaler {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    /// Invert the transform (used by decoders that operate in scaled space).
    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearModel {
    pub fn margin(&self, x: &[f64]) -> f64 {
        linalg::dot(&self.w, x) + self.b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearLoss {
    Log,
    Hinge,
}

/// Minibatch SGD on a regularized linear margin, 200 epochs by default at
/// call sites. `alpha` is the per-sample L2 strength (1 / (C n) for the
/// usual C parameterization). The probability read-out is a unit-slope
/// sigmoid of the margin for both losses.
pub fn train_linear_sgd(
    xs: &[Vec<f64>],
    ys: &[u8],
    loss: LinearLoss,
    epochs: usize,
    alpha: f64,
    rng: &mut RngStream,
) -> LinearModel {
    let n = xs.len();
    let k = xs[0].len();
    let batch = 32.min(n);
    let mut w = vec![0.0; k];
    let mut b = 0.0;
    let mut grad_w = vec![0.0; k];
    let mut step = 0usize;
    for _ in 0..epochs {
        let order = rng.permutation(n);
        for chunk in order.chunks(batch) {
            grad_w.fill(0.0);
            let mut grad_b = 0.0;
            for &i in chunk {
                let m = linalg::dot(&w, &xs[i]) + b;
                let g = match loss {
                    LinearLoss::Log => stable_sigmoid(m) - ys[i] as f64,
                    LinearLoss::Hinge => {
                        let y_pm = 2.0 * ys[i] as f64 - 1.0;
                        if y_pm * m < 1.0 {
                            -y_pm
                        } else {
                            0.0
                        }
                    }
                };
                linalg::axpy(g, &xs[i], &mut grad_w);
                grad_b += g;
            }
            let inv = 1.0 / chunk.len() as f64;
            linalg::scale(&mut grad_w, inv);
            grad_b *= inv;
            linalg::axpy(alpha, &w, &mut grad_w);

            step += 1;
            let lr = 0.1 / (1.0 + 0.002 * step as f64);
            linalg::axpy(-lr, &grad_w, &mut w);
            b -= lr * grad_b;
        }
    }
    LinearModel { w, b }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RffKind {
    /// Random Fourier features for the Gaussian kernel exp(-gamma |x-y|^2).
    Rbf,
    /// Random product features for the cubic kernel (gamma x.y)^3.
    Poly3,
}

impl RffKind {
    pub fn name(self) -> &'static str {
        match self {
            RffKind::Rbf => "rbf",
            RffKind::Poly3 => "poly3",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RffModel {
    pub(crate) kind: RffKind,
    pub(crate) proj: Vec<Matrix>,
    pub(crate) offset: Vec<f64>,
    pub(crate) gamma: f64,
    pub(crate) feature_scaler: Scaler,
    pub(crate) linear: LinearModel,
}

impl RffModel {
    pub(crate) fn map(&self, x: &[f64]) -> Vec<f64> {
        let d = self.proj[0].rows();
        let mut out = vec![0.0; d];
        match self.kind {
            RffKind::Rbf => {
                self.proj[0].matvec(x, &mut out);
                let scale = (2.0 / d as f64).sqrt();
                for (o, b) in out.iter_mut().zip(&self.offset) {
                    *o = scale * (*o + b).cos();
                }
            }
            RffKind::Poly3 => {
                let mut p1 = vec![0.0; d];
                let mut p2 = vec![0.0; d];
                self.proj[0].matvec(x, &mut out);
                self.proj[1].matvec(x, &mut p1);
                self.proj[2].matvec(x, &mut p2);
                let scale = self.gamma.powf(1.5) / (d as f64).sqrt();
                for i in 0..d {
                    out[i] = scale * out[i] * p1[i] * p2[i];
                }
            }
        }
        out
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let z = self.feature_scaler.transform(&self.map(x));
        stable_sigmoid(self.linear.margin(&z))
    }
}

/// Map to `n_features` random features, standardize the mapped space, then
/// train a hinge-loss margin there.
pub fn train_rff_svm(
    xs: &[Vec<f64>],
    ys: &[u8],
    kind: RffKind,
    n_features: usize,
    gamma: f64,
    rng: &mut RngStream,
) -> RffModel {
    let k = xs[0].len();
    let mut map_rng = rng.fork("feature-map");
    let (proj, offset) = match kind {
        RffKind::Rbf => {
            let s = (2.0 * gamma).sqrt();
            let w = Matrix::from_fn(n_features, k, |_, _| s * map_rng.standard_normal());
            let b: Vec<f64> = (0..n_features)
                .map(|_| map_rng.uniform_in(0.0, 2.0 * std::f64::consts::PI))
                .collect();
            (vec![w], b)
        }
        RffKind::Poly3 => {
            let mk =
                |rng: &mut RngStream| Matrix::from_fn(n_features, k, |_, _| rng.standard_normal());
            (
                vec![mk(&mut map_rng), mk(&mut map_rng), mk(&mut map_rng)],
                Vec::new(),
            )
        }
    };

    let mut model = RffModel {
        kind,
        proj,
        offset,
        gamma,
        feature_scaler: Scaler::identity(n_features),
        linear: LinearModel {
            w: vec![0.0; n_features],
            b: 0.0,
        },
    };

    let mapped: Vec<Vec<f64>> = xs.iter().map(|x| model.map(x)).collect();
    // Standardize the mapped features; the polynomial products especially
    // have wildly uneven scales.
    let ds = mapped_dataset(&mapped, ys);
    model.feature_scaler = Scaler::fit(&ds);
    let scaled: Vec<Vec<f64>> = mapped
        .iter()
        .map(|m| model.feature_scaler.transform(m))
        .collect();
    model.linear = train_linear_sgd(
        &scaled,
        ys,
        LinearLoss::Hinge,
        200,
        1.0 / xs.len() as f64,
        &mut rng.fork("sgd"),
    );
    model
}

fn mapped_dataset(mapped: &[Vec<f64>], ys: &[u8]) -> LabeledDataset {
    LabeledDataset::new(
        mapped[0].len(),
        mapped.to_vec(),
        vec![0; ys.len()],
        ys.to_vec(),
    )
    .expect("mapped features are rectangular and finite")
}
