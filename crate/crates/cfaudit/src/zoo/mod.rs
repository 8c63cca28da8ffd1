//! A pool of binary classifiers with deliberately varied inductive biases.
//!
//! Ten families: regularized linear models (log loss and hinge), hinge
//! models on random Fourier and random polynomial feature maps, CART trees
//! (unbounded and depth-capped), a bootstrap forest, gradient-boosted
//! stumps-of-depth-3, and two small relu networks. Every family consumes
//! features only; the protected attribute is never an input. Training is a
//! pure function of (family, seed, dataset): the RNG stream is keyed on all
//! three, so pools are reproducible row by row.

pub(crate) mod linear;
pub(crate) mod mlp;
pub(crate) mod tree;

pub use linear::{RffKind, Scaler};

use crate::scm::LabeledDataset;
use crate::numerics::net::stable_sigmoid;
use crate::numerics::RngStream;
use crate::{Error, Result};

/// Anything that scores feature vectors with a positive-class probability.
pub trait Predictor {
    fn predict_proba(&self, x: &[f64]) -> Result<f64>;

    /// Stable identifier used to label reports.
    fn id(&self) -> String {
        "anonymous".into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Logistic,
    LinearSvm,
    RffRbfSvm,
    RffPolySvm,
    Tree,
    TreeDepth5,
    Forest50,
    Gboost100,
    Mlp16x8x4,
    Mlp16x4,
}

impl Family {
    pub const ALL: [Family; 10] = [
        Family::Logistic,
        Family::LinearSvm,
        Family::RffRbfSvm,
        Family::RffPolySvm,
        Family::Tree,
        Family::TreeDepth5,
        Family::Forest50,
        Family::Gboost100,
        Family::Mlp16x8x4,
        Family::Mlp16x4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Logistic => "logistic",
            Family::LinearSvm => "linear-svm",
            Family::RffRbfSvm => "rff-rbf-svm",
            Family::RffPolySvm => "rff-poly-svm",
            Family::Tree => "tree",
            Family::TreeDepth5 => "tree-depth5",
            Family::Forest50 => "forest50",
            Family::Gboost100 => "gboost100",
            Family::Mlp16x8x4 => "mlp-16-8-4",
            Family::Mlp16x4 => "mlp-16-4",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Family::ALL
            .iter()
            .copied()
            .find(|f| f.name() == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown classifier family `{name}`")))
    }

    /// Position in `ALL`; the stable code used by the on-disk format.
    pub fn code(self) -> u64 {
        Family::ALL.iter().position(|&f| f == self).expect("family in ALL") as u64
    }

    pub fn from_code(code: u64) -> Result<Self> {
        usize::try_from(code)
            .ok()
            .and_then(|i| Family::ALL.get(i).copied())
            .ok_or_else(|| Error::Store(format!("unknown classifier family code {code}")))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ClassifierSpec {
    pub family: Family,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub(crate) enum Model {
    Linear(linear::LinearModel),
    Rff(linear::RffModel),
    Tree(tree::Tree),
    Forest(tree::Forest),
    Gboost(tree::Gboost),
    Mlp(mlp::MlpModel),
}

#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    pub family: Family,
    pub seed: u64,
    pub(crate) scaler: Scaler,
    pub(crate) model: Model,
}

impl Predictor for TrainedClassifier {
    fn id(&self) -> String {
        format!("{}_{}", self.family.name(), self.seed)
    }

    fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.scaler.dim() {
            return Err(Error::Shape {
                context: "TrainedClassifier::predict_proba",
                expected: self.scaler.dim(),
                got: x.len(),
            });
        }
        let z = self.scaler.transform(x);
        let p = match &self.model {
            Model::Linear(m) => stable_sigmoid(m.margin(&z)),
            Model::Rff(m) => m.predict_proba(&z),
            Model::Tree(t) => t.predict(&z),
            Model::Forest(f) => f.predict_proba(&z),
            Model::Gboost(g) => g.predict_proba(&z),
            Model::Mlp(m) => m.predict_proba(&z)?,
        };
        debug_assert!((0.0..=1.0).contains(&p), "probability {p}");
        Ok(p.clamp(0.0, 1.0))
    }
}

/// Train one classifier. Fails on single-class labels (every family here
/// needs both classes) and on empty data.
pub fn train(spec: &ClassifierSpec, data: &LabeledDataset) -> Result<TrainedClassifier> {
    let pos = data.labels().iter().filter(|&&y| y == 1).count();
    let neg = data.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InsufficientData(format!(
            "labels are single-class ({pos} positive, {neg} negative); nothing to separate"
        )));
    }

    let scaler = Scaler::fit(data);
    let xs: Vec<Vec<f64>> = (0..data.len())
        .map(|i| scaler.transform(data.features(i)))
        .collect();
    let ys: Vec<u8> = data.labels().to_vec();
    let mut rng = RngStream::new(
        spec.seed,
        &format!("zoo/{}/{}", spec.family.name(), &data.fingerprint()[..16]),
    );

    let n = data.len();
    let k = data.feature_dim();
    let model = match spec.family {
        Family::Logistic => Model::Linear(linear::train_linear_sgd(
            &xs,
            &ys,
            linear::LinearLoss::Log,
            200,
            1.0 / n as f64,
            &mut rng,
        )),
        Family::LinearSvm => Model::Linear(linear::train_linear_sgd(
            &xs,
            &ys,
            linear::LinearLoss::Hinge,
            200,
            1.0 / n as f64,
            &mut rng,
        )),
        Family::RffRbfSvm => Model::Rff(linear::train_rff_svm(
            &xs,
            &ys,
            RffKind::Rbf,
            512,
            1.0 / k as f64,
            &mut rng,
        )),
        Family::RffPolySvm => Model::Rff(linear::train_rff_svm(
            &xs,
            &ys,
            RffKind::Poly3,
            512,
            1.0 / k as f64,
            &mut rng,
        )),
        Family::Tree => Model::Tree(tree::train_classification_tree(&xs, &ys, None)),
        Family::TreeDepth5 => Model::Tree(tree::train_classification_tree(&xs, &ys, Some(5))),
        Family::Forest50 => Model::Forest(tree::train_forest(&xs, &ys, 50, &mut rng)),
        Family::Gboost100 => Model::Gboost(tree::train_gboost(&xs, &ys, 100, 0.1, 3)),
        Family::Mlp16x8x4 => Model::Mlp(mlp::train_mlp(&xs, &ys, &[16, 8, 4], &mut rng)?),
        Family::Mlp16x4 => Model::Mlp(mlp::train_mlp(&xs, &ys, &[16, 4], &mut rng)?),
    };

    Ok(TrainedClassifier {
        family: spec.family,
        seed: spec.seed,
        scaler,
        model,
    })
}

/// Train `families x seeds` classifiers on the same data, family-major.
pub fn build_pool(
    data: &LabeledDataset,
    families: &[Family],
    seeds: &[u64],
) -> Result<Vec<TrainedClassifier>> {
    let mut pool = Vec::with_capacity(families.len() * seeds.len());
    for &family in families {
        for &seed in seeds {
            pool.push(train(&ClassifierSpec { family, seed }, data)?);
        }
    }
    Ok(pool)
}

/// Accuracy at the 0.5 threshold.
pub fn accuracy(f: &dyn Predictor, data: &LabeledDataset) -> Result<f64> {
    let mut hits = 0usize;
    for i in 0..data.len() {
        let p = f.predict_proba(data.features(i))?;
        let pred = u8::from(p >= 0.5);
        if pred == data.label(i) {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Tiny fixed predictors for tests and diagnostics.
pub mod testing {
    use super::Predictor;
    use crate::Result;

    /// Always predicts the same probability.
    #[derive(Debug, Clone, Copy)]
    pub struct ConstantPredictor(pub f64);

    impl Predictor for ConstantPredictor {
        fn id(&self) -> String {
            format!("constant_{}", self.0)
        }

        fn predict_proba(&self, _x: &[f64]) -> Result<f64> {
            Ok(self.0)
        }
    }

    /// Fires when one feature exceeds a threshold.
    #[derive(Debug, Clone, Copy)]
    pub struct ThresholdPredictor {
        pub feature: usize,
        pub threshold: f64,
    }

    impl Predictor for ThresholdPredictor {
        fn id(&self) -> String {
            format!("threshold_x{}_{}", self.feature, self.threshold)
        }

        fn predict_proba(&self, x: &[f64]) -> Result<f64> {
            Ok(if x[self.feature] > self.threshold {
                1.0
            } else {
                0.0
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::{ScmSpec, Variant};

    fn train_test() -> (LabeledDataset, LabeledDataset) {
        let spec = ScmSpec::generate(Variant::Linear, 2, 6, 0.01, 0.3, false, 50).unwrap();
        (
            spec.sample_dataset(600, 1, "train").unwrap(),
            spec.sample_dataset(300, 1, "test").unwrap(),
        )
    }

    #[test]
    fn every_family_trains_and_beats_the_base_rate_on_train() {
        let (train_ds, _) = train_test();
        let base = {
            let pos = train_ds.labels().iter().filter(|&&y| y == 1).count();
            let p = pos as f64 / train_ds.len() as f64;
            p.max(1.0 - p)
        };
        for family in Family::ALL {
            let clf = train(&ClassifierSpec { family, seed: 0 }, &train_ds).unwrap();
            let acc = accuracy(&clf, &train_ds).unwrap();
            assert!(
                acc >= base - 0.02,
                "{} train accuracy {acc} vs base rate {base}",
                family.name()
            );
        }
    }

    #[test]
    fn training_is_deterministic_in_spec_and_data() {
        let (train_ds, test_ds) = train_test();
        let spec = ClassifierSpec {
            family: Family::Mlp16x4,
            seed: 3,
        };
        let a = train(&spec, &train_ds).unwrap();
        let b = train(&spec, &train_ds).unwrap();
        for i in 0..test_ds.len() {
            let x = test_ds.features(i);
            assert_eq!(
                a.predict_proba(x).unwrap(),
                b.predict_proba(x).unwrap(),
                "row {i}"
            );
        }
    }

    #[test]
    fn seeds_change_the_model() {
        let (train_ds, test_ds) = train_test();
        let a = train(
            &ClassifierSpec { family: Family::Forest50, seed: 0 },
            &train_ds,
        )
        .unwrap();
        let b = train(
            &ClassifierSpec { family: Family::Forest50, seed: 1 },
            &train_ds,
        )
        .unwrap();
        let differs = (0..test_ds.len()).any(|i| {
            a.predict_proba(test_ds.features(i)).unwrap()
                != b.predict_proba(test_ds.features(i)).unwrap()
        });
        assert!(differs);
    }

    #[test]
    fn single_class_labels_are_refused() {
        let spec = ScmSpec::generate(Variant::Linear, 2, 3, 0.01, 0.3, false, 5).unwrap();
        let ds = spec.sample_dataset(50, 2, "train").unwrap();
        let forced = LabeledDataset::new(
            ds.feature_dim(),
            (0..ds.len()).map(|i| ds.features(i).to_vec()).collect(),
            ds.attrs().to_vec(),
            vec![1; ds.len()],
        )
        .unwrap();
        let err = train(
            &ClassifierSpec { family: Family::Logistic, seed: 0 },
            &forced,
        )
        .unwrap_err();
        assert!(err.to_string().contains("single-class"), "{err}");
    }

    #[test]
    fn probabilities_are_in_range_for_all_families() {
        let (train_ds, test_ds) = train_test();
        for family in Family::ALL {
            let clf = train(&ClassifierSpec { family, seed: 1 }, &train_ds).unwrap();
            for i in 0..50 {
                let p = clf.predict_proba(test_ds.features(i)).unwrap();
                assert!((0.0..=1.0).contains(&p), "{} gave {p}", family.name());
            }
        }
    }

    /// The pool covers a real spread of behaviors: across families the
    /// test accuracies are not all within a couple of points.
    #[test]
    fn pool_has_accuracy_spread() {
        let (train_ds, test_ds) = train_test();
        let pool = build_pool(&train_ds, &Family::ALL, &[0]).unwrap();
        let accs: Vec<f64> = pool
            .iter()
            .map(|c| accuracy(c, &test_ds).unwrap())
            .collect();
        let max = accs.iter().cloned().fold(f64::MIN, f64::max);
        let min = accs.iter().cloned().fold(f64::MAX, f64::min);
        assert!(
            max - min >= 0.05,
            "spread {} (accuracies {accs:?})",
            max - min
        );
    }

    #[test]
    fn wrong_input_dimension_is_a_shape_error() {
        let (train_ds, _) = train_test();
        let clf = train(
            &ClassifierSpec { family: Family::Logistic, seed: 0 },
            &train_ds,
        )
        .unwrap();
        assert!(clf.predict_proba(&[0.0]).is_err());
    }
}
