//! Small feed-forward classifiers trained on the logistic loss.

use crate::numerics::net::stable_sigmoid;
use crate::numerics::{Activation, AdamConfig, DenseNet, NetGrads, OptimState, RngStream};
use crate::Result;

#[derive(Debug, Clone)]
pub struct MlpModel {
    pub(crate) net: DenseNet,
}

impl MlpModel {
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        let out = self.net.forward(x)?;
        Ok(stable_sigmoid(out[0]))
    }
}

/// ReLU stack ending in a single linear logit, trained with Adam on mean
/// logistic loss. Stops early once the epoch loss plateaus.
pub fn train_mlp(
    xs: &[Vec<f64>],
    ys: &[u8],
    hidden: &[usize],
    rng: &mut RngStream,
) -> Result<MlpModel> {
    let n = xs.len();
    let k = xs[0].len();
    let mut dims = vec![k];
    dims.extend_from_slice(hidden);
    dims.push(1);
    let mut net = DenseNet::relu_stack(&dims, Activation::Identity, rng)?;

    let cfg = AdamConfig {
        lr: 1e-3,
        weight_decay: 1e-4,
        ..AdamConfig::default()
    };
    let mut opt = OptimState::new(net.param_count());
    let mut grads = NetGrads::zeros_like(&net);
    let mut params = Vec::with_capacity(net.param_count());
    let mut gflat = Vec::with_capacity(net.param_count());
    let mut trace = Default::default();

    let batch = n.min(64);
    let mut best = f64::INFINITY;
    let mut stale = 0usize;
    for _epoch in 0..500 {
        let order = rng.permutation(n);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            grads.reset();
            let mut loss = 0.0;
            for &i in chunk {
                net.forward_trace(&xs[i], &mut trace)?;
                let logit = trace.output()[0];
                let p = stable_sigmoid(logit);
                let y = ys[i] as f64;
                loss += if ys[i] == 1 {
                    -(p.max(1e-300)).ln()
                } else {
                    -((1.0 - p).max(1e-300)).ln()
                };
                net.backward(&trace, &[p - y], &mut grads);
            }
            grads.scale(1.0 / chunk.len() as f64);
            epoch_loss += loss;

            params.clear();
            net.push_params(&mut params);
            gflat.clear();
            DenseNet::push_grads(&grads, &mut gflat);
            opt.step(&cfg, "mlp", &mut params, &mut gflat)?;
            net.load_params(&params)?;
        }
        epoch_loss /= n as f64;
        if epoch_loss < best - 1e-4 {
            best = epoch_loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= 10 {
                break;
            }
        }
    }
    Ok(MlpModel { net })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learns_xor() {
        let mut rng = RngStream::new(11, "mlp-xor");
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..400 {
            let a = if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
            let b = if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
            xs.push(vec![
                a + 0.2 * rng.standard_normal(),
                b + 0.2 * rng.standard_normal(),
            ]);
            ys.push(u8::from(a * b > 0.0));
        }
        let mut train_rng = RngStream::new(12, "mlp-train");
        let model = train_mlp(&xs, &ys, &[16, 8], &mut train_rng).unwrap();
        let hits = xs
            .iter()
            .zip(&ys)
            .filter(|(x, &y)| u8::from(model.predict_proba(x).unwrap() >= 0.5) == y)
            .count();
        assert!(
            hits as f64 / xs.len() as f64 > 0.95,
            "accuracy {}",
            hits as f64 / xs.len() as f64
        );
        // Clean corners of the XOR square score on the correct side.
        assert!(model.predict_proba(&[1.0, 1.0]).unwrap() > 0.5);
        assert!(model.predict_proba(&[-1.0, -1.0]).unwrap() > 0.5);
        assert!(model.predict_proba(&[1.0, -1.0]).unwrap() < 0.5);
        assert!(model.predict_proba(&[-1.0, 1.0]).unwrap() < 0.5);
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = RngStream::new(21, "mlp-data");
        let xs: Vec<Vec<f64>> = (0..100)
            .map(|_| vec![rng.standard_normal(), rng.standard_normal(), rng.standard_normal()])
            .collect();
        let ys: Vec<u8> = xs.iter().map(|x| u8::from(x[0] + x[1] > 0.0)).collect();
        let mut r1 = RngStream::new(5, "t");
        let mut r2 = RngStream::new(5, "t");
        let m1 = train_mlp(&xs, &ys, &[8], &mut r1).unwrap();
        let m2 = train_mlp(&xs, &ys, &[8], &mut r2).unwrap();
        for x in xs.iter().take(10) {
            assert_eq!(m1.predict_proba(x).unwrap(), m2.predict_proba(x).unwrap());
        }
    }
}
