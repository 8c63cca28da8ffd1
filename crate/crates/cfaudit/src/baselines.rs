//! Associational fairness baselines.
//!
//! Demographic parity compares positive-prediction rates between the two
//! attribute groups; equality of opportunity does the same within each true
//! label stratum and Bonferroni-combines the two strata. Both threshold the
//! classifier at 0.5 and use Welch's unequal-variance two-sample t-test, so
//! group sizes are free to differ. These are association tests: they see
//! only the observed joint distribution, with no counterfactual content,
//! which is exactly why the invariance test is compared against them.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::numerics::special::student_t_sf;
use crate::scm::LabeledDataset;
use crate::zoo::Predictor;
use crate::{Error, Result};

/// One two-group rate comparison: all rows for demographic parity, one
/// label stratum for equality of opportunity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StratumStat {
    /// The true label this stratum conditions on; absent for demographic
    /// parity, which pools all rows.
    pub y: Option<u8>,
    /// Positive-prediction rate in attribute group 0 / 1.
    pub rate_a0: f64,
    pub rate_a1: f64,
    pub n_a0: usize,
    pub n_a1: usize,
    pub t_stat: f64,
    pub p_value: f64,
    /// Set when both groups predict with zero variance and identical rates,
    /// leaving the test nothing to compare.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineReport {
    /// "dp" or "eo".
    pub method: String,
    pub classifier: String,
    pub strata: Vec<StratumStat>,
    /// Combined p-value: the single stratum's p for DP, Bonferroni over
    /// label strata for EO.
    pub p_value: f64,
    /// All strata degenerate.
    pub degenerate: bool,
    pub alpha: f64,
    pub reject: bool,
    pub n_rows: usize,
    pub dataset_fingerprint: String,
    pub wall_time_s: f64,
}

struct Welch {
    t: f64,
    p: f64,
    degenerate: bool,
}

/// Welch's unequal-variance two-sample t-test on binary group values,
/// computed from the sufficient statistics (k positives out of n per
/// group): mean = k/n and sample variance = k(n-k)/(n(n-1)). Working from
/// counts makes the result exactly invariant to row order, which summing
/// floating-point deviations in dataset order would not be.
/// Zero variance in both groups degenerates to p = 1 when the rates agree
/// and to p = 0 (perfect separation) when they differ.
fn welch_binary(k0: usize, n0: usize, k1: usize, n1: usize) -> Result<Welch> {
    if n0 < 2 || n1 < 2 {
        return Err(Error::InsufficientData(format!(
            "rate test needs at least 2 rows per group, got {n0} and {n1}"
        )));
    }
    let m0 = k0 as f64 / n0 as f64;
    let m1 = k1 as f64 / n1 as f64;
    let v0 = (k0 * (n0 - k0)) as f64 / (n0 * (n0 - 1)) as f64;
    let v1 = (k1 * (n1 - k1)) as f64 / (n1 * (n1 - 1)) as f64;
    let a = v0 / n0 as f64;
    let b = v1 / n1 as f64;
    let se2 = a + b;
    if se2 == 0.0 {
        return Ok(if m0 == m1 {
            Welch {
                t: 0.0,
                p: 1.0,
                degenerate: true,
            }
        } else {
            // Constant but different predictions in the two groups: the
            // separation is perfect and the t statistic is unbounded.
            Welch {
                t: if m0 > m1 { f64::INFINITY } else { f64::NEG_INFINITY },
                p: 0.0,
                degenerate: false,
            }
        });
    }
    let t = (m0 - m1) / se2.sqrt();
    let dof = se2 * se2 / (a * a / (n0 - 1) as f64 + b * b / (n1 - 1) as f64);
    let p = student_t_sf(t, dof)?;
    Ok(Welch {
        t,
        p,
        degenerate: false,
    })
}

/// Number of rows whose thresholded prediction is positive.
fn positive_count(f: &dyn Predictor, data: &LabeledDataset, rows: &[usize]) -> Result<usize> {
    let mut k = 0;
    for &i in rows {
        let p = f.predict_proba(data.features(i))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "predict_proba returned {p}, outside [0, 1]"
            )));
        }
        k += usize::from(p >= 0.5);
    }
    Ok(k)
}

fn stratum_stat(
    f: &dyn Predictor,
    data: &LabeledDataset,
    y: Option<u8>,
    rows_a0: &[usize],
    rows_a1: &[usize],
) -> Result<StratumStat> {
    let (n0, n1) = (rows_a0.len(), rows_a1.len());
    let k0 = positive_count(f, data, rows_a0)?;
    let k1 = positive_count(f, data, rows_a1)?;
    let w = welch_binary(k0, n0, k1, n1)?;
    Ok(StratumStat {
        y,
        rate_a0: k0 as f64 / n0 as f64,
        rate_a1: k1 as f64 / n1 as f64,
        n_a0: n0,
        n_a1: n1,
        t_stat: w.t,
        p_value: w.p,
        degenerate: w.degenerate,
    })
}

/// Demographic parity as a test: H0 is equal positive-prediction rates
/// between the attribute groups. Refuses groups smaller than 8 rows.
pub fn dp_test(f: &dyn Predictor, d_test: &LabeledDataset, alpha: f64) -> Result<BaselineReport> {
    let start = Instant::now();
    validate_alpha(alpha)?;
    let rows_a0 = d_test.indices_with_attr(0);
    let rows_a1 = d_test.indices_with_attr(1);
    if rows_a0.len() < 8 || rows_a1.len() < 8 {
        return Err(Error::InsufficientData(format!(
            "attribute groups have {} and {} rows; the rate test needs at least 8 each",
            rows_a0.len(),
            rows_a1.len()
        )));
    }
    let s = stratum_stat(f, d_test, None, &rows_a0, &rows_a1)?;
    let degenerate = s.degenerate;
    let p = s.p_value;
    Ok(BaselineReport {
        method: "dp".into(),
        classifier: f.id(),
        strata: vec![s],
        p_value: p,
        degenerate,
        alpha,
        reject: !degenerate && p < alpha,
        n_rows: d_test.len(),
        dataset_fingerprint: d_test.fingerprint(),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Bonferroni combination over the two label strata.
pub(crate) fn eo_combine(p_y0: f64, p_y1: f64) -> f64 {
    (2.0 * p_y0.min(p_y1)).min(1.0)
}

/// Equality of opportunity as a test: within each true-label stratum, H0 is
/// equal positive-prediction rates across attribute groups; the two stratum
/// p-values are Bonferroni-combined. Refuses when any (y, a) stratum has
/// fewer than 2 rows, naming the stratum.
pub fn eo_test(f: &dyn Predictor, d_test: &LabeledDataset, alpha: f64) -> Result<BaselineReport> {
    let start = Instant::now();
    validate_alpha(alpha)?;
    let mut strata = Vec::with_capacity(2);
    for y in [0u8, 1u8] {
        let rows_a0: Vec<usize> = (0..d_test.len())
            .filter(|&i| d_test.label(i) == y && d_test.attr(i) == 0)
            .collect();
        let rows_a1: Vec<usize> = (0..d_test.len())
            .filter(|&i| d_test.label(i) == y && d_test.attr(i) == 1)
            .collect();
        for (a, rows) in [(0, &rows_a0), (1, &rows_a1)] {
            if rows.len() < 2 {
                return Err(Error::InsufficientData(format!(
                    "stratum (y={y}, a={a}) has {} rows; need at least 2",
                    rows.len()
                )));
            }
        }
        strata.push(stratum_stat(f, d_test, Some(y), &rows_a0, &rows_a1)?);
    }
    let degenerate = strata.iter().all(|s| s.degenerate);
    let p = eo_combine(strata[0].p_value, strata[1].p_value);
    Ok(BaselineReport {
        method: "eo".into(),
        classifier: f.id(),
        strata,
        p_value: p,
        degenerate,
        alpha,
        reject: !degenerate && p < alpha,
        n_rows: d_test.len(),
        dataset_fingerprint: d_test.fingerprint(),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

fn validate_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha {alpha} outside (0, 1)")));
    }
    Ok(())
}
