//! Alignment between test p-values and the interventional ground truth:
//! Pearson correlation and an OLS fit of log p on the expected
//! counterfactual accuracy, one cell per (dataset, method).
//!
//! A method whose p-values track the oracle — small p where the classifier
//! really is attribute-sensitive, large p where it is not — shows a
//! positive correlation. Cells are emitted to a plot-ready CSV together
//! with the significance threshold in log space.

use std::collections::BTreeSet;

use crate::runner::sweep::SweepRow;
use crate::{Error, Result};

/// p-values are clamped here before the log transform so degenerate zeros
/// keep the regression finite; clamped rows are counted in their cell.
pub const P_FLOOR: f64 = 1e-300;

const METHODS: [&str; 3] = ["cit-lr", "dp", "eo"];

/// Product-moment correlation. Needs equal lengths >= 3 and nonzero
/// variance on both sides.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape {
            context: "pearson",
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "correlation needs at least 3 points, got {}",
            x.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidArgument(
            "correlation undefined: an input has zero variance".into(),
        ));
    }
    let r = sxy / (sxx * syy).sqrt();
    if !r.is_finite() {
        return Err(Error::NonFinite("pearson".into()));
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OlsFit {
    pub slope: f64,
    pub intercept: f64,
}

/// Ordinary least squares of y on x. Same preconditions as [`pearson`]
/// except only x needs variance.
pub fn ols(x: &[f64], y: &[f64]) -> Result<OlsFit> {
    if x.len() != y.len() {
        return Err(Error::Shape {
            context: "ols",
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "regression needs at least 3 points, got {}",
            x.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    if sxx == 0.0 {
        return Err(Error::InvalidArgument(
            "regression undefined: regressor has zero variance".into(),
        ));
    }
    let slope = sxy / sxx;
    Ok(OlsFit {
        slope,
        intercept: my - slope * mx,
    })
}

/// One (dataset, method) cell of the alignment report. A cell that cannot
/// be computed (too few rows, zero variance) carries its error instead of
/// numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationCell {
    pub dataset: String,
    pub method: String,
    /// Rows used: status ok with both an oracle value and a p-value.
    pub n: usize,
    /// Rows whose p-value hit the clamp floor.
    pub clamped: usize,
    pub r: Option<f64>,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    /// ln(alpha): the rejection threshold in the transformed space.
    pub ln_threshold: f64,
    pub error: Option<String>,
}

fn method_p(row: &SweepRow, method: &str) -> Option<f64> {
    match method {
        "cit-lr" => row.p_citlr,
        "dp" => row.p_dp,
        "eo" => row.p_eo,
        _ => None,
    }
}

/// Compute every (dataset, method) cell from sweep rows. Datasets are
/// emitted in sorted order, methods in a fixed order, so the report is
/// deterministic for a given row set.
pub fn correlation_report(rows: &[SweepRow], alpha: f64) -> Vec<CorrelationCell> {
    let ln_threshold = alpha.ln();
    let datasets: BTreeSet<&str> = rows.iter().map(|r| r.dataset.as_str()).collect();
    let mut cells = Vec::new();
    for dataset in datasets {
        for method in METHODS {
            let mut x = Vec::new();
            let mut y = Vec::new();
            let mut clamped = 0usize;
            for row in rows.iter().filter(|r| r.dataset == dataset && r.is_ok()) {
                let (Some(eca), Some(p)) = (row.eca, method_p(row, method)) else {
                    continue;
                };
                let p_clamped = p.max(P_FLOOR);
                if p_clamped > p {
                    clamped += 1;
                }
                x.push(eca);
                y.push(p_clamped.ln());
            }
            let mut cell = CorrelationCell {
                dataset: dataset.to_string(),
                method: method.to_string(),
                n: x.len(),
                clamped,
                r: None,
                slope: None,
                intercept: None,
                ln_threshold,
                error: None,
            };
            match pearson(&x, &y).and_then(|r| ols(&x, &y).map(|fit| (r, fit))) {
                Ok((r, fit)) => {
                    cell.r = Some(r);
                    cell.slope = Some(fit.slope);
                    cell.intercept = Some(fit.intercept);
                }
                Err(e) => cell.error = Some(e.to_string().replace(['\n', '\r'], "; ")),
            }
            cells.push(cell);
        }
    }
    cells
}

pub const REPORT_HEADER: &str = "dataset,method,n,clamped,r,slope,intercept,ln_threshold,error";

/// Render cells as the plot-ready `report.csv`.
pub fn report_csv_string(cells: &[CorrelationCell]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for c in cells {
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let error = match &c.error {
            Some(e) if e.contains(',') || e.contains('"') => {
                format!("\"{}\"", e.replace('"', "\"\""))
            }
            Some(e) => e.clone(),
            None => String::new(),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            c.dataset,
            c.method,
            c.n,
            c.clamped,
            fmt(c.r),
            fmt(c.slope),
            fmt(c.intercept),
            c.ln_threshold,
            error,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_matches_hand_values() {
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(), 1.0);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap(), -1.0);
        // Direct formula: covariance 3, both variances 5, r = 3/5.
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap();
        assert!((r - 0.6).abs() < 1e-15, "r = {r}");
    }

    #[test]
    fn pearson_rejects_bad_input() {
        assert!(pearson(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
        assert!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(pearson(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]).is_err());
    }

    #[test]
    fn ols_recovers_a_planted_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let fit = ols(&x, &y).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.intercept - 1.0).abs() < 1e-12);
    }

    fn row(dataset: &str, seed: u64, eca: f64, p_cit: f64, p_dp: f64, p_eo: f64) -> SweepRow {
        SweepRow {
            dataset: dataset.into(),
            family: "logistic".into(),
            seed,
            classifier: format!("logistic_{seed}"),
            status: "ok".into(),
            eca: Some(eca),
            eca_max_se: Some(0.0),
            acc_train: Some(0.9),
            acc_test: Some(0.9),
            t_citlr: Some(0.0),
            p_citlr: Some(p_cit),
            degenerate_citlr: Some(false),
            p_dp: Some(p_dp),
            degenerate_dp: Some(false),
            p_eo: Some(p_eo),
            degenerate_eo: Some(false),
        }
    }

    #[test]
    fn report_cells_cover_alignment_degeneracy_and_clamping() {
        // ln(p_citlr) is exactly linear in ECA with positive slope; DP is
        // constant at 1 (zero variance); EO has one p at zero (clamped).
        let rows = vec![
            row("linear", 0, 0.2, (0.2f64 - 1.0).exp(), 1.0, 0.0),
            row("linear", 1, 0.5, (0.5f64 - 1.0).exp(), 1.0, 0.5),
            row("linear", 2, 0.8, (0.8f64 - 1.0).exp(), 1.0, 0.7),
            row("linear", 3, 1.0, 1.0, 1.0, 0.9),
            // An error row must be excluded from every cell.
            SweepRow {
                status: "bundle exploded".into(),
                ..row("linear", 4, 0.1, 0.5, 0.5, 0.5)
            },
        ];
        let cells = correlation_report(&rows, 0.05);
        assert_eq!(cells.len(), 3);

        let cit = cells.iter().find(|c| c.method == "cit-lr").unwrap();
        assert_eq!(cit.n, 4);
        assert!((cit.r.unwrap() - 1.0).abs() < 1e-12);
        assert!((cit.slope.unwrap() - 1.0).abs() < 1e-12);
        assert!((cit.ln_threshold - (-2.995_732_273_553_991)).abs() < 1e-12);

        let dp = cells.iter().find(|c| c.method == "dp").unwrap();
        assert!(dp.r.is_none());
        assert!(dp.error.as_deref().unwrap().contains("zero variance"));

        let eo = cells.iter().find(|c| c.method == "eo").unwrap();
        assert_eq!(eo.clamped, 1);
        assert!(eo.r.is_some());

        let csv = report_csv_string(&cells);
        assert!(csv.starts_with(REPORT_HEADER));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn too_few_rows_is_surfaced_per_cell() {
        let rows = vec![
            row("sin", 0, 0.2, 0.5, 0.5, 0.5),
            row("sin", 1, 0.8, 0.1, 0.5, 0.5),
        ];
        let cells = correlation_report(&rows, 0.05);
        for cell in cells {
            assert_eq!(cell.n, 2);
            assert!(cell.error.as_deref().unwrap().contains("at least 3"));
        }
    }
}
