//! Error metrics and empirical quantiles.

use crate::error::{Error, Result};
use crate::model::PkParams;

/// Empirical quantile of already sorted data, interpolating linearly
/// between order statistics at position `(n - 1) * level`.
pub fn quantile_sorted(sorted: &[f64], level: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * level;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Quantiles of `values` at each of `levels`.
pub fn quantiles(values: &[f64], levels: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument(
            "quantiles of an empty sample".into(),
        ));
    }
    if let Some(bad) = levels.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::InvalidArgument(format!(
            "quantile level {bad} outside [0, 1]"
        )));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("sample contains NaN".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(levels
        .iter()
        .map(|&l| quantile_sorted(&sorted, l))
        .collect())
}

/// Mean absolute error `(1/n) Σ |truth_k - estimate_k|`.
pub fn mae(truth: &[f64], estimate: &[f64]) -> Result<f64> {
    if truth.len() != estimate.len() || truth.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "MAE needs equal nonempty series (got {} and {})",
            truth.len(),
            estimate.len()
        )));
    }
    let sum: f64 = truth.iter().zip(estimate).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / truth.len() as f64)
}

/// Relative difference `(mae_ekf - mae_dmf) / mae_dmf`.
pub fn rd(mae_ekf: f64, mae_dmf: f64) -> Result<f64> {
    if mae_dmf == 0.0 {
        return Err(Error::Domain(
            "relative difference with zero DMF error".into(),
        ));
    }
    Ok((mae_ekf - mae_dmf) / mae_dmf)
}

/// Mean absolute coordinate error of parameter estimates,
/// `(1 / 6N) Σ_i Σ_j |est_ij - truth_j|`.
pub fn maep(estimates: &[PkParams], truth: &PkParams) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::InvalidArgument("MAEP of no estimates".into()));
    }
    let t = truth.to_array();
    let sum: f64 = estimates
        .iter()
        .flat_map(|e| e.to_array().into_iter().zip(t).map(|(a, b)| (a - b).abs()))
        .sum();
    Ok(sum / (6 * estimates.len()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quantile_examples() {
        assert_eq!(
            quantiles(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.5]).unwrap(),
            vec![3.0]
        );
        assert_eq!(quantiles(&[2.0, 1.0], &[0.5]).unwrap(), vec![1.5]);
        assert_eq!(
            quantiles(&[4.0; 3], &[0.05, 0.5, 0.95]).unwrap(),
            vec![4.0; 3]
        );
        // 0.3 * 4 = 1.2 -> 2 + 0.2 * (3 - 2)
        assert_abs_diff_eq!(
            quantiles(&[5.0, 1.0, 3.0, 2.0, 4.0], &[0.3]).unwrap()[0],
            2.2,
            epsilon = 1e-12
        );
        assert_eq!(quantiles(&[3.0, 1.0], &[0.0, 1.0]).unwrap(), vec![1.0, 3.0]);
        assert!(quantiles(&[], &[0.5]).is_err());
        assert!(quantiles(&[1.0], &[1.5]).is_err());
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            mae(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap(),
            1.0 / 3.0,
            epsilon = 1e-15
        );
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn rd_examples() {
        assert_eq!(rd(0.04, 0.04).unwrap(), 0.0);
        assert_abs_diff_eq!(
            rd(0.0797, 0.0399).unwrap(),
            0.997_493_734_335_839_6,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            rd(0.0600, 0.0233).unwrap(),
            1.575_107_296_137_339,
            epsilon = 1e-12
        );
        assert!(rd(1.0, 0.0).is_err());
    }

    #[test]
    fn maep_examples() {
        let t = PkParams::reference();
        assert_eq!(maep(&[t, t], &t).unwrap(), 0.0);
        let mut off = t;
        off.k_m += 0.6;
        assert_abs_diff_eq!(maep(&[off], &t).unwrap(), 0.1, epsilon = 1e-10);
        assert!(maep(&[], &t).is_err());
    }
}
