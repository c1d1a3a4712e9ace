//! Forecast error metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// MAE, MAPE (percent, absent when any target is zero) and RMSE.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub mape_percent: Option<f64>,
    pub rmse: f64,
}

pub fn compute_metrics(y: &[f64], y_hat: &[f64]) -> Result<Metrics> {
    if y.len() != y_hat.len() {
        return Err(Error::ShapeMismatch {
            op: "metrics",
            lhs: vec![y.len()],
            rhs: vec![y_hat.len()],
        });
    }
    if y.is_empty() {
        return Err(Error::EmptyAxis { op: "metrics" });
    }
    let n = y.len() as f64;
    let mae = y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    let rmse = (y
        .iter()
        .zip(y_hat)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let mape_percent = if y.contains(&0.0) {
        None
    } else {
        Some(
            100.0
                * y.iter()
                    .zip(y_hat)
                    .map(|(a, b)| ((a - b) / a).abs())
                    .sum::<f64>()
                / n,
        )
    };
    Ok(Metrics {
        mae,
        mape_percent,
        rmse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_examples() {
        let m = compute_metrics(&[100.0, 100.0], &[90.0, 110.0]).unwrap();
        assert_eq!(m.mae, 10.0);
        assert!((m.mape_percent.unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(m.rmse, 10.0);

        let m = compute_metrics(&[3.0, -2.0], &[3.0, -2.0]).unwrap();
        assert_eq!((m.mae, m.mape_percent, m.rmse), (0.0, Some(0.0), 0.0));

        let m = compute_metrics(&[1.0, 2.0], &[2.0, 4.0]).unwrap();
        assert_eq!(m.mae, 1.5);
        assert!((m.mape_percent.unwrap() - 100.0).abs() < 1e-12);
        assert!((m.rmse - 2.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zero_target_drops_mape_only() {
        let m = compute_metrics(&[0.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!(m.mape_percent, None);
        assert_eq!(m.mae, 0.5);
        assert!(compute_metrics(&[], &[]).is_err());
        assert!(compute_metrics(&[1.0], &[1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn matches_naive_formulas(pairs in proptest::collection::vec((0.5f64..50.0, -50.0f64..50.0), 1..60)) {
            let (y, y_hat): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let m = compute_metrics(&y, &y_hat).unwrap();
            let mut abs = 0.0;
            let mut sq = 0.0;
            let mut pct = 0.0;
            for i in 0..y.len() {
                let e = y[i] - y_hat[i];
                abs += e.abs();
                sq += e * e;
                pct += (e / y[i]).abs();
            }
            let n = y.len() as f64;
            prop_assert!((m.mae - abs / n).abs() <= 1e-12 * (1.0 + m.mae));
            prop_assert!((m.rmse - (sq / n).sqrt()).abs() <= 1e-12 * (1.0 + m.rmse));
            prop_assert!((m.mape_percent.unwrap() - 100.0 * pct / n).abs() <= 1e-12 * (1.0 + 100.0 * pct / n));
        }
    }
}
