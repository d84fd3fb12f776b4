//! Evaluation metrics over per-vertex predictions: mean absolute percentage
//! error, Pearson correlation, and hit rate at percentage thresholds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default hit-rate thresholds, in percent.
pub const HIT_THRESHOLDS: [f64; 2] = [10.0, 20.0];

/// Truth entries this close to zero are excluded from percentage metrics.
pub fn truth_floor(truth: &[f64]) -> f64 {
    1e-12 * truth.iter().fold(0.0f64, |acc, t| acc.max(t.abs()))
}

fn check_lengths(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            expected: truth.len(),
            got: pred.len(),
            context: "predictions per truth entry".into(),
        });
    }
    Ok(())
}

fn percentage_errors(pred: &[f64], truth: &[f64]) -> Result<Vec<f64>> {
    check_lengths(pred, truth)?;
    let floor = truth_floor(truth);
    let errors: Vec<f64> = pred
        .iter()
        .zip(truth)
        .filter(|(_, t)| t.abs() > floor)
        .map(|(p, t)| 100.0 * (p - t).abs() / t.abs())
        .collect();
    if errors.is_empty() {
        return Err(Error::UndefinedMetric(
            "every truth entry sits below the near-zero floor".into(),
        ));
    }
    Ok(errors)
}

/// Mean absolute percentage error over entries above the near-zero floor.
pub fn mape(pred: &[f64], truth: &[f64]) -> Result<f64> {
    let errors = percentage_errors(pred, truth)?;
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}

/// Sample Pearson correlation coefficient.
pub fn pcc(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let n = pred.len() as f64;
    if pred.is_empty() {
        return Err(Error::UndefinedMetric("correlation of empty vectors".into()));
    }
    let mean_p = pred.iter().sum::<f64>() / n;
    let mean_t = truth.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_p = 0.0;
    let mut var_t = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        let dp = p - mean_p;
        let dt = t - mean_t;
        cov += dp * dt;
        var_p += dp * dp;
        var_t += dt * dt;
    }
    if var_p == 0.0 || var_t == 0.0 {
        return Err(Error::UndefinedMetric(
            "correlation of a zero-variance vector".into(),
        ));
    }
    Ok(cov / (var_p.sqrt() * var_t.sqrt()))
}

/// Percentage of entries whose absolute percentage error is at most
/// `threshold` percent, over entries above the near-zero floor.
pub fn hit_rate(pred: &[f64], truth: &[f64], threshold: f64) -> Result<f64> {
    let errors = percentage_errors(pred, truth)?;
    let hits = errors.iter().filter(|&&e| e <= threshold).count();
    Ok(100.0 * hits as f64 / errors.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HitRate {
    pub threshold: f64,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mape: f64,
    pub pcc: f64,
    pub hit_rates: Vec<HitRate>,
}

impl EvalReport {
    pub fn compute(pred: &[f64], truth: &[f64], thresholds: &[f64]) -> Result<Self> {
        let mape = mape(pred, truth)?;
        let pcc = pcc(pred, truth)?;
        let hit_rates = thresholds
            .iter()
            .map(|&threshold| {
                Ok(HitRate {
                    threshold,
                    rate: hit_rate(pred, truth, threshold)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EvalReport { mape, pcc, hit_rates })
    }

    /// Aligned-column table for a set of labelled reports.
    pub fn table(rows: &[(String, EvalReport)]) -> String {
        let mut out = String::new();
        let label_width = rows
            .iter()
            .map(|(label, _)| label.len())
            .max()
            .unwrap_or(4)
            .max(4);
        out.push_str(&format!("{:<label_width$}  {:>8}  {:>6}", "fold", "MAPE%", "PCC"));
        if let Some((_, first)) = rows.first() {
            for hr in &first.hit_rates {
                out.push_str(&format!("  HR({:.0}%)", hr.threshold));
            }
        }
        out.push('\n');
        for (label, report) in rows {
            out.push_str(&format!(
                "{:<label_width$}  {:>8.2}  {:>6.3}",
                label, report.mape, report.pcc
            ));
            for hr in &report.hit_rates {
                let header_width = format!("HR({:.0}%)", hr.threshold).len();
                out.push_str(&format!("  {:>header_width$.2}", hr.rate));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng as _, SeedableRng as _};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mape_examples() {
        let truth = [1.0, 2.0, -3.0];
        assert_eq!(mape(&truth, &truth).unwrap(), 0.0);

        let scaled: Vec<f64> = truth.iter().map(|t| 1.1 * t).collect();
        assert_abs_diff_eq!(mape(&scaled, &truth).unwrap(), 10.0, epsilon = 1e-10);

        assert_abs_diff_eq!(
            mape(&[1.0, 5.0], &[2.0, 4.0]).unwrap(),
            37.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn mape_excludes_near_zero_truth() {
        let truth = [2.0, 1e-30, 4.0];
        let pred = [2.0, 7.0, 4.0];
        assert_eq!(mape(&pred, &truth).unwrap(), 0.0);

        let all_zero = [0.0, 0.0];
        match mape(&[1.0, 2.0], &all_zero) {
            Err(Error::UndefinedMetric(_)) => {}
            other => panic!("expected an undefined metric, got {other:?}"),
        }
    }

    #[test]
    fn pcc_affine_invariance_and_sign() {
        let truth: Vec<f64> = (0..20).map(|i| (i as f64 * 0.7).sin()).collect();
        let affine: Vec<f64> = truth.iter().map(|t| 2.0 * t + 3.0).collect();
        assert_abs_diff_eq!(pcc(&affine, &truth).unwrap(), 1.0, epsilon = 1e-12);

        let negated: Vec<f64> = truth.iter().map(|t| -t).collect();
        assert_abs_diff_eq!(pcc(&negated, &truth).unwrap(), -1.0, epsilon = 1e-12);

        assert!(matches!(
            pcc(&[1.0, 1.0, 1.0], &truth[..3]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn pcc_of_orthogonalized_vectors_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 64;
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mean_a = a.iter().sum::<f64>() / n as f64;
        let mean_b = b.iter().sum::<f64>() / n as f64;
        let a_c: Vec<f64> = a.iter().map(|v| v - mean_a).collect();
        let mut b_c: Vec<f64> = b.iter().map(|v| v - mean_b).collect();
        let dot: f64 = a_c.iter().zip(&b_c).map(|(x, y)| x * y).sum();
        let norm2: f64 = a_c.iter().map(|x| x * x).sum();
        for (bv, av) in b_c.iter_mut().zip(&a_c) {
            *bv -= dot / norm2 * av;
        }
        for (bv, bc) in b.iter_mut().zip(&b_c) {
            *bv = *bc;
        }
        assert!(pcc(&b, &a).unwrap().abs() < 1e-10);
    }

    #[test]
    fn hit_rate_examples() {
        let truth = [10.0, 10.0, 10.0];
        assert_eq!(hit_rate(&truth, &truth, 10.0).unwrap(), 100.0);

        let pred = [10.5, 11.5, 10.9];
        assert_abs_diff_eq!(
            hit_rate(&pred, &truth, 10.0).unwrap(),
            100.0 * 2.0 / 3.0,
            epsilon = 1e-10
        );

        assert_eq!(hit_rate(&[10.0, 11.0], &[10.0, 10.0], 0.0).unwrap(), 50.0);

        // The comparison is inclusive at the threshold.
        assert_eq!(hit_rate(&[11.0], &[10.0], 10.0).unwrap(), 100.0);
    }

    #[test]
    fn hit_rate_is_monotone_in_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let truth: Vec<f64> = (0..50).map(|_| rng.gen_range(0.5..2.0)).collect();
        let pred: Vec<f64> = truth
            .iter()
            .map(|t| t * rng.gen_range(0.7..1.3))
            .collect();
        let mut last = 0.0;
        for threshold in [0.0, 5.0, 10.0, 20.0, 40.0, 100.0] {
            let rate = hit_rate(&pred, &truth, threshold).unwrap();
            assert!(rate >= last);
            last = rate;
        }
        assert_eq!(last, 100.0);
    }

    #[test]
    fn report_serializes_and_tabulates() {
        let truth: Vec<f64> = (0..30).map(|i| 1.0 + (i as f64 * 0.3).cos().abs()).collect();
        let pred: Vec<f64> = truth.iter().map(|t| t * 1.05).collect();
        let report = EvalReport::compute(&pred, &truth, &HIT_THRESHOLDS).unwrap();
        assert_abs_diff_eq!(report.mape, 5.0, epsilon = 1e-10);
        assert_eq!(report.hit_rates.len(), 2);
        assert_eq!(report.hit_rates[0].rate, 100.0);

        let json = serde_json::to_string(&report).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);

        let table = EvalReport::table(&[("fold-0".into(), report)]);
        assert!(table.contains("MAPE%"));
        assert!(table.contains("HR(10%)"));
        assert!(table.lines().count() == 2);
    }
}
