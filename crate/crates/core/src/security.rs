//! Bound on how many preventive actions attack threads can trigger before
//! any of them is marked as a suspect.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::metrics::Ratio;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundQuery {
    /// Attack threads over all threads.
    pub f_atk: f64,
    pub th_outlier: f64,
}

impl BoundQuery {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.f_atk) {
            return Err(SimError::InvalidInput(format!("f_atk {} outside [0, 1)", self.f_atk)));
        }
        if !(self.th_outlier >= 0.0 && self.th_outlier.is_finite()) {
            return Err(SimError::InvalidInput(format!(
                "th_outlier {} must be a finite non-negative number",
                self.th_outlier
            )));
        }
        Ok(())
    }
}

/// Largest attacker score, relative to the benign average, that stays
/// unmarked when every attack thread holds that same score.
pub fn max_attack_ratio(q: BoundQuery) -> Result<Ratio> {
    q.validate()?;
    let k = 1.0 + q.th_outlier;
    let denom = 1.0 - k * q.f_atk;
    if denom <= 0.0 {
        return Ok(Ratio::Unbounded);
    }
    Ok(Ratio::Finite(k * (1.0 - q.f_atk) / denom))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundRow {
    pub f_atk: f64,
    pub th_outlier: f64,
    pub ratio: Ratio,
}

pub fn sweep(th_outliers: &[f64], f_grid: &[f64]) -> Result<Vec<BoundRow>> {
    let mut rows = Vec::with_capacity(th_outliers.len() * f_grid.len());
    for &t in th_outliers {
        for &f in f_grid {
            let q = BoundQuery { f_atk: f, th_outlier: t };
            rows.push(BoundRow {
                f_atk: f,
                th_outlier: t,
                ratio: max_attack_ratio(q)?,
            });
        }
    }
    Ok(rows)
}

pub fn to_csv(rows: &[BoundRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("row serializes");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8")
}

/// `n` evenly spaced points in `[0, end)`.
pub fn grid(n: usize, end: f64) -> Vec<f64> {
    (0..n).map(|i| end * i as f64 / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ratio(f: f64, t: f64) -> Ratio {
        max_attack_ratio(BoundQuery { f_atk: f, th_outlier: t }).unwrap()
    }

    /// Raises the attacker score until it reaches the marking boundary.
    fn iterate(f: f64, t: f64) -> Option<f64> {
        let mut a = 1.0;
        for _ in 0..100_000 {
            let next = (1.0 + t) * (f * a + (1.0 - f));
            if !next.is_finite() || next > 1e12 {
                return None;
            }
            if (next - a).abs() < 1e-13 {
                return Some(next);
            }
            a = next;
        }
        None
    }

    #[test]
    fn reference_points() {
        assert!((ratio(0.5, 0.65).as_f64() - 4.714_285_714).abs() < 1e-6);
        assert!((ratio(0.9, 0.05).as_f64() - 1.90).abs() < 0.01);
        assert_eq!(ratio(0.0, 0.65), Ratio::Finite(1.65));
        assert_eq!(ratio(0.5, 1.0), Ratio::Unbounded);
    }

    #[test]
    fn matches_numeric_fixed_point() {
        for &(f, t) in &[(0.5, 0.65), (0.9, 0.05), (0.25, 0.3), (0.1, 2.0), (0.0, 0.0)] {
            let closed = ratio(f, t).as_f64();
            let iter = iterate(f, t).unwrap();
            assert!((closed - iter).abs() < 1e-9, "f={f} t={t}: {closed} vs {iter}");
        }
        assert!(iterate(0.5, 1.0).is_none());
    }

    #[test]
    fn closed_form_satisfies_bound_with_equality() {
        for &(f, t) in &[(0.5, 0.65), (0.9, 0.05), (0.3, 0.9), (0.75, 0.2)] {
            let a = ratio(f, t).as_f64();
            let mean = f * a + (1.0 - f);
            assert!((a - (1.0 + t) * mean).abs() < 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn invalid_inputs() {
        assert!(max_attack_ratio(BoundQuery { f_atk: 1.0, th_outlier: 0.5 }).is_err());
        assert!(max_attack_ratio(BoundQuery { f_atk: -0.1, th_outlier: 0.5 }).is_err());
        assert!(max_attack_ratio(BoundQuery { f_atk: 0.1, th_outlier: -1.0 }).is_err());
        assert!(max_attack_ratio(BoundQuery { f_atk: 0.1, th_outlier: f64::NAN }).is_err());
    }

    #[test]
    fn sweep_monotone_until_pole() {
        let rows = sweep(&[0.05, 0.65, 1.0], &grid(100, 1.0)).unwrap();
        for t in [0.05, 0.65, 1.0] {
            let curve: Vec<_> = rows.iter().filter(|r| r.th_outlier == t).collect();
            assert_eq!(curve[0].ratio, Ratio::Finite(1.0 + t));
            let finite: Vec<f64> = curve.iter().filter_map(|r| r.ratio.value()).collect();
            assert!(finite.windows(2).all(|w| w[1] > w[0]));
            let first_inf = curve.iter().position(|r| r.ratio == Ratio::Unbounded);
            if let Some(i) = first_inf {
                assert!(curve[i..].iter().all(|r| r.ratio == Ratio::Unbounded));
            }
        }
        let csv = to_csv(&rows[..2]);
        assert!(csv.starts_with("f_atk,th_outlier,ratio\n0.0,0.05,1.05\n"), "{csv}");
    }
}
