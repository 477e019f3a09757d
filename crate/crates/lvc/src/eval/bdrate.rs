//! Bjøntegaard rate delta between two RD curves.
//!
//! Quality axis is MS-SSIM in dB, rate axis is log10 of bits-per-pixel. Each
//! curve is fit with a least-squares polynomial of degree `min(3, n - 1)`;
//! the fits are integrated over the overlapping quality range and the mean
//! log-rate gap converted to a percentage. Negative means the test curve
//! spends less rate at equal quality.

use super::{EvalError, RDCurve};

/// Average rate difference of `test` against `anchor`, in percent.
pub fn bd_rate(anchor: &RDCurve, test: &RDCurve) -> Result<f64, EvalError> {
    let a = axis_points(anchor)?;
    let t = axis_points(test)?;

    let lo = a.q_min.max(t.q_min);
    let hi = a.q_max.min(t.q_max);
    if hi <= lo {
        return Err(EvalError::NoOverlap);
    }

    let fit_a = PolyFit::fit(&a.q, &a.log_rate);
    let fit_t = PolyFit::fit(&t.q, &t.log_rate);

    // Simpson integration is exact for cubics; 256 panels guard the fits'
    // different centering transforms.
    let n = 256;
    let h = (hi - lo) / n as f64;
    let f = |q: f64| fit_t.eval(q) - fit_a.eval(q);
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        let q = lo + i as f64 * h;
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(q);
    }
    let avg_diff = acc * h / 3.0 / (hi - lo);
    Ok((10f64.powf(avg_diff) - 1.0) * 100.0)
}

struct AxisPoints {
    q: Vec<f64>,
    log_rate: Vec<f64>,
    q_min: f64,
    q_max: f64,
}

fn axis_points(curve: &RDCurve) -> Result<AxisPoints, EvalError> {
    let mut q = Vec::new();
    let mut log_rate = Vec::new();
    for p in &curve.points {
        if p.msssim_db.is_finite() {
            q.push(p.msssim_db);
            log_rate.push(p.rate_bpp.log10());
        }
    }
    if q.len() < 2 {
        return Err(EvalError::TooFewPoints(q.len()));
    }
    let q_min = q.iter().cloned().fold(f64::MAX, f64::min);
    let q_max = q.iter().cloned().fold(f64::MIN, f64::max);
    Ok(AxisPoints { q, log_rate, q_min, q_max })
}

/// Least-squares polynomial in a centered/scaled variable.
struct PolyFit {
    coeffs: Vec<f64>,
    mid: f64,
    half: f64,
}

impl PolyFit {
    fn fit(q: &[f64], y: &[f64]) -> PolyFit {
        let degree = 3.min(q.len() - 1);
        let mid = (q.iter().cloned().fold(f64::MAX, f64::min)
            + q.iter().cloned().fold(f64::MIN, f64::max))
            / 2.0;
        let half = ((q.iter().cloned().fold(f64::MIN, f64::max) - mid).abs()).max(1e-9);
        let u: Vec<f64> = q.iter().map(|&v| (v - mid) / half).collect();

        // Normal equations for the monomial basis in u.
        let m = degree + 1;
        let mut ata = vec![vec![0.0f64; m]; m];
        let mut aty = vec![0.0f64; m];
        for (ui, &yi) in u.iter().zip(y) {
            let mut pow = vec![1.0f64; m];
            for k in 1..m {
                pow[k] = pow[k - 1] * ui;
            }
            for r in 0..m {
                aty[r] += pow[r] * yi;
                for c in 0..m {
                    ata[r][c] += pow[r] * pow[c];
                }
            }
        }
        let coeffs = solve(ata, aty);
        PolyFit { coeffs, mid, half }
    }

    fn eval(&self, q: f64) -> f64 {
        let u = (q - self.mid) / self.half;
        let mut acc = 0.0;
        for &c in self.coeffs.iter().rev() {
            acc = acc * u + c;
        }
        acc
    }
}

/// Gaussian elimination with partial pivoting on a small system.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r1, &r2| a[r1][col].abs().total_cmp(&a[r2][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let diag = a[col][col];
        for row in col + 1..n {
            let factor = a[row][col] / diag;
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0f64; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{msssim_db, RDRecord};

    fn curve(label: &str, points: &[(f64, f64)]) -> RDCurve {
        let records = points
            .iter()
            .map(|&(bpp, msssim)| RDRecord {
                rate_bpp: bpp,
                rate_mbps: bpp,
                msssim,
                msssim_db: msssim_db(msssim).unwrap(),
                config_label: label.to_string(),
                lambda_label: String::new(),
            })
            .collect();
        RDCurve::new(label, records).unwrap()
    }

    const QUALITIES: [f64; 5] = [0.82, 0.90, 0.94, 0.965, 0.98];

    fn anchor() -> RDCurve {
        let pts: Vec<(f64, f64)> = QUALITIES
            .iter()
            .enumerate()
            .map(|(i, &m)| (0.1 * 1.9f64.powi(i as i32), m))
            .collect();
        curve("anchor", &pts)
    }

    #[test]
    fn identical_curves_give_zero() {
        let a = anchor();
        let b = anchor();
        let bd = bd_rate(&a, &b).unwrap();
        assert!(bd.abs() < 1e-9, "got {bd}");
    }

    #[test]
    fn constant_rate_scaling_integrates_exactly() {
        let a = anchor();
        let scaled: Vec<(f64, f64)> = a
            .points
            .iter()
            .map(|p| (p.rate_bpp * 0.9, p.msssim))
            .collect();
        let t = curve("test", &scaled);
        let bd = bd_rate(&a, &t).unwrap();
        assert!((bd - -10.0).abs() < 0.1, "got {bd}");

        // Reciprocal comparison: anchor rates x1.25 against the original.
        let up: Vec<(f64, f64)> = a
            .points
            .iter()
            .map(|p| (p.rate_bpp * 1.25, p.msssim))
            .collect();
        let t2 = curve("test2", &up);
        let bd2 = bd_rate(&a, &t2).unwrap();
        assert!((bd2 - 25.0).abs() < 0.25, "got {bd2}");
    }

    #[test]
    fn inverse_comparisons_compose_to_identity() {
        let a = anchor();
        let scaled: Vec<(f64, f64)> = a
            .points
            .iter()
            .map(|p| (p.rate_bpp * 0.85, p.msssim))
            .collect();
        let t = curve("t", &scaled);
        let ab = bd_rate(&a, &t).unwrap();
        let ba = bd_rate(&t, &a).unwrap();
        let product = (1.0 + ab / 100.0) * (1.0 + ba / 100.0);
        assert!((product - 1.0).abs() < 1e-3, "got {product}");
    }

    #[test]
    fn three_point_curves_fit_a_quadratic() {
        let a = curve("a", &[(0.1, 0.85), (0.2, 0.92), (0.4, 0.96)]);
        let t = curve("t", &[(0.09, 0.85), (0.18, 0.92), (0.36, 0.96)]);
        let bd = bd_rate(&a, &t).unwrap();
        assert!((bd - -10.0).abs() < 0.1, "got {bd}");
    }

    #[test]
    fn disjoint_quality_ranges_error() {
        let a = curve("a", &[(0.1, 0.5), (0.2, 0.6)]);
        let t = curve("t", &[(0.1, 0.9), (0.2, 0.95)]);
        assert!(matches!(bd_rate(&a, &t), Err(EvalError::NoOverlap)));
    }
}
