//! One-dimensional searches over the range parameter.

use crate::error::{Result, SglmmError};

/// Multiplicative neighbours of the current range tried by the grid step.
pub const PHI_GRID_FACTORS: [f64; 5] = [0.8, 0.9, 1.0, 1.1, 1.25];

/// Outcome of a range search.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiSearch {
    pub phi: f64,
    pub value: f64,
    pub evaluations: usize,
    /// Candidates whose evaluation failed and were skipped.
    pub skipped: Vec<(f64, String)>,
}

/// Evaluates `f` at `phi · factor` for each factor and returns the best.
/// Ties go to the smaller range. Failing candidates are skipped.
pub fn grid_neighbors(phi: f64, factors: &[f64], phi_max: f64, mut f: impl FnMut(f64) -> Result<f64>) -> Result<PhiSearch> {
    let mut cands: Vec<f64> = factors.iter().map(|&c| (phi * c).min(phi_max)).filter(|&c| c > 0.0).collect();
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    let mut best: Option<(f64, f64)> = None;
    let mut skipped = Vec::new();
    for &c in &cands {
        match f(c) {
            Ok(v) if v.is_finite() => {
                if best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((c, v));
                }
            }
            Ok(v) => skipped.push((c, format!("non-finite objective {v}"))),
            Err(e) => skipped.push((c, e.to_string())),
        }
    }
    let (phi, value) = best.ok_or_else(|| SglmmError::Optimization("every range candidate failed".into()))?;
    Ok(PhiSearch { phi, value, evaluations: cands.len(), skipped })
}

/// Golden-section maximization of `f` on `[lo, hi]` to absolute tolerance
/// `tol`. Failing evaluations count as `−∞`.
pub fn golden_section(lo: f64, hi: f64, tol: f64, mut f: impl FnMut(f64) -> Result<f64>) -> Result<PhiSearch> {
    if !(lo < hi) || !(tol > 0.0) {
        return Err(SglmmError::InvalidInput(format!("bad golden-section bracket [{lo}, {hi}] / tol {tol}")));
    }
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut skipped = Vec::new();
    let mut evaluations = 0;
    let mut eval = |x: f64, skipped: &mut Vec<(f64, String)>| {
        evaluations += 1;
        match f(x) {
            Ok(v) if v.is_finite() => v,
            Ok(v) => {
                skipped.push((x, format!("non-finite objective {v}")));
                f64::NEG_INFINITY
            }
            Err(e) => {
                skipped.push((x, e.to_string()));
                f64::NEG_INFINITY
            }
        }
    };
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = eval(c, &mut skipped);
    let mut fd = eval(d, &mut skipped);
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eval(c, &mut skipped);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eval(d, &mut skipped);
        }
    }
    let (phi, value) = if fc >= fd { (c, fc) } else { (d, fd) };
    if !value.is_finite() {
        return Err(SglmmError::Optimization("every range candidate failed".into()));
    }
    Ok(PhiSearch { phi, value, evaluations, skipped })
}

/// Bounded range maximization on `[φ/4, min(4φ, φ_max)]` to tolerance `1e−3·φ`.
pub fn bounded_maximize(phi: f64, phi_max: f64, f: impl FnMut(f64) -> Result<f64>) -> Result<PhiSearch> {
    let hi = (4.0 * phi).min(phi_max);
    golden_section(phi / 4.0, hi.max(phi / 4.0 * (1.0 + 1e-9)), 1e-3 * phi, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_picks_peak_and_breaks_ties_low() {
        let peaked = grid_neighbors(1.0, &PHI_GRID_FACTORS, f64::INFINITY, |p| Ok(-(p - 1.1f64).powi(2))).unwrap();
        assert!((peaked.phi - 1.1).abs() < 1e-12);
        // symmetric around 0.95: 0.9 and 1.0 tie
        let tie = grid_neighbors(1.0, &PHI_GRID_FACTORS, f64::INFINITY, |p| Ok(-((p - 0.95f64).abs() * 1e3).round())).unwrap();
        assert!((tie.phi - 0.9).abs() < 1e-12);
    }

    #[test]
    fn grid_skips_failures() {
        let r =
            grid_neighbors(
                1.0,
                &PHI_GRID_FACTORS,
                f64::INFINITY,
                |p| {
                    if p > 1.05 {
                        Err(SglmmError::Numerical("boom".into()))
                    } else {
                        Ok(p)
                    }
                },
            )
            .unwrap();
        assert_eq!(r.phi, 1.0);
        assert_eq!(r.skipped.len(), 2);
        assert!(grid_neighbors(1.0, &PHI_GRID_FACTORS, f64::INFINITY, |_| Err(SglmmError::Numerical("x".into()))).is_err());
    }

    #[test]
    fn golden_section_concave() {
        // f(x) = ln x − x / 0.3 peaks at 0.3
        let r = bounded_maximize(0.2, f64::INFINITY, |x| Ok(x.ln() - x / 0.3)).unwrap();
        assert!((r.phi - 0.3).abs() < 1e-3, "{}", r.phi);
        let r = golden_section(0.0, 2.0, 1e-6, |x| Ok(-(x - 1.234f64).powi(2))).unwrap();
        assert!((r.phi - 1.234).abs() < 1e-6);
    }
}
