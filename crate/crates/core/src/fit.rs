//! One-dimensional searches and separable least-squares fits.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct ScalarMin {
    pub x: f64,
    pub fx: f64,
    /// The coarse scan bottomed out at an end of the bracket.
    pub at_boundary: bool,
}

/// Golden-section search on [a, b] for a unimodal function.
pub fn golden_section(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (b - a).abs() <= tol * (1.0 + c.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Minimize `f` over [lo, hi] (both > 0): log-spaced scan, then golden
/// refinement around the best scan point.
pub fn minimize_log_scan(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n_scan: usize) -> ScalarMin {
    let n = n_scan.max(3);
    let (llo, lhi) = (lo.ln(), hi.ln());
    let grid: Vec<f64> = (0..n).map(|i| llo + (lhi - llo) * i as f64 / (n - 1) as f64).collect();
    let g = |u: f64| {
        let v = f(u.exp());
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let vals: Vec<f64> = grid.iter().map(|&u| g(u)).collect();
    let mut best = 0;
    for i in 1..n {
        if vals[i] < vals[best] {
            best = i;
        }
    }
    let at_boundary = best == 0 || best == n - 1;
    let a = grid[best.saturating_sub(1)];
    let b = grid[(best + 1).min(n - 1)];
    let (u, fu) = golden_section(&g, a, b, 1e-12);
    let (u, fu) = if fu <= vals[best] { (u, fu) } else { (grid[best], vals[best]) };
    ScalarMin { x: u.exp(), fx: fu, at_boundary }
}

/// Result of fitting y(t) = A exp(-2 gamma t) + B.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DecayFit {
    pub gamma: f64,
    pub amplitude: f64,
    /// Fitted value at t = 0, A + B.
    pub o_start: f64,
    /// Fitted plateau B.
    pub o_end: f64,
    /// RMS deviation of the data from the fit inside the window.
    pub residual: f64,
    pub fit_window: (f64, f64),
    pub n_points: usize,
}

/// Linear least squares for (A, B) at fixed rate; returns (A, B, rss).
fn linear_part(t: &[f64], y: &[f64], rate: f64) -> Option<(f64, f64, f64)> {
    let n = t.len() as f64;
    let (mut se, mut see, mut sy, mut sey) = (0.0, 0.0, 0.0, 0.0);
    for (&ti, &yi) in t.iter().zip(y) {
        let e = (-rate * ti).exp();
        se += e;
        see += e * e;
        sy += yi;
        sey += e * yi;
    }
    let det = see * n - se * se;
    if det.abs() <= 1e-14 * see.max(1.0) * n {
        return None;
    }
    let a = (n * sey - se * sy) / det;
    let b = (see * sy - se * sey) / det;
    let rss = t
        .iter()
        .zip(y)
        .map(|(&ti, &yi)| {
            let r = yi - a * (-rate * ti).exp() - b;
            r * r
        })
        .sum();
    Some((a, b, rss))
}

/// Fit A exp(-2 gamma t) + B by variable projection over gamma.
pub fn fit_exponential_decay(t: &[f64], y: &[f64]) -> Result<DecayFit> {
    if t.len() != y.len() {
        return Err(Error::InvalidParameter("time and value lengths differ".into()));
    }
    if t.len() < 4 {
        return Err(Error::InvalidParameter("need at least 4 points for a decay fit".into()));
    }
    let ymax = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ymin = y.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(ymax - ymin > 1e-12 * (1.0 + ymax.abs().max(ymin.abs()))) {
        return Err(Error::Unidentifiable("series is constant".into()));
    }
    let t0 = t.iter().cloned().fold(f64::INFINITY, f64::min);
    let t1 = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = t1 - t0;
    let mut dt_min = f64::INFINITY;
    let mut sorted = t.to_vec();
    sorted.sort_by(f64::total_cmp);
    for w in sorted.windows(2) {
        if w[1] > w[0] {
            dt_min = dt_min.min(w[1] - w[0]);
        }
    }
    if !(span > 0.0) || !dt_min.is_finite() {
        return Err(Error::InvalidParameter("time grid has zero span".into()));
    }
    let gamma_lo = 0.01 / span;
    let gamma_hi = 20.0 / dt_min;
    let rss = |g: f64| linear_part(t, y, 2.0 * g).map_or(f64::INFINITY, |(_, _, r)| r);
    let m = minimize_log_scan(rss, gamma_lo, gamma_hi, 240);
    let resid = (m.fx / t.len() as f64).sqrt();
    if m.at_boundary || !m.fx.is_finite() {
        return Err(Error::FitNotConverged {
            reason: format!("decay rate ran to the search boundary near {:e}", m.x),
            residual: resid,
        });
    }
    let (a, b, _) = linear_part(t, y, 2.0 * m.x).expect("finite optimum");
    Ok(DecayFit {
        gamma: m.x,
        amplitude: a,
        o_start: a + b,
        o_end: b,
        residual: resid,
        fit_window: (t0, t1),
        n_points: t.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_exponential() {
        let t: Vec<f64> = (0..200).map(|i| i as f64 * 0.25).collect();
        let y: Vec<f64> = t.iter().map(|t| 3.0 * (-2.0 * 0.1 * t).exp() + 1.0).collect();
        let f = fit_exponential_decay(&t, &y).unwrap();
        assert!((f.gamma - 0.1).abs() < 1e-6, "{}", f.gamma);
        assert!((f.o_end - 1.0).abs() < 1e-6);
        assert!((f.o_start - 4.0).abs() < 1e-6);
        assert!(f.residual < 1e-8);
    }

    #[test]
    fn constant_is_unidentifiable() {
        let t: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y = vec![2.0; 20];
        assert!(matches!(fit_exponential_decay(&t, &y), Err(Error::Unidentifiable(_))));
    }

    #[test]
    fn linear_ramp_does_not_converge() {
        // A straight line is best matched by ever slower exponentials.
        let t: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let y: Vec<f64> = t.iter().map(|t| 1.0 - 0.01 * t).collect();
        assert!(matches!(fit_exponential_decay(&t, &y), Err(Error::FitNotConverged { .. })));
    }

    #[test]
    fn golden_finds_parabola_minimum() {
        let (x, fx) = golden_section(&|x: f64| (x - 1.3).powi(2) + 2.0, 0.0, 5.0, 1e-12);
        assert!((x - 1.3).abs() < 1e-6 && (fx - 2.0).abs() < 1e-12);
    }
}
