//! Single-site operator matrices. Basis states are ordered by ascending
//! quantum number: m = -S, ..., S for spins and s = -S, ..., S for the
//! discretized oscillator.

use ndarray::Array2;

/// Number of local states for spin `s` (a positive multiple of 1/2).
pub fn spin_dim(s: f64) -> usize {
    (2.0 * s).round() as usize + 1
}

/// True if `s` is a positive integer or half-integer.
pub fn is_valid_spin(s: f64) -> bool {
    s.is_finite() && s > 0.0 && ((2.0 * s) - (2.0 * s).round()).abs() < 1e-12
}

/// Quantum numbers -S..S in ascending order.
pub fn magnetic_numbers(s: f64) -> Vec<f64> {
    (0..spin_dim(s)).map(|k| k as f64 - s).collect()
}

pub fn sz(s: f64) -> Array2<f64> {
    Array2::from_diag(&ndarray::Array1::from(magnetic_numbers(s)))
}

/// Raising operator S+ with <m+1|S+|m> = sqrt(S(S+1) - m(m+1)).
pub fn splus(s: f64) -> Array2<f64> {
    let d = spin_dim(s);
    let ms = magnetic_numbers(s);
    let mut out = Array2::zeros((d, d));
    for k in 0..d - 1 {
        let m = ms[k];
        out[[k + 1, k]] = (s * (s + 1.0) - m * (m + 1.0)).sqrt();
    }
    out
}

pub fn sminus(s: f64) -> Array2<f64> {
    splus(s).t().to_owned()
}

pub fn sx(s: f64) -> Array2<f64> {
    (splus(s) + sminus(s)) * 0.5
}

/// Real antisymmetric `S+ - S-`; S_y = A / (2i).
pub fn sy_antisym(s: f64) -> Array2<f64> {
    splus(s) - sminus(s)
}

/// Ladder shift L = sum_s |s><s+1| on a d-level site.
pub fn shift_down(d: usize) -> Array2<f64> {
    let mut l = Array2::zeros((d, d));
    for k in 0..d.saturating_sub(1) {
        l[[k, k + 1]] = 1.0;
    }
    l
}

pub fn pauli_x() -> Array2<f64> {
    ndarray::array![[0.0, 1.0], [1.0, 0.0]]
}

/// Pauli z in the (down, up) ordering.
pub fn pauli_z() -> Array2<f64> {
    ndarray::array![[-1.0, 0.0], [0.0, 1.0]]
}

/// sigma+ = |up><down| in the (down, up) ordering.
pub fn sigma_plus() -> Array2<f64> {
    ndarray::array![[0.0, 0.0], [1.0, 0.0]]
}

pub fn sigma_minus() -> Array2<f64> {
    sigma_plus().t().to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn comm(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
        a.dot(b) - b.dot(a)
    }

    #[test]
    fn su2_algebra() {
        for &s in &[0.5, 1.0, 1.5, 3.0] {
            // [S+, S-] = 2 Sz
            let c = comm(&splus(s), &sminus(s));
            let err = (&c - &(sz(s) * 2.0)).iter().fold(0.0f64, |m, x| m.max(x.abs()));
            assert!(err < 1e-12, "s={s}");
            // Casimir S^2 = Sx^2 + Sy^2 + Sz^2, with Sy^2 = -A^2/4
            let a = sy_antisym(s);
            let cas = sx(s).dot(&sx(s)) - a.dot(&a) * 0.25 + sz(s).dot(&sz(s));
            let d = spin_dim(s);
            for i in 0..d {
                for j in 0..d {
                    let want = if i == j { s * (s + 1.0) } else { 0.0 };
                    assert!((cas[[i, j]] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn spin_validity() {
        assert!(is_valid_spin(0.5) && is_valid_spin(3.0));
        assert!(!is_valid_spin(0.3) && !is_valid_spin(0.0) && !is_valid_spin(-1.0));
        assert_eq!(spin_dim(0.5), 2);
        assert_eq!(magnetic_numbers(1.0), vec![-1.0, 0.0, 1.0]);
    }
}
