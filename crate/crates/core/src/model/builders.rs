use std::sync::Arc;

use ndarray::Array2;

use super::spin;
use super::{
    BlbqParams, FreeBasis, Frame, HamiltonianPair, ModelParams, OscillatorParams, SpinHalfParams,
};
use crate::error::{invalid, Error, Result};
use crate::linalg::{
    congruence, eigh, fix_row_signs, is_diagonal, kron, kron_all, max_asymmetry, symmetrize,
    ProductSpace,
};

struct Factor {
    energies: Vec<f64>,
    rotation: Option<Array2<f64>>,
}

fn check_dim(site_dims: &[usize], max_dim: usize) -> Result<usize> {
    let mut d: usize = 1;
    for &k in site_dims {
        d = d.checked_mul(k).ok_or(Error::DimensionTooLarge { dim: usize::MAX, cap: max_dim })?;
    }
    if d > max_dim {
        return Err(Error::DimensionTooLarge { dim: d, cap: max_dim });
    }
    Ok(d)
}

fn check_finite(values: &[(&str, f64)]) -> Result<()> {
    for (name, v) in values {
        if !v.is_finite() {
            return invalid(format!("{name} must be finite, got {v}"));
        }
    }
    Ok(())
}

/// Eigenbasis of a factor Hamiltonian; diagonal factors keep their basis.
fn diagonalize_factor(h: &Array2<f64>) -> Result<Factor> {
    if is_diagonal(h.view()) {
        return Ok(Factor { energies: h.diag().to_vec(), rotation: None });
    }
    let (w, mut rows) = eigh(h.view())?;
    fix_row_signs(&mut rows);
    Ok(Factor { energies: w, rotation: Some(rows.t().to_owned()) })
}

/// Sum of per-site energies over a product of identical sites.
fn product_energies(single: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0];
    for _ in 0..n {
        let mut next = Vec::with_capacity(out.len() * single.len());
        for e in &out {
            for s in single {
                next.push(e + s);
            }
        }
        out = next;
    }
    out
}

fn assemble(
    params: ModelParams,
    site_dims: Vec<usize>,
    system: Factor,
    bath: Factor,
    v_comp: Array2<f64>,
    site_values: Vec<Vec<f64>>,
    system_labels: Option<Vec<f64>>,
) -> Result<HamiltonianPair> {
    let d_s = system.energies.len();
    let d_b = bath.energies.len();
    let rotation = match (&system.rotation, &bath.rotation) {
        (None, None) => None,
        (rs, rb) => {
            let rs = rs.clone().unwrap_or_else(|| Array2::eye(d_s));
            let rb = rb.clone().unwrap_or_else(|| Array2::eye(d_b));
            Some(Arc::new(kron(rs.view(), rb.view())))
        }
    };
    let mut v = match &rotation {
        Some(r) => congruence(r.view(), v_comp.view()),
        None => v_comp,
    };
    let scale = v.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let asym = max_asymmetry(v.view());
    if asym > 1e-12 * scale {
        return Err(Error::NotSymmetric { max_asymmetry: asym });
    }
    symmetrize(&mut v);
    let labels = if system.rotation.is_none() { system_labels } else { None };
    let basis = FreeBasis::new(site_dims, system.energies, bath.energies, labels);
    let h0 = basis.product_energies().to_vec();
    Ok(HamiltonianPair {
        basis: Arc::new(basis),
        h0,
        v,
        params,
        frame: Frame { rotation, site_values },
    })
}

pub fn build_oscillator_chain(p: &OscillatorParams, max_dim: usize) -> Result<HamiltonianPair> {
    if p.n_sites < 1 {
        return invalid("oscillator chain needs n_sites >= 1");
    }
    if p.spin_cutoff < 1 {
        return invalid("oscillator chain needs spin_cutoff >= 1");
    }
    check_finite(&[("h_x", p.h_x), ("j", p.j)])?;
    let d = 2 * p.spin_cutoff + 1;
    let site_dims = vec![d; p.n_sites];
    let dim = check_dim(&site_dims, max_dim)?;

    let s_vals: Vec<f64> = (0..d).map(|k| k as f64 - p.spin_cutoff as f64).collect();
    let eps: Vec<f64> = s_vals.iter().map(|s| s * s).collect();

    let l = spin::shift_down(d);
    let hop = &l + &l.t();
    let space = ProductSpace::new(site_dims.clone());
    let mut v = Array2::zeros((dim, dim));
    for i in 0..p.n_sites {
        space.add_local_term(&mut v, p.h_x, &[(i, &hop)]);
    }
    for i in 0..p.n_sites.saturating_sub(1) {
        space.add_local_term(&mut v, p.j, &[(i, &hop), (i + 1, &hop)]);
    }

    let system = Factor { energies: eps.clone(), rotation: None };
    let bath = Factor { energies: product_energies(&eps, p.n_sites - 1), rotation: None };
    assemble(
        ModelParams::OscillatorChain(p.clone()),
        site_dims,
        system,
        bath,
        v,
        vec![s_vals.clone(); p.n_sites],
        Some(s_vals),
    )
}

pub fn build_blbq_chain(p: &BlbqParams, max_dim: usize) -> Result<HamiltonianPair> {
    if p.n_sites < 2 {
        return invalid("BLBQ chain needs n_sites >= 2");
    }
    if !spin::is_valid_spin(p.spin) {
        return invalid(format!("spin must be a positive multiple of 1/2, got {}", p.spin));
    }
    check_finite(&[("h_z", p.h_z), ("h_x", p.h_x), ("j", p.j), ("delta", p.delta), ("q", p.q)])?;
    let d = spin::spin_dim(p.spin);
    let site_dims = vec![d; p.n_sites];
    let dim = check_dim(&site_dims, max_dim)?;

    let sz = spin::sz(p.spin);
    let sx = spin::sx(p.spin);
    let a = spin::sy_antisym(p.spin);
    let site_h = &sz * p.h_z + &sx * p.h_x;
    let single = diagonalize_factor(&site_h)?;

    // Written coupling W = sum_i X_i with S_y = A/(2i):
    //   Sy Sy = -(A x A)/4,  (Sy Sy)^2 = (A^2 x A^2)/16.
    let sx2 = sx.dot(&sx);
    let sz2 = sz.dot(&sz);
    let a2 = a.dot(&a);
    let space = ProductSpace::new(site_dims.clone());
    let mut w = Array2::zeros((dim, dim));
    for i in 0..p.n_sites - 1 {
        let k = i + 1;
        space.add_local_term(&mut w, 1.0, &[(i, &sx), (k, &sx)]);
        space.add_local_term(&mut w, -0.25, &[(i, &a), (k, &a)]);
        space.add_local_term(&mut w, p.delta, &[(i, &sz), (k, &sz)]);
        space.add_local_term(&mut w, p.q, &[(i, &sx2), (k, &sx2)]);
        space.add_local_term(&mut w, p.q / 16.0, &[(i, &a2), (k, &a2)]);
        space.add_local_term(&mut w, p.q * p.delta, &[(i, &sz2), (k, &sz2)]);
    }
    let v = (&w + &w.t()) * (0.5 * p.j);

    let bath_rotation = single
        .rotation
        .as_ref()
        .map(|r| kron_all(&vec![r.clone(); p.n_sites - 1]));
    let bath = Factor {
        energies: product_energies(&single.energies, p.n_sites - 1),
        rotation: bath_rotation,
    };
    let m_vals = spin::magnetic_numbers(p.spin);
    let system = Factor { energies: single.energies.clone(), rotation: single.rotation.clone() };
    assemble(
        ModelParams::BlbqChain(p.clone()),
        site_dims,
        system,
        bath,
        v,
        vec![m_vals.clone(); p.n_sites],
        Some(m_vals),
    )
}

pub fn build_spin_half_chain(p: &SpinHalfParams, max_dim: usize) -> Result<HamiltonianPair> {
    if p.n_sites < 3 {
        return invalid("spin-1/2 chain needs n_sites >= 3 (probe couples to site 3)");
    }
    check_finite(&[
        ("b_z_sys", p.b_z_sys),
        ("b_x_sys", p.b_x_sys),
        ("b_z_bath", p.b_z_bath),
        ("b_x_bath", p.b_x_bath),
        ("j_z_bath", p.j_z_bath),
        ("j_x_bath", p.j_x_bath),
        ("j_z_sb", p.j_z_sb),
        ("j_x_sb", p.j_x_sb),
    ])?;
    let site_dims = vec![2; p.n_sites];
    let dim = check_dim(&site_dims, max_dim)?;
    let (x, z, sp, sm) = (spin::pauli_x(), spin::pauli_z(), spin::sigma_plus(), spin::sigma_minus());

    let h_s = &z * p.b_z_sys + &x * p.b_x_sys;

    let n_b = p.n_sites - 1;
    let bath_space = ProductSpace::new(vec![2; n_b]);
    let d_b = bath_space.dim();
    let mut h_b = Array2::zeros((d_b, d_b));
    for j in 0..n_b {
        bath_space.add_local_term(&mut h_b, p.b_z_bath, &[(j, &z)]);
        bath_space.add_local_term(&mut h_b, p.b_x_bath, &[(j, &x)]);
    }
    for j in 0..n_b - 1 {
        bath_space.add_local_term(&mut h_b, p.j_z_bath, &[(j, &z), (j + 1, &z)]);
        bath_space.add_local_term(&mut h_b, p.j_x_bath, &[(j, &sp), (j + 1, &sm)]);
        bath_space.add_local_term(&mut h_b, p.j_x_bath, &[(j, &sm), (j + 1, &sp)]);
    }

    let space = ProductSpace::new(site_dims.clone());
    let mut v = Array2::zeros((dim, dim));
    // Site N_m = 3 is index 2.
    space.add_local_term(&mut v, p.j_z_sb, &[(0, &z), (2, &z)]);
    space.add_local_term(&mut v, p.j_x_sb, &[(0, &sp), (2, &sm)]);
    space.add_local_term(&mut v, p.j_x_sb, &[(0, &sm), (2, &sp)]);

    let system = diagonalize_factor(&h_s)?;
    let bath = diagonalize_factor(&h_b)?;
    let m_vals = spin::magnetic_numbers(0.5);
    assemble(
        ModelParams::SpinHalfChain(p.clone()),
        site_dims,
        system,
        bath,
        v,
        vec![m_vals.clone(); p.n_sites],
        Some(m_vals),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn osc(n: usize, s: usize, h_x: f64, j: f64) -> HamiltonianPair {
        build_oscillator_chain(&OscillatorParams { n_sites: n, spin_cutoff: s, h_x, j }, 20_000)
            .unwrap()
    }

    #[test]
    fn single_oscillator_free() {
        let h = osc(1, 1, 0.0, 0.0);
        assert_eq!(h.h0, vec![1.0, 0.0, 1.0]);
        assert!(h.v.iter().all(|x| *x == 0.0));
        assert_eq!(h.basis.sorted_energies(), vec![0.0, 1.0, 1.0]);
        assert_eq!(h.basis.energy_order(), &[1, 0, 2]);
    }

    #[test]
    fn single_oscillator_kinetic() {
        let h = osc(1, 1, 0.5, 0.0);
        let want = ndarray::array![[0.0, 0.5, 0.0], [0.5, 0.0, 0.5], [0.0, 0.5, 0.0]];
        assert_eq!(h.v, want);
    }

    #[test]
    fn dimension_cap() {
        let r = build_oscillator_chain(
            &OscillatorParams { n_sites: 6, spin_cutoff: 3, h_x: 0.1, j: 0.1 },
            20_000,
        );
        assert!(matches!(r, Err(Error::DimensionTooLarge { dim: 117_649, .. })));
        let r = build_oscillator_chain(
            &OscillatorParams { n_sites: 0, spin_cutoff: 3, h_x: 0.1, j: 0.1 },
            20_000,
        );
        assert!(r.is_err());
    }

    #[test]
    fn split_join_bijection() {
        let h = osc(3, 1, 0.1, 0.1);
        let b = &h.basis;
        let mut seen = vec![false; b.dim()];
        for s in 0..b.system_dim() {
            for beta in 0..b.bath_dim() {
                let a = b.join(s, beta);
                assert!(!seen[a]);
                seen[a] = true;
                assert_eq!(b.split(a), (s, beta));
                let e = b.system_energies()[s] + b.bath_energies()[beta];
                assert_eq!(b.energy(a), e);
            }
        }
        assert!(seen.iter().all(|x| *x));
    }

    #[test]
    fn blbq_zeeman_only() {
        let p = BlbqParams { n_sites: 2, spin: 0.5, h_z: 0.7, h_x: 0.0, j: 0.0, delta: 0.3, q: 0.0 };
        let h = build_blbq_chain(&p, 20_000).unwrap();
        // (down,down),(down,up),(up,down),(up,up)
        assert_eq!(h.h0, vec![-0.7, 0.0, 0.0, 0.7]);
        assert!(h.v.iter().all(|x| *x == 0.0));
        assert!(h.rotation().is_none());
    }

    #[test]
    fn spin_half_requires_three_sites() {
        let p = SpinHalfParams {
            n_sites: 2,
            b_z_sys: 1.0,
            b_x_sys: 0.0,
            b_z_bath: 0.0,
            b_x_bath: 0.0,
            j_z_bath: 0.0,
            j_x_bath: 0.0,
            j_z_sb: 0.0,
            j_x_sb: 0.0,
        };
        assert!(build_spin_half_chain(&p, 20_000).is_err());
    }

    #[test]
    fn product_energy_sums() {
        assert_eq!(product_energies(&[0.0, 1.0], 2), vec![0.0, 1.0, 1.0, 2.0]);
        assert_eq!(product_energies(&[3.0], 0), vec![0.0]);
    }
}
