use ndarray::{Array2, Axis};
use thermalab_core::linalg::{eigh, kron};
use thermalab_core::model::{
    build_observable, BlbqParams, ModelParams, ObservableSpec, OscillatorParams, SpinHalfParams, DEFAULT_MAX_DIM,
};
use thermalab_core::spectral::diagonalize;

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
}

fn fig2() -> ModelParams {
    ModelParams::OscillatorChain(OscillatorParams { n_sites: 4, spin_cutoff: 3, h_x: 0.7, j: 0.8 })
}

fn blbq(n: usize, spin: f64, h_z: f64, h_x: f64, j: f64, delta: f64, q: f64) -> ModelParams {
    ModelParams::BlbqChain(BlbqParams { n_sites: n, spin, h_z, h_x, j, delta, q })
}

// Spin-1 matrices written out by hand, basis m = -1, 0, 1.
fn spin1() -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let r = std::f64::consts::SQRT_2;
    let sp = ndarray::array![[0.0, 0.0, 0.0], [r, 0.0, 0.0], [0.0, r, 0.0]];
    let sm = sp.t().to_owned();
    let sz = ndarray::array![[-1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
    (sp, sm, sz)
}

fn computational_total(model: &thermalab_core::model::HamiltonianPair) -> Array2<f64> {
    let h = model.total();
    match model.rotation() {
        Some(r) => r.dot(&h).dot(&r.t()),
        None => h,
    }
}

#[test]
fn heisenberg_spin1_dimer() {
    let model = blbq(2, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0).build(DEFAULT_MAX_DIM).unwrap();
    let spec = diagonalize(&model).unwrap();
    // S_tot(S_tot + 1)/2 - 2 for S_tot = 0, 1, 2
    let want = [-2.0, -1.0, -1.0, -1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
    assert!(close(&spec.energies, &want, 1e-12), "{:?}", spec.energies);
}

#[test]
fn blbq_dimer_matches_ladder_oracle() {
    let (h_z, h_x, j, delta, q) = (0.4, 0.25, 0.9, 0.6, 0.3);
    let model = blbq(2, 1.0, h_z, h_x, j, delta, q).build(DEFAULT_MAX_DIM).unwrap();
    let (sp, sm, sz) = spin1();
    let sx = (&sp + &sm) * 0.5;
    let i3 = Array2::<f64>::eye(3);
    // S_x S_x + S_y S_y = (S+ S- + S- S+)/2; S_y^2 = -(S+ - S-)^2 / 4
    let a = &sp - &sm;
    let sy2 = a.dot(&a) * -0.25;
    let sx2 = sx.dot(&sx);
    let sz2 = sz.dot(&sz);
    let bilinear = (kron(sp.view(), sm.view()) + kron(sm.view(), sp.view())) * 0.5 + kron(sz.view(), sz.view()) * delta;
    let biquad = kron(sx2.view(), sx2.view()) + kron(sy2.view(), sy2.view()) + kron(sz2.view(), sz2.view()) * delta;
    let local = &sz * h_z + &sx * h_x;
    let h = kron(local.view(), i3.view()) + kron(i3.view(), local.view()) + (bilinear + biquad * q) * j;
    let (want, _) = eigh(h.view()).unwrap();
    let spec = diagonalize(&model).unwrap();
    assert!(close(&spec.energies, &want, 1e-10), "{:?} vs {:?}", spec.energies, want);
    let (got, _) = eigh(computational_total(&model).view()).unwrap();
    assert!(close(&got, &want, 1e-10));
}

#[test]
fn blbq_spin_half_zeeman_only() {
    let model = blbq(2, 0.5, 0.6, 0.0, 0.0, 0.5, 0.0).build(DEFAULT_MAX_DIM).unwrap();
    let mut h0 = model.h0.clone();
    h0.sort_by(f64::total_cmp);
    assert!(close(&h0, &[-0.6, 0.0, 0.0, 0.6], 1e-12));
    assert!(model.v.iter().all(|x| x.abs() < 1e-15));
}

#[test]
fn spin_half_lone_zeeman() {
    let p = SpinHalfParams {
        n_sites: 3,
        b_z_sys: 1.0,
        b_x_sys: 0.0,
        b_z_bath: 0.0,
        b_x_bath: 0.0,
        j_z_bath: 0.0,
        j_x_bath: 0.0,
        j_z_sb: 0.0,
        j_x_sb: 0.0,
    };
    let spec = diagonalize(&ModelParams::SpinHalfChain(p).build(DEFAULT_MAX_DIM).unwrap()).unwrap();
    assert!(close(&spec.energies, &[-1.0, -1.0, -1.0, -1.0, 1.0, 1.0, 1.0, 1.0], 1e-12));
}

#[test]
fn spin_half_xx_bath_dimer() {
    let p = SpinHalfParams {
        n_sites: 3,
        b_z_sys: 0.0,
        b_x_sys: 0.0,
        b_z_bath: 0.0,
        b_x_bath: 0.0,
        j_z_bath: 0.0,
        j_x_bath: 1.0,
        j_z_sb: 0.0,
        j_x_sb: 0.0,
    };
    let model = ModelParams::SpinHalfChain(p).build(DEFAULT_MAX_DIM).unwrap();
    // J (s+ s- + s- s+) only couples |ud> and |du>, splitting them by +-J
    let mut bath = model.basis.bath_energies().to_vec();
    bath.sort_by(f64::total_cmp);
    assert!(close(&bath, &[-1.0, 0.0, 0.0, 1.0], 1e-12), "{bath:?}");
}

#[test]
fn position_observable_ranks() {
    let single = ModelParams::OscillatorChain(OscillatorParams { n_sites: 1, spin_cutoff: 1, h_x: 0.0, j: 0.0 })
        .build(DEFAULT_MAX_DIM)
        .unwrap();
    let x = build_observable(&single, &ObservableSpec::PositionSite1).unwrap();
    assert_eq!(x.outcomes, vec![-1.0, 0.0, 1.0]);
    assert_eq!(x.ranks(), vec![1, 1, 1]);
    assert_eq!(x.matrix, Array2::from_diag(&ndarray::arr1(&[-1.0, 0.0, 1.0])));

    let model = fig2().build(DEFAULT_MAX_DIM).unwrap();
    assert_eq!(model.dim(), 2401);
    let x = build_observable(&model, &ObservableSpec::PositionSite1).unwrap();
    assert_eq!(x.outcomes, vec![-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0]);
    assert_eq!(x.ranks(), vec![343; 7]);
    assert!(x.diagonal_in_free_basis);
    assert!(build_observable(&model, &ObservableSpec::SzSite1).is_err());
    assert!(build_observable(&model, &ObservableSpec::SigmaZSite1).is_err());
}

#[test]
fn global_magnetization_ranks() {
    let model = blbq(2, 0.5, 0.3, 0.0, 0.5, 0.7, 0.0).build(DEFAULT_MAX_DIM).unwrap();
    let o = build_observable(&model, &ObservableSpec::SzGlobal).unwrap();
    assert_eq!(o.outcomes, vec![-1.0, 0.0, 1.0]);
    assert_eq!(o.ranks(), vec![1, 2, 1]);
}

#[test]
fn free_hamiltonian_commutes_with_diagonal_projectors() {
    let cases = [
        (fig2(), ObservableSpec::PositionSite1),
        (blbq(3, 1.0, 1.0, 0.0, 0.8, 0.3, 1.5), ObservableSpec::SzGlobal),
        (blbq(3, 1.0, 1.0, 0.2, 0.8, 0.3, 1.5), ObservableSpec::SzSite1),
    ];
    for (params, spec) in cases {
        let model = params.build(DEFAULT_MAX_DIM).unwrap();
        let obs = build_observable(&model, &spec).unwrap();
        if !obs.diagonal_in_free_basis {
            continue;
        }
        for k in 0..obs.n_outcomes() {
            let p = obs.projector(k);
            // [diag(h0), P]_ij = (h0_i - h0_j) P_ij
            let worst = p
                .indexed_iter()
                .map(|((i, j), x)| ((model.h0[i] - model.h0[j]) * x).abs())
                .fold(0.0f64, f64::max);
            assert!(worst < 1e-12, "{spec}: {worst}");
        }
    }
}

fn reverse_sites(h: &Array2<f64>, local: usize, n: usize) -> Array2<f64> {
    let d = h.nrows();
    let perm: Vec<usize> = (0..d)
        .map(|mut a| {
            let mut digits = vec![0; n];
            for i in (0..n).rev() {
                digits[i] = a % local;
                a /= local;
            }
            digits.iter().rev().fold(0, |acc, x| acc * local + x)
        })
        .collect();
    h.select(Axis(0), &perm).select(Axis(1), &perm)
}

#[test]
fn chain_reversal_is_a_symmetry() {
    for (params, local) in [
        (ModelParams::OscillatorChain(OscillatorParams { n_sites: 3, spin_cutoff: 1, h_x: 0.6, j: 0.9 }), 3),
        (blbq(3, 1.0, 0.7, 0.3, 0.8, 0.4, 0.6), 3),
    ] {
        let model = params.build(DEFAULT_MAX_DIM).unwrap();
        let h = computational_total(&model);
        let r = reverse_sites(&h, local, 3);
        assert!(h.iter().zip(r.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        let (e1, _) = eigh(h.view()).unwrap();
        let (e2, _) = eigh(r.view()).unwrap();
        assert!(close(&e1, &e2, 1e-10));
    }
}

#[test]
fn builders_are_pure() {
    let a = blbq(3, 1.0, 1.0, 0.2, 0.8, 0.3, 1.5).build(DEFAULT_MAX_DIM).unwrap();
    let b = blbq(3, 1.0, 1.0, 0.2, 0.8, 0.3, 1.5).build(DEFAULT_MAX_DIM).unwrap();
    assert_eq!(a.v, b.v);
    assert_eq!(a.h0, b.h0);
}

#[test]
fn dimension_cap_is_configurable() {
    assert!(fig2().build(2000).is_err());
    assert!(fig2().build(2401).is_ok());
}

#[test]
fn config_round_trip() {
    let toml_src = r#"
kind = "blbq_chain"
n_sites = 4
spin = 3
h_z = 1.0
h_x = 0.2
j = 0.8
delta = 0.3
q = 1.5
"#;
    let p: ModelParams = toml::from_str(toml_src).unwrap();
    assert_eq!(p, blbq(4, 3.0, 1.0, 0.2, 0.8, 0.3, 1.5));
    let bad = toml_src.replace("q = 1.5", "q = 1.5\nextra = 2");
    assert!(toml::from_str::<ModelParams>(&bad).is_err());
}
