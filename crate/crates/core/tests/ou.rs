use thermalab_core::ou::{simulate_ou, OuParams, OuScheme};

fn params(x0: f64, dt_step: f64) -> OuParams {
    OuParams { k: 1.0, gamma_friction: 1.0, diffusion: 0.5, x0, dt_step, t_final: 40.0 }
}

#[test]
fn variance_does_not_depend_on_x0() {
    let a = simulate_ou(&params(0.0, 0.01), 500, 17, 50, OuScheme::EulerMaruyama).unwrap();
    let b = simulate_ou(&params(3.0, 0.01), 500, 17, 50, OuScheme::EulerMaruyama).unwrap();
    // same noise, so x0 only shifts every path by the same deterministic amount
    for (va, vb) in a.var.iter().zip(&b.var).skip(1) {
        assert!((va - vb).abs() <= 1e-9 * va.max(1e-12), "{va} vs {vb}");
    }
    let p = params(3.0, 0.01);
    for (t, m) in b.times.iter().zip(&b.mean) {
        let want = p.mean_at(*t);
        assert!((m - want).abs() < 0.1 + 0.02 * want.abs(), "t={t}: {m} vs {want}");
    }
}

#[test]
fn euler_bias_halves_with_the_step() {
    let exact = params(0.0, 0.1).stationary_variance();
    let mut bias = Vec::new();
    for h in [0.1, 0.05] {
        let p = params(0.0, h);
        let s = simulate_ou(&p, 20_000, 5, 1, OuScheme::EulerMaruyama).unwrap();
        let est = s.late_variance(5.0 / p.rate()).unwrap();
        // discrete-time stationary variance of the Euler recursion
        let rh = p.rate() * h;
        let discrete = exact / (1.0 - rh / 2.0);
        assert!((est - discrete).abs() / discrete < 0.01, "h={h}: {est} vs {discrete}");
        bias.push(est / exact - 1.0);
    }
    let ratio = bias[0] / bias[1];
    assert!((1.6..2.4).contains(&ratio), "bias {bias:?}");

    let s = simulate_ou(&params(0.0, 0.1), 20_000, 5, 1, OuScheme::Exact).unwrap();
    let est = s.late_variance(5.0).unwrap();
    assert!((est - exact).abs() / exact < 0.01, "exact sampler {est} vs {exact}");
}
