use becker_doring::analysis::norms::{embedding_constant, h_norm, mass_moment, moment_norm};
use becker_doring::analysis::perturbation::remove_mass_moment;
use becker_doring::dynamics::rhs;
use becker_doring::interp::k_exact;
use becker_doring::model::CoefficientModel;
use becker_doring::{Equilibrium, Model, Operators};
use proptest::prelude::*;

fn penrose(alpha: f64, mu: f64, q: f64, n: usize) -> Model {
    CoefficientModel::penrose(alpha, mu, q, 2.0, n).unwrap()
}

/// Zero-mass vector with entries of order one, built from raw draws.
fn zero_mass(raw: &[f64], q: &[f64]) -> Vec<f64> {
    let mut h = raw[..q.len()].to_vec();
    remove_mass_moment(&mut h, q);
    h
}

fn params() -> impl Strategy<Value = (f64, f64, f64, usize)> {
    (0.2f64..1.0, 0.0f64..0.9, 0.2f64..2.0, 8usize..60)
}

fn setup(alpha: f64, mu: f64, q: f64, n: usize, frac: f64) -> (Model, Equilibrium) {
    let m = penrose(alpha, mu, q, n);
    let eq = Equilibrium::at_fraction(&m, frac).unwrap();
    (m, eq)
}

const ETA: f64 = 0.3;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kinetic_rhs_conserves_mass((alpha, mu, q, n) in params(), c in prop::collection::vec(0.0f64..3.0, 60)) {
        let m = penrose(alpha, mu, q, n);
        let c = &c[..n];
        let dc = rhs(&m, c).unwrap();
        let moment: f64 = dc.iter().enumerate().map(|(k, d)| (k + 1) as f64 * d).sum();
        let scale: f64 = dc.iter().enumerate().map(|(k, d)| (k + 1) as f64 * d.abs()).sum::<f64>() + f64::MIN_POSITIVE;
        prop_assert!(moment.abs() <= 1e-13 * scale, "{moment} vs {scale}");
    }

    #[test]
    fn dirichlet_form_matches_quadratic_form(
        (alpha, mu, q, n) in params(),
        frac in 0.1f64..0.9,
        raw in prop::collection::vec(-1.0f64..1.0, 60),
    ) {
        let (m, eq) = setup(alpha, mu, q, n, frac);
        let bundle = Operators::assemble(&m, &eq).unwrap();
        let h = zero_mass(&raw, &eq.q);
        let (quad, dir) = bundle.dirichlet_form(&h);
        prop_assert!(quad <= 0.0);
        prop_assert!((quad + dir).abs() <= 1e-12 * quad.abs().max(f64::MIN_POSITIVE), "{quad} {dir}");
    }

    #[test]
    fn linear_operators_preserve_zero_mass(
        (alpha, mu, q, n) in params(),
        g in -0.5f64..0.5,
        raw in prop::collection::vec(-1.0f64..1.0, 60),
    ) {
        let (m, eq) = setup(alpha, mu, q, n, 0.5);
        let bundle = Operators::assemble(&m, &eq).unwrap();
        let h = zero_mass(&raw, &eq.q);
        let scale = moment_norm(&h, &eq.q, 1.0);
        for op in [bundle.l().clone(), bundle.gamma().clone(), bundle.f(g)] {
            let out = Operators::apply(&op, &h);
            let drift = mass_moment(&out, &eq.q);
            let out_scale = moment_norm(&out, &eq.q, 0.0) + scale;
            prop_assert!(drift.abs() <= 1e-13 * out_scale, "{drift}");
        }
    }

    #[test]
    fn norms_interleave(raw in prop::collection::vec(-1.0f64..1.0, 40), m in 0.0f64..3.0, dk in 0.0f64..3.0) {
        let (_, eq) = setup(0.5, 0.5, 1.0, 40, 0.5);
        let h = zero_mass(&raw, &eq.q);
        let low = moment_norm(&h, &eq.q, m);
        let high = moment_norm(&h, &eq.q, m + dk);
        prop_assert!(low <= high * (1.0 + 1e-14));
    }

    #[test]
    fn x1_embeds_in_h(raw in prop::collection::vec(-1.0f64..1.0, 40), frac in 0.1f64..0.9) {
        let (_, eq) = setup(0.5, 0.5, 1.0, 40, frac);
        let x1 = moment_norm(&raw, &eq.q, 0.0);
        let h = h_norm(&raw, &eq.q);
        prop_assert!(x1 <= embedding_constant(&eq.q) * h * (1.0 + 1e-14));
    }

    #[test]
    fn k_functional_is_monotone_bounded_and_homogeneous(
        raw in prop::collection::vec(-1.0f64..1.0, 30),
        s in -10.0f64..10.0,
        ds in 0.0f64..5.0,
        lambda in -4.0f64..4.0,
    ) {
        let (_, eq) = setup(0.5, 0.5, 1.0, 30, 0.5);
        let u = zero_mass(&raw, &eq.q);
        let x1 = moment_norm(&u, &eq.q, 0.0);
        let slack = 1e-13 * x1;
        let k1 = k_exact(s, &u, ETA, &eq.q).value;
        let k2 = k_exact(s + ds, &u, ETA, &eq.q).value;
        prop_assert!(k1 <= k2 + slack);
        prop_assert!(k2 <= x1 + slack);
        let scaled: Vec<f64> = u.iter().map(|x| lambda * x).collect();
        let ks = k_exact(s, &scaled, ETA, &eq.q).value;
        prop_assert!((ks - lambda.abs() * k1).abs() <= 1e-12 * ks.max(k1) + lambda.abs() * slack);
    }

    #[test]
    fn k_functional_is_subadditive_and_concave_in_exp_s(
        a in prop::collection::vec(-1.0f64..1.0, 30),
        b in prop::collection::vec(-1.0f64..1.0, 30),
        t1 in 1e-4f64..1e4,
        t2 in 1e-4f64..1e4,
    ) {
        let (_, eq) = setup(0.5, 0.5, 1.0, 30, 0.5);
        let u = zero_mass(&a, &eq.q);
        let v = zero_mass(&b, &eq.q);
        let w: Vec<f64> = u.iter().zip(&v).map(|(x, y)| x + y).collect();
        let slack = 1e-13 * (moment_norm(&u, &eq.q, 0.0) + moment_norm(&v, &eq.q, 0.0));
        let s = t1.ln();
        let sum = k_exact(s, &u, ETA, &eq.q).value + k_exact(s, &v, ETA, &eq.q).value;
        prop_assert!(k_exact(s, &w, ETA, &eq.q).value <= sum + slack);
        let mid = k_exact((0.5 * (t1 + t2)).ln(), &u, ETA, &eq.q).value;
        let chord = 0.5 * (k_exact(t1.ln(), &u, ETA, &eq.q).value + k_exact(t2.ln(), &u, ETA, &eq.q).value);
        prop_assert!(mid + slack >= chord, "{mid} < {chord}");
    }
}

#[test]
fn single_precision_pipeline() {
    let m = CoefficientModel::<f32>::penrose(0.5, 0.5, 1.0, 2.0, 40).unwrap();
    let eq = becker_doring::Equilibrium32::at_fraction(&m, 0.5).unwrap();
    let c: Vec<f32> = eq.q.iter().enumerate().map(|(k, q)| q * (1.0 + 0.1 * ((k % 3) as f32 - 1.0))).collect();
    let dc = rhs(&m, &c).unwrap();
    let moment: f32 = dc.iter().enumerate().map(|(k, d)| (k + 1) as f32 * d).sum();
    let scale: f32 = dc.iter().enumerate().map(|(k, d)| (k + 1) as f32 * d.abs()).sum();
    assert!(moment.abs() <= 1e-5 * scale);
    let bundle = becker_doring::Operators32::assemble(&m, &eq).unwrap();
    let mut h: Vec<f32> = (0..40).map(|k| ((k * 7 % 5) as f32 - 2.0) * 0.1).collect();
    remove_mass_moment(&mut h, &eq.q);
    let (quad, dir) = bundle.dirichlet_form(&h);
    assert!((quad + dir).abs() <= 1e-5 * quad.abs());
    let gap = bundle.spectral_gap().unwrap().lambda_c;
    let gap64 = Operators::assemble(&penrose(0.5, 0.5, 1.0, 40), &Equilibrium::at_fraction(&penrose(0.5, 0.5, 1.0, 40), 0.5).unwrap())
        .unwrap()
        .spectral_gap()
        .unwrap()
        .lambda_c;
    assert!((gap - gap64).abs() <= 1e-4 * gap64, "{gap} vs {gap64}");
}
