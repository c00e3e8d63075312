use musolve_core::assembly::{assemble_operator, AssembledOperator, DomainMesh};
use musolve_core::measure::Atom;
use musolve_core::minimax::{check_growth, energy, gradient, window_from_eigenvalues, Nonlinearity, WindowVariant};
use nalgebra::DVector;
use proptest::prelude::*;
use std::f64::consts::PI;
use std::sync::OnceLock;

fn operator() -> &'static AssembledOperator {
    static OP: OnceLock<AssembledOperator> = OnceLock::new();
    OP.get_or_init(|| {
        let mesh = DomainMesh::new(0.0, PI, 20).unwrap();
        assemble_operator(&mesh, &[Atom::new(1.0, 1.0), Atom::new(0.3, -0.05)], 0.5).unwrap()
    })
}

fn nonlinearity() -> impl Strategy<Value = Nonlinearity> {
    (0usize..3, -8.0f64..8.0, -5.0f64..15.0).prop_filter_map("nonzero lambda0", |(kind, l0, lb)| match kind {
        0 => Nonlinearity::rational_decay(l0, lb).ok(),
        1 => Nonlinearity::gaussian_decay(l0, lb).ok(),
        _ => Nonlinearity::table(&[(0.3, 0.3 * l0), (1.0, 0.5 * l0), (4.0, -0.2 * l0)], lb).ok(),
    })
}

fn vector(scale: f64) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-1.0f64..1.0, 20).prop_map(move |v| DVector::from_vec(v) * scale)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn energy_even_gradient_odd(nl in nonlinearity(), u in vector(3.0)) {
        let op = operator();
        let (a, b) = (energy(op, &nl, &u), energy(op, &nl, &(-&u)));
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        let g = gradient(op, &nl, &u);
        let g_neg = gradient(op, &nl, &(-&u));
        prop_assert!((&g + &g_neg).amax() <= 1e-12 * g.amax().max(1.0));
    }

    #[test]
    fn central_difference_matches_gradient(
        log_scale in -2.0f64..2.0,
        u in vector(1.0),
        v in vector(1.0),
        l0 in prop::sample::select(vec![-7.0, -2.0, 3.0]),
        smooth in any::<bool>(),
    ) {
        let op = operator();
        let nl = if smooth {
            Nonlinearity::rational_decay(l0, 10.0).unwrap()
        } else {
            Nonlinearity::gaussian_decay(l0, 4.0).unwrap()
        };
        let scale = 10f64.powf(log_scale);
        let (u, v) = (u * scale, v * scale);
        let eps = 1e-6;
        let fd = (energy(op, &nl, &(&u + &v * eps)) - energy(op, &nl, &(&u - &v * eps))) / (2.0 * eps);
        let exact = v.dot(&gradient(op, &nl, &u));
        // Cancellation floor of the difference quotient at this scale.
        let floor = 1e-14 * energy(op, &nl, &u).abs().max(scale * scale) / eps;
        prop_assert!((fd - exact).abs() <= 1e-5 * exact.abs() + floor, "{} vs {}", fd, exact);
    }

    #[test]
    fn growth_bound_holds_on_samples(l0 in -5.0f64..5.0, eps in 0.01f64..2.0, t in -1e4f64..1e4) {
        prop_assume!(l0 != 0.0);
        let nl = Nonlinearity::rational_decay(l0, 0.0).unwrap();
        let g = check_growth(&nl, eps).unwrap();
        prop_assert!(!g.violation);
        // Grid sup, so allow the grid resolution at the maximizer.
        prop_assert!(nl.f(t).abs() <= eps * t.abs() + g.a_epsilon * 1.02 + 1e-12);
    }

    #[test]
    fn window_indices_bracket_the_open_interval(
        mut eig in prop::collection::vec(0.1f64..50.0, 4..12),
        lb in 0.0f64..40.0,
        l0 in -20.0f64..20.0,
    ) {
        prop_assume!(l0.abs() > 1e-3);
        eig.sort_by(f64::total_cmp);
        eig.push(100.0);
        let w = window_from_eigenvalues(&eig, l0, lb).unwrap();
        prop_assert_eq!(w.variant, if l0 < 0.0 { WindowVariant::Standard } else { WindowVariant::Mirrored });
        let inside = eig.iter().filter(|l| **l > w.lower && **l < w.upper).count();
        prop_assert_eq!(w.pairs_predicted, inside);
        if let (Some(h), Some(k)) = (w.h, w.k) {
            prop_assert!(eig[h - 1] > w.lower && eig[k - 1] < w.upper);
            prop_assert!(w.lower_margin.unwrap() > 0.0 && w.upper_margin.unwrap() > 0.0);
            prop_assert!(h == 1 || eig[h - 2] <= w.lower);
            prop_assert!(eig[k] >= w.upper);
        }
    }
}
