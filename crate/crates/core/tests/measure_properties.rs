use musolve_core::measure::{series_measure, Atom, Density, DensityPiece, MeasureError, SpectralMeasure};
use proptest::prelude::*;

fn atoms_strategy() -> impl Strategy<Value = Vec<Atom>> {
    prop::collection::btree_map(0u32..=1000, -3.0f64..3.0, 1..6).prop_map(|m| {
        m.into_iter()
            .filter(|(_, w)| *w != 0.0)
            .map(|(s, w)| Atom::new(s as f64 / 1000.0, w))
            .collect()
    })
}

fn density_strategy() -> impl Strategy<Value = Option<Density>> {
    prop::option::of(
        (
            prop::collection::vec(-2.0f64..2.0, 1..5),
            prop::collection::vec(-2.0f64..2.0, 1..4),
            0.2f64..0.8,
        )
            .prop_map(|(c1, c2, cut)| {
                Density::new(vec![DensityPiece::new(0.0, cut, c1), DensityPiece::new(cut, 1.0, c2)]).unwrap()
            }),
    )
}

proptest! {
    #[test]
    fn jordan_split_recombines(atoms in atoms_strategy(), density in density_strategy()) {
        let mu = SpectralMeasure::new(atoms.clone(), density.clone(), 0.5).unwrap();
        let (pos, neg) = mu.decompose().unwrap();
        for a in &atoms {
            let p = pos.atoms.iter().find(|b| b.s == a.s).map_or(0.0, |b| b.weight);
            let n = neg.atoms.iter().find(|b| b.s == a.s).map_or(0.0, |b| b.weight);
            prop_assert!(p >= 0.0 && n >= 0.0);
            prop_assert!(p == 0.0 || n == 0.0);
            prop_assert_eq!(p - n, a.weight);
        }
        prop_assert_eq!(pos.atoms.len() + neg.atoms.len(), atoms.len());
        if let Some(d) = &density {
            for i in 0..=200 {
                let s = i as f64 / 200.0;
                let (p, n) = (pos.density_at(s), neg.density_at(s));
                prop_assert!(p >= 0.0 && n >= 0.0);
                prop_assert!((p - n - d.eval(s)).abs() <= 1e-15 * (1.0 + d.eval(s).abs()));
            }
        }
    }

    #[test]
    fn gamma_is_the_minimal_ratio(
        high in 0.1f64..5.0,
        low in 0.0f64..5.0,
        s_low in 0.0f64..0.49,
    ) {
        let mut atoms = vec![Atom::new(1.0, high)];
        if low > 0.0 {
            atoms.push(Atom::new(s_low, -low));
        }
        let mu = SpectralMeasure::new(atoms, None, 0.5).unwrap();
        let r = mu.validate_hypotheses().unwrap();
        prop_assert!((r.gamma - r.negative_low_mass / r.positive_high_mass).abs() <= 1e-15 * r.gamma.max(1.0));
        prop_assert!(r.negative_low_mass <= r.gamma * r.positive_high_mass * (1.0 + 1e-15));
        let smaller = r.gamma * (1.0 - 1e-9);
        if r.gamma > 0.0 {
            prop_assert!(r.negative_low_mass > smaller * r.positive_high_mass);
        }
        prop_assert!(r.s_sharp.unwrap() >= r.s_bar);
    }

    #[test]
    fn to_atoms_conserves_signed_mass(
        order in 1usize..8,
        coeffs in prop::collection::vec(-3.0f64..3.0, 1..16),
        atoms in atoms_strategy(),
    ) {
        // Degree ≤ 2·order − 1 is integrated exactly.
        let deg = coeffs.len().min(2 * order);
        let piece = DensityPiece::new(0.1, 0.9, coeffs[..deg].to_vec());
        let d = Density::new(vec![piece]).unwrap();
        let atoms: Vec<Atom> = atoms.into_iter().filter(|a| a.s < 0.1 || a.s > 0.9).collect();
        let mu = SpectralMeasure::new(atoms, Some(d), 0.5).unwrap();
        let reduced = mu.to_atoms(order);
        let total: f64 = reduced.iter().map(|a| a.weight).sum();
        prop_assert!((total - mu.total_signed_mass()).abs() <= 1e-12);
    }
}

#[test]
fn gauss_rule_reproduces_first_moment() {
    let d = Density::new(vec![DensityPiece::new(0.0, 1.0, vec![0.0, 1.0])]).unwrap();
    let mu = SpectralMeasure::new(vec![], Some(d), 0.5).unwrap();
    let atoms = mu.to_atoms(3);
    assert_eq!(atoms.len(), 3);
    let moment: f64 = atoms.iter().map(|a| a.weight).sum();
    assert!((moment - 0.5).abs() < 1e-15);
}

#[test]
fn linear_density_is_clipped() {
    let d = Density::new(vec![DensityPiece::new(0.0, 1.0, vec![-0.5, 1.0])]).unwrap();
    let mu = SpectralMeasure::new(vec![], Some(d), 0.5).unwrap();
    let (pos, neg) = mu.decompose().unwrap();
    assert!((pos.mass(0.0, 1.0) - 0.125).abs() < 1e-15);
    assert!((neg.mass(0.0, 1.0) - 0.125).abs() < 1e-15);
    let r = mu.validate_hypotheses().unwrap();
    assert!(r.all_hold());
    assert!((r.gamma - 1.0).abs() < 1e-14);
}

#[test]
fn geometric_series_tail() {
    let c: Vec<f64> = (0..=20).map(|k| 0.5f64.powi(k)).collect();
    let s: Vec<f64> = (0..=20).map(|k| 1.0 - 0.04 * k as f64).collect();
    let series = series_measure(&c, &s, 2f64.powi(-19), 0.5).unwrap();
    assert!(series.dropped_tail <= 2f64.powi(-19));
    assert!(series.report.all_hold());
    assert!(matches!(
        series_measure(&[1.0, 0.5], &[0.5, 1.0], 1.0, 0.5),
        Err(MeasureError::NonMonotoneExponents(_))
    ));
}
