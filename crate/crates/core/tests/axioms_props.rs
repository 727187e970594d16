use exchange_entropy::axioms::{
    accessible, calibrated_entropy, financial_equilibrium, flanking_states, match_money, run_axiom_suite,
    Accessibility, Flow, Recipient, SuiteConfig, System,
};
use exchange_entropy::partition::EntropyModel;
use proptest::prelude::*;

fn sys(a: f64, b: f64, n: usize, totals: &[f64]) -> System {
    let m = EntropyModel::homogeneous(vec![a, b], n).unwrap();
    let s = m.macro_state(totals).unwrap();
    System::new(m, s)
}

/// Cobb-Douglas coolness: (n a - 1) / M.
fn beta_cd(a: f64, n: usize, money: f64) -> f64 {
    (n as f64 * a - 1.0) / money
}

#[test]
fn matched_amount_follows_the_closed_form() {
    let x = sys(2.0, 1.5, 10, &[40.0, 10.0]);
    let y = sys(3.0, 1.5, 20, &[200.0, 10.0]);
    let (bx, by) = (beta_cd(2.0, 10, 40.0), beta_cd(3.0, 20, 200.0));
    assert!(bx > by);
    let v = financial_equilibrium(&x, &y).unwrap();
    assert_eq!(v.flow, Flow::TowardFirst);
    let m = match_money(&x, &y).unwrap();
    assert_eq!(m.recipient, Recipient::First);
    let expect = (10.0 * 2.0 - 1.0) / by - 40.0;
    assert!((m.amount - expect).abs() < 1e-7 * expect, "{} vs {expect}", m.amount);
    let matched = x.plus_money(m.amount).unwrap();
    assert!(financial_equilibrium(&matched, &y).unwrap().equilibrium);
    assert_eq!(match_money(&matched, &y).unwrap().recipient, Recipient::Neither);
}

#[test]
fn flanks_close_in_on_the_state() {
    let x = sys(2.0, 2.5, 30, &[120.0, 60.0]);
    let mut widths = Vec::new();
    for m in [1.0, 0.1, 0.01] {
        let f = flanking_states(&x, m, 1e-3).unwrap();
        assert!((f.beta[0] - f.beta[1]).abs() <= 1e-6 * f.beta[1]);
        assert!(f.max_beta_step < 0.0);
        widths.push(f.log_z[2] - f.log_z[0]);
    }
    assert!(widths.windows(2).all(|w| w[1] < w[0]), "{widths:?}");
    assert!(widths[2] < 0.01, "{widths:?}");
}

#[test]
fn suite_is_deterministic_given_its_seed() {
    let cfg = SuiteConfig { agents: 30, flow_replicates: 100, ..SuiteConfig::default() };
    let a = run_axiom_suite(&cfg).unwrap();
    let b = run_axiom_suite(&cfg).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn accessibility_is_antisymmetric(m1 in 5.0f64..200.0, g1 in 5.0f64..200.0, m2 in 5.0f64..200.0, g2 in 5.0f64..200.0) {
        let x = sys(2.0, 1.5, 8, &[m1, g1]);
        let y = sys(2.0, 1.5, 8, &[m2, g2]);
        let (sx, sy) = (x.log_z().unwrap(), y.log_z().unwrap());
        let fwd = accessible(&x, &y).unwrap();
        let back = accessible(&y, &x).unwrap();
        let expect = if (sy - sx).abs() <= 8e-9 { Accessibility::Both } else if sy > sx { Accessibility::Forward } else { Accessibility::Backward };
        prop_assert_eq!(fwd, expect);
        let mirrored = match fwd {
            Accessibility::Forward => Accessibility::Backward,
            Accessibility::Backward => Accessibility::Forward,
            other => other,
        };
        prop_assert_eq!(back, mirrored);
        // a state reaches itself both ways
        prop_assert_eq!(accessible(&x, &x).unwrap(), Accessibility::Both);
    }

    #[test]
    fn more_money_needs_a_larger_match(m in 10.0f64..100.0, d1 in 1.0f64..50.0, d2 in 1.0f64..50.0) {
        let y = sys(2.0, 1.5, 10, &[m, 20.0]);
        let lo = sys(2.0, 1.5, 10, &[m + d1.min(d2), 20.0]);
        let hi = sys(2.0, 1.5, 10, &[m + d1.max(d2) + 1.0, 20.0]);
        // y holds the least money, so it is the cooler side and receives
        let a = match_money(&lo, &y).unwrap();
        let b = match_money(&hi, &y).unwrap();
        prop_assert_eq!(a.recipient, Recipient::Second);
        prop_assert!(b.amount > a.amount);
    }

    #[test]
    fn calibrated_entropy_grows_with_money(m in 40.0f64..80.0, d in 0.5f64..9.0) {
        let x = sys(2.0, 2.5, 20, &[m, 30.0]);
        let f = flanking_states(&x, 10.0, 1e-3).unwrap();
        let x0 = System::new(x.model.clone(), f.lower.clone());
        let x1 = System::new(x.model.clone(), f.upper.clone());
        let s = |amount: f64| calibrated_entropy(&x.plus_money(amount).unwrap(), &x0, &x1).unwrap();
        prop_assert!(s(d) > s(0.0));
        prop_assert!(s(0.0) > 0.0 && s(d) < 1.0 + 1e-12);
        prop_assert!((calibrated_entropy(&x1, &x0, &x1).unwrap() - 1.0).abs() < 1e-12);
    }
}
