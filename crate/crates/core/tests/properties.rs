use proptest::prelude::*;
use ratio_reject::harness::{
    compare_rejectors, default_tau_grid, generate_task, sweep, RejectorKind, TaskGenSpec,
};
use ratio_reject::oracle::exhaustive_rejector_search;
use ratio_reject::rejectors::{
    chow_rule, joint_ratio, marginal_ratio, rejection_objective, threshold_reject, RejectionCost,
    Temperature, Threshold,
};
use ratio_reject::{chow_equivalence_scan, conditional_risks, FiniteTask, LossKind, RejectMask};

fn lam(v: f64) -> Temperature {
    Temperature::new(v).unwrap()
}

fn task_strategy() -> impl Strategy<Value = FiniteTask> {
    (
        1usize..9,
        2usize..5,
        0.2f64..3.0,
        0.2f64..3.0,
        0.0f64..2.0,
        any::<u64>(),
    )
        .prop_map(|(n, l, a, b, noise, seed)| {
            generate_task(&TaskGenSpec {
                n_inputs: n,
                n_labels: l,
                marginal_concentration: a,
                posterior_concentration: b,
                model_noise: noise,
                seed,
            })
            .unwrap()
        })
}

fn kind_strategy() -> impl Strategy<Value = LossKind> {
    prop::sample::select(LossKind::ALL.to_vec())
}

proptest! {
    #[test]
    fn ratios_are_normalized(task in task_strategy(), kind in kind_strategy(), l in 0.1f64..20.0) {
        for rej in [marginal_ratio(kind, &task, lam(l)).unwrap(), joint_ratio(kind, &task, lam(l)).unwrap()] {
            let mass: f64 = rej.scores().iter().zip(task.marginal().as_slice()).map(|(a, p)| a * p).sum();
            prop_assert!((mass - 1.0).abs() < 1e-12);
            prop_assert!(rej.scores().iter().all(|&a| a > 0.0));
        }
    }

    #[test]
    fn higher_risk_gets_lower_marginal_ratio(task in task_strategy(), kind in kind_strategy(), l in 0.1f64..20.0) {
        let rej = marginal_ratio(kind, &task, lam(l)).unwrap();
        let risks = conditional_risks(kind, &task);
        for a in 0..task.n_inputs() {
            for b in 0..task.n_inputs() {
                if risks[a] < risks[b] {
                    prop_assert!(rej.score(a) >= rej.score(b));
                }
            }
        }
    }

    #[test]
    fn rejection_rate_is_monotone(task in task_strategy(), kind in kind_strategy(), l in 1.01f64..10.0) {
        for rejector in RejectorKind::ALL {
            let grid = default_tau_grid(&task, kind, lam(l), rejector).unwrap();
            let res = sweep(&task, kind, lam(l), rejector, &grid).unwrap();
            for w in res.rows.windows(2) {
                prop_assert!(w[0].rejection_rate <= w[1].rejection_rate);
            }
            for row in &res.rows {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&row.rejection_rate));
            }
        }
    }

    #[test]
    fn threshold_masks_are_nested(task in task_strategy(), kind in kind_strategy(), l in 0.1f64..20.0, a in 0.0f64..3.0, b in 0.0f64..3.0) {
        let rej = joint_ratio(kind, &task, lam(l)).unwrap();
        let (lo, hi) = (a.min(b), a.max(b));
        let small = threshold_reject(&rej, Threshold::ratio(lo).unwrap()).unwrap();
        let large = threshold_reject(&rej, Threshold::ratio(hi).unwrap()).unwrap();
        prop_assert!(small.is_subset_of(&large));
    }

    #[test]
    fn chow_beats_any_mask(task in task_strategy(), kind in kind_strategy(), c in 0.0f64..2.0, code in any::<u64>()) {
        let c = RejectionCost::new(c).unwrap();
        let best = rejection_objective(kind, &task, &chow_rule(kind, &task, c), c).unwrap();
        let other = RejectMask::from_bits(code, task.n_inputs());
        prop_assert!(best <= rejection_objective(kind, &task, &other, c).unwrap() + 1e-12);
    }
}

#[test]
fn selective_risk_falls_as_tau_grows() {
    for seed in 0..100 {
        let task = generate_task(&TaskGenSpec {
            seed,
            ..TaskGenSpec::default()
        })
        .unwrap();
        for kind in [LossKind::ZeroOne, LossKind::Log] {
            let grid = default_tau_grid(&task, kind, lam(1.5), RejectorKind::Marginal).unwrap();
            let res = sweep(&task, kind, lam(1.5), RejectorKind::Marginal, &grid).unwrap();
            for w in res.rows.windows(2) {
                assert!(
                    w[1].selective_risk <= w[0].selective_risk + 1e-15,
                    "seed {seed} {kind}"
                );
            }
        }
    }
}

#[test]
fn matched_thresholds_never_violate_containment() {
    for seed in 0..1000 {
        let task = generate_task(&TaskGenSpec {
            seed,
            n_inputs: 6,
            ..TaskGenSpec::default()
        })
        .unwrap();
        let l = 1.0 + (seed % 7) as f64;
        let kind = LossKind::ALL[(seed % 3) as usize];
        let rej = joint_ratio(kind, &task, lam(l)).unwrap();
        let top = rej.scores().iter().copied().fold(0.0, f64::max) * 1.1;
        let grid: Vec<f64> = (0..100).map(|i| top * i as f64 / 99.0).collect();
        let report = compare_rejectors(kind, &task, lam(l), &grid).unwrap();
        assert_eq!(report.total_violations(), 0, "seed {seed}");
    }
}

#[test]
fn exhaustive_search_agrees_with_chow() {
    for seed in 0..200 {
        let task = generate_task(&TaskGenSpec {
            seed,
            ..TaskGenSpec::default()
        })
        .unwrap();
        for kind in LossKind::ALL {
            let c = RejectionCost::new(0.3).unwrap();
            let (_, best) = exhaustive_rejector_search(kind, &task, c).unwrap();
            let chow = rejection_objective(kind, &task, &chow_rule(kind, &task, c), c).unwrap();
            assert!((chow - best).abs() <= 1e-12);
        }
    }
}

#[test]
fn equivalence_scan_always_succeeds() {
    for seed in 0..100 {
        let task = generate_task(&TaskGenSpec {
            seed,
            n_labels: 4,
            ..TaskGenSpec::default()
        })
        .unwrap();
        let kind = LossKind::ALL[(seed % 3) as usize];
        let c = RejectionCost::new(0.05 * (seed % 20) as f64).unwrap();
        let found = chow_equivalence_scan(kind, &task, lam(0.5 + (seed % 4) as f64), c).unwrap();
        assert!(found.is_some(), "seed {seed}");
    }
}
