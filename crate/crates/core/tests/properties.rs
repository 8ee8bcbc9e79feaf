//! Randomized invariants of the exact solver and the conjugation pass.

use mmot::duality::{self, Potentials};
use mmot::geometry::{dirichlet_marginal, DomainBox};
use mmot::presets::{self, Preset, WeightKind};
use mmot::solver::{self, Instance};
use proptest::prelude::*;

fn tensor_instance(shape: &[usize], seed: u64, cost: &[f64]) -> Instance {
    let d = DomainBox::unit(1).unwrap();
    let marginals = shape.iter().enumerate().map(|(i, &n)| dirichlet_marginal(&d, n, seed * 10 + i as u64).unwrap()).collect();
    let len: usize = shape.iter().product();
    Instance::from_tensor(marginals, cost.iter().cycle().take(len).copied().collect()).unwrap()
}

fn arb_instance() -> impl Strategy<Value = Instance> {
    (prop::collection::vec(2usize..5, 3), any::<u64>(), prop::collection::vec(-5.0f64..5.0, 64))
        .prop_map(|(shape, seed, cost)| tensor_instance(&shape, seed % 10_000, &cost))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn objective_ignores_atom_order(seed in 0u64..500, n in 3usize..6, rot in 1usize..5) {
        let inst = presets::instance(Preset::Gs, 3, n, 2, seed, WeightKind::Dirichlet).unwrap();
        let perm: Vec<usize> = (0..n).map(|a| (a + rot) % n).collect();
        let mut marginals = inst.marginals().to_vec();
        marginals[1] = marginals[1].permuted(&perm).unwrap();
        let relabeled = Instance::new(marginals, inst.cost().unwrap().clone()).unwrap();
        let a = solver::solve_lp(&inst).unwrap().primal_objective();
        let b = solver::solve_lp(&relabeled).unwrap().primal_objective();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn feasible_potentials_bound_the_optimum(inst in arb_instance(), raw in prop::collection::vec(-3.0f64..3.0, 12)) {
        let lp = solver::solve_lp(&inst).unwrap();
        let start = Potentials::new(
            inst.shape().iter().scan(0, |k, &n| {
                let v = raw[*k..*k + n].to_vec();
                *k += n;
                Some(v)
            }).collect(),
        );
        // shift into feasibility, then the conjugation pass keeps it feasible
        let mut offsets = vec![0.0; 3];
        offsets[0] = -start.max_violation(&inst).max(0.0);
        let feasible = start.shifted(&offsets);
        let conj = duality::conjugate_pass(&inst, &feasible).unwrap().potentials;
        prop_assert!(conj.max_violation(&inst) <= 1e-9);
        prop_assert!(feasible.dual_objective(&inst) <= conj.dual_objective(&inst) + 1e-9);
        prop_assert!(conj.dual_objective(&inst) <= lp.primal_objective() + 1e-9);
    }

    #[test]
    fn vertex_support_is_small(inst in arb_instance()) {
        let lp = solver::solve_lp(&inst).unwrap();
        let bound = inst.shape().iter().sum::<usize>() - inst.marginal_count() + 1;
        prop_assert!(lp.coupling.len() <= bound);
        prop_assert!(lp.coupling.max_marginal_error(&inst) < 1e-9);
        prop_assert!((lp.duals.dual_objective(&inst) - lp.primal_objective()).abs() < 1e-9);
    }

    #[test]
    fn conjugation_is_idempotent(inst in arb_instance()) {
        let lp = solver::solve_lp(&inst).unwrap();
        let once = duality::conjugate_pass(&inst, &lp.duals).unwrap().potentials;
        let twice = duality::conjugate_pass(&inst, &once).unwrap().potentials;
        for (a, b) in once.values().iter().flatten().zip(twice.values().iter().flatten()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert!(duality::conjugacy_residual(&inst, &once) < 1e-12);
    }
}
