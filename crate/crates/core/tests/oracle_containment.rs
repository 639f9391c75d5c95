//! Oracle values against computed bounds on random instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recourse_core::fc::{build_constraints, build_objective, compute_bounds_fc};
use recourse_core::lp::DenseSimplex;
use recourse_core::model::{descendants, Action, Classifier, ConfoundingSpec, FactualInstance};
use recourse_core::oracle::{random_instance, random_instance_on, OracleConfounding};
use recourse_core::pc::{pc_grid_certify_with, pc_local_bounds, PcLocalOptions, PcProblem};
use recourse_core::response::ResponseSpace;

const RESOLUTION: f64 = 0.05;

type Shape = (&'static [usize], &'static [(usize, usize)], ConfoundingSpec);

fn random_table_classifier(rng: &mut ChaCha8Rng, size: usize) -> Classifier {
    Classifier::Table((0..size).map(|_| rng.random::<f64>()).collect())
}

#[test]
fn fc_bounds_contain_the_oracle() {
    let mut checked = 0;
    let mut seed = 0u64;
    while checked < 60 {
        seed += 1;
        let scm = random_instance(seed, 3, 2, OracleConfounding::Arbitrary).unwrap();
        let m = scm.model();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = scm.observational_distribution().unwrap();
        let Some(xf_idx) = (0..p.len()).find(|&i| p.get(i) >= 0.01) else { continue };
        let targets: Vec<usize> = (0..m.len()).filter(|&i| !descendants(m, &[i]).unwrap().0.is_empty()).collect();
        if targets.is_empty() {
            continue;
        }
        let t = targets[rng.random_range(0..targets.len())];
        let xf = FactualInstance::new(m, m.decode(xf_idx)).unwrap();
        let a = Action::new(m, &[(t, 1 - xf.values()[t])]).unwrap();
        let h = random_table_classifier(&mut rng, p.len());
        let space = ResponseSpace::new(m).unwrap();
        let system = build_constraints(&space, &p).unwrap();
        let obj = build_objective(m, &space, &system, &h, &xf, &a).unwrap();
        let b = compute_bounds_fc(&system, &obj, &DenseSimplex::default()).unwrap();
        let truth = scm.counterfactual_expectation(&h, &xf, Some(&a)).unwrap();
        assert!(b.lb - 1e-6 <= truth && truth <= b.ub + 1e-6, "seed {seed}: {truth} not in {b:?}");
        checked += 1;
    }
}

#[test]
fn certified_pc_bounds_nest_between_oracle_local_and_fc() {
    let shapes: [Shape; 6] = [
        (&[2, 2], &[(0, 1)], ConfoundingSpec::none()),
        (&[2, 2], &[(0, 1)], ConfoundingSpec::partial(vec![vec![], vec![0]])),
        (&[2, 2, 2], &[(0, 2)], ConfoundingSpec::none()),
        (&[2, 2, 2], &[(1, 2)], ConfoundingSpec::partial(vec![vec![], vec![], vec![1]])),
        (&[3, 2], &[(0, 1)], ConfoundingSpec::none()),
        (&[2, 2, 2], &[(0, 1), (1, 2)], ConfoundingSpec::none()),
    ];
    let mut worst_gap: f64 = 0.0;
    for seed in 0..60u64 {
        let (cards, edges, spec) = &shapes[seed as usize % shapes.len()];
        let scm = random_instance_on(seed, cards, edges, OracleConfounding::Factorised(spec.clone())).unwrap();
        let m = scm.model();
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let p = scm.observational_distribution().unwrap();
        let xf_idx = (0..p.len()).max_by(|&a, &b| p.get(a).total_cmp(&p.get(b))).unwrap();
        let xf = FactualInstance::new(m, m.decode(xf_idx)).unwrap();
        let source = edges[0].0;
        let a = Action::new(m, &[(source, 1 - xf.values()[source])]).unwrap();
        let h = random_table_classifier(&mut rng, p.len());
        let space = ResponseSpace::new(m).unwrap();
        let system = build_constraints(&space, &p).unwrap();
        let obj = build_objective(m, &space, &system, &h, &xf, &a).unwrap();
        let fc = compute_bounds_fc(&system, &obj, &DenseSimplex::default()).unwrap();
        let problem = PcProblem::new(m, &space, &system, &obj).unwrap();
        let local = pc_local_bounds(&problem, &PcLocalOptions::default()).unwrap();
        let grid = pc_grid_certify_with(&problem, RESOLUTION, Some((local.lb, local.ub))).unwrap();
        let truth = scm.counterfactual_expectation(&h, &xf, Some(&a)).unwrap();
        println!(
            "seed {seed}: truth {truth:.4} fc [{:.4},{:.4}] grid [{:.4},{:.4}] local [{:.4},{:.4}]",
            fc.lb, fc.ub, grid.lb, grid.ub, local.lb, local.ub
        );
        // fc contains grid contains local, and grid contains the truth.
        assert!(fc.lb <= grid.lb + 1e-6 && grid.ub <= fc.ub + 1e-6, "seed {seed}");
        assert!(grid.lb - 1e-6 <= truth && truth <= grid.ub + 1e-6, "seed {seed}");
        assert!(grid.lb - 1e-6 <= local.lb && local.ub <= grid.ub + 1e-6, "seed {seed}");
        let gap = (local.lb - grid.lb).max(grid.ub - local.ub);
        assert!(gap <= RESOLUTION, "seed {seed}: local/grid gap {gap}");
        worst_gap = worst_gap.max(gap);
    }
    println!("worst local/grid gap {worst_gap}");
}
