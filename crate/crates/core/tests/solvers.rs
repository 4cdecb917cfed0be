use proptest::prelude::*;

use labfm::compact::{OptimizerConfig, Scheme};
use labfm::geometry::{generate_nodes, DomainSpec, NodeSet};
use labfm::global::{assemble_poisson, solve_poisson, Field};
use labfm::krylov::SolverConfig;
use labfm::solvers::{self, BurgersConfig, BurgersOperators};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn analytic_series_is_converged_at_thirty_terms(x in 0.0f64..1.0, t in 0.01f64..2.0) {
        let a = solvers::burgers_analytic(x, t, 100.0, 30).unwrap();
        let b = solvers::burgers_analytic(x, t, 100.0, 40).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn analytic_solution_is_odd_about_the_origin(x in 0.0f64..0.5, t in 0.0f64..1.0) {
        let a = solvers::burgers_analytic(x, t, 100.0, 30).unwrap();
        let b = solvers::burgers_analytic(1.0 - x, t, 100.0, 30).unwrap();
        prop_assert!((a + b).abs() < 1e-8, "{a} {b}");
    }
}

#[test]
fn poisson_solution_satisfies_the_assembled_system() {
    let nodes = generate_nodes(&DomainSpec::punctured_unit_square(), 1.0 / 20.0, 7).unwrap();
    let cfg = SolverConfig::poisson();
    for label in ['a', 'd', 'h'] {
        let system = assemble_poisson(&nodes, Scheme::from_label(label).unwrap(), &OptimizerConfig::default()).unwrap();
        let f = Field::from_fn(&nodes, solvers::poisson_source);
        let g = Field::from_fn(&nodes, solvers::poisson_solution);
        let (phi, report) = solve_poisson(&system, &f, &g, &cfg).unwrap();
        let mut rhs = system.alpha.matvec(&f.values).unwrap();
        for (i, r) in rhs.iter_mut().enumerate() {
            if system.dirichlet[i] {
                *r = g.values[i];
            }
        }
        let lhs = system.a.matvec(&phi.values).unwrap();
        let res: f64 = lhs.iter().zip(&rhs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let norm: f64 = rhs.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(res / norm <= 10.0 * cfg.tol, "scheme {label}: residual {}", res / norm);
        assert!(report.residual <= cfg.tol);
        for (i, d) in system.dirichlet.iter().enumerate() {
            if *d {
                assert!((phi.values[i] - g.values[i]).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn burgers_on_a_lattice_stays_independent_of_y() {
    let lattice = NodeSet::lattice(DomainSpec::unit_periodic(), 20, 20).unwrap();
    let scheme = Scheme::from_label('a').unwrap();
    let ops = BurgersOperators::assemble(&lattice, scheme, &OptimizerConfig::default()).unwrap();
    let cfg = BurgersConfig {
        s: 1.0 / 20.0,
        t_end: 0.1,
        ..BurgersConfig::default()
    };
    let run = solvers::run_burgers_on(&lattice, &ops, &cfg, &SolverConfig::default()).unwrap();
    assert!(run.diverged_at.is_none());
    assert!(run.max_abs_v < 1e-10, "v grew to {}", run.max_abs_v);
    assert!(run.momentum_drift < 1e-6, "momentum drift {}", run.momentum_drift);
    assert!(run.max_l2 < 0.1);
}
