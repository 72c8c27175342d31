use proptest::prelude::*;

use condiff::fem::solve_fem;
use condiff::network::{forward_triple, init_params};
use condiff::precision::{narrow_exp, Narrowed};
use condiff::problem::Endpoint;
use condiff::sampling::{exponential_rule, random_rule, uniform_rule};
use condiff::{solve_analytic, Architecture, Formulation, Method, NetworkParams, Precision, ProblemSpec};

fn spec_strategy() -> impl Strategy<Value = ProblemSpec> {
    (0.01f64..10.0, prop_oneof![-3.0f64..-0.2, 0.2f64..3.0], -2.0f64..2.0, 1e-3f64..1.0, 0.1f64..5.0, -1.0f64..1.0, -1.0f64..1.0)
        .prop_map(|(epsilon, drift, source, alpha, kappa, g0, g1)| ProblemSpec {
            epsilon,
            drift,
            source,
            alpha,
            kappa,
            g0,
            g1,
            lambda: 0.5,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn analytic_solution_satisfies_problem(spec in spec_strategy(), x in 0.0f64..=1.0) {
        let sol = solve_analytic(&spec).unwrap();
        let (_, du) = sol.eval(x).unwrap();
        let ddu = sol.second_derivative(x).unwrap();
        let terms = [-spec.epsilon * ddu, spec.drift * du, -spec.source];
        let scale = terms.iter().fold(1e-300f64, |m, t| m.max(t.abs()));
        prop_assert!(terms.iter().sum::<f64>().abs() <= 1e-9 * scale);
        for end in Endpoint::BOTH {
            let y = if end == Endpoint::Left { 0.0 } else { 1.0 };
            let (u, du) = sol.eval(y).unwrap();
            let lhs = spec.alpha * du * end.normal() + spec.kappa * u;
            let scale = (spec.alpha * du).abs().max((spec.kappa * u).abs()).max(spec.g(end).abs()).max(1e-12);
            prop_assert!((lhs - spec.g(end)).abs() <= 1e-8 * scale);
        }
    }

    #[test]
    fn analytic_solution_is_linear_in_data(spec in spec_strategy(), s in -3.0f64..3.0, x in 0.0f64..=1.0) {
        let mut scaled = spec;
        scaled.source *= s;
        scaled.g0 *= s;
        scaled.g1 *= s;
        let a = solve_analytic(&spec).unwrap().eval(x).unwrap().0;
        let b = solve_analytic(&scaled).unwrap().eval(x).unwrap().0;
        prop_assert!((b - s * a).abs() <= 1e-9 * a.abs().max(1.0) * s.abs().max(1.0));
    }

    #[test]
    fn fem_system_is_solved(spec in spec_strategy(), n in 3usize..400) {
        let sys = solve_fem(&spec, n).unwrap();
        let c = sys.coeffs.clone().unwrap();
        let r = sys.apply(&c);
        let scale = sys.rhs.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        for (a, b) in r.iter().zip(&sys.rhs) {
            prop_assert!((a - b).abs() <= 1e-8 * scale);
        }
    }

    #[test]
    fn quadrature_weights_sum_to_domain_length(k in 1usize..2000, end in 0.1f64..500.0, seed in any::<u64>()) {
        for rule in [uniform_rule(k, end).unwrap(), random_rule(k, end, seed).unwrap()] {
            let total: f64 = rule.bulk_weights.iter().sum();
            prop_assert!((total - end).abs() <= 1e-10 * end);
            prop_assert!(rule.bulk_points.iter().all(|&x| x > 0.0 && x < end));
            prop_assert_eq!(rule.boundary_points, [0.0, end]);
        }
    }

    #[test]
    fn exponential_points_stay_inside(eps in 1e-3f64..10.0, k in 1usize..200, seed in any::<u64>()) {
        let spec = ProblemSpec::benchmark(eps);
        let rule = exponential_rule(k, k, &spec, seed).unwrap();
        let d = rule.density.unwrap();
        prop_assert!(d.points.iter().all(|&x| x > 0.0 && x < 1.0));
        prop_assert!(d.weights.iter().all(|&w| w > 0.0 && w.is_finite()));
    }

    #[test]
    fn rounding_is_idempotent(v in -6e4f64..6e4) {
        for p in Precision::ALL {
            let r = p.round(v);
            prop_assert_eq!(p.round(r), r);
            prop_assert!((r - v).abs() <= v.abs() * 2f64.powi(-10) + 1e-7);
        }
    }

    #[test]
    fn narrowed_exponentials_are_representable(e in -800.0f64..800.0) {
        for p in Precision::ALL {
            match narrow_exp(e, p) {
                Narrowed::Finite(v) => prop_assert!(v >= p.min_positive() && v <= p.max_finite()),
                Narrowed::Underflow => prop_assert!(e < 0.0),
                Narrowed::Overflow => prop_assert!(e > 0.0),
            }
        }
    }

    #[test]
    fn network_is_deterministic_and_smooth(seed in 0u64..1000, x in -2.0f64..2.0) {
        let arch = Architecture::standard();
        let p = init_params(&arch, seed, Precision::Double);
        prop_assert_eq!(&p, &init_params(&arch, seed, Precision::Double));
        let t = forward_triple(&p, &arch, x).unwrap();
        let h = 1e-5;
        let fd = (forward_triple(&p, &arch, x + h).unwrap().value - forward_triple(&p, &arch, x - h).unwrap().value) / (2.0 * h);
        prop_assert!((fd - t.dvalue).abs() <= 1e-6 * t.dvalue.abs().max(1e-2));
    }

    #[test]
    fn stored_params_are_representable(seed in 0u64..1000) {
        let arch = Architecture::standard();
        for p in Precision::ALL {
            let params = init_params(&arch, seed, p);
            prop_assert!(params.as_slice().iter().all(|&v| p.round(v) == v));
            let again = NetworkParams::from_vec(&arch, params.as_slice().to_vec(), p).unwrap();
            prop_assert_eq!(again, params);
        }
    }

    #[test]
    fn energy_boundary_density_is_convex_quadratic(eps in 0.01f64..10.0, v in -5.0f64..5.0) {
        // S(v) = β v²/2 with g = 0, β ≥ 0 under the coercivity condition
        for method in [Method::W, Method::Wz, Method::RWz] {
            let f = Formulation::new(method, ProblemSpec::benchmark(eps)).unwrap();
            for end in Endpoint::BOTH {
                let s = f.boundary_density(v, 0.0, end, Precision::Double).unwrap();
                prop_assert!(s >= 0.0);
                let s2 = f.boundary_density(2.0 * v, 0.0, end, Precision::Double).unwrap();
                prop_assert!((s2 - 4.0 * s).abs() <= 1e-9 * s.abs().max(1e-12));
            }
        }
    }
}
