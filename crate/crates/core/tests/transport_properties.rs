use proptest::prelude::*;
use wgflow::transport::{check_moment_distance_bound, check_triangle_binomial, monotone_plan, w2, w2_squared};
use wgflow::{DomainSpec, QuantileMeasure};

fn measure(n: usize) -> impl Strategy<Value = QuantileMeasure> {
    (-5.0f64..5.0, prop::collection::vec(0.0f64..1.0, n - 1)).prop_map(|(start, gaps)| {
        let mut x = vec![start];
        for g in gaps {
            x.push(x[x.len() - 1] + g);
        }
        QuantileMeasure::from_quantiles(x, DomainSpec::Line).unwrap()
    })
}

fn triple(n: usize) -> impl Strategy<Value = (QuantileMeasure, QuantileMeasure, QuantileMeasure)> {
    (measure(n), measure(n), measure(n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn metric_axioms((a, b, c) in triple(50)) {
        let ab = w2(&a, &b).unwrap();
        prop_assert_eq!(ab, w2(&b, &a).unwrap());
        prop_assert_eq!(w2(&a, &a).unwrap(), 0.0);
        if a.positions() != b.positions() {
            prop_assert!(ab > 0.0);
        }
        let slack = 1e-12 * (1.0 + ab);
        prop_assert!(w2(&a, &c).unwrap() <= ab + w2(&b, &c).unwrap() + slack);
    }

    #[test]
    fn translation_equivariance((a, b, _) in triple(50), c in -3.0f64..3.0) {
        let d = w2(&a, &b).unwrap();
        let dt = w2(&a.translated(c).unwrap(), &b.translated(c).unwrap()).unwrap();
        prop_assert!((d - dt).abs() <= 1e-12 * (1.0 + d));
    }

    #[test]
    fn binomial_and_moment_margins((rho, nu, eta) in triple(50)) {
        let scale = 1.0 + rho.second_moment() + nu.second_moment() + eta.second_moment();
        prop_assert!(check_triangle_binomial(&rho, &nu, &eta).unwrap() >= -1e-12 * scale);
        let (lo, hi) = check_moment_distance_bound(&rho, &nu).unwrap();
        prop_assert!(lo >= -1e-12 * scale && hi >= -1e-12 * scale);
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn monotone_pairing_beats_every_permutation() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    for n in 2..=6 {
        for _ in 0..20 {
            let mut x: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let mut y: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            x.sort_by(f64::total_cmp);
            y.sort_by(f64::total_cmp);
            // equal weights: every atom carries 1/n
            let monotone: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64;
            for p in permutations(n) {
                let cost: f64 = (0..n).map(|i| (x[i] - y[p[i]]).powi(2)).sum::<f64>() / n as f64;
                assert!(monotone <= cost + 1e-12);
            }
            let mu = QuantileMeasure::from_quantiles(x, DomainSpec::Line).unwrap();
            let nu = QuantileMeasure::from_quantiles(y, DomainSpec::Line).unwrap();
            let plan = monotone_plan(&mu, &nu).unwrap();
            assert_eq!(plan.cost(), w2_squared(&mu, &nu).unwrap());
        }
    }
}
