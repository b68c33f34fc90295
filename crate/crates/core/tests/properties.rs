use nalgebra::DMatrix;
use passive_sgd::analysis::quadrature::integrate_with_breaks;
use passive_sgd::analysis::solve_liapunov;
use passive_sgd::{normalized_weights, KernelFamily, KernelSpec, RngStream, SamplingDensity};
use proptest::prelude::*;
use rand::RngCore;

fn family() -> impl Strategy<Value = KernelFamily> {
    prop_oneof![Just(KernelFamily::Gaussian), Just(KernelFamily::Laplace)]
}

fn points(dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-50.0..50.0f64, dim), 1..40)
}

fn case() -> impl Strategy<Value = (KernelFamily, f64, Vec<f64>, Vec<Vec<f64>>)> {
    (1usize..6).prop_flat_map(|n| {
        (family(), 0.01..5.0f64, prop::collection::vec(-50.0..50.0f64, n), points(n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn weights_lie_on_simplex((fam, mu, alpha, pts) in case()) {
        let k = KernelSpec::new(fam, alpha.len(), mu).unwrap();
        let w = normalized_weights(&k, &alpha, &pts).unwrap();
        prop_assert_eq!(w.values.len(), pts.len());
        prop_assert!(w.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let total: f64 = w.values.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12, "sum {}", total);
    }

    #[test]
    fn weights_ignore_kernel_normalization((fam, mu, alpha, pts) in case()) {
        let k = KernelSpec::new(fam, alpha.len(), mu).unwrap();
        let w = normalized_weights(&k, &alpha, &pts).unwrap();
        // unnormalized log kernel, shifted by its own maximum
        let logs: Vec<f64> = pts
            .iter()
            .map(|p| {
                let d: Vec<f64> = p.iter().zip(&alpha).map(|(t, a)| t - a).collect();
                k.ln_eval(&d).unwrap() - k.ln_peak()
            })
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = raw.iter().sum();
        for (got, r) in w.values.iter().zip(&raw) {
            prop_assert!((got - r / total).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_are_translation_invariant((fam, mu, alpha, pts) in case(), shift in -20.0..20.0f64) {
        let k = KernelSpec::new(fam, alpha.len(), mu).unwrap();
        let w = normalized_weights(&k, &alpha, &pts).unwrap();
        let a2: Vec<f64> = alpha.iter().map(|a| a + shift).collect();
        let p2: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().map(|t| t + shift).collect()).collect();
        let w2 = normalized_weights(&k, &a2, &p2).unwrap();
        for (x, y) in w.values.iter().zip(&w2.values) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn kernel_is_symmetric(fam in family(), mu in 0.01..5.0f64, x in prop::collection::vec(-20.0..20.0f64, 1..6)) {
        let k = KernelSpec::new(fam, x.len(), mu).unwrap();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        prop_assert_eq!(k.ln_eval(&x).unwrap(), k.ln_eval(&neg).unwrap());
        prop_assert!(k.ln_eval(&x).unwrap() <= k.ln_peak() + 1e-12);
    }

    #[test]
    fn kernel_factorizes_over_coordinates(fam in family(), mu in 0.05..5.0f64, x in prop::collection::vec(-5.0..5.0f64, 2..6)) {
        let k = KernelSpec::new(fam, x.len(), mu).unwrap();
        let k1 = KernelSpec::new(fam, 1, mu).unwrap();
        let sum: f64 = x.iter().map(|&v| k1.ln_eval(&[v]).unwrap()).sum();
        prop_assert!((k.ln_eval(&x).unwrap() - sum).abs() < 1e-10);
    }

    #[test]
    fn rng_streams_are_reproducible(seed in any::<u64>(), stream in any::<u64>(), idx in 0u64..1000) {
        let mut a = RngStream::new(seed, stream).split(idx);
        let mut b = RngStream::new(seed, stream).split(idx);
        let xa: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        prop_assert_eq!(&xa, &xb);
        let mut c = RngStream::new(seed, stream).split(idx + 1);
        let xc: Vec<u64> = (0..16).map(|_| c.next_u64()).collect();
        prop_assert_ne!(xa, xc);
    }

    #[test]
    fn density_draws_are_reproducible(seed in any::<u64>(), scale in 0.1..30.0f64, n in 1usize..6) {
        let pi = SamplingDensity::normal(n, scale).unwrap();
        let mut a = RngStream::new(seed, 0);
        let mut b = RngStream::new(seed, 0);
        for _ in 0..8 {
            prop_assert_eq!(pi.draw(&mut a), pi.draw(&mut b));
        }
    }
}

#[test]
fn kernels_integrate_to_one() {
    for fam in [KernelFamily::Gaussian, KernelFamily::Laplace] {
        for mu in [0.05, 0.2, 1.0, 3.0] {
            let k = KernelSpec::new(fam, 1, mu).unwrap();
            let w = 80.0 * mu;
            let e = integrate_with_breaks(&mut |x| k.eval(&[x]).unwrap(), &[-w, 0.0, w], 1e-12).unwrap();
            assert!((e.value - 1.0).abs() < 1e-9, "{fam:?} {mu}: {}", e.value);
        }
    }
}

#[test]
fn split_streams_are_uncorrelated() {
    let root = RngStream::new(42, 0);
    let n = 200_000;
    let mut a = root.split(0);
    let mut b = root.split(1);
    let mut cov = 0.0;
    for _ in 0..n {
        cov += a.standard_normal() * b.standard_normal();
    }
    // standard error 1/sqrt(n)
    assert!((cov / n as f64).abs() < 5.0 / (n as f64).sqrt());
}

fn random_spd(n: usize, rng: &mut RngStream) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.standard_normal());
    &a * a.transpose() + DMatrix::identity(n, n) * 0.5
}

fn kronecker_solve(h: &DMatrix<f64>, sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let n = h.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let op = eye.kronecker(h) + h.kronecker(&eye);
    let rhs = DMatrix::from_column_slice(n * n, 1, sigma.as_slice());
    let x = op.lu().solve(&rhs).expect("nonsingular");
    DMatrix::from_column_slice(n, n, x.as_slice())
}

#[test]
fn liapunov_matches_kronecker_oracle_on_random_instances() {
    let mut rng = RngStream::new(2024, 9);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let n = 1 + i % 10;
        let h = random_spd(n, &mut rng);
        let sigma = random_spd(n, &mut rng);
        let r = solve_liapunov(&h, &sigma).unwrap();
        worst = worst.max(r.residual);
        let oracle = kronecker_solve(&h, &sigma);
        let rel = (&r.p - &oracle).norm() / oracle.norm();
        assert!(rel < 1e-9, "n={n}: relative gap {rel}");
        assert!((&r.p - r.p.transpose()).norm() < 1e-12);
    }
    assert!(worst < 1e-10, "worst residual {worst}");
}
