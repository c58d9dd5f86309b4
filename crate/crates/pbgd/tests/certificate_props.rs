mod common;

use pbgd::data::GaussianStream;
use pbgd::diagnostics::{
    hyperclean_constants, landscape_grid, mismatch_terms, pl_ratio, pl_ratio_from, pl_report,
    positive_mismatch, PlMode, PlRatio, ReprCertificateObserver,
};
use pbgd::numerics::{singular_values, solve, symmetric_eigenvalues};
use pbgd::penalty::InnerInit;
use pbgd::problems::{example1, sigmoid, sigmoid_prime, BilevelProblem};
use pbgd::solvers::{Algorithm, Init, JacobiParams, TSchedule};
use pbgd::Matrix;
use proptest::prelude::*;

use common::{uniform_matrix, unit_hyperclean, unit_repr, UNIT_U_BAR};

const PL_SLACK: f64 = 1e-8;

/// Smallest singular value above the relative cutoff, squared.
fn sigma_star_sq(m: &Matrix) -> f64 {
    let s = singular_values(m).unwrap();
    let cutoff = 1e-10 * s[0];
    s.into_iter()
        .filter(|&x| x > cutoff)
        .fold(f64::INFINITY, f64::min)
        .powi(2)
}

/// Symmetric matrix with spectrum mapped affinely onto `[lo, hi]`.
fn spd(rng: &mut GaussianStream, n: usize, lo: f64, hi: f64) -> Matrix {
    let q = rng.normal_matrix(n, n, 0.0, 1.0);
    let g = q.t_matmul(&q);
    let eig = symmetric_eigenvalues(&g).unwrap();
    let (emax, emin) = (eig[0], eig[n - 1]);
    let scale = (hi - lo) / (emax - emin).max(1e-12);
    g.scale(scale)
        .add(&Matrix::identity(n).scale(lo - scale * emin))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn pl_constant_of_composed_quadratics(
        seed in any::<u64>(),
        d in 1usize..=4,
        mu1 in 0.1f64..2.0,
        mu2 in 0.1f64..2.0,
    ) {
        let mut rng = GaussianStream::new(seed);
        let (p1, p2) = (d + 1, d + 2);
        let a = rng.normal_matrix(p1, d, 0.0, 1.0);
        let b = rng.normal_matrix(p2, d, 0.0, 1.0);
        let h1 = spd(&mut rng, p1, mu1, mu1 + 2.0);
        let h2 = spd(&mut rng, p2, mu2, mu2 + 2.0);
        let c1 = rng.normal_matrix(p1, 1, 0.0, 1.0);
        let c2 = rng.normal_matrix(p2, 1, 0.0, 1.0);
        let value = |z: &Matrix| {
            let (r1, r2) = (a.matmul(z).sub(&c1), b.matmul(z).sub(&c2));
            0.5 * r1.dot(&h1.matmul(&r1)) + 0.5 * r2.dot(&h2.matmul(&r2))
        };
        let grad = |z: &Matrix| {
            let (r1, r2) = (a.matmul(z).sub(&c1), b.matmul(z).sub(&c2));
            a.t_matmul(&h1.matmul(&r1)).add(&b.t_matmul(&h2.matmul(&r2)))
        };
        let lhs = a.t_matmul(&h1.matmul(&a)).add(&b.t_matmul(&h2.matmul(&b)));
        let rhs = a.t_matmul(&h1.matmul(&c1)).add(&b.t_matmul(&h2.matmul(&c2)));
        let optimum = value(&solve(&lhs, &rhs).unwrap());
        let bound = (mu1 * sigma_star_sq(&a)).min(mu2 * sigma_star_sq(&b));
        for _ in 0..500 {
            let z = rng.normal_matrix(d, 1, 0.0, 3.0);
            if let PlRatio::Finite(r) = pl_ratio(value, grad, &z, optimum).unwrap() {
                prop_assert!(r >= bound - PL_SLACK, "ratio {r:e} < bound {bound:e}");
            }
        }
    }

    #[test]
    fn report_infimum_bounds_every_sample(seed in any::<u64>()) {
        let mut rng = GaussianStream::new(seed);
        let p = example1();
        let points: Vec<Matrix> = (0..50).map(|_| uniform_matrix(&mut rng, 2, 1, -3.0, 3.0)).collect();
        let split = |z: &Matrix| (Matrix::scalar(z.get(0, 0)), Matrix::scalar(z.get(1, 0)));
        let value = |z: &Matrix| { let (u, v) = split(z); p.f(&u, &v) };
        let grad = |z: &Matrix| {
            let (u, v) = split(z);
            Matrix::column(&[p.grad_f_u(&u, &v).item(), p.grad_f_v(&u, &v).item()])
        };
        let report = pl_report(PlMode::Joint, value, grad, |_| 0.0, &points).unwrap();
        prop_assert_eq!(report.sample_count, points.len());
        for z in &points {
            let r = pl_ratio(value, grad, z, 0.0).unwrap().value();
            prop_assert!(report.measured_mu <= r);
        }
    }

    #[test]
    fn repr_trajectory_satisfies_pl_certificate(seed in any::<u64>(), gamma in 0.5f64..20.0) {
        let mut rng = GaussianStream::new(seed);
        let init = Init {
            u0: rng.normal_matrix(6, 8, 0.0, 0.5),
            v0: rng.normal_matrix(8, 2, 0.0, 0.5),
            w0: rng.normal_matrix(8, 2, 0.0, 0.5),
        };
        let p = unit_repr(seed).at_initialization(&init.u0).unwrap();
        let mut cert = ReprCertificateObserver::new(&p, gamma).unwrap();
        let xg = p.data.x_val.vstack(&p.data.x_trn.scale(gamma.sqrt()));
        let s = |m: &Matrix| singular_values(m).unwrap()[0].powi(2);
        let params = JacobiParams {
            alpha: 1.0 / (2.0 * s(&xg) * (s(&init.u0) + s(&init.v0))),
            beta: 1.0 / p.smoothness().ell_g.unwrap(),
            gamma,
            k: 40,
            t_schedule: TSchedule::Constant(10),
            inner_init: InnerInit::Cold,
        };
        Algorithm::Jacobi(params).run(&p, &init, &mut cert).unwrap();
        prop_assert!(cert.errors.is_empty());
        prop_assert!(cert.rows.iter().any(|r| r.mu_k.is_some()));
        prop_assert!(cert.pl_violations(PL_SLACK).is_empty());
    }

    #[test]
    fn hyperclean_u_block_pl_certificate(seed in any::<u64>(), gamma in 0.1f64..20.0) {
        let p = unit_hyperclean(seed);
        let consts = hyperclean_constants(&p.data, gamma, UNIT_U_BAR).unwrap();
        let psi_bar = sigmoid(UNIT_U_BAR);
        let mut rng = GaussianStream::new(seed ^ 0xb10c);
        let w_min = p.min_norm_solution();
        let mut checked = 0;
        for _ in 0..40 {
            let u = uniform_matrix(&mut rng, 5, 1, -UNIT_U_BAR, UNIT_U_BAR);
            let w = rng.perturb(&w_min, 0.3);
            let terms = mismatch_terms(&w, &p);
            let Some(c) = positive_mismatch(&w, &p) else { continue };
            if terms.iter().any(|&m| m < -1e-10) {
                continue;
            }
            let g_star = p.value_function(&u).unwrap();
            let value = p.f(&u, &w) + gamma * (p.g(&u, &w) - g_star);
            // ∂/∂uᵢ of γ(g − g*) is γψ′(uᵢ)mᵢ/2.
            let grad_sq: f64 = u
                .as_slice()
                .iter()
                .zip(&terms)
                .map(|(&t, &m)| (gamma * sigmoid_prime(t) * m / 2.0).powi(2))
                .sum();
            let bound = gamma * c * psi_bar * (1.0 - psi_bar).powi(2) / 4.0;
            prop_assert!((consts.mu_u_block(c) - bound).abs() <= 1e-12 * bound.max(1.0));
            if let PlRatio::Finite(r) = pl_ratio_from(value, grad_sq, p.f(&u, &w)).unwrap() {
                prop_assert!(r >= bound - PL_SLACK, "ratio {r:e} < bound {bound:e}");
            }
            checked += 1;
        }
        prop_assert!(checked > 0);
    }
}

#[test]
fn penalty_term_is_jointly_pl_on_example1() {
    let p = example1();
    for gamma in [0.5, 1.0, 10.0] {
        let points: Vec<Matrix> = (0..41)
            .flat_map(|i| {
                (0..41)
                    .map(move |j| Matrix::column(&[-3.0 + 0.15 * i as f64, -3.0 + 0.15 * j as f64]))
            })
            .collect();
        let split = |z: &Matrix| (Matrix::scalar(z.get(0, 0)), Matrix::scalar(z.get(1, 0)));
        let report = pl_report(
            PlMode::Joint,
            |z| {
                let (u, v) = split(z);
                gamma * p.g(&u, &v)
            },
            |z| {
                let (u, v) = split(z);
                Matrix::column(&[
                    gamma * p.grad_g_u(&u, &v).item(),
                    gamma * p.grad_g_v(&u, &v).item(),
                ])
            },
            |_| 0.0,
            &points,
        )
        .unwrap();
        assert!(report.certified, "gamma = {gamma}: {}", report.measured_mu);
    }
}

#[test]
fn sigmoid_pl_and_smoothness_on_box() {
    let mut rng = GaussianStream::new(11);
    for u_bar in [0.5, 2.0, 5.0] {
        let psi_bar = sigmoid(u_bar);
        let c = psi_bar * (1.0 - psi_bar).powi(2);
        for _ in 0..1000 {
            let t = rng.uniform_in(-u_bar, u_bar);
            assert!(
                sigmoid_prime(t).powi(2) >= c * sigmoid(t) - 1e-15,
                "t = {t}"
            );
            let s = sigmoid(t);
            // ψ″ = ψ(1 − ψ)(1 − 2ψ).
            assert!((s * (1.0 - s) * (1.0 - 2.0 * s)).abs() <= 1.0);
        }
    }
}

#[test]
fn landscape_shape_matches_resolution() {
    for (ru, rv) in [(2, 2), (5, 3), (11, 7)] {
        let g = landscape_grid("z", |x, y| x * y, (-1.0, 1.0), (0.0, 2.0), (ru, rv)).unwrap();
        assert_eq!(g.values.len(), ru);
        assert!(g.values.iter().all(|row| row.len() == rv));
        assert_eq!(g.to_csv().lines().count(), ru * rv + 1);
    }
    let flat = landscape_grid("z", |x, _| x, (-1.0, 1.0), (0.0, 0.0), (4, 9)).unwrap();
    assert_eq!((flat.values.len(), flat.values[0].len()), (4, 1));
}
