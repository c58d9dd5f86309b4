//! Seeded instances shared by the property tests.
#![allow(dead_code)]

use pbgd::data::{GaussianStream, HypercleanDataset, ReprDataset};
use pbgd::problems::{hyperclean_problem, repr_problem, HypercleanProblem, ReprProblem};
use pbgd::Matrix;

/// `rows × cols` matrix of rank at most `rank`, as a product of Gaussians.
pub fn low_rank(rng: &mut GaussianStream, rows: usize, cols: usize, rank: usize) -> Matrix {
    if rank == 0 {
        return Matrix::zeros(rows, cols);
    }
    rng.normal_matrix(rows, rank, 0.0, 1.0)
        .matmul(&rng.normal_matrix(rank, cols, 0.0, 1.0))
}

pub fn uniform_matrix(
    rng: &mut GaussianStream,
    rows: usize,
    cols: usize,
    lo: f64,
    hi: f64,
) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.uniform_in(lo, hi))
}

/// Small representation-learning instance with standard-normal data.
pub fn unit_repr(seed: u64) -> ReprProblem {
    let (n_trn, n_val, m, n, h) = (4, 3, 6, 2, 8);
    let mut rng = GaussianStream::new(seed);
    let data = ReprDataset::new(
        rng.normal_matrix(n_trn, m, 0.0, 1.0),
        rng.normal_matrix(n_trn, n, 0.0, 1.0),
        rng.normal_matrix(n_val, m, 0.0, 1.0),
        rng.normal_matrix(n_val, n, 0.0, 1.0),
        h,
        None,
    )
    .unwrap();
    repr_problem(data).unwrap()
}

pub const UNIT_U_BAR: f64 = 5.0;

/// Small hyper-cleaning instance whose last two training rows are zero,
/// so their targets lie outside the range of `X_trn`.
pub fn unit_hyperclean(seed: u64) -> HypercleanProblem {
    let (n_trn, n_val, m, n, reachable) = (5, 3, 8, 2, 3);
    let mut rng = GaussianStream::new(seed);
    let x = rng.normal_matrix(n_trn, m, 0.0, 1.0);
    let x_trn = Matrix::from_fn(
        n_trn,
        m,
        |i, j| if i < reachable { x.get(i, j) } else { 0.0 },
    );
    let data = HypercleanDataset::new(
        x_trn,
        rng.normal_matrix(n_trn, n, 0.0, 1.0),
        rng.normal_matrix(n_val, m, 0.0, 1.0),
        rng.normal_matrix(n_val, n, 0.0, 1.0),
        None,
        vec![false; n_trn],
    )
    .unwrap();
    hyperclean_problem(data, UNIT_U_BAR).unwrap()
}
