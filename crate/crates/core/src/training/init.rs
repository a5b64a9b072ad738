use rand::Rng;

use crate::autodiff::Matrix;

/// Glorot/Xavier bound `sqrt(6 / (rows + cols))`.
pub fn xavier_bound(rows: usize, cols: usize) -> f64 {
    (6.0 / (rows + cols) as f64).sqrt()
}

/// Matrix with i.i.d. entries uniform on `[-b, b]`, `b = sqrt(6/(rows+cols))`.
pub fn xavier_init<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let b = xavier_bound(rows.max(1), cols.max(1));
    Matrix::from_shape_simple_fn((rows, cols), || rng.random_range(-b..=b))
}
