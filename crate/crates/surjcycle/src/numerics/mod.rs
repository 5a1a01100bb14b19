pub mod chol;
pub mod gradcheck;
pub mod matrix;
pub mod optim;
pub mod rng;
pub mod tape;

pub use chol::{log_det_spd, solve_spd, Cholesky};
pub use gradcheck::{grad_check, GradCheckReport};
pub use matrix::{sym_eigen, sym_eigenvalues, DenseMatrix, DenseVector};
pub use optim::OptimState;
pub use rng::Rng;
pub use tape::{sigmoid, NodeId, Tape};

use crate::error::{Result, SurjError};

/// Reparameterized Gaussian draw `mu + s .* eps` on the tape.
///
/// `mu` and `s` are tape nodes of shape n x k (s broadcast as 1 x k is also
/// accepted when n == 1 rows match); gradients flow into both.
pub fn gaussian_sample(
    tape: &mut Tape,
    mu: NodeId,
    s: NodeId,
    rng: &mut Rng,
) -> Result<NodeId> {
    let (rows, cols) = {
        let v = tape.value(mu);
        (v.rows, v.cols)
    };
    {
        let sv = tape.value(s);
        if sv.data.iter().any(|&x| x < 0.0) {
            return Err(SurjError::Contract(
                "gaussian_sample: negative scale entry".into(),
            ));
        }
    }
    let eps = tape.constant(rng.normal_matrix(rows, cols, 1.0));
    let scaled = if tape.value(s).rows == 1 && rows > 1 {
        tape.mul_row_broadcast(eps, s)
    } else {
        tape.hadamard(eps, s)
    };
    Ok(tape.add(mu, scaled))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_scale_returns_mean() {
        let mut t = Tape::new();
        let mut rng = Rng::seed_from(1);
        let mu = t.leaf(DenseMatrix::col_vec(&[1.0, 2.0]).transpose());
        let s = t.leaf(DenseMatrix::zeros(1, 2));
        let z = gaussian_sample(&mut t, mu, s, &mut rng).unwrap();
        assert_eq!(t.value(z).data, vec![1.0, 2.0]);
    }

    #[test]
    fn negative_scale_rejected() {
        let mut t = Tape::new();
        let mut rng = Rng::seed_from(1);
        let mu = t.leaf(DenseMatrix::zeros(1, 2));
        let s = t.leaf(DenseMatrix::from_vec(1, 2, vec![1.0, -0.5]));
        assert!(gaussian_sample(&mut t, mu, s, &mut rng).is_err());
    }

    #[test]
    fn same_seed_identical_draw() {
        let draw = |seed: u64| {
            let mut t = Tape::new();
            let mut rng = Rng::seed_from(seed);
            let mu = t.leaf(DenseMatrix::zeros(1, 4));
            let s = t.leaf(DenseMatrix::from_vec(1, 4, vec![1.0; 4]));
            let z = gaussian_sample(&mut t, mu, s, &mut rng).unwrap();
            t.value(z).data.clone()
        };
        assert_eq!(draw(9), draw(9));
    }

    #[test]
    fn standard_normal_sample_moments() {
        let mut t = Tape::new();
        let mut rng = Rng::seed_from(5);
        let n = 100_000;
        let dims = 3;
        let mu = t.leaf(DenseMatrix::zeros(n, dims));
        let s = t.leaf(DenseMatrix::from_vec(1, dims, vec![1.0; dims]));
        let z = gaussian_sample(&mut t, mu, s, &mut rng).unwrap();
        let v = t.value(z);
        for j in 0..dims {
            let col: Vec<f64> = (0..n).map(|i| v.get(i, j)).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            assert!(mean.abs() <= 0.02, "mean {mean}");
            assert!((0.97..=1.03).contains(&var), "var {var}");
        }
    }

    #[test]
    fn reparameterization_gradients_flow() {
        // loss = ||mu + s.*eps||^2; d/dmu = 2(mu + s eps), d/ds = 2(mu + s eps).*eps
        let mut t = Tape::new();
        let mut rng = Rng::seed_from(2);
        let mu = t.leaf(DenseMatrix::from_vec(1, 3, vec![0.5, -0.2, 1.0]));
        let s = t.leaf(DenseMatrix::from_vec(1, 3, vec![1.0, 0.3, 2.0]));
        let z = gaussian_sample(&mut t, mu, s, &mut rng).unwrap();
        let loss = t.frob_sq(z);
        t.backward(loss).unwrap();
        assert!(t.grad(mu).data.iter().all(|g| g.abs() > 0.0));
        assert!(t.grad(s).data.iter().any(|g| g.abs() > 0.0));
    }
}
