//! Parameter sets and empirical data moments for the affine model.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SurjError};
use crate::numerics::matrix::DenseMatrix;
use crate::numerics::rng::Rng;
use crate::numerics::tape::{NodeId, Tape};

/// Decoder/encoder parameters of the affine CycleCVAE:
/// theta = {W_x, W_y, V_x, b_x, b_y, gamma}, phi = {W_z, b_z, s}.
/// s is stored as log s to keep it positive.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AffineCvaeParams {
    pub w_x: DenseMatrix,   // r_x x r_y
    pub w_y: DenseMatrix,   // r_y x r_x
    pub v_x: DenseMatrix,   // r_x x r_z
    pub b_x: DenseMatrix,   // r_x x 1
    pub b_y: DenseMatrix,   // r_y x 1
    pub gamma: f64,
    pub w_z: DenseMatrix,   // r_z x r_x
    pub b_z: DenseMatrix,   // r_z x 1
    pub log_s: DenseMatrix, // r_z x 1
}

impl AffineCvaeParams {
    pub fn r_x(&self) -> usize {
        self.w_x.rows
    }

    pub fn r_y(&self) -> usize {
        self.w_y.rows
    }

    pub fn r_z(&self) -> usize {
        self.v_x.cols
    }

    pub fn s(&self) -> Vec<f64> {
        self.log_s.data.iter().map(|v| v.exp()).collect()
    }

    pub fn check(&self) -> Result<()> {
        if self.gamma <= 0.0 {
            return Err(SurjError::Contract("gamma must be positive".into()));
        }
        Ok(())
    }

    /// Random init: i.i.d. normal with std 0.1/sqrt(fan-in), s = 1, b = 0.
    pub fn init(r_x: usize, r_y: usize, r_z: usize, gamma: f64, rng: &mut Rng) -> Self {
        let std_in = |fan_in: usize| 0.1 / (fan_in as f64).sqrt();
        AffineCvaeParams {
            w_x: rng.normal_matrix(r_x, r_y, std_in(r_y)),
            w_y: rng.normal_matrix(r_y, r_x, std_in(r_x)),
            v_x: rng.normal_matrix(r_x, r_z, std_in(r_z)),
            b_x: DenseMatrix::zeros(r_x, 1),
            b_y: DenseMatrix::zeros(r_y, 1),
            gamma,
            w_z: rng.normal_matrix(r_z, r_x, std_in(r_x)),
            b_z: DenseMatrix::zeros(r_z, 1),
            log_s: DenseMatrix::zeros(r_z, 1),
        }
    }

    /// Trainable parameters in a fixed order (gamma is handled by the
    /// schedule, not the optimizer).
    pub fn param_vec(&self) -> Vec<DenseMatrix> {
        vec![
            self.w_x.clone(),
            self.w_y.clone(),
            self.v_x.clone(),
            self.b_x.clone(),
            self.b_y.clone(),
            self.w_z.clone(),
            self.b_z.clone(),
            self.log_s.clone(),
        ]
    }

    pub fn set_from_vec(&mut self, params: &[DenseMatrix]) {
        self.w_x = params[0].clone();
        self.w_y = params[1].clone();
        self.v_x = params[2].clone();
        self.b_x = params[3].clone();
        self.b_y = params[4].clone();
        self.w_z = params[5].clone();
        self.b_z = params[6].clone();
        self.log_s = params[7].clone();
    }
}

/// Tape leaves for one loss evaluation, in `param_vec` order.
#[derive(Clone, Copy, Debug)]
pub struct AffineLeaves {
    pub w_x: NodeId,
    pub w_y: NodeId,
    pub v_x: NodeId,
    pub b_x: NodeId,
    pub b_y: NodeId,
    pub w_z: NodeId,
    pub b_z: NodeId,
    pub log_s: NodeId,
}

impl AffineLeaves {
    pub fn bind(tape: &mut Tape, p: &AffineCvaeParams) -> Self {
        AffineLeaves {
            w_x: tape.leaf(p.w_x.clone()),
            w_y: tape.leaf(p.w_y.clone()),
            v_x: tape.leaf(p.v_x.clone()),
            b_x: tape.leaf(p.b_x.clone()),
            b_y: tape.leaf(p.b_y.clone()),
            w_z: tape.leaf(p.w_z.clone()),
            b_z: tape.leaf(p.b_z.clone()),
            log_s: tape.leaf(p.log_s.clone()),
        }
    }

    pub fn ids(&self) -> [NodeId; 8] {
        [
            self.w_x, self.w_y, self.v_x, self.b_x, self.b_y, self.w_z, self.b_z, self.log_s,
        ]
    }

    pub fn grads(&self, tape: &Tape) -> Vec<DenseMatrix> {
        self.ids().iter().map(|&id| tape.grad(id).clone()).collect()
    }
}

/// Empirical first and second moments of matched sample sets.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DataMoments {
    pub mean_x: DenseMatrix,   // r_x x 1
    pub cov_x: DenseMatrix,    // r_x x r_x
    pub second_x: DenseMatrix, // E[x x^T]
    pub mean_y: DenseMatrix,
    pub cov_y: DenseMatrix,
    pub second_y: DenseMatrix,
    /// E[x y^T] over paired rows, r_x x r_y.
    pub cross_xy: DenseMatrix,
    pub n: usize,
    /// Numerical rank of E[x x^T] at relative tolerance 1e-8.
    pub r_c: usize,
}

fn moments_of(samples: &DenseMatrix) -> (DenseMatrix, DenseMatrix, DenseMatrix) {
    let (n, d) = (samples.rows, samples.cols);
    assert!(n > 0);
    let mut mean = DenseMatrix::zeros(d, 1);
    for i in 0..n {
        for j in 0..d {
            mean.data[j] += samples.get(i, j);
        }
    }
    mean = mean.scale(1.0 / n as f64);
    let mut second = DenseMatrix::zeros(d, d);
    for i in 0..n {
        let row = samples.row(i);
        for a in 0..d {
            let ra = row[a];
            for b in 0..d {
                second.data[a * d + b] += ra * row[b];
            }
        }
    }
    second = second.scale(1.0 / n as f64);
    let mut cov = second.clone();
    for a in 0..d {
        for b in 0..d {
            cov.data[a * d + b] -= mean.data[a] * mean.data[b];
        }
    }
    (mean, cov, second)
}

impl DataMoments {
    pub fn from_samples(x: &DenseMatrix, y: &DenseMatrix) -> Result<Self> {
        if x.rows == 0 || y.rows == 0 {
            return Err(SurjError::Contract("moments need nonempty samples".into()));
        }
        if x.rows != y.rows {
            return Err(SurjError::Shape(format!(
                "moments: {} x rows vs {} y rows",
                x.rows, y.rows
            )));
        }
        let (mean_x, cov_x, second_x) = moments_of(x);
        let (mean_y, cov_y, second_y) = moments_of(y);
        let cross_xy = x.transpose().matmul(y)?.scale(1.0 / x.rows as f64);
        let r_c = second_x.numerical_rank(1e-8);
        Ok(DataMoments {
            mean_x,
            cov_x,
            second_x,
            mean_y,
            cov_y,
            second_y,
            cross_xy,
            n: x.rows,
            r_c,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine::ground_truth::{make_ground_truth, sample_pairs};

    #[test]
    fn r_c_counts_mean_direction() {
        // with c != 0 the uncentered second moment gains one rank over
        // the centered covariance
        let mut rng = Rng::seed_from(7);
        let gt = make_ground_truth(12, 4, 3, &mut rng).unwrap();
        let (x, y, _) = sample_pairs(&gt, 50_000, &mut rng).unwrap();
        let m = DataMoments::from_samples(&x, &y).unwrap();
        assert_eq!(m.r_c, 8);
        assert_eq!(m.cov_x.numerical_rank(1e-6), 7);
    }

    #[test]
    fn moments_symmetric() {
        let mut rng = Rng::seed_from(8);
        let x = rng.normal_matrix(500, 4, 1.0);
        let y = rng.normal_matrix(500, 2, 1.0);
        let m = DataMoments::from_samples(&x, &y).unwrap();
        let asym = m.cov_x.sub(&m.cov_x.transpose()).unwrap().max_abs();
        assert!(asym < 1e-12);
    }
}
