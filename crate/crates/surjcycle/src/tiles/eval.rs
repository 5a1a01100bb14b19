//! Behavioral metrics: border classification, generation diversity, and
//! digit accuracy on clean renders.

use crate::cvae::{infer_forward, sample_inverse, InverseMap};
use crate::error::Result;
use crate::numerics::matrix::DenseMatrix;
use crate::numerics::rng::Rng;

use super::glyphs::{frame_pixels, GlyphSet, IMG_DIM, N_BORDERS, N_DIGITS};
use super::model::{ForwardModel, Mlp};
use super::render::render;

/// Border classification result: a tile index, or no discernible border.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BorderCall {
    Position(usize),
    None,
}

/// Classifies the border by the frame template with the highest mean
/// intensity; below 0.1 everywhere means no discernible border.
pub fn classify_border(image: &DenseMatrix) -> BorderCall {
    assert_eq!(image.rows, 1);
    assert_eq!(image.cols, IMG_DIM);
    let mut best = (f64::NEG_INFINITY, 0);
    for pos in 0..N_BORDERS {
        let px = frame_pixels(pos);
        let corr: f64 = px.iter().map(|&p| image.data[p]).sum::<f64>() / px.len() as f64;
        if corr > best.0 {
            best = (corr, pos);
        }
    }
    if best.0 < 0.1 {
        BorderCall::None
    } else {
        BorderCall::Position(best.1)
    }
}

/// Draws `n_draws` generations for one digit and counts distinct border
/// calls (a "none" call counts as its own bucket).
pub fn eval_diversity(
    inverse: &dyn InverseMap,
    digit: usize,
    n_draws: usize,
    rng: &mut Rng,
) -> Result<usize> {
    let mut y = DenseMatrix::zeros(1, N_DIGITS);
    y.data[digit] = 1.0;
    let draws = sample_inverse(&y, inverse, n_draws, rng);
    let calls: std::collections::HashSet<BorderCall> =
        draws.iter().map(classify_border).collect();
    Ok(calls.len())
}

/// Argmax-digit accuracy of the forward model over all 90 clean renders.
pub fn digit_accuracy(forward: &Mlp, glyphs: &GlyphSet) -> Result<f64> {
    let model = ForwardModel(forward);
    let mut correct = 0;
    for digit in 0..N_DIGITS {
        for pos in 0..N_BORDERS {
            let x = render(digit, pos, glyphs)?;
            let probs = infer_forward(&x, &model);
            if argmax(probs.row(0)) == digit {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / (N_DIGITS * N_BORDERS) as f64)
}

/// Fraction of same-digit render pairs (differing only in border) that the
/// forward model maps to the same argmax digit.
pub fn surjection_fidelity(forward: &Mlp, glyphs: &GlyphSet) -> Result<f64> {
    let model = ForwardModel(forward);
    let mut agree = 0usize;
    let mut total = 0usize;
    for digit in 0..N_DIGITS {
        let calls: Vec<usize> = (0..N_BORDERS)
            .map(|pos| {
                let x = render(digit, pos, glyphs)?;
                Ok(argmax(infer_forward(&x, &model).row(0)))
            })
            .collect::<Result<_>>()?;
        for i in 0..N_BORDERS {
            for j in i + 1..N_BORDERS {
                total += 1;
                if calls[i] == calls[j] {
                    agree += 1;
                }
            }
        }
    }
    Ok(agree as f64 / total as f64)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tiles::model::InverseModel;
    use crate::tiles::model::OutputHead;

    #[test]
    fn classifier_exact_on_all_clean_renders() {
        let glyphs = GlyphSet::standard();
        for digit in 0..N_DIGITS {
            for pos in 0..N_BORDERS {
                let x = render(digit, pos, &glyphs).unwrap();
                assert_eq!(classify_border(&x), BorderCall::Position(pos));
            }
        }
    }

    #[test]
    fn blank_image_has_no_border() {
        let blank = DenseMatrix::zeros(1, IMG_DIM);
        assert_eq!(classify_border(&blank), BorderCall::None);
    }

    #[test]
    fn deterministic_inverse_has_one_variation() {
        let mut rng = Rng::seed_from(12);
        let net = Mlp::new(&[N_DIGITS, 20, 20, IMG_DIM], OutputHead::Sigmoid, &mut rng).unwrap();
        let inv = InverseModel { mlp: &net, z_dim: 1, ignore_z: true };
        let count = eval_diversity(&inv, 4, 10, &mut rng).unwrap();
        assert_eq!(count, 1);
    }
}
