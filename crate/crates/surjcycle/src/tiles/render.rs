//! Image rendering, the planted affine system, and dataset generation.

use crate::error::{Result, SurjError};
use crate::numerics::chol::solve_spd;
use crate::numerics::matrix::DenseMatrix;
use crate::numerics::rng::Rng;

use super::glyphs::{
    frame_pixels, glyph_pixels, GlyphSet, GLYPH_SIZE, IMG_DIM, N_BORDERS, N_DIGITS,
};

/// One dataset record: a digit, the border position, and the rendered image.
#[derive(Clone, Debug)]
pub struct TileSample {
    pub digit: usize,
    pub border: usize,
    /// One-hot digit, 1 x 10.
    pub y: DenseMatrix,
    /// One-hot border position, 1 x 9.
    pub u: DenseMatrix,
    /// Flattened image, 1 x 441, values in {0, 1}.
    pub x: DenseMatrix,
}

/// Renders the 21x21 image for a digit and border position as a 1 x 441 row.
pub fn render(digit: usize, border_pos: usize, glyphs: &GlyphSet) -> Result<DenseMatrix> {
    if digit >= N_DIGITS || border_pos >= N_BORDERS {
        return Err(SurjError::Contract(format!(
            "render: digit {} / border {} out of range",
            digit, border_pos
        )));
    }
    let mut x = render_clean(digit, glyphs);
    for p in frame_pixels(border_pos) {
        x.data[p] = 1.0;
    }
    Ok(x)
}

/// The borderless tiling of one digit (column `digit` of the A matrix).
pub fn render_clean(digit: usize, glyphs: &GlyphSet) -> DenseMatrix {
    let mut x = DenseMatrix::zeros(1, IMG_DIM);
    let bitmap = glyphs.glyph(digit);
    for tile in 0..N_BORDERS {
        for (cell, p) in glyph_pixels(tile).into_iter().enumerate() {
            x.data[p] = bitmap.data[cell];
        }
    }
    x
}

/// The planted affine ground truth behind the image generator:
/// x = A y + B u with one-hot y, u, and D A = I, D B = 0.
#[derive(Clone, Debug)]
pub struct TilesSystem {
    /// 441 x 10; column i is the borderless tiling of digit i.
    pub a: DenseMatrix,
    /// 441 x 9; column j is the frame mask at position j.
    pub b: DenseMatrix,
    /// 10 x 441 left inverse supported on one tile's glyph cells.
    pub d: DenseMatrix,
}

/// Builds (A, B, D) from the glyph set.
///
/// Each row of D is a weighted mask over the center tile's glyph cells:
/// the dual basis (G G^T)^{-1} G of the stacked glyph matrix G, which
/// distinguishes each digit from the other nine. Because those cells are
/// tile-interior, D B = 0 holds exactly by disjointness.
pub fn build_affine_system(glyphs: &GlyphSet) -> Result<TilesSystem> {
    let mut a = DenseMatrix::zeros(IMG_DIM, N_DIGITS);
    for digit in 0..N_DIGITS {
        let img = render_clean(digit, glyphs);
        for p in 0..IMG_DIM {
            a.set(p, digit, img.data[p]);
        }
    }
    let mut b = DenseMatrix::zeros(IMG_DIM, N_BORDERS);
    for pos in 0..N_BORDERS {
        for p in frame_pixels(pos) {
            b.set(p, pos, 1.0);
        }
    }
    let g = glyphs.glyph_matrix(); // 10 x 25
    let gram = g.matmul(&g.transpose())?;
    let dual = solve_spd(&gram, &g).map_err(|_| {
        SurjError::Construction(
            "glyphs admit no distinguishing pixel weights (rank-deficient font)".into(),
        )
    })?; // 10 x 25
    let center = glyph_pixels(N_BORDERS / 2);
    let mut d = DenseMatrix::zeros(N_DIGITS, IMG_DIM);
    for digit in 0..N_DIGITS {
        for cell in 0..GLYPH_SIZE * GLYPH_SIZE {
            d.set(digit, center[cell], dual.get(digit, cell));
        }
    }
    Ok(TilesSystem { a, b, d })
}

/// Draws n samples with digit and border independent and uniform.
pub fn gen_dataset(n: usize, glyphs: &GlyphSet, rng: &mut Rng) -> Result<Vec<TileSample>> {
    if n == 0 {
        return Err(SurjError::Contract("gen_dataset: n must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let digit = rng.below(N_DIGITS);
        let border = rng.below(N_BORDERS);
        let mut y = DenseMatrix::zeros(1, N_DIGITS);
        y.data[digit] = 1.0;
        let mut u = DenseMatrix::zeros(1, N_BORDERS);
        u.data[border] = 1.0;
        let x = render(digit, border, glyphs)?;
        out.push(TileSample { digit, border, y, u, x });
    }
    Ok(out)
}

/// Stacks samples into (X: n x 441, Y: n x 10) batch matrices.
pub fn dataset_matrices(samples: &[TileSample]) -> (DenseMatrix, DenseMatrix) {
    let n = samples.len();
    let mut x = DenseMatrix::zeros(n, IMG_DIM);
    let mut y = DenseMatrix::zeros(n, N_DIGITS);
    for (i, s) in samples.iter().enumerate() {
        for j in 0..IMG_DIM {
            x.set(i, j, s.x.data[j]);
        }
        for j in 0..N_DIGITS {
            y.set(i, j, s.y.data[j]);
        }
    }
    (x, y)
}

/// Writes a 1 x 441 image row as a binary PGM (P5, maxval 255), upscaled
/// by an integer factor for easier inspection.
pub fn write_pgm(image: &DenseMatrix, scale: usize, path: &std::path::Path) -> Result<()> {
    use super::glyphs::IMG_SIZE;
    if image.rows != 1 || image.cols != IMG_DIM {
        return Err(SurjError::Shape(format!(
            "write_pgm: expected 1x{}, got {}x{}",
            IMG_DIM, image.rows, image.cols
        )));
    }
    if scale == 0 {
        return Err(SurjError::Contract("write_pgm: scale must be >= 1".into()));
    }
    let side = IMG_SIZE * scale;
    let mut bytes = format!("P5\n{} {}\n255\n", side, side).into_bytes();
    for r in 0..side {
        for c in 0..side {
            let v = image.data[(r / scale) * IMG_SIZE + c / scale];
            bytes.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}
