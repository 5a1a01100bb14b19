//! Digit glyph bitmaps and border frame templates.
//!
//! Images are 3x3 grids of 7x7 tiles (21x21 pixels). Every tile shows the
//! same 5x5 digit glyph centered in its interior; the hidden factor picks
//! one tile and lights the 1-pixel-wide frame around it. Frame pixels are
//! the tile perimeter and glyph pixels live in the interior, so the two
//! channels never share a pixel.

use crate::error::{Result, SurjError};
use crate::numerics::matrix::DenseMatrix;

/// Glyph bitmap side length.
pub const GLYPH_SIZE: usize = 5;
/// Tile side length: glyph plus a 1-pixel margin hosting the frame.
pub const TILE_SIZE: usize = 7;
/// Tiles per image side.
pub const GRID: usize = 3;
/// Image side length in pixels.
pub const IMG_SIZE: usize = GRID * TILE_SIZE;
/// Flattened image dimension d.
pub const IMG_DIM: usize = IMG_SIZE * IMG_SIZE;
/// Number of digit classes.
pub const N_DIGITS: usize = 10;
/// Number of border positions.
pub const N_BORDERS: usize = GRID * GRID;

const STANDARD_FONT: [[&str; GLYPH_SIZE]; N_DIGITS] = [
    ["01110", "10001", "10001", "10001", "01110"],
    ["00100", "01100", "00100", "00100", "01110"],
    ["11110", "00001", "01110", "10000", "11111"],
    ["11110", "00001", "00110", "00001", "11110"],
    ["10010", "10010", "11111", "00010", "00010"],
    ["11111", "10000", "11110", "00001", "11110"],
    ["01100", "10000", "11110", "10001", "01110"],
    ["11111", "00001", "00010", "00100", "01000"],
    ["01110", "10001", "01110", "10001", "01110"],
    ["01110", "10001", "01111", "00001", "00110"],
];

/// The ten digit bitmaps plus the nine frame templates.
#[derive(Clone, Debug)]
pub struct GlyphSet {
    /// Ten binary 5x5 bitmaps, one per digit.
    glyphs: Vec<DenseMatrix>,
    /// Nine binary 1x441 frame masks, one per border position.
    frames: Vec<DenseMatrix>,
}

impl GlyphSet {
    /// Builds the bundled font.
    pub fn standard() -> Self {
        let bitmaps: Vec<DenseMatrix> = STANDARD_FONT
            .iter()
            .map(|rows| {
                let data: Vec<f64> = rows
                    .iter()
                    .flat_map(|r| r.chars().map(|c| if c == '1' { 1.0 } else { 0.0 }))
                    .collect();
                DenseMatrix::from_vec(GLYPH_SIZE, GLYPH_SIZE, data)
            })
            .collect();
        Self::new(bitmaps).expect("bundled font satisfies the glyph invariants")
    }

    /// Validates and wraps a custom font.
    pub fn new(glyphs: Vec<DenseMatrix>) -> Result<Self> {
        if glyphs.len() != N_DIGITS {
            return Err(SurjError::Construction(format!(
                "glyph set needs {} bitmaps, got {}",
                N_DIGITS,
                glyphs.len()
            )));
        }
        for (i, g) in glyphs.iter().enumerate() {
            if g.rows != GLYPH_SIZE || g.cols != GLYPH_SIZE {
                return Err(SurjError::Construction(format!(
                    "glyph {} is {}x{}, expected {}x{}",
                    i, g.rows, g.cols, GLYPH_SIZE, GLYPH_SIZE
                )));
            }
            if g.data.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(SurjError::Construction(format!(
                    "glyph {} has non-binary pixels",
                    i
                )));
            }
        }
        // Independence (rank 10) implies pairwise distinctness.
        let mut stacked = DenseMatrix::zeros(N_DIGITS, GLYPH_SIZE * GLYPH_SIZE);
        for (i, g) in glyphs.iter().enumerate() {
            for (j, &v) in g.data.iter().enumerate() {
                stacked.set(i, j, v);
            }
        }
        if stacked.numerical_rank(1e-8) != N_DIGITS {
            return Err(SurjError::Construction(
                "glyph bitmaps are linearly dependent".into(),
            ));
        }
        let frames = (0..N_BORDERS).map(frame_mask).collect();
        Ok(GlyphSet { glyphs, frames })
    }

    /// The 5x5 bitmap for one digit.
    pub fn glyph(&self, digit: usize) -> &DenseMatrix {
        &self.glyphs[digit]
    }

    /// The flattened 1x441 frame mask for one border position.
    pub fn frame(&self, pos: usize) -> &DenseMatrix {
        &self.frames[pos]
    }

    /// Glyphs stacked as a 10 x 25 matrix (one flattened bitmap per row).
    pub fn glyph_matrix(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(N_DIGITS, GLYPH_SIZE * GLYPH_SIZE);
        for (i, g) in self.glyphs.iter().enumerate() {
            for (j, &v) in g.data.iter().enumerate() {
                m.set(i, j, v);
            }
        }
        m
    }
}

/// Flat pixel index of (row, col) in the 21x21 image.
pub fn pixel_index(row: usize, col: usize) -> usize {
    row * IMG_SIZE + col
}

/// Flat indices of the perimeter of the tile at a border position.
pub fn frame_pixels(pos: usize) -> Vec<usize> {
    assert!(pos < N_BORDERS);
    let r0 = (pos / GRID) * TILE_SIZE;
    let c0 = (pos % GRID) * TILE_SIZE;
    let mut px = Vec::new();
    for c in 0..TILE_SIZE {
        px.push(pixel_index(r0, c0 + c));
        px.push(pixel_index(r0 + TILE_SIZE - 1, c0 + c));
    }
    for r in 1..TILE_SIZE - 1 {
        px.push(pixel_index(r0 + r, c0));
        px.push(pixel_index(r0 + r, c0 + TILE_SIZE - 1));
    }
    px.sort_unstable();
    px
}

/// Flat indices of the glyph cells (row-major over the 5x5 bitmap) inside
/// the tile at a grid position.
pub fn glyph_pixels(tile: usize) -> Vec<usize> {
    assert!(tile < N_BORDERS);
    let r0 = (tile / GRID) * TILE_SIZE + 1;
    let c0 = (tile % GRID) * TILE_SIZE + 1;
    let mut px = Vec::with_capacity(GLYPH_SIZE * GLYPH_SIZE);
    for r in 0..GLYPH_SIZE {
        for c in 0..GLYPH_SIZE {
            px.push(pixel_index(r0 + r, c0 + c));
        }
    }
    px
}

fn frame_mask(pos: usize) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(1, IMG_DIM);
    for p in frame_pixels(pos) {
        m.data[p] = 1.0;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_font_is_valid() {
        let g = GlyphSet::standard();
        assert_eq!(g.glyph_matrix().numerical_rank(1e-8), N_DIGITS);
    }

    #[test]
    fn glyphs_pairwise_distinct() {
        let g = GlyphSet::standard();
        for i in 0..N_DIGITS {
            for j in i + 1..N_DIGITS {
                let d = g.glyph(i).sub(g.glyph(j)).unwrap();
                assert!(d.max_abs() > 0.0, "glyphs {} and {} coincide", i, j);
            }
        }
    }

    #[test]
    fn frame_and_glyph_pixels_disjoint() {
        for tile in 0..N_BORDERS {
            let gp: std::collections::HashSet<usize> = glyph_pixels(tile).into_iter().collect();
            for pos in 0..N_BORDERS {
                for p in frame_pixels(pos) {
                    assert!(!gp.contains(&p), "tile {} glyph overlaps frame {}", tile, pos);
                }
            }
        }
    }

    #[test]
    fn frame_has_full_perimeter() {
        for pos in 0..N_BORDERS {
            assert_eq!(frame_pixels(pos).len(), 4 * (TILE_SIZE - 1));
        }
    }

    #[test]
    fn duplicate_glyphs_rejected() {
        let mut bitmaps: Vec<DenseMatrix> =
            (0..N_DIGITS).map(|d| GlyphSet::standard().glyph(d).clone()).collect();
        bitmaps[3] = bitmaps[7].clone();
        assert!(matches!(
            GlyphSet::new(bitmaps),
            Err(SurjError::Construction(_))
        ));
    }

    #[test]
    fn non_binary_glyph_rejected() {
        let mut bitmaps: Vec<DenseMatrix> =
            (0..N_DIGITS).map(|d| GlyphSet::standard().glyph(d).clone()).collect();
        bitmaps[0].set(0, 0, 0.5);
        assert!(matches!(
            GlyphSet::new(bitmaps),
            Err(SurjError::Construction(_))
        ));
    }
}
