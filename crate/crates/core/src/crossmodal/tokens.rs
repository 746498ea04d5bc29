use ndarray::Array2;

use super::Mat;
use crate::{Error, Result};

/// Linear patch embedding `patch^2 -> d`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbedParams {
    pub w: Mat,
    pub b: Mat,
}

impl EmbedParams {
    pub fn zeros(patch: usize, d: usize) -> Self {
        Self { w: Mat::zeros(patch * patch, d), b: Mat::zeros(1, d) }
    }
}

/// Flattened patches of a raster, one row per token, row-major token order.
#[derive(Clone, Debug, PartialEq)]
pub struct Patches {
    pub rows: Mat,
    pub grid_shape: (usize, usize),
    /// True when the raster had to be zero-padded to a multiple of the patch.
    pub padded: bool,
}

impl Patches {
    pub fn extract(map: &Array2<f64>, patch: usize) -> Result<Self> {
        if patch == 0 {
            return Err(Error::invalid("patch size must be >= 1"));
        }
        let (h, w) = map.dim();
        let (gr, gc) = (h.div_ceil(patch), w.div_ceil(patch));
        let padded = h % patch != 0 || w % patch != 0;
        let mut rows = Mat::zeros(gr * gc, patch * patch);
        for r in 0..gr {
            for c in 0..gc {
                for i in 0..patch {
                    for j in 0..patch {
                        let (y, x) = (r * patch + i, c * patch + j);
                        if y < h && x < w {
                            rows[(r * gc + c, i * patch + j)] = map[(y, x)];
                        }
                    }
                }
            }
        }
        Ok(Self { rows, grid_shape: (gr, gc), padded })
    }
}

/// Tokens plus the positional encodings that were added to them.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSet {
    pub tokens: Mat,
    pub positional: Mat,
    pub grid_shape: (usize, usize),
}

impl TokenSet {
    pub fn len(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.tokens.ncols()
    }
}

/// 2-D sinusoidal encoding: the first `d/2` entries encode the token row with
/// `d/4` (sin, cos) frequency pairs, the last `d/2` the column.
pub fn positional_encoding(grid_shape: (usize, usize), d: usize) -> Result<Mat> {
    if d == 0 || !d.is_multiple_of(4) {
        return Err(Error::invalid(format!("token width {d} must be a positive multiple of 4")));
    }
    let bands = d / 4;
    let (gr, gc) = grid_shape;
    let mut pe = Mat::zeros(gr * gc, d);
    for r in 0..gr {
        for c in 0..gc {
            let row = r * gc + c;
            for k in 0..bands {
                let omega = 1.0 / 10000f64.powf(k as f64 / bands as f64);
                pe[(row, 2 * k)] = (r as f64 * omega).sin();
                pe[(row, 2 * k + 1)] = (r as f64 * omega).cos();
                pe[(row, d / 2 + 2 * k)] = (c as f64 * omega).sin();
                pe[(row, d / 2 + 2 * k + 1)] = (c as f64 * omega).cos();
            }
        }
    }
    Ok(pe)
}

pub fn tokenize(map: &Array2<f64>, patch: usize, params: &EmbedParams) -> Result<TokenSet> {
    let d = params.w.ncols();
    if params.w.nrows() != patch * patch || params.b.ncols() != d {
        return Err(Error::invalid("embedding shape does not match patch size"));
    }
    let patches = Patches::extract(map, patch)?;
    let positional = positional_encoding(patches.grid_shape, d)?;
    if patches.padded {
        log::debug!("raster {:?} zero-padded to patch multiple {patch}", map.dim());
    }
    let mut tokens = &patches.rows * &params.w + &positional;
    for mut row in tokens.row_iter_mut() {
        row += &params.b;
    }
    Ok(TokenSet { tokens, positional, grid_shape: patches.grid_shape })
}
