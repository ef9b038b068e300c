use crate::error::{Error, Result};
use crate::grid::{ScalarGrid, LEVELS};

/// Binary per-cell selection over one level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionMask {
    pub rows: usize,
    pub cols: usize,
    pub bits: Vec<bool>,
}

impl SelectionMask {
    pub fn empty(rows: usize, cols: usize) -> Self {
        SelectionMask {
            rows,
            cols,
            bits: vec![false; rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        SelectionMask {
            rows,
            cols,
            bits: vec![true; rows * cols],
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.cols + col]
    }

    /// Row-major indices of set bits.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i)
    }

    /// `Σ M ⊙ values`.
    pub fn objective(&self, values: &[f64]) -> f64 {
        self.indices().map(|i| values[i]).sum()
    }

    fn max_pool(&self) -> SelectionMask {
        let (rows, cols) = (self.rows / 2, self.cols / 2);
        let mut out = SelectionMask::empty(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                out.bits[r * cols + c] = self.get(2 * r, 2 * c)
                    || self.get(2 * r, 2 * c + 1)
                    || self.get(2 * r + 1, 2 * c)
                    || self.get(2 * r + 1, 2 * c + 1);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionMaskPyramid {
    pub levels: Vec<SelectionMask>,
}

/// Closed-form solution of the budgeted selection: the `b` largest positive
/// entries of `C ⊙ R`, ties broken by ascending row-major index.
pub fn solve_selection(confidence: &ScalarGrid, request: &ScalarGrid, b: usize) -> Result<SelectionMask> {
    if !confidence.same_shape(request) {
        return Err(Error::DimensionMismatch(format!(
            "confidence {}x{} vs request {}x{}",
            confidence.rows, confidence.cols, request.rows, request.cols
        )));
    }
    let mut mask = SelectionMask::empty(confidence.rows, confidence.cols);
    if b == 0 {
        return Ok(mask);
    }
    let mut scored: Vec<(f64, usize)> = confidence
        .values
        .iter()
        .zip(&request.values)
        .enumerate()
        .map(|(i, (c, r))| (c * r, i))
        .filter(|(v, _)| *v > 0.0)
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, i) in scored.into_iter().take(b) {
        mask.bits[i] = true;
    }
    Ok(mask)
}

/// `M^(l)` is the 2×2 max-pool of `M^(l−1)`.
pub fn pool_masks(level0: SelectionMask) -> Result<SelectionMaskPyramid> {
    if level0.rows % 4 != 0 || level0.cols % 4 != 0 {
        return Err(Error::DimensionMismatch(format!(
            "mask {}x{} is not divisible by 4",
            level0.rows, level0.cols
        )));
    }
    let mut levels = vec![level0];
    for l in 1..LEVELS {
        let next = levels[l - 1].max_pool();
        levels.push(next);
    }
    Ok(SelectionMaskPyramid { levels })
}
