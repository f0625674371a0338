//! Neighbourhoods for sliding-window attention on a token grid that wraps
//! horizontally (full azimuth revolution) and is clamped vertically.

use crate::error::{Error, Result};

/// Flat neighbour lists, `per_token` entries for every token in row-major order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Neighborhoods {
    pub rows: usize,
    pub cols: usize,
    pub per_token: usize,
    pub indices: Vec<usize>,
}

impl Neighborhoods {
    pub fn of(&self, row: usize, col: usize) -> &[usize] {
        let t = row * self.cols + col;
        &self.indices[t * self.per_token..(t + 1) * self.per_token]
    }

    pub fn tokens(&self) -> usize {
        self.rows * self.cols
    }
}

/// Window of `window.0` rows × `window.1` columns centred on each token.
///
/// Columns wrap modulo `cols`. Near the top and bottom edges the window is
/// shifted to stay inside the grid so every token sees the same number of
/// neighbours; grids shorter than the window use all of their rows.
pub fn circular_window_indices(
    rows: usize,
    cols: usize,
    window: (usize, usize),
) -> Result<Neighborhoods> {
    let (wr, wc) = window;
    if wr == 0 || wc == 0 || wr % 2 == 0 || wc % 2 == 0 {
        return Err(Error::invalid(format!(
            "window {wr}×{wc} must have odd extents"
        )));
    }
    if cols < wc {
        return Err(Error::invalid(format!(
            "{cols} token columns cannot hold a window {wc} wide"
        )));
    }
    if rows == 0 {
        return Err(Error::invalid("token grid has no rows"));
    }
    let wr_eff = wr.min(rows);
    let half_c = (wc / 2) as isize;
    let mut indices = Vec::with_capacity(rows * cols * wr_eff * wc);
    for r in 0..rows {
        let top = (r as isize - (wr_eff / 2) as isize).clamp(0, (rows - wr_eff) as isize) as usize;
        for c in 0..cols {
            for rr in top..top + wr_eff {
                for dc in -half_c..=half_c {
                    let cc = (c as isize + dc).rem_euclid(cols as isize) as usize;
                    indices.push(rr * cols + cc);
                }
            }
        }
    }
    Ok(Neighborhoods {
        rows,
        cols,
        per_token: wr_eff * wc,
        indices,
    })
}

/// Every token attends to every token.
pub fn global_indices(rows: usize, cols: usize) -> Neighborhoods {
    let n = rows * cols;
    Neighborhoods {
        rows,
        cols,
        per_token: n,
        indices: (0..n).flat_map(|_| 0..n).collect(),
    }
}
