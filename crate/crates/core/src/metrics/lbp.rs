use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

/// Bins for uniform patterns of 8 neighbours: 58 uniform codes plus one catch-all.
pub const UNIFORM_BINS: usize = 59;

/// Neighbour offsets `(dy, dx)`, clockwise from the top-left.
const NEIGHBOURS: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LbpConfig {
    /// Cells per side of the histogram grid.
    pub grid: usize,
    /// Uniform mapping (59 bins) or raw codes (256 bins).
    pub uniform: bool,
    /// L1-normalize each cell histogram.
    pub normalize: bool,
}

impl Default for LbpConfig {
    fn default() -> Self {
        Self {
            grid: 8,
            uniform: true,
            normalize: true,
        }
    }
}

impl LbpConfig {
    pub fn bins(&self) -> usize {
        if self.uniform {
            UNIFORM_BINS
        } else {
            256
        }
    }

    pub fn dim(&self) -> usize {
        self.bins() * self.grid * self.grid
    }
}

fn transitions(code: u8) -> u32 {
    (code ^ code.rotate_right(1)).count_ones()
}

/// Bin lookup: uniform codes in ascending order get bins `0..58`, the rest share bin 58.
pub fn uniform_table() -> [usize; 256] {
    let mut table = [UNIFORM_BINS - 1; 256];
    let mut next = 0;
    for code in 0..=255u8 {
        if transitions(code) <= 2 {
            table[code as usize] = next;
            next += 1;
        }
    }
    debug_assert_eq!(next, UNIFORM_BINS - 1);
    table
}

/// 8-neighbour code at an interior pixel. Bit `p` is set when neighbour `p`
/// is strictly darker than the centre, so a flat patch codes to zero.
pub fn lbp_code(image: ArrayView2<f64>, r: usize, c: usize) -> u8 {
    let centre = image[[r, c]];
    let mut code = 0u8;
    for (p, (dy, dx)) in NEIGHBOURS.iter().enumerate() {
        let v = image[[(r as isize + dy) as usize, (c as isize + dx) as usize]];
        if v < centre {
            code |= 1 << p;
        }
    }
    code
}

/// Concatenated per-cell LBP histograms. Border pixels without a full
/// neighbourhood are skipped.
pub fn lbp_features(image: ArrayView2<f64>, cfg: &LbpConfig) -> Vec<f64> {
    let (h, w) = image.dim();
    let bins = cfg.bins();
    let grid = cfg.grid.max(1);
    let table = uniform_table();
    let mut hist = vec![0.0; bins * grid * grid];
    for r in 1..h.saturating_sub(1) {
        for c in 1..w.saturating_sub(1) {
            let code = lbp_code(image, r, c);
            let bin = if cfg.uniform { table[code as usize] } else { code as usize };
            let cell = (r * grid / h) * grid + c * grid / w;
            hist[cell * bins + bin] += 1.0;
        }
    }
    if cfg.normalize {
        for cell in hist.chunks_mut(bins) {
            let total: f64 = cell.iter().sum();
            if total > 0.0 {
                cell.iter_mut().for_each(|v| *v /= total);
            }
        }
    }
    hist
}
