//! The uniform hypercube partition `P_n`: cell side `1/n`, cell index
//! `⌊n·x⌋` per axis.
//!
//! Resolutions used by the estimators live on the dyadic ladder `n = 2^k`,
//! where `P_{2^{k+1}}` refines `P_{2^k}` and the coarse index is the fine one
//! shifted right by one bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points closer than this (in input units) below a cell edge are snapped
/// onto the edge, i.e. into the upper cell.
///
/// The tolerance is measured on `x`, not on `n·x`, so a point snapped at one
/// dyadic level is snapped to the same edge at every finer level.
pub const EDGE_SNAP: f64 = 1e-12;

/// Largest supported ladder exponent.
pub const MAX_LEVEL: u32 = 30;

/// A cell of `P_n`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BinIndex {
    pub coords: Vec<i64>,
    pub resolution: u64,
}

impl BinIndex {
    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// Cell center `(coords + 1/2) / n`.
    pub fn center(&self) -> Vec<f64> {
        let n = self.resolution as f64;
        self.coords.iter().map(|&c| (c as f64 + 0.5) / n).collect()
    }

    /// True if the cell contains `x` under the floor rule.
    pub fn contains(&self, x: &[f64]) -> bool {
        quantize(x, self.resolution).is_ok_and(|b| b == *self)
    }

    /// The enclosing cell at half the resolution.
    pub fn parent(&self) -> BinIndex {
        assert!(self.resolution.is_multiple_of(2), "resolution {} has no dyadic parent", self.resolution);
        BinIndex {
            coords: self.coords.iter().map(|&c| c >> 1).collect(),
            resolution: self.resolution / 2,
        }
    }
}

/// `⌊n·v⌋` with the edge snap applied.
#[inline]
pub fn floor_cell(v: f64, n: f64) -> i64 {
    let t = n * v;
    let f = t.floor();
    if f + 1.0 - t <= n * EDGE_SNAP {
        f as i64 + 1
    } else {
        f as i64
    }
}

/// Cell of `P_n` containing `x`.
pub fn quantize(x: &[f64], n: u64) -> Result<BinIndex> {
    if n == 0 {
        return Err(Error::config("resolution must be at least 1"));
    }
    if let Some(v) = x.iter().find(|v| !v.is_finite()) {
        return Err(Error::data(format!("cannot quantize non-finite value {v}")));
    }
    let nf = n as f64;
    Ok(BinIndex {
        coords: x.iter().map(|&v| floor_cell(v, nf)).collect(),
        resolution: n,
    })
}

/// Moves `x` from its cell at `n = 2^k` to its cell at `2^{k+1}`.
///
/// # Panics
///
/// If `idx` is not the cell of `x`, or the refined cell is not nested in
/// `idx`. Both indicate a bug upstream.
pub fn refine(idx: &BinIndex, x: &[f64]) -> Result<BinIndex> {
    let here = quantize(x, idx.resolution)?;
    assert_eq!(&here, idx, "refine: point is not in the given parent cell");
    let child = quantize(x, idx.resolution * 2)?;
    assert_eq!(&child.parent(), idx, "refine: child cell escapes its parent");
    Ok(child)
}

/// Resolution `2^k`.
pub fn dyadic(k: u32) -> u64 {
    assert!(k <= MAX_LEVEL, "ladder level {k} exceeds {MAX_LEVEL}");
    1u64 << k
}

/// Upper bound `⌈n·D⌉^N` on the number of cells of `P_n` that meet a support
/// of diameter `D` in `N` dimensions.
///
/// This is the covering count used in the reconstruction bound. It is exact
/// for supports whose bounding box is aligned with the grid; a misaligned
/// support can touch one extra cell per axis.
pub fn cell_count_bound(n: u64, diameter: f64, dim: usize) -> f64 {
    (n as f64 * diameter).ceil().powi(dim as i32)
}
