//! Plug-in entropy estimators and the entropy curve over the dyadic ladder.
//!
//! The reference estimators ([`plugin_entropy`], [`conditional_entropy`])
//! work on explicit histograms. [`entropy_curve`] computes the same
//! quantities for a whole ladder at once: every sample is binned once at
//! `2^k_max`, sorted in Z-order (bit-interleaved), and each coarser row is
//! read off by shifting, since a dyadic cell is a contiguous Z-order range.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{sample, DistributionSpec, SampleBatch};
use crate::model::{axis_output_columns, Block, ConditionalModel};
use crate::quantizer::{dyadic, floor_cell, quantize, BinIndex, MAX_LEVEL};
use crate::systems::{Preimage, SystemSpec};

/// Occupied cells of `P_n` with their sample counts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BinCounts {
    counts: BTreeMap<BinIndex, u64>,
    total: u64,
}

impl BinCounts {
    pub fn new() -> Self {
        Self::default()
    }

    /// Histogram of `points` on `P_n`.
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a [f64]>, n: u64) -> Result<Self> {
        let mut c = BinCounts::new();
        for p in points {
            c.add(quantize(p, n)?);
        }
        Ok(c)
    }

    pub fn add(&mut self, idx: BinIndex) {
        self.add_count(idx, 1);
    }

    pub fn add_count(&mut self, idx: BinIndex, count: u64) {
        if count > 0 {
            *self.counts.entry(idx).or_insert(0) += count;
            self.total += count;
        }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&BinIndex, u64)> {
        self.counts.iter().map(|(k, &v)| (k, v))
    }
}

impl FromIterator<(BinIndex, u64)> for BinCounts {
    fn from_iter<I: IntoIterator<Item = (BinIndex, u64)>>(iter: I) -> Self {
        let mut c = BinCounts::new();
        for (k, v) in iter {
            c.add_count(k, v);
        }
        c
    }
}

/// What a sample is conditioned on: an atom of `P_Y` or a cell of `Y`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditioningKey {
    Atom(usize),
    ContinuousCell(BinIndex),
}

/// `-Σ (c/T) log2(c/T)` from a sequence of counts, summed in the given order.
fn entropy_from_counts(counts: impl Iterator<Item = u64>) -> (f64, u64, usize) {
    let mut total = 0u64;
    let mut s = 0.0;
    let mut distinct = 0;
    for c in counts {
        if c > 0 {
            let cf = c as f64;
            s += cf * cf.log2();
            total += c;
            distinct += 1;
        }
    }
    if total == 0 {
        return (0.0, 0, 0);
    }
    let t = total as f64;
    ((t.log2() - s / t).max(0.0), total, distinct)
}

/// Miller–Madow bias correction `(B - 1) / (2 T ln 2)` in bits.
pub fn miller_madow_correction(distinct: usize, total: u64) -> f64 {
    if total == 0 || distinct == 0 {
        return 0.0;
    }
    (distinct as f64 - 1.0) / (2.0 * total as f64 * std::f64::consts::LN_2)
}

/// Plug-in (maximum-likelihood) entropy of a histogram, in bits.
///
/// ```
/// use infoloss::entropy::{plugin_entropy, BinCounts};
/// use infoloss::quantizer::BinIndex;
///
/// let counts: BinCounts = [(BinIndex { coords: vec![0], resolution: 2 }, 3),
///                          (BinIndex { coords: vec![1], resolution: 2 }, 1)]
///     .into_iter()
///     .collect();
/// assert!((plugin_entropy(&counts).unwrap() - 0.811278124459133).abs() < 1e-12);
/// ```
pub fn plugin_entropy(counts: &BinCounts) -> Result<f64> {
    if counts.total == 0 {
        return Err(Error::data("entropy of an empty histogram"));
    }
    Ok(entropy_from_counts(counts.counts.values().copied()).0)
}

/// `Σ_key (T_key / T) · H(group)`, the plug-in conditional entropy.
pub fn conditional_entropy(groups: &BTreeMap<ConditioningKey, BinCounts>) -> Result<f64> {
    let total: u64 = groups.values().map(|g| g.total).sum();
    if total == 0 {
        return Err(Error::data("conditional entropy of empty groups"));
    }
    let mut h = 0.0;
    for g in groups.values().filter(|g| g.total > 0) {
        h += g.total as f64 * plugin_entropy(g)?;
    }
    Ok(h / total as f64)
}

/// How `Y` enters `H(X̂_n|Y)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Mode {
    /// Exact conditioning from the system structure: samples on an atom are
    /// grouped by atom, every other sample contributes the entropy of its
    /// finitely many preimages weighted by the input density.
    AtomOracle,
    /// Generic fallback: `Y` binned at `factor · n` (a power of two).
    /// Biased, with the bias vanishing as the factor grows.
    TwoSided { factor: u32 },
}

impl Mode {
    pub const DEFAULT_FACTOR: u32 = 16;

    /// Atom-oracle when the pair has exact structure, else two-sided.
    pub fn default_for(system: &SystemSpec, dist: &DistributionSpec) -> Mode {
        if ConditionalModel::new(system, dist).is_some() {
            Mode::AtomOracle
        } else {
            Mode::TwoSided {
                factor: Self::DEFAULT_FACTOR,
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            Mode::AtomOracle => "atom-oracle".into(),
            Mode::TwoSided { factor } => format!("two-sided({factor})"),
        }
    }
}

/// Parameters of one curve computation.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveSettings {
    pub k_min: u32,
    pub k_max: u32,
    pub samples: usize,
    pub seed: u64,
    pub mode: Mode,
    pub miller_madow: bool,
    /// Also compute the per-axis curves needed by the componentwise bound.
    pub per_axis: bool,
}

impl CurveSettings {
    pub fn new(k_min: u32, k_max: u32, samples: usize, seed: u64, mode: Mode) -> Self {
        CurveSettings {
            k_min,
            k_max,
            samples,
            seed,
            mode,
            miller_madow: false,
            per_axis: false,
        }
    }

    pub fn with_per_axis(mut self, yes: bool) -> Self {
        self.per_axis = yes;
        self
    }

    pub fn with_miller_madow(mut self, yes: bool) -> Self {
        self.miller_madow = yes;
        self
    }

    pub fn levels(&self) -> impl Iterator<Item = u32> {
        self.k_min..=self.k_max
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.k_min > self.k_max {
            return Err(Error::config(format!("empty ladder: k-min {} > k-max {}", self.k_min, self.k_max)));
        }
        if self.k_max > MAX_LEVEL - 6 {
            return Err(Error::config(format!("k-max {} exceeds {}", self.k_max, MAX_LEVEL - 6)));
        }
        if self.samples < MIN_SAMPLES {
            return Err(Error::config(format!(
                "sample count {} is below the minimum {MIN_SAMPLES}",
                self.samples
            )));
        }
        if let Mode::TwoSided { factor } = self.mode {
            if factor == 0 || !factor.is_power_of_two() || factor > 1 << 16 {
                return Err(Error::config(format!(
                    "two-sided factor must be a power of two in [1, 65536], got {factor}"
                )));
            }
        }
        Ok(())
    }
}

pub const MIN_SAMPLES: usize = 1000;

/// A row is reliable when there are at least this many samples per
/// occupied cell.
pub const OCCUPANCY_FACTOR: u64 = 10;

/// One rung of the ladder.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveRow {
    pub k: u32,
    pub n: u64,
    pub h_marginal: f64,
    pub h_conditional: f64,
    /// `H(Ŷ_n)` of the output, for the output dimension.
    pub h_output: f64,
    pub distinct_bins: u64,
    pub max_bin_count: u64,
    pub samples_per_bin: f64,
    pub output_bins: u64,
    pub reliable: bool,
    pub output_reliable: bool,
}

impl CurveRow {
    /// `H(X̂_n|Y) / H(X̂_n)`, or 0 when the marginal is 0.
    pub fn ratio(&self) -> f64 {
        if self.h_marginal > 0.0 {
            self.h_conditional / self.h_marginal
        } else {
            0.0
        }
    }
}

/// Per-axis quantities for the componentwise bound.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AxisRow {
    pub k: u32,
    pub h_marginal: f64,
    /// `H(X̂_{n,i}|Y)`
    pub h_given_output: f64,
    /// `H(X̂_{n,i}|Y_i)`, where `Y_i` is the output of axis `i` alone.
    pub h_given_own_output: Option<f64>,
    pub reliable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AxisCurve {
    pub axis: usize,
    pub rows: Vec<AxisRow>,
}

/// The result of one seeded Monte Carlo run over the ladder.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EntropyCurve {
    pub rows: Vec<CurveRow>,
    pub axes: Vec<AxisCurve>,
    pub sample_count: usize,
    pub seed: u64,
    pub mode: Mode,
    pub miller_madow: bool,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl EntropyCurve {
    /// `(k, H(X̂_n))` over reliable rows.
    pub fn marginal_column(&self) -> Vec<(u32, f64)> {
        self.rows.iter().filter(|r| r.reliable).map(|r| (r.k, r.h_marginal)).collect()
    }

    /// `(k, H(X̂_n|Y))` over reliable rows.
    pub fn conditional_column(&self) -> Vec<(u32, f64)> {
        self.rows.iter().filter(|r| r.reliable).map(|r| (r.k, r.h_conditional)).collect()
    }

    /// `(k, H(Ŷ_n))` over rows where the output histogram is reliable.
    pub fn output_column(&self) -> Vec<(u32, f64)> {
        self.rows
            .iter()
            .filter(|r| r.output_reliable)
            .map(|r| (r.k, r.h_output))
            .collect()
    }

    pub fn finest_reliable(&self) -> Option<&CurveRow> {
        self.rows.iter().rev().find(|r| r.reliable)
    }
}

/// Fine cell coordinates of a point set at `2^k_max`, shifted to be
/// nonnegative by a per-axis offset that is a multiple of `2^k_max`, so
/// that `coord >> s` is still the coarse cell up to the same offset.
#[derive(Clone, Debug)]
pub(crate) struct Grid {
    pub data: Vec<u64>,
    pub dim: usize,
    /// Per-axis offset in fine cells (a multiple of `2^top`).
    pub base: Vec<i64>,
    /// Bits of fine resolution, i.e. fine resolution is `2^top`.
    pub top: u32,
}

impl Grid {
    /// Bins `dim`-dimensional rows of `values` at resolution `2^top`.
    pub fn build(values: &[f64], dim: usize, top: u32) -> Result<Grid> {
        if dim == 0 {
            return Ok(Grid {
                data: Vec::new(),
                dim: 0,
                base: Vec::new(),
                top,
            });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::data(format!("cannot quantize non-finite value {v}")));
        }
        let n = (1u64 << top) as f64;
        let cells: Vec<i64> = values.par_iter().map(|&v| floor_cell(v, n)).collect();
        let mut base = vec![i64::MAX; dim];
        for row in cells.chunks_exact(dim) {
            for (b, &c) in base.iter_mut().zip(row) {
                *b = (*b).min(c);
            }
        }
        for b in base.iter_mut() {
            *b = (*b >> top) << top;
        }
        let data = cells
            .chunks_exact(dim)
            .flat_map(|row| row.iter().zip(&base).map(|(&c, &b)| (c - b) as u64))
            .collect();
        Ok(Grid { data, dim, base, top })
    }

    pub fn count(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[u64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Columns `cols` of every row.
    pub fn select(&self, cols: &[usize]) -> Grid {
        let data = (0..self.count())
            .flat_map(|i| {
                let r = self.row(i);
                cols.iter().map(move |&c| r[c])
            })
            .collect();
        Grid {
            data,
            dim: cols.len(),
            base: cols.iter().map(|&c| self.base[c]).collect(),
            top: self.top,
        }
    }

    /// Rows `rows`, columns `cols`.
    pub fn gather(&self, rows: &[u32], cols: &[usize]) -> Grid {
        let mut data = Vec::with_capacity(rows.len() * cols.len());
        for &i in rows {
            let r = self.row(i as usize);
            data.extend(cols.iter().map(|&c| r[c]));
        }
        Grid {
            data,
            dim: cols.len(),
            base: cols.iter().map(|&c| self.base[c]).collect(),
            top: self.top,
        }
    }

    /// Side-by-side concatenation of two grids with the same row count.
    pub fn hstack(&self, other: &Grid) -> Grid {
        let n = self.count().max(other.count());
        let mut data = Vec::with_capacity(n * (self.dim + other.dim));
        for i in 0..n {
            if self.dim > 0 {
                data.extend_from_slice(self.row(i));
            }
            if other.dim > 0 {
                data.extend_from_slice(other.row(i));
            }
        }
        Grid {
            data,
            dim: self.dim + other.dim,
            base: self.base.iter().chain(&other.base).copied().collect(),
            top: self.top,
        }
    }

    /// Sorts rows in Z-order.
    pub fn sort_z(&mut self) {
        match self.dim {
            0 => {}
            1 => self.data.par_sort_unstable(),
            d => {
                let mut perm: Vec<u32> = (0..self.count() as u32).collect();
                let data = &self.data;
                perm.par_sort_unstable_by(|&a, &b| {
                    let (a, b) = (a as usize * d, b as usize * d);
                    z_cmp(&data[a..a + d], &data[b..b + d])
                });
                let mut out = Vec::with_capacity(self.data.len());
                for i in perm {
                    out.extend_from_slice(self.row(i as usize));
                }
                self.data = out;
            }
        }
    }

    /// Absolute cell coordinates of row `i` after dropping `shift` bits.
    pub fn cell(&self, i: usize, shift: u32) -> Vec<i64> {
        self.row(i)
            .iter()
            .zip(&self.base)
            .map(|(&c, &b)| (c >> shift) as i64 + (b >> shift))
            .collect()
    }
}

#[inline]
fn z_cmp(a: &[u64], b: &[u64]) -> Ordering {
    let mut axis = 0;
    let mut top = 0u64;
    for i in 0..a.len() {
        let x = a[i] ^ b[i];
        if top < x && top < (top ^ x) {
            top = x;
            axis = i;
        }
    }
    a[axis].cmp(&b[axis])
}

#[inline]
fn same_cell(a: &[u64], b: &[u64], shift: u32) -> bool {
    a.iter().zip(b).all(|(&x, &y)| (x >> shift) == (y >> shift))
}

/// Statistics of the histogram obtained from a Z-sorted grid at one level.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct RunStats {
    pub entropy: f64,
    pub distinct: u64,
    pub max_count: u64,
    pub total: u64,
}

/// Run lengths of a Z-sorted grid after dropping `shift` bits.
pub(crate) fn runs(grid: &Grid, shift: u32) -> impl Iterator<Item = (usize, u64)> + '_ {
    let n = grid.count();
    let mut i = 0;
    std::iter::from_fn(move || {
        if i >= n {
            return None;
        }
        let start = i;
        let first = grid.row(start);
        i += 1;
        while i < n && same_cell(first, grid.row(i), shift) {
            i += 1;
        }
        Some((start, (i - start) as u64))
    })
}

/// Plug-in entropy of a Z-sorted grid at `shift`; a 0-dimensional grid of
/// `total` rows is a single cell.
pub(crate) fn run_stats(grid: &Grid, shift: u32, total: u64, miller_madow: bool) -> RunStats {
    if grid.dim == 0 {
        return RunStats {
            entropy: 0.0,
            distinct: u64::from(total > 0),
            max_count: total,
            total,
        };
    }
    let mut max_count = 0;
    let (entropy, total, distinct) = entropy_from_counts(runs(grid, shift).map(|(_, c)| {
        max_count = max_count.max(c);
        c
    }));
    let corr = if miller_madow {
        miller_madow_correction(distinct, total)
    } else {
        0.0
    };
    RunStats {
        entropy: entropy + corr,
        distinct: distinct as u64,
        max_count,
        total,
    }
}

const CHUNK: usize = 1 << 14;

/// Exact weights of the preimages of `y` in a block, normalized to sum to
/// one. Only preimages of the lowest local dimension count: a point mass
/// dominates any density.
pub(crate) fn preimage_weights(block: &Block, y: &[f64], scratch: &mut Vec<Preimage>, weights: &mut Vec<f64>) {
    scratch.clear();
    weights.clear();
    block.map.preimages(y, scratch);
    let mut best_dim = usize::MAX;
    for p in scratch.iter() {
        let w = block.dist.local_weight(&p.x);
        if w.value > 0.0 && w.dim < best_dim {
            best_dim = w.dim;
        }
    }
    let mut infinite = false;
    for p in scratch.iter() {
        let w = block.dist.local_weight(&p.x);
        let v = if w.value <= 0.0 || w.dim != best_dim {
            0.0
        } else if w.dim == 0 {
            w.value
        } else {
            w.value / p.jacobian
        };
        infinite |= v.is_infinite();
        weights.push(v);
    }
    if infinite {
        for w in weights.iter_mut() {
            *w = if w.is_infinite() { 1.0 } else { 0.0 };
        }
    }
    let s: f64 = weights.iter().sum();
    if s > 0.0 && s.is_finite() {
        for w in weights.iter_mut() {
            *w /= s;
        }
    } else {
        weights.iter_mut().for_each(|w| *w = 0.0);
    }
}

/// Merges preimages falling in the same cell; returns `(cell, weight)`
/// pairs sorted lexicographically by cell.
pub(crate) fn preimage_cells(
    pre: &[Preimage],
    weights: &[f64],
    local_axes: &[usize],
    top: u32,
    shift: u32,
) -> Vec<(Vec<i64>, f64)> {
    let n = (1u64 << top) as f64;
    let mut cells: Vec<(Vec<i64>, f64)> = Vec::with_capacity(pre.len());
    for (p, &w) in pre.iter().zip(weights) {
        if w <= 0.0 {
            continue;
        }
        let c: Vec<i64> = local_axes.iter().map(|&a| floor_cell(p.x[a], n) >> shift).collect();
        match cells.iter_mut().find(|(d, _)| *d == c) {
            Some((_, v)) => *v += w,
            None => cells.push((c, w)),
        }
    }
    cells.sort_by(|a, b| a.0.cmp(&b.0));
    cells
}

fn weights_entropy(cells: &[(Vec<i64>, f64)]) -> f64 {
    let h: f64 = cells.iter().filter(|c| c.1 > 0.0).map(|c| -c.1 * c.1.log2()).sum();
    h.max(0.0)
}

/// Everything derived from one batch that several estimators share.
pub(crate) struct Prepared {
    pub batch: SampleBatch,
    pub outputs: Vec<f64>,
    pub output_dim: usize,
    pub grid: Grid,
    pub model: Option<ConditionalModel>,
    /// Per block, per sample: atom index or `u32::MAX`.
    pub atoms: Vec<Vec<u32>>,
}

pub(crate) const NO_ATOM: u32 = u32::MAX;

impl Prepared {
    pub fn new(dist: &DistributionSpec, system: &SystemSpec, batch: SampleBatch, top: u32) -> Result<Prepared> {
        let n = dist.validate()?;
        if batch.dim() != n {
            return Err(Error::config(format!(
                "sample dimension {} does not match the distribution ({n})",
                batch.dim()
            )));
        }
        let output_dim = system.validate(n)?;
        let outputs: Vec<f64> = batch
            .as_flat()
            .par_chunks(n * CHUNK)
            .flat_map_iter(|chunk| {
                let mut out = Vec::with_capacity(chunk.len() / n * output_dim);
                for x in chunk.chunks_exact(n) {
                    system.apply_into(x, &mut out);
                }
                out
            })
            .collect();
        let grid = Grid::build(batch.as_flat(), n, top)?;
        let model = ConditionalModel::new(system, dist);
        let atoms = match &model {
            Some(m) => m
                .blocks()
                .iter()
                .map(|b| block_atoms(b, &outputs, output_dim))
                .collect(),
            None => Vec::new(),
        };
        Ok(Prepared {
            batch,
            outputs,
            output_dim,
            grid,
            model,
            atoms,
        })
    }

    pub fn count(&self) -> usize {
        self.batch.count()
    }

    pub fn output(&self, i: usize) -> &[f64] {
        &self.outputs[i * self.output_dim..(i + 1) * self.output_dim]
    }

    fn require_model(&self) -> Result<&ConditionalModel> {
        self.model.as_ref().ok_or_else(|| {
            Error::config("atom-oracle mode needs a system with declared structure on this input")
        })
    }
}

fn block_atoms(block: &Block, outputs: &[f64], output_dim: usize) -> Vec<u32> {
    let mut y = Vec::with_capacity(block.output_cols.len());
    outputs
        .chunks_exact(output_dim.max(1))
        .map(|row| {
            y.clear();
            y.extend(block.output_cols.iter().map(|&c| row[c]));
            block.map.atom_of(&y).map_or(NO_ATOM, |a| a as u32)
        })
        .collect()
}

/// Mixed-radix code of the atom pattern over all blocks.
fn atom_patterns(p: &Prepared, model: &ConditionalModel) -> Result<Vec<u64>> {
    let radices: Vec<u64> = model
        .blocks()
        .iter()
        .map(|b| b.map.structure().constant_sets.len() as u64 + 1)
        .collect();
    radices
        .iter()
        .try_fold(1u64, |acc, &r| acc.checked_mul(r))
        .ok_or_else(|| Error::config("too many joint atoms to condition on"))?;
    Ok((0..p.count())
        .map(|i| {
            p.atoms.iter().zip(&radices).fold(0u64, |acc, (ids, &r)| {
                let a = ids[i];
                acc * r + if a == NO_ATOM { 0 } else { a as u64 + 1 }
            })
        })
        .collect())
}

/// `Σ_samples` contributions to `H(X̂_{n,S}|Y_b)` per level, for the
/// input axes `axes` (global indices, all inside block `b`), optionally
/// refining atom groups by `extra`.
fn exact_block_conditional(
    p: &Prepared,
    block_idx: usize,
    axes: &[usize],
    extra: Option<&[u64]>,
    shifts: &[u32],
    miller_madow: bool,
) -> Vec<f64> {
    let model = p.model.as_ref().expect("model checked");
    let block = &model.blocks()[block_idx];
    let ids = &p.atoms[block_idx];
    let local_axes: Vec<usize> = axes
        .iter()
        .map(|a| block.input_axes.iter().position(|b| b == a).expect("axis in block"))
        .collect();

    // samples on an atom: plug-in within each group
    let mut groups: BTreeMap<(u32, u64), Vec<u32>> = BTreeMap::new();
    for (i, &a) in ids.iter().enumerate() {
        if a != NO_ATOM {
            let e = extra.map_or(0, |x| x[i]);
            groups.entry((a, e)).or_default().push(i as u32);
        }
    }
    let mut sums = vec![0.0; shifts.len()];
    for rows in groups.values() {
        let mut g = p.grid.gather(rows, axes);
        g.sort_z();
        for (s, &shift) in sums.iter_mut().zip(shifts) {
            *s += rows.len() as f64 * run_stats(&g, shift, rows.len() as u64, miller_madow).entropy;
        }
    }

    // everything else: exact entropy of the preimage cells
    let n_in = block.input_axes.len();
    if block.map.structure().max_preimages > 0 {
        let partials: Vec<Vec<f64>> = (0..p.count())
            .collect::<Vec<_>>()
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut acc = vec![0.0; shifts.len()];
                let mut pre = Vec::new();
                let mut w = Vec::new();
                let mut y = Vec::with_capacity(block.output_cols.len());
                for &i in chunk {
                    if ids[i] != NO_ATOM {
                        continue;
                    }
                    let row = p.output(i);
                    y.clear();
                    y.extend(block.output_cols.iter().map(|&c| row[c]));
                    preimage_weights(block, &y, &mut pre, &mut w);
                    if pre.len() < 2 {
                        continue;
                    }
                    debug_assert!(pre.iter().all(|q| q.x.len() == n_in));
                    for (a, &shift) in acc.iter_mut().zip(shifts) {
                        *a += weights_entropy(&preimage_cells(&pre, &w, &local_axes, p.grid.top, shift));
                    }
                }
                acc
            })
            .collect();
        for part in partials {
            for (s, v) in sums.iter_mut().zip(part) {
                *s += v;
            }
        }
    }
    sums
}

/// Plug-in `H(X̂_S, Ŷ_C) - H(Ŷ_C)` per level with `Y` at `factor · n`.
fn two_sided_conditional(
    p: &Prepared,
    axes: &[usize],
    ycols: &[usize],
    factor: u32,
    shifts: &[u32],
    miller_madow: bool,
) -> Result<Vec<f64>> {
    let total = p.count() as u64;
    let ysel: Vec<f64> = if ycols.is_empty() {
        Vec::new()
    } else {
        (0..p.count())
            .flat_map(|i| {
                let r = p.output(i);
                ycols.iter().map(move |&c| r[c])
            })
            .collect()
    };
    let ygrid = Grid::build(&ysel, ycols.len(), p.grid.top + factor.trailing_zeros())?;
    let mut joint = p.grid.select(axes).hstack(&ygrid);
    joint.sort_z();
    let mut ys = ygrid;
    ys.sort_z();
    Ok(shifts
        .iter()
        .map(|&s| {
            let hj = run_stats(&joint, s, total, miller_madow).entropy;
            let hy = run_stats(&ys, s, total, miller_madow).entropy;
            (hj - hy).max(0.0) * total as f64
        })
        .collect())
}

/// Entropy curve of `system` under `dist` with a fresh batch.
///
/// ```
/// use infoloss::entropy::{entropy_curve, CurveSettings, Mode};
/// use infoloss::measure::DistributionSpec;
/// use infoloss::systems::SystemSpec;
///
/// let settings = CurveSettings::new(4, 8, 100_000, 1, Mode::AtomOracle);
/// let curve = entropy_curve(
///     &DistributionSpec::uniform(0.0, 1.0),
///     &SystemSpec::uniform_quantizer(8, 0.0, 1.0),
///     &settings,
/// )
/// .unwrap();
/// let row = &curve.rows[2]; // k = 6
/// assert!((row.h_marginal - 6.0).abs() < 0.02);
/// assert!((row.h_conditional - 3.0).abs() < 0.02);
/// ```
pub fn entropy_curve(dist: &DistributionSpec, system: &SystemSpec, settings: &CurveSettings) -> Result<EntropyCurve> {
    settings.validate()?;
    let batch = sample(dist, settings.samples, settings.seed)?;
    entropy_curve_from_batch(dist, system, batch, settings)
}

/// Entropy curve on an existing batch (its seed is reported).
pub fn entropy_curve_from_batch(
    dist: &DistributionSpec,
    system: &SystemSpec,
    batch: SampleBatch,
    settings: &CurveSettings,
) -> Result<EntropyCurve> {
    settings.validate()?;
    let p = Prepared::new(dist, system, batch, settings.k_max)?;
    curve_from_prepared(&p, system, settings)
}

pub(crate) fn curve_from_prepared(
    p: &Prepared,
    system: &SystemSpec,
    settings: &CurveSettings,
) -> Result<EntropyCurve> {
    let total = p.count() as u64;
    let n_in = p.grid.dim;
    let shifts: Vec<u32> = settings.levels().map(|k| settings.k_max - k).collect();
    let mm = settings.miller_madow;

    let mut marg = p.grid.clone();
    marg.sort_z();
    let marginal: Vec<RunStats> = shifts.iter().map(|&s| run_stats(&marg, s, total, mm)).collect();
    drop(marg);

    let mut out = Grid::build(&p.outputs, p.output_dim, settings.k_max)?;
    out.sort_z();
    let output: Vec<RunStats> = shifts.iter().map(|&s| run_stats(&out, s, total, mm)).collect();
    drop(out);

    let all_axes: Vec<usize> = (0..n_in).collect();
    let all_cols: Vec<usize> = (0..p.output_dim).collect();
    let cond_sums = match settings.mode {
        Mode::AtomOracle => {
            let model = p.require_model()?;
            let mut sums = vec![0.0; shifts.len()];
            for (b, block) in model.blocks().iter().enumerate() {
                let part = exact_block_conditional(p, b, &block.input_axes, None, &shifts, mm);
                for (s, v) in sums.iter_mut().zip(part) {
                    *s += v;
                }
            }
            sums
        }
        Mode::TwoSided { factor } => two_sided_conditional(p, &all_axes, &all_cols, factor, &shifts, mm)?,
    };

    let rows = settings
        .levels()
        .zip(marginal.iter().zip(&output))
        .zip(&cond_sums)
        .map(|((k, (m, o)), &c)| CurveRow {
            k,
            n: dyadic(k),
            h_marginal: m.entropy,
            h_conditional: c / total as f64,
            h_output: o.entropy,
            distinct_bins: m.distinct,
            max_bin_count: m.max_count,
            samples_per_bin: total as f64 / m.distinct.max(1) as f64,
            output_bins: o.distinct,
            reliable: total >= OCCUPANCY_FACTOR * m.distinct,
            output_reliable: total >= OCCUPANCY_FACTOR * o.distinct,
        })
        .collect();

    let axes = if settings.per_axis {
        axis_curves(p, system, settings, &shifts)?
    } else {
        Vec::new()
    };

    Ok(EntropyCurve {
        rows,
        axes,
        sample_count: p.count(),
        seed: p.batch.seed(),
        mode: settings.mode,
        miller_madow: mm,
        input_dim: n_in,
        output_dim: p.output_dim,
    })
}

fn axis_curves(
    p: &Prepared,
    system: &SystemSpec,
    settings: &CurveSettings,
    shifts: &[u32],
) -> Result<Vec<AxisCurve>> {
    let total = p.count() as u64;
    let n_in = p.grid.dim;
    let mm = settings.miller_madow;
    let patterns = match (&settings.mode, &p.model) {
        (Mode::AtomOracle, Some(m)) => Some(atom_patterns(p, m)?),
        _ => None,
    };
    let own_cols = axis_output_columns(system, n_in);
    let mut curves = Vec::with_capacity(n_in);
    for axis in 0..n_in {
        let mut g = p.grid.select(&[axis]);
        g.sort_z();
        let marg: Vec<RunStats> = shifts.iter().map(|&s| run_stats(&g, s, total, mm)).collect();
        drop(g);
        let (joint, own): (Vec<f64>, Option<Vec<f64>>) = match settings.mode {
            Mode::AtomOracle => {
                let model = p.require_model()?;
                let b = model.block_of_axis(axis).expect("every axis has a block");
                let joint = exact_block_conditional(p, b, &[axis], patterns.as_deref(), shifts, mm);
                let own = exact_block_conditional(p, b, &[axis], None, shifts, mm);
                // an axis sharing a block with others has no output of its own
                let own = (model.blocks()[b].input_axes.len() == 1).then_some(own);
                (joint, own)
            }
            Mode::TwoSided { factor } => {
                let all: Vec<usize> = (0..p.output_dim).collect();
                let joint = two_sided_conditional(p, &[axis], &all, factor, shifts, mm)?;
                let own = match &own_cols {
                    Some(cols) => Some(two_sided_conditional(p, &[axis], &cols[axis], factor, shifts, mm)?),
                    None => None,
                };
                (joint, own)
            }
        };
        let rows = settings
            .levels()
            .enumerate()
            .map(|(j, k)| AxisRow {
                k,
                h_marginal: marg[j].entropy,
                h_given_output: joint[j] / total as f64,
                h_given_own_output: own.as_ref().map(|o| o[j] / total as f64),
                reliable: total >= OCCUPANCY_FACTOR * marg[j].distinct,
            })
            .collect();
        curves.push(AxisCurve { axis, rows });
    }
    Ok(curves)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(cs: &[u64]) -> BinCounts {
        cs.iter()
            .enumerate()
            .map(|(i, &c)| {
                (
                    BinIndex {
                        coords: vec![i as i64],
                        resolution: 8,
                    },
                    c,
                )
            })
            .collect()
    }

    #[test]
    fn plugin_examples() {
        assert_eq!(plugin_entropy(&counts(&[25, 25, 25, 25])).unwrap(), 2.0);
        assert_eq!(plugin_entropy(&counts(&[100])).unwrap(), 0.0);
        assert!((plugin_entropy(&counts(&[3, 1])).unwrap() - 0.811278124459133).abs() < 1e-12);
        assert!(matches!(plugin_entropy(&BinCounts::new()), Err(Error::Data(_))));
    }

    #[test]
    fn conditional_examples() {
        let marginal = counts(&[5, 3, 2]);
        let mut g = BTreeMap::new();
        g.insert(ConditioningKey::Atom(0), marginal.clone());
        let h = conditional_entropy(&g).unwrap();
        assert!((h - plugin_entropy(&marginal).unwrap()).abs() < 1e-15);

        let mut g = BTreeMap::new();
        g.insert(ConditioningKey::Atom(0), counts(&[7]));
        g.insert(ConditioningKey::Atom(1), counts(&[0, 4]));
        assert_eq!(conditional_entropy(&g).unwrap(), 0.0);

        let mut g = BTreeMap::new();
        g.insert(ConditioningKey::Atom(0), counts(&[10, 10]));
        g.insert(
            ConditioningKey::ContinuousCell(BinIndex {
                coords: vec![3],
                resolution: 4,
            }),
            counts(&[0, 0, 10, 10]),
        );
        assert_eq!(conditional_entropy(&g).unwrap(), 1.0);
        assert!(conditional_entropy(&BTreeMap::new()).is_err());
    }

    #[test]
    fn z_order_groups_coarse_cells() {
        let pts: Vec<f64> = vec![0.9, 0.1, 0.1, 0.9, 0.4, 0.4, 0.6, 0.2, 0.12, 0.13];
        let mut g = Grid::build(&pts, 2, 3).unwrap();
        g.sort_z();
        for shift in 0..=3 {
            let mut seen = std::collections::BTreeSet::new();
            for (start, _) in runs(&g, shift) {
                assert!(seen.insert(g.cell(start, shift)), "cell split at shift {shift}");
            }
        }
    }

    #[test]
    fn grid_matches_direct_quantization() {
        let pts = [-0.75, -0.3, 0.0, 0.2999999999999, 0.5, 1.0 - 1e-13, 0.99];
        let g = Grid::build(&pts, 1, 10).unwrap();
        for (i, &x) in pts.iter().enumerate() {
            for k in 0..=10 {
                let direct = quantize(&[x], 1 << k).unwrap().coords;
                assert_eq!(g.cell(i, 10 - k), direct, "x = {x}, k = {k}");
            }
        }
    }

    #[test]
    fn fast_path_agrees_with_reference_histogram() {
        let d = DistributionSpec::uniform_box(vec![-1.0, 0.0], vec![1.0, 0.5]);
        let s = SystemSpec::Identity;
        let settings = CurveSettings::new(1, 6, 5000, 3, Mode::AtomOracle);
        let batch = sample(&d, 5000, 3).unwrap();
        let curve = entropy_curve_from_batch(&d, &s, batch.clone(), &settings).unwrap();
        for row in &curve.rows {
            let reference = BinCounts::from_points(batch.points(), row.n).unwrap();
            let h = plugin_entropy(&reference).unwrap();
            assert!((row.h_marginal - h).abs() < 1e-9, "k = {}", row.k);
            assert_eq!(row.distinct_bins as usize, reference.distinct());
        }
    }

    #[test]
    fn two_sided_agrees_with_reference_groups() {
        let d = DistributionSpec::uniform(-1.0, 1.0);
        let s = SystemSpec::Square;
        let settings = CurveSettings::new(2, 5, 4000, 9, Mode::TwoSided { factor: 4 });
        let batch = sample(&d, 4000, 9).unwrap();
        let curve = entropy_curve_from_batch(&d, &s, batch.clone(), &settings).unwrap();
        for row in &curve.rows {
            let mut groups: BTreeMap<ConditioningKey, BinCounts> = BTreeMap::new();
            for x in batch.points() {
                let y = s.apply(x).unwrap();
                let key = ConditioningKey::ContinuousCell(quantize(&y, 4 * row.n).unwrap());
                groups.entry(key).or_default().add(quantize(x, row.n).unwrap());
            }
            let h = conditional_entropy(&groups).unwrap();
            assert!((row.h_conditional - h).abs() < 1e-9, "k = {}", row.k);
        }
    }

    #[test]
    fn atom_oracle_groups_match_reference() {
        let d = DistributionSpec::uniform(-1.0, 1.0);
        let s = SystemSpec::center_clipper(0.5);
        let settings = CurveSettings::new(2, 6, 4000, 5, Mode::AtomOracle);
        let batch = sample(&d, 4000, 5).unwrap();
        let curve = entropy_curve_from_batch(&d, &s, batch.clone(), &settings).unwrap();
        for row in &curve.rows {
            let mut atom = BinCounts::new();
            for x in batch.points().filter(|x| x[0].abs() <= 0.5) {
                atom.add(quantize(x, row.n).unwrap());
            }
            let expect = atom.total() as f64 * plugin_entropy(&atom).unwrap() / 4000.0;
            assert!((row.h_conditional - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn square_has_one_bit_of_sign() {
        let d = DistributionSpec::uniform(-1.0, 1.0);
        let settings = CurveSettings::new(3, 8, 2000, 1, Mode::AtomOracle);
        let curve = entropy_curve(&d, &SystemSpec::Square, &settings).unwrap();
        for row in &curve.rows {
            assert!((row.h_conditional - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn settings_are_checked() {
        let d = DistributionSpec::uniform(0.0, 1.0);
        let bad = [
            CurveSettings::new(5, 4, 1000, 0, Mode::AtomOracle),
            CurveSettings::new(1, 4, 999, 0, Mode::AtomOracle),
            CurveSettings::new(1, 4, 1000, 0, Mode::TwoSided { factor: 3 }),
        ];
        for s in bad {
            assert!(matches!(entropy_curve(&d, &SystemSpec::Identity, &s), Err(Error::Config(_))));
        }
        let d2 = DistributionSpec::discrete(vec![vec![0.0, 0.0], vec![1.0, 1.0]], vec![0.5, 0.5]);
        let s = SystemSpec::componentwise(vec![SystemSpec::Identity, SystemSpec::uniform_quantizer(4, 0.0, 1.0)]);
        let settings = CurveSettings::new(1, 4, 1000, 0, Mode::AtomOracle);
        assert!(matches!(entropy_curve(&d2, &s, &settings), Err(Error::Config(_))));
    }
}
