//! Input laws: declarative distribution descriptions, seeded sampling and
//! exact region probabilities.
//!
//! Every continuous law admitted here has bounded support. Gaussians enter
//! only truncated to a box, which keeps `H(X̂_1)` finite and the support
//! diameter well defined.
//!
//! # Random numbers
//!
//! Sampling uses ChaCha8 (`rand_chacha::ChaCha8Rng`). A batch of `count`
//! points is split into chunks of [`CHUNK_SIZE`] points; chunk `j` draws from
//! the generator seeded with `seed` and switched to stream `j`. The chunk
//! schedule depends only on `(seed, CHUNK_SIZE)`, so the batch is
//! bit-identical no matter how many worker threads generate it.

use std::f64::consts::SQRT_2;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Error, Result};

/// Number of points generated from one ChaCha8 stream.
pub const CHUNK_SIZE: usize = 1 << 16;

/// Tolerance on the sum of discrete and mixture weights.
pub const WEIGHT_TOLERANCE: f64 = 1e-12;

/// A one-dimensional interval with explicit endpoint inclusion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Interval {
    /// `[lo, hi]`
    pub fn closed(lo: f64, hi: f64) -> Self {
        Interval {
            lo,
            hi,
            lo_closed: true,
            hi_closed: true,
        }
    }

    /// `[lo, hi)`
    pub fn half_open(lo: f64, hi: f64) -> Self {
        Interval {
            lo,
            hi,
            lo_closed: true,
            hi_closed: false,
        }
    }

    /// `(lo, hi)`
    pub fn open(lo: f64, hi: f64) -> Self {
        Interval {
            lo,
            hi,
            lo_closed: false,
            hi_closed: false,
        }
    }

    /// The whole real line.
    pub fn everything() -> Self {
        Interval::open(f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn contains(&self, x: f64) -> bool {
        let above = if self.lo_closed { x >= self.lo } else { x > self.lo };
        let below = if self.hi_closed { x <= self.hi } else { x < self.hi };
        above && below
    }

    /// Length of the intersection with `[lo, hi]`.
    fn overlap(&self, lo: f64, hi: f64) -> f64 {
        (self.hi.min(hi) - self.lo.max(lo)).max(0.0)
    }

    /// Image under `x -> scale * x + offset` (`scale != 0`).
    pub fn affine_image(&self, scale: f64, offset: f64) -> Self {
        let a = scale * self.lo + offset;
        let b = scale * self.hi + offset;
        if scale > 0.0 {
            Interval {
                lo: a,
                hi: b,
                lo_closed: self.lo_closed,
                hi_closed: self.hi_closed,
            }
        } else {
            Interval {
                lo: b,
                hi: a,
                lo_closed: self.hi_closed,
                hi_closed: self.lo_closed,
            }
        }
    }
}

/// An axis-aligned box, one [`Interval`] per axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub axes: Vec<Interval>,
}

impl Region {
    pub fn new(axes: Vec<Interval>) -> Self {
        Region { axes }
    }

    /// Closed box `[lo_i, hi_i]` on every axis.
    pub fn closed_box(lo: &[f64], hi: &[f64]) -> Self {
        assert_eq!(lo.len(), hi.len());
        Region {
            axes: lo
                .iter()
                .zip(hi)
                .map(|(&l, &h)| Interval::closed(l, h))
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.axes.len() == x.len() && self.axes.iter().zip(x).all(|(iv, &v)| iv.contains(v))
    }

    /// Cartesian product `self × other`.
    pub fn product(&self, other: &Region) -> Region {
        let mut axes = self.axes.clone();
        axes.extend_from_slice(&other.axes);
        Region { axes }
    }

    fn slice(&self, start: usize, len: usize) -> Region {
        Region {
            axes: self.axes[start..start + len].to_vec(),
        }
    }
}

/// One weighted component of a mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub dist: DistributionSpec,
}

/// Declarative description of the input law `P_X`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DistributionSpec {
    /// Uniform on the box `[lo, hi]`.
    UniformBox { lo: Vec<f64>, hi: Vec<f64> },
    /// Independent per-axis normal laws truncated to `[lo, hi]`.
    TruncatedGaussian {
        mean: Vec<f64>,
        sigma: Vec<f64>,
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    /// Finitely many points with probabilities.
    FiniteDiscrete {
        points: Vec<Vec<f64>>,
        weights: Vec<f64>,
    },
    Mixture { components: Vec<MixtureComponent> },
    /// Independent factors, concatenated along the axes.
    Product { factors: Vec<DistributionSpec> },
}

impl DistributionSpec {
    /// Uniform on `[lo, hi]` in one dimension.
    pub fn uniform(lo: f64, hi: f64) -> Self {
        DistributionSpec::UniformBox {
            lo: vec![lo],
            hi: vec![hi],
        }
    }

    pub fn uniform_box(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        DistributionSpec::UniformBox { lo, hi }
    }

    /// One-dimensional `N(mean, sigma²)` truncated to `[lo, hi]`.
    pub fn truncated_gaussian(mean: f64, sigma: f64, lo: f64, hi: f64) -> Self {
        DistributionSpec::TruncatedGaussian {
            mean: vec![mean],
            sigma: vec![sigma],
            lo: vec![lo],
            hi: vec![hi],
        }
    }

    pub fn point_mass(point: Vec<f64>) -> Self {
        DistributionSpec::FiniteDiscrete {
            points: vec![point],
            weights: vec![1.0],
        }
    }

    pub fn discrete(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Self {
        DistributionSpec::FiniteDiscrete { points, weights }
    }

    pub fn mixture(components: Vec<(f64, DistributionSpec)>) -> Self {
        DistributionSpec::Mixture {
            components: components
                .into_iter()
                .map(|(weight, dist)| MixtureComponent { weight, dist })
                .collect(),
        }
    }

    pub fn product(factors: Vec<DistributionSpec>) -> Self {
        DistributionSpec::Product { factors }
    }

    /// Checks every invariant and returns the dimension `N`.
    pub fn validate(&self) -> Result<usize> {
        match self {
            DistributionSpec::UniformBox { lo, hi } => check_box("uniform-box", lo, hi),
            DistributionSpec::TruncatedGaussian { mean, sigma, lo, hi } => {
                let n = check_box("truncated-gaussian", lo, hi)?;
                if mean.len() != n || sigma.len() != n {
                    return Err(Error::config(format!(
                        "truncated-gaussian: mean/sigma lengths {}/{} do not match dimension {n}",
                        mean.len(),
                        sigma.len()
                    )));
                }
                if mean.iter().any(|m| !m.is_finite()) {
                    return Err(Error::config("truncated-gaussian: non-finite mean"));
                }
                if sigma.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                    return Err(Error::config("truncated-gaussian: sigma must be positive and finite"));
                }
                Ok(n)
            }
            DistributionSpec::FiniteDiscrete { points, weights } => {
                if points.is_empty() {
                    return Err(Error::config("finite-discrete: no points"));
                }
                if points.len() != weights.len() {
                    return Err(Error::config(format!(
                        "finite-discrete: {} points but {} weights",
                        points.len(),
                        weights.len()
                    )));
                }
                let n = points[0].len();
                if n == 0 {
                    return Err(Error::config("finite-discrete: zero-dimensional points"));
                }
                for p in points {
                    if p.len() != n {
                        return Err(Error::config("finite-discrete: points of differing dimension"));
                    }
                    if p.iter().any(|v| !v.is_finite()) {
                        return Err(Error::config("finite-discrete: non-finite point coordinate"));
                    }
                }
                check_weights("finite-discrete", weights.iter().copied())?;
                Ok(n)
            }
            DistributionSpec::Mixture { components } => {
                if components.is_empty() {
                    return Err(Error::config("mixture: no components"));
                }
                check_weights("mixture", components.iter().map(|c| c.weight))?;
                let mut dim = None;
                for c in components {
                    let d = c.dist.validate()?;
                    match dim {
                        None => dim = Some(d),
                        Some(prev) if prev != d => {
                            return Err(Error::config(format!(
                                "mixture: component dimensions {prev} and {d} differ"
                            )))
                        }
                        _ => {}
                    }
                }
                Ok(dim.unwrap())
            }
            DistributionSpec::Product { factors } => {
                if factors.is_empty() {
                    return Err(Error::config("product: no factors"));
                }
                factors.iter().map(|f| f.validate()).sum()
            }
        }
    }

    /// Dimension `N`. The spec must be valid.
    pub fn dim(&self) -> usize {
        match self {
            DistributionSpec::UniformBox { lo, .. } => lo.len(),
            DistributionSpec::TruncatedGaussian { lo, .. } => lo.len(),
            DistributionSpec::FiniteDiscrete { points, .. } => points.first().map_or(0, Vec::len),
            DistributionSpec::Mixture { components } => components.first().map_or(0, |c| c.dist.dim()),
            DistributionSpec::Product { factors } => factors.iter().map(|f| f.dim()).sum(),
        }
    }

    /// True when `P_X ≪ μ^N`, i.e. no discrete part anywhere in the tree.
    pub fn is_absolutely_continuous(&self) -> bool {
        match self {
            DistributionSpec::UniformBox { .. } | DistributionSpec::TruncatedGaussian { .. } => true,
            DistributionSpec::FiniteDiscrete { .. } => false,
            DistributionSpec::Mixture { components } => components
                .iter()
                .all(|c| c.weight == 0.0 || c.dist.is_absolutely_continuous()),
            DistributionSpec::Product { factors } => factors.iter().all(|f| f.is_absolutely_continuous()),
        }
    }

    /// Dimensions of the top-level product factors, or `[N]` for any other
    /// kind.
    pub fn factor_dims(&self) -> Vec<usize> {
        match self {
            DistributionSpec::Product { factors } => factors.iter().map(|f| f.dim()).collect(),
            other => vec![other.dim()],
        }
    }

    /// Splits a product whose factor boundaries coincide with `block_dims`
    /// into one law per block. Adjacent factors are merged into a product
    /// when a block spans several of them.
    pub fn split_into_blocks(&self, block_dims: &[usize]) -> Option<Vec<DistributionSpec>> {
        let factors = self.independent_factors();
        let mut out = Vec::with_capacity(block_dims.len());
        let mut iter = factors.into_iter().peekable();
        for &want in block_dims {
            let mut got = 0;
            let mut parts = Vec::new();
            while got < want {
                let f = iter.next()?;
                got += f.dim();
                parts.push(f);
            }
            if got != want {
                return None;
            }
            out.push(if parts.len() == 1 {
                parts.pop().unwrap()
            } else {
                DistributionSpec::Product { factors: parts }
            });
        }
        if iter.peek().is_some() {
            return None;
        }
        Some(out)
    }

    /// Finest decomposition into independent factors: nested products are
    /// flattened and boxes split per axis.
    pub fn independent_factors(&self) -> Vec<DistributionSpec> {
        match self {
            DistributionSpec::Product { factors } => {
                factors.iter().flat_map(|f| f.independent_factors()).collect()
            }
            DistributionSpec::UniformBox { .. } | DistributionSpec::TruncatedGaussian { .. } => {
                (0..self.dim()).map(|i| self.axis_marginal(i).unwrap()).collect()
            }
            other => vec![other.clone()],
        }
    }

    /// Marginal law of the single axis `axis`, when the spec makes it
    /// available in closed form (products and one-dimensional kinds, and
    /// per-axis independent boxes).
    pub fn axis_marginal(&self, axis: usize) -> Option<DistributionSpec> {
        match self {
            DistributionSpec::UniformBox { lo, hi } => Some(DistributionSpec::uniform(lo[axis], hi[axis])),
            DistributionSpec::TruncatedGaussian { mean, sigma, lo, hi } => Some(
                DistributionSpec::truncated_gaussian(mean[axis], sigma[axis], lo[axis], hi[axis]),
            ),
            DistributionSpec::Product { factors } => {
                let mut start = 0;
                for f in factors {
                    let d = f.dim();
                    if axis < start + d {
                        return f.axis_marginal(axis - start);
                    }
                    start += d;
                }
                None
            }
            DistributionSpec::FiniteDiscrete { points, weights } if points[0].len() == 1 => {
                Some(DistributionSpec::FiniteDiscrete {
                    points: points.clone(),
                    weights: weights.clone(),
                })
            }
            DistributionSpec::Mixture { components } if self.dim() == 1 => Some(DistributionSpec::Mixture {
                components: components.clone(),
            }),
            _ => None,
        }
    }

    /// Short human-readable label, used in reports and CSV rows.
    pub fn label(&self) -> String {
        fn list(v: &[f64]) -> String {
            let parts: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
            if parts.len() == 1 {
                parts[0].clone()
            } else {
                format!("[{}]", parts.join(","))
            }
        }
        match self {
            DistributionSpec::UniformBox { lo, hi } => format!("uniform({},{})", list(lo), list(hi)),
            DistributionSpec::TruncatedGaussian { mean, sigma, lo, hi } => format!(
                "truncated-gaussian({},{},{},{})",
                list(mean),
                list(sigma),
                list(lo),
                list(hi)
            ),
            DistributionSpec::FiniteDiscrete { points, .. } => format!("discrete({} points)", points.len()),
            DistributionSpec::Mixture { components } => {
                let parts: Vec<String> = components
                    .iter()
                    .map(|c| format!("{}*{}", c.weight, c.dist.label()))
                    .collect();
                format!("mixture({})", parts.join("+"))
            }
            DistributionSpec::Product { factors } => {
                let parts: Vec<String> = factors.iter().map(|f| f.label()).collect();
                format!("product({})", parts.join("x"))
            }
        }
    }

    /// Exact probability `P_X(region)`.
    ///
    /// Uniform and discrete laws are evaluated exactly; truncated Gaussians
    /// use complementary error functions, which keeps both tails accurate to
    /// well below `1e-12`.
    pub fn region_prob(&self, region: &Region) -> f64 {
        assert_eq!(region.dim(), self.dim(), "region dimension must match the distribution");
        let p = match self {
            DistributionSpec::UniformBox { lo, hi } => region
                .axes
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(iv, (&l, &h))| iv.overlap(l, h) / (h - l))
                .product(),
            DistributionSpec::TruncatedGaussian { mean, sigma, lo, hi } => region
                .axes
                .iter()
                .enumerate()
                .map(|(i, iv)| {
                    let a = iv.lo.max(lo[i]);
                    let b = iv.hi.min(hi[i]);
                    if b <= a {
                        return 0.0;
                    }
                    let z = |x: f64| (x - mean[i]) / sigma[i];
                    std_normal_mass(z(a), z(b)) / std_normal_mass(z(lo[i]), z(hi[i]))
                })
                .product(),
            DistributionSpec::FiniteDiscrete { points, weights } => points
                .iter()
                .zip(weights)
                .filter(|(p, _)| region.contains(p))
                .map(|(_, w)| *w)
                .sum(),
            DistributionSpec::Mixture { components } => components
                .iter()
                .map(|c| c.weight * c.dist.region_prob(region))
                .sum(),
            DistributionSpec::Product { factors } => {
                let mut start = 0;
                let mut p = 1.0;
                for f in factors {
                    let d = f.dim();
                    p *= f.region_prob(&region.slice(start, d));
                    start += d;
                }
                p
            }
        };
        p.clamp(0.0, 1.0)
    }

    /// Probability of a finite union of pairwise-disjoint boxes.
    pub fn union_prob(&self, boxes: &[Region]) -> f64 {
        boxes.iter().map(|b| self.region_prob(b)).sum::<f64>().min(1.0)
    }

    /// Boxes (possibly degenerate) whose union is the closed support.
    pub fn support_boxes(&self) -> Vec<Region> {
        match self {
            DistributionSpec::UniformBox { lo, hi } | DistributionSpec::TruncatedGaussian { lo, hi, .. } => {
                vec![Region::closed_box(lo, hi)]
            }
            DistributionSpec::FiniteDiscrete { points, weights } => points
                .iter()
                .zip(weights)
                .filter(|(_, &w)| w > 0.0)
                .map(|(p, _)| Region::closed_box(p, p))
                .collect(),
            DistributionSpec::Mixture { components } => components
                .iter()
                .filter(|c| c.weight > 0.0)
                .flat_map(|c| c.dist.support_boxes())
                .collect(),
            DistributionSpec::Product { factors } => {
                let mut acc = vec![Region::new(Vec::new())];
                for f in factors {
                    let boxes = f.support_boxes();
                    acc = acc
                        .iter()
                        .flat_map(|a| boxes.iter().map(move |b| a.product(b)))
                        .collect();
                }
                acc
            }
        }
    }

    /// Local weight of the law at `x`: the point mass if `x` is an atom,
    /// otherwise the density of the absolutely continuous part.
    ///
    /// `dim` is the number of axes along which the weight is a density, so
    /// a smaller `dim` with positive `value` dominates any larger one.
    pub fn local_weight(&self, x: &[f64]) -> LocalWeight {
        match self {
            DistributionSpec::UniformBox { lo, hi } => {
                let inside = x.iter().zip(lo.iter().zip(hi)).all(|(&v, (&l, &h))| v >= l && v <= h);
                let vol: f64 = lo.iter().zip(hi).map(|(l, h)| h - l).product();
                LocalWeight {
                    dim: x.len(),
                    value: if inside { 1.0 / vol } else { 0.0 },
                }
            }
            DistributionSpec::TruncatedGaussian { mean, sigma, lo, hi } => {
                let mut value = 1.0;
                for i in 0..x.len() {
                    if x[i] < lo[i] || x[i] > hi[i] {
                        value = 0.0;
                        break;
                    }
                    let z = |v: f64| (v - mean[i]) / sigma[i];
                    let norm = std_normal_mass(z(lo[i]), z(hi[i]));
                    let zi = z(x[i]);
                    value *= (-0.5 * zi * zi).exp() / ((2.0 * std::f64::consts::PI).sqrt() * sigma[i] * norm);
                }
                LocalWeight { dim: x.len(), value }
            }
            DistributionSpec::FiniteDiscrete { points, weights } => LocalWeight {
                dim: 0,
                value: points
                    .iter()
                    .zip(weights)
                    .filter(|(p, _)| p.as_slice() == x)
                    .map(|(_, w)| *w)
                    .sum(),
            },
            DistributionSpec::Mixture { components } => {
                let mut best = LocalWeight { dim: usize::MAX, value: 0.0 };
                for c in components.iter().filter(|c| c.weight > 0.0) {
                    let w = c.dist.local_weight(x);
                    if w.value <= 0.0 {
                        continue;
                    }
                    if w.dim < best.dim {
                        best = LocalWeight { dim: w.dim, value: c.weight * w.value };
                    } else if w.dim == best.dim {
                        best.value += c.weight * w.value;
                    }
                }
                if best.dim == usize::MAX {
                    best.dim = x.len();
                }
                best
            }
            DistributionSpec::Product { factors } => {
                let mut start = 0;
                let mut out = LocalWeight { dim: 0, value: 1.0 };
                for f in factors {
                    let d = f.dim();
                    let w = f.local_weight(&x[start..start + d]);
                    out.dim += w.dim;
                    out.value *= w.value;
                    start += d;
                }
                out
            }
        }
    }

    fn sampler(&self) -> Sampler {
        match self {
            DistributionSpec::UniformBox { lo, hi } => Sampler::Uniform {
                lo: lo.clone(),
                width: lo.iter().zip(hi).map(|(l, h)| h - l).collect(),
                hi: hi.clone(),
            },
            DistributionSpec::TruncatedGaussian { mean, sigma, lo, hi } => Sampler::Gaussian(
                (0..lo.len())
                    .map(|i| TruncatedNormal::new(mean[i], sigma[i], lo[i], hi[i]))
                    .collect(),
            ),
            DistributionSpec::FiniteDiscrete { points, weights } => Sampler::Discrete {
                index: WeightedIndex::new(weights).expect("validated weights"),
                points: points.clone(),
            },
            DistributionSpec::Mixture { components } => Sampler::Mixture {
                index: WeightedIndex::new(components.iter().map(|c| c.weight)).expect("validated weights"),
                parts: components.iter().map(|c| c.dist.sampler()).collect(),
            },
            DistributionSpec::Product { factors } => Sampler::Product(
                factors.iter().map(|f| (f.dim(), f.sampler())).collect(),
            ),
        }
    }
}

/// See [`DistributionSpec::local_weight`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalWeight {
    pub dim: usize,
    pub value: f64,
}

fn check_box(kind: &str, lo: &[f64], hi: &[f64]) -> Result<usize> {
    if lo.is_empty() {
        return Err(Error::config(format!("{kind}: empty bounds")));
    }
    if lo.len() != hi.len() {
        return Err(Error::config(format!(
            "{kind}: lo has {} entries but hi has {}",
            lo.len(),
            hi.len()
        )));
    }
    for (i, (&l, &h)) in lo.iter().zip(hi).enumerate() {
        if !l.is_finite() || !h.is_finite() {
            return Err(Error::config(format!("{kind}: unbounded support on axis {i}")));
        }
        if h <= l {
            return Err(Error::config(format!("{kind}: need lo < hi on axis {i}, got [{l}, {h}]")));
        }
    }
    Ok(lo.len())
}

fn check_weights(kind: &str, weights: impl Iterator<Item = f64>) -> Result<()> {
    let mut sum = 0.0;
    for w in weights {
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::config(format!("{kind}: weights must be nonnegative, got {w}")));
        }
        sum += w;
    }
    if (sum - 1.0).abs() > WEIGHT_TOLERANCE {
        return Err(Error::config(format!("{kind}: weights sum to {sum}, expected 1")));
    }
    Ok(())
}

/// `P(a < Z < b)` for a standard normal `Z`, computed on whichever side
/// avoids cancellation.
pub(crate) fn std_normal_mass(a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let q = |z: f64| 0.5 * erfc(z / SQRT_2);
    if a >= 0.0 {
        q(a) - q(b)
    } else if b <= 0.0 {
        q(-b) - q(-a)
    } else {
        1.0 - q(-a) - q(b)
    }
}

#[derive(Clone, Debug)]
struct TruncatedNormal {
    mean: f64,
    sigma: f64,
    lo: f64,
    hi: f64,
    // standardized bounds, mirrored so that the sampled side never sits in
    // the upper tail of Φ
    a: f64,
    b: f64,
    mirrored: bool,
    // survival function at a and b (upper-tail case) or CDF (central case)
    fa: f64,
    fb: f64,
    upper_tail: bool,
}

impl TruncatedNormal {
    fn new(mean: f64, sigma: f64, lo: f64, hi: f64) -> Self {
        let mut a = (lo - mean) / sigma;
        let mut b = (hi - mean) / sigma;
        let mirrored = b <= 0.0;
        if mirrored {
            (a, b) = (-b, -a);
        }
        let q = |z: f64| 0.5 * erfc(z / SQRT_2);
        let upper_tail = a >= 0.0;
        let (fa, fb) = if upper_tail { (q(a), q(b)) } else { (q(-a), 1.0 - q(b)) };
        TruncatedNormal {
            mean,
            sigma,
            lo,
            hi,
            a,
            b,
            mirrored,
            fa,
            fb,
            upper_tail,
        }
    }

    fn draw(&self, u: f64) -> f64 {
        let z = if self.upper_tail {
            // survival s in [Q(b), Q(a)]
            let s = self.fb + u * (self.fa - self.fb);
            SQRT_2 * erfc_inv(2.0 * s)
        } else {
            let p = self.fa + u * (self.fb - self.fa);
            if p < 0.5 {
                -SQRT_2 * erfc_inv(2.0 * p)
            } else {
                SQRT_2 * erfc_inv(2.0 * (1.0 - p))
            }
        };
        let z = z.clamp(self.a, self.b);
        let z = if self.mirrored { -z } else { z };
        (self.mean + self.sigma * z).clamp(self.lo, self.hi)
    }
}

#[derive(Clone, Debug)]
enum Sampler {
    Uniform { lo: Vec<f64>, hi: Vec<f64>, width: Vec<f64> },
    Gaussian(Vec<TruncatedNormal>),
    Discrete { index: WeightedIndex<f64>, points: Vec<Vec<f64>> },
    Mixture { index: WeightedIndex<f64>, parts: Vec<Sampler> },
    Product(Vec<(usize, Sampler)>),
}

impl Sampler {
    fn draw_into<R: Rng>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            Sampler::Uniform { lo, hi, width } => {
                for i in 0..out.len() {
                    out[i] = (lo[i] + width[i] * rng.gen::<f64>()).min(hi[i]);
                }
            }
            Sampler::Gaussian(axes) => {
                for (o, tn) in out.iter_mut().zip(axes) {
                    *o = tn.draw(rng.gen::<f64>());
                }
            }
            Sampler::Discrete { index, points } => {
                out.copy_from_slice(&points[index.sample(rng)]);
            }
            Sampler::Mixture { index, parts } => {
                parts[index.sample(rng)].draw_into(rng, out);
            }
            Sampler::Product(factors) => {
                let mut start = 0;
                for (d, s) in factors {
                    s.draw_into(rng, &mut out[start..start + d]);
                    start += d;
                }
            }
        }
    }
}

/// `count` realizations of `X`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    data: Vec<f64>,
    dim: usize,
    seed: u64,
}

impl SampleBatch {
    /// Wraps already-generated points (row-major, `dim` values per point).
    pub fn from_flat(data: Vec<f64>, dim: usize, seed: u64) -> Self {
        assert!(dim > 0 && data.len().is_multiple_of(dim));
        SampleBatch { data, dim, seed }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }
}

/// Draws `count` i.i.d. points from `spec`, deterministically in `seed`.
pub fn sample(spec: &DistributionSpec, count: usize, seed: u64) -> Result<SampleBatch> {
    let dim = spec.validate()?;
    if count == 0 {
        return Err(Error::config("sample count must be at least 1"));
    }
    let sampler = spec.sampler();
    let mut data = vec![0.0; count * dim];
    data.par_chunks_mut(CHUNK_SIZE * dim)
        .enumerate()
        .for_each(|(chunk, buf)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64);
            for point in buf.chunks_exact_mut(dim) {
                sampler.draw_into(&mut rng, point);
            }
        });
    Ok(SampleBatch { data, dim, seed })
}

/// Largest Euclidean distance between two support points.
pub fn support_diameter(spec: &DistributionSpec) -> Result<f64> {
    spec.validate()?;
    let boxes = spec.support_boxes();
    let mut best: f64 = 0.0;
    for (i, a) in boxes.iter().enumerate() {
        for b in &boxes[i..] {
            let d2: f64 = a
                .axes
                .iter()
                .zip(&b.axes)
                .map(|(p, q)| {
                    let d = (p.hi - q.lo).abs().max((q.hi - p.lo).abs());
                    d * d
                })
                .sum();
            best = best.max(d2.sqrt());
        }
    }
    if !best.is_finite() {
        return Err(Error::config("support is unbounded"));
    }
    Ok(best)
}
