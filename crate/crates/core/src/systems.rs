//! Catalog of static maps `Y = g(X)` together with the structure the
//! analytic results need: the sets `A_i` on which `g` is constant, the
//! atoms `y_i = g(A_i)`, and the bijective pieces elsewhere.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{DistributionSpec, Interval, Region};
use crate::model::ConditionalModel;
use crate::quantizer::floor_cell;

/// Declarative description of a static map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SystemSpec {
    Identity,
    /// `y = scale·x + offset`, elementwise.
    Affine { scale: f64, offset: f64 },
    /// `y = x` if `|x| > c`, else `0`.
    CenterClipper { c: f64 },
    /// `y = |x|` if `|x| > c`, else `0`. Destroys the sign outside the
    /// clipping interval.
    MagnitudeClipper { c: f64 },
    /// `levels` equal cells on `[lo, hi]`, output is the cell midpoint.
    /// Inputs below `lo` (above `hi`) go to the first (last) cell.
    UniformQuantizer { levels: u32, lo: f64, hi: f64 },
    Square,
    Magnitude,
    /// Keeps the listed axes (strictly increasing) and drops the others.
    CoordinateProjection {
        #[serde(rename = "kept-axes")]
        kept_axes: Vec<usize>,
    },
    /// One one-dimensional system per input axis.
    Componentwise { components: Vec<SystemSpec> },
    /// `outer(inner(x))`.
    Composition {
        inner: Box<SystemSpec>,
        outer: Box<SystemSpec>,
    },
}

/// A set on which the map is constant, and its image.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstantSet {
    pub output: Vec<f64>,
    /// Pairwise-disjoint boxes whose union is `A_i`.
    pub region: Vec<Region>,
}

/// Structural metadata of a map on a given input dimension.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Structure {
    pub constant_sets: Vec<ConstantSet>,
    /// Whether the map is piecewise bijective off the constant sets.
    pub piecewise_bijective: bool,
    /// The bijective pieces, when they can be listed as boxes.
    pub pieces: Option<Vec<Region>>,
    /// Largest number of preimages of a non-atom output (0 when every
    /// output is an atom).
    pub max_preimages: usize,
}

/// One point of `g^{-1}(y)` and `|det J_g|` there.
#[derive(Clone, Debug, PartialEq)]
pub struct Preimage {
    pub x: Vec<f64>,
    pub jacobian: f64,
}

/// Atoms of `P_Y` with their generating sets and masses.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AtomTable {
    pub entries: Vec<AtomEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AtomEntry {
    pub output: Vec<f64>,
    pub region: Vec<Region>,
    pub mass: f64,
}

impl AtomTable {
    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|e| e.mass).sum()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Bit pattern of an output vector, with `-0.0` folded onto `0.0`, used to
/// match outputs against atoms exactly.
pub(crate) fn output_key(y: &[f64]) -> Vec<u64> {
    y.iter()
        .map(|&v| if v == 0.0 { 0.0f64.to_bits() } else { v.to_bits() })
        .collect()
}

fn interval_box(iv: Interval) -> Region {
    Region::new(vec![iv])
}

impl SystemSpec {
    pub fn affine(scale: f64, offset: f64) -> Self {
        SystemSpec::Affine { scale, offset }
    }

    pub fn center_clipper(c: f64) -> Self {
        SystemSpec::CenterClipper { c }
    }

    pub fn magnitude_clipper(c: f64) -> Self {
        SystemSpec::MagnitudeClipper { c }
    }

    pub fn uniform_quantizer(levels: u32, lo: f64, hi: f64) -> Self {
        SystemSpec::UniformQuantizer { levels, lo, hi }
    }

    pub fn projection(kept_axes: Vec<usize>) -> Self {
        SystemSpec::CoordinateProjection { kept_axes }
    }

    pub fn componentwise(components: Vec<SystemSpec>) -> Self {
        SystemSpec::Componentwise { components }
    }

    /// `outer ∘ inner`
    pub fn compose(inner: SystemSpec, outer: SystemSpec) -> Self {
        SystemSpec::Composition {
            inner: Box::new(inner),
            outer: Box::new(outer),
        }
    }

    /// Checks parameters against the input dimension and returns the output
    /// dimension `M`.
    pub fn validate(&self, input_dim: usize) -> Result<usize> {
        let scalar = |name: &str| -> Result<usize> {
            if input_dim != 1 {
                Err(Error::config(format!(
                    "{name} acts on one-dimensional inputs, got dimension {input_dim}"
                )))
            } else {
                Ok(1)
            }
        };
        let positive = |name: &str, c: f64| -> Result<()> {
            if c.is_finite() && c > 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("{name}: threshold c must be positive, got {c}")))
            }
        };
        match self {
            SystemSpec::Identity => Ok(input_dim),
            SystemSpec::Affine { scale, offset } => {
                if !(scale.is_finite() && offset.is_finite()) || *scale == 0.0 {
                    return Err(Error::config(format!(
                        "affine: need finite nonzero scale and finite offset, got ({scale}, {offset})"
                    )));
                }
                Ok(input_dim)
            }
            SystemSpec::CenterClipper { c } => {
                positive("center-clipper", *c)?;
                scalar("center-clipper")
            }
            SystemSpec::MagnitudeClipper { c } => {
                positive("magnitude-clipper", *c)?;
                scalar("magnitude-clipper")
            }
            SystemSpec::UniformQuantizer { levels, lo, hi } => {
                if *levels < 2 {
                    return Err(Error::config(format!("uniform-quantizer: need at least 2 levels, got {levels}")));
                }
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::config(format!("uniform-quantizer: need lo < hi, got [{lo}, {hi}]")));
                }
                scalar("uniform-quantizer")
            }
            SystemSpec::Square => scalar("square"),
            SystemSpec::Magnitude => scalar("magnitude"),
            SystemSpec::CoordinateProjection { kept_axes } => {
                if kept_axes.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::config("coordinate-projection: kept-axes must be strictly increasing"));
                }
                if let Some(&a) = kept_axes.iter().find(|&&a| a >= input_dim) {
                    return Err(Error::config(format!(
                        "coordinate-projection: axis {a} out of range for dimension {input_dim}"
                    )));
                }
                Ok(kept_axes.len())
            }
            SystemSpec::Componentwise { components } => {
                if components.len() != input_dim {
                    return Err(Error::config(format!(
                        "componentwise: {} components for input dimension {input_dim}",
                        components.len()
                    )));
                }
                components.iter().map(|c| c.validate(1)).sum()
            }
            SystemSpec::Composition { inner, outer } => {
                let mid = inner.validate(input_dim)?;
                outer.validate(mid)
            }
        }
    }

    /// Short label used in reports, e.g. `center-clipper(0.5)`.
    pub fn label(&self) -> String {
        match self {
            SystemSpec::Identity => "identity".into(),
            SystemSpec::Affine { scale, offset } => format!("affine({scale},{offset})"),
            SystemSpec::CenterClipper { c } => format!("center-clipper({c})"),
            SystemSpec::MagnitudeClipper { c } => format!("magnitude-clipper({c})"),
            SystemSpec::UniformQuantizer { levels, lo, hi } => format!("uniform-quantizer({levels},{lo},{hi})"),
            SystemSpec::Square => "square".into(),
            SystemSpec::Magnitude => "magnitude".into(),
            SystemSpec::CoordinateProjection { kept_axes } => {
                let axes: Vec<String> = kept_axes.iter().map(|a| a.to_string()).collect();
                format!("coordinate-projection({})", axes.join(","))
            }
            SystemSpec::Componentwise { components } => {
                let parts: Vec<String> = components.iter().map(|c| c.label()).collect();
                format!("componentwise({})", parts.join(","))
            }
            SystemSpec::Composition { inner, outer } => format!("{}∘{}", outer.label(), inner.label()),
        }
    }

    /// Evaluates `g(x)`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.validate(x.len())?;
        let mut out = Vec::new();
        self.apply_into(x, &mut out);
        Ok(out)
    }

    /// Appends `g(x)` to `out`. The system must be valid for `x.len()`.
    pub fn apply_into(&self, x: &[f64], out: &mut Vec<f64>) {
        match self {
            SystemSpec::Identity => out.extend_from_slice(x),
            SystemSpec::Affine { scale, offset } => out.extend(x.iter().map(|v| scale * v + offset)),
            SystemSpec::CenterClipper { c } => out.push(if x[0].abs() > *c { x[0] } else { 0.0 }),
            SystemSpec::MagnitudeClipper { c } => out.push(if x[0].abs() > *c { x[0].abs() } else { 0.0 }),
            SystemSpec::UniformQuantizer { levels, lo, hi } => {
                let i = quantizer_cell(x[0], *levels, *lo, *hi);
                out.push(quantizer_level(i, *levels, *lo, *hi));
            }
            SystemSpec::Square => out.push(x[0] * x[0]),
            SystemSpec::Magnitude => out.push(x[0].abs()),
            SystemSpec::CoordinateProjection { kept_axes } => out.extend(kept_axes.iter().map(|&a| x[a])),
            SystemSpec::Componentwise { components } => {
                for (c, v) in components.iter().zip(x) {
                    c.apply_into(std::slice::from_ref(v), out);
                }
            }
            SystemSpec::Composition { inner, outer } => {
                let mut mid = Vec::with_capacity(x.len());
                inner.apply_into(x, &mut mid);
                outer.apply_into(&mid, out);
            }
        }
    }

    /// `(scale, offset)` if the map is `x -> scale·x + offset` elementwise.
    pub fn as_affine(&self) -> Option<(f64, f64)> {
        match self {
            SystemSpec::Identity => Some((1.0, 0.0)),
            SystemSpec::Affine { scale, offset } => Some((*scale, *offset)),
            SystemSpec::Composition { inner, outer } => {
                let (a1, b1) = inner.as_affine()?;
                let (a2, b2) = outer.as_affine()?;
                Some((a2 * a1, a2 * b1 + b2))
            }
            _ => None,
        }
    }

    /// Structural metadata on inputs of dimension `input_dim`, or `None`
    /// when the map is not of the "constant on boxes, piecewise bijective
    /// elsewhere" form as a whole (e.g. a projection that drops some but not
    /// all axes).
    pub fn structure(&self, input_dim: usize) -> Option<Structure> {
        self.validate(input_dim).ok()?;
        let everywhere = |d: usize| Region::new(vec![Interval::everything(); d]);
        Some(match self {
            SystemSpec::Identity | SystemSpec::Affine { .. } => Structure {
                constant_sets: Vec::new(),
                piecewise_bijective: true,
                pieces: Some(vec![everywhere(input_dim)]),
                max_preimages: 1,
            },
            SystemSpec::CenterClipper { c } | SystemSpec::MagnitudeClipper { c } => Structure {
                constant_sets: vec![ConstantSet {
                    output: vec![0.0],
                    region: vec![interval_box(Interval::closed(-c, *c))],
                }],
                piecewise_bijective: true,
                pieces: Some(vec![
                    interval_box(Interval::open(f64::NEG_INFINITY, -c)),
                    interval_box(Interval::open(*c, f64::INFINITY)),
                ]),
                max_preimages: if matches!(self, SystemSpec::CenterClipper { .. }) { 1 } else { 2 },
            },
            SystemSpec::UniformQuantizer { levels, lo, hi } => {
                let w = (hi - lo) / *levels as f64;
                let constant_sets = (0..*levels)
                    .map(|i| {
                        let a = if i == 0 { f64::NEG_INFINITY } else { lo + i as f64 * w };
                        let b = if i + 1 == *levels { f64::INFINITY } else { lo + (i + 1) as f64 * w };
                        ConstantSet {
                            output: vec![quantizer_level(i, *levels, *lo, *hi)],
                            region: vec![interval_box(Interval::half_open(a, b))],
                        }
                    })
                    .collect();
                Structure {
                    constant_sets,
                    piecewise_bijective: true,
                    pieces: Some(Vec::new()),
                    max_preimages: 0,
                }
            }
            SystemSpec::Square | SystemSpec::Magnitude => Structure {
                constant_sets: Vec::new(),
                piecewise_bijective: true,
                pieces: Some(vec![
                    interval_box(Interval::open(f64::NEG_INFINITY, 0.0)),
                    interval_box(Interval::half_open(0.0, f64::INFINITY)),
                ]),
                max_preimages: 2,
            },
            SystemSpec::CoordinateProjection { kept_axes } => {
                if kept_axes.len() == input_dim {
                    SystemSpec::Identity.structure(input_dim)?
                } else if kept_axes.is_empty() {
                    Structure {
                        constant_sets: vec![ConstantSet {
                            output: Vec::new(),
                            region: vec![everywhere(input_dim)],
                        }],
                        piecewise_bijective: true,
                        pieces: Some(Vec::new()),
                        max_preimages: 0,
                    }
                } else {
                    return None;
                }
            }
            SystemSpec::Componentwise { components } => {
                let parts: Vec<Structure> = components.iter().map(|c| c.structure(1)).collect::<Option<_>>()?;
                if parts.iter().all(|s| s.constant_sets.is_empty()) {
                    let pieces = parts.iter().try_fold(vec![Region::new(Vec::new())], |acc, s| {
                        let p = s.pieces.as_ref()?;
                        Some(acc.iter().flat_map(|a| p.iter().map(move |b| a.product(b))).collect::<Vec<_>>())
                    });
                    Structure {
                        constant_sets: Vec::new(),
                        piecewise_bijective: parts.iter().all(|s| s.piecewise_bijective),
                        pieces,
                        max_preimages: parts.iter().map(|s| s.max_preimages).product(),
                    }
                } else if parts.iter().all(|s| s.max_preimages == 0) {
                    let mut sets = vec![ConstantSet {
                        output: Vec::new(),
                        region: vec![Region::new(Vec::new())],
                    }];
                    for s in &parts {
                        sets = sets
                            .iter()
                            .flat_map(|a| {
                                s.constant_sets.iter().map(move |b| ConstantSet {
                                    output: a.output.iter().chain(&b.output).copied().collect(),
                                    region: a
                                        .region
                                        .iter()
                                        .flat_map(|ra| b.region.iter().map(move |rb| ra.product(rb)))
                                        .collect(),
                                })
                            })
                            .collect();
                    }
                    Structure {
                        constant_sets: sets,
                        piecewise_bijective: true,
                        pieces: Some(Vec::new()),
                        max_preimages: 0,
                    }
                } else {
                    return None;
                }
            }
            SystemSpec::Composition { inner, outer } => {
                let mid_dim = inner.validate(input_dim).ok()?;
                let si = inner.structure(input_dim)?;
                let so = outer.structure(mid_dim)?;
                let mut sets: Vec<ConstantSet> = Vec::new();
                let mut push = |output: Vec<f64>, region: Vec<Region>| {
                    let key = output_key(&output);
                    match sets.iter_mut().find(|s| output_key(&s.output) == key) {
                        Some(s) => s.region.extend(region),
                        None => sets.push(ConstantSet { output, region }),
                    }
                };
                if so.constant_sets.is_empty() {
                    for s in &si.constant_sets {
                        let mut y = Vec::new();
                        outer.apply_into(&s.output, &mut y);
                        push(y, s.region.clone());
                    }
                } else if si.constant_sets.is_empty() {
                    // pull the outer sets back through an elementwise affine inner map
                    let (a, b) = inner.as_affine()?;
                    for s in &so.constant_sets {
                        let region = s
                            .region
                            .iter()
                            .map(|r| Region::new(r.axes.iter().map(|iv| iv.affine_image(1.0 / a, -b / a)).collect()))
                            .collect();
                        push(s.output.clone(), region);
                    }
                } else {
                    return None;
                }
                let pieces = if so.max_preimages <= 1 { si.pieces.clone() } else { None };
                Structure {
                    constant_sets: sets,
                    piecewise_bijective: si.piecewise_bijective && so.piecewise_bijective,
                    pieces,
                    max_preimages: si.max_preimages * so.max_preimages,
                }
            }
        })
    }

    /// Preimages of a non-atom output `y`, appended to `out`.
    ///
    /// Only meaningful when [`SystemSpec::structure`] is available; the
    /// result ignores the constant sets.
    pub fn preimages(&self, y: &[f64], input_dim: usize, out: &mut Vec<Preimage>) {
        match self {
            SystemSpec::Identity => out.push(Preimage { x: y.to_vec(), jacobian: 1.0 }),
            SystemSpec::Affine { scale, offset } => out.push(Preimage {
                x: y.iter().map(|v| (v - offset) / scale).collect(),
                jacobian: scale.abs().powi(y.len() as i32),
            }),
            SystemSpec::CenterClipper { c } => {
                if y[0].abs() > *c {
                    out.push(Preimage { x: vec![y[0]], jacobian: 1.0 });
                }
            }
            SystemSpec::MagnitudeClipper { c } => {
                if y[0] > *c {
                    out.push(Preimage { x: vec![-y[0]], jacobian: 1.0 });
                    out.push(Preimage { x: vec![y[0]], jacobian: 1.0 });
                }
            }
            SystemSpec::UniformQuantizer { .. } => {}
            SystemSpec::Square => {
                if y[0] > 0.0 {
                    let r = y[0].sqrt();
                    out.push(Preimage { x: vec![-r], jacobian: 2.0 * r });
                    out.push(Preimage { x: vec![r], jacobian: 2.0 * r });
                } else if y[0] == 0.0 {
                    out.push(Preimage { x: vec![0.0], jacobian: 0.0 });
                }
            }
            SystemSpec::Magnitude => {
                if y[0] > 0.0 {
                    out.push(Preimage { x: vec![-y[0]], jacobian: 1.0 });
                    out.push(Preimage { x: vec![y[0]], jacobian: 1.0 });
                } else if y[0] == 0.0 {
                    out.push(Preimage { x: vec![0.0], jacobian: 1.0 });
                }
            }
            SystemSpec::CoordinateProjection { kept_axes } => {
                if kept_axes.len() == input_dim {
                    out.push(Preimage { x: y.to_vec(), jacobian: 1.0 });
                }
            }
            SystemSpec::Componentwise { components } => {
                let mut acc = vec![Preimage { x: Vec::new(), jacobian: 1.0 }];
                let mut offset = 0;
                let mut scratch = Vec::new();
                for c in components {
                    let m = c.validate(1).unwrap_or(1);
                    scratch.clear();
                    c.preimages(&y[offset..offset + m], 1, &mut scratch);
                    offset += m;
                    acc = acc
                        .iter()
                        .flat_map(|a| {
                            scratch.iter().map(move |p| Preimage {
                                x: a.x.iter().chain(&p.x).copied().collect(),
                                jacobian: a.jacobian * p.jacobian,
                            })
                        })
                        .collect();
                }
                out.extend(acc);
            }
            SystemSpec::Composition { inner, outer } => {
                let mid_dim = inner.validate(input_dim).unwrap_or(input_dim);
                let mut mids = Vec::new();
                outer.preimages(y, mid_dim, &mut mids);
                let mut xs = Vec::new();
                for m in mids {
                    xs.clear();
                    inner.preimages(&m.x, input_dim, &mut xs);
                    out.extend(xs.drain(..).map(|p| Preimage {
                        x: p.x,
                        jacobian: p.jacobian * m.jacobian,
                    }));
                }
            }
        }
    }
}

/// Cell of the uniform quantizer, clamped to `[0, levels)`; edges go up.
pub(crate) fn quantizer_cell(x: f64, levels: u32, lo: f64, hi: f64) -> u32 {
    let i = floor_cell((x - lo) / (hi - lo), levels as f64);
    i.clamp(0, levels as i64 - 1) as u32
}

pub(crate) fn quantizer_level(i: u32, levels: u32, lo: f64, hi: f64) -> f64 {
    lo + (i as f64 + 0.5) * (hi - lo) / levels as f64
}

/// A system with its structure compiled for fast atom lookup.
#[derive(Clone, Debug)]
pub struct StructuredMap {
    system: Option<SystemSpec>,
    input_dim: usize,
    output_dim: usize,
    structure: Structure,
    atom_index: HashMap<Vec<u64>, usize>,
}

impl StructuredMap {
    pub fn new(system: &SystemSpec, input_dim: usize) -> Option<Self> {
        let output_dim = system.validate(input_dim).ok()?;
        let structure = system.structure(input_dim)?;
        Some(Self::from_parts(Some(system.clone()), input_dim, output_dim, structure))
    }

    /// The map that forgets its input entirely (a dropped projection axis).
    pub(crate) fn dropped(input_dim: usize) -> Self {
        let structure = Structure {
            constant_sets: vec![ConstantSet {
                output: Vec::new(),
                region: vec![Region::new(vec![Interval::everything(); input_dim])],
            }],
            piecewise_bijective: true,
            pieces: Some(Vec::new()),
            max_preimages: 0,
        };
        Self::from_parts(None, input_dim, 0, structure)
    }

    fn from_parts(system: Option<SystemSpec>, input_dim: usize, output_dim: usize, structure: Structure) -> Self {
        let atom_index = structure
            .constant_sets
            .iter()
            .enumerate()
            .map(|(i, s)| (output_key(&s.output), i))
            .collect();
        StructuredMap {
            system,
            input_dim,
            output_dim,
            structure,
            atom_index,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn structure(&self) -> &Structure {
        &self.structure
    }

    pub fn apply_into(&self, x: &[f64], out: &mut Vec<f64>) {
        if let Some(s) = &self.system {
            s.apply_into(x, out);
        }
    }

    /// Index of the constant set whose image is exactly `y`.
    pub fn atom_of(&self, y: &[f64]) -> Option<usize> {
        if self.atom_index.is_empty() {
            return None;
        }
        self.atom_index.get(&output_key(y)).copied()
    }

    pub fn preimages(&self, y: &[f64], out: &mut Vec<Preimage>) {
        if let Some(s) = &self.system {
            s.preimages(y, self.input_dim, out);
        }
    }
}

/// Atoms of `P_Y` under `dist`, with masses `P_X(A_i)`; zero-mass atoms are
/// omitted.
///
/// Systems that only have structure blockwise (componentwise maps mixing
/// constant and bijective components) report the product atoms, i.e. the
/// outputs where every block sits on one of its own atoms.
pub fn atom_table(system: &SystemSpec, dist: &DistributionSpec) -> Result<AtomTable> {
    let n = dist.validate()?;
    system.validate(n)?;
    let sets = match system.structure(n) {
        Some(s) => s.constant_sets,
        None => match ConditionalModel::new(system, dist) {
            Some(model) => model.product_atoms(),
            None => Vec::new(),
        },
    };
    let entries = sets
        .into_iter()
        .filter_map(|s| {
            let mass = dist.union_prob(&s.region);
            (mass > 0.0).then_some(AtomEntry {
                output: s.output,
                region: s.region,
                mass,
            })
        })
        .collect();
    Ok(AtomTable { entries })
}

/// The exact relative information loss `P_X(A)` for an absolutely
/// continuous input and a map that is constant on the boxes `A_i` and
/// piecewise bijective elsewhere.
///
/// Componentwise maps (and projections) on product inputs are handled one
/// block at a time and averaged with weights proportional to block
/// dimension, which is the dimension-ratio formula for independent blocks.
/// Returns `None` whenever the hypotheses cannot be certified.
pub fn analytic_relative_loss(system: &SystemSpec, dist: &DistributionSpec) -> Option<f64> {
    let n = dist.validate().ok()?;
    system.validate(n).ok()?;
    if !dist.is_absolutely_continuous() {
        return None;
    }
    if let Some(s) = system.structure(n) {
        if !s.piecewise_bijective {
            return None;
        }
        let mass: f64 = s.constant_sets.iter().map(|c| dist.union_prob(&c.region)).sum();
        return Some(mass.min(1.0) + 0.0);
    }
    let model = ConditionalModel::new(system, dist)?;
    if model.blocks().len() < 2 {
        return None;
    }
    let mut total = 0.0;
    for b in model.blocks() {
        let s = b.map.structure();
        if !s.piecewise_bijective {
            return None;
        }
        let mass: f64 = s.constant_sets.iter().map(|c| b.dist.union_prob(&c.region)).sum();
        total += b.input_axes.len() as f64 * mass.min(1.0);
    }
    Some(total / n as f64 + 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn apply(s: &SystemSpec, x: &[f64]) -> Vec<f64> {
        s.apply(x).unwrap()
    }

    #[test]
    fn center_clipper_definition() {
        let s = SystemSpec::center_clipper(0.5);
        assert_eq!(apply(&s, &[0.3]), vec![0.0]);
        assert_eq!(apply(&s, &[0.8]), vec![0.8]);
        assert_eq!(apply(&s, &[-0.5]), vec![0.0]);
        assert_eq!(apply(&s, &[-0.51]), vec![-0.51]);
    }

    #[test]
    fn identity_and_dimension_mismatch() {
        assert_eq!(apply(&SystemSpec::Identity, &[0.2, -0.7]), vec![0.2, -0.7]);
        assert!(matches!(
            SystemSpec::center_clipper(0.5).apply(&[0.1, 0.2]),
            Err(Error::Config(_))
        ));
        let cw = SystemSpec::componentwise(vec![SystemSpec::Identity]);
        assert!(cw.apply(&[0.1, 0.2]).is_err());
    }

    #[test]
    fn quantizer_midpoints_and_ties() {
        let q = SystemSpec::uniform_quantizer(8, 0.0, 1.0);
        assert_eq!(apply(&q, &[0.0]), vec![0.0625]);
        assert_eq!(apply(&q, &[0.125]), vec![0.1875]);
        assert_eq!(apply(&q, &[0.999]), vec![0.9375]);
        assert_eq!(apply(&q, &[1.0]), vec![0.9375]);
        assert_eq!(apply(&q, &[-3.0]), vec![0.0625]);
    }

    #[test]
    fn constant_sets_map_to_their_atoms() {
        let systems = [
            SystemSpec::center_clipper(0.5),
            SystemSpec::magnitude_clipper(0.25),
            SystemSpec::uniform_quantizer(5, -1.0, 1.0),
            SystemSpec::compose(SystemSpec::uniform_quantizer(4, 0.0, 1.0), SystemSpec::affine(-2.0, 1.0)),
            SystemSpec::compose(SystemSpec::affine(2.0, 0.5), SystemSpec::uniform_quantizer(4, 0.0, 1.0)),
        ];
        for s in systems {
            let st = s.structure(1).unwrap();
            for (i, set) in st.constant_sets.iter().enumerate() {
                for r in &set.region {
                    let iv = r.axes[0];
                    let lo = iv.lo.max(-5.0);
                    let hi = iv.hi.min(5.0);
                    for t in 0..=20 {
                        let x = lo + (hi - lo) * t as f64 / 20.0;
                        if !iv.contains(x) {
                            continue;
                        }
                        let y = apply(&s, &[x]);
                        assert_eq!(output_key(&y), output_key(&set.output), "{} set {i} at x={x}", s.label());
                    }
                }
            }
        }
    }

    #[test]
    fn atom_tables() {
        let t = atom_table(&SystemSpec::center_clipper(0.5), &DistributionSpec::uniform(-1.0, 1.0)).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.entries[0].output, vec![0.0]);
        assert!((t.entries[0].mass - 0.5).abs() < 1e-15);

        let t = atom_table(&SystemSpec::uniform_quantizer(8, 0.0, 1.0), &DistributionSpec::uniform(0.0, 1.0)).unwrap();
        assert_eq!(t.len(), 8);
        assert!(t.entries.iter().all(|e| (e.mass - 0.125).abs() < 1e-15));

        let t = atom_table(&SystemSpec::Identity, &DistributionSpec::uniform(0.0, 1.0)).unwrap();
        assert!(t.is_empty());

        // levels outside the support carry no mass
        let t = atom_table(&SystemSpec::uniform_quantizer(8, 0.0, 2.0), &DistributionSpec::uniform(0.0, 1.0)).unwrap();
        assert_eq!(t.len(), 4);
    }

    #[test]
    fn analytic_losses() {
        let u = DistributionSpec::uniform(-1.0, 1.0);
        let a = |s: &SystemSpec, d: &DistributionSpec| analytic_relative_loss(s, d);
        assert!((a(&SystemSpec::center_clipper(0.5), &u).unwrap() - 0.5).abs() < 1e-15);
        let u01 = DistributionSpec::uniform(0.0, 1.0);
        assert!((a(&SystemSpec::uniform_quantizer(8, 0.0, 1.0), &u01).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(a(&SystemSpec::Identity, &u01), Some(0.0));
        assert_eq!(a(&SystemSpec::Square, &u), Some(0.0));
        // discrete input violates the hypotheses
        assert_eq!(a(&SystemSpec::Identity, &DistributionSpec::point_mass(vec![0.5])), None);
        let q_then_affine =
            SystemSpec::compose(SystemSpec::uniform_quantizer(8, 0.0, 1.0), SystemSpec::affine(3.0, -1.0));
        assert!((a(&q_then_affine, &u01).unwrap() - 1.0).abs() < 1e-15);
        let u2 = DistributionSpec::uniform_box(vec![0.0, 0.0], vec![1.0, 1.0]);
        let cw = SystemSpec::componentwise(vec![SystemSpec::Identity, SystemSpec::uniform_quantizer(8, 0.0, 1.0)]);
        assert!((a(&cw, &u2).unwrap() - 0.5).abs() < 1e-15);
        assert!((a(&SystemSpec::projection(vec![1]), &u2).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn preimages_invert_apply() {
        let cases = [
            (SystemSpec::Square, 0.3),
            (SystemSpec::Magnitude, -0.7),
            (SystemSpec::magnitude_clipper(0.5), 0.9),
            (SystemSpec::center_clipper(0.5), -0.9),
            (SystemSpec::affine(-2.0, 1.0), 0.25),
            (SystemSpec::compose(SystemSpec::affine(2.0, 0.0), SystemSpec::Square), -0.4),
        ];
        for (s, x) in cases {
            let y = apply(&s, &[x]);
            let mut pre = Vec::new();
            s.preimages(&y, 1, &mut pre);
            assert!(
                pre.iter().any(|p| (p.x[0] - x).abs() < 1e-12),
                "{}: {x} not among {pre:?}",
                s.label()
            );
            for p in &pre {
                assert!((apply(&s, &p.x)[0] - y[0]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn composition_merges_atoms_with_equal_images() {
        // symmetric quantizer followed by a square: levels ±0.25 and ±0.75 collide
        let s = SystemSpec::compose(SystemSpec::uniform_quantizer(4, -1.0, 1.0), SystemSpec::Square);
        let st = s.structure(1).unwrap();
        assert_eq!(st.constant_sets.len(), 2);
        let t = atom_table(&s, &DistributionSpec::uniform(-1.0, 1.0)).unwrap();
        assert!(t.entries.iter().all(|e| (e.mass - 0.5).abs() < 1e-15));
    }
}
