//! Decomposition of a (distribution, system) pair into independent blocks.
//!
//! When the input is a product and the map acts axis by axis, `X̂_n` given
//! `Y` factorizes: `H(X̂_n|Y) = Σ_b H(X̂_{n,b}|Y_b)`. Each block then only
//! needs its own one-dimensional structure, which is what makes the exact
//! conditional available for maps like `(identity, quantizer)` whose joint
//! output is neither an atom nor finitely invertible.

use crate::measure::{DistributionSpec, Region};
use crate::systems::{ConstantSet, StructuredMap, SystemSpec};

/// One independent block: input axes, the output columns they produce, the
/// block map and the block's input law.
#[derive(Clone, Debug)]
pub struct Block {
    pub input_axes: Vec<usize>,
    pub output_cols: Vec<usize>,
    pub map: StructuredMap,
    pub dist: DistributionSpec,
}

/// Structured view of `g` under `P_X`, used by the exact conditioning and
/// by the reconstructor.
#[derive(Clone, Debug)]
pub struct ConditionalModel {
    blocks: Vec<Block>,
    input_dim: usize,
    output_dim: usize,
}

#[derive(Clone, Debug)]
enum AxisMap {
    Map(SystemSpec),
    Dropped,
}

/// Per-axis maps when `system` acts on each input axis separately.
fn separable(system: &SystemSpec, n: usize) -> Option<Vec<AxisMap>> {
    match system {
        SystemSpec::Identity | SystemSpec::Affine { .. } => Some(vec![AxisMap::Map(system.clone()); n]),
        SystemSpec::Componentwise { components } => {
            Some(components.iter().cloned().map(AxisMap::Map).collect())
        }
        SystemSpec::CoordinateProjection { kept_axes } => Some(
            (0..n)
                .map(|a| {
                    if kept_axes.contains(&a) {
                        AxisMap::Map(SystemSpec::Identity)
                    } else {
                        AxisMap::Dropped
                    }
                })
                .collect(),
        ),
        SystemSpec::Composition { inner, outer } => {
            if outer.as_affine().is_some() {
                let parts = separable(inner, n)?;
                Some(
                    parts
                        .into_iter()
                        .map(|p| match p {
                            AxisMap::Map(s) => AxisMap::Map(SystemSpec::compose(s, (**outer).clone())),
                            AxisMap::Dropped => AxisMap::Dropped,
                        })
                        .collect(),
                )
            } else if inner.as_affine().is_some() {
                let parts = separable(outer, n)?;
                Some(
                    parts
                        .into_iter()
                        .map(|p| match p {
                            AxisMap::Map(s) => AxisMap::Map(SystemSpec::compose((**inner).clone(), s)),
                            AxisMap::Dropped => AxisMap::Dropped,
                        })
                        .collect(),
                )
            } else {
                None
            }
        }
        _ => None,
    }
}

/// Output columns produced by each input axis, for maps that act axis by
/// axis (regardless of the input law).
pub fn axis_output_columns(system: &SystemSpec, n: usize) -> Option<Vec<Vec<usize>>> {
    system.validate(n).ok()?;
    let parts = separable(system, n)?;
    let mut col = 0;
    let mut out = Vec::with_capacity(n);
    for p in parts {
        let m = match p {
            AxisMap::Map(s) => s.validate(1).ok()?,
            AxisMap::Dropped => 0,
        };
        out.push((col..col + m).collect());
        col += m;
    }
    Some(out)
}

impl ConditionalModel {
    /// Factorized model if possible, else a single joint block, else `None`
    /// (no exact conditioning available).
    pub fn new(system: &SystemSpec, dist: &DistributionSpec) -> Option<Self> {
        let n = dist.validate().ok()?;
        let output_dim = system.validate(n).ok()?;
        if n > 1 {
            if let Some(model) = Self::factorized(system, dist, n, output_dim) {
                return Some(model);
            }
        }
        let map = StructuredMap::new(system, n)?;
        Some(ConditionalModel {
            blocks: vec![Block {
                input_axes: (0..n).collect(),
                output_cols: (0..output_dim).collect(),
                map,
                dist: dist.clone(),
            }],
            input_dim: n,
            output_dim,
        })
    }

    fn factorized(system: &SystemSpec, dist: &DistributionSpec, n: usize, output_dim: usize) -> Option<Self> {
        let parts = separable(system, n)?;
        let dists = dist.split_into_blocks(&vec![1; n])?;
        let mut blocks = Vec::with_capacity(n);
        let mut col = 0;
        for (axis, (part, d)) in parts.into_iter().zip(dists).enumerate() {
            let map = match part {
                AxisMap::Map(s) => StructuredMap::new(&s, 1)?,
                AxisMap::Dropped => StructuredMap::dropped(1),
            };
            let m = map.output_dim();
            blocks.push(Block {
                input_axes: vec![axis],
                output_cols: (col..col + m).collect(),
                map,
                dist: d,
            });
            col += m;
        }
        debug_assert_eq!(col, output_dim);
        Some(ConditionalModel {
            blocks,
            input_dim: n,
            output_dim,
        })
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Whether every input axis is its own block.
    pub fn is_axiswise(&self) -> bool {
        self.blocks.iter().all(|b| b.input_axes.len() == 1)
    }

    /// Block containing input axis `axis`.
    pub fn block_of_axis(&self, axis: usize) -> Option<usize> {
        self.blocks.iter().position(|b| b.input_axes.contains(&axis))
    }

    /// Joint atoms: outputs where every block sits on one of its own atoms.
    pub fn product_atoms(&self) -> Vec<ConstantSet> {
        let mut sets = vec![(Vec::new(), Region::new(Vec::new()))];
        for b in &self.blocks {
            let own = &b.map.structure().constant_sets;
            let mut next = Vec::with_capacity(sets.len() * own.len());
            for (out, reg) in &sets {
                for c in own {
                    for r in &c.region {
                        let mut o: Vec<f64> = out.clone();
                        o.extend_from_slice(&c.output);
                        next.push((o, reg.product(r)));
                    }
                }
            }
            sets = next;
        }
        let mut merged: Vec<ConstantSet> = Vec::new();
        for (output, region) in sets {
            match merged.iter_mut().find(|s| s.output == output) {
                Some(s) => s.region.push(region),
                None => merged.push(ConstantSet {
                    output,
                    region: vec![region],
                }),
            }
        }
        merged
    }
}
