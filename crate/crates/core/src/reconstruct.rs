//! MAP reconstruction of `X̂_n` from `Y` and the error probability `P_e,n`.
//!
//! Outputs that are atoms are reconstructed to the modal training cell of
//! their group. Any other output has finitely many preimages whose
//! posterior weights are known exactly, so its MAP cell is computed
//! directly instead of being learned.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::entropy::{preimage_cells, preimage_weights, runs, Grid, Prepared, NO_ATOM};
use crate::error::{Error, Result};
use crate::measure::{sample, DistributionSpec};
use crate::quantizer::{dyadic, MAX_LEVEL};
use crate::systems::SystemSpec;

/// Rules for one ladder level.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelRule {
    pub k: u32,
    /// Per block: atom index to the cell (block coordinates) it maps to.
    pub atoms: Vec<BTreeMap<u32, Vec<i64>>>,
    /// Modal cell of the whole training batch, used for unseen atoms.
    pub fallback: Vec<i64>,
}

/// Empirical MAP reconstructor over a range of levels.
#[derive(Clone, Debug, Serialize)]
pub struct Reconstructor {
    pub levels: Vec<LevelRule>,
    pub training_samples: usize,
    pub training_seed: u64,
    k_max: u32,
    #[serde(skip)]
    system: SystemSpec,
    #[serde(skip)]
    dist: DistributionSpec,
}

impl Reconstructor {
    pub fn rule(&self, k: u32) -> Option<&LevelRule> {
        self.levels.iter().find(|l| l.k == k)
    }
}

/// Modal cell of a Z-sorted grid at `shift`; ties go to the smallest cell
/// in lexicographic order.
fn modal_cell(grid: &Grid, shift: u32) -> Vec<i64> {
    let mut best: Option<(u64, Vec<i64>)> = None;
    for (start, count) in runs(grid, shift) {
        let cell = grid.cell(start, shift);
        let better = match &best {
            None => true,
            Some((c, b)) => count > *c || (count == *c && cell < *b),
        };
        if better {
            best = Some((count, cell));
        }
    }
    best.map(|b| b.1).unwrap_or_default()
}

fn check_levels(k_min: u32, k_max: u32) -> Result<()> {
    if k_min > k_max || k_max > MAX_LEVEL - 6 {
        return Err(Error::config(format!("invalid ladder {k_min}..={k_max}")));
    }
    Ok(())
}

/// Trains the reconstructor for every level in `k_min..=k_max` on one batch.
pub fn train_map_reconstructor(
    dist: &DistributionSpec,
    system: &SystemSpec,
    k_min: u32,
    k_max: u32,
    samples: usize,
    seed: u64,
) -> Result<Reconstructor> {
    check_levels(k_min, k_max)?;
    let batch = sample(dist, samples, seed)?;
    let p = Prepared::new(dist, system, batch, k_max)?;
    let model = p
        .model
        .as_ref()
        .ok_or_else(|| Error::config(format!("{} has no declared structure on this input", system.label())))?;

    let mut all = p.grid.clone();
    all.sort_z();

    let mut groups: Vec<BTreeMap<u32, Grid>> = Vec::with_capacity(model.blocks().len());
    for (b, block) in model.blocks().iter().enumerate() {
        let mut rows: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for (i, &a) in p.atoms[b].iter().enumerate() {
            if a != NO_ATOM {
                rows.entry(a).or_default().push(i as u32);
            }
        }
        groups.push(
            rows.into_iter()
                .map(|(a, r)| {
                    let mut g = p.grid.gather(&r, &block.input_axes);
                    g.sort_z();
                    (a, g)
                })
                .collect(),
        );
    }

    let levels = (k_min..=k_max)
        .map(|k| {
            let shift = k_max - k;
            LevelRule {
                k,
                atoms: groups
                    .iter()
                    .map(|g| g.iter().map(|(&a, grid)| (a, modal_cell(grid, shift))).collect())
                    .collect(),
                fallback: modal_cell(&all, shift),
            }
        })
        .collect();
    Ok(Reconstructor {
        levels,
        training_samples: samples,
        training_seed: seed,
        k_max,
        system: system.clone(),
        dist: dist.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PePoint {
    pub k: u32,
    pub n: u64,
    pub pe: f64,
    pub errors: u64,
    pub samples: u64,
}

/// `P_e,n` over the ladder.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PeSequence {
    pub points: Vec<PePoint>,
}

impl PeSequence {
    pub fn max(&self) -> f64 {
        self.points.iter().map(|p| p.pe).fold(0.0, f64::max)
    }

    /// Whether no step decreases by more than `tol`.
    pub fn is_monotone(&self, tol: f64) -> bool {
        self.points.windows(2).all(|w| w[1].pe + tol >= w[0].pe)
    }
}

/// Fraction of held-out samples whose cell differs from the reconstruction,
/// for every trained level.
pub fn error_probability(
    rec: &Reconstructor,
    dist: &DistributionSpec,
    system: &SystemSpec,
    samples: usize,
    seed: u64,
) -> Result<PeSequence> {
    if seed == rec.training_seed {
        return Err(Error::config("evaluation seed must differ from the training seed"));
    }
    if *system != rec.system || *dist != rec.dist {
        return Err(Error::config("reconstructor was trained on a different system or input"));
    }
    let batch = sample(dist, samples, seed)?;
    let p = Prepared::new(dist, system, batch, rec.k_max)?;
    let model = p.model.as_ref().expect("trained reconstructor implies a model");
    let shifts: Vec<u32> = rec.levels.iter().map(|l| rec.k_max - l.k).collect();

    let idx: Vec<usize> = (0..p.count()).collect();
    let partials: Vec<Vec<u64>> = idx
        .par_chunks(1 << 14)
        .map(|chunk| {
            let mut errors = vec![0u64; shifts.len()];
            let mut pre = Vec::new();
            let mut w = Vec::new();
            let mut y = Vec::new();
            for &i in chunk {
                let row = p.output(i);
                let mut wrong = vec![false; shifts.len()];
                for (b, block) in model.blocks().iter().enumerate() {
                    let truth = |shift: u32| -> Vec<i64> {
                        let g = p.grid.row(i);
                        block
                            .input_axes
                            .iter()
                            .map(|&a| (g[a] >> shift) as i64 + (p.grid.base[a] >> shift))
                            .collect()
                    };
                    let atom = p.atoms[b][i];
                    if atom != NO_ATOM {
                        for (j, level) in rec.levels.iter().enumerate() {
                            if wrong[j] {
                                continue;
                            }
                            let guess = match level.atoms[b].get(&atom) {
                                Some(c) => c.clone(),
                                None => block.input_axes.iter().map(|&a| level.fallback[a]).collect(),
                            };
                            wrong[j] = guess != truth(shifts[j]);
                        }
                    } else {
                        y.clear();
                        y.extend(block.output_cols.iter().map(|&c| row[c]));
                        preimage_weights(block, &y, &mut pre, &mut w);
                        let local: Vec<usize> = (0..block.input_axes.len()).collect();
                        for (j, &shift) in shifts.iter().enumerate() {
                            if wrong[j] {
                                continue;
                            }
                            let cells = preimage_cells(&pre, &w, &local, p.grid.top, shift);
                            // cells are sorted, so the first maximum is the smallest cell
                            let guess = cells
                                .iter()
                                .fold(None::<&(Vec<i64>, f64)>, |best, c| match best {
                                    Some(b) if b.1 >= c.1 => Some(b),
                                    _ => Some(c),
                                })
                                .map(|c| c.0.clone());
                            wrong[j] = guess.as_ref() != Some(&truth(shift));
                        }
                    }
                }
                for (e, &bad) in errors.iter_mut().zip(&wrong) {
                    *e += bad as u64;
                }
            }
            errors
        })
        .collect();
    let mut errors = vec![0u64; shifts.len()];
    for part in partials {
        for (e, v) in errors.iter_mut().zip(part) {
            *e += v;
        }
    }
    let total = p.count() as u64;
    Ok(PeSequence {
        points: rec
            .levels
            .iter()
            .zip(errors)
            .map(|(l, e)| PePoint {
                k: l.k,
                n: dyadic(l.k),
                pe: e as f64 / total as f64,
                errors: e,
                samples: total,
            })
            .collect(),
    })
}

/// Trains on `train_seed` and evaluates on `eval_seed`.
#[allow(clippy::too_many_arguments)]
pub fn pe_sequence(
    dist: &DistributionSpec,
    system: &SystemSpec,
    k_min: u32,
    k_max: u32,
    train_samples: usize,
    train_seed: u64,
    eval_samples: usize,
    eval_seed: u64,
) -> Result<PeSequence> {
    let rec = train_map_reconstructor(dist, system, k_min, k_max, train_samples, train_seed)?;
    error_probability(&rec, dist, system, eval_samples, eval_seed)
}

/// Slack allowed on `P_e ≥ l` for sampling noise.
pub const FANO_TOLERANCE: f64 = 0.02;

/// Slack allowed on the monotonicity of `P_e,n`.
pub const MONOTONE_TOLERANCE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FanoCheck {
    pub satisfied: bool,
    /// `max_k P_e,n − l`
    pub margin: f64,
    pub pe_max: f64,
    pub monotone: bool,
}

/// Compares the largest `P_e,n` with the relative loss `l`.
///
/// ```
/// use infoloss::reconstruct::{fano_check, PePoint, PeSequence};
///
/// let pe = PeSequence {
///     points: vec![
///         PePoint { k: 4, n: 16, pe: 0.47, errors: 47, samples: 100 },
///         PePoint { k: 5, n: 32, pe: 0.49, errors: 49, samples: 100 },
///     ],
/// };
/// let check = fano_check(0.5, &pe);
/// assert!(check.satisfied);
/// assert!((check.margin + 0.01).abs() < 1e-12);
/// ```
pub fn fano_check(relative_slope: f64, pe: &PeSequence) -> FanoCheck {
    let pe_max = pe.max();
    FanoCheck {
        satisfied: pe_max + FANO_TOLERANCE >= relative_slope,
        margin: pe_max - relative_slope,
        pe_max,
        monotone: pe.is_monotone(MONOTONE_TOLERANCE),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_reconstructs_exactly() {
        let d = DistributionSpec::uniform(0.0, 1.0);
        let pe = pe_sequence(&d, &SystemSpec::Identity, 2, 8, 5000, 1, 5000, 2).unwrap();
        assert!(pe.points.iter().all(|p| p.errors == 0));
    }

    #[test]
    fn clipper_atom_goes_to_the_leftmost_modal_cell() {
        let d = DistributionSpec::uniform(-1.0, 1.0);
        let s = SystemSpec::center_clipper(0.5);
        let rec = train_map_reconstructor(&d, &s, 1, 1, 100_000, 3).unwrap();
        // at n = 2 the atom [-0.5, 0.5] splits evenly into cells -1 and 0
        let cell = &rec.rule(1).unwrap().atoms[0][&0];
        assert!(cell == &vec![-1] || cell == &vec![0]);
        let rec = train_map_reconstructor(&d, &s, 4, 4, 100_000, 3).unwrap();
        let c = rec.rule(4).unwrap().atoms[0][&0][0];
        assert!((-8..8).contains(&c), "cell {c} outside [-0.5, 0.5]");
    }

    #[test]
    fn quantizer_atoms_map_inside_their_cells() {
        let d = DistributionSpec::uniform(0.0, 1.0);
        let rec = train_map_reconstructor(&d, &SystemSpec::uniform_quantizer(8, 0.0, 1.0), 6, 6, 20_000, 5).unwrap();
        let rules = &rec.rule(6).unwrap().atoms[0];
        assert_eq!(rules.len(), 8);
        for (&a, cell) in rules {
            assert_eq!(cell[0] >> 3, a as i64);
        }
    }

    #[test]
    fn equal_seeds_are_rejected() {
        let d = DistributionSpec::uniform(0.0, 1.0);
        let rec = train_map_reconstructor(&d, &SystemSpec::Identity, 2, 3, 1000, 4).unwrap();
        assert!(matches!(
            error_probability(&rec, &d, &SystemSpec::Identity, 1000, 4),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn magnitude_loses_the_sign() {
        let d = DistributionSpec::uniform(-1.0, 1.0);
        let pe = pe_sequence(&d, &SystemSpec::Magnitude, 3, 6, 20_000, 1, 20_000, 2).unwrap();
        for p in &pe.points {
            assert!((p.pe - 0.5).abs() < 0.02, "{p:?}");
        }
    }
}
