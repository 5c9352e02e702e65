//! Relative and absolute information loss, and the bounds they satisfy.

use serde::Serialize;

use crate::dimension::{conditional_dimension, fit_dimension, marginal_dimension, DimensionFit};
use crate::entropy::EntropyCurve;
use crate::error::{Error, Result};
use crate::measure::DistributionSpec;
use crate::systems::SystemSpec;

/// Below this marginal slope the input has (numerically) no continuous
/// part and the relative loss is undefined.
pub const MIN_MARGINAL_SLOPE: f64 = 0.1;

/// A conditional slope at or above this means `H(X̂_n|Y)` grows without
/// bound.
pub const DIVERGENCE_SLOPE: f64 = 0.05;

/// Rows averaged for the limit of a converging conditional column.
pub const LIMIT_ROWS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RelativeLoss {
    /// `H(X̂_n|Y)/H(X̂_n)` on the finest reliable row.
    pub ratio: f64,
    /// Conditional slope over marginal slope, clamped to `[0, 1]`.
    pub slope: f64,
    /// The same before clamping.
    pub slope_raw: f64,
    pub marginal: DimensionFit,
    pub conditional: DimensionFit,
}

/// Ratio and slope estimates of the relative loss.
pub fn relative_loss(curve: &EntropyCurve) -> Result<RelativeLoss> {
    let marginal = marginal_dimension(curve)?;
    let conditional = conditional_dimension(curve)?;
    relative_from_fits(curve, marginal, conditional)
}

fn relative_from_fits(curve: &EntropyCurve, marginal: DimensionFit, conditional: DimensionFit) -> Result<RelativeLoss> {
    if marginal.slope < MIN_MARGINAL_SLOPE {
        return Err(Error::UndefinedRelativeLoss {
            slope: marginal.slope,
            threshold: MIN_MARGINAL_SLOPE,
        });
    }
    let row = curve.finest_reliable().expect("fit implies reliable rows");
    let slope_raw = conditional.slope / marginal.slope;
    Ok(RelativeLoss {
        ratio: row.ratio(),
        slope: slope_raw.clamp(0.0, 1.0),
        slope_raw,
        marginal,
        conditional,
    })
}

/// `L(X→Y)` in bits, or divergence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AbsoluteLoss {
    Finite(f64),
    Diverging,
}

impl AbsoluteLoss {
    pub fn label(&self) -> String {
        match self {
            AbsoluteLoss::Finite(b) => format!("{b:.6}"),
            AbsoluteLoss::Diverging => "diverging".into(),
        }
    }
}

/// Limit of the conditional column when it flattens out, else divergence.
pub fn absolute_loss(curve: &EntropyCurve) -> Result<AbsoluteLoss> {
    let fit = conditional_dimension(curve)?;
    Ok(absolute_from_fit(curve, &fit))
}

fn absolute_from_fit(curve: &EntropyCurve, fit: &DimensionFit) -> AbsoluteLoss {
    if fit.slope >= DIVERGENCE_SLOPE {
        return AbsoluteLoss::Diverging;
    }
    let col = curve.conditional_column();
    let tail = &col[col.len().saturating_sub(LIMIT_ROWS)..];
    AbsoluteLoss::Finite(tail.iter().map(|(_, h)| h).sum::<f64>() / tail.len() as f64)
}

/// Mean per-step growth of the conditional column over its last
/// `LIMIT_ROWS` steps, the divergence signature.
pub fn conditional_growth(curve: &EntropyCurve) -> Option<f64> {
    let col = curve.conditional_column();
    if col.len() < LIMIT_ROWS + 1 {
        return None;
    }
    let (k0, h0) = col[col.len() - 1 - LIMIT_ROWS];
    let (k1, h1) = col[col.len() - 1];
    Some((h1 - h0) / (k1 - k0) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AxisLoss {
    pub axis: usize,
    /// `l(X_i → Y)`
    pub given_output: f64,
    /// `l(X_i → Y_i)`
    pub given_own_output: f64,
}

/// Right-hand sides of the componentwise bound
/// `l(X→Y) ≤ (1/N) Σ l(X_i→Y) ≤ (1/N) Σ l(X_i→Y_i)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComponentwiseBound {
    pub joint: f64,
    pub marginal: f64,
    pub axes: Vec<AxisLoss>,
}

fn slope_ratio(marg: &[(u32, f64)], cond: &[(u32, f64)]) -> Result<f64> {
    let m = fit_dimension(marg)?;
    if m.slope < MIN_MARGINAL_SLOPE {
        return Err(Error::UndefinedRelativeLoss {
            slope: m.slope,
            threshold: MIN_MARGINAL_SLOPE,
        });
    }
    Ok((fit_dimension(cond)?.slope / m.slope).clamp(0.0, 1.0))
}

/// Componentwise bound from the per-axis curves of `curve`.
///
/// Only product inputs with at least two axes are accepted.
pub fn componentwise_bound(dist: &DistributionSpec, system: &SystemSpec, curve: &EntropyCurve) -> Result<ComponentwiseBound> {
    let n = dist.validate()?;
    system.validate(n)?;
    if n < 2 {
        return Err(Error::config("componentwise bound needs at least two input axes"));
    }
    if dist.split_into_blocks(&vec![1; n]).is_none() {
        return Err(Error::config(format!(
            "componentwise bound needs a product input, got {}",
            dist.label()
        )));
    }
    if curve.axes.len() != n {
        return Err(Error::config("curve was computed without per-axis rows"));
    }
    let mut axes = Vec::with_capacity(n);
    for ac in &curve.axes {
        let rel: Vec<_> = ac.rows.iter().filter(|r| r.reliable).collect();
        let marg: Vec<(u32, f64)> = rel.iter().map(|r| (r.k, r.h_marginal)).collect();
        let joint: Vec<(u32, f64)> = rel.iter().map(|r| (r.k, r.h_given_output)).collect();
        let own: Option<Vec<(u32, f64)>> = rel.iter().map(|r| r.h_given_own_output.map(|h| (r.k, h))).collect();
        let own = own.ok_or_else(|| {
            Error::config(format!(
                "axis {} has no output of its own under {}",
                ac.axis,
                system.label()
            ))
        })?;
        axes.push(AxisLoss {
            axis: ac.axis,
            given_output: slope_ratio(&marg, &joint).map_err(|e| e.context(format!("axis {}", ac.axis)))?,
            given_own_output: slope_ratio(&marg, &own).map_err(|e| e.context(format!("axis {}", ac.axis)))?,
        });
    }
    Ok(ComponentwiseBound {
        joint: axes.iter().map(|a| a.given_output).sum::<f64>() / n as f64,
        marginal: axes.iter().map(|a| a.given_own_output).sum::<f64>() / n as f64,
        axes,
    })
}

/// `l − (1 − d(Y)/d(X))`; a diagnostic, not a claim.
pub fn conjecture_gap(loss_slope: f64, dx: &DimensionFit, dy: &DimensionFit) -> f64 {
    loss_slope - (1.0 - dy.slope / dx.slope)
}

/// All loss quantities of one run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossReport {
    pub relative: RelativeLoss,
    pub analytic: Option<f64>,
    /// `|relative-slope − analytic|` when the analytic value exists.
    pub estimator_error: Option<f64>,
    pub absolute: AbsoluteLoss,
    pub conditional_growth: Option<f64>,
    pub output_dimension: Option<DimensionFit>,
    pub componentwise: Option<ComponentwiseBound>,
    pub conjecture_gap: Option<f64>,
}

impl LossReport {
    /// Builds the report; the componentwise bound is attempted only when the
    /// curve carries per-axis rows.
    pub fn build(dist: &DistributionSpec, system: &SystemSpec, curve: &EntropyCurve) -> Result<LossReport> {
        let relative = relative_loss(curve)?;
        let analytic = crate::systems::analytic_relative_loss(system, dist);
        let absolute = absolute_from_fit(curve, &relative.conditional);
        let output_dimension = crate::dimension::output_dimension(curve).ok();
        let conjecture_gap = output_dimension
            .as_ref()
            .map(|dy| conjecture_gap(relative.slope, &relative.marginal, dy));
        let componentwise = if curve.axes.is_empty() {
            None
        } else {
            Some(componentwise_bound(dist, system, curve)?)
        };
        Ok(LossReport {
            estimator_error: analytic.map(|a| (relative.slope - a).abs()),
            analytic,
            absolute,
            conditional_growth: conditional_growth(curve),
            output_dimension,
            componentwise,
            conjecture_gap,
            relative,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::{CurveRow, Mode};

    fn curve(cols: &[(u32, f64, f64)]) -> EntropyCurve {
        EntropyCurve {
            rows: cols
                .iter()
                .map(|&(k, m, c)| CurveRow {
                    k,
                    n: 1 << k,
                    h_marginal: m,
                    h_conditional: c,
                    h_output: m - c,
                    distinct_bins: 1 << k,
                    max_bin_count: 1,
                    samples_per_bin: 1.0,
                    output_bins: 1,
                    reliable: true,
                    output_reliable: true,
                })
                .collect(),
            axes: Vec::new(),
            sample_count: 1_000_000,
            seed: 0,
            mode: Mode::AtomOracle,
            miller_madow: false,
            input_dim: 1,
            output_dim: 1,
        }
    }

    #[test]
    fn quantizer_shaped_curve() {
        let c = curve(&(4..=12).map(|k| (k, k as f64, k as f64 - 3.0)).collect::<Vec<_>>());
        let r = relative_loss(&c).unwrap();
        assert!((r.ratio - 0.75).abs() < 1e-12);
        assert!((r.slope - 1.0).abs() < 1e-12);
        assert_eq!(absolute_loss(&c).unwrap(), AbsoluteLoss::Diverging);
        assert!((conditional_growth(&c).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn finite_loss_is_the_tail_mean() {
        let c = curve(&(4..=12).map(|k| (k, k as f64 + 1.0, 1.0)).collect::<Vec<_>>());
        assert_eq!(absolute_loss(&c).unwrap(), AbsoluteLoss::Finite(1.0));
        assert_eq!(relative_loss(&c).unwrap().slope, 0.0);
    }

    #[test]
    fn discrete_input_is_undefined() {
        let c = curve(&(4..=12).map(|k| (k, 3.0, 0.0)).collect::<Vec<_>>());
        assert!(matches!(relative_loss(&c), Err(Error::UndefinedRelativeLoss { .. })));
    }

    #[test]
    fn gap_of_a_consistent_pair() {
        let fit = |slope| DimensionFit {
            slope,
            intercept: 0.0,
            residual: 0.0,
            rows_used: vec![],
        };
        assert!((conjecture_gap(0.5, &fit(1.0), &fit(0.5))).abs() < 1e-15);
        assert!((conjecture_gap(1.0, &fit(1.0), &fit(0.0))).abs() < 1e-15);
    }

    #[test]
    fn non_product_input_is_rejected() {
        let d = DistributionSpec::discrete(vec![vec![0.0, 0.0], vec![1.0, 1.0]], vec![0.5, 0.5]);
        let c = curve(&[(4, 1.0, 0.0), (5, 1.0, 0.0), (6, 1.0, 0.0)]);
        assert!(matches!(
            componentwise_bound(&d, &SystemSpec::Identity, &c),
            Err(Error::Config(_))
        ));
    }
}
