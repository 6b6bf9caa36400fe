//! Summed probability distributions.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TfdError};
use crate::grid::{sum_series, DensitySeries};

/// Scaling constant applied to the pointwise sum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "value")]
pub enum SpdScale {
    /// `C = 1`; mass equals the number of constituents.
    Raw,
    /// `C = 1/n`; unit mass.
    Normalized,
    Custom(f64),
}

impl SpdScale {
    pub fn constant(self, n: usize) -> f64 {
        match self {
            SpdScale::Raw => 1.0,
            SpdScale::Normalized => 1.0 / n as f64,
            SpdScale::Custom(c) => c,
        }
    }
}

impl std::str::FromStr for SpdScale {
    type Err = TfdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(SpdScale::Raw),
            "normalized" => Ok(SpdScale::Normalized),
            other => other
                .parse::<f64>()
                .ok()
                .filter(|c| *c > 0.0 && c.is_finite())
                .map(SpdScale::Custom)
                .ok_or_else(|| {
                    TfdError::InvalidParameter(format!(
                        "scale must be raw, normalized or a positive number, got '{other}'"
                    ))
                }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpdResult {
    pub series: DensitySeries,
    pub n: usize,
    pub scale_c: f64,
    pub normalized: bool,
}

/// Sums normalized posteriors and applies the scaling constant.
pub fn spd(posteriors: &[DensitySeries], scale: SpdScale) -> Result<SpdResult> {
    if posteriors.is_empty() {
        return Err(TfdError::EmptyInput("an SPD needs at least one posterior"));
    }
    if let Some(i) = posteriors.iter().position(|p| !p.is_normalized()) {
        return Err(TfdError::Domain(format!(
            "posterior {i} has mass {} but SPD constituents must be normalized",
            posteriors[i].mass()
        )));
    }
    let n = posteriors.len();
    let scale_c = scale.constant(n);
    let series = sum_series(posteriors, scale_c)?;
    Ok(SpdResult {
        series,
        n,
        scale_c,
        normalized: matches!(scale, SpdScale::Normalized),
    })
}


#[cfg(test)]
mod props {
    use super::*;
    use crate::grid::{normalize, TimeGrid};
    use proptest::prelude::*;

    fn posteriors(specs: &[(f64, f64)]) -> Vec<DensitySeries> {
        let grid = TimeGrid::new(0.0, 1.0, 2000).unwrap();
        specs
            .iter()
            .map(|(c, w)| {
                let raw = grid
                    .values()
                    .map(|t| (-0.5 * ((t - c) / w).powi(2)).exp())
                    .collect();
                normalize(&DensitySeries::new(grid, raw).unwrap()).unwrap()
            })
            .collect()
    }

    proptest! {
        #[test]
        fn order_of_posteriors_is_irrelevant(
            specs in prop::collection::vec((200.0f64..1800.0, 3.0f64..150.0), 1..12),
            seed in any::<u64>(),
        ) {
            let posts = posteriors(&specs);
            let mut shuffled = posts.clone();
            let mut state = seed;
            for i in (1..shuffled.len()).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (state >> 33) as usize % (i + 1));
            }
            prop_assert_eq!(spd(&posts, SpdScale::Raw).unwrap(), spd(&shuffled, SpdScale::Raw).unwrap());
        }

        #[test]
        fn normalized_scale_matches_normalizing_the_raw_sum(
            specs in prop::collection::vec((200.0f64..1800.0, 3.0f64..150.0), 1..12),
        ) {
            let posts = posteriors(&specs);
            let unit = spd(&posts, SpdScale::Normalized).unwrap().series;
            let raw = normalize(&spd(&posts, SpdScale::Raw).unwrap().series).unwrap();
            for (a, b) in unit.values().iter().zip(raw.values()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
