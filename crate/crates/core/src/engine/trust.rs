//! Truncation certificates for Bernoulli initial data.

use serde::Serialize;

use crate::analytics::{pz_table, tail_bound, AnalyticsError, PzTable};
use crate::offspring::OffspringLaw;

/// Largest radius [`TrustRegion::choose`] will consider.
pub const MAX_TRUST_RADIUS: i64 = 4096;

/// Initial data on `[-init_radius, init_radius]^d`, observed up to
/// `horizon`; `epsilon` bounds the probability that an origin observable
/// differs from the untruncated process.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrustRegion {
    pub init_radius: i64,
    pub horizon: f64,
    pub epsilon: f64,
}

impl TrustRegion {
    /// Certificate for a given radius.
    pub fn certify(law: &OffspringLaw, init_radius: i64, horizon: f64) -> Result<Self, AnalyticsError> {
        let table: PzTable<f64> = pz_table(law, horizon, init_radius, 1e-14)?;
        Ok(TrustRegion {
            init_radius,
            horizon,
            epsilon: tail_bound(law, &table, init_radius)?,
        })
    }

    /// Smallest radius whose certificate is at most `target`.
    pub fn choose(law: &OffspringLaw, horizon: f64, target: f64) -> Result<Self, AnalyticsError> {
        let mut reach = 8;
        while reach <= MAX_TRUST_RADIUS {
            let table: PzTable<f64> = pz_table(law, horizon, reach, 1e-14)?;
            for r in 0..=reach {
                let epsilon = tail_bound(law, &table, r)?;
                if epsilon <= target {
                    return Ok(TrustRegion {
                        init_radius: r,
                        horizon,
                        epsilon,
                    });
                }
            }
            reach *= 2;
        }
        Err(AnalyticsError::NoConvergence(format!(
            "no radius up to {MAX_TRUST_RADIUS} certifies epsilon ≤ {target} at T = {horizon}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::offspring::fixtures::nn1;

    #[test]
    fn chosen_radius_is_minimal() {
        let law = nn1();
        let tr = TrustRegion::choose(&law, 2.0, 1e-3).unwrap();
        assert!(tr.epsilon <= 1e-3);
        let smaller = TrustRegion::certify(&law, tr.init_radius - 1, 2.0).unwrap();
        assert!(smaller.epsilon > 1e-3);
        let again = TrustRegion::certify(&law, tr.init_radius, 2.0).unwrap();
        assert!((again.epsilon - tr.epsilon).abs() <= 1e-9);
    }

    #[test]
    fn horizon_zero_needs_no_margin() {
        let tr = TrustRegion::choose(&nn1(), 0.0, 1e-6).unwrap();
        assert_eq!(tr.init_radius, 0);
    }
}
