//! Closed-form channel mathematics: first-hitting-time density of a
//! diffusing molecule on an absorbing sphere, its time integral, the peak
//! time, the superposition count series, and distance inversions.

use crate::error::{Error, Result};

/// Query for the first-hitting-time density/CDF: absorbing sphere of radius
/// `r`, emitter at center distance `d`, diffusion coefficient `d_coeff`,
/// evaluated at time `t`.
#[derive(Debug, Clone, Copy)]
pub struct HitQuery {
    pub r: f64,
    pub d: f64,
    pub d_coeff: f64,
    pub t: f64,
}

impl HitQuery {
    pub fn new(r: f64, d: f64, d_coeff: f64, t: f64) -> Result<HitQuery> {
        if !(r > 0.0) {
            return Err(Error::domain("r must be positive"));
        }
        if d <= r {
            return Err(Error::domain("emitter on or inside absorbing surface"));
        }
        if !(d_coeff > 0.0) {
            return Err(Error::domain("D must be positive"));
        }
        if !(t > 0.0) {
            return Err(Error::domain("t must be positive"));
        }
        Ok(HitQuery { r, d, d_coeff, t })
    }
}

/// Query for the expected superposition count at Node B.
#[derive(Debug, Clone, Copy)]
pub struct CountQuery {
    pub n_emitted: u64,
    pub r: f64,
    pub d_ab: f64,
    pub d_atb: f64,
    pub d_ata: f64,
    pub n_max: usize,
    pub eps_series: f64,
}

impl CountQuery {
    pub fn new(n_emitted: u64, r: f64, d_ab: f64, d_atb: f64, d_ata: f64) -> Result<CountQuery> {
        let q = CountQuery {
            n_emitted,
            r,
            d_ab,
            d_atb,
            d_ata,
            n_max: 64,
            eps_series: 1e-12,
        };
        q.check()?;
        Ok(q)
    }

    fn check(&self) -> Result<()> {
        if !(self.r > 0.0) {
            return Err(Error::domain("r must be positive"));
        }
        if self.d_ab <= 2.0 * self.r {
            return Err(Error::domain("d_AB must exceed 2r (non-overlapping nodes)"));
        }
        if self.d_atb <= self.r || self.d_ata <= self.r {
            return Err(Error::domain("emitter distances must exceed r"));
        }
        if self.n_max < 1 {
            return Err(Error::domain("n_max >= 1"));
        }
        if !(self.eps_series > 0.0) {
            return Err(Error::domain("eps_series > 0"));
        }
        Ok(())
    }
}

/// First-hitting-time probability density at time `t` (1/seconds):
/// f(t) = r (d - r) / (d sqrt(4 pi t^3 D)) * exp(-(d - r)^2 / (4 D t)).
pub fn hit_pdf(q: &HitQuery) -> Result<f64> {
    HitQuery::new(q.r, q.d, q.d_coeff, q.t)?;
    let gap = q.d - q.r;
    let pref = q.r * gap / (q.d * (4.0 * std::f64::consts::PI * q.t.powi(3) * q.d_coeff).sqrt());
    Ok(pref * (-gap * gap / (4.0 * q.d_coeff * q.t)).exp())
}

/// Probability the molecule has been absorbed by time `t`:
/// F(t) = (r/d) erfc((d - r) / sqrt(4 D t)). Tends to r/d as t -> inf.
pub fn hit_cdf(q: &HitQuery) -> Result<f64> {
    HitQuery::new(q.r, q.d, q.d_coeff, q.t)?;
    let gap = q.d - q.r;
    Ok(q.r / q.d * libm::erfc(gap / (4.0 * q.d_coeff * q.t).sqrt()))
}

/// Time at which `hit_pdf` is maximal: (d - r)^2 / (6 D).
pub fn peak_time(r: f64, d: f64, d_coeff: f64) -> Result<f64> {
    if !(r > 0.0) || d <= r {
        return Err(Error::domain("requires d > r > 0"));
    }
    if !(d_coeff > 0.0) {
        return Err(Error::domain("D must be positive"));
    }
    let gap = d - r;
    Ok(gap * gap / (6.0 * d_coeff))
}

/// The superposition series for the expected count at Node B:
/// N * sum_n (r/d_AB)^(2n) * ((r/d_ATB) - (r/d_ATA)).
///
/// The series is truncated at the first term below `eps_series` or at
/// `n_max`. The raw value is returned together with a validity flag;
/// the bracket goes negative whenever d_ATA < d_ATB. That anomaly is
/// deliberately preserved rather than patched, so callers can observe it.
pub fn expected_count_series(q: &CountQuery) -> Result<(f64, bool)> {
    q.check()?;
    let ratio = (q.r / q.d_ab) * (q.r / q.d_ab);
    let mut series = 0.0;
    let mut term = 1.0;
    for _ in 0..q.n_max {
        series += term;
        term *= ratio;
        if term < q.eps_series {
            break;
        }
    }
    let bracket = q.r / q.d_atb - q.r / q.d_ata;
    let value = q.n_emitted as f64 * series * bracket;
    let valid = value >= 0.0 && value <= q.n_emitted as f64;
    Ok((value, valid))
}

/// Inverts the peak-time relation: d = r + sqrt(6 D t_peak).
pub fn invert_distance_from_peak(t_peak: f64, r: f64, d_coeff: f64) -> Result<f64> {
    if !(t_peak > 0.0) {
        return Err(Error::domain("t_peak must be positive"));
    }
    if !(r > 0.0) || !(d_coeff > 0.0) {
        return Err(Error::domain("requires r > 0 and D > 0"));
    }
    Ok(r + (6.0 * d_coeff * t_peak).sqrt())
}

/// Distance implied by a received count, or "beyond observability".
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistanceEstimate {
    Finite(f64),
    /// No molecules received: the distance is unbounded from this data.
    Unbounded,
}

impl DistanceEstimate {
    /// Sentinel encoding used in feature vectors (-1 for unbounded).
    pub fn to_feature(self) -> f64 {
        match self {
            DistanceEstimate::Finite(d) => d,
            DistanceEstimate::Unbounded => -1.0,
        }
    }
}

/// Inverts the infinite-time hit probability r/d: d = r N / n_received.
pub fn invert_distance_from_count(
    n_received: u64,
    n_emitted: u64,
    r: f64,
) -> Result<DistanceEstimate> {
    if n_received > n_emitted {
        return Err(Error::invalid("n_received exceeds N"));
    }
    if !(r > 0.0) {
        return Err(Error::invalid("r must be positive"));
    }
    if n_received == 0 {
        return Ok(DistanceEstimate::Unbounded);
    }
    Ok(DistanceEstimate::Finite(
        r * n_emitted as f64 / n_received as f64,
    ))
}
