//! Walking-time distributions for access, egress and transfer movements.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Walking speed in m/s, log-normally distributed with the given mean and
/// standard deviation (of the speed itself, not of its logarithm).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedDistribution {
    pub mean: f64,
    pub sd: f64,
}

impl SpeedDistribution {
    pub fn new(mean: f64, sd: f64) -> Result<Self> {
        let s = SpeedDistribution { mean, sd };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean > 0.0 && self.sd > 0.0 && self.mean.is_finite() && self.sd.is_finite()) {
            return Err(Error::Domain(format!(
                "walking speed needs positive mean and sd, got ({}, {})",
                self.mean, self.sd
            )));
        }
        Ok(())
    }

    /// Location and scale of log(speed).
    pub fn log_params(&self) -> (f64, f64) {
        let var = (1.0 + (self.sd / self.mean).powi(2)).ln();
        (self.mean.ln() - 0.5 * var, var.sqrt())
    }

    /// Multiplies the mean by `mean_factor` and the sd by `sd_factor`.
    pub fn scaled(&self, mean_factor: f64, sd_factor: f64) -> Result<Self> {
        SpeedDistribution::new(self.mean * mean_factor, self.sd * sd_factor)
    }
}

/// Distribution of a walking time in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum WalkDistribution {
    /// log(t) ~ N(location, scale^2).
    LogNormal { location: f64, scale: f64 },
}

impl WalkDistribution {
    pub fn lognormal(location: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite() && location.is_finite()) {
            return Err(Error::Domain(format!("invalid lognormal ({location}, {scale})")));
        }
        Ok(WalkDistribution::LogNormal { location, scale })
    }

    /// Time to cover `distance_m` at a log-normal speed. Since t = d / v,
    /// log t = log d - log v is normal with negated speed location.
    pub fn from_speed(distance_m: f64, speed: &SpeedDistribution) -> Result<Self> {
        if !(distance_m > 0.0 && distance_m.is_finite()) {
            return Err(Error::Domain(format!("walk distance must be positive, got {distance_m}")));
        }
        speed.validate()?;
        let (mu_v, s_v) = speed.log_params();
        WalkDistribution::lognormal(distance_m.ln() - mu_v, s_v)
    }

    pub fn density(&self, t: f64) -> f64 {
        match *self {
            WalkDistribution::LogNormal { location, scale } => {
                if !(t > 0.0) || !t.is_finite() {
                    return 0.0;
                }
                let z = (t.ln() - location) / scale;
                (-0.5 * z * z).exp() / (t * scale * (2.0 * PI).sqrt())
            }
        }
    }

    fn standardized(&self, t: f64) -> f64 {
        match *self {
            WalkDistribution::LogNormal { location, scale } => (t.ln() - location) / scale,
        }
    }

    pub fn cdf(&self, t: f64) -> f64 {
        if !(t > 0.0) {
            return 0.0;
        }
        if t == f64::INFINITY {
            return 1.0;
        }
        0.5 * erfc(-self.standardized(t) / SQRT_2)
    }

    pub fn survival(&self, t: f64) -> f64 {
        if !(t > 0.0) {
            return 1.0;
        }
        if t == f64::INFINITY {
            return 0.0;
        }
        0.5 * erfc(self.standardized(t) / SQRT_2)
    }

    /// Probability that the walking time falls in `[a, b]`.
    pub fn interval_probability(&self, a: f64, b: f64) -> Result<f64> {
        if a > b || a.is_nan() || b.is_nan() {
            return Err(Error::Domain(format!("interval [{a}, {b}] is reversed")));
        }
        if b <= 0.0 || a == b {
            return Ok(0.0);
        }
        // Difference the tail that keeps the most significant digits.
        let p = if a > 0.0 && self.standardized(a) > 0.0 {
            self.survival(a) - self.survival(b)
        } else {
            self.cdf(b) - self.cdf(a)
        };
        Ok(p.clamp(0.0, 1.0))
    }

    pub fn mean(&self) -> f64 {
        match *self {
            WalkDistribution::LogNormal { location, scale } => (location + 0.5 * scale * scale).exp(),
        }
    }

    /// Inverse of the CDF for `p` in (0, 1).
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("quantile level must lie in (0, 1), got {p}")));
        }
        let z = statrs::distribution::Normal::standard().inverse_cdf(p);
        match *self {
            WalkDistribution::LogNormal { location, scale } => Ok((location + scale * z).exp()),
        }
    }

    pub fn mode(&self) -> f64 {
        match *self {
            WalkDistribution::LogNormal { location, scale } => (location - scale * scale).exp(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            WalkDistribution::LogNormal { location, scale } => LogNormal::new(location, scale)
                .expect("validated lognormal parameters")
                .sample(rng),
        }
    }
}

/// Walking geometry of a network: one access/egress distance per station and
/// one transfer distance per interchange station, plus a global speed law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkModel {
    pub speed: SpeedDistribution,
    pub access_m: BTreeMap<String, f64>,
    pub egress_m: BTreeMap<String, f64>,
    pub transfer_m: BTreeMap<String, f64>,
}

impl WalkModel {
    pub fn validate(&self) -> Result<()> {
        self.speed.validate()?;
        for (kind, map) in [
            ("access", &self.access_m),
            ("egress", &self.egress_m),
            ("transfer", &self.transfer_m),
        ] {
            for (station, d) in map {
                if !(*d > 0.0 && d.is_finite()) {
                    return Err(Error::Validation(format!("{kind} distance at {station} must be positive, got {d}")));
                }
            }
        }
        Ok(())
    }

    fn lookup(map: &BTreeMap<String, f64>, kind: &str, station: &str) -> Result<f64> {
        map.get(station)
            .copied()
            .ok_or_else(|| Error::Config(format!("no {kind} walk distance for station {station}")))
    }

    pub fn access(&self, station: &str) -> Result<WalkDistribution> {
        WalkDistribution::from_speed(Self::lookup(&self.access_m, "access", station)?, &self.speed)
    }

    pub fn egress(&self, station: &str) -> Result<WalkDistribution> {
        WalkDistribution::from_speed(Self::lookup(&self.egress_m, "egress", station)?, &self.speed)
    }

    pub fn transfer(&self, station: &str) -> Result<WalkDistribution> {
        WalkDistribution::from_speed(Self::lookup(&self.transfer_m, "transfer", station)?, &self.speed)
    }

    /// Same geometry, speed mean and sd multiplied by the given factors.
    pub fn with_speed_scaled(&self, mean_factor: f64, sd_factor: f64) -> Result<Self> {
        Ok(WalkModel {
            speed: self.speed.scaled(mean_factor, sd_factor)?,
            ..self.clone()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_speed() -> SpeedDistribution {
        SpeedDistribution::new(1.2, 0.5).unwrap()
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let n = if n % 2 == 1 { n + 1 } else { n };
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    #[test]
    fn quantile_inverts_cdf() {
        let d = WalkDistribution::from_speed(40.0, &table_speed()).unwrap();
        for p in [0.005, 0.25, 0.5, 0.9, 0.995] {
            let err = (d.cdf(d.quantile(p).unwrap()) - p).abs();
            assert!(err < 1e-10, "{p}: {err:e}");
        }
        assert!(d.quantile(0.0).is_err());
        assert!(d.quantile(1.0).is_err());
    }

    #[test]
    fn density_is_zero_for_nonpositive_time() {
        let d = WalkDistribution::from_speed(40.0, &table_speed()).unwrap();
        assert_eq!(d.density(-5.0), 0.0);
        assert_eq!(d.density(0.0), 0.0);
    }

    #[test]
    fn density_peaks_at_mode() {
        let d = WalkDistribution::from_speed(40.0, &table_speed()).unwrap();
        let m = d.mode();
        let peak = d.density(m);
        assert!(peak > 0.0);
        for dt in [-3.0, -0.5, 0.5, 3.0] {
            assert!(d.density(m + dt) < peak);
        }
    }

    #[test]
    fn density_matches_cdf_finite_difference() {
        let d = WalkDistribution::from_speed(40.0, &table_speed()).unwrap();
        for t in [30.0, 40.0, 60.0] {
            let h = 1e-4;
            let fd = (d.cdf(t + h) - d.cdf(t - h)) / (2.0 * h);
            assert!((fd - d.density(t)).abs() < 1e-8, "t={t}: {fd} vs {}", d.density(t));
        }
    }

    #[test]
    fn speed_to_time_conversion_matches_sampling_law() {
        // The median of t = d / v equals d / median(v).
        let speed = table_speed();
        let (mu_v, _) = speed.log_params();
        let d = WalkDistribution::from_speed(40.0, &speed).unwrap();
        assert!((d.cdf(40.0 / mu_v.exp()) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn interval_probability_basics() {
        let d = WalkDistribution::from_speed(40.0, &table_speed()).unwrap();
        assert!((d.interval_probability(-1e9, 1e9).unwrap() - 1.0).abs() < 1e-9);
        assert!((d.interval_probability(f64::NEG_INFINITY, f64::INFINITY).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(d.interval_probability(25.0, 25.0).unwrap(), 0.0);
        assert_eq!(d.interval_probability(-10.0, 0.0).unwrap(), 0.0);
        assert!(matches!(d.interval_probability(5.0, 4.0), Err(Error::Domain(_))));
    }

    #[test]
    fn interval_probability_agrees_with_quadrature_and_partitions() {
        let d = WalkDistribution::from_speed(40.0, &table_speed()).unwrap();
        let whole = d.interval_probability(0.0, 60.0).unwrap();
        let left = d.interval_probability(0.0, 30.0).unwrap();
        let right = d.interval_probability(30.0, 60.0).unwrap();
        assert!((whole - (left + right)).abs() < 1e-12);
        let quad = simpson(|t| d.density(t), 1e-9, 60.0, 20_000);
        assert!((quad - whole).abs() < 1e-9, "{quad} vs {whole}");
        let quad_r = simpson(|t| d.density(t), 30.0, 60.0, 20_000);
        assert!((quad_r - right).abs() < 1e-10);
    }

    #[test]
    fn windows_between_departures_sum_to_one() {
        let d = WalkDistribution::from_speed(50.0, &table_speed()).unwrap();
        let departures: Vec<f64> = (0..200).map(|i| 7.0 + 118.0 * i as f64 + (i % 3) as f64).collect();
        let mut total = d.interval_probability(f64::NEG_INFINITY, departures[0]).unwrap();
        for w in departures.windows(2) {
            total += d.interval_probability(w[0], w[1]).unwrap();
        }
        total += d.interval_probability(*departures.last().unwrap(), f64::INFINITY).unwrap();
        assert!((total - 1.0).abs() < 1e-8);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn interval_probability_is_monotone(a in -50.0f64..200.0, w1 in 0.0f64..100.0, w2 in 0.0f64..100.0, dist in 30.0f64..50.0) {
                let d = WalkDistribution::from_speed(dist, &table_speed()).unwrap();
                let p1 = d.interval_probability(a, a + w1).unwrap();
                let p2 = d.interval_probability(a, a + w1 + w2).unwrap();
                let p3 = d.interval_probability(a - w2, a + w1).unwrap();
                prop_assert!(p2 + 1e-15 >= p1);
                prop_assert!(p3 + 1e-15 >= p1);
                prop_assert!((0.0..=1.0).contains(&p1));
            }
        }
    }
}
