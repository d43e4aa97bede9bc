//! Scalar functions of one time variable: coupling schedules, time-dependent nonlinearity
//! coefficients and gauge functions.

use serde::{Deserialize, Serialize};

/// A smooth scalar function of time with a closed-form derivative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeFn {
    /// `value`.
    Constant { value: f64 },
    /// `offset + slope * s`.
    Affine { offset: f64, slope: f64 },
    /// `scale / (1 + s)`.
    Decay { scale: f64 },
    /// `coeff * s^exponent`.
    Power { coeff: f64, exponent: f64 },
}

impl TimeFn {
    pub const ZERO: TimeFn = TimeFn::Constant { value: 0.0 };

    pub fn constant(value: f64) -> Self {
        TimeFn::Constant { value }
    }

    pub fn value(&self, s: f64) -> f64 {
        match *self {
            TimeFn::Constant { value } => value,
            TimeFn::Affine { offset, slope } => offset + slope * s,
            TimeFn::Decay { scale } => scale / (1.0 + s),
            TimeFn::Power { coeff, exponent } => coeff * s.powf(exponent),
        }
    }

    pub fn derivative(&self, s: f64) -> f64 {
        match *self {
            TimeFn::Constant { .. } => 0.0,
            TimeFn::Affine { slope, .. } => slope,
            TimeFn::Decay { scale } => -scale / ((1.0 + s) * (1.0 + s)),
            TimeFn::Power { coeff, exponent } => {
                if exponent == 0.0 {
                    0.0
                } else {
                    coeff * exponent * s.powf(exponent - 1.0)
                }
            }
        }
    }

    /// Whether the function is a constant, so time-derivative terms vanish identically.
    pub fn is_constant(&self) -> bool {
        match *self {
            TimeFn::Constant { .. } => true,
            TimeFn::Affine { slope, .. } => slope == 0.0,
            TimeFn::Decay { scale } => scale == 0.0,
            TimeFn::Power { coeff, exponent } => coeff == 0.0 || exponent == 0.0,
        }
    }

    /// `(min, max)` of the function over `samples + 1` equispaced points of `[lo, hi]`.
    pub fn sampled_range(&self, lo: f64, hi: f64, samples: usize) -> (f64, f64) {
        let samples = samples.max(1);
        (0..=samples)
            .map(|i| self.value(lo + (hi - lo) * i as f64 / samples as f64))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
    }

    /// Whether the sampled values never increase on `[lo, hi]`.
    pub fn is_nonincreasing_on(&self, lo: f64, hi: f64, samples: usize) -> bool {
        let samples = samples.max(1);
        let vals: Vec<f64> = (0..=samples).map(|i| self.value(lo + (hi - lo) * i as f64 / samples as f64)).collect();
        vals.windows(2).all(|w| w[1] <= w[0])
    }
}

impl Default for TimeFn {
    fn default() -> Self {
        TimeFn::ZERO
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_match_finite_differences() {
        let fns = [
            TimeFn::constant(2.0),
            TimeFn::Affine { offset: 1.0, slope: 1.0 },
            TimeFn::Decay { scale: 2.0 },
            TimeFn::Power { coeff: 1.0, exponent: 2.0 },
        ];
        for f in &fns {
            for &s in &[0.1, 0.5, 2.0] {
                let h = 1e-5;
                let fd = (f.value(s + h) - f.value(s - h)) / (2.0 * h);
                assert!((fd - f.derivative(s)).abs() < 1e-8, "{f:?} at {s}");
            }
        }
    }

    #[test]
    fn monotonicity_sampling() {
        assert!(TimeFn::Decay { scale: 1.0 }.is_nonincreasing_on(0.0, 1.0, 50));
        assert!(TimeFn::constant(2.0).is_nonincreasing_on(0.0, 1.0, 50));
        assert!(!TimeFn::Affine { offset: 0.0, slope: 1.0 }.is_nonincreasing_on(0.0, 1.0, 50));
        assert_eq!(TimeFn::Decay { scale: 2.0 }.sampled_range(0.0, 1.0, 10), (1.0, 2.0));
    }

    #[test]
    fn deserializes_from_tagged_table() {
        let f: TimeFn = toml::from_str("kind = \"affine\"\noffset = 1.0\nslope = 1.0").unwrap();
        assert_eq!(f, TimeFn::Affine { offset: 1.0, slope: 1.0 });
    }
}
