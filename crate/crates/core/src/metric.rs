//! Distance measures over dense `f32` vectors.
//!
//! Every other module reaches the metric only through [`Metric`], so graph
//! construction and search stay metric-agnostic. Accumulation is done in
//! `f64` with a fixed left-to-right evaluation order, which makes every
//! measure bit-symmetric in its arguments.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    L1,
    L2,
    /// `1 - cos(a, b)`.
    Cosine,
    /// `sum (a_i - b_i)^2 / (a_i + b_i)`, with `0/0` terms taken as zero.
    ChiSquare,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::L1, Metric::L2, Metric::Cosine, Metric::ChiSquare];

    /// Tag byte used in serialized graph headers.
    pub fn tag(self) -> u8 {
        match self {
            Metric::L1 => 0,
            Metric::L2 => 1,
            Metric::Cosine => 2,
            Metric::ChiSquare => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Metric> {
        Metric::ALL.into_iter().find(|m| m.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::L1 => "l1",
            Metric::L2 => "l2",
            Metric::Cosine => "cosine",
            Metric::ChiSquare => "chi2",
        }
    }

    /// Checks that `v` is a legal argument for this metric.
    pub fn validate(self, v: &[f32]) -> Result<()> {
        if v.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: 0,
            });
        }
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        match self {
            Metric::ChiSquare => {
                if let Some(i) = v.iter().position(|&x| x < 0.0) {
                    return Err(Error::NegativeComponent(i));
                }
            }
            Metric::Cosine => {
                if v.iter().all(|&x| x == 0.0) {
                    return Err(Error::ZeroVector);
                }
            }
            Metric::L1 | Metric::L2 => {}
        }
        Ok(())
    }

    /// Checked distance between two vectors.
    pub fn distance(self, a: &[f32], b: &[f32]) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.len(),
                found: b.len(),
            });
        }
        self.validate(a)?;
        self.validate(b)?;
        Ok(self.eval_f64(a, b))
    }

    /// Unchecked distance, as stored in graph edges.
    ///
    /// Callers must have validated both arguments with [`Metric::validate`].
    #[inline]
    pub fn eval(self, a: &[f32], b: &[f32]) -> f32 {
        self.eval_f64(a, b) as f32
    }

    #[inline]
    fn eval_f64(self, a: &[f32], b: &[f32]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        match self {
            Metric::L1 => a
                .iter()
                .zip(b)
                .map(|(&x, &y)| (x as f64 - y as f64).abs())
                .sum(),
            Metric::L2 => a
                .iter()
                .zip(b)
                .map(|(&x, &y)| {
                    let t = x as f64 - y as f64;
                    t * t
                })
                .sum::<f64>()
                .sqrt(),
            Metric::Cosine => {
                let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
                for (&x, &y) in a.iter().zip(b) {
                    let (x, y) = (x as f64, y as f64);
                    dot += x * y;
                    na += x * x;
                    nb += y * y;
                }
                // sqrt(na * nb) == dot exactly when a == b, so m(v, v) is 0.
                let cos = dot / (na * nb).sqrt();
                (1.0 - cos).max(0.0)
            }
            Metric::ChiSquare => a
                .iter()
                .zip(b)
                .map(|(&x, &y)| {
                    let (x, y) = (x as f64, y as f64);
                    let s = x + y;
                    if s == 0.0 {
                        0.0
                    } else {
                        let t = x - y;
                        t * t / s
                    }
                })
                .sum(),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Metric::L1),
            "l2" => Ok(Metric::L2),
            "cosine" | "cos" => Ok(Metric::Cosine),
            "chi2" | "chisquare" | "chi-square" => Ok(Metric::ChiSquare),
            other => Err(Error::InvalidParameter(format!("unknown metric `{other}`"))),
        }
    }
}

/// Counts metric invocations for one query or one build.
///
/// Kept per context rather than globally so concurrent searchers never
/// contend on it.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct DistanceCounter(u64);

impl DistanceCounter {
    pub fn new() -> Self {
        Self(0)
    }

    #[inline]
    pub fn eval(&mut self, metric: Metric, a: &[f32], b: &[f32]) -> f32 {
        self.0 += 1;
        metric.eval(a, b)
    }

    pub fn count(&self) -> u64 {
        self.0
    }

    pub fn add(&mut self, n: u64) {
        self.0 += n;
    }

    pub fn reset(&mut self) {
        self.0 = 0;
    }
}
