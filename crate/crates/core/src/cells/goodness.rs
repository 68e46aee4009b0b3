use serde::{Deserialize, Serialize};

use crate::linalg::{mean, Real};

/// Scalar statistic read off a cell's post-attention vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GoodnessKind {
    /// Standard deviation: root of the mean squared deviation from the mean.
    Rms,
    Mean,
    /// Mean of squares.
    Ms,
    /// Population variance.
    Var,
}

impl GoodnessKind {
    pub const ALL: [GoodnessKind; 4] = [Self::Rms, Self::Mean, Self::Ms, Self::Var];

    pub fn name(self) -> &'static str {
        match self {
            Self::Rms => "rms",
            Self::Mean => "mean",
            Self::Ms => "ms",
            Self::Var => "var",
        }
    }
}

impl std::fmt::Display for GoodnessKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for GoodnessKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rms" => Ok(Self::Rms),
            "mean" => Ok(Self::Mean),
            "ms" => Ok(Self::Ms),
            "var" => Ok(Self::Var),
            other => Err(format!("unknown goodness `{other}` (expected rms, mean, ms or var)")),
        }
    }
}

fn centered_second_moment<T: Real>(y: &[T], mu: T) -> T {
    let mut acc = T::zero();
    for &v in y {
        let d = v - mu;
        acc += d * d;
    }
    acc / T::from_usize(y.len()).unwrap()
}

/// Evaluate the goodness of `y`. `y` must be non-empty.
pub fn goodness<T: Real>(y: &[T], kind: GoodnessKind) -> T {
    debug_assert!(!y.is_empty());
    match kind {
        GoodnessKind::Mean => mean(y),
        GoodnessKind::Ms => {
            let mut acc = T::zero();
            for &v in y {
                acc += v * v;
            }
            acc / T::from_usize(y.len()).unwrap()
        }
        GoodnessKind::Var => centered_second_moment(y, mean(y)),
        GoodnessKind::Rms => centered_second_moment(y, mean(y)).sqrt(),
    }
}

/// Gradient of [`goodness`] with respect to `y`, scaled by `upstream`, written into `out`.
///
/// RMS at a zero-variance point has no derivative; the zero subgradient is used.
pub fn goodness_grad_into<T: Real>(y: &[T], kind: GoodnessKind, upstream: T, out: &mut [T]) {
    let n = T::from_usize(y.len()).unwrap();
    match kind {
        GoodnessKind::Mean => out.iter_mut().for_each(|o| *o = upstream / n),
        GoodnessKind::Ms => {
            let s = upstream * T::lit(2.0) / n;
            for (o, &v) in out.iter_mut().zip(y) {
                *o = s * v;
            }
        }
        GoodnessKind::Var => {
            let mu = mean(y);
            let s = upstream * T::lit(2.0) / n;
            for (o, &v) in out.iter_mut().zip(y) {
                *o = s * (v - mu);
            }
        }
        GoodnessKind::Rms => {
            let mu = mean(y);
            let sigma = centered_second_moment(y, mu).sqrt();
            if sigma == T::zero() {
                out.iter_mut().for_each(|o| *o = T::zero());
            } else {
                let s = upstream / (n * sigma);
                for (o, &v) in out.iter_mut().zip(y) {
                    *o = s * (v - mu);
                }
            }
        }
    }
}

pub fn goodness_grad<T: Real>(y: &[T], kind: GoodnessKind) -> Vec<T> {
    let mut out = vec![T::zero(); y.len()];
    goodness_grad_into(y, kind, T::one(), &mut out);
    out
}
