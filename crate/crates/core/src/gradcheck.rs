//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::constraints::LossGrad;
use crate::error::{Error, Result};

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is numerically zero are compared absolutely.
pub const REL_ERR_FLOOR: f64 = 1e-7;

/// Which input coordinates are perturbed.
#[derive(Clone, Copy, Debug)]
pub enum Coverage {
    All,
    /// A seeded random subset of at least 64 coordinates (or all, if fewer exist).
    Subset {
        count: usize,
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares the gradient returned by `loss_fn` at `input` with central
/// differences of step `h`.
pub fn fd_check<F>(loss_fn: F, input: &[f64], h: f64, coverage: Coverage) -> Result<FdReport>
where
    F: Fn(&[f64]) -> Result<LossGrad>,
{
    let analytic = loss_fn(input)?.grad;
    fd_check_with(|x| loss_fn(x).map(|l| l.value), input, &analytic, h, coverage)
}

/// Like [`fd_check`] for a value-only function and a precomputed gradient.
pub fn fd_check_with<F>(value_fn: F, input: &[f64], analytic: &[f64], h: f64, coverage: Coverage) -> Result<FdReport>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::BadConfig(format!("finite-difference step {h} outside [1e-7, 1e-3]")));
    }
    if analytic.len() != input.len() {
        return Err(Error::DimensionMismatch(analytic.len(), input.len()));
    }
    let indices: Vec<usize> = match coverage {
        Coverage::Subset { count, seed } if count.max(64) < input.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = sample(&mut rng, input.len(), count.max(64)).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..input.len()).collect(),
    };
    let mut x = input.to_vec();
    let mut report =
        FdReport { max_rel_error: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0, checked: indices.len() };
    for &i in &indices {
        let orig = x[i];
        x[i] = orig + h;
        let plus = value_fn(&x)?;
        x[i] = orig - h;
        let minus = value_fn(&x)?;
        x[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let err = relative_error(analytic[i], numeric);
        if !err.is_finite() {
            return Err(Error::NonFiniteLoss(format!("gradient check at coordinate {i}")));
        }
        if err >= report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic = analytic[i];
            report.numeric = numeric;
        }
    }
    Ok(report)
}
