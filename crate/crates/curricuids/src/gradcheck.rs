//! Finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::rng::{rng_from_seed, SeededRng};
use crate::scalar::Scalar;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Compare the analytic gradients already stored in `params` against
/// central finite differences of `forward`, element by element. Returns the
/// maximum relative error with denominator `max(|analytic|, |numeric|, 1e-8)`.
///
/// The caller runs one tape backward pass first so `params` carries the
/// analytic gradients; `forward` must be a pure function of the parameter
/// values (fix dropout masks and data before calling).
pub fn grad_check<S: Scalar>(
    params: &mut ParamStore<S>,
    forward: impl Fn(&ParamStore<S>) -> Result<S>,
    h: S,
) -> Result<S> {
    check_elements(params, forward, h, None)
}

/// Like [`grad_check`] but probing at most `max_elements` randomly chosen
/// parameter elements. Useful for whole-model checks where exhaustive
/// differencing is too slow.
pub fn grad_check_sampled<S: Scalar>(
    params: &mut ParamStore<S>,
    forward: impl Fn(&ParamStore<S>) -> Result<S>,
    h: S,
    max_elements: usize,
    seed: u64,
) -> Result<S> {
    check_elements(params, forward, h, Some((max_elements, rng_from_seed(seed))))
}

fn check_elements<S: Scalar>(
    params: &mut ParamStore<S>,
    forward: impl Fn(&ParamStore<S>) -> Result<S>,
    h: S,
    sampling: Option<(usize, SeededRng)>,
) -> Result<S> {
    let mut coords: Vec<(usize, usize)> = Vec::new();
    for (id, p) in params.iter() {
        if p.trainable {
            for j in 0..p.value.numel() {
                coords.push((id.0, j));
            }
        }
    }
    if let Some((max_elements, mut rng)) = sampling {
        if coords.len() > max_elements {
            use rand::seq::SliceRandom;
            coords.shuffle(&mut rng);
            coords.truncate(max_elements);
        }
    }

    let floor = S::from_f64_c(1e-8);
    let two = S::from_f64_c(2.0);
    let mut max_rel = S::zero();
    for (pi, j) in coords {
        let id = ParamId(pi);
        let orig = params.get(id).value.data()[j];
        params.get_mut(id).value.data_mut()[j] = orig + h;
        let f_plus = forward(params)?;
        params.get_mut(id).value.data_mut()[j] = orig - h;
        let f_minus = forward(params)?;
        params.get_mut(id).value.data_mut()[j] = orig;
        if !f_plus.is_finite() || !f_minus.is_finite() {
            return Err(Error::NonFiniteValue(format!(
                "finite difference at parameter {:?}[{}]",
                params.get(id).name,
                j
            )));
        }
        let numeric = (f_plus - f_minus) / (two * h);
        let analytic = params.get(id).grad.data()[j];
        let denom = analytic.abs().max(numeric.abs()).max(floor);
        let rel = (analytic - numeric).abs() / denom;
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}
