use serde::{Deserialize, Serialize};

use super::{NumericsError, ParamSet};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    /// Max relative error per parameter tensor, in parameter-set order.
    pub groups: Vec<(String, f64)>,
    pub max_rel_error: f64,
    pub coords_checked: usize,
}

impl GradCheckReport {
    pub fn group(&self, name: &str) -> Option<f64> {
        self.groups.iter().find(|g| g.0 == name).map(|g| g.1)
    }
}

/// `|a - n| / max(|a|, |n|, 1e-12)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Compares `analytic` against central differences
/// `(f(theta + eps) - f(theta - eps)) / 2 eps` on up to `per_group`
/// coordinates of every tensor (all of them when the tensor is smaller).
pub fn grad_check<P, F>(
    mut loss: F,
    params: &P,
    analytic: &P,
    eps: f64,
    per_group: usize,
    sample_seed: u64,
) -> Result<GradCheckReport, NumericsError>
where
    P: ParamSet + Clone,
    F: FnMut(&P) -> f64,
{
    let base = loss(params);
    if !base.is_finite() {
        return Err(NumericsError::NonFinite(base));
    }
    let mut work = params.clone();
    let mut rng = seed::rng(sample_seed);
    let grads = analytic.tensors();
    let mut groups = Vec::with_capacity(grads.len());
    let mut checked = 0;
    for (k, (name, g)) in grads.iter().enumerate() {
        let n = g.len();
        let mut coords: Vec<usize> = if n <= per_group {
            (0..n).collect()
        } else {
            rand::seq::index::sample(&mut rng, n, per_group).into_vec()
        };
        coords.sort_unstable();
        let mut worst = 0.0f64;
        for i in coords {
            let orig = work.tensors()[k].1.data()[i];
            let mut eval_at = |v: f64| {
                work.tensors_mut()[k].1.data_mut()[i] = v;
                loss(&work)
            };
            let plus = eval_at(orig + eps);
            let minus = eval_at(orig - eps);
            work.tensors_mut()[k].1.data_mut()[i] = orig;
            if !(plus.is_finite() && minus.is_finite()) {
                return Err(NumericsError::NonFinite(if plus.is_finite() { minus } else { plus }));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(g.data()[i], numeric));
            checked += 1;
        }
        groups.push((name.clone(), worst));
    }
    let max_rel_error = groups.iter().map(|g| g.1).fold(0.0, f64::max);
    Ok(GradCheckReport { groups, max_rel_error, coords_checked: checked })
}
