use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::GradientSet;
use crate::error::{Error, Result};
use crate::model::Parameters;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub h: f64,
    pub tolerance: f64,
    /// Tensors larger than this are checked on a random subset of this many
    /// coordinates.
    pub max_coords_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-5,
            tolerance: 1e-4,
            max_coords_per_param: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub coords_checked: usize,
    pub passed: bool,
}

/// Compares `analytic` against central differences of `loss` for every
/// trainable parameter. Relative error is
/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(
    loss: F,
    params: &Parameters<f64>,
    analytic: &GradientSet<f64>,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&Parameters<f64>) -> Result<f64>,
{
    if !(opts.h > 0.0) {
        return Err(Error::param(format!("step h must be positive, got {}", opts.h)));
    }
    let eval = |p: &Parameters<f64>| -> Result<f64> {
        let v = loss(p)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numeric(format!("loss evaluated to {v}")))
        }
    };
    eval(params)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        coords_checked: 0,
        passed: true,
    };
    let names: Vec<String> = params.trainable().map(|(n, _)| n.to_owned()).collect();
    for name in names {
        let grad = analytic
            .get(&name)
            .ok_or_else(|| Error::Validation(format!("no analytic gradient for `{name}`")))?;
        let len = params.get(&name)?.len();
        let coords: Vec<usize> = if len <= opts.max_coords_per_param {
            (0..len).collect()
        } else {
            let mut c = sample(&mut rng, len, opts.max_coords_per_param).into_vec();
            c.sort_unstable();
            c
        };
        for idx in coords {
            let original = params.get(&name)?.data()[idx];
            probe.get_mut(&name)?.data_mut()[idx] = original + opts.h;
            let plus = eval(&probe)?;
            probe.get_mut(&name)?.data_mut()[idx] = original - opts.h;
            let minus = eval(&probe)?;
            probe.get_mut(&name)?.data_mut()[idx] = original;

            let numeric = (plus - minus) / (2.0 * opts.h);
            let a = grad.data()[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.coords_checked += 1;
            if rel > report.max_rel_err || report.worst_param.is_empty() {
                report.max_rel_err = rel;
                report.worst_param = name.clone();
                report.worst_index = idx;
            }
        }
    }
    report.passed = report.max_rel_err <= opts.tolerance;
    Ok(report)
}
