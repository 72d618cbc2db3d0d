//! Finite-difference verification of reverse-mode gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{Gradients, ParamStore};
use super::NnError;

/// Result of evaluating the checked function once.
pub struct Evaluation {
    pub loss: f64,
    pub gradients: Option<Gradients>,
    /// Identifies the smooth piece the evaluation lies on; see
    /// [`super::Graph::signature`].
    pub signature: u64,
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
    /// Analytic and numeric derivative at the worst coordinate.
    pub worst: (f64, f64),
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub params: Vec<ParamCheck>,
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub samples_per_param: usize,
    /// Gradient magnitudes below this are compared in absolute terms.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-3,
            samples_per_param: 50,
            floor: 1e-6,
            seed: 0,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares reverse-mode gradients against central differences on randomly
/// sampled coordinates of every parameter.
///
/// Coordinates whose ±step perturbation changes the evaluation signature sit
/// on a non-smooth point (a ReLU at zero, a max-pool or decoding tie) and
/// are skipped; sampling continues until `samples_per_param` coordinates
/// are checked or the parameter is exhausted.
pub fn grad_check<F>(
    params: &mut ParamStore,
    config: GradCheckConfig,
    mut f: F,
) -> Result<GradCheckReport, NnError>
where
    F: FnMut(&ParamStore, bool) -> Result<Evaluation, NnError>,
{
    let base = f(params, true)?;
    let grads = base
        .gradients
        .ok_or_else(|| NnError::Data("gradient check needs gradients".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        params: Vec::new(),
    };
    let ids: Vec<_> = params.iter().map(|(id, p)| (id, p.name.clone(), p.value.len())).collect();
    for (id, name, len) in ids {
        let analytic = grads.get(id).cloned();
        let mut coords: Vec<usize> = (0..len).collect();
        coords.shuffle(&mut rng);
        let mut check = ParamCheck {
            name,
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
            worst: (0.0, 0.0),
        };
        for c in coords {
            if check.checked >= config.samples_per_param {
                break;
            }
            let original = params.get(id).value.data()[c];
            params.get_mut(id).value.data_mut()[c] = original + config.step;
            let plus = f(params, false)?;
            params.get_mut(id).value.data_mut()[c] = original - config.step;
            let minus = f(params, false)?;
            params.get_mut(id).value.data_mut()[c] = original;
            if plus.signature != base.signature || minus.signature != base.signature {
                check.skipped += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * config.step);
            let a = analytic.as_ref().map_or(0.0, |g| g.data()[c]);
            let err = relative_error(a, numeric, config.floor);
            check.checked += 1;
            if err > check.max_rel_error || check.checked == 1 {
                check.max_rel_error = check.max_rel_error.max(err);
                check.worst = (a, numeric);
            }
        }
        report.max_rel_error = report.max_rel_error.max(check.max_rel_error);
        report.params.push(check);
    }
    Ok(report)
}
