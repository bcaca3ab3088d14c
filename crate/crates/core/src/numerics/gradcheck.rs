use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numerics::{ParamStore, Tape, Var};

/// Gradients smaller than this are compared in absolute terms.
const RELATIVE_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates_checked: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-5)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares reverse-mode gradients against central differences
/// `(f(p + eps) - f(p - eps)) / (2 eps)`.
///
/// `loss_fn` records the loss on a fresh tape from the given parameters and
/// must be deterministic. At most `max_coordinates` coordinates are sampled
/// (uniformly, seeded) across all parameters the loss registers.
pub fn finite_difference_check<F>(
    params: &ParamStore,
    eps: f64,
    max_coordinates: usize,
    seed: u64,
    loss_fn: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, params)?;
    let grads = tape.backward(loss)?;

    let mut coords = Vec::new();
    for (name, g) in grads.iter() {
        for i in 0..g.len() {
            coords.push((name.to_string(), i));
        }
    }
    if coords.len() > max_coordinates {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked =
            rand::seq::index::sample(&mut rng, coords.len(), max_coordinates).into_vec();
        picked.sort_unstable();
        coords = picked.into_iter().map(|i| coords[i].clone()).collect();
    }

    let eval = |p: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let l = loss_fn(&mut t, p)?;
        Ok(t.value(l).item())
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        coordinates_checked: 0,
    };
    let mut work = params.clone();
    for (name, i) in coords {
        let original = work
            .get(&name)
            .expect("gradient for known parameter")
            .data()[i];
        work.get_mut(&name).unwrap().data_mut()[i] = original + eps;
        let plus = eval(&work)?;
        work.get_mut(&name).unwrap().data_mut()[i] = original - eps;
        let minus = eval(&work)?;
        work.get_mut(&name).unwrap().data_mut()[i] = original;

        let numeric = (plus - minus) / (2.0 * eps);
        let analytic = grads.get(&name).unwrap().data()[i];
        let err = relative_error(analytic, numeric);
        report.coordinates_checked += 1;
        if err > report.max_relative_error || report.worst.is_none() {
            report.max_relative_error = report.max_relative_error.max(err);
            report.worst = Some((name, i));
        }
    }
    Ok(report)
}
