use crate::{ParamId, ParamStore, Tape, TensorError, Var};

/// Smallest denominator used by [`relative_error`]; below it the comparison
/// degrades to an absolute error scaled by this floor.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest error, with its analytic and numeric values.
    pub worst: Option<(ParamId, usize, f64, f64)>,
    pub checked: usize,
}

/// `|a − n| / max(|a|, |n|, RELATIVE_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences `(f(θ+h) − f(θ−h)) / 2h`.
///
/// `f` receives a fresh tape together with one var per parameter of `params`
/// (in store order) and must return a scalar var. When `coords` is `None`
/// every scalar parameter is perturbed.
pub fn finite_difference_check<F>(
    params: &ParamStore,
    h: f64,
    coords: Option<&[(ParamId, usize)]>,
    f: F,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    assert!(h > 0.0, "finite-difference step must be positive");

    let mut tape = Tape::new();
    let vars = tape.params_from(params)?;
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?.for_store(params);

    let eval = |store: &ParamStore| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars = tape.params_from(store)?;
        let out = f(&mut tape, &vars)?;
        tape.value(out)
            .item()
            .ok_or_else(|| TensorError::NotScalar(tape.value(out).shape().to_vec()))
    };

    let all: Vec<(ParamId, usize)>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = params
                .ids()
                .flat_map(|id| (0..params.get(id).len()).map(move |i| (id, i)))
                .collect();
            &all
        }
    };

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for &(id, i) in coords {
        let original = work.get(id).data()[i];
        work.get_mut(id).data_mut()[i] = original + h;
        let plus = eval(&work)?;
        work.get_mut(id).data_mut()[i] = original - h;
        let minus = eval(&work)?;
        work.get_mut(id).data_mut()[i] = original;

        let numeric = (plus - minus) / (2.0 * h);
        let analytic = grads[id.0].data()[i];
        let err = relative_error(analytic, numeric);
        report.checked += 1;
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((id, i, analytic, numeric));
        }
    }
    Ok(report)
}
