use super::{AutodiffError, Graph, Parameterized, Var};

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max over entries of `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_error: f64,
    /// `(parameter index, entry index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub entries_checked: usize,
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences with step `eps`.
///
/// `f` builds the graph from the model and must return the scalar output
/// together with one `Var` per parameter, in [`Parameterized::params`] order.
/// It is called once for the analytic pass and twice per parameter entry, so
/// any randomness inside it must be re-seeded on every call.
pub fn grad_check<M, F, E>(model: &mut M, eps: f64, f: F) -> Result<GradCheckReport, E>
where
    M: Parameterized,
    F: for<'g> Fn(&'g M, &mut Graph<'g>) -> Result<(Var, Vec<Var>), E>,
    E: From<AutodiffError>,
{
    let analytic: Vec<Vec<f64>> = {
        let mut g = Graph::new();
        let (out, vars) = f(model, &mut g)?;
        let sizes: Vec<usize> = model.params().iter().map(|p| p.numel()).collect();
        if vars.len() != sizes.len() {
            return Err(AutodiffError::Invalid {
                op: "grad_check",
                reason: format!("{} vars for {} parameters", vars.len(), sizes.len()),
            }
            .into());
        }
        let grads = g.backward(out)?;
        vars.iter()
            .zip(&sizes)
            .map(|(&v, &n)| grads.get(v).map_or_else(|| vec![0.0; n], <[f64]>::to_vec))
            .collect()
    };

    let eval = |m: &M| -> Result<f64, E> {
        let mut g = Graph::new();
        let (out, _) = f(m, &mut g)?;
        Ok(g.scalar(out))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries_checked: 0,
    };
    for (pi, grad) in analytic.iter().enumerate() {
        for (j, &a) in grad.iter().enumerate() {
            let orig = model.params()[pi].data()[j];
            model.params_mut()[pi].data_mut()[j] = orig + eps;
            let plus = eval(model)?;
            model.params_mut()[pi].data_mut()[j] = orig - eps;
            let minus = eval(model)?;
            model.params_mut()[pi].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.entries_checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((pi, j));
            }
        }
    }
    Ok(report)
}
