use super::{Binding, NumericsError, ParamStore, Tape, Var};

/// Denominator floor for the relative error, so that two near-zero
/// gradients compare as equal instead of amplifying roundoff.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Worst coordinate found by [`check_gradients`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "max rel err {:.3e} at {}[{}] (analytic {:.6e}, numeric {:.6e}, {} coords)",
            self.max_rel_error,
            self.worst_param,
            self.worst_index,
            self.analytic,
            self.numeric,
            self.coords_checked
        )
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn evaluate<F, E>(store: &ParamStore, f: &mut F) -> Result<f64, E>
where
    F: FnMut(&mut Tape, &Binding) -> Result<Var, E>,
    E: From<NumericsError>,
{
    let mut tape = Tape::new();
    let binding = tape.bind_frozen(store);
    let out = f(&mut tape, &binding)?;
    let value = tape.scalar(out);
    if !value.is_finite() {
        return Err(NumericsError::Evaluation(format!("objective evaluated to {value}")).into());
    }
    Ok(value)
}

/// Compares reverse-mode gradients of the scalar built by `f` against central
/// differences with the given `step`, over every coordinate of every parameter.
///
/// `f` must be deterministic. The store's values are restored on return.
pub fn check_gradients<F, E>(store: &mut ParamStore, step: f64, f: F) -> Result<GradCheckReport, E>
where
    F: FnMut(&mut Tape, &Binding) -> Result<Var, E>,
    E: From<NumericsError>,
{
    check_gradients_with(store, step, None, f)
}

/// Like [`check_gradients`], with an optional fault injected into one op's adjoint.
pub fn check_gradients_with<F, E>(
    store: &mut ParamStore,
    step: f64,
    fault: Option<(super::OpKind, f64)>,
    mut f: F,
) -> Result<GradCheckReport, E>
where
    F: FnMut(&mut Tape, &Binding) -> Result<Var, E>,
    E: From<NumericsError>,
{
    if !(step > 0.0) {
        return Err(NumericsError::Contract(format!("step must be positive, got {step}")).into());
    }
    let mut tape = Tape::new();
    if let Some((kind, factor)) = fault {
        tape.inject_adjoint_fault(kind, factor);
    }
    let binding = tape.bind(store);
    let out = f(&mut tape, &binding)?;
    if !tape.scalar(out).is_finite() {
        return Err(NumericsError::Evaluation(format!(
            "objective evaluated to {}",
            tape.scalar(out)
        ))
        .into());
    }
    tape.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let var = binding.var(id);
        let analytic: Vec<f64> = tape
            .grad(var)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; store.get(id).len()]);
        for (i, &a) in analytic.iter().enumerate() {
            let orig = store.get(id).values()[i];
            store.get_mut(id).values_mut()[i] = orig + step;
            let plus = evaluate(store, &mut f);
            store.get_mut(id).values_mut()[i] = orig - step;
            let minus = evaluate(store, &mut f);
            store.get_mut(id).values_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * step);
            let err = relative_error(a, numeric);
            report.coords_checked += 1;
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = err;
                report.worst_param = store.name(id).to_string();
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::DArray;

    #[test]
    fn quadratic_is_exact() {
        let mut store = ParamStore::new();
        let id = store.add("x", DArray::new(&[3], vec![0.5, -1.5, 2.0]).unwrap());
        let c = [1.0, 0.5, -2.0];
        let report = check_gradients::<_, NumericsError>(&mut store, 1e-5, |t, b| {
            let x = b.var(id);
            let cv = t.constant(&[3], c.to_vec())?;
            let sq = t.square(x);
            let lin = t.mul(x, cv)?;
            let y = t.add(sq, lin)?;
            Ok(t.sum(y))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{report}");
        assert_eq!(report.coords_checked, 3);
        assert_eq!(store.get(id).values(), &[0.5, -1.5, 2.0]);
    }

    #[test]
    fn dead_branch_matches_zero() {
        let mut store = ParamStore::new();
        let w = store.add("w", DArray::new(&[2], vec![0.7, -0.3]).unwrap());
        let report = check_gradients::<_, NumericsError>(&mut store, 1e-5, |t, b| {
            let gate = t.constant(&[2], vec![0.0, 0.0])?;
            let g = t.gelu(b.var(w));
            let y = t.mul(g, gate)?;
            Ok(t.sum(y))
        })
        .unwrap();
        assert_eq!(report.analytic, 0.0);
        assert_eq!(report.numeric, 0.0);
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let mut store = ParamStore::new();
        let w = store.add("w", DArray::new(&[1], vec![1.0]).unwrap());
        let r = check_gradients::<_, NumericsError>(&mut store, 1e-5, |t, b| {
            let y = t.scale(b.var(w), f64::INFINITY);
            Ok(t.sum(y))
        });
        assert!(matches!(r, Err(NumericsError::Evaluation(_))));
    }

    #[test]
    fn fault_is_detected() {
        let mut store = ParamStore::new();
        let w = store.add("w", DArray::new(&[1, 2], vec![0.4, 1.2]).unwrap());
        let r = check_gradients_with::<_, NumericsError>(
            &mut store,
            1e-5,
            Some((crate::numerics::OpKind::Gelu, 1.5)),
            |t, b| {
                let y = t.gelu(b.var(w));
                Ok(t.sum(y))
            },
        )
        .unwrap();
        assert!(r.max_rel_error > 0.1);
    }
}
