//! Central-difference gradient verification.
//!
//! This is the independent oracle every analytic gradient in the engine
//! is held against: the loss is rebuilt from scratch at perturbed
//! parameter points, so the numeric path never reuses the tape under test.

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tape::{NodeId, Tape};

/// Outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter and flat coordinate where the worst error occurred.
    pub worst_param: String,
    pub worst_index: usize,
    pub coords_checked: usize,
}

/// Compare the tape's analytic gradient of a scalar loss against central
/// differences `(f(x+ε) − f(x−ε)) / 2ε`, coordinate by coordinate.
///
/// `build` must construct the loss graph for the given parameters and
/// return the scalar loss node; it is invoked once for the analytic pass
/// and twice per checked coordinate. Relative error per coordinate is
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(build: F, params: &ParamSet, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<NodeId>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::invalid(format!("eps must be in (0, 1e-2], got {eps}")));
    }

    let eval = |p: &ParamSet, context: &str| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = build(&mut tape, p)?;
        let v = tape.value(loss);
        if !v.is_scalar() {
            return Err(Error::invalid(format!(
                "grad_check loss must be scalar, got shape {:?}",
                v.shape()
            )));
        }
        let x = v.item();
        if !x.is_finite() {
            return Err(Error::NonFinite { context: context.to_string() });
        }
        Ok(x)
    };

    // Analytic pass.
    let mut tape = Tape::new();
    let loss = build(&mut tape, params)?;
    if !tape.value(loss).is_scalar() {
        return Err(Error::invalid(format!(
            "grad_check loss must be scalar, got shape {:?}",
            tape.value(loss).shape()
        )));
    }
    if !tape.value(loss).item().is_finite() {
        return Err(Error::NonFinite { context: "loss at unperturbed point".to_string() });
    }
    let analytic = tape.backward(loss)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        coords_checked: 0,
    };

    for (name, grad) in analytic.iter() {
        for i in 0..grad.numel() {
            let mut plus = params.clone();
            plus.get_mut(name)?.values_mut()[i] += eps;
            let mut minus = params.clone();
            minus.get_mut(name)?.values_mut()[i] -= eps;

            let lp = eval(&plus, &format!("{name}[{i}] +eps"))?;
            let lm = eval(&minus, &format!("{name}[{i}] -eps"))?;
            let numeric = (lp - lm) / (2.0 * eps);
            let a = grad.values()[i];
            // An absolute difference below the oracle's own noise floor
            // (ulp-scale loss rounding divided by 2*eps) is agreement;
            // shift-invariant directions otherwise read as spurious error.
            let diff = (a - numeric).abs();
            let rel =
                if diff < 1e-9 { 0.0 } else { diff / a.abs().max(numeric.abs()).max(1e-8) };
            report.coords_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = name.clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_matches_central_difference() {
        // loss = x², x = 3: analytic 6, central difference exact to O(eps²).
        let mut params = ParamSet::new();
        params.insert("x", Tensor::scalar(3.0)).unwrap();
        let report = grad_check(
            |tape, p| {
                let x = tape.param("x", p.get("x")?.clone());
                let sq = tape.mul(x, x)?;
                Ok(tape.reduce_sum(sq))
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{}", report.max_rel_error);
    }

    #[test]
    fn linear_is_exact() {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::vector(vec![1.0, -2.0, 0.5])).unwrap();
        let report = grad_check(
            |tape, p| {
                let w = tape.param("w", p.get("w")?.clone());
                let c = tape.leaf(Tensor::vector(vec![3.0, 1.0, -4.0]));
                let prod = tape.mul(w, c)?;
                Ok(tape.reduce_sum(prod))
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-10, "{}", report.max_rel_error);
    }

    #[test]
    fn rejects_bad_eps() {
        let params = ParamSet::new();
        let err = grad_check(|tape, _| Ok(tape.leaf(Tensor::scalar(0.0))), &params, 0.5);
        assert!(err.is_err());
    }
}
