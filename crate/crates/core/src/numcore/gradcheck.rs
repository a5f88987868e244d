use crate::error::{Error, Result};

/// Outcome of comparing an analytic gradient with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// Entries whose magnitude falls below this are compared in absolute terms.
pub const REL_ERR_FLOOR: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_ERR_FLOOR)
}

/// Central-difference gradient of `f` at `params`.
pub fn numeric_gradient<F>(mut f: F, params: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut x = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = x[i];
        x[i] = orig + h;
        let fp = f(&x)?;
        x[i] = orig - h;
        let fm = f(&x)?;
        x[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!("objective at perturbed coordinate {i}")));
        }
        out.push((fp - fm) / (2.0 * h));
    }
    Ok(out)
}

/// Checks `analytic` against central differences of `f` at `params`.
pub fn grad_check<F>(f: F, params: &[f64], analytic: &[f64], h: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if analytic.len() != params.len() {
        return Err(Error::shape(
            format!("{} gradient entries", params.len()),
            analytic.len(),
        ));
    }
    let numeric = numeric_gradient(f, params, h)?;
    let (worst_index, max_rel_err) = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
    Ok(GradCheckReport {
        max_rel_err,
        worst_index,
        analytic: analytic.to_vec(),
        numeric,
        tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(x: &[f64]) -> Result<f64> {
        Ok(x.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * v * v).sum())
    }

    #[test]
    fn quadratic_passes() {
        let x = [0.3, -1.2, 2.0];
        let g: Vec<f64> = x.iter().enumerate().map(|(i, v)| 2.0 * (i as f64 + 1.0) * v).collect();
        let r = grad_check(quad, &x, &g, 1e-5, 1e-8).unwrap();
        assert!(r.passed(), "{}", r.max_rel_err);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let x = [0.3, -1.2, 2.0];
        let g = vec![0.6, -4.8, 10.0];
        let r = grad_check(quad, &x, &g, 1e-5, 1e-4).unwrap();
        assert!(!r.passed());
        assert_eq!(r.worst_index, 2);
    }

    #[test]
    fn nonfinite_evaluation_is_an_error() {
        let f = |x: &[f64]| Ok(if x[0] > 0.0 { f64::INFINITY } else { 0.0 });
        assert!(grad_check(f, &[0.0], &[0.0], 1e-5, 1e-4).is_err());
    }
}
