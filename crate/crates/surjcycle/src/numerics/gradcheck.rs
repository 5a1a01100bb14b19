//! Central-difference gradient verification.

use crate::numerics::matrix::DenseMatrix;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (parameter index, entry index) of the worst component.
    pub offending_index: Option<(usize, usize)>,
    pub tol: f64,
    pub passed: bool,
}

/// Compare analytic gradients against central finite differences.
///
/// `f` evaluates the scalar loss at the given parameter values;
/// `analytic` are the gradients under test, one matrix per parameter.
pub fn grad_check<F>(
    f: F,
    params: &[DenseMatrix],
    analytic: &[DenseMatrix],
    step: f64,
    tol: f64,
) -> GradCheckReport
where
    F: Fn(&[DenseMatrix]) -> f64,
{
    assert!(step > 0.0, "grad_check: step must be positive");
    assert_eq!(params.len(), analytic.len());
    let mut work: Vec<DenseMatrix> = params.to_vec();
    let mut max_rel = 0.0;
    let mut offending = None;
    // scale for the relative-error denominator
    let gnorm: f64 = analytic
        .iter()
        .map(|g| g.data.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    for pi in 0..params.len() {
        for ei in 0..params[pi].data.len() {
            let orig = work[pi].data[ei];
            work[pi].data[ei] = orig + step;
            let fp = f(&work);
            work[pi].data[ei] = orig - step;
            let fm = f(&work);
            work[pi].data[ei] = orig;
            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic[pi].data[ei];
            let rel = (a - numeric).abs() / (gnorm.max(numeric.abs()).max(1.0));
            if rel > max_rel {
                max_rel = rel;
                offending = Some((pi, ei));
            }
        }
    }
    GradCheckReport {
        max_rel_error: max_rel,
        offending_index: if max_rel > tol { offending } else { None },
        tol,
        passed: max_rel <= tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tape::Tape;

    fn quad_loss(params: &[DenseMatrix]) -> f64 {
        let mut t = Tape::new();
        let x = t.leaf(params[0].clone());
        let l = t.frob_sq(x);
        t.scalar_value(l)
    }

    #[test]
    fn quadratic_form_passes() {
        let p = vec![DenseMatrix::col_vec(&[0.7, -1.3, 2.0])];
        let mut t = Tape::new();
        let x = t.leaf(p[0].clone());
        let l = t.frob_sq(x);
        t.backward(l).unwrap();
        let g = vec![t.grad(x).clone()];
        let report = grad_check(quad_loss, &p, &g, 1e-4, 1e-6);
        assert!(report.passed, "max rel err {}", report.max_rel_error);
    }

    #[test]
    fn corrupted_gradient_fails_with_index() {
        let p = vec![DenseMatrix::col_vec(&[0.7, -1.3, 2.0])];
        let mut t = Tape::new();
        let x = t.leaf(p[0].clone());
        let l = t.frob_sq(x);
        t.backward(l).unwrap();
        let mut g = t.grad(x).clone();
        g.data[1] *= 2.0; // fault injection
        let report = grad_check(quad_loss, &p, &[g], 1e-4, 1e-6);
        assert!(!report.passed);
        assert_eq!(report.offending_index, Some((0, 1)));
    }
}
