use super::{AutodiffError, Tensor};

/// Compares `analytic` gradients against central differences of `f` around
/// `at`, returning the largest `|analytic - numeric| / (|numeric| + 1e-12)`.
pub fn finite_difference_check<F>(
    mut f: F,
    at: &[Tensor],
    analytic: &[Tensor],
    step: f64,
) -> Result<f64, AutodiffError>
where
    F: FnMut(&[Tensor]) -> Result<f64, AutodiffError>,
{
    if !(step > 0.0) {
        return Err(AutodiffError::InvalidStep(step));
    }
    if at.len() != analytic.len() {
        return Err(AutodiffError::ShapeMismatch(format!(
            "{} parameters but {} gradients",
            at.len(),
            analytic.len()
        )));
    }
    for (p, g) in at.iter().zip(analytic) {
        if p.shape() != g.shape() {
            return Err(AutodiffError::ShapeMismatch(format!(
                "parameter {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }

    let mut point: Vec<Tensor> = at.to_vec();
    let mut worst = 0.0f64;
    for t in 0..at.len() {
        for k in 0..at[t].numel() {
            let base = at[t].data()[k];
            point[t] = with_entry(&at[t], k, base + step);
            let plus = f(&point)?;
            point[t] = with_entry(&at[t], k, base - step);
            let minus = f(&point)?;
            point[t] = at[t].clone();
            if !plus.is_finite() || !minus.is_finite() {
                return Err(AutodiffError::NonFinite("finite difference probe".into()));
            }
            let numeric = (plus - minus) / (2.0 * step);
            let err = (analytic[t].data()[k] - numeric).abs() / (numeric.abs() + 1e-12);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

fn with_entry(t: &Tensor, k: usize, value: f64) -> Tensor {
    let mut data = t.data().to_vec();
    data[k] = value;
    Tensor::from_parts(t.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(p: &[Tensor]) -> Result<f64, AutodiffError> {
        Ok(p[0].data()[0].powi(2))
    }

    #[test]
    fn quadratic_is_exact() {
        let err = finite_difference_check(square, &[Tensor::scalar(3.0)], &[Tensor::scalar(6.0)], 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn doubled_gradient_reports_unit_error() {
        let err = finite_difference_check(square, &[Tensor::scalar(3.0)], &[Tensor::scalar(12.0)], 1e-5).unwrap();
        assert!((err - 1.0).abs() < 1e-6, "{err}");
    }

    #[test]
    fn bad_inputs() {
        let at = [Tensor::scalar(3.0)];
        assert!(matches!(
            finite_difference_check(square, &at, &[Tensor::scalar(6.0)], 0.0),
            Err(AutodiffError::InvalidStep(_))
        ));
        assert!(matches!(
            finite_difference_check(square, &at, &[Tensor::vector(vec![6.0, 1.0])], 1e-5),
            Err(AutodiffError::ShapeMismatch(_))
        ));
        let nan = |_: &[Tensor]| Ok(f64::NAN);
        assert!(matches!(
            finite_difference_check(nan, &at, &[Tensor::scalar(6.0)], 1e-5),
            Err(AutodiffError::NonFinite(_))
        ));
    }
}
