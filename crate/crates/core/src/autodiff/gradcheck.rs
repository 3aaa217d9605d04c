use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::AutodiffError;

/// Scalar function of several tensors returning its value and analytic gradient.
pub type Objective<'a> =
    Box<dyn Fn(&[Tensor<f64>]) -> Result<(f64, Vec<Tensor<f64>>), AutodiffError> + 'a>;

/// Absolute floor of the relative-error denominator.
pub const REL_ERR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, coordinate)` of the worst disagreement.
    pub worst: Option<(usize, usize)>,
    pub coordinates: usize,
}

/// Compares an analytic gradient against central differences coordinate by
/// coordinate. Relative error is `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&[Tensor<f64>]) -> Result<(f64, Vec<Tensor<f64>>), AutodiffError>,
{
    let (_, analytic) = f(inputs)?;
    if analytic.len() != inputs.len() {
        return Err(AutodiffError::ShapeMismatch(format!(
            "objective returned {} gradients for {} inputs",
            analytic.len(),
            inputs.len()
        )));
    }
    let mut work = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    for (t, grad) in analytic.iter().enumerate() {
        for i in 0..inputs[t].len() {
            let orig = inputs[t].data()[i];
            work[t].data_mut()[i] = orig + h;
            let (plus, _) = f(&work)?;
            work[t].data_mut()[i] = orig - h;
            let (minus, _) = f(&work)?;
            work[t].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((t, i));
            }
        }
    }
    Ok(report)
}

/// Wraps a tape-building closure as an [`Objective`]: every input becomes a
/// leaf and the returned scalar is differentiated.
pub fn tape_objective<'a, B>(build: B) -> Objective<'a>
where
    B: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, AutodiffError> + 'a,
{
    Box::new(move |inputs: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let vars = inputs
            .iter()
            .map(|t| tape.leaf(t.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let out = build(&mut tape, &vars)?;
        let value = tape.value(out).data()[0];
        let mut grads = tape.backward(out)?;
        let g = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        Ok((value, g))
    })
}
