use super::{NumericsError, Tensor};

/// Floor applied to the true-class probability before taking the log.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// `-ln(max(p[class], 1e-12))`.
pub fn cross_entropy(probabilities: &Tensor, true_class: usize) -> Result<f64, NumericsError> {
    let p = class_probability(probabilities, true_class)?;
    Ok(-p.max(PROBABILITY_FLOOR).ln())
}

/// Gradient of [`cross_entropy`] with respect to the probability vector.
pub fn cross_entropy_gradient(
    probabilities: &Tensor,
    true_class: usize,
) -> Result<Tensor, NumericsError> {
    let p = class_probability(probabilities, true_class)?;
    let mut grad = Tensor::zeros(probabilities.shape());
    if p > PROBABILITY_FLOOR {
        grad.data_mut()[true_class] = -1.0 / p;
    }
    Ok(grad)
}

fn class_probability(probabilities: &Tensor, true_class: usize) -> Result<f64, NumericsError> {
    probabilities
        .data()
        .get(true_class)
        .copied()
        .ok_or(NumericsError::ClassOutOfRange {
            class: true_class,
            classes: probabilities.len(),
        })
}
