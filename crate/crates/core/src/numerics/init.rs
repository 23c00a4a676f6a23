use rand::Rng;

use super::{NumericsError, Tensor};

/// `(fan_in, fan_out)` for a weight of shape `[out, in, *receptive]`.
pub fn fans(shape: &[usize]) -> Result<(usize, usize), NumericsError> {
    if shape.len() < 2 || shape.contains(&0) {
        return Err(NumericsError::NoFans(shape.to_vec()));
    }
    let receptive: usize = shape[2..].iter().product();
    Ok((shape[1] * receptive, shape[0] * receptive))
}

/// Half-width of the Glorot uniform interval, `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(shape: &[usize]) -> Result<f64, NumericsError> {
    let (fan_in, fan_out) = fans(shape)?;
    Ok((6.0 / (fan_in + fan_out) as f64).sqrt())
}

/// Glorot/Xavier uniform initialization.
pub fn glorot_init<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Result<Tensor, NumericsError> {
    let bound = glorot_bound(shape)?;
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data)
}
