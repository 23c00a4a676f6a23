use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Gradients, ParamSet};

/// Denominator floor for [`relative_error`]; keeps exact zeros from
/// turning round-off into a relative error of one.
const GRADIENT_FLOOR: f64 = 1e-6;

/// A scalar function of a parameter set with an analytic gradient.
pub trait Differentiable {
    fn loss(&self, params: &ParamSet) -> f64;

    fn gradients(&self, params: &ParamSet) -> Gradients;

    /// Identifies which piece of every piecewise-linear unit is active.
    /// Finite differences taken across a change of piece are not
    /// derivative estimates, so such probes are skipped and counted.
    fn branch_signature(&self, _params: &ParamSet) -> u64 {
        0
    }
}

#[derive(Debug, Clone)]
pub struct GradientCheckConfig {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Probe at most this many entries per parameter tensor.
    pub max_entries_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradientCheckConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            tolerance: 1e-4,
            max_entries_per_param: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub skipped_nondifferentiable: usize,
    pub max_relative_error: f64,
    pub worst_index: Option<usize>,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradientCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_relative_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_relative_error)
            .fold(0.0, f64::max)
    }

    pub fn skipped(&self) -> usize {
        self.params
            .iter()
            .map(|p| p.skipped_nondifferentiable)
            .sum()
    }

    pub fn checked(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }
}

/// `|a - n| / max(|a| + |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(GRADIENT_FLOOR)
}

/// Compares analytic gradients with central finite differences for every
/// parameter (or a seeded sample of entries per parameter).
pub fn gradient_check<M: Differentiable + ?Sized>(
    model: &M,
    params: &ParamSet,
    config: &GradientCheckConfig,
) -> GradientCheckReport {
    let analytic = model.gradients(params);
    let base_signature = model.branch_signature(params);
    let mut probe = params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut reports = Vec::with_capacity(names.len());
    for name in names {
        let len = params.get(&name).map_or(0, |t| t.len());
        let indices: Vec<usize> = match config.max_entries_per_param {
            Some(k) if k < len => {
                let mut v = sample(&mut rng, len, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        };
        let grad = analytic.get(&name);
        let mut worst = 0.0f64;
        let mut worst_index = None;
        let mut checked = 0;
        let mut skipped = 0;
        for idx in indices {
            let original = probe.get(&name).unwrap().data()[idx];
            let mut eval = |value: f64| {
                probe.value_mut(&name).unwrap().data_mut()[idx] = value;
                (model.loss(&probe), model.branch_signature(&probe))
            };
            let (plus, sig_plus) = eval(original + config.epsilon);
            let (minus, sig_minus) = eval(original - config.epsilon);
            probe.value_mut(&name).unwrap().data_mut()[idx] = original;
            if sig_plus != base_signature || sig_minus != base_signature {
                skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * config.epsilon);
            let a = grad.map_or(0.0, |g| g.data()[idx]);
            let err = relative_error(a, numeric);
            checked += 1;
            if worst_index.is_none() || err > worst {
                worst = err;
                worst_index = Some(idx);
            }
        }
        reports.push(ParamCheck {
            passed: checked > 0 && worst < config.tolerance,
            name,
            checked,
            skipped_nondifferentiable: skipped,
            max_relative_error: worst,
            worst_index,
        });
    }
    GradientCheckReport {
        tolerance: config.tolerance,
        params: reports,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    /// loss = sum_i c_i * w_i, optionally with a doubled analytic gradient.
    struct Linear {
        coeffs: Vec<f64>,
        corrupt: bool,
    }

    impl Differentiable for Linear {
        fn loss(&self, params: &ParamSet) -> f64 {
            let w = params.get("w").unwrap().data();
            w.iter().zip(&self.coeffs).map(|(a, b)| a * b).sum()
        }

        fn gradients(&self, _params: &ParamSet) -> Gradients {
            let scale = if self.corrupt { 2.0 } else { 1.0 };
            let g = self.coeffs.iter().map(|c| c * scale).collect();
            Gradients::from([("w".to_string(), Tensor::vector(g))])
        }
    }

    fn params() -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::vector(vec![0.5, -1.5, 2.0])).unwrap();
        p
    }

    #[test]
    fn exact_for_linear_model() {
        let m = Linear {
            coeffs: vec![0.3, -1.2, 4.0],
            corrupt: false,
        };
        let r = gradient_check(&m, &params(), &GradientCheckConfig::default());
        assert!(r.passed());
        assert!(r.max_relative_error() < 1e-7, "{}", r.max_relative_error());
    }

    #[test]
    fn doubled_gradient_fails_with_one_third() {
        let m = Linear {
            coeffs: vec![0.3, -1.2, 4.0],
            corrupt: true,
        };
        let r = gradient_check(&m, &params(), &GradientCheckConfig::default());
        assert!(!r.passed());
        assert!((r.max_relative_error() - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn relative_error_examples() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 1.0 / 3.0).abs() < 1e-15);
    }
}
