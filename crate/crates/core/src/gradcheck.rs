//! Central-finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::rng::{sample_indices, SeededRng};

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;
/// At least this many coordinates are probed per parameter (all of them for
/// small tensors).
pub const MIN_COORDS_PER_PARAM: usize = 64;
/// Largest relative error tolerated before the check fails.
pub const REL_TOL: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self) -> bool {
        self.max_rel_err <= REL_TOL
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-7 {
        // Both effectively zero at finite-difference resolution.
        0.0
    } else {
        (a - b).abs() / scale.max(1e-6)
    }
}

/// Compares the gradients produced by `loss_and_grad` against central finite
/// differences of `loss_only`, probing a seeded random subsample of
/// coordinates in every parameter.
///
/// `loss_and_grad` must fill the gradient buffers of `params`; `loss_only`
/// must be a pure function of the parameter values (no state committed).
pub fn gradient_check(
    params: &mut ParamSet,
    mut loss_and_grad: impl FnMut(&mut ParamSet) -> Result<f64>,
    mut loss_only: impl FnMut(&ParamSet) -> Result<f64>,
    rng: &mut SeededRng,
) -> Result<GradCheckReport> {
    params.zero_grads();
    let base = loss_and_grad(params)?;
    if !base.is_finite() {
        return Err(Error::GradientCheck(format!("loss is not finite: {base}")));
    }
    let analytic: Vec<Vec<f64>> = params
        .ids()
        .map(|id| params.grad(id).data().to_vec())
        .collect();
    params.zero_grads();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_coord: 0,
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: 0,
    };
    for id in params.ids().collect::<Vec<_>>() {
        let numel = params.value(id).len();
        let coords = if numel <= MIN_COORDS_PER_PARAM {
            (0..numel).collect::<Vec<_>>()
        } else {
            sample_indices(numel, MIN_COORDS_PER_PARAM, rng)
        };
        for coord in coords {
            let original = params.value(id).data()[coord];
            params.value_mut(id).data_mut()[coord] = original + FD_STEP;
            let plus = loss_only(params)?;
            params.value_mut(id).data_mut()[coord] = original - FD_STEP;
            let minus = loss_only(params)?;
            params.value_mut(id).data_mut()[coord] = original;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::GradientCheck(format!(
                    "finite-difference probe of {}[{coord}] produced non-finite loss",
                    params.name(id)
                )));
            }
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[id.0][coord];
            let err = rel_err(a, numeric);
            report.coords_checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst_param = params.name(id).to_string();
                report.worst_coord = coord;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// Like [`gradient_check`] but turns an excessive error into an `Err` naming
/// the offending parameter.
pub fn gradient_check_strict(
    params: &mut ParamSet,
    loss_and_grad: impl FnMut(&mut ParamSet) -> Result<f64>,
    loss_only: impl FnMut(&ParamSet) -> Result<f64>,
    rng: &mut SeededRng,
) -> Result<GradCheckReport> {
    let report = gradient_check(params, loss_and_grad, loss_only, rng)?;
    if !report.passes() {
        return Err(Error::GradientCheck(format!(
            "parameter {:?} coord {}: analytic {:.6e} vs numeric {:.6e} (rel {:.3e} > {:.1e})",
            report.worst_param,
            report.worst_coord,
            report.analytic,
            report.numeric,
            report.max_rel_err,
            REL_TOL
        )));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers;
    use crate::rng::{seeded_rng, uniform};
    use crate::tensor::Tensor;

    /// Toy model: linear layer + softmax cross entropy on a fixed input.
    fn toy_loss(params: &ParamSet, input: &[f64], label: u8) -> f64 {
        let w = params.value(params.id("w").unwrap());
        let b = params.value(params.id("b").unwrap());
        let x = Tensor::from_vec(input.to_vec());
        let z = layers::linear_logits(&x, w, b).unwrap();
        layers::cross_entropy_loss(&z, label)
    }

    fn toy_grad(params: &mut ParamSet, input: &[f64], label: u8) -> f64 {
        let w_id = params.id("w").unwrap();
        let b_id = params.id("b").unwrap();
        let x = Tensor::from_vec(input.to_vec());
        let z = layers::linear_logits(&x, params.value(w_id), params.value(b_id)).unwrap();
        let loss = layers::cross_entropy_loss(&z, label);
        let gz = layers::cross_entropy_grad(&z, label);
        let k = input.len();
        let mut gw = Tensor::zeros(vec![2, k]);
        for c in 0..2 {
            for i in 0..k {
                gw.data_mut()[c * k + i] = gz.data()[c] * input[i];
            }
        }
        params.add_grad(w_id, &gw);
        params.add_grad(b_id, &gz);
        loss
    }

    #[test]
    fn linear_softmax_toy_model_passes_tightly() {
        let mut rng = seeded_rng(17);
        let k = 5;
        let input: Vec<f64> = (0..k).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();
        let mut params = ParamSet::new();
        params
            .insert(
                "w",
                Tensor::new(
                    vec![2, k],
                    (0..2 * k).map(|_| uniform(&mut rng, -0.5, 0.5)).collect(),
                )
                .unwrap(),
            )
            .unwrap();
        params
            .insert("b", Tensor::from_vec(vec![0.1, -0.2]))
            .unwrap();
        let report = gradient_check(
            &mut params,
            |p| Ok(toy_grad(p, &input, 1)),
            |p| Ok(toy_loss(p, &input, 1)),
            &mut rng,
        )
        .unwrap();
        assert!(
            report.max_rel_err <= 1e-6,
            "max rel err {}",
            report.max_rel_err
        );
    }

    #[test]
    fn zero_input_stays_finite() {
        let mut rng = seeded_rng(3);
        let input = vec![0.0; 4];
        let mut params = ParamSet::new();
        params.insert("w", Tensor::zeros(vec![2, 4])).unwrap();
        params.insert("b", Tensor::zeros(vec![2])).unwrap();
        let report = gradient_check(
            &mut params,
            |p| Ok(toy_grad(p, &input, 0)),
            |p| Ok(toy_loss(p, &input, 0)),
            &mut rng,
        )
        .unwrap();
        assert!(report.passes());
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let mut rng = seeded_rng(9);
        let input = vec![0.5, -0.25, 1.0];
        let mut params = ParamSet::new();
        params.insert("w", Tensor::filled(vec![2, 3], 0.3)).unwrap();
        params.insert("b", Tensor::zeros(vec![2])).unwrap();
        let err = gradient_check_strict(
            &mut params,
            |p| {
                let loss = toy_grad(p, &input, 0);
                // Sabotage one coordinate.
                let id = p.id("w").unwrap();
                p.grad_mut(id).data_mut()[0] += 0.5;
                Ok(loss)
            },
            |p| Ok(toy_loss(p, &input, 0)),
            &mut rng,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("\"w\""), "should name the parameter: {msg}");
    }
}
