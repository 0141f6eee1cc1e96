//! Central finite-difference verification of analytic gradients.

use super::params::ParamSet;
use crate::error::Result;

/// Elements probed per tensor when it is larger than this.
pub const MIN_SAMPLES_PER_TENSOR: usize = 64;

/// Magnitude below which gradients are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<String>,
    pub tolerance: f64,
    pub passed: bool,
    pub tensors: Vec<TensorCheck>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
    (analytic - numeric).abs() / denom
}

fn probe_indices(len: usize) -> Vec<usize> {
    if len <= MIN_SAMPLES_PER_TENSOR {
        return (0..len).collect();
    }
    // evenly strided, always includes the first and last element
    let n = MIN_SAMPLES_PER_TENSOR;
    (0..n).map(|i| i * (len - 1) / (n - 1)).collect()
}

/// Compares the gradients accumulated by `loss` against central
/// differences of its value.
///
/// `loss` must return a deterministic scalar and add its gradient into the
/// parameter grads. Only tensors accepted by `include` are probed.
pub fn gradient_check<F, P>(
    mut loss: F,
    params: &mut ParamSet,
    eps: f64,
    tol: f64,
    include: P,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut ParamSet) -> Result<f64>,
    P: Fn(&str) -> bool,
{
    params.zero_grad();
    loss(params)?;
    let analytic = params.clone();

    let names: Vec<String> = params
        .names()
        .filter(|n| include(n))
        .map(str::to_string)
        .collect();
    let mut tensors = Vec::with_capacity(names.len());
    let mut max_rel_error = 0.0f64;
    let mut worst = None;
    for name in names {
        let len = params.value(&name)?.len();
        let mut tensor_max = 0.0f64;
        let idx = probe_indices(len);
        for &i in &idx {
            let orig = params.value(&name)?.data()[i];
            params.get_mut(&name)?.value.data_mut()[i] = orig + eps;
            let plus = loss(params)?;
            params.get_mut(&name)?.value.data_mut()[i] = orig - eps;
            let minus = loss(params)?;
            params.get_mut(&name)?.value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.grad(&name)?.data()[i];
            let err = relative_error(a, numeric);
            tensor_max = tensor_max.max(err);
        }
        if worst.is_none() || tensor_max > max_rel_error {
            max_rel_error = tensor_max;
            worst = Some(name.clone());
        }
        tensors.push(TensorCheck {
            name,
            max_rel_error: tensor_max,
            checked: idx.len(),
        });
    }
    params.zero_grad();
    Ok(GradCheckReport {
        max_rel_error,
        worst,
        tolerance: tol,
        passed: max_rel_error <= tol,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor2D;

    fn single(x: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("x", Tensor2D::column(&[x])).unwrap();
        p
    }

    #[test]
    fn square_at_three() {
        let mut p = single(3.0);
        let report = gradient_check(
            |p| {
                let x = p.value("x")?.get(0, 0);
                p.get_mut("x")?.grad.data_mut()[0] += 2.0 * x;
                Ok(x * x)
            },
            &mut p,
            1e-4,
            1e-4,
            |_| true,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-8, "{}", report.max_rel_error);
        assert!(report.passed);
        assert_eq!(p.value("x").unwrap().get(0, 0), 3.0);
    }

    #[test]
    fn linear_function_exact() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor2D::column(&[0.5, -1.0, 2.0])).unwrap();
        let coef = [1.0, 4.0, -2.0];
        let report = gradient_check(
            |p| {
                let w = p.value("w")?.data().to_vec();
                let g = p.get_mut("w")?.grad.data_mut();
                for (gi, c) in g.iter_mut().zip(coef) {
                    *gi += c;
                }
                Ok(w.iter().zip(coef).map(|(a, b)| a * b).sum())
            },
            &mut p,
            1e-3,
            1e-4,
            |_| true,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-10);
    }

    #[test]
    fn doubled_gradient_is_flagged() {
        let mut p = single(1.3);
        let report = gradient_check(
            |p| {
                let x = p.value("x")?.get(0, 0);
                p.get_mut("x")?.grad.data_mut()[0] += 2.0 * (2.0 * x);
                Ok(x * x)
            },
            &mut p,
            1e-4,
            1e-4,
            |_| true,
        )
        .unwrap();
        assert!((report.max_rel_error - 0.5).abs() < 1e-6);
        assert!(!report.passed);
        assert_eq!(report.worst.as_deref(), Some("x"));
    }

    #[test]
    fn large_tensors_are_subsampled() {
        assert_eq!(probe_indices(10).len(), 10);
        let idx = probe_indices(1000);
        assert_eq!(idx.len(), MIN_SAMPLES_PER_TENSOR);
        assert_eq!((idx[0], *idx.last().unwrap()), (0, 999));
    }
}
