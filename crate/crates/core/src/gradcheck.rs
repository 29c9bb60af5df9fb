//! Central finite differences, used as an independent oracle for the
//! analytic gradients produced by [`Graph::backward`](crate::Graph::backward).

use crate::tensor::Tensor;

/// Numerical gradient of a scalar function at `x`.
pub fn numeric_grad(f: impl Fn(&Tensor<f64>) -> f64, x: &Tensor<f64>, h: f64) -> Tensor<f64> {
    let mut g = vec![0.0; x.numel()];
    let mut probe = x.clone();
    for (i, gi) in g.iter_mut().enumerate() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = f(&probe);
        probe.data_mut()[i] = orig - h;
        let fm = f(&probe);
        probe.data_mut()[i] = orig;
        *gi = (fp - fm) / (2.0 * h);
    }
    Tensor::from_vec(g, x.shape()).expect("same shape")
}

/// Numerical Jacobian `d f_i / d x_j` of a vector function, row-major
/// `(out, in)`.
pub fn numeric_jacobian(
    f: impl Fn(&Tensor<f64>) -> Tensor<f64>,
    x: &Tensor<f64>,
    h: f64,
) -> Tensor<f64> {
    let n_in = x.numel();
    let n_out = f(x).numel();
    let mut jac = vec![0.0; n_out * n_in];
    let mut probe = x.clone();
    for j in 0..n_in {
        let orig = x.data()[j];
        probe.data_mut()[j] = orig + h;
        let fp = f(&probe);
        probe.data_mut()[j] = orig - h;
        let fm = f(&probe);
        probe.data_mut()[j] = orig;
        for i in 0..n_out {
            jac[i * n_in + j] = (fp.data()[i] - fm.data()[i]) / (2.0 * h);
        }
    }
    Tensor::from_vec(jac, &[n_out, n_in]).expect("jacobian shape")
}

/// Largest elementwise error relative to the gradient scale:
/// `max|a - b| / max(max|b|, floor)`.
pub fn relative_error(analytic: &Tensor<f64>, numeric: &Tensor<f64>, floor: f64) -> f64 {
    let scale = numeric.max_abs().max(analytic.max_abs()).max(floor);
    analytic.max_abs_diff(numeric) / scale
}
