use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment buffers, one pair per parameter, mirroring the
/// parameter shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Matrix<T>>,
    pub v: Vec<Matrix<T>>,
    pub step: u64,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shapes: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = shapes
            .into_iter()
            .map(|(r, c)| (Matrix::zeros(r, c), Matrix::zeros(r, c)))
            .unzip();
        AdamState {
            m,
            v,
            step: 0,
            beta1: T::lit(BETA1),
            beta2: T::lit(BETA2),
            eps: T::lit(ADAM_EPS),
        }
    }
}

/// One parameter taking part in an update.
pub struct AdamParam<'a, T> {
    pub name: &'a str,
    pub value: &'a mut Matrix<T>,
    pub grad: &'a Matrix<T>,
}

/// One bias-corrected Adam update of every parameter in `params`.
///
/// Every gradient is checked before anything is written, so a non-finite
/// gradient leaves both the parameters and `state` untouched.
pub fn adam_step<T: Scalar>(
    params: &mut [AdamParam<'_, T>],
    state: &mut AdamState<T>,
    lr: T,
) -> Result<()> {
    if params.len() != state.m.len() {
        return Err(Error::Contract(format!(
            "adam: {} parameters but state for {}",
            params.len(),
            state.m.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        if p.value.shape() != p.grad.shape() || p.value.shape() != state.m[i].shape() {
            return Err(Error::Dimension {
                op: "adam_step",
                left: p.value.shape(),
                right: p.grad.shape(),
            });
        }
        if !p.grad.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {}", p.name)));
        }
    }

    state.step += 1;
    let t = i32::try_from(state.step).unwrap_or(i32::MAX);
    let one = T::one();
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = one - b1.powi(t);
    let c2 = one - b2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((x, &g), m), v) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(p.grad.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *x = *x - lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Global L2 norm over every gradient.
pub fn global_norm<T: Scalar>(grads: &[&Matrix<T>]) -> T {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|&x| x * x)
        .sum::<T>()
        .sqrt()
}

/// Rescales all gradients together so their global norm is at most
/// `max_norm`. Returns the norm before clipping; gradients under the limit
/// are left untouched.
pub fn clip_global_norm<T: Scalar>(grads: &mut [&mut Matrix<T>], max_norm: T) -> T {
    let norm = {
        let views: Vec<&Matrix<T>> = grads.iter().map(|g| &**g).collect();
        global_norm(&views)
    };
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x = *x * scale);
        }
    }
    norm
}
