use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Floor applied to the argument of every logarithm.
pub const BCE_CLAMP: f64 = 1e-7;

fn check_pair<T: Scalar>(y: &Tensor<T>, yhat: &Tensor<T>) -> Result<()> {
    if y.shape() != yhat.shape() {
        return Err(Error::shape(format!(
            "labels {:?} and predictions {:?} differ in shape",
            y.shape(),
            yhat.shape()
        )));
    }
    for &label in y.data() {
        if label != T::zero() && label != T::one() {
            return Err(Error::Validation(format!(
                "label {:?} is not 0 or 1",
                label
            )));
        }
    }
    if let Some(p) = yhat.data().iter().find(|p| !p.is_finite()) {
        return Err(Error::Numeric(format!("non-finite prediction {:?}", p)));
    }
    Ok(())
}

/// Log-likelihood of one prediction. The argument of each logarithm is
/// floored at [`BCE_CLAMP`], so a confident wrong answer costs at most
/// `-ln(BCE_CLAMP)` and a perfect one costs exactly zero.
fn nll(label: f64, p: f64) -> f64 {
    if label == 1.0 {
        (-p.max(BCE_CLAMP).ln()).max(0.0)
    } else {
        (-(1.0 - p).max(BCE_CLAMP).ln()).max(0.0)
    }
}

/// Mean binary cross-entropy, `-[y ln p + (1 - y) ln(1 - p)]`, in f64.
pub fn bce_loss<T: Scalar>(y: &Tensor<T>, yhat: &Tensor<T>) -> Result<f64> {
    check_pair(y, yhat)?;
    let n = y.len() as f64;
    let total: f64 = y
        .data()
        .iter()
        .zip(yhat.data())
        .map(|(&t, &p)| nll(t.as_f64(), p.as_f64()))
        .sum();
    Ok(total / n)
}

/// Derivative of [`bce_loss`] with respect to each prediction,
/// `(p - y) / (p (1 - p)) / N`. Zero where the floor is active.
pub fn bce_grad<T: Scalar>(y: &Tensor<T>, yhat: &Tensor<T>) -> Result<Tensor<T>> {
    check_pair(y, yhat)?;
    let n = y.len() as f64;
    let data = y
        .data()
        .iter()
        .zip(yhat.data())
        .map(|(&t, &p)| {
            let p = p.as_f64();
            let g = if t.as_f64() == 1.0 {
                if p <= BCE_CLAMP {
                    0.0
                } else {
                    -1.0 / p
                }
            } else if 1.0 - p <= BCE_CLAMP {
                0.0
            } else {
                1.0 / (1.0 - p)
            };
            T::from_f64(g / n)
        })
        .collect();
    Tensor::from_vec(y.shape().to_vec(), data)
}
