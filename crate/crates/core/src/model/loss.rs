use ndarray::{ArrayView, Array, Dimension, Zip};

use super::real::Real;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskedLoss {
    pub value: f64,
    /// |M|, the number of masked entries.
    pub n_masked: usize,
    /// Set when nothing was masked (the loss is then 0).
    pub empty_mask: bool,
}

fn check<D: Dimension>(a: &[usize], b: &[usize], c: &[usize]) -> Result<()> {
    if a != b || a != c {
        return Err(Error::shape(format!(
            "masked loss operands differ: prediction {a:?}, target {b:?}, mask {c:?}"
        )));
    }
    Ok(())
}

/// Squared error over the masked entries (`mask == 0`); visible entries are
/// ignored.
pub fn masked_mse<F: Real, D: Dimension>(
    pred: ArrayView<'_, F, D>,
    target: ArrayView<'_, F, D>,
    mask: ArrayView<'_, F, D>,
    reduction: Reduction,
) -> Result<MaskedLoss> {
    check::<D>(pred.shape(), target.shape(), mask.shape())?;
    let mut sum = 0.0f64;
    let mut n = 0usize;
    Zip::from(&pred).and(&target).and(&mask).for_each(|&p, &t, &m| {
        if m == F::zero() {
            let d = (p - t).as_f64();
            sum += d * d;
            n += 1;
        }
    });
    if n == 0 {
        log::warn!("masked loss over an empty mask set");
        return Ok(MaskedLoss {
            value: 0.0,
            n_masked: 0,
            empty_mask: true,
        });
    }
    let value = match reduction {
        Reduction::Sum => sum,
        Reduction::Mean => sum / n as f64,
    };
    Ok(MaskedLoss {
        value,
        n_masked: n,
        empty_mask: false,
    })
}

/// Gradient of the mean-reduced masked loss w.r.t. the prediction.
pub fn masked_mse_grad<F: Real, D: Dimension>(
    pred: ArrayView<'_, F, D>,
    target: ArrayView<'_, F, D>,
    mask: ArrayView<'_, F, D>,
) -> Result<Array<F, D>> {
    check::<D>(pred.shape(), target.shape(), mask.shape())?;
    let n = mask.iter().filter(|&&m| m == F::zero()).count();
    let mut g = Array::<F, D>::zeros(pred.raw_dim());
    if n == 0 {
        return Ok(g);
    }
    let scale = F::lit(2.0 / n as f64);
    Zip::from(&mut g)
        .and(&pred)
        .and(&target)
        .and(&mask)
        .for_each(|g, &p, &t, &m| {
            if m == F::zero() {
                *g = scale * (p - t);
            }
        });
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn direct_evaluation() {
        let x = array![1.0f64, 2.0, 3.0];
        let xh = array![1.0f64, 0.0, 0.0];
        let m = array![1.0f64, 0.0, 0.0];
        let s = masked_mse(xh.view(), x.view(), m.view(), Reduction::Sum).unwrap();
        let mean = masked_mse(xh.view(), x.view(), m.view(), Reduction::Mean).unwrap();
        assert_eq!(s.value, 13.0);
        assert_eq!(mean.value, 6.5);
        assert_eq!(s.n_masked, 2);
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let x = array![[1.0f32, -2.0], [0.5, 4.0]];
        let m = array![[0.0f32, 0.0], [1.0, 0.0]];
        let l = masked_mse(x.view(), x.view(), m.view(), Reduction::Sum).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(!l.empty_mask);
    }

    #[test]
    fn all_visible_mask_flags_empty_set() {
        let x = array![1.0f64, 2.0];
        let xh = array![5.0f64, 7.0];
        let m = array![1.0f64, 1.0];
        let l = masked_mse(xh.view(), x.view(), m.view(), Reduction::Mean).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.empty_mask);
        let g = masked_mse_grad(xh.view(), x.view(), m.view()).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = array![1.0f64, 2.0];
        let b = array![1.0f64, 2.0, 3.0];
        assert!(masked_mse(a.view(), b.view(), b.view(), Reduction::Sum).is_err());
    }
}
