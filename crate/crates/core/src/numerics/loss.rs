use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Row-wise softmax evaluated at 64-bit precision with max subtraction.
pub fn softmax_rows<T: Real>(logits: &Tensor<T>) -> Vec<Vec<f64>> {
    let classes = *logits.shape().last().expect("rank >= 1");
    logits
        .data()
        .chunks_exact(classes)
        .map(|row| {
            let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / z).collect()
        })
        .collect()
}

/// Mean cross-entropy over the batch and its gradient w.r.t. the logits,
/// `(softmax - one_hot) / batch`. The loss is reduced in `f64`.
pub fn cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    if logits.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "logits must be (batch, classes), got {:?}",
            logits.shape()
        )));
    }
    let (n, classes) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n * classes);
    for (row, &label) in logits.data().chunks_exact(classes).zip(labels) {
        let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v.as_f64() - max).exp()).sum();
        let log_z = max + z.ln();
        loss += log_z - row[label].as_f64();
        for (j, v) in row.iter().enumerate() {
            let p = (v.as_f64() - log_z).exp();
            let target = if j == label { 1.0 } else { 0.0 };
            grad.push(T::of_f64((p - target) / n as f64));
        }
    }
    Ok((loss / n as f64, Tensor::new(vec![n, classes], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln2() {
        let logits = Tensor::new(vec![1, 2], vec![0.0f32, 0.0]).unwrap();
        let (loss, grad) = cross_entropy(&logits, &[0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(grad.data(), &[-0.5, 0.5]);
    }

    #[test]
    fn saturated_logits_do_not_overflow() {
        let logits = Tensor::new(vec![1, 2], vec![1000.0f32, 0.0]).unwrap();
        let (loss, grad) = cross_entropy(&logits, &[0]).unwrap();
        assert!(loss.is_finite() && loss.abs() < 1e-12);
        assert!(grad.data().iter().all(|g| g.is_finite()));
        let (loss1, _) = cross_entropy(&logits, &[1]).unwrap();
        assert!((loss1 - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn label_out_of_range() {
        let logits = Tensor::new(vec![1, 2], vec![0.0f32, 0.0]).unwrap();
        assert!(matches!(
            cross_entropy(&logits, &[2]),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = Tensor::new(vec![2, 3], vec![1.0f32, -2.0, 0.5, 40.0, 40.0, -3.0]).unwrap();
        for row in softmax_rows(&logits) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
