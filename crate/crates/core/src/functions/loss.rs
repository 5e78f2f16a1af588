//! Softmax cross entropy averaged over the batch.

use crate::error::{Error, Result};
use crate::tensor::{Dtype, NdArray};

pub fn output_shape(logits: &[usize], labels: &[usize]) -> Result<Vec<usize>> {
    if logits.len() != 2 {
        return Err(Error::shape(format!("logits {logits:?} must be (B, K)")));
    }
    let ok = match labels {
        [b] => *b == logits[0],
        [b, 1] => *b == logits[0],
        _ => false,
    };
    if !ok {
        return Err(Error::shape(format!(
            "labels {labels:?} do not match logits {logits:?}"
        )));
    }
    Ok(Vec::new())
}

fn label_at(labels: &NdArray, row: usize, classes: usize) -> Result<usize> {
    let raw = labels.data()[row];
    if raw.fract() != 0.0 || raw < 0.0 || raw >= classes as f32 {
        return Err(Error::LabelOutOfRange {
            label: if raw.is_finite() { raw as i64 } else { i64::MIN },
            classes,
        });
    }
    Ok(raw as usize)
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &NdArray) -> NdArray {
    let k = logits.shape()[1];
    let mut out = logits.to_dtype(Dtype::F32);
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut total = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}

pub fn forward(logits: &NdArray, labels: &NdArray) -> Result<NdArray> {
    output_shape(logits.shape(), labels.shape())?;
    let (batch, k) = (logits.shape()[0], logits.shape()[1]);
    let mut total = 0.0f32;
    for (b, row) in logits.data().chunks(k).enumerate() {
        let t = label_at(labels, b, k)?;
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let log_sum: f32 = row.iter().map(|v| (v - max).exp()).sum::<f32>().ln();
        total += log_sum - (row[t] - max);
    }
    Ok(NdArray::scalar(total / batch as f32))
}

/// `(softmax − onehot) · g / B` into the logits.
pub fn backward(logits: &NdArray, labels: &NdArray, gy: &NdArray) -> Result<NdArray> {
    let (batch, k) = (logits.shape()[0], logits.shape()[1]);
    let g = gy.data()[0] / batch as f32;
    let mut grad = softmax(logits);
    for (b, row) in grad.data_mut().chunks_mut(k).enumerate() {
        let t = label_at(labels, b, k)?;
        row[t] -= 1.0;
        row.iter_mut().for_each(|v| *v *= g);
    }
    Ok(grad)
}
