use crate::tensor::{Dtype, NdArray};

pub fn forward(x: &NdArray) -> NdArray {
    let mut y = x.to_dtype(Dtype::F32);
    y.map_inplace(|v| v.max(0.0));
    y
}

/// The gate is closed at zero: `x == 0` passes no gradient.
pub fn backward(x: &NdArray, gy: &NdArray) -> NdArray {
    let data = x
        .data()
        .iter()
        .zip(gy.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    NdArray::from_vec_dtype(x.shape(), data, Dtype::F32).expect("shapes match")
}
