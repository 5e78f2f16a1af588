//! Central differences against backward for a small convolution.
//!
//! The convolution output is reduced to a scalar by an affine layer with
//! fixed random weights, so every output element carries a distinct weight.

use nanonnl::functions as F;
use nanonnl::tensor::{seeded_uniform, Rng};
use nanonnl::{NdArray, Variable};

fn objective(x: &Variable, w: &Variable, probe: &Variable) -> nanonnl::Result<Variable> {
    let y = F::convolution(x, w, None, F::ConvolutionArgs::new(3, [3, 3]))?;
    F::affine(&y, probe, None, 1)
}

fn main() -> nanonnl::Result<()> {
    let mut rng = Rng::new(2);
    let x = Variable::from_array(seeded_uniform(&[1, 2, 5, 5], -1.0, 1.0, &mut rng)?, true);
    let w = Variable::from_array(seeded_uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut rng)?, true);
    let probe = Variable::from_array(seeded_uniform(&[27, 1], -1.0, 1.0, &mut rng)?, false);

    let out = objective(&x, &w, &probe)?;
    out.forward(false)?;
    out.backward(1.0, false)?;

    let eps = 1e-3f32;
    for (name, var) in [("x", &x), ("w", &w)] {
        let analytic = var.grad().data().to_vec();
        let base = var.d().data().to_vec();
        let shape = var.shape();
        let mut worst = 0f64;
        for i in 0..base.len() {
            let at = |value: f32| -> nanonnl::Result<f64> {
                let mut v = base.clone();
                v[i] = value;
                var.set_data(NdArray::from_vec(&shape, v)?)?;
                let o = objective(&x, &w, &probe)?;
                o.forward(false)?;
                Ok(o.d().data()[0] as f64)
            };
            // divide by the step f32 actually took, not by 2 * eps
            let (hi, lo) = (base[i] + eps, base[i] - eps);
            let numeric = (at(hi)? - at(lo)?) / (hi as f64 - lo as f64);
            let a = analytic[i] as f64;
            let err = (numeric - a).abs() / numeric.abs().max(a.abs()).max(1.0);
            worst = worst.max(err);
        }
        var.set_data(NdArray::from_vec(&shape, base.clone())?)?;
        println!(
            "{name}: {} entries, worst error {worst:.2e} (relative, or absolute below 1)",
            base.len()
        );
    }
    Ok(())
}
