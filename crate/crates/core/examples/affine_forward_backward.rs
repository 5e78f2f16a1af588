//! One affine layer, a loss, and the gradients it produces.

use nanonnl::functions as F;
use nanonnl::parametric as PF;
use nanonnl::{NdArray, ParameterRegistry, Variable};

fn main() -> nanonnl::Result<()> {
    let registry = ParameterRegistry::new(42);
    registry.make_current();

    let x = Variable::from_array(NdArray::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0])?, false);
    let t = Variable::from_array(NdArray::from_vec(&[2, 1], vec![0.0, 2.0])?, false);
    let y = PF::affine(&x, 3, Some("fc"))?;
    let loss = F::softmax_cross_entropy(&y, &t)?;

    // static graph: nothing has been computed yet
    loss.forward(false)?;
    loss.backward(1.0, false)?;

    println!("logits {:?}", y.d().data());
    println!("loss   {:.6}", loss.d().data()[0]);
    for (name, p) in registry.get_parameters() {
        println!("{name:6} shape {:?} grad {:?}", p.shape(), p.grad().data());
    }
    Ok(())
}
