//! LeNet through the implicit registry and through an explicit parameter directory.

use nanonnl::graph::shape_chain;
use nanonnl::{models, ParameterRegistry, Variable};

fn main() -> nanonnl::Result<()> {
    let batch = 4;
    let registry = ParameterRegistry::new(0);
    registry.make_current();
    let x = Variable::new(&[batch, 1, 28, 28], false);

    let y = models::lenet(&x)?;
    println!("implicit registry");
    for (name, shape) in shape_chain(&y)? {
        println!("  {name:24} {shape:?}");
    }
    let params = registry.get_parameters();
    println!("  {} arrays, {} values", params.len(), models::parameter_count(&params));

    let explicit = ParameterRegistry::new(0);
    let y2 = models::lenet_explicit(&x, &explicit.at("lenet"))?;
    println!("explicit directory: output {:?}", y2.shape());
    for (name, p) in explicit.get_parameters() {
        println!("  {name:20} {:?}", p.shape());
    }
    println!("implicit registry untouched: {} arrays", registry.len());
    Ok(())
}
