//! The same MLP run define-then-run and define-by-run gives identical bits.

use nanonnl::graph::with_default_context;
use nanonnl::tensor::{seeded_uniform, Rng};
use nanonnl::{models, ExecutionContext, ParameterRegistry, Variable};

fn run(ctx: ExecutionContext, input: &nanonnl::NdArray) -> nanonnl::Result<(Vec<f32>, Vec<f32>)> {
    with_default_context(ctx, || {
        let registry = ParameterRegistry::new(7);
        registry.make_current();
        let x = Variable::from_array(input.clone(), false);
        let y = models::mlp(&x, 16, 4)?;
        // forward is a no-op for an already computed dynamic graph
        y.forward(false)?;
        y.backward(1.0, false)?;
        let w = registry.get("fc1/W").expect("fc1/W exists");
        Ok((y.d().data().to_vec(), w.grad().data().to_vec()))
    })
}

fn main() -> nanonnl::Result<()> {
    let input = seeded_uniform(&[8, 5], -1.0, 1.0, &mut Rng::new(3))?;
    let (ys, gs) = run(ExecutionContext::default(), &input)?;
    let (yd, gd) = run(ExecutionContext::default().dynamic(), &input)?;
    let bits = |v: &[f32]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
    println!("outputs identical: {}", bits(&ys) == bits(&yd));
    println!("fc1/W grads identical: {}", bits(&gs) == bits(&gd));
    Ok(())
}
