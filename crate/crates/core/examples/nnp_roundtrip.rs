//! Export LeNet to an .nnp archive, load it back, and compare outputs.

use nanonnl::graph::with_default_context;
use nanonnl::nnp::{build_network, export_model, load_nnp_bytes, load_parameters, save_nnp_bytes};
use nanonnl::tensor::{seeded_uniform, Rng};
use nanonnl::{models, ExecutionContext, ParameterRegistry, Variable};

fn main() -> nanonnl::Result<()> {
    let input = seeded_uniform(&[2, 1, 28, 28], 0.0, 1.0, &mut Rng::new(9))?;
    for ctx in [ExecutionContext::default(), ExecutionContext::default().half()] {
        with_default_context(ctx, || -> nanonnl::Result<()> {
            let registry = ParameterRegistry::new(4);
            registry.make_current();
            let x = Variable::from_array(input.clone(), false);
            let y = models::lenet(&x)?;
            y.forward(false)?;

            let bytes = save_nnp_bytes(&export_model("lenet", &[("x", &x)], &[("y", &y)], &registry)?)?;
            let model = load_nnp_bytes(&bytes)?;
            let again = save_nnp_bytes(&model)?;

            let fresh = ParameterRegistry::new(0);
            load_parameters(&model, &fresh)?;
            let built = build_network(&model, "lenet", &fresh, None)?;
            built.get("x")?.set_data(input.clone())?;
            let y2 = built.get("y")?;
            y2.forward(false)?;

            println!(
                "{ctx}: {} bytes, {} parameter arrays",
                bytes.len(),
                model.parameters.len()
            );
            println!("  resave identical {}", bytes == again);
            println!("  output identical {}", y.d().bit_eq(&y2.d()));
            Ok(())
        })?;
    }
    Ok(())
}
