//! Dynamic loss scaling on a half-precision classifier.
//!
//! The first run injects an overflow to show the scale halving and the
//! skipped update; the second trains with a short doubling interval.

use nanonnl::functions as F;
use nanonnl::graph::with_default_context;
use nanonnl::solver::{dynamic_step, DynamicLossScaler, SgdSolver};
use nanonnl::{data::DataSpec, models, ExecutionContext, NdArray, ParameterRegistry, Variable};

fn main() -> nanonnl::Result<()> {
    let data = DataSpec::gaussians(3, 240, 4).with_seed(5).load()?;
    with_default_context(ExecutionContext::default().half(), || {
        let registry = ParameterRegistry::new(1);
        registry.make_current();
        let x = Variable::new(&[24, 4], false);
        let t = Variable::new(&[24, 1], false);
        let y = models::mlp(&x, 32, 3)?;
        let loss = F::softmax_cross_entropy(&y, &t)?;
        let mut solver = SgdSolver::new(0.1);
        solver.setup(&registry.get_parameters())?;

        let w = registry.get("fc1/W").expect("fc1/W exists");
        println!("fc1/W stored as {:?}, master copy is f32", w.dtype());

        let mut scaler = DynamicLossScaler::new(8.0, 2.0, 4);
        for step in 0..20 {
            let idx: Vec<usize> = (0..24).map(|i| (step * 24 + i) % data.len()).collect();
            let (xb, tb) = data.batch(&idx)?;
            x.set_data(xb)?;
            t.set_data(tb)?;
            loss.forward(false)?;
            loss.backward(scaler.loss_scale, true)?;
            if step == 3 {
                let shape = w.shape();
                w.set_grad(NdArray::full(&shape, f32::INFINITY, w.dtype()))?;
            }
            let out = dynamic_step(&mut scaler, &mut solver)?;
            println!(
                "step {step:2} loss {:.4} {:?} scale -> {}",
                loss.d().data()[0],
                out.reason,
                out.loss_scale_after
            );
        }
        Ok(())
    })
}
