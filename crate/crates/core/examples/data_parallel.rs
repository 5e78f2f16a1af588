//! Four workers each see a quarter of the batch; after all-reduce their
//! averaged gradient matches a single worker on the whole batch.

use nanonnl::communicator::{data_parallel_step, parameter_hash, run_workers, shard_range};
use nanonnl::functions as F;
use nanonnl::solver::{LossScaling, SgdSolver};
use nanonnl::{data::DataSpec, models, ExecutionContext, Variable};

fn main() -> nanonnl::Result<()> {
    let data = DataSpec::gaussians(2, 64, 2).with_seed(11).load()?;
    let batch = 16;
    for workers in [1, 2, 4] {
        let results = run_workers(workers, 3, ExecutionContext::default(), |w| {
            let shard = batch / w.comm.size();
            let x = Variable::new(&[shard, 2], false);
            let t = Variable::new(&[shard, 1], false);
            let loss = F::softmax_cross_entropy(&models::mlp(&x, 8, 2)?, &t)?;
            let mut solver = SgdSolver::new(0.5);
            solver.setup(&w.registry.get_parameters())?;
            let mut scaling = LossScaling::None;
            let all: Vec<usize> = (0..batch).collect();
            for _ in 0..5 {
                let (xb, tb) = data.batch(&all[shard_range(batch, w.comm.size(), w.rank())])?;
                x.set_data(xb)?;
                t.set_data(tb)?;
                data_parallel_step(&w.comm, &loss, &mut solver, &mut scaling)?;
            }
            let grad = w.registry.get("fc1/W").expect("fc1/W exists").grad();
            Ok((parameter_hash(&w.registry.get_parameters()), grad.data()[0]))
        })?;
        let hashes: Vec<String> = results.iter().map(|(h, _)| format!("{h:016x}")).collect();
        println!(
            "K={workers}: fc1/W grad[0] {:+.8} hashes {}",
            results[0].1,
            hashes.join(" ")
        );
    }
    Ok(())
}
