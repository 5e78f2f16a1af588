//! Train the small MLP on synthetic Gaussians, then evaluate the exported model.

use nanonnl::data::DataSpec;
use nanonnl::train::{evaluate, train, TrainConfig, MONITOR_HEADER};

fn main() -> nanonnl::Result<()> {
    let cfg = TrainConfig {
        epochs: 5,
        workers: 2,
        seed: 3,
        ..Default::default()
    };
    println!("{MONITOR_HEADER}");
    let outcome = train(&cfg, &|r| {
        println!("{}", r.csv_row());
        Ok(())
    })?;
    let test = DataSpec::gaussians(2, 400, 2).with_seed(99).load()?;
    let m = evaluate(&outcome.model, &test)?;
    println!(
        "held-out error {:.4}, loss {:.4} on {} samples",
        m.error, m.loss, m.samples
    );
    Ok(())
}
