//! Mean wall time per applied batch for several worker counts at a fixed
//! step budget. Speedup needs as many free cores as workers.

use dist_dca::datagen::{generate_dataset, normalize_batch, SyntheticConfig, TaskDesign};
use dist_dca::model::{build_model, ModelConfig};
use dist_dca::ps::{bench_rows, run_training, write_bench_csv, ServerConfig, TrainRunConfig};

fn main() -> dist_dca::Result<()> {
    let data = generate_dataset(
        &TaskDesign::motor(),
        &SyntheticConfig {
            n_signals: 256,
            ..SyntheticConfig::default()
        },
    )?;
    let signals = normalize_batch(&data.signals).signals.cast::<f32>();
    let model = ModelConfig::tiny(284, 16, 3, 9);
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    println!("{cores} cores available");

    let mut measured = Vec::new();
    for workers in [1, 2, 4] {
        let run = TrainRunConfig {
            worker_count: workers,
            epochs: 100,
            warmup_steps: 0,
            batch_size: 16,
            step_budget: Some(60),
            ..TrainRunConfig::default()
        };
        let r = run_training(&run, &ServerConfig::default(), build_model::<f32>(&model, 0)?, &signals)?;
        measured.push((workers, r.mean_batch_ms));
    }
    write_bench_csv(std::io::stdout().lock(), &bench_rows(&measured))
}
