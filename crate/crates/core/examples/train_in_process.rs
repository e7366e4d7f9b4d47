//! Asynchronous training with worker threads against an in-process
//! parameter server, on a reduced model so it finishes in seconds.
//!
//! cargo run --release --example train_in_process -- [workers] [epochs]

use dist_dca::datagen::{generate_dataset, normalize_batch, SyntheticConfig, TaskDesign};
use dist_dca::model::{build_model, ModelConfig};
use dist_dca::ps::{run_training, ServerConfig, TrainRunConfig};

fn main() -> dist_dca::Result<()> {
    let mut args = std::env::args().skip(1);
    let workers: usize = args.next().map_or(2, |s| s.parse().expect("workers"));
    let epochs: u64 = args.next().map_or(3, |s| s.parse().expect("epochs"));

    let data = generate_dataset(
        &TaskDesign::motor(),
        &SyntheticConfig {
            n_signals: 400,
            ..SyntheticConfig::default()
        },
    )?;
    let signals = normalize_batch(&data.signals).signals.cast::<f32>();

    let model = ModelConfig::tiny(284, 8, 2, 9);
    let initial = build_model::<f32>(&model, 1)?;
    let run = TrainRunConfig {
        worker_count: workers,
        epochs,
        warmup_steps: 10,
        batch_size: 16,
        ..TrainRunConfig::default()
    };
    let report = run_training(&run, &ServerConfig::default(), initial, &signals)?;

    for (epoch, loss) in report.epoch_mean_loss() {
        println!("epoch {epoch}: mean batch loss {loss:.2}");
    }
    println!(
        "{} updates in {:.0} ms ({:.2} ms per batch), max staleness {}",
        report.applied.len(),
        report.total_wall_ms,
        report.mean_batch_ms,
        report.max_staleness()
    );
    for (s, n) in &report.staleness_histogram {
        println!("  staleness {s}: {n} updates");
    }
    Ok(())
}
