//! Parameter server behind a TCP listener, with workers speaking the binary
//! protocol from their own threads.

use std::net::TcpListener;
use std::sync::Arc;

use dist_dca::datagen::{generate_dataset, normalize_batch, SyntheticConfig, TaskDesign};
use dist_dca::model::{build_model, ModelConfig};
use dist_dca::ps::{run_worker, ParameterServer, ServerConfig, SocketServer, SocketTransport, WorkerPlan};

fn main() -> dist_dca::Result<()> {
    let data = generate_dataset(
        &TaskDesign::motor(),
        &SyntheticConfig {
            n_signals: 120,
            seed: 4,
            ..SyntheticConfig::default()
        },
    )?;
    let signals = normalize_batch(&data.signals).signals;

    let initial = build_model::<f64>(&ModelConfig::tiny(284, 4, 2, 9), 2)?;
    let server = Arc::new(ParameterServer::new(initial, ServerConfig::default())?);
    server.start();
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let endpoint = SocketServer::spawn(server.clone(), listener)?;
    let addr = endpoint.local_addr();
    println!("parameter server listening on {addr}");

    let plan = WorkerPlan {
        worker_count: 3,
        epochs: 2,
        batch_size: 10,
        seed: 0,
        step_budget: None,
        max_retries: 2,
        retry_backoff: std::time::Duration::from_millis(20),
    };
    std::thread::scope(|s| -> dist_dca::Result<()> {
        let mut handles = Vec::new();
        for id in 0..plan.worker_count as u32 {
            let (plan, signals, layout) = (&plan, &signals, server.layout().clone());
            handles.push(s.spawn(move || -> dist_dca::Result<()> {
                let mut t = SocketTransport::new(addr, layout)?;
                let mut last = 0.0;
                let summary = run_worker(id, &mut t, signals, plan, &mut |r| last = r.local_loss)?;
                println!("worker {id}: {} pushes, last batch loss {last:.2}", summary.steps);
                Ok(())
            }));
        }
        handles.into_iter().try_for_each(|h| h.join().expect("worker thread panicked"))
    })?;

    endpoint.stop();
    let final_params = server.shutdown();
    let log = server.apply_log();
    let max_stale = log.iter().map(|r| r.staleness).max().unwrap_or(0);
    println!("server applied {} updates (version {}), max staleness {max_stale}", log.len(), final_params.version);
    Ok(())
}
