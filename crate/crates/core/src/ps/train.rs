use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::net::TcpListener;
use std::path::Path;
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::datagen::SignalBatch;
use crate::error::{Error, Result};
use crate::model::ParamBundle;
use crate::ps::adagrad::ServerConfig;
use crate::ps::server::{ApplyObserver, ApplyRecord, ParameterServer};
use crate::ps::transport::{InProcess, SocketServer, SocketTransport, Transport};
use crate::ps::worker::{run_worker, StepReport, WorkerPlan};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    #[default]
    InProcess,
    Socket,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub worker_count: usize,
    pub epochs: u64,
    /// Updates worker 0 applies alone before the others may fetch.
    pub warmup_steps: u64,
    pub seed: u64,
    pub transport: TransportKind,
    pub batch_size: usize,
    /// Total number of updates the server accepts; unlimited when absent.
    pub step_budget: Option<u64>,
    pub max_retries: u32,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            worker_count: 1,
            epochs: 20,
            warmup_steps: 200,
            seed: 0,
            transport: TransportKind::InProcess,
            batch_size: 32,
            step_budget: None,
            max_retries: 3,
        }
    }
}

impl TrainRunConfig {
    pub fn worker_plan(&self) -> WorkerPlan {
        WorkerPlan {
            worker_count: self.worker_count,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            step_budget: self.step_budget,
            max_retries: self.max_retries,
            retry_backoff: Duration::from_millis(50),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossPoint {
    pub step: u64,
    pub samples_seen: u64,
    pub wall_ms: u64,
    pub loss: f64,
    pub epoch: u64,
    pub worker_id: u32,
}

#[derive(Clone, Debug)]
pub struct TrainReport<T> {
    pub worker_count: usize,
    /// One point per applied update, in application order.
    pub loss_curve: Vec<LossPoint>,
    pub applied: Vec<ApplyRecord>,
    pub staleness_histogram: BTreeMap<u64, u64>,
    pub total_wall_ms: f64,
    /// Wall time divided by applied updates.
    pub mean_batch_ms: f64,
    pub rejected: u64,
    pub aborted: Vec<(u32, String)>,
    pub final_params: ParamBundle<T>,
}

impl<T: Scalar> TrainReport<T> {
    pub fn max_staleness(&self) -> u64 {
        self.applied.iter().map(|r| r.staleness).max().unwrap_or(0)
    }

    /// Mean loss of the updates tagged with each epoch.
    pub fn epoch_mean_loss(&self) -> Vec<(u64, f64)> {
        let mut acc: BTreeMap<u64, (f64, u64)> = BTreeMap::new();
        for p in &self.loss_curve {
            let e = acc.entry(p.epoch).or_default();
            e.0 += p.loss;
            e.1 += 1;
        }
        acc.into_iter().map(|(e, (s, n))| (e, s / n as f64)).collect()
    }

    /// Mean loss over the last `n` applied updates.
    pub fn tail_loss(&self, n: usize) -> f64 {
        let tail = &self.loss_curve[self.loss_curve.len().saturating_sub(n)..];
        tail.iter().map(|p| p.loss).sum::<f64>() / tail.len().max(1) as f64
    }

    pub fn diverged(&self) -> bool {
        self.rejected > 0
            || !self.final_params.is_finite()
            || self.loss_curve.iter().any(|p| !p.loss.is_finite())
    }

    pub fn write_csvs(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("loss.csv"))?;
        w.write_record(["step", "samples_seen", "wall_ms", "loss"])?;
        for p in &self.loss_curve {
            w.write_record([
                p.step.to_string(),
                p.samples_seen.to_string(),
                p.wall_ms.to_string(),
                p.loss.to_string(),
            ])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("staleness.csv"))?;
        w.write_record(["step", "staleness"])?;
        for r in &self.applied {
            w.write_record([r.applied_version.to_string(), r.staleness.to_string()])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("throughput.csv"))?;
        w.write_record(["worker_count", "mean_batch_ms"])?;
        w.write_record([self.worker_count.to_string(), self.mean_batch_ms.to_string()])?;
        w.flush()?;
        Ok(())
    }
}

/// Builds the parameter server a run uses.
pub fn build_server<T: Scalar>(
    run: &TrainRunConfig,
    server_cfg: &ServerConfig,
    initial: ParamBundle<T>,
    observer: Option<ApplyObserver<T>>,
) -> Result<ParameterServer<T>> {
    let mut server = ParameterServer::new(initial, server_cfg.clone())?
        .with_step_budget(run.step_budget)
        .with_warmup(if run.worker_count > 1 { run.warmup_steps } else { 0 });
    if let Some(obs) = observer {
        server = server.with_observer(obs);
    }
    Ok(server)
}

/// Joins worker step reports with the server's apply log into a report.
/// Shuts the server down.
pub fn assemble_report<T: Scalar>(
    run: &TrainRunConfig,
    server: &ParameterServer<T>,
    steps: Vec<StepReport>,
    aborted: Vec<(u32, String)>,
    wall: Duration,
) -> TrainReport<T> {
    let final_params = server.shutdown();
    let applied = server.apply_log();
    let by_key: HashMap<(u32, u64, u64), &StepReport> = steps
        .iter()
        .map(|s| ((s.worker_id, s.base_version, s.applied_version), s))
        .collect();
    let mut samples_seen = 0;
    let mut loss_curve = Vec::with_capacity(applied.len());
    let mut staleness_histogram = BTreeMap::new();
    for r in &applied {
        samples_seen += r.sample_count;
        *staleness_histogram.entry(r.staleness).or_insert(0) += 1;
        if let Some(s) = by_key.get(&(r.worker_id, r.base_version, r.applied_version)) {
            loss_curve.push(LossPoint {
                step: r.applied_version,
                samples_seen,
                wall_ms: r.wall_ms,
                loss: s.local_loss,
                epoch: s.epoch,
                worker_id: r.worker_id,
            });
        }
    }
    let total_wall_ms = wall.as_secs_f64() * 1e3;
    TrainReport {
        worker_count: run.worker_count,
        mean_batch_ms: total_wall_ms / applied.len().max(1) as f64,
        total_wall_ms,
        loss_curve,
        staleness_histogram,
        rejected: server.rejected_count(),
        aborted,
        final_params,
        applied,
    }
}

pub fn run_training<T: Scalar>(
    run: &TrainRunConfig,
    server_cfg: &ServerConfig,
    initial: ParamBundle<T>,
    dataset: &SignalBatch<T>,
) -> Result<TrainReport<T>> {
    run_training_observed(run, server_cfg, initial, dataset, None)
}

/// Trains with worker threads against one parameter server, over either
/// transport. Worker 0 starts alone; the others block on their first fetch
/// until the warm-up updates are in or worker 0 is done.
pub fn run_training_observed<T: Scalar>(
    run: &TrainRunConfig,
    server_cfg: &ServerConfig,
    initial: ParamBundle<T>,
    dataset: &SignalBatch<T>,
    observer: Option<ApplyObserver<T>>,
) -> Result<TrainReport<T>> {
    if dataset.is_empty() {
        return Err(Error::config("cannot train on an empty dataset"));
    }
    if dataset.length() != initial.config().input_length {
        return Err(Error::config(format!(
            "signals have length {}, model expects {}",
            dataset.length(),
            initial.config().input_length
        )));
    }
    let plan = run.worker_plan();
    plan.validate()?;
    crate::datagen::partition(dataset.len(), run.worker_count, 0, run.seed)?;

    let layout = initial.layout().clone();
    let server = Arc::new(build_server(run, server_cfg, initial, observer)?);
    let socket = match run.transport {
        TransportKind::InProcess => None,
        TransportKind::Socket => {
            let listener = TcpListener::bind("127.0.0.1:0")?;
            Some(SocketServer::spawn(server.clone(), listener)?)
        }
    };
    server.start();
    let t0 = Instant::now();
    let (tx, rx) = mpsc::channel();
    let mut aborted = Vec::new();
    std::thread::scope(|s| -> Result<()> {
        let mut handles = Vec::new();
        for w in 0..run.worker_count as u32 {
            let mut transport: Box<dyn Transport<T>> = match &socket {
                None => Box::new(InProcess::new(server.clone())),
                Some(sock) => Box::new(SocketTransport::new(sock.local_addr(), layout.clone())?),
            };
            let tx = tx.clone();
            let server = server.clone();
            let plan = &plan;
            handles.push((
                w,
                s.spawn(move || {
                    let mut send = |r: StepReport| {
                        let _ = tx.send(r);
                    };
                    let out = run_worker(w, &mut transport, dataset, plan, &mut send);
                    drop(transport);
                    if w == 0 {
                        server.release_warmup();
                    }
                    out
                }),
            ));
        }
        for (w, h) in handles {
            match h.join() {
                Ok(Ok(_)) => {}
                Ok(Err(e)) => {
                    log::error!("worker {w} aborted: {e}");
                    aborted.push((w, e.to_string()));
                }
                Err(_) => aborted.push((w, "worker panicked".into())),
            }
        }
        Ok(())
    })?;
    drop(tx);
    let wall = t0.elapsed();
    if let Some(sock) = socket {
        sock.stop();
    }
    let steps: Vec<StepReport> = rx.into_iter().collect();
    if aborted.len() == run.worker_count {
        let (w, e) = &aborted[0];
        return Err(Error::Transport(format!("every worker aborted; worker {w}: {e}")));
    }
    Ok(assemble_report(run, &server, steps, aborted, wall))
}

/// One line of `bench.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub worker_count: usize,
    pub mean_batch_ms: f64,
    pub speedup_vs_1: f64,
}

/// Speedups relative to the one-worker row (or the first row if absent).
pub fn bench_rows(measured: &[(usize, f64)]) -> Vec<BenchRow> {
    let base = measured
        .iter()
        .find(|(w, _)| *w == 1)
        .or(measured.first())
        .map_or(f64::NAN, |&(_, ms)| ms);
    measured
        .iter()
        .map(|&(worker_count, mean_batch_ms)| BenchRow {
            worker_count,
            mean_batch_ms,
            speedup_vs_1: base / mean_batch_ms,
        })
        .collect()
}

pub fn write_bench_csv<W: Write>(out: W, rows: &[BenchRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["worker_count", "mean_batch_ms", "speedup_vs_1"])?;
    for r in rows {
        w.write_record([
            r.worker_count.to_string(),
            r.mean_batch_ms.to_string(),
            r.speedup_vs_1.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(n: usize, t: usize) -> SignalBatch<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = (0..n * t).map(|_| rng.random_range(-1.0..1.0)).collect();
        SignalBatch::new(t, v).unwrap()
    }

    fn run(workers: usize, transport: TransportKind) -> TrainRunConfig {
        TrainRunConfig {
            worker_count: workers,
            epochs: 2,
            warmup_steps: 3,
            seed: 1,
            transport,
            batch_size: 4,
            ..Default::default()
        }
    }

    #[test]
    fn single_worker_has_no_staleness() {
        let cfg = ModelConfig::tiny(8, 2, 2, 3);
        let p = build_model::<f64>(&cfg, 2).unwrap();
        let r = run_training(&run(1, TransportKind::InProcess), &ServerConfig::default(), p, &data(20, 8)).unwrap();
        assert_eq!(r.applied.len(), 10);
        assert_eq!(r.loss_curve.len(), 10);
        assert_eq!(r.max_staleness(), 0);
        assert_eq!(r.final_params.version, 10);
        assert_eq!(r.loss_curve.last().unwrap().samples_seen, 40);
    }

    #[test]
    fn socket_and_in_process_agree_for_one_worker() {
        let cfg = ModelConfig::tiny(8, 2, 2, 3);
        let p = build_model::<f64>(&cfg, 2).unwrap();
        let d = data(12, 8);
        let a = run_training(&run(1, TransportKind::InProcess), &ServerConfig::default(), p.clone(), &d).unwrap();
        let b = run_training(&run(1, TransportKind::Socket), &ServerConfig::default(), p, &d).unwrap();
        assert_eq!(a.final_params, b.final_params);
    }

    #[test]
    fn several_workers_finish_every_sample() {
        let cfg = ModelConfig::tiny(8, 2, 2, 3);
        let p = build_model::<f32>(&cfg, 2).unwrap();
        let d = data(30, 8).cast::<f32>();
        for t in [TransportKind::InProcess, TransportKind::Socket] {
            let r = run_training(&run(3, t), &ServerConfig::default(), p.clone(), &d).unwrap();
            assert!(r.aborted.is_empty());
            assert_eq!(r.loss_curve.last().unwrap().samples_seen, 60);
            assert_eq!(r.staleness_histogram.values().sum::<u64>(), r.applied.len() as u64);
        }
    }

    #[test]
    fn budget_caps_applied_steps() {
        let cfg = ModelConfig::tiny(8, 2, 2, 3);
        let p = build_model::<f64>(&cfg, 2).unwrap();
        let mut rc = run(2, TransportKind::InProcess);
        rc.step_budget = Some(5);
        rc.epochs = 10;
        let r = run_training(&rc, &ServerConfig::default(), p, &data(20, 8)).unwrap();
        assert_eq!(r.applied.len(), 5);
    }

    #[test]
    fn empty_dataset_is_a_config_error() {
        let cfg = ModelConfig::tiny(8, 2, 2, 3);
        let p = build_model::<f64>(&cfg, 2).unwrap();
        let e = run_training(&run(1, TransportKind::InProcess), &ServerConfig::default(), p, &SignalBatch::empty(8));
        assert!(matches!(e, Err(Error::Config(_))));
    }

    #[test]
    fn bench_speedup_of_one_worker_is_one() {
        let rows = bench_rows(&[(1, 4.0), (2, 2.5)]);
        assert_eq!(rows[0].speedup_vs_1, 1.0);
        assert_eq!(rows[1].speedup_vs_1, 1.6);
    }
}
