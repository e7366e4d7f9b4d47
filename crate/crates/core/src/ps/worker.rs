use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::datagen::{partition, SignalBatch};
use crate::error::{Error, Result};
use crate::model::{batch_gradient, GradDelta, ParamBundle};
use crate::ps::transport::Transport;
use crate::scalar::Scalar;

/// What every worker of a run agrees on. Fetch and push happen once per
/// batch.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkerPlan {
    pub worker_count: usize,
    pub epochs: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub step_budget: Option<u64>,
    pub max_retries: u32,
    pub retry_backoff: Duration,
}

impl WorkerPlan {
    pub fn validate(&self) -> Result<()> {
        if self.worker_count == 0 {
            return Err(Error::config("worker_count must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub worker_id: u32,
    pub epoch: u64,
    /// Mean per-example loss of the batch at the fetched parameters.
    pub local_loss: f64,
    pub base_version: u64,
    pub applied_version: u64,
    pub staleness: u64,
    pub samples: u64,
    pub compute_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WorkerSummary {
    pub steps: u64,
    pub samples: u64,
}

fn with_retries<R>(plan: &WorkerPlan, mut f: impl FnMut() -> Result<R>) -> Result<R> {
    let mut attempt = 0;
    loop {
        match f() {
            Ok(r) => return Ok(r),
            Err(e @ (Error::Transport(_) | Error::Io(_))) if attempt < plan.max_retries => {
                attempt += 1;
                log::warn!("transport error (attempt {attempt}): {e}");
                std::thread::sleep(plan.retry_backoff * attempt);
            }
            Err(e) => return Err(e),
        }
    }
}

/// Runs one worker to completion: for each epoch, walk this worker's shard
/// in batches; per batch fetch a snapshot, compute the summed gradient and
/// push it. Stops early once the server reports the step budget spent.
pub fn run_worker<T, X>(
    worker_id: u32,
    transport: &mut X,
    dataset: &SignalBatch<T>,
    plan: &WorkerPlan,
    on_step: &mut dyn FnMut(StepReport),
) -> Result<WorkerSummary>
where
    T: Scalar,
    X: Transport<T> + ?Sized,
{
    plan.validate()?;
    let w = worker_id as usize;
    if w >= plan.worker_count {
        return Err(Error::config(format!(
            "worker {worker_id} outside a run of {} workers",
            plan.worker_count
        )));
    }
    let mut summary = WorkerSummary::default();
    let mut rows: Vec<&[T]> = Vec::with_capacity(plan.batch_size);
    for epoch in 0..plan.epochs {
        let shards = partition(dataset.len(), plan.worker_count, epoch, plan.seed)?;
        for chunk in shards[w].indices.chunks(plan.batch_size) {
            rows.clear();
            rows.extend(chunk.iter().map(|&i| dataset.row(i)));
            let params: ParamBundle<T> = with_retries(plan, || transport.fetch(worker_id))?;
            let t0 = Instant::now();
            let (delta, losses): (GradDelta<T>, _) = batch_gradient(&params, &rows)?;
            let compute_ms = t0.elapsed().as_secs_f64() * 1e3;
            let applied = with_retries(plan, || transport.push(worker_id, params.version, &delta))?;
            summary.steps += 1;
            summary.samples += chunk.len() as u64;
            on_step(StepReport {
                worker_id,
                epoch,
                local_loss: losses.iter().map(|l| l.total).sum::<f64>() / losses.len() as f64,
                base_version: params.version,
                applied_version: applied,
                staleness: applied.saturating_sub(params.version + 1),
                samples: chunk.len() as u64,
                compute_ms,
            });
            if plan.step_budget.is_some_and(|b| applied >= b) {
                return Ok(summary);
            }
        }
    }
    Ok(summary)
}
