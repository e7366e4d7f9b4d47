use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, OnceLock, RwLock};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::model::{GradDelta, ParamBundle, ParamLayout};
use crate::ps::adagrad::{adagrad_update, AdagradState, ServerConfig};
use crate::scalar::Scalar;

/// Called after every shard update with `(shard, shard_version, values)`.
pub type ApplyObserver<T> = Box<dyn Fn(usize, u64, &[T]) + Send + Sync>;

struct ShardData<T> {
    version: u64,
    values: Vec<T>,
    accum: Vec<f64>,
}

struct ServerShard<T> {
    range: Range<usize>,
    data: RwLock<ShardData<T>>,
}

#[derive(Default)]
struct Lifecycle {
    started: bool,
    stopping: bool,
    inflight: usize,
}

/// One accepted push, as seen by the server.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ApplyRecord {
    pub applied_version: u64,
    pub worker_id: u32,
    pub base_version: u64,
    /// Updates from other pushes applied between this push's fetch and its
    /// own application.
    pub staleness: u64,
    pub sample_count: u64,
    pub wall_ms: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PushOutcome {
    pub applied_version: u64,
    pub accepted: bool,
}

/// Holds the authoritative parameters and Adagrad state. Each shard is a
/// contiguous range of the parameter vector updated under its own lock, so
/// a fetch sees every shard either before or after any given update.
pub struct ParameterServer<T> {
    layout: Arc<ParamLayout>,
    cfg: ServerConfig,
    shards: Vec<ServerShard<T>>,
    applied: AtomicU64,
    reserved: AtomicU64,
    rejected: AtomicU64,
    step_budget: Option<u64>,
    warmup_steps: u64,
    warmup_open: Mutex<bool>,
    warmup_cv: Condvar,
    lifecycle: Mutex<Lifecycle>,
    lifecycle_cv: Condvar,
    log: Mutex<Vec<ApplyRecord>>,
    observer: Option<ApplyObserver<T>>,
    clock: OnceLock<Instant>,
}

impl<T: Scalar> ParameterServer<T> {
    pub fn new(initial: ParamBundle<T>, cfg: ServerConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = initial.layout().clone();
        let version = initial.version;
        let values = initial.into_values();
        let shards = layout
            .shard_ranges(cfg.shard_count)
            .into_iter()
            .map(|range| ServerShard {
                data: RwLock::new(ShardData {
                    version,
                    values: values[range.clone()].to_vec(),
                    accum: vec![0.0; range.len()],
                }),
                range,
            })
            .collect();
        Ok(ParameterServer {
            layout,
            cfg,
            shards,
            applied: AtomicU64::new(version),
            reserved: AtomicU64::new(version),
            rejected: AtomicU64::new(0),
            step_budget: None,
            warmup_steps: 0,
            warmup_open: Mutex::new(true),
            warmup_cv: Condvar::new(),
            lifecycle: Mutex::new(Lifecycle::default()),
            lifecycle_cv: Condvar::new(),
            log: Mutex::new(Vec::new()),
            observer: None,
            clock: OnceLock::new(),
        })
    }

    /// Stops accepting pushes once `budget` updates have been applied.
    pub fn with_step_budget(mut self, budget: Option<u64>) -> Self {
        self.step_budget = budget;
        self
    }

    /// Holds fetches from every worker but worker 0 until `steps` updates have
    /// been applied or [`release_warmup`](Self::release_warmup) is called.
    pub fn with_warmup(mut self, steps: u64) -> Self {
        self.warmup_steps = steps;
        *self.warmup_open.get_mut().unwrap() = steps == 0;
        self
    }

    pub fn with_observer(mut self, observer: ApplyObserver<T>) -> Self {
        self.observer = Some(observer);
        self
    }

    pub fn start(&self) {
        let mut lc = self.lifecycle.lock().unwrap();
        lc.started = true;
        let _ = self.clock.set(Instant::now());
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn config(&self) -> &ServerConfig {
        &self.cfg
    }

    pub fn step_budget(&self) -> Option<u64> {
        self.step_budget
    }

    pub fn applied_version(&self) -> u64 {
        self.applied.load(Ordering::SeqCst)
    }

    pub fn rejected_count(&self) -> u64 {
        self.rejected.load(Ordering::SeqCst)
    }

    pub fn budget_exhausted(&self) -> bool {
        self.step_budget
            .is_some_and(|b| self.applied.load(Ordering::SeqCst) >= b)
    }

    pub fn release_warmup(&self) {
        let mut open = self.warmup_open.lock().unwrap();
        if !*open {
            *open = true;
            self.warmup_cv.notify_all();
        }
    }

    fn wait_warmup(&self) {
        let mut open = self.warmup_open.lock().unwrap();
        while !*open {
            open = self.warmup_cv.wait(open).unwrap();
        }
    }

    fn check_started(&self) -> Result<()> {
        let lc = self.lifecycle.lock().unwrap();
        if !lc.started {
            return Err(Error::Lifecycle("parameter server not started".into()));
        }
        Ok(())
    }

    /// Copy of the latest parameters. Workers other than 0 block here while
    /// the warm-up phase is running.
    pub fn fetch(&self, worker_id: u32) -> Result<ParamBundle<T>> {
        self.check_started()?;
        if worker_id != 0 {
            self.wait_warmup();
        }
        Ok(self.snapshot())
    }

    /// Latest parameters, ignoring lifecycle and warm-up. The version is the
    /// lowest shard version.
    pub fn snapshot(&self) -> ParamBundle<T> {
        let mut values = Vec::with_capacity(self.layout.len());
        let mut version = u64::MAX;
        for shard in &self.shards {
            let d = shard.data.read().unwrap();
            version = version.min(d.version);
            values.extend_from_slice(&d.values);
        }
        ParamBundle::from_values(self.layout.clone(), version, values)
            .expect("shards tile the layout")
    }

    pub fn adagrad_state(&self) -> AdagradState {
        let mut accum = Vec::with_capacity(self.layout.len());
        for shard in &self.shards {
            accum.extend_from_slice(&shard.data.read().unwrap().accum);
        }
        AdagradState {
            accum,
            step: self.applied_version(),
        }
    }

    pub fn apply_log(&self) -> Vec<ApplyRecord> {
        self.log.lock().unwrap().clone()
    }

    /// Applies a worker's summed gradient. Non-finite deltas and pushes past
    /// the step budget are counted and acknowledged without being applied.
    pub fn push(&self, worker_id: u32, base_version: u64, delta: &GradDelta<T>) -> Result<PushOutcome> {
        if **delta.layout() != *self.layout {
            return Err(Error::protocol(0, "gradient shape map does not match parameters"));
        }
        self.push_values(worker_id, base_version, delta.values(), delta.sample_count)
    }

    pub(crate) fn push_values(
        &self,
        worker_id: u32,
        base_version: u64,
        grads: &[T],
        sample_count: u64,
    ) -> Result<PushOutcome> {
        if grads.len() != self.layout.len() {
            return Err(Error::protocol(
                0,
                format!("gradient has {} values, layout needs {}", grads.len(), self.layout.len()),
            ));
        }
        {
            let mut lc = self.lifecycle.lock().unwrap();
            if !lc.started {
                return Err(Error::Lifecycle("parameter server not started".into()));
            }
            if lc.stopping {
                return Err(Error::Lifecycle("parameter server is shutting down".into()));
            }
            lc.inflight += 1;
        }
        let outcome = self.apply(worker_id, base_version, grads, sample_count);
        {
            let mut lc = self.lifecycle.lock().unwrap();
            lc.inflight -= 1;
            self.lifecycle_cv.notify_all();
        }
        Ok(outcome)
    }

    fn apply(&self, worker_id: u32, base_version: u64, grads: &[T], sample_count: u64) -> PushOutcome {
        let not_applied = || PushOutcome {
            applied_version: self.applied.load(Ordering::SeqCst),
            accepted: false,
        };
        if !grads.iter().all(|g| g.is_finite()) {
            self.rejected.fetch_add(1, Ordering::SeqCst);
            log::warn!("worker {worker_id}: non-finite gradient rejected");
            return not_applied();
        }
        if let Some(budget) = self.step_budget {
            if self.reserved.fetch_add(1, Ordering::SeqCst) >= budget {
                return not_applied();
            }
        }
        for (i, shard) in self.shards.iter().enumerate() {
            let mut d = shard.data.write().unwrap();
            let ShardData {
                version,
                values,
                accum,
            } = &mut *d;
            adagrad_update(accum, values, &grads[shard.range.clone()], sample_count, &self.cfg);
            *version += 1;
            if let Some(obs) = &self.observer {
                obs(i, *version, values);
            }
        }
        let applied_version = self.applied.fetch_add(1, Ordering::SeqCst) + 1;
        if applied_version >= self.warmup_steps {
            self.release_warmup();
        }
        self.log.lock().unwrap().push(ApplyRecord {
            applied_version,
            worker_id,
            base_version,
            staleness: applied_version.saturating_sub(base_version + 1),
            sample_count,
            wall_ms: self.clock.get().map_or(0, |c| c.elapsed().as_millis() as u64),
        });
        PushOutcome {
            applied_version,
            accepted: true,
        }
    }

    /// Refuses new pushes, waits for in-flight ones to finish and returns
    /// the final parameters.
    pub fn shutdown(&self) -> ParamBundle<T> {
        let mut lc = self.lifecycle.lock().unwrap();
        lc.stopping = true;
        while lc.inflight > 0 {
            lc = self.lifecycle_cv.wait(lc).unwrap();
        }
        drop(lc);
        self.release_warmup();
        self.snapshot()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelConfig};

    fn server(shards: usize) -> ParameterServer<f64> {
        let p = build_model::<f64>(&ModelConfig::tiny(8, 2, 1, 3), 1).unwrap();
        ParameterServer::new(
            p,
            ServerConfig {
                shard_count: shards,
                ..Default::default()
            },
        )
        .unwrap()
    }

    fn delta(s: &ParameterServer<f64>, g: f64) -> GradDelta<f64> {
        GradDelta::from_values(s.layout().clone(), vec![g; s.layout().len()], 1).unwrap()
    }

    #[test]
    fn fetch_before_start_is_a_lifecycle_error() {
        let s = server(1);
        assert!(matches!(s.fetch(0), Err(Error::Lifecycle(_))));
        s.start();
        let p = s.fetch(0).unwrap();
        assert_eq!(p.version, 0);
        assert_eq!(p, build_model::<f64>(&ModelConfig::tiny(8, 2, 1, 3), 1).unwrap());
    }

    #[test]
    fn versions_count_applied_deltas() {
        let s = server(3);
        s.start();
        for i in 1..=4 {
            let out = s.push(0, i - 1, &delta(&s, 0.1)).unwrap();
            assert!(out.accepted);
            assert_eq!(out.applied_version, i);
        }
        assert_eq!(s.fetch(0).unwrap().version, 4);
        assert!(s.apply_log().iter().all(|r| r.staleness == 0));
    }

    #[test]
    fn non_finite_push_is_counted_not_applied() {
        let s = server(1);
        s.start();
        let before = s.snapshot();
        let out = s.push(0, 0, &delta(&s, f64::INFINITY)).unwrap();
        assert!(!out.accepted);
        assert_eq!(s.rejected_count(), 1);
        assert_eq!(s.snapshot(), before);
    }

    #[test]
    fn budget_caps_applied_updates() {
        let s = server(1).with_step_budget(Some(2));
        s.start();
        let outs: Vec<_> = (0..4).map(|_| s.push(0, 0, &delta(&s, 0.1)).unwrap()).collect();
        assert_eq!(outs.iter().filter(|o| o.accepted).count(), 2);
        assert!(s.budget_exhausted());
        assert_eq!(s.snapshot().version, 2);
    }

    #[test]
    fn shutdown_refuses_new_pushes() {
        let s = server(2);
        s.start();
        s.push(0, 0, &delta(&s, 0.1)).unwrap();
        let fin = s.shutdown();
        assert_eq!(fin.version, 1);
        assert!(matches!(s.push(0, 1, &delta(&s, 0.1)), Err(Error::Lifecycle(_))));
    }

    #[test]
    fn warmup_gate_opens_after_steps() {
        let s = Arc::new(server(1).with_warmup(2));
        s.start();
        let waiter = {
            let s = s.clone();
            std::thread::spawn(move || s.fetch(1).unwrap().version)
        };
        s.push(0, 0, &delta(&s, 0.1)).unwrap();
        s.push(0, 1, &delta(&s, 0.1)).unwrap();
        assert!(waiter.join().unwrap() >= 2);
    }
}
