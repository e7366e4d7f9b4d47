//! Parameter server: sequential equivalence, the Adagrad rate law,
//! concurrent consistency, lifecycle and liveness.

use std::collections::HashMap;
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use dist_dca::datagen::{partition, SignalBatch};
use dist_dca::model::{batch_gradient, build_model, GradDelta, ModelConfig, ParamBundle};
use dist_dca::ps::{
    run_training, run_training_observed, ApplyObserver, ParameterServer, ServerConfig, TrainRunConfig,
};
use dist_dca::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn signals(n: usize, t: usize, seed: u64) -> SignalBatch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SignalBatch::new(t, (0..n * t).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

fn random_delta(p: &ParamBundle<f64>, rng: &mut ChaCha8Rng, count: u64) -> GradDelta<f64> {
    let v = (0..p.values().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    GradDelta::from_values(p.layout().clone(), v, count).unwrap()
}

/// Plain single-threaded Adagrad-SGD over the same batch order a single
/// worker uses. Returns the parameters after every update.
fn sequential_oracle(
    initial: &ParamBundle<f64>,
    data: &SignalBatch<f64>,
    run: &TrainRunConfig,
    cfg: &ServerConfig,
) -> Vec<Vec<f64>> {
    let mut p = initial.clone();
    let mut accum = vec![0.0f64; p.values().len()];
    let mut trajectory = Vec::new();
    for epoch in 0..run.epochs {
        let order = &partition(data.len(), 1, epoch, run.seed).unwrap()[0].indices;
        for chunk in order.chunks(run.batch_size) {
            let rows: Vec<&[f64]> = chunk.iter().map(|&i| data.row(i)).collect();
            let (sum, _) = batch_gradient(&p, &rows).unwrap();
            let n = chunk.len() as f64;
            for ((w, a), g) in p.values_mut().iter_mut().zip(&mut accum).zip(sum.values()) {
                let g = g / n;
                *a += g * g;
                *w -= cfg.gamma / (a.sqrt() + cfg.epsilon) * g;
            }
            trajectory.push(p.values().to_vec());
        }
    }
    trajectory
}

#[test]
fn one_worker_follows_the_sequential_trajectory_bit_for_bit() {
    let cfg = ModelConfig::tiny(16, 3, 2, 3);
    let initial = build_model::<f64>(&cfg, 4).unwrap();
    let data = signals(96, 16, 1);
    let run = TrainRunConfig {
        epochs: 21,
        batch_size: 4,
        seed: 6,
        ..TrainRunConfig::default()
    };
    let server_cfg = ServerConfig::default();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let sink = seen.clone();
    let observer: ApplyObserver<f64> = Box::new(move |_, _, v: &[f64]| sink.lock().unwrap().push(v.to_vec()));
    let report = run_training_observed(&run, &server_cfg, initial.clone(), &data, Some(observer)).unwrap();
    let oracle = sequential_oracle(&initial, &data, &run, &server_cfg);
    let seen = seen.lock().unwrap();
    assert!(oracle.len() >= 500, "{} steps", oracle.len());
    assert_eq!(seen.len(), oracle.len());
    for (step, (a, b)) in seen.iter().zip(&oracle).enumerate() {
        assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()), "diverged at step {}", step + 1);
    }
    assert_eq!(report.final_params.values(), oracle.last().unwrap().as_slice());
    assert_eq!(report.max_staleness(), 0);
}

#[test]
fn effective_rates_never_increase() {
    let cfg = ModelConfig::tiny(8, 2, 2, 3);
    let p = build_model::<f64>(&cfg, 1).unwrap();
    let sc = ServerConfig {
        shard_count: 3,
        ..ServerConfig::default()
    };
    let server = ParameterServer::new(p.clone(), sc.clone()).unwrap();
    server.start();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut prev: Vec<f64> = (0..p.values().len()).map(|i| server.adagrad_state().rate(i, &sc)).collect();
    for _ in 0..200 {
        let mut d = random_delta(&p, &mut rng, 3);
        // Some entries stay at zero so their rate must stay put.
        for v in d.values_mut().iter_mut().step_by(7) {
            *v = 0.0;
        }
        server.push(0, server.applied_version(), &d).unwrap();
        let st = server.adagrad_state();
        for (i, r0) in prev.iter_mut().enumerate() {
            let r = st.rate(i, &sc);
            assert!(r <= *r0, "rate of {i} rose from {r0} to {r}");
            *r0 = r;
        }
    }
}

#[test]
fn first_update_moves_each_parameter_by_gamma() {
    let cfg = ModelConfig::tiny(8, 2, 2, 3);
    let p = build_model::<f64>(&cfg, 1).unwrap();
    let sc = ServerConfig::default();
    let server = ParameterServer::new(p.clone(), sc.clone()).unwrap();
    server.start();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let d = random_delta(&p, &mut rng, 5);
    server.push(0, 0, &d).unwrap();
    let after = server.snapshot();
    for ((a, b), g) in after.values().iter().zip(p.values()).zip(d.values()) {
        let g = g / 5.0;
        let step = (b - a).abs();
        // γ|g|/(|g|+ε) is γ up to the ε term.
        let expect = sc.gamma * g.abs() / (g.abs() + sc.epsilon);
        assert!((step - expect).abs() <= 1e-15, "{step} vs {expect}");
        assert!((step - sc.gamma).abs() <= sc.gamma * sc.epsilon / g.abs() + 1e-15);
    }
}

#[test]
fn concurrent_fetches_see_whole_shard_versions() {
    let cfg = ModelConfig::tiny(16, 3, 2, 3);
    let p = build_model::<f64>(&cfg, 3).unwrap();
    let shard_count = 4;
    let checksum = |v: &[f64]| v.iter().fold(0u64, |h, x| h.rotate_left(5) ^ x.to_bits());
    let seen: Arc<Mutex<HashMap<(u64, u64), u64>>> = Arc::default();
    let sink = seen.clone();
    let server = Arc::new(
        ParameterServer::new(
            p.clone(),
            ServerConfig {
                shard_count,
                ..ServerConfig::default()
            },
        )
        .unwrap()
        .with_observer(Box::new(move |shard, version, v: &[f64]| {
            sink.lock().unwrap().insert((checksum(v), shard as u64), version);
        })),
    );
    server.start();
    let ranges = p.layout().shard_ranges(shard_count);
    let pushes = 300;
    let snapshots = std::thread::scope(|s| {
        let pusher = {
            let server = server.clone();
            let p = p.clone();
            s.spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(1);
                for _ in 0..pushes {
                    let d = random_delta(&p, &mut rng, 1);
                    server.push(0, server.applied_version(), &d).unwrap();
                }
            })
        };
        let readers: Vec<_> = (0..3)
            .map(|r| {
                let server = server.clone();
                s.spawn(move || (0..400).map(|_| server.fetch(r).unwrap()).collect::<Vec<_>>())
            })
            .collect();
        pusher.join().unwrap();
        readers.into_iter().flat_map(|h| h.join().unwrap()).collect::<Vec<_>>()
    });
    let seen = seen.lock().unwrap();
    let initial: Vec<u64> = ranges.iter().map(|r| checksum(&p.values()[r.clone()])).collect();
    for snap in &snapshots {
        let versions: Vec<u64> = ranges
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let c = checksum(&snap.values()[r.clone()]);
                if c == initial[i] {
                    0
                } else {
                    *seen.get(&(c, i as u64)).expect("shard contents match some applied version")
                }
            })
            .collect();
        let lo = *versions.iter().min().unwrap();
        assert_eq!(snap.version, lo);
        // One pusher: a fetch overlaps at most one update.
        assert!(versions.iter().all(|&v| v == lo || v == lo + 1), "{versions:?}");
    }
    assert_eq!(server.applied_version(), pushes);
}

#[test]
fn many_pushers_apply_every_update_once() {
    let cfg = ModelConfig::tiny(8, 2, 2, 3);
    let p = build_model::<f64>(&cfg, 3).unwrap();
    let server = Arc::new(
        ParameterServer::new(
            p.clone(),
            ServerConfig {
                shard_count: 3,
                ..ServerConfig::default()
            },
        )
        .unwrap(),
    );
    server.start();
    std::thread::scope(|s| {
        for w in 0..6u32 {
            let (server, p) = (server.clone(), p.clone());
            s.spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(w as u64);
                for _ in 0..50 {
                    let base = server.fetch(w).unwrap().version;
                    server.push(w, base, &random_delta(&p, &mut rng, 2)).unwrap();
                }
            });
        }
    });
    let mut versions: Vec<u64> = server.apply_log().iter().map(|r| r.applied_version).collect();
    versions.sort_unstable();
    assert_eq!(versions, (1..=300).collect::<Vec<_>>());
    for r in server.apply_log() {
        assert_eq!(r.staleness, r.applied_version - r.base_version - 1);
    }
}

#[test]
fn accumulator_does_not_depend_on_push_order() {
    let cfg = ModelConfig::tiny(8, 2, 2, 3);
    let p = build_model::<f64>(&cfg, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let deltas: Vec<_> = (0..20).map(|_| random_delta(&p, &mut rng, 4)).collect();
    let run = |order: &[usize]| {
        let s = ParameterServer::new(p.clone(), ServerConfig::default()).unwrap();
        s.start();
        for &i in order {
            s.push(0, s.applied_version(), &deltas[i]).unwrap();
        }
        s.adagrad_state().accum
    };
    let forward: Vec<usize> = (0..20).collect();
    let backward: Vec<usize> = (0..20).rev().collect();
    for (a, b) in run(&forward).iter().zip(run(&backward)) {
        assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }
}

#[test]
fn non_finite_pushes_are_rejected_without_effect() {
    let cfg = ModelConfig::tiny(8, 2, 2, 3);
    let p = build_model::<f64>(&cfg, 5).unwrap();
    let s = ParameterServer::new(p.clone(), ServerConfig::default()).unwrap();
    s.start();
    let mut d = GradDelta::zeros(p.layout().clone());
    d.values_mut()[3] = f64::NAN;
    d.sample_count = 1;
    let out = s.push(0, 0, &d).unwrap();
    assert!(!out.accepted);
    assert_eq!((s.applied_version(), s.rejected_count()), (0, 1));
    assert_eq!(s.snapshot(), p);
    assert!(s.adagrad_state().accum.iter().all(|&a| a == 0.0));
}

#[test]
fn lifecycle_is_enforced() {
    let cfg = ModelConfig::tiny(8, 2, 2, 3);
    let p = build_model::<f64>(&cfg, 5).unwrap();
    let s = ParameterServer::new(p.clone(), ServerConfig::default()).unwrap();
    let d = GradDelta::zeros(p.layout().clone());
    assert!(matches!(s.fetch(0), Err(Error::Lifecycle(_))));
    assert!(matches!(s.push(0, 0, &d), Err(Error::Lifecycle(_))));
    s.start();
    s.push(0, 0, &d).unwrap();
    let last = s.shutdown();
    assert_eq!(last.version, 1);
    assert!(matches!(s.push(0, 1, &d), Err(Error::Lifecycle(_))));
}

#[test]
fn warmup_holds_other_workers_until_worker_zero_has_pushed() {
    let cfg = ModelConfig::tiny(8, 2, 2, 3);
    let p = build_model::<f64>(&cfg, 5).unwrap();
    let s = Arc::new(ParameterServer::new(p.clone(), ServerConfig::default()).unwrap().with_warmup(3));
    s.start();
    let (tx, rx) = mpsc::channel();
    let waiter = {
        let s = s.clone();
        std::thread::spawn(move || tx.send(s.fetch(1).unwrap().version).unwrap())
    };
    let d = GradDelta::from_values(p.layout().clone(), vec![0.1; p.values().len()], 1).unwrap();
    for v in 0..3 {
        assert!(rx.recv_timeout(Duration::from_millis(50)).is_err(), "released after {v} updates");
        s.push(0, v, &d).unwrap();
    }
    assert_eq!(rx.recv_timeout(Duration::from_secs(5)).unwrap(), 3);
    waiter.join().unwrap();
}

#[test]
fn training_finishes_for_every_worker_count() {
    let cfg = ModelConfig::tiny(8, 2, 2, 3);
    let data = signals(40, 8, 3);
    for workers in 1..=8 {
        let (tx, rx) = mpsc::channel();
        let (cfg, data) = (cfg.clone(), data.clone());
        std::thread::spawn(move || {
            let run = TrainRunConfig {
                worker_count: workers,
                epochs: 3,
                warmup_steps: 5,
                batch_size: 3,
                ..TrainRunConfig::default()
            };
            let p = build_model::<f64>(&cfg, 0).unwrap();
            let _ = tx.send(run_training(&run, &ServerConfig::default(), p, &data).map(|r| r.applied.len()));
        });
        let applied = rx
            .recv_timeout(Duration::from_secs(60))
            .unwrap_or_else(|_| panic!("{workers} workers did not finish"))
            .unwrap();
        let per_worker: usize = (0..workers).map(|w| 40 / workers + usize::from(w < 40 % workers)).map(|n| n.div_ceil(3)).sum();
        assert_eq!(applied, 3 * per_worker, "{workers} workers");
    }
}
