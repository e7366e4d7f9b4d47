use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::Instant;

use crate::cli::config::RunConfig;
use crate::datagen::{
    design_regressors, generate_dataset, normalize_batch, read_dataset, write_dataset, DatasetHeader,
    SignalBatch,
};
use crate::error::{Error, Result};
use crate::model::{build_model, export_first_layer_filters, write_filters_csv, ParamBundle};
use crate::odl::{run_validation, ValidationReport};
use crate::ps::{
    assemble_report, bench_rows, build_server, read_model, run_training, run_worker, write_bench_csv,
    write_model, BenchRow, SocketServer, SocketTransport, StepReport, TrainReport, TransportKind,
};
use crate::scalar::{Precision, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct GenDataSummary {
    pub train_signals: usize,
    pub eval_signals: usize,
    /// Zero-variance signals dropped before writing.
    pub rejected: usize,
    pub files: Vec<PathBuf>,
}

fn write_rows_csv(path: &Path, id: &str, rows: &[Vec<f64>], prefix: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let width = rows.first().map_or(0, Vec::len);
    let mut header = vec![id.to_string()];
    header.extend((0..width).map(|i| format!("{prefix}{i}")));
    w.write_record(&header)?;
    for (i, r) in rows.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(r.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `designs.csv`: one regressor per row after an `event_id` column.
pub fn read_designs_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io_at(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    r.records()
        .map(|rec| {
            rec?.iter()
                .skip(1)
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| Error::format(0, format!("designs.csv value {s:?}: {e}")))
                })
                .collect()
        })
        .collect()
}

fn write_split<T: Scalar>(
    dir: &Path,
    name: &str,
    cfg: &RunConfig,
    synth: &crate::datagen::SyntheticConfig,
    truth: &mut csv::Writer<std::fs::File>,
) -> Result<(usize, usize, PathBuf)> {
    let g = generate_dataset(&cfg.data.design, synth)?;
    let nb = normalize_batch(&g.signals);
    let batch: SignalBatch<T> = nb.signals.cast();
    let header = DatasetHeader::new(&batch, synth.seed, cfg.data.design.fingerprint())?;
    let path = dir.join(format!("{name}.fmts"));
    write_dataset(&path, &header, &batch)?;
    for (row, (&src, &std)) in nb.kept.iter().zip(&nb.stds).enumerate() {
        let mut rec = vec![name.to_string(), row.to_string(), src.to_string(), std.to_string()];
        rec.extend(g.weights[src].iter().map(f64::to_string));
        truth.write_record(&rec)?;
    }
    Ok((batch.len(), nb.rejected, path))
}

fn gen_data_t<T: Scalar>(cfg: &RunConfig) -> Result<GenDataSummary> {
    let dir = cfg.out.clone();
    std::fs::create_dir_all(&dir)?;
    let regressors = design_regressors(&cfg.data.design)?;
    let designs_path = dir.join("designs.csv");
    write_rows_csv(&designs_path, "event_id", &regressors, "t")?;
    let truth_path = dir.join("truth.csv");
    let mut truth = csv::Writer::from_path(&truth_path)?;
    let mut header: Vec<String> = ["split", "row", "source", "std"].map(String::from).to_vec();
    header.extend((0..regressors.len()).map(|e| format!("w{e}")));
    truth.write_record(&header)?;
    let (n_train, r_train, train_path) = write_split::<T>(&dir, "train", cfg, &cfg.data.train, &mut truth)?;
    let (n_eval, r_eval, eval_path) = write_split::<T>(&dir, "eval", cfg, &cfg.data.eval, &mut truth)?;
    truth.flush()?;
    Ok(GenDataSummary {
        train_signals: n_train,
        eval_signals: n_eval,
        rejected: r_train + r_eval,
        files: vec![train_path, eval_path, designs_path, truth_path],
    })
}

/// Generates `train.fmts`, `eval.fmts`, `designs.csv` and `truth.csv`.
pub fn gen_data(cfg: &RunConfig) -> Result<GenDataSummary> {
    cfg.write_resolved("gen-data")?;
    match cfg.precision {
        Precision::F32 => gen_data_t::<f32>(cfg),
        Precision::F64 => gen_data_t::<f64>(cfg),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub applied_steps: usize,
    pub final_loss: f64,
    pub mean_batch_ms: f64,
    pub max_staleness: u64,
    pub aborted_workers: usize,
    pub model_path: PathBuf,
}

fn load_train_set<T: Scalar>(cfg: &RunConfig) -> Result<SignalBatch<T>> {
    let (_, data) = read_dataset::<T>(cfg.data_dir().join("train.fmts"))?;
    if data.length() != cfg.model.input_length {
        return Err(Error::config(format!(
            "train.fmts holds {}-point signals, model expects {}",
            data.length(),
            cfg.model.input_length
        )));
    }
    Ok(data)
}

/// Trains with each worker in its own `dca worker` process talking to an
/// in-process parameter server over TCP. Step reports come back as JSON
/// lines on the workers' stdout.
fn train_multiprocess<T: Scalar>(
    cfg: &RunConfig,
    initial: ParamBundle<T>,
    worker_exe: &Path,
) -> Result<TrainReport<T>> {
    let resolved = cfg.out.join("train.config.json");
    let server = Arc::new(build_server(&cfg.run, &cfg.server, initial, None)?);
    let sock = SocketServer::spawn(server.clone(), TcpListener::bind("127.0.0.1:0")?)?;
    server.start();
    let t0 = Instant::now();
    let mut children = Vec::new();
    for w in 0..cfg.run.worker_count {
        let child = Command::new(worker_exe)
            .arg("worker")
            .args(["--connect", &sock.local_addr().to_string()])
            .args(["--worker-id", &w.to_string()])
            .arg("--config")
            .arg(&resolved)
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Transport(format!("spawning worker {w}: {e}")))?;
        children.push((w as u32, child));
    }
    let mut steps = Vec::new();
    let mut aborted = Vec::new();
    std::thread::scope(|s| {
        let readers: Vec<_> = children
            .iter_mut()
            .map(|(w, child)| {
                let out = child.stdout.take().expect("stdout piped");
                let w = *w;
                s.spawn(move || {
                    let mut got = Vec::new();
                    for line in BufReader::new(out).lines().map_while(std::io::Result::ok) {
                        match serde_json::from_str::<StepReport>(&line) {
                            Ok(r) => got.push(r),
                            Err(e) => log::warn!("worker {w}: unreadable report line: {e}"),
                        }
                    }
                    got
                })
            })
            .collect();
        for r in readers {
            steps.extend(r.join().unwrap_or_default());
        }
    });
    for (w, mut child) in children {
        let status = child.wait()?;
        if !status.success() {
            aborted.push((w, format!("worker process exited with {status}")));
        }
    }
    let wall = t0.elapsed();
    sock.stop();
    if aborted.len() == cfg.run.worker_count {
        return Err(Error::Transport("every worker process failed".into()));
    }
    Ok(assemble_report(&cfg.run, &server, steps, aborted, wall))
}

fn train_t<T: Scalar>(cfg: &RunConfig, worker_exe: Option<&Path>) -> Result<TrainSummary> {
    let data = load_train_set::<T>(cfg)?;
    let initial = build_model::<T>(&cfg.model, cfg.model_seed)?;
    let report = match (cfg.run.transport, worker_exe) {
        (TransportKind::Socket, Some(exe)) => train_multiprocess(cfg, initial, exe)?,
        _ => run_training(&cfg.run, &cfg.server, initial, &data)?,
    };
    report.write_csvs(&cfg.out)?;
    let model_path = cfg.out.join("model.dpsg");
    write_model(&model_path, &report.final_params)?;
    if report.diverged() {
        return Err(Error::Numeric(format!(
            "training diverged ({} non-finite pushes rejected); partial reports written",
            report.rejected
        )));
    }
    Ok(TrainSummary {
        applied_steps: report.applied.len(),
        final_loss: report.tail_loss(cfg.run.worker_count.max(1) * 10),
        mean_batch_ms: report.mean_batch_ms,
        max_staleness: report.max_staleness(),
        aborted_workers: report.aborted.len(),
        model_path,
    })
}

/// Trains a model and writes `model.dpsg`, `loss.csv`, `staleness.csv` and
/// `throughput.csv`. In socket mode with `worker_exe` given, workers run as
/// separate processes of that executable.
pub fn train(cfg: &RunConfig, worker_exe: Option<&Path>) -> Result<TrainSummary> {
    cfg.validate()?;
    cfg.write_resolved("train")?;
    match cfg.precision {
        Precision::F32 => train_t::<f32>(cfg, worker_exe),
        Precision::F64 => train_t::<f64>(cfg, worker_exe),
    }
}

/// Body of a `dca worker` process: runs one worker against a remote server
/// and prints one JSON step report per line.
pub fn worker(cfg: &RunConfig, connect: &str, worker_id: u32) -> Result<()> {
    fn go<T: Scalar>(cfg: &RunConfig, connect: &str, worker_id: u32) -> Result<()> {
        let data = load_train_set::<T>(cfg)?;
        let layout = Arc::new(crate::model::ParamLayout::new(&cfg.model)?);
        let mut transport = SocketTransport::new(connect, layout)?;
        let stdout = std::io::stdout();
        let mut failed = None;
        run_worker::<T, _>(worker_id, &mut transport, &data, &cfg.run.worker_plan(), &mut |r| {
            let mut out = stdout.lock();
            if let Err(e) = serde_json::to_writer(&mut out, &r)
                .map_err(Error::from)
                .and_then(|_| std::io::Write::write_all(&mut out, b"\n").map_err(Error::from))
            {
                failed.get_or_insert(e);
            }
        })?;
        failed.map_or(Ok(()), Err)
    }
    match cfg.precision {
        Precision::F32 => go::<f32>(cfg, connect, worker_id),
        Precision::F64 => go::<f64>(cfg, connect, worker_id),
    }
}

fn bench_t<T: Scalar>(cfg: &RunConfig) -> Result<Vec<BenchRow>> {
    let data = load_train_set::<T>(cfg)?;
    let initial = build_model::<T>(&cfg.model, cfg.model_seed)?;
    let mut measured = Vec::new();
    for &w in &cfg.bench.worker_counts {
        let mut run = cfg.run.clone();
        run.worker_count = w;
        run.step_budget = Some(cfg.bench.step_budget);
        // Every epoch yields at least one step, so this many always reach the budget.
        run.epochs = cfg.bench.step_budget;
        let r = run_training(&run, &cfg.server, initial.clone(), &data)?;
        log::info!("bench: {w} workers, {:.2} ms per batch", r.mean_batch_ms);
        measured.push((w, r.mean_batch_ms));
    }
    Ok(bench_rows(&measured))
}

/// Runs a fixed step budget per worker count and writes `bench.csv`.
pub fn bench(cfg: &RunConfig) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    if cfg.bench.worker_counts.is_empty() || cfg.bench.step_budget == 0 {
        return Err(Error::config("bench needs worker counts and a positive step budget"));
    }
    cfg.write_resolved("bench")?;
    let rows = match cfg.precision {
        Precision::F32 => bench_t::<f32>(cfg)?,
        Precision::F64 => bench_t::<f64>(cfg)?,
    };
    write_bench_csv(std::fs::File::create(cfg.out.join("bench.csv"))?, &rows)?;
    Ok(rows)
}

fn validate_t<T: Scalar>(cfg: &RunConfig) -> Result<ValidationReport> {
    let params = read_model::<T>(cfg.model_path())?;
    let (_, eval) = read_dataset::<T>(cfg.data_dir().join("eval.fmts"))?;
    let designs = read_designs_csv(&cfg.data_dir().join("designs.csv"))?;
    let report = run_validation(&params, &eval, &designs, &cfg.validation)?;
    report.write_csvs(&cfg.out)?;
    Ok(report)
}

/// Dictionary learning on raw and hidden features of `eval.fmts`; writes
/// `validation.csv`, the atom matrices and spatial maps.
pub fn validate(cfg: &RunConfig) -> Result<ValidationReport> {
    cfg.validation.odl.validate()?;
    cfg.write_resolved("validate")?;
    match cfg.precision {
        Precision::F32 => validate_t::<f32>(cfg),
        Precision::F64 => validate_t::<f64>(cfg),
    }
}

/// Writes the first-layer filters of the model to `filters.csv`.
pub fn export_filters(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.write_resolved("export-filters")?;
    let path = cfg.out.join("filters.csv");
    let file = || std::fs::File::create(&path);
    match cfg.precision {
        Precision::F32 => {
            write_filters_csv(&export_first_layer_filters(&read_model::<f32>(cfg.model_path())?), file()?)?
        }
        Precision::F64 => {
            write_filters_csv(&export_first_layer_filters(&read_model::<f64>(cfg.model_path())?), file()?)?
        }
    }
    Ok(path)
}
