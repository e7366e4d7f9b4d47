//! Downpour training: a sharded parameter server applying Adagrad, workers
//! that fetch, compute and push once per batch, and the transports between
//! them.

mod adagrad;
mod modelfile;
mod server;
mod train;
mod transport;
mod wire;
mod worker;

pub use adagrad::{apply_delta, AdagradState, ServerConfig};
pub use modelfile::{
    decode_model, encode_model, model_precision, read_model, write_model, MODEL_MAGIC, MODEL_VERSION,
};
pub use server::{ApplyObserver, ApplyRecord, ParameterServer, PushOutcome};
pub use train::{
    assemble_report, bench_rows, build_server, run_training, run_training_observed, write_bench_csv,
    BenchRow, LossPoint, TrainReport, TrainRunConfig, TransportKind,
};
pub use transport::{handle_message, InProcess, SocketServer, SocketTransport, Transport};
pub use wire::{
    decode_message, encode_message, read_message, write_message, Payload, WireMessage,
    FRAME_HEADER_LEN, MAX_BODY_LEN, WIRE_MAGIC, WIRE_VERSION,
};
pub use worker::{run_worker, StepReport, WorkerPlan, WorkerSummary};
