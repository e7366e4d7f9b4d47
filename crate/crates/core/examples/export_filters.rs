//! Print the first-layer encoder filters of a freshly initialized model, or
//! of a trained one when a `model.dpsg` path is given.

use dist_dca::model::{build_model, export_first_layer_filters, write_filters_csv, ModelConfig};
use dist_dca::ps::read_model;

fn main() -> dist_dca::Result<()> {
    let params = match std::env::args().nth(1) {
        Some(path) => read_model::<f32>(path)?,
        None => build_model::<f32>(&ModelConfig::default(), 0)?,
    };
    let filters = export_first_layer_filters(&params);
    eprintln!("{} filters of length {}", filters.len(), filters[0].len());
    write_filters_csv(&filters, std::io::stdout().lock())
}
