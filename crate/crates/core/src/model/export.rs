use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::model::params::{Block, ParamBundle};
use crate::scalar::Scalar;

/// Raw first-layer encoder filters, one row per filter.
pub fn export_first_layer_filters<T: Scalar>(params: &ParamBundle<T>) -> Vec<Vec<T>> {
    let conv = params.conv(Block::EncoderConv(0));
    // First layer reads a single channel, so each filter is one kernel.
    conv.weights
        .chunks_exact(conv.in_channels * conv.kernel_len)
        .map(<[T]>::to_vec)
        .collect()
}

/// Writes filters as CSV with header `filter_id,w0,w1,…`. Values use the
/// shortest representation that parses back to the same bits.
pub fn write_filters_csv<T: Scalar, W: Write>(filters: &[Vec<T>], out: W) -> Result<()> {
    let width = filters.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["filter_id".to_string()];
    header.extend((0..width).map(|i| format!("w{i}")));
    w.write_record(&header)?;
    for (i, row) in filters.iter().enumerate() {
        if row.len() != width {
            return Err(Error::shape("filters have unequal lengths"));
        }
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_filters_csv<R: Read>(input: R) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .skip(1)
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| Error::format(0, format!("bad filter value {s:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ModelConfig;
    use crate::model::params::build_model;

    #[test]
    fn fresh_model_exports_its_init_draws() {
        let p = build_model::<f32>(&ModelConfig::default(), 4).unwrap();
        let f = export_first_layer_filters(&p);
        assert_eq!(f.len(), 32);
        assert!(f.iter().all(|r| r.len() == 21));
        let slot = p.layout().slot(Block::EncoderConv(0));
        let flat: Vec<f32> = f.concat();
        assert_eq!(flat, p.values()[slot.weights.clone()]);
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let p = build_model::<f32>(&ModelConfig::default(), 5).unwrap();
        let f = export_first_layer_filters(&p);
        let mut buf = Vec::new();
        write_filters_csv(&f, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("filter_id,w0,w1,"));
        assert!(text.lines().next().unwrap().ends_with(",w20"));
        let back = read_filters_csv(&buf[..]).unwrap();
        for (a, b) in f.iter().zip(&back) {
            for (&x, &y) in a.iter().zip(b) {
                assert_eq!(x.to_bits(), (y as f32).to_bits());
            }
        }
    }
}
