//! Generate a small synthetic dataset, z-score it and round-trip it through
//! a `.fmts` file.
//!
//! cargo run --example gen_data -- [n_signals] [sigma]

use dist_dca::datagen::{
    design_regressors, generate_dataset, DatasetHeader, normalize_batch, read_dataset, write_dataset, SyntheticConfig,
    TaskDesign,
};

fn main() -> dist_dca::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(200, |s| s.parse().expect("n_signals"));
    let sigma: f64 = args.next().map_or(0.3, |s| s.parse().expect("sigma"));

    let design = TaskDesign::motor();
    let cfg = SyntheticConfig {
        n_signals: n,
        noise_sigma: sigma,
        seed: 11,
        ..SyntheticConfig::default()
    };
    let data = generate_dataset(&design, &cfg)?;
    let regs = design_regressors(&design)?;
    println!("{} events, {} scans at TR {}", regs.len(), design.length, design.tr);

    let norm = normalize_batch(&data.signals);
    println!("{} signals kept, {} rejected as flat", norm.signals.len(), norm.rejected);
    let active: usize = data.weights.iter().map(|w| w.iter().filter(|&&v| v > 0.0).count()).sum();
    println!("mean active events per signal: {:.2}", active as f64 / n.max(1) as f64);

    let dir = std::env::temp_dir().join("dca-gen-data-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("train.fmts");
    let f32s = norm.signals.cast::<f32>();
    let header = DatasetHeader::new(&f32s, cfg.seed, design.fingerprint())?;
    write_dataset(&path, &header, &f32s)?;
    let (header, back) = read_dataset::<f32>(&path)?;
    assert_eq!(back, f32s);
    println!(
        "{}: {} signals × {} points at {:?}, {} bytes",
        path.display(),
        header.n_signals,
        header.length,
        header.precision,
        std::fs::metadata(&path)?.len()
    );
    Ok(())
}
