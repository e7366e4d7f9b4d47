//! Online dictionary learning on raw noisy signals and on autoencoder hidden
//! codes, each scored against the six task designs.
//!
//! Pass a trained `model.dpsg` (f32, default layer plan) to score it;
//! otherwise a reduced model is trained briefly first.

use dist_dca::datagen::{design_regressors, generate_dataset, normalize_batch, SyntheticConfig, TaskDesign};
use dist_dca::model::{build_model, ModelConfig};
use dist_dca::odl::{run_validation, Projection, ValidationConfig};
use dist_dca::ps::{read_model, run_training, ServerConfig, TrainRunConfig};

fn main() -> dist_dca::Result<()> {
    let design = TaskDesign::motor();
    let designs = design_regressors(&design)?;
    let eval = generate_dataset(
        &design,
        &SyntheticConfig {
            n_signals: 400,
            noise_sigma: 1.0,
            seed: 21,
            ..SyntheticConfig::default()
        },
    )?;
    let eval = normalize_batch(&eval.signals).signals.cast::<f32>();

    let params = match std::env::args().nth(1) {
        Some(path) => read_model::<f32>(path)?,
        None => {
            let train = generate_dataset(&design, &SyntheticConfig { n_signals: 400, ..SyntheticConfig::default() })?;
            let train = normalize_batch(&train.signals).signals.cast::<f32>();
            let run = TrainRunConfig {
                epochs: 3,
                batch_size: 16,
                ..TrainRunConfig::default()
            };
            let initial = build_model::<f32>(&ModelConfig::tiny(284, 8, 2, 9), 3)?;
            run_training(&run, &ServerConfig::default(), initial, &train)?.final_params
        }
    };

    for projection in [Projection::Direct, Projection::Switches] {
        let cfg = ValidationConfig {
            projection,
            ..ValidationConfig::default()
        };
        let report = run_validation(&params, &eval, &designs, &cfg)?;
        println!("{projection:?} projection");
        for (a, b) in report.setup1.iter().zip(&report.setup2) {
            println!(
                "  event {}: hidden atom {:>2} |PCC| {:.3}   raw atom {:>2} |PCC| {:.3}",
                a.event_id, a.atom_id, a.pcc, b.atom_id, b.pcc
            );
        }
        println!("  mean: hidden {:.3}, raw {:.3}", report.setup1_mean_pcc(), report.setup2_mean_pcc());
    }
    Ok(())
}
