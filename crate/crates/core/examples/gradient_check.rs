//! Compare the analytic gradient of the autoencoder loss with central finite
//! differences on a tiny model, in double precision.

use dist_dca::model::{backward, build_model, forward, loss, ModelConfig};

fn total_loss(p: &dist_dca::model::ParamBundle<f64>, x: &[f64]) -> f64 {
    let tr = forward(p, x).expect("forward");
    loss(x, &tr, p.config().lambda_reg).total
}

fn main() -> dist_dca::Result<()> {
    let cfg = ModelConfig::tiny(8, 2, 2, 3);
    let mut p = build_model::<f64>(&cfg, 5)?;
    // Zero biases put some pre-activations exactly on the ReLU kink, where
    // finite differences see half the slope. Nudge every parameter off it.
    for (i, v) in p.values_mut().iter_mut().enumerate() {
        *v += 0.05 * (i as f64 * 1.7).sin();
    }
    let x: Vec<f64> = (0..8).map(|i| ((i as f64) * 0.9).sin() + 0.1 * i as f64).collect();

    let trace = forward(&p, &x)?;
    let grad = backward(&p, &x, &trace, cfg.lambda_reg)?;
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..p.values().len() {
        let orig = p.values()[i];
        p.values_mut()[i] = orig + h;
        let up = total_loss(&p, &x);
        p.values_mut()[i] = orig - h;
        let down = total_loss(&p, &x);
        p.values_mut()[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let an = grad.values()[i];
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    println!("{} parameters, worst relative error {worst:.2e}", p.values().len());
    Ok(())
}
