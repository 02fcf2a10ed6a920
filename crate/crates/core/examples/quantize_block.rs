//! Quantize a single block step by step and compare the ridge
//! reconstruction against the plain inverse of the min-max map.

use dq::quantizer::{affine_forward, inject_perturbation, ridge_solve, QuantConfig};
use dq::quantize_block;

fn main() -> dq::Result<()> {
    let x = [1.0f32, 2.0, 3.0, 4.0];
    let cfg = QuantConfig::with_bits(2).lambda(0.01);

    let xs: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let scaled = affine_forward(&xs, cfg.bits, cfg.epsilon)?;
    let (q, delta) = inject_perturbation(&scaled.scaled, cfg.rounding);
    let fit = ridge_solve(&xs, &q, cfg.lambda)?;
    println!("scaled   {:?}", scaled.scaled);
    println!("codes    {q:?}");
    println!("residual {delta:?}");
    println!("a = {:.6}  b = {:.6}  kappa = {:.4}", fit.scale, fit.bias, fit.kappa);

    let (block, stats) = quantize_block(&x, &cfg)?;
    let naive: Vec<f64> = q
        .iter()
        .map(|&c| scaled.x_min + c / scaled.slope(cfg.bits, cfg.epsilon))
        .collect();
    println!("ridge    {:?}  mse {:.3e}", block.reconstruct_f64(), stats.mse);
    println!("inverse  {naive:?}");
    Ok(())
}
