//! Reconstruction error against perturbation sensitivity as lambda grows.
//! Large lambda collapses every block onto its mean.

use dq::{quantize_tensor, QuantConfig, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> dq::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let data: Vec<f32> = (0..64 * 512).map(|_| StandardNormal.sample(&mut rng)).collect();
    let t = Tensor::new(vec![64, 512], data)?;

    println!("{:>8} {:>6} {:>12} {:>12} {:>12}", "lambda", "bits", "mse", "mean kappa", "max kappa");
    for bits in [1u8, 4] {
        for lambda in [0.0, 1e-4, 1e-2, 1.0, 100.0, 1e12] {
            let cfg = QuantConfig::with_bits(bits).block_size(64).lambda(lambda);
            let (_, s) = quantize_tensor(&t, 1, &cfg)?;
            println!("{lambda:>8.0e} {bits:>6} {:>12.4e} {:>12.4e} {:>12.4e}", s.mse, s.mean_kappa, s.max_kappa);
        }
    }
    Ok(())
}
