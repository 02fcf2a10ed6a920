//! Store block coefficients as 8-bit E5M2 floats instead of f32 pairs.

use dq::fp8::{e5m2_decode, e5m2_encode};
use dq::{quantize_tensor, CoeffPrecision, QuantConfig, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> dq::Result<()> {
    for v in [0.3, 1.0, 1.125, 1.375, 70000.0] {
        let code = e5m2_encode(v);
        println!("{v:>9} -> 0x{code:02x} -> {}", e5m2_decode(code));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = Tensor::new(vec![64, 512], (0..64 * 512).map(|_| StandardNormal.sample(&mut rng)).collect())?;
    for bits in [2u8, 4, 8] {
        let cfg = QuantConfig::with_bits(bits).block_size(32);
        let (_, full) = quantize_tensor(&t, 1, &cfg)?;
        let (_, fp8) = quantize_tensor(&t, 1, &cfg.coeff_precision(CoeffPrecision::E5m2))?;
        println!(
            "bits {bits}: f32 mse {:.4e} ({:.2} bits)  e5m2 mse {:.4e} ({:.2} bits)  ratio {:.2}",
            full.mse,
            full.effective_bits,
            fp8.mse,
            fp8.effective_bits,
            fp8.mse / full.mse
        );
    }
    Ok(())
}
