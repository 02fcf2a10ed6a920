//! Write a tensor as DQT1, quantize it into a DQZ1 container, read both
//! back and compare sizes.

use dq::{quantize_tensor_with, QuantConfig, QuantizedTensor, SparsityConfig, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> dq::Result<()> {
    let dir = std::env::temp_dir().join("dq-container-example");
    std::fs::create_dir_all(&dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t = Tensor::new(vec![128, 256], (0..128 * 256).map(|_| StandardNormal.sample(&mut rng)).collect())?;
    let raw = dir.join("weights.dqt");
    t.save(&raw)?;
    println!("DQT1 {:>8} bytes", std::fs::metadata(&raw)?.len());

    let cases = [
        ("4-bit", QuantConfig::with_bits(4), None),
        ("2-bit e5m2", QuantConfig::with_bits(2).block_size(32).coeff_precision(dq::CoeffPrecision::E5m2), None),
        ("2:4 ternary", QuantConfig::with_bits(1), Some(SparsityConfig::Structured { m: 2, n: 4 })),
    ];
    for (name, cfg, sp) in cases {
        let (qt, summary) = quantize_tensor_with(&Tensor::load(&raw)?, 1, &cfg, sp.as_ref())?;
        let path = dir.join("weights.dqz");
        qt.save(&path)?;
        let back = QuantizedTensor::load(&path)?;
        assert_eq!(back, qt);
        println!(
            "DQZ1 {:>8} bytes  {name:<12} mse {:.4e}  {:.3} bits/elem",
            std::fs::metadata(&path)?.len(),
            summary.mse,
            summary.effective_bits
        );
    }
    Ok(())
}
