//! Blockwise quantized matmul through both paths: reconstruct-then-multiply
//! and the integer product with rank-one bias corrections.

use dq::qlinalg::{fake_quant_product, float_matmul, integer_expand_matmul, matmul_errors, quantize_matrix};
use dq::{QuantConfig, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> dq::Result<Tensor> {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect())
}

fn main() -> dq::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = gaussian(32, 256, &mut rng)?;
    let w = gaussian(256, 16, &mut rng)?;
    let reference = float_matmul(&x, &w)?;

    for (bits, bs) in [(8, 128), (4, 128), (4, 32), (2, 32)] {
        let cfg = QuantConfig::with_bits(bits).block_size(bs);
        let (xq, sx) = quantize_matrix(&x, 1, &cfg)?;
        let (wq, _) = quantize_matrix(&w, 0, &cfg)?;
        let fake = fake_quant_product(&xq, &wq)?;
        let int = integer_expand_matmul(&xq, &wq)?;
        let (_, err) = matmul_errors(&int, &reference);
        let (_, gap) = matmul_errors(&int, &fake);
        println!("bits {bits} B {bs:>3}: rel err {err:.4}  paths differ by {gap:.1e}  {:.3} bits/elem", sx.effective_bits);
    }

    // With an enormous lambda each block contributes only mean(x) * mean(w) * B.
    let cfg = QuantConfig::with_bits(4).block_size(64).lambda(1e12);
    let (xq, _) = quantize_matrix(&x, 1, &cfg)?;
    let (wq, _) = quantize_matrix(&w, 0, &cfg)?;
    println!("backbone y[0,0] = {:.5}", integer_expand_matmul(&xq, &wq)?.data()[0]);
    Ok(())
}
