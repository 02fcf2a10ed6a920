//! Matmul error against block size and bit width, with storage overhead.

use dq::qlinalg::matmul_sweep;
use dq::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> dq::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut gaussian = |r: usize, c: usize| Tensor::new(vec![r, c], (0..r * c).map(|_| StandardNormal.sample(&mut rng)).collect());
    let (x, w) = (gaussian(64, 1024)?, gaussian(1024, 64)?);
    for r in matmul_sweep(&x, &w, &[1, 2, 4, 8], &[512, 128, 32], &[0.01])? {
        println!(
            "bits {} B {:>3}: rel err {:.4}  {:.3} bits/elem",
            r.bits, r.block_size, r.rel_frobenius_err, r.effective_bits_x
        );
    }
    Ok(())
}
