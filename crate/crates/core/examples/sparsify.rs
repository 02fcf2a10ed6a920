//! Toward-mean, zero-mask and M:N sparsity on the same block, plus the
//! ternary code that structured sparsity feeds.

use dq::sparsifier::{bits_per_element, sparsify, ternarize, SparsityConfig};

fn main() -> dq::Result<()> {
    let x = [2.1f32, 1.9, 2.0, 5.0, -0.5, 2.05, 1.95, 3.5];
    println!("x            {x:?}");
    for cfg in ["mean:0.5", "zero:0.5", "2:4", "1:4"] {
        let cfg: SparsityConfig = cfg.parse()?;
        let (y, pattern) = sparsify(&x, &cfg)?;
        let mse = x.iter().zip(&y).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>() / x.len() as f64;
        println!("{:<12} {y:?}  removed {}  mse {mse:.4}", cfg.to_string(), pattern.removed_count());
    }

    let (y, _) = sparsify(&x, &SparsityConfig::Structured { m: 2, n: 4 })?;
    let t = ternarize(&y, 0.01)?;
    println!("ternary      codes {:?}  scale {:.4}", t.codes, t.scale);
    for m in 1..=3 {
        let cfg = SparsityConfig::Structured { m, n: 4 };
        println!("{cfg}: {} bits per element", bits_per_element(&cfg)?);
    }
    Ok(())
}
