//! Entropy coding primitives: an adaptive range coded stream, a static
//! quantized CDF stream and run-length coding of sparse residuals.

use pcac::coder::{range_decode, range_encode, run_length_decode, run_length_encode, AdaptiveModel, QuantizedCdf};
use pcac::metrics::empirical_entropy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> pcac::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let symbols: Vec<usize> = (0..50_000).map(|_| if rng.random_bool(0.8) { 0 } else { rng.random_range(1..16) }).collect();
    let h = empirical_entropy(symbols.iter().copied())?;

    let bytes = range_encode(&symbols, &mut AdaptiveModel::new(16, 1));
    assert_eq!(range_decode(&bytes, &mut AdaptiveModel::new(16, 1), symbols.len())?, symbols);
    println!("adaptive: {:.4} bits/symbol, empirical entropy {h:.4}", 8.0 * bytes.len() as f64 / symbols.len() as f64);

    let mut probs = vec![0.2 / 15.0; 16];
    probs[0] = 0.8;
    let cdf = QuantizedCdf::from_probabilities(&probs)?;
    let mut tables = vec![cdf; symbols.len()];
    let bytes = range_encode(&symbols, &mut tables);
    assert_eq!(range_decode(&bytes, &mut tables, symbols.len())?, symbols);
    println!("static cdf: {:.4} bits/symbol", 8.0 * bytes.len() as f64 / symbols.len() as f64);

    let residuals: Vec<i64> = (0..50_000).map(|_| if rng.random_bool(0.97) { 0 } else { rng.random_range(-40..=40) }).collect();
    let bytes = run_length_encode(&residuals);
    assert_eq!(run_length_decode(&bytes, residuals.len())?, residuals);
    println!("run-length: {} residuals in {} bytes", residuals.len(), bytes.len());
    Ok(())
}
