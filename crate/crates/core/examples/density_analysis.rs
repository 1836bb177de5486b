//! Neighborhood density of a dense and a sparse cloud, and how it falls as
//! the clouds are subsampled.

use pcac::metrics::{density_curve_csv, nn_density, sampled_density_curve, DEFAULT_KERNEL_RADIUS};
use pcac::synth::{isolated_points, Pattern, Shape, Synthetic};
use pcac::AttributeMode;

fn main() -> pcac::Result<()> {
    let ratios = [1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125];
    for shape in [Shape::Terrain, Shape::Scatter] {
        let cloud = Synthetic::new(shape, Pattern::Constant([0, 0, 0]), AttributeMode::Rgb, 20_000, 1).generate()?;
        let curve = sampled_density_curve(&cloud.positions, &ratios, DEFAULT_KERNEL_RADIUS, 0)?;
        println!("{shape:?}\n{}", density_curve_csv(&curve));
    }
    println!("isolated points: nn = {}", nn_density(&isolated_points(100), DEFAULT_KERNEL_RADIUS)?);
    Ok(())
}
