//! Builds the hybrid level-of-detail structure of a synthetic cloud and
//! prints the layer sizes, the realized distance schedule and one point's
//! neighbors together with its IDW prediction.

use pcac::lod::{self, LodConfig};
use pcac::predict::predict_point;
use pcac::synth::{Pattern, Shape, Synthetic};
use pcac::AttributeMode;

fn main() -> pcac::Result<()> {
    let cloud = Synthetic::new(Shape::Sphere, Pattern::Gradient, AttributeMode::Single, 20_000, 7).generate()?;
    let config = LodConfig::desk();
    let lod = lod::build(&cloud.positions, &config)?;

    println!("{} points, k = {}", lod.point_count(), lod.k);
    println!("base schedule {:?}", lod.schedule);
    for (t, layer) in lod.layers.iter().enumerate() {
        let kind = if t < lod.base_levels { "base" } else { "inference" };
        println!("  layer {t:2} {kind:9} {:6} points", layer.len());
    }
    let base = lod.base_points().len();
    println!("base share {:.2}%", 100.0 * base as f64 / lod.point_count() as f64);

    let values: Vec<i32> = cloud.channels[0].iter().map(|&v| i32::from(v)).collect();
    let p = *lod.layers.last().and_then(|l| l.first()).expect("cloud has inference points");
    println!("point {p} at {:?} has value {}", cloud.positions[p as usize], values[p as usize]);
    for (&n, &d) in lod.neighbors(p).iter().zip(lod.distances(p)) {
        println!("  neighbor {n:6} distance {d:3} value {}", values[n as usize]);
    }
    println!("prediction {:?}", predict_point(&values, &lod, p));
    Ok(())
}
