//! Lossless RGB to YCoCg-R and back, plus the channel ranges it produces.

use pcac::color::{rgb_to_ycocgr, ycocgr_to_rgb};

fn main() -> pcac::Result<()> {
    for rgb in [[0u8, 0, 0], [255, 255, 255], [255, 0, 0], [0, 255, 0], [12, 200, 77]] {
        let c = rgb_to_ycocgr(rgb[0], rgb[1], rgb[2]);
        let back = ycocgr_to_rgb(c)?;
        println!("{rgb:?} -> Y {:4} Co {:4} Cg {:4} -> {back:?}", c.y, c.co, c.cg);
        assert_eq!(back, rgb);
    }

    let (mut lo, mut hi) = ([i16::MAX; 3], [i16::MIN; 3]);
    for r in (0..=255u8).step_by(5) {
        for g in (0..=255u8).step_by(5) {
            for b in (0..=255u8).step_by(5) {
                let c = rgb_to_ycocgr(r, g, b);
                for (i, v) in [c.y, c.co, c.cg].into_iter().enumerate() {
                    lo[i] = lo[i].min(v);
                    hi[i] = hi[i].max(v);
                }
            }
        }
    }
    println!("ranges on a coarse grid: Y {}..={}, Co {}..={}, Cg {}..={}", lo[0], hi[0], lo[1], hi[1], lo[2], hi[2]);
    Ok(())
}
