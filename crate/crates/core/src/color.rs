//! Lossless RGB <-> YCoCg-R lifting transform.
//!
//! Forward: `Co = R - B`, `t = B + (Co >> 1)`, `Cg = G - t`, `Y = t + (Cg >> 1)`.
//! Inverse: `t = Y - (Cg >> 1)`, `G = Cg + t`, `B = t - (Co >> 1)`, `R = B + Co`.
//! Shifts are arithmetic (floor) on negative values. Y stays 8-bit, the
//! chroma channels need 9 signed bits.

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct YCoCg {
    pub y: i16,
    pub co: i16,
    pub cg: i16,
}

pub fn rgb_to_ycocgr(r: u8, g: u8, b: u8) -> YCoCg {
    let (r, g, b) = (i16::from(r), i16::from(g), i16::from(b));
    let co = r - b;
    let t = b + (co >> 1);
    let cg = g - t;
    let y = t + (cg >> 1);
    YCoCg { y, co, cg }
}

/// Range-checked forward transform for untyped inputs.
pub fn try_rgb_to_ycocgr(r: i32, g: i32, b: i32) -> Result<YCoCg> {
    let to_u8 = |v: i32| u8::try_from(v).map_err(|_| invalid(format!("color component {v} outside 0..=255")));
    Ok(rgb_to_ycocgr(to_u8(r)?, to_u8(g)?, to_u8(b)?))
}

/// Inverse transform. Fails when the triple does not map back into the
/// 8-bit RGB cube, which only happens for triples the forward transform
/// never produces.
pub fn ycocgr_to_rgb(c: YCoCg) -> Result<[u8; 3]> {
    let t = c.y - (c.cg >> 1);
    let g = c.cg + t;
    let b = t - (c.co >> 1);
    let r = b + c.co;
    let to_u8 = |v: i16| u8::try_from(v).map_err(|_| invalid(format!("YCoCg-R triple {c:?} is not a valid color")));
    Ok([to_u8(r)?, to_u8(g)?, to_u8(b)?])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        assert_eq!(rgb_to_ycocgr(0, 0, 0), YCoCg { y: 0, co: 0, cg: 0 });
        assert_eq!(rgb_to_ycocgr(255, 255, 255), YCoCg { y: 255, co: 0, cg: 0 });
        assert_eq!(rgb_to_ycocgr(100, 150, 50), YCoCg { y: 112, co: 50, cg: 75 });
        assert_eq!(ycocgr_to_rgb(YCoCg { y: 112, co: 50, cg: 75 }).unwrap(), [100, 150, 50]);
        assert_eq!(ycocgr_to_rgb(YCoCg { y: 0, co: 0, cg: 0 }).unwrap(), [0, 0, 0]);
    }

    #[test]
    fn gray_has_zero_chroma() {
        for v in 0..=255u8 {
            let c = rgb_to_ycocgr(v, v, v);
            assert_eq!((c.y, c.co, c.cg), (i16::from(v), 0, 0));
        }
    }

    #[test]
    fn ranges_hold_on_cube_extremes() {
        for &(r, g, b) in &[(255, 0, 0), (0, 255, 0), (0, 0, 255), (255, 0, 255), (0, 255, 255), (255, 255, 0)] {
            let c = rgb_to_ycocgr(r, g, b);
            assert!((0..=255).contains(&c.y));
            assert!((-255..=255).contains(&c.co));
            assert!((-255..=255).contains(&c.cg));
        }
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(try_rgb_to_ycocgr(256, 0, 0).is_err());
        assert!(try_rgb_to_ycocgr(0, -1, 0).is_err());
        assert!(ycocgr_to_rgb(YCoCg { y: 255, co: 255, cg: 255 }).is_err());
    }

    #[test]
    fn roundtrip_sampled_cube() {
        for r in (0..=255u8).step_by(5) {
            for g in (0..=255u8).step_by(3) {
                for b in 0..=255u8 {
                    assert_eq!(ycocgr_to_rgb(rgb_to_ycocgr(r, g, b)).unwrap(), [r, g, b]);
                }
            }
        }
    }
}
