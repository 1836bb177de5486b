use crate::error::{invalid, Result};

/// Bits per axis in a 64-bit Morton key.
pub const MORTON_AXIS_BITS: u32 = 21;

fn spread(v: u64) -> u64 {
    let mut x = v & 0x1f_ffff;
    x = (x | x << 32) & 0x001f_0000_0000_ffff;
    x = (x | x << 16) & 0x001f_0000_ff00_00ff;
    x = (x | x << 8) & 0x100f_00f0_0f00_f00f;
    x = (x | x << 4) & 0x10c3_0c30_c30c_30c3;
    x = (x | x << 2) & 0x1249_2492_4924_9249;
    x
}

fn compact(v: u64) -> u32 {
    let mut x = v & 0x1249_2492_4924_9249;
    x = (x ^ (x >> 2)) & 0x10c3_0c30_c30c_30c3;
    x = (x ^ (x >> 4)) & 0x100f_00f0_0f00_f00f;
    x = (x ^ (x >> 8)) & 0x001f_0000_ff00_00ff;
    x = (x ^ (x >> 16)) & 0x001f_0000_0000_ffff;
    x = (x ^ (x >> 32)) & 0x1f_ffff;
    x as u32
}

/// Z-order key with x in the lowest interleave lane, then y, then z.
pub fn morton_code(p: [u32; 3]) -> Result<u64> {
    if p.iter().any(|&c| c >= 1 << MORTON_AXIS_BITS) {
        return Err(invalid(format!(
            "coordinate {p:?} does not fit in {MORTON_AXIS_BITS} bits"
        )));
    }
    Ok(spread(p[0].into()) | spread(p[1].into()) << 1 | spread(p[2].into()) << 2)
}

/// Inverse of [`morton_code`].
pub fn morton_decode(code: u64) -> [u32; 3] {
    [compact(code), compact(code >> 1), compact(code >> 2)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn interleave_bitwise(p: [u32; 3]) -> u64 {
        let mut key = 0u64;
        for bit in 0..MORTON_AXIS_BITS {
            for (axis, &c) in p.iter().enumerate() {
                key |= u64::from((c >> bit) & 1) << (3 * bit + axis as u32);
            }
        }
        key
    }

    #[test]
    fn unit_axes() {
        assert_eq!(morton_code([0, 0, 0]).unwrap(), 0);
        assert_eq!(morton_code([1, 0, 0]).unwrap(), 1);
        assert_eq!(morton_code([0, 1, 0]).unwrap(), 2);
        assert_eq!(morton_code([0, 0, 1]).unwrap(), 4);
        assert_eq!(morton_code([3, 3, 3]).unwrap(), 63);
    }

    #[test]
    fn overflow_rejected() {
        assert!(morton_code([1 << 21, 0, 0]).is_err());
        assert!(morton_code([(1 << 21) - 1, 0, 0]).is_ok());
    }

    proptest! {
        #[test]
        fn matches_bitwise_interleave(x in 0u32..1 << 21, y in 0u32..1 << 21, z in 0u32..1 << 21) {
            let code = morton_code([x, y, z]).unwrap();
            prop_assert_eq!(code, interleave_bitwise([x, y, z]));
            prop_assert_eq!(morton_decode(code), [x, y, z]);
        }
    }
}
