use std::fmt;

use serde::Serialize;

use super::container::{read_container, SectionKind};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LayerBits {
    /// Zero-based refinement layer.
    pub layer: usize,
    pub bits: u64,
}

/// Exact bit accounting of a bitstream. Attribute bits are header, base
/// layer, inference layers and overflow; embedded geometry is reported but
/// excluded from the rate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateReport {
    pub points: u64,
    pub header_bits: u64,
    /// Raw literals plus run-length coded base residuals.
    pub base_bits: u64,
    pub layer_bits: Vec<LayerBits>,
    pub overflow_bits: u64,
    pub geometry_bits: u64,
    pub attribute_bits: u64,
    pub bpp: f64,
    pub percent_header: f64,
    pub percent_base: f64,
    pub percent_inference: f64,
    pub percent_overflow: f64,
}

impl RateReport {
    pub fn new(points: u64, header_bits: u64, base_bits: u64, layer_bits: Vec<LayerBits>, overflow_bits: u64, geometry_bits: u64) -> Self {
        let inference: u64 = layer_bits.iter().map(|l| l.bits).sum();
        let total = header_bits + base_bits + inference + overflow_bits;
        let pct = |b: u64| if total == 0 { 0.0 } else { 100.0 * b as f64 / total as f64 };
        Self {
            points,
            header_bits,
            base_bits,
            overflow_bits,
            geometry_bits,
            attribute_bits: total,
            bpp: if points == 0 { 0.0 } else { total as f64 / points as f64 },
            percent_header: pct(header_bits),
            percent_base: pct(base_bits),
            percent_inference: pct(inference),
            percent_overflow: pct(overflow_bits),
            layer_bits,
        }
    }

    pub fn inference_bits(&self) -> u64 {
        self.layer_bits.iter().map(|l| l.bits).sum()
    }
}

/// Reads the section table of a bitstream and accounts for every byte.
pub fn rate_report(bytes: &[u8]) -> Result<RateReport> {
    let c = read_container(bytes)?;
    let (mut base, mut overflow, mut geometry) = (0u64, 0u64, 0u64);
    let mut layers = Vec::new();
    for s in &c.sections {
        let bits = 8 * s.length;
        match s.kind {
            SectionKind::Geometry => geometry += bits,
            SectionKind::Literals | SectionKind::Base => base += bits,
            SectionKind::Layer => layers.push(LayerBits {
                layer: s.index as usize,
                bits,
            }),
            SectionKind::Overflow => overflow += bits,
        }
    }
    Ok(RateReport::new(
        u64::from(c.header.point_count),
        8 * c.header_len as u64,
        base,
        layers,
        overflow,
        geometry,
    ))
}

impl fmt::Display for RateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "points          {}", self.points)?;
        writeln!(f, "bpp             {:.4}", self.bpp)?;
        writeln!(f, "attribute bits  {}", self.attribute_bits)?;
        writeln!(f, "  header        {:>12} ({:5.2}%)", self.header_bits, self.percent_header)?;
        writeln!(f, "  base layer    {:>12} ({:5.2}%)", self.base_bits, self.percent_base)?;
        writeln!(f, "  inference     {:>12} ({:5.2}%)", self.inference_bits(), self.percent_inference)?;
        for l in &self.layer_bits {
            writeln!(f, "    layer {:>3}   {:>12}", l.layer, l.bits)?;
        }
        writeln!(f, "  overflow      {:>12} ({:5.2}%)", self.overflow_bits, self.percent_overflow)?;
        write!(f, "geometry bits   {} (not counted)", self.geometry_bits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic() {
        let r = RateReport::new(1000, 800, 1200, vec![LayerBits { layer: 8, bits: 3000 }], 0, 999);
        assert_eq!(r.attribute_bits, 5000);
        assert_eq!(r.bpp, 5.0);
        assert_eq!(r.overflow_bits, 0);
        let sum = r.percent_header + r.percent_base + r.percent_inference + r.percent_overflow;
        assert!((sum - 100.0).abs() < 1e-9);
        assert_eq!(RateReport::new(0, 0, 0, vec![], 0, 0).bpp, 0.0);
    }
}
