//! Bitstream container. Layout (all little-endian) is described in
//! BITSTREAM.md at the repository root.

use crate::entropy::{decode_config, encode_config, ModelConfig};
use crate::error::{corrupt, Error, Result};
use crate::io::{AttributeConfig, AttributeMode};
use crate::wire::Reader;

pub const MAGIC: &[u8; 4] = b"DPCC";
pub const VERSION: u16 = 1;

const FLAG_EMBEDDED_GEOMETRY: u8 = 1;
const FLAG_LEARNED: u8 = 2;
const FLAG_CDF_CHECKSUM: u8 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SectionKind {
    Geometry = 1,
    /// Raw values of points coded without a prediction.
    Literals = 2,
    /// Run-length coded base-layer residuals of one channel.
    Base = 3,
    /// One inference layer.
    Layer = 4,
    /// Exact chroma residuals behind escape symbols.
    Overflow = 5,
}

impl SectionKind {
    fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            1 => Self::Geometry,
            2 => Self::Literals,
            3 => Self::Base,
            4 => Self::Layer,
            5 => Self::Overflow,
            _ => return None,
        })
    }
}

/// Structure digests recomputed by the decoder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize)]
pub struct Digests {
    pub geometry: u32,
    pub lod: u32,
    pub partition: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Header {
    pub point_count: u32,
    pub bit_depth: u8,
    pub attributes: AttributeConfig,
    pub embedded_geometry: bool,
    pub learned: bool,
    pub cdf_checksum: bool,
    pub base_levels: u8,
    pub total_levels: u8,
    pub neighbors: u8,
    /// Realized base-layer distance thresholds.
    pub schedule: Vec<u64>,
    /// Descriptor and architecture; for the baseline only the descriptor
    /// part is informative.
    pub model: ModelConfig,
    pub seed: u64,
    pub num_clusters: u32,
    pub batch_size: u32,
    pub model_hash: u64,
    pub digests: Digests,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SectionEntry {
    pub kind: SectionKind,
    pub index: u16,
    pub offset: u64,
    pub length: u64,
    pub crc: u32,
}

/// A parsed container: header, section table and the payload slices.
pub struct Container<'a> {
    pub header: Header,
    pub sections: Vec<SectionEntry>,
    /// Bytes of the header and section table, CRC included.
    pub header_len: usize,
    payload: &'a [u8],
}

impl<'a> Container<'a> {
    pub fn section(&self, kind: SectionKind, index: u16) -> Option<&'a [u8]> {
        self.sections
            .iter()
            .find(|s| s.kind == kind && s.index == index)
            .map(|s| &self.payload[s.offset as usize..(s.offset + s.length) as usize])
    }

    pub fn require(&self, kind: SectionKind, index: u16) -> Result<&'a [u8]> {
        self.section(kind, index).ok_or_else(|| corrupt(format!("missing {kind:?} section {index}")))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u8::try_from(s.len()).map_err(|_| Error::InvalidInput(format!("attribute name {s:?} too long")))?;
    out.push(len);
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn encode_header(h: &Header, out: &mut Vec<u8>) -> Result<()> {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let mut flags = 0;
    if h.embedded_geometry {
        flags |= FLAG_EMBEDDED_GEOMETRY;
    }
    if h.learned {
        flags |= FLAG_LEARNED;
    }
    if h.cdf_checksum {
        flags |= FLAG_CDF_CHECKSUM;
    }
    out.push(flags);
    out.extend_from_slice(&h.point_count.to_le_bytes());
    out.push(h.bit_depth);
    out.push(h.attributes.mode.to_byte());
    out.push(h.attributes.names.len() as u8);
    for n in &h.attributes.names {
        put_str(out, n)?;
    }
    out.extend_from_slice(&[h.base_levels, h.total_levels, h.neighbors]);
    out.push(h.schedule.len() as u8);
    for s in &h.schedule {
        out.extend_from_slice(&s.to_le_bytes());
    }
    encode_config(out, &h.model)?;
    out.extend_from_slice(&h.seed.to_le_bytes());
    out.extend_from_slice(&h.num_clusters.to_le_bytes());
    out.extend_from_slice(&h.batch_size.to_le_bytes());
    out.extend_from_slice(&h.model_hash.to_le_bytes());
    for d in [h.digests.geometry, h.digests.lod, h.digests.partition] {
        out.extend_from_slice(&d.to_le_bytes());
    }
    Ok(())
}

fn decode_header(r: &mut Reader) -> Result<Header> {
    if r.take(4)? != MAGIC {
        return Err(corrupt("not a DPCC bitstream"));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(corrupt(format!("unsupported bitstream version {version}")));
    }
    let flags = r.u8()?;
    if flags & !(FLAG_EMBEDDED_GEOMETRY | FLAG_LEARNED | FLAG_CDF_CHECKSUM) != 0 {
        return Err(corrupt("unknown header flags"));
    }
    let point_count = r.u32()?;
    let bit_depth = r.u8()?;
    let mode = AttributeMode::from_byte(r.u8()?).ok_or_else(|| corrupt("unknown attribute mode"))?;
    let names = (0..r.u8()?)
        .map(|_| {
            let len = r.u8()? as usize;
            String::from_utf8(r.take(len)?.to_vec()).map_err(|_| corrupt("attribute name is not UTF-8"))
        })
        .collect::<Result<Vec<_>>>()?;
    let attributes = AttributeConfig { mode, names };
    attributes.validate().map_err(|e| corrupt(format!("attributes: {e}")))?;
    let [base_levels, total_levels, neighbors] = [r.u8()?, r.u8()?, r.u8()?];
    let schedule = (0..r.u8()?).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
    let model = decode_config(r)?;
    if model.mode != mode {
        return Err(corrupt("model block attribute mode differs from header"));
    }
    Ok(Header {
        point_count,
        bit_depth,
        attributes,
        embedded_geometry: flags & FLAG_EMBEDDED_GEOMETRY != 0,
        learned: flags & FLAG_LEARNED != 0,
        cdf_checksum: flags & FLAG_CDF_CHECKSUM != 0,
        base_levels,
        total_levels,
        neighbors,
        schedule,
        model,
        seed: r.u64()?,
        num_clusters: r.u32()?,
        batch_size: r.u32()?,
        model_hash: r.u64()?,
        digests: Digests {
            geometry: r.u32()?,
            lod: r.u32()?,
            partition: r.u32()?,
        },
    })
}

/// Serializes header, section table and payloads. Sections keep the
/// given order.
pub fn write_container(header: &Header, sections: &[(SectionKind, u16, Vec<u8>)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    encode_header(header, &mut out)?;
    let count = u16::try_from(sections.len()).map_err(|_| Error::InvalidInput("too many sections".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    let mut offset = 0u32;
    for (kind, index, data) in sections {
        out.push(*kind as u8);
        out.extend_from_slice(&index.to_le_bytes());
        let length = u32::try_from(data.len()).map_err(|_| Error::InvalidInput("section exceeds 4 GiB".into()))?;
        out.extend_from_slice(&offset.to_le_bytes());
        out.extend_from_slice(&length.to_le_bytes());
        out.extend_from_slice(&crc32fast::hash(data).to_le_bytes());
        offset = offset
            .checked_add(length)
            .ok_or_else(|| Error::InvalidInput("bitstream exceeds 4 GiB".into()))?;
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    for (_, _, data) in sections {
        out.extend_from_slice(data);
    }
    Ok(out)
}

/// Parses the header and table and verifies every checksum.
pub fn read_container(bytes: &[u8]) -> Result<Container<'_>> {
    let mut r = Reader::new(bytes, "bitstream header");
    let header = decode_header(&mut r)?;
    let count = r.u16()? as usize;
    let mut sections = Vec::with_capacity(count);
    for _ in 0..count {
        let kind = SectionKind::from_byte(r.u8()?).ok_or_else(|| corrupt("unknown section kind"))?;
        sections.push(SectionEntry {
            kind,
            index: r.u16()?,
            offset: u64::from(r.u32()?),
            length: u64::from(r.u32()?),
            crc: r.u32()?,
        });
    }
    let table_end = r.position();
    let crc = r.u32()?;
    if crc32fast::hash(&bytes[..table_end]) != crc {
        return Err(Error::Checksum("bitstream header".into()));
    }
    let header_len = table_end + 4;
    let payload = &bytes[header_len..];
    let mut expected = 0u64;
    for s in &sections {
        if s.offset != expected || s.offset.checked_add(s.length).is_none_or(|e| e > payload.len() as u64) {
            return Err(corrupt(format!("{:?} section {} out of bounds", s.kind, s.index)));
        }
        let data = &payload[s.offset as usize..(s.offset + s.length) as usize];
        if crc32fast::hash(data) != s.crc {
            return Err(Error::Checksum(format!("{:?} section {}", s.kind, s.index)));
        }
        expected += s.length;
    }
    if expected != payload.len() as u64 {
        return Err(corrupt("trailing bytes after the last section"));
    }
    Ok(Container {
        header,
        sections,
        header_len,
        payload,
    })
}
