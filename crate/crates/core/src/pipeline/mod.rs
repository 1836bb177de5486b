//! End-to-end encode and decode.
//!
//! Order of work, identical on both sides: LoD from geometry; base layer
//! coded point by point in layer order; base reconstructed; blocks and
//! batches derived from the base; then each inference layer in turn, its
//! batches independent of each other and coded Y, Co, Cg.

pub mod config;
pub mod container;
mod report;

use rayon::prelude::*;

pub use config::{CodecConfig, ModelSettings, Preset};
pub use container::{Digests, SectionKind};
pub use report::{rate_report, LayerBits, RateReport};

use crate::coder::{
    decode_symbol, encode_symbol, run_length_decode, run_length_encode, AdaptiveModel, QuantizedCdf, RangeDecoder,
    RangeEncoder,
};
use crate::color::{rgb_to_ycocgr, ycocgr_to_rgb, YCoCg};
use crate::dald::{build_features, ChannelKind};
use crate::entropy::{
    channel_kinds, contexts, head_input, head_probs, residual_of, symbol_of, BaselineModel, ModelConfig, Params,
    TrainingBatch, SYMBOL_OFFSET,
};
use crate::error::{corrupt, invalid, Error, Result};
use crate::io::{morton_code, morton_decode, AttributeMode, PointCloud};
use crate::lod::{self, DistanceSchedule, LodConfig, LodStructure};
use crate::partition::{self, Batch};
use crate::predict::{predict_point, reconstruct};
use container::{read_container, write_container, Container, Header};

/// Entropy model for the inference layers.
#[derive(Clone, Copy, Debug)]
pub enum Backend<'a> {
    /// Order-0 adaptive model per channel; needs no training.
    Baseline,
    Learned(&'a Params<f32>),
}

#[derive(Clone, Debug)]
pub struct Encoded {
    pub bytes: Vec<u8>,
    pub report: RateReport,
    pub digests: Digests,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub cloud: PointCloud,
    /// Digests of the structures rebuilt during decode.
    pub digests: Digests,
}

/// Working channels: Y, Co, Cg for color, the raw value otherwise.
pub fn working_channels(cloud: &PointCloud) -> Vec<Vec<i32>> {
    match cloud.mode() {
        AttributeMode::Single => vec![cloud.channels[0].iter().map(|&v| i32::from(v)).collect()],
        AttributeMode::Rgb => {
            let mut out: Vec<Vec<i32>> = (0..3).map(|_| Vec::with_capacity(cloud.len())).collect();
            for i in 0..cloud.len() {
                let c = rgb_to_ycocgr(cloud.channels[0][i], cloud.channels[1][i], cloud.channels[2][i]);
                out[0].push(i32::from(c.y));
                out[1].push(i32::from(c.co));
                out[2].push(i32::from(c.cg));
            }
            out
        }
    }
}

fn output_channels(mode: AttributeMode, working: &[Vec<i32>]) -> Result<Vec<Vec<u8>>> {
    match mode {
        AttributeMode::Single => Ok(vec![working[0]
            .iter()
            .map(|&v| u8::try_from(v).map_err(|_| corrupt("decoded value out of range")))
            .collect::<Result<_>>()?]),
        AttributeMode::Rgb => {
            let n = working[0].len();
            let mut out: Vec<Vec<u8>> = (0..3).map(|_| Vec::with_capacity(n)).collect();
            for i in 0..n {
                let c = YCoCg {
                    y: working[0][i] as i16,
                    co: working[1][i] as i16,
                    cg: working[2][i] as i16,
                };
                let rgb = ycocgr_to_rgb(c).map_err(|e| corrupt(format!("decoded color invalid: {e}")))?;
                for (o, v) in out.iter_mut().zip(rgb) {
                    o.push(v);
                }
            }
            Ok(out)
        }
    }
}

pub fn geometry_digest(positions: &[[u32; 3]]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    for p in positions {
        for v in p {
            h.update(&v.to_le_bytes());
        }
    }
    h.finalize()
}

/// Morton codes as `first, delta-1, delta-1, ..`, run-length coded.
fn encode_geometry(positions: &[[u32; 3]]) -> Result<Vec<u8>> {
    let mut prev: Option<u64> = None;
    let mut vals = Vec::with_capacity(positions.len());
    for &p in positions {
        let code = morton_code(p)?;
        vals.push(match prev {
            None => code as i64,
            Some(q) => (code - q - 1) as i64,
        });
        prev = Some(code);
    }
    Ok(run_length_encode(&vals))
}

fn decode_geometry(bytes: &[u8], count: usize, bit_depth: u8) -> Result<Vec<[u32; 3]>> {
    let vals = run_length_decode(bytes, count)?;
    if vals.len() != count {
        return Err(corrupt("geometry section holds the wrong number of points"));
    }
    let limit = 1u64 << (3 * u32::from(bit_depth).min(21));
    let mut code: Option<u64> = None;
    vals.iter()
        .map(|&v| {
            let c = match code {
                None => u64::try_from(v).ok(),
                Some(q) => u64::try_from(v).ok().and_then(|d| q.checked_add(d)?.checked_add(1)),
            }
            .filter(|&c| c < limit)
            .ok_or_else(|| corrupt("geometry code out of range"))?;
            code = Some(c);
            Ok(morton_decode(c))
        })
        .collect()
}

fn kinds_for(mode: AttributeMode) -> Vec<ChannelKind> {
    channel_kinds(mode)
}

/// Base points coded before any neighbor exists; their values are stored raw.
fn is_literal(lod: &LodStructure, p: u32) -> bool {
    lod.neighbors(p).is_empty()
}

fn encode_base(lod: &LodStructure, values: &[Vec<i32>]) -> Result<(Vec<u8>, Vec<Vec<u8>>)> {
    let base = lod.base_points();
    let mut literals = Vec::new();
    let mut residuals = vec![Vec::new(); values.len()];
    for &p in &base {
        if is_literal(lod, p) {
            for ch in values {
                literals.extend_from_slice(&(ch[p as usize] as i16).to_le_bytes());
            }
            continue;
        }
        for (c, ch) in values.iter().enumerate() {
            let pred = predict_point(ch, lod, p).expect("non-literal point has neighbors");
            residuals[c].push(i64::from(ch[p as usize] - pred));
        }
    }
    let streams = residuals
        .iter()
        .map(|r| if r.is_empty() { Vec::new() } else { run_length_encode(r) })
        .collect();
    Ok((literals, streams))
}

fn decode_base(
    c: &Container,
    lod: &LodStructure,
    kinds: &[ChannelKind],
    values: &mut [Vec<i32>],
) -> Result<()> {
    let base = lod.base_points();
    let literal_count = base.iter().filter(|&&p| is_literal(lod, p)).count();
    let lit = c.require(SectionKind::Literals, 0)?;
    if lit.len() != 2 * kinds.len() * literal_count {
        return Err(corrupt("literal section has the wrong size"));
    }
    let coded = base.len() - literal_count;
    let residuals = (0..kinds.len())
        .map(|ch| {
            let data = c.require(SectionKind::Base, ch as u16)?;
            if coded == 0 && data.is_empty() {
                return Ok(Vec::new());
            }
            run_length_decode(data, coded)
        })
        .collect::<Result<Vec<_>>>()?;
    if residuals.iter().any(|r| r.len() != coded) {
        return Err(corrupt("base section holds the wrong number of residuals"));
    }
    let mut lit_pos = 0;
    let mut at = 0;
    for &p in &base {
        if is_literal(lod, p) {
            for (ch, kind) in values.iter_mut().zip(kinds) {
                let v = i32::from(i16::from_le_bytes([lit[lit_pos], lit[lit_pos + 1]]));
                lit_pos += 2;
                if !kind.range().contains(v) {
                    return Err(corrupt("literal value out of range"));
                }
                ch[p as usize] = v;
            }
            continue;
        }
        for (c, kind) in kinds.iter().enumerate() {
            let pred = predict_point(&values[c], lod, p).expect("non-literal point has neighbors");
            let r = i32::try_from(residuals[c][at]).map_err(|_| corrupt("base residual out of range"))?;
            values[c][p as usize] = reconstruct(pred, r, kind.range())?;
        }
        at += 1;
    }
    Ok(())
}

fn clamp_main(r: i32) -> i32 {
    r.clamp(-SYMBOL_OFFSET, SYMBOL_OFFSET)
}

fn is_escape(kind: ChannelKind, clamped: i32) -> bool {
    kind == ChannelKind::Chroma && clamped.abs() == SYMBOL_OFFSET
}

/// Per channel, the IDW prediction of each real point of `batch`.
fn batch_predictions(lod: &LodStructure, values: &[Vec<i32>], batch: &Batch) -> Vec<Vec<i32>> {
    values
        .iter()
        .map(|ch| {
            batch
                .real_points()
                .iter()
                .map(|&p| predict_point(ch, lod, p).expect("inference points have neighbors"))
                .collect()
        })
        .collect()
}

/// Learned-model state shared by every batch of a layer.
struct Learned<'a> {
    params: &'a Params<f32>,
    kinds: &'a [ChannelKind],
    positions: &'a [[u32; 3]],
    lod: &'a LodStructure,
    checksum: bool,
}

/// Result of a learned batch: coded bytes (encode) or clamped residuals
/// (decode), predictions, and the CDF checksum.
struct BatchCoding {
    bytes: Vec<u8>,
    predictions: Vec<Vec<i32>>,
    clamped: Vec<Vec<i32>>,
    cdf_crc: u32,
}

impl Learned<'_> {
    /// Codes one batch. With `input = None` the true values in `values` are
    /// encoded; with `Some(bytes)` the residuals are decoded from `bytes`.
    fn code_batch(&self, values: &[Vec<i32>], batch: &Batch, input: Option<&[u8]>) -> Result<BatchCoding> {
        let cfg = &self.params.config;
        let f = build_features(&cfg.dald, self.kinds, self.positions, self.lod, values, &batch.points, batch.real)?;
        let ctx = contexts(self.params, &self.params.emb.assemble(&f));
        let mut enc = RangeEncoder::new();
        let mut dec = input.map(RangeDecoder::new).transpose()?;
        let mut hasher = crc32fast::Hasher::new();
        let rows = f.rows;
        let mut clamped: Vec<Vec<i32>> = Vec::with_capacity(self.kinds.len());
        for c in 0..self.kinds.len() {
            let prev: Vec<&[i32]> = clamped.iter().map(Vec::as_slice).collect();
            let probs = head_probs(self.params, c, &head_input(&ctx, &prev));
            let mut out = vec![0i32; rows];
            for i in 0..batch.real {
                let row = probs.row(i);
                let mut cdf = QuantizedCdf::from_probabilities(row.as_slice().expect("contiguous row"))?;
                if self.checksum {
                    cdf.hash_into(&mut hasher);
                }
                out[i] = match dec.as_mut() {
                    None => {
                        let p = batch.points[i] as usize;
                        let r = clamp_main(values[c][p] - f.predictions[c][i]);
                        encode_symbol(&mut enc, &mut cdf, symbol_of(r));
                        r
                    }
                    Some(d) => residual_of(decode_symbol(d, &mut cdf)?),
                };
            }
            clamped.push(out);
        }
        let bytes = match dec {
            None => enc.finish(),
            Some(d) => {
                if d.position() != input.unwrap().len() {
                    return Err(corrupt("trailing bytes after a batch stream"));
                }
                Vec::new()
            }
        };
        let predictions = f.predictions.iter().map(|p| p[..batch.real].to_vec()).collect();
        for ch in &mut clamped {
            ch.truncate(batch.real);
        }
        Ok(BatchCoding {
            bytes,
            predictions,
            clamped,
            cdf_crc: hasher.finalize(),
        })
    }
}

/// Free adaptive models carried across all inference layers.
struct BaselineState {
    models: Vec<BaselineModel>,
}

impl BaselineState {
    fn new(channels: usize) -> Self {
        Self {
            models: vec![BaselineModel::new(); channels],
        }
    }

    fn model(&mut self, c: usize) -> &mut AdaptiveModel {
        &mut self.models[c].model
    }
}

fn check_learned(params: &Params<f32>, mode: AttributeMode, lod_k: usize) -> Result<()> {
    if params.config.mode != mode {
        return Err(Error::ModelMismatch(format!(
            "model codes {:?} attributes, cloud has {:?}",
            params.config.mode, mode
        )));
    }
    if params.config.dald.k != lod_k {
        return Err(Error::ModelMismatch(format!(
            "model descriptor uses k={}, LoD uses k={lod_k}",
            params.config.dald.k
        )));
    }
    Ok(())
}

fn validate_cloud(cloud: &PointCloud) -> Result<()> {
    if cloud.morton_codes().windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("cloud must be canonical: Morton sorted without duplicates"));
    }
    if cloud.len() > u32::MAX as usize {
        return Err(invalid("too many points"));
    }
    Ok(())
}

pub fn encode(cloud: &PointCloud, config: &CodecConfig, backend: Backend) -> Result<Encoded> {
    config.validate()?;
    validate_cloud(cloud)?;
    let mode = cloud.mode();
    let kinds = kinds_for(mode);
    let model_config = match backend {
        Backend::Baseline => config.model_config(mode),
        Backend::Learned(p) => {
            check_learned(p, mode, config.lod.neighbors)?;
            p.config.clone()
        }
    };
    let model_hash = match backend {
        Backend::Baseline => 0,
        Backend::Learned(p) => p.model_hash()?,
    };
    let positions = &cloud.positions;
    let values = working_channels(cloud);
    let n = positions.len();
    let mut sections: Vec<(SectionKind, u16, Vec<u8>)> = Vec::new();
    if config.embed_geometry {
        sections.push((SectionKind::Geometry, 0, encode_geometry(positions)?));
    }

    let mut header = Header {
        point_count: n as u32,
        bit_depth: cloud.bit_depth,
        attributes: cloud.attributes.clone(),
        embedded_geometry: config.embed_geometry,
        learned: matches!(backend, Backend::Learned(_)),
        cdf_checksum: config.cdf_checksum && matches!(backend, Backend::Learned(_)),
        base_levels: config.lod.base_levels as u8,
        total_levels: config.lod.total_levels as u8,
        neighbors: config.lod.neighbors as u8,
        schedule: Vec::new(),
        model: model_config,
        seed: config.partition.seed,
        num_clusters: 0,
        batch_size: config.partition.batch_size as u32,
        model_hash,
        digests: Digests {
            geometry: geometry_digest(positions),
            ..Digests::default()
        },
    };

    if n > 0 {
        let lod = lod::build(positions, &config.lod)?;
        let clusters = partition::num_clusters(lod.inference_point_count(), lod.base_point_count(), &config.partition);
        let blocks = partition::partition(positions, &lod, &values, clusters, &config.partition)?;
        header.schedule = lod.schedule.clone();
        header.num_clusters = clusters as u32;
        header.digests.lod = lod.digest();
        header.digests.partition = blocks.digest();

        let (literals, base) = encode_base(&lod, &values)?;
        sections.push((SectionKind::Literals, 0, literals));
        for (c, b) in base.into_iter().enumerate() {
            sections.push((SectionKind::Base, c as u16, b));
        }

        let mut side = Vec::new();
        let mut baseline = BaselineState::new(kinds.len());
        for (t, batches) in lod.inference_layer_range().zip(&blocks.layer_batches) {
            let data = match backend {
                Backend::Baseline => encode_layer_baseline(&lod, &kinds, &values, batches, &mut baseline, &mut side),
                Backend::Learned(params) => {
                    let l = Learned {
                        params,
                        kinds: &kinds,
                        positions,
                        lod: &lod,
                        checksum: header.cdf_checksum,
                    };
                    encode_layer_learned(&l, &values, batches, &mut side)?
                }
            };
            sections.push((SectionKind::Layer, t as u16, data));
        }
        let side: Vec<i64> = side.iter().map(|&r: &i32| i64::from(r.abs() - SYMBOL_OFFSET)).collect();
        sections.push((
            SectionKind::Overflow,
            0,
            if side.is_empty() { Vec::new() } else { run_length_encode(&side) },
        ));
    }
    let bytes = write_container(&header, &sections)?;
    let report = rate_report(&bytes)?;
    log::info!("encoded {n} points: {:.4} bpp", report.bpp);
    Ok(Encoded {
        bytes,
        report,
        digests: header.digests,
    })
}

/// Layer stream: a channel mask byte, then (if the mask is nonzero) one
/// range-coded stream over the flagged channels. An unflagged channel has
/// only zero residuals in this layer and leaves its model untouched.
fn encode_layer_baseline(
    lod: &LodStructure,
    kinds: &[ChannelKind],
    values: &[Vec<i32>],
    batches: &[Batch],
    state: &mut BaselineState,
    side: &mut Vec<i32>,
) -> Vec<u8> {
    if batches.is_empty() {
        return Vec::new();
    }
    let residuals: Vec<Vec<Vec<i32>>> = batches
        .iter()
        .map(|batch| {
            let preds = batch_predictions(lod, values, batch);
            (0..kinds.len())
                .map(|c| {
                    let real = batch.real_points().iter();
                    real.zip(&preds[c]).map(|(&p, &e)| values[c][p as usize] - e).collect()
                })
                .collect()
        })
        .collect();
    let mut mask = 0u8;
    for b in &residuals {
        for (c, ch) in b.iter().enumerate() {
            if ch.iter().any(|&r| r != 0) {
                mask |= 1 << c;
            }
        }
    }
    let mut out = vec![mask];
    if mask == 0 {
        return out;
    }
    let mut enc = RangeEncoder::new();
    for b in &residuals {
        for (c, kind) in kinds.iter().enumerate() {
            if mask & (1 << c) == 0 {
                continue;
            }
            for &r in &b[c] {
                let m = clamp_main(r);
                if is_escape(*kind, m) {
                    side.push(r);
                }
                encode_symbol(&mut enc, state.model(c), symbol_of(m));
            }
        }
    }
    out.extend_from_slice(&enc.finish());
    out
}

/// Batch table: count, lengths, optional CDF checksums, then the streams.
fn encode_layer_learned(l: &Learned, values: &[Vec<i32>], batches: &[Batch], side: &mut Vec<i32>) -> Result<Vec<u8>> {
    if batches.is_empty() {
        return Ok(Vec::new());
    }
    let coded = batches
        .par_iter()
        .map(|b| l.code_batch(values, b, None))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    out.extend_from_slice(&(coded.len() as u32).to_le_bytes());
    for b in &coded {
        out.extend_from_slice(&(b.bytes.len() as u32).to_le_bytes());
    }
    if l.checksum {
        for b in &coded {
            out.extend_from_slice(&b.cdf_crc.to_le_bytes());
        }
    }
    for (batch, b) in batches.iter().zip(&coded) {
        for (c, kind) in l.kinds.iter().enumerate() {
            for (i, &p) in batch.real_points().iter().enumerate() {
                if is_escape(*kind, b.clamped[c][i]) {
                    side.push(values[c][p as usize] - b.predictions[c][i]);
                }
            }
        }
        out.extend_from_slice(&b.bytes);
    }
    Ok(out)
}

/// Replaces escape symbols by exact residuals, consuming side excesses.
struct SideReader {
    excess: Vec<i64>,
    at: usize,
}

impl SideReader {
    fn resolve(&mut self, kind: ChannelKind, clamped: i32) -> Result<i32> {
        if !is_escape(kind, clamped) {
            return Ok(clamped);
        }
        let e = *self.excess.get(self.at).ok_or_else(|| corrupt("overflow stream too short"))?;
        self.at += 1;
        if !(0..=i64::from(SYMBOL_OFFSET)).contains(&e) {
            return Err(corrupt("overflow excess out of range"));
        }
        Ok(clamped.signum() * (SYMBOL_OFFSET + e as i32))
    }
}

/// Decoder input for a cloud whose geometry is not embedded.
#[derive(Clone, Copy, Debug, Default)]
pub struct DecodeInputs<'a> {
    /// Positions in Morton order, identical to those encoded.
    pub geometry: Option<&'a [[u32; 3]]>,
    pub model: Option<&'a Params<f32>>,
}

pub fn decode(bytes: &[u8], inputs: DecodeInputs) -> Result<Decoded> {
    let c = read_container(bytes)?;
    let h = &c.header;
    let n = h.point_count as usize;
    let mode = h.attributes.mode;
    let kinds = kinds_for(mode);
    let params = if h.learned {
        let p = inputs.model.ok_or_else(|| {
            Error::ModelMismatch("bitstream was coded with a learned model; a model file is required".into())
        })?;
        let hash = p.model_hash()?;
        if hash != h.model_hash {
            return Err(Error::ModelMismatch(format!(
                "model hash {hash:016x} differs from bitstream {:016x}",
                h.model_hash
            )));
        }
        if p.config != h.model {
            return Err(Error::ModelMismatch("model configuration differs from bitstream".into()));
        }
        Some(p)
    } else {
        None
    };

    let positions: Vec<[u32; 3]> = if h.embedded_geometry {
        decode_geometry(c.require(SectionKind::Geometry, 0)?, n, h.bit_depth)?
    } else {
        let g = inputs
            .geometry
            .ok_or_else(|| invalid("geometry is not embedded in the bitstream; supply the geometry file"))?;
        g.to_vec()
    };
    if positions.len() != n {
        return Err(corrupt(format!("bitstream has {n} points, geometry has {}", positions.len())));
    }
    let mut digests = Digests {
        geometry: geometry_digest(&positions),
        ..Digests::default()
    };
    if digests.geometry != h.digests.geometry {
        return Err(corrupt("geometry does not match the bitstream"));
    }
    let mut values = vec![vec![0i32; n]; kinds.len()];
    if n > 0 {
        let lod_config = LodConfig {
            base_levels: h.base_levels as usize,
            total_levels: h.total_levels as usize,
            neighbors: h.neighbors as usize,
            schedule: DistanceSchedule::Explicit(h.schedule.clone()),
        };
        lod_config.validate().map_err(|e| corrupt(format!("header LoD parameters: {e}")))?;
        let lod = lod::build(&positions, &lod_config)?;
        digests.lod = lod.digest();
        if digests.lod != h.digests.lod {
            return Err(corrupt("LoD replay differs from the encoder"));
        }
        decode_base(&c, &lod, &kinds, &mut values)?;

        let part = partition::PartitionConfig {
            batch_size: h.batch_size as usize,
            batches_per_block: 1,
            seed: h.seed,
        };
        part.validate().map_err(|e| corrupt(format!("header partition parameters: {e}")))?;
        let clusters = h.num_clusters as usize;
        if clusters == 0 || clusters > lod.base_point_count() {
            return Err(corrupt("cluster count out of range"));
        }
        let blocks = partition::partition(&positions, &lod, &values, clusters, &part)?;
        digests.partition = blocks.digest();
        if digests.partition != h.digests.partition {
            return Err(corrupt("block partition replay differs from the encoder"));
        }

        let chroma_symbols = lod.inference_point_count() * kinds.iter().filter(|k| **k == ChannelKind::Chroma).count();
        let ov = c.require(SectionKind::Overflow, 0)?;
        let mut side = SideReader {
            excess: if ov.is_empty() { Vec::new() } else { run_length_decode(ov, chroma_symbols)? },
            at: 0,
        };
        let mut baseline = BaselineState::new(kinds.len());
        for (t, batches) in lod.inference_layer_range().zip(&blocks.layer_batches) {
            let data = c.require(SectionKind::Layer, t as u16)?;
            match params {
                None => decode_layer_baseline(data, &lod, &kinds, &mut values, batches, &mut baseline, &mut side)?,
                Some(p) => {
                    let l = Learned {
                        params: p,
                        kinds: &kinds,
                        positions: &positions,
                        lod: &lod,
                        checksum: h.cdf_checksum,
                    };
                    decode_layer_learned(&l, data, &mut values, batches, &mut side)?;
                }
            }
        }
        if side.at != side.excess.len() {
            return Err(corrupt("overflow stream too long"));
        }
    }
    let channels = output_channels(mode, &values)?;
    let cloud = PointCloud::new(positions, h.attributes.clone(), channels, Some(h.bit_depth))?;
    Ok(Decoded { cloud, digests })
}

fn empty_layer(data: &[u8]) -> Result<()> {
    if data.is_empty() {
        Ok(())
    } else {
        Err(corrupt("data in a layer without points"))
    }
}

fn decode_layer_baseline(
    data: &[u8],
    lod: &LodStructure,
    kinds: &[ChannelKind],
    values: &mut [Vec<i32>],
    batches: &[Batch],
    state: &mut BaselineState,
    side: &mut SideReader,
) -> Result<()> {
    if batches.is_empty() {
        return empty_layer(data);
    }
    let (&mask, stream) = data.split_first().ok_or_else(|| corrupt("layer stream without a channel mask"))?;
    if u32::from(mask) >> kinds.len() != 0 {
        return Err(corrupt("channel mask flags a missing channel"));
    }
    let mut dec = if mask == 0 {
        if !stream.is_empty() {
            return Err(corrupt("data after an all-zero channel mask"));
        }
        None
    } else {
        Some(RangeDecoder::new(stream)?)
    };
    for batch in batches {
        let preds = batch_predictions(lod, values, batch);
        for (c, kind) in kinds.iter().enumerate() {
            for (i, &p) in batch.real_points().iter().enumerate() {
                let r = match dec.as_mut() {
                    Some(d) if mask & (1 << c) != 0 => {
                        let m = residual_of(decode_symbol(d, state.model(c))?);
                        side.resolve(*kind, m)?
                    }
                    _ => 0,
                };
                values[c][p as usize] = reconstruct(preds[c][i], r, kind.range())?;
            }
        }
    }
    if dec.is_some_and(|d| d.position() != stream.len()) {
        return Err(corrupt("trailing bytes after a layer stream"));
    }
    Ok(())
}

fn decode_layer_learned(
    l: &Learned,
    data: &[u8],
    values: &mut [Vec<i32>],
    batches: &[Batch],
    side: &mut SideReader,
) -> Result<()> {
    if batches.is_empty() {
        return empty_layer(data);
    }
    let mut r = crate::wire::Reader::new(data, "layer section");
    let count = r.u32()? as usize;
    if count != batches.len() {
        return Err(corrupt(format!("layer holds {count} batches, structure implies {}", batches.len())));
    }
    let lengths = (0..count).map(|_| Ok(r.u32()? as usize)).collect::<Result<Vec<_>>>()?;
    let crcs = if l.checksum {
        (0..count).map(|_| r.u32()).collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let mut streams = Vec::with_capacity(count);
    for &len in &lengths {
        streams.push(r.take(len)?);
    }
    if r.remaining() != 0 {
        return Err(corrupt("trailing bytes in layer section"));
    }
    let decoded = {
        let snapshot: &[Vec<i32>] = values;
        batches
            .par_iter()
            .zip(&streams)
            .map(|(b, s)| l.code_batch(snapshot, b, Some(s)))
            .collect::<Result<Vec<_>>>()?
    };
    for (j, (batch, d)) in batches.iter().zip(&decoded).enumerate() {
        if l.checksum && crcs[j] != d.cdf_crc {
            return Err(Error::Checksum(format!("quantized CDFs of batch {j}: model forward pass diverged")));
        }
        for (c, kind) in l.kinds.iter().enumerate() {
            for (i, &p) in batch.real_points().iter().enumerate() {
                let r = side.resolve(*kind, d.clamped[c][i])?;
                values[c][p as usize] = reconstruct(d.predictions[c][i], r, kind.range())?;
            }
        }
    }
    Ok(())
}

/// IDW residuals of every point in coding order, per working channel.
/// Points without neighbors contribute their raw value.
pub fn prediction_residuals(cloud: &PointCloud, lod_config: &LodConfig) -> Result<Vec<Vec<i32>>> {
    let values = working_channels(cloud);
    if cloud.is_empty() {
        return Ok(vec![Vec::new(); values.len()]);
    }
    let lod = lod::build(&cloud.positions, lod_config)?;
    let order: Vec<u32> = lod.layers.concat();
    Ok(values
        .iter()
        .map(|ch| {
            order
                .iter()
                .map(|&p| ch[p as usize] - predict_point(ch, &lod, p).unwrap_or(0))
                .collect()
        })
        .collect())
}

/// Training examples for every inference batch of `cloud`. Targets are
/// clamped residuals; padding and chroma overflow are masked out.
pub fn training_batches(cloud: &PointCloud, config: &CodecConfig, model: &ModelConfig) -> Result<Vec<TrainingBatch>> {
    validate_cloud(cloud)?;
    if model.mode != cloud.mode() {
        return Err(Error::ModelMismatch("model attribute mode differs from the cloud".into()));
    }
    if cloud.is_empty() {
        return Ok(Vec::new());
    }
    let kinds = kinds_for(cloud.mode());
    let values = working_channels(cloud);
    let lod = lod::build(&cloud.positions, &config.lod)?;
    let clusters = partition::num_clusters(lod.inference_point_count(), lod.base_point_count(), &config.partition);
    let blocks = partition::partition(&cloud.positions, &lod, &values, clusters, &config.partition)?;
    let mut out = Vec::new();
    for batches in &blocks.layer_batches {
        let made = batches
            .par_iter()
            .map(|b| {
                let f = build_features(&model.dald, &kinds, &cloud.positions, &lod, &values, &b.points, b.real)?;
                let mut targets = Vec::with_capacity(kinds.len());
                let mut mask = Vec::with_capacity(kinds.len());
                for c in 0..kinds.len() {
                    let r: Vec<i32> =
                        b.points.iter().enumerate().map(|(i, &p)| values[c][p as usize] - f.predictions[c][i]).collect();
                    mask.push(r.iter().enumerate().map(|(i, v)| i < b.real && v.abs() <= SYMBOL_OFFSET).collect());
                    targets.push(r.into_iter().map(clamp_main).collect());
                }
                Ok(TrainingBatch {
                    features: f,
                    targets,
                    mask,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.extend(made);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
