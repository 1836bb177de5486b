use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::{Real, ALPHABET};
use crate::dald::{DaldConfig, Embeddings};
use crate::error::{Error, Result};
use crate::io::AttributeMode;
use crate::wire::Reader;

const MAGIC: &[u8; 4] = b"DALD";
const VERSION: u16 = 1;

/// One pre-norm encoder layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Block<R> {
    pub ln1_g: Array1<R>,
    pub ln1_b: Array1<R>,
    pub wq: Array2<R>,
    pub bq: Array1<R>,
    pub wk: Array2<R>,
    pub bk: Array1<R>,
    pub wv: Array2<R>,
    pub bv: Array1<R>,
    pub wo: Array2<R>,
    pub bo: Array1<R>,
    pub ln2_g: Array1<R>,
    pub ln2_b: Array1<R>,
    pub w1: Array2<R>,
    pub b1: Array1<R>,
    pub w2: Array2<R>,
    pub b2: Array1<R>,
}

/// Per-channel output MLP `d_in -> hidden -> 511`.
#[derive(Clone, Debug, PartialEq)]
pub struct Head<R> {
    pub w1: Array2<R>,
    pub b1: Array1<R>,
    pub w2: Array2<R>,
    pub b2: Array1<R>,
}

/// All learned parameters. Also used as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<R> {
    pub config: ModelConfig,
    pub emb: Embeddings<R>,
    pub blocks: Vec<Block<R>>,
    pub lnf_g: Array1<R>,
    pub lnf_b: Array1<R>,
    /// Head `c` sees the context plus the `c` previously decoded residuals.
    pub heads: Vec<Head<R>>,
}

impl<R: Real> Params<R> {
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.dim();
        let kinds = config.channel_kinds();
        let v = |n| Array1::zeros(n);
        let m = |r, c| Array2::zeros((r, c));
        let blocks = (0..config.layers)
            .map(|_| Block {
                ln1_g: v(d),
                ln1_b: v(d),
                wq: m(d, d),
                bq: v(d),
                wk: m(d, d),
                bk: v(d),
                wv: m(d, d),
                bv: v(d),
                wo: m(d, d),
                bo: v(d),
                ln2_g: v(d),
                ln2_b: v(d),
                w1: m(d, config.ff_dim),
                b1: v(config.ff_dim),
                w2: m(config.ff_dim, d),
                b2: v(d),
            })
            .collect();
        let heads = (0..kinds.len())
            .map(|c| Head {
                w1: m(d + c, config.head_hidden),
                b1: v(config.head_hidden),
                w2: m(config.head_hidden, ALPHABET),
                b2: v(ALPHABET),
            })
            .collect();
        Self {
            config: config.clone(),
            emb: Embeddings::zeros(&config.dald, &kinds),
            blocks,
            lnf_g: v(d),
            lnf_b: v(d),
            heads,
        }
    }

    /// Seeded initialization: embeddings `N(0,1)`, affine maps
    /// `U(±1/sqrt(fan_in))`, layer norms identity.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut p = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = |a: &mut [R]| a.iter_mut().for_each(|x| *x = R::of(rng.sample::<f64, _>(StandardNormal)));
        normal(p.emb.label.as_slice_mut().unwrap());
        for t in p.emb.attr.iter_mut().chain(p.emb.rel.iter_mut()) {
            normal(t.as_slice_mut().unwrap());
        }
        let mut uniform = |a: &mut [R], fan_in: usize| {
            let b = 1.0 / (fan_in as f64).sqrt();
            a.iter_mut().for_each(|x| *x = R::of(rng.random_range(-b..b)));
        };
        for blk in &mut p.blocks {
            blk.ln1_g.fill(R::one());
            blk.ln2_g.fill(R::one());
            for (w, b) in [
                (&mut blk.wq, &mut blk.bq),
                (&mut blk.wk, &mut blk.bk),
                (&mut blk.wv, &mut blk.bv),
                (&mut blk.wo, &mut blk.bo),
                (&mut blk.w1, &mut blk.b1),
                (&mut blk.w2, &mut blk.b2),
            ] {
                let fan_in = w.nrows();
                uniform(w.as_slice_mut().unwrap(), fan_in);
                uniform(b.as_slice_mut().unwrap(), fan_in);
            }
        }
        p.lnf_g.fill(R::one());
        for h in &mut p.heads {
            let fan_in = h.w1.nrows();
            uniform(h.w1.as_slice_mut().unwrap(), fan_in);
            uniform(h.b1.as_slice_mut().unwrap(), fan_in);
            let fan_in = h.w2.nrows();
            uniform(h.w2.as_slice_mut().unwrap(), fan_in);
            uniform(h.b2.as_slice_mut().unwrap(), fan_in);
        }
        Ok(p)
    }

    /// Every tensor, flattened, in file order.
    pub fn tensors(&self) -> Vec<&[R]> {
        let mut out: Vec<&[R]> = vec![self.emb.label.as_slice().unwrap()];
        out.extend(self.emb.attr.iter().map(|t| t.as_slice().unwrap()));
        out.extend(self.emb.rel.iter().map(|t| t.as_slice().unwrap()));
        for b in &self.blocks {
            out.extend([
                b.ln1_g.as_slice().unwrap(),
                b.ln1_b.as_slice().unwrap(),
                b.wq.as_slice().unwrap(),
                b.bq.as_slice().unwrap(),
                b.wk.as_slice().unwrap(),
                b.bk.as_slice().unwrap(),
                b.wv.as_slice().unwrap(),
                b.bv.as_slice().unwrap(),
                b.wo.as_slice().unwrap(),
                b.bo.as_slice().unwrap(),
                b.ln2_g.as_slice().unwrap(),
                b.ln2_b.as_slice().unwrap(),
                b.w1.as_slice().unwrap(),
                b.b1.as_slice().unwrap(),
                b.w2.as_slice().unwrap(),
                b.b2.as_slice().unwrap(),
            ]);
        }
        out.push(self.lnf_g.as_slice().unwrap());
        out.push(self.lnf_b.as_slice().unwrap());
        for h in &self.heads {
            out.extend([
                h.w1.as_slice().unwrap(),
                h.b1.as_slice().unwrap(),
                h.w2.as_slice().unwrap(),
                h.b2.as_slice().unwrap(),
            ]);
        }
        out
    }

    /// Mutable counterpart of [`tensors`](Self::tensors), same order.
    pub fn tensors_mut(&mut self) -> Vec<&mut [R]> {
        let Params { emb, blocks, lnf_g, lnf_b, heads, .. } = self;
        let mut out: Vec<&mut [R]> = vec![emb.label.as_slice_mut().unwrap()];
        out.extend(emb.attr.iter_mut().map(|t| t.as_slice_mut().unwrap()));
        out.extend(emb.rel.iter_mut().map(|t| t.as_slice_mut().unwrap()));
        for b in blocks {
            out.extend([
                b.ln1_g.as_slice_mut().unwrap(),
                b.ln1_b.as_slice_mut().unwrap(),
                b.wq.as_slice_mut().unwrap(),
                b.bq.as_slice_mut().unwrap(),
                b.wk.as_slice_mut().unwrap(),
                b.bk.as_slice_mut().unwrap(),
                b.wv.as_slice_mut().unwrap(),
                b.bv.as_slice_mut().unwrap(),
                b.wo.as_slice_mut().unwrap(),
                b.bo.as_slice_mut().unwrap(),
                b.ln2_g.as_slice_mut().unwrap(),
                b.ln2_b.as_slice_mut().unwrap(),
                b.w1.as_slice_mut().unwrap(),
                b.b1.as_slice_mut().unwrap(),
                b.w2.as_slice_mut().unwrap(),
                b.b2.as_slice_mut().unwrap(),
            ]);
        }
        out.push(lnf_g.as_slice_mut().unwrap());
        out.push(lnf_b.as_slice_mut().unwrap());
        for h in heads {
            out.extend([
                h.w1.as_slice_mut().unwrap(),
                h.b1.as_slice_mut().unwrap(),
                h.w2.as_slice_mut().unwrap(),
                h.b2.as_slice_mut().unwrap(),
            ]);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, &y)| *x += y);
        }
    }

    /// Same parameters in another precision.
    pub fn cast<S: Real>(&self) -> Params<S> {
        let mut out = Params::<S>::zeros(&self.config);
        for (dst, src) in out.tensors_mut().into_iter().zip(self.tensors()) {
            dst.iter_mut().zip(src).for_each(|(d, &s)| *d = S::of(s.f64()));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

fn put_u16(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u16::try_from(v).map_err(|_| Error::Config(format!("model dimension {v} too large")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Config(format!("model dimension {v} too large")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub(crate) fn encode_config(out: &mut Vec<u8>, c: &ModelConfig) -> Result<()> {
    out.push(c.mode.to_byte());
    put_u16(out, c.dald.n)?;
    for axis in &c.dald.thresholds {
        for &t in axis {
            out.extend_from_slice(&t.to_le_bytes());
        }
    }
    for v in [c.dald.k, c.dald.label_dim, c.dald.attr_dim, c.dald.rel_dim, c.layers, c.heads] {
        put_u16(out, v)?;
    }
    put_u32(out, c.ff_dim)?;
    put_u32(out, c.head_hidden)?;
    Ok(())
}

pub(crate) fn decode_config(r: &mut Reader) -> Result<ModelConfig> {
    let mode = AttributeMode::from_byte(r.u8()?).ok_or_else(|| Error::Corrupt("unknown attribute mode".into()))?;
    let n = r.u16()? as usize;
    if n == 0 || n > 10 {
        return Err(Error::Corrupt(format!("DALD n={n} out of range")));
    }
    let mut thresholds: [Vec<f32>; 3] = Default::default();
    for axis in &mut thresholds {
        for _ in 0..=n {
            axis.push(r.f32()?);
        }
    }
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.u16()? as usize;
    }
    let [k, label_dim, attr_dim, rel_dim, layers, heads] = dims;
    let ff_dim = r.u32()? as usize;
    let head_hidden = r.u32()? as usize;
    let config = ModelConfig {
        dald: DaldConfig {
            n,
            thresholds,
            k,
            label_dim,
            attr_dim,
            rel_dim,
        },
        mode,
        layers,
        heads,
        ff_dim,
        head_hidden,
    };
    config.validate().map_err(|e| Error::Corrupt(format!("model config: {e}")))?;
    if ff_dim > 1 << 16 || head_hidden > 1 << 16 || layers > 64 {
        return Err(Error::Corrupt("model config dimensions implausible".into()));
    }
    Ok(config)
}

impl Params<f32> {
    /// Model file: magic, version, config block, tensors as little-endian
    /// `f32` in [`tensors`](Params::tensors) order, trailing CRC-32.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(8 + 4 * self.parameter_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        encode_config(&mut out, &self.config)?;
        let tensors = self.tensors();
        put_u32(&mut out, tensors.len())?;
        for t in tensors {
            put_u32(&mut out, t.len())?;
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 10 || &bytes[..4] != MAGIC {
            return Err(Error::Corrupt("not a model file".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
            return Err(Error::Checksum("model file".into()));
        }
        let mut r = Reader::new(body, "model file");
        r.take(4)?;
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Corrupt(format!("unsupported model version {version}")));
        }
        let config = decode_config(&mut r)?;
        let mut p = Params::<f32>::zeros(&config);
        let count = r.u32()? as usize;
        let mut tensors = p.tensors_mut();
        if count != tensors.len() {
            return Err(Error::Corrupt(format!("model declares {count} tensors, config implies {}", tensors.len())));
        }
        for t in tensors.iter_mut() {
            let len = r.u32()? as usize;
            if len != t.len() {
                return Err(Error::Corrupt(format!("tensor length {len}, expected {}", t.len())));
            }
            let raw = r.take(4 * len)?;
            for (dst, chunk) in t.iter_mut().zip(raw.chunks_exact(4)) {
                *dst = f32::from_le_bytes(chunk.try_into().unwrap());
            }
        }
        if r.remaining() != 0 {
            return Err(Error::Corrupt("trailing bytes in model file".into()));
        }
        Ok(p)
    }

    /// Identifier recorded in bitstreams: the first 8 bytes of the file's
    /// SHA-256, little endian.
    pub fn model_hash(&self) -> Result<u64> {
        Ok(hash_bytes(&self.to_bytes()?))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub(crate) fn hash_bytes(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        let dald = DaldConfig { k: 2, label_dim: 1, attr_dim: 1, rel_dim: 0, ..DaldConfig::desk() };
        ModelConfig { heads: 2, ff_dim: 16, head_hidden: 8, ..ModelConfig::new(dald, AttributeMode::Rgb) }
    }

    #[test]
    fn serialization_roundtrip_is_bit_exact() {
        let p = Params::<f32>::init(&tiny(), 9).unwrap();
        let bytes = p.to_bytes().unwrap();
        let q = Params::<f32>::from_bytes(&bytes).unwrap();
        assert_eq!(p, q);
        assert_eq!(q.to_bytes().unwrap(), bytes);
        assert_eq!(p.model_hash().unwrap(), q.model_hash().unwrap());
    }

    #[test]
    fn corruption_detected() {
        let mut bytes = Params::<f32>::init(&tiny(), 1).unwrap().to_bytes().unwrap();
        bytes[40] ^= 1;
        assert!(matches!(Params::<f32>::from_bytes(&bytes), Err(Error::Checksum(_))));
        assert!(Params::<f32>::from_bytes(&bytes[..20]).is_err());
        assert!(Params::<f32>::from_bytes(b"nope").is_err());
    }

    #[test]
    fn init_is_seeded() {
        let a = Params::<f32>::init(&tiny(), 3).unwrap();
        assert_eq!(a, Params::<f32>::init(&tiny(), 3).unwrap());
        assert_ne!(a, Params::<f32>::init(&tiny(), 4).unwrap());
        assert_ne!(a.model_hash().unwrap(), Params::<f32>::init(&tiny(), 4).unwrap().model_hash().unwrap());
    }

    #[test]
    fn head_shapes_follow_channels() {
        let p = Params::<f32>::zeros(&tiny());
        let d = tiny().dim();
        assert_eq!(d, 8);
        assert_eq!(p.heads.len(), 3);
        assert_eq!(p.heads[2].w1.nrows(), d + 2);
        assert_eq!(p.heads[0].w2.ncols(), 511);
    }
}
