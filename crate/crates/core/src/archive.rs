//! `FMOD` model archives: a fitted preprocessor plus class densities.
//!
//! ```text
//! "FMOD"           4 bytes
//! version          u8 (= 1)
//! body_len         u64
//! body:
//!   kind           u8 (0 tied, 1 separate, 2 gmm)
//!   provenance     u32 length + UTF-8
//!   section        u8 tag (1 = preprocessor) + u64 length + payload
//!   section        u8 tag (2 = density)      + u64 length + payload
//! ```
//!
//! Every parameter is stored as a little-endian `f64`, so a save/load cycle
//! is bit-exact. Loading re-checks the invariants of everything it rebuilds.

use std::fs;
use std::path::Path;

use crate::density::{ClassDensities, DensityKind, DensityModel, GaussianParams, GmmParams, TiedParams};
use crate::error::{Error, Result};
use crate::features::SpatialShape;
use crate::numerics::{CholeskyFactor, SymMatrix};
use crate::preprocess::Preprocessor;

pub const ARCHIVE_MAGIC: &[u8; 4] = b"FMOD";
pub const ARCHIVE_VERSION: u8 = 1;
const SECTION_PREPROCESSOR: u8 = 1;
const SECTION_DENSITY: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelArchive {
    pub format_version: u8,
    pub preprocessor: Preprocessor,
    pub density: DensityModel,
    pub provenance: String,
}

impl ModelArchive {
    pub fn new(preprocessor: Preprocessor, density: DensityModel, provenance: impl Into<String>) -> Result<Self> {
        if preprocessor.output_dims() != density.dim() {
            return Err(Error::DimensionMismatch {
                expected: preprocessor.output_dims(),
                actual: density.dim(),
            });
        }
        Ok(ModelArchive {
            format_version: ARCHIVE_VERSION,
            preprocessor,
            density,
            provenance: provenance.into(),
        })
    }

    pub fn kind(&self) -> DensityKind {
        self.density.kind()
    }
}

#[derive(Default)]
struct Enc(Vec<u8>);

impl Enc {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} does not fit in u32")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        v.iter().for_each(|&x| self.f64(x));
    }
    fn str(&mut self, s: &str) -> Result<()> {
        self.u32(s.len())?;
        self.0.extend_from_slice(s.as_bytes());
        Ok(())
    }
    fn section(&mut self, tag: u8, payload: Enc) {
        self.u8(tag);
        self.u64(payload.0.len() as u64);
        self.0.extend(payload.0);
    }
    fn sym(&mut self, m: &SymMatrix) {
        self.f64s(m.packed());
    }
    fn chol(&mut self, c: &CholeskyFactor) {
        self.f64s(c.packed());
        self.f64(c.log_det());
        self.f64(c.jitter_applied());
    }
    fn gaussian(&mut self, g: &GaussianParams) {
        self.f64s(g.mean());
        self.sym(g.cov());
        self.chol(g.chol());
    }
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptArchive(msg.into())
}

struct Dec<'a> {
    buf: &'a [u8],
}

impl<'a> Dec<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(corrupt("unexpected end of data"));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| corrupt("length overflow"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("provenance is not UTF-8"))
    }
    fn section(&mut self, tag: u8) -> Result<Dec<'a>> {
        if self.u8()? != tag {
            return Err(corrupt(format!("expected section {tag}")));
        }
        let len = usize::try_from(self.u64()?).map_err(|_| corrupt("section too large"))?;
        Ok(Dec { buf: self.take(len)? })
    }
    fn finish(&self, what: &str) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(corrupt(format!("{} trailing bytes in {what}", self.buf.len())))
        }
    }
    fn sym(&mut self, d: usize) -> Result<SymMatrix> {
        SymMatrix::from_packed(d, self.f64s(d * (d + 1) / 2)?).map_err(|e| corrupt(e.to_string()))
    }
    fn chol(&mut self, d: usize) -> Result<CholeskyFactor> {
        let lower = self.f64s(d * (d + 1) / 2)?;
        let log_det = self.f64()?;
        let jitter = self.f64()?;
        CholeskyFactor::from_parts(d, lower, log_det, jitter).map_err(|e| corrupt(e.to_string()))
    }
    fn gaussian(&mut self, d: usize) -> Result<GaussianParams> {
        let mean = self.f64s(d)?;
        let cov = self.sym(d)?;
        let chol = self.chol(d)?;
        GaussianParams::from_parts(mean, cov, chol)
    }
}

fn encode_preprocessor(p: &Preprocessor) -> Result<Enc> {
    let mut e = Enc::default();
    e.u32(p.pool_factor)?;
    e.u32(p.input_dims)?;
    match p.input_shape {
        Some(s) => {
            e.u8(1);
            e.u32(s.channels)?;
            e.u32(s.height)?;
            e.u32(s.width)?;
        }
        None => e.u8(0),
    }
    e.f64(p.retained_variance_target);
    e.u32(p.pooled_dims())?;
    e.u32(p.output_dims())?;
    e.f64(p.total_variance);
    e.f64s(&p.component_variances);
    e.f64s(&p.pca_mean);
    e.f64s(&p.pca_basis);
    Ok(e)
}

fn decode_preprocessor(mut d: Dec<'_>) -> Result<Preprocessor> {
    let pool_factor = d.u32()?;
    let input_dims = d.u32()?;
    let input_shape = match d.u8()? {
        0 => None,
        1 => Some(SpatialShape::new(d.u32()?, d.u32()?, d.u32()?)),
        other => return Err(corrupt(format!("bad shape flag {other}"))),
    };
    let retained_variance_target = d.f64()?;
    let n = d.u32()?;
    let out = d.u32()?;
    let total_variance = d.f64()?;
    let component_variances = d.f64s(out)?;
    let pca_mean = d.f64s(n)?;
    let pca_basis = d.f64s(n.checked_mul(out).ok_or_else(|| corrupt("basis too large"))?)?;
    d.finish("preprocessor section")?;
    let p = Preprocessor {
        pool_factor,
        input_dims,
        input_shape,
        retained_variance_target,
        pca_mean,
        pca_basis,
        component_variances,
        total_variance,
    };
    p.validate()?;
    Ok(p)
}

fn encode_density(m: &DensityModel) -> Result<Enc> {
    let mut e = Enc::default();
    e.u32(m.n_classes())?;
    e.u32(m.dim())?;
    e.f64s(m.class_priors());
    match m.params() {
        ClassDensities::Tied(t) => {
            e.sym(t.cov());
            e.chol(t.chol());
            t.means().iter().for_each(|mu| e.f64s(mu));
        }
        ClassDensities::Separate(g) => g.iter().for_each(|p| e.gaussian(p)),
        ClassDensities::Gmm(g) => {
            for mix in g {
                e.u32(mix.n_components())?;
                e.f64s(mix.weights());
                mix.components().iter().for_each(|c| e.gaussian(c));
            }
        }
    }
    Ok(e)
}

fn decode_density(mut d: Dec<'_>, kind: DensityKind) -> Result<DensityModel> {
    let n = d.u32()?;
    let dim = d.u32()?;
    if n == 0 || dim == 0 {
        return Err(corrupt("empty density section"));
    }
    let priors = d.f64s(n)?;
    let params = match kind {
        DensityKind::Tied => {
            let cov = d.sym(dim)?;
            let chol = d.chol(dim)?;
            let means = (0..n).map(|_| d.f64s(dim)).collect::<Result<Vec<_>>>()?;
            ClassDensities::Tied(TiedParams::from_parts(means, cov, chol)?)
        }
        DensityKind::Separate => {
            ClassDensities::Separate((0..n).map(|_| d.gaussian(dim)).collect::<Result<Vec<_>>>()?)
        }
        DensityKind::Gmm => {
            let mut mixtures = Vec::with_capacity(n);
            for _ in 0..n {
                let k = d.u32()?;
                let weights = d.f64s(k)?;
                let comps = (0..k).map(|_| d.gaussian(dim)).collect::<Result<Vec<_>>>()?;
                mixtures.push(GmmParams::new(weights, comps).map_err(|e| corrupt(e.to_string()))?);
            }
            ClassDensities::Gmm(mixtures)
        }
    };
    d.finish("density section")?;
    DensityModel::new(dim, priors, params).map_err(|e| corrupt(e.to_string()))
}

fn kind_tag(kind: DensityKind) -> u8 {
    match kind {
        DensityKind::Tied => 0,
        DensityKind::Separate => 1,
        DensityKind::Gmm => 2,
    }
}

pub fn encode_model(m: &ModelArchive) -> Result<Vec<u8>> {
    let mut body = Enc::default();
    body.u8(kind_tag(m.kind()));
    body.str(&m.provenance)?;
    body.section(SECTION_PREPROCESSOR, encode_preprocessor(&m.preprocessor)?);
    body.section(SECTION_DENSITY, encode_density(&m.density)?);

    let mut out = Vec::with_capacity(body.0.len() + 13);
    out.extend_from_slice(ARCHIVE_MAGIC);
    out.push(ARCHIVE_VERSION);
    out.extend_from_slice(&(body.0.len() as u64).to_le_bytes());
    out.extend(body.0);
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelArchive> {
    let mut d = Dec { buf: bytes };
    if d.take(4).ok() != Some(&ARCHIVE_MAGIC[..]) {
        return Err(corrupt("bad magic"));
    }
    let version = d.u8()?;
    if version != ARCHIVE_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let len = usize::try_from(d.u64()?).map_err(|_| corrupt("body too large"))?;
    let mut body = Dec { buf: d.take(len)? };
    d.finish("archive")?;

    let kind = match body.u8()? {
        0 => DensityKind::Tied,
        1 => DensityKind::Separate,
        2 => DensityKind::Gmm,
        other => return Err(corrupt(format!("unknown density kind {other}"))),
    };
    let provenance = body.str()?;
    let preprocessor = decode_preprocessor(body.section(SECTION_PREPROCESSOR)?)?;
    let density = decode_density(body.section(SECTION_DENSITY)?, kind)?;
    body.finish("archive body")?;
    let mut archive = ModelArchive::new(preprocessor, density, provenance)
        .map_err(|_| corrupt("preprocessor output does not match density dimension"))?;
    archive.format_version = version;
    Ok(archive)
}

pub fn save_model(m: &ModelArchive, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_model(m)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelArchive> {
    decode_model(&fs::read(path)?)
}
