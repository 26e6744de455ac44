//! Rate-distortion sweeps and the Bjøntegaard delta rate.

use nalgebra::{DMatrix, DVector};
use pcvox_core::bitcodec::Bitstream;
use pcvox_core::pcgeom::metrics::{peak_for_depth, point_distortion};
use pcvox_core::pcgeom::{estimate_normals_points, quantize};
use pcvox_core::{octcodec, Error, PointCloud, Result, VoxelCloud};
use pcvox_learn::{SurrogateModel, VoxNet};

/// Lossless stage applied after preprocessing.
#[derive(Debug, Clone, Copy)]
pub enum Codec<'a> {
    Octree,
    Surrogate(&'a SurrogateModel<f32>),
}

impl Codec<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Codec::Octree => "octree",
            Codec::Surrogate(_) => "surrogate",
        }
    }

    fn encode(&self, vc: &VoxelCloud, scale: f64) -> Result<Bitstream> {
        match self {
            Codec::Octree => Ok(octcodec::encode(vc, scale as f32)),
            Codec::Surrogate(m) => m.lossless_encode(vc, scale as f32),
        }
    }

    fn decode(&self, bs: &Bitstream) -> Result<VoxelCloud> {
        match self {
            Codec::Octree => octcodec::decode(bs),
            Codec::Surrogate(m) => m.lossless_decode(bs),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RdPoint {
    pub cloud: String,
    /// `plain` or `voxnet`.
    pub chain: String,
    pub codec: String,
    pub lambda: Option<f64>,
    pub scale: f64,
    pub coded_points: usize,
    pub input_points: usize,
    pub payload_bits: u64,
    /// Payload bits per original input point.
    pub bpp: f64,
    pub d1_psnr: f64,
    pub d2_psnr: f64,
}

/// Samples of one curve, strictly increasing in rate.
#[derive(Debug, Clone, PartialEq)]
pub struct RdCurve {
    pub samples: Vec<(f64, f64)>,
}

impl RdCurve {
    pub fn new(mut samples: Vec<(f64, f64)>) -> Result<Self> {
        samples.sort_by(|a, b| a.0.total_cmp(&b.0));
        if samples.len() < 4 {
            return Err(Error::contract(format!("an RD curve needs at least 4 samples, got {}", samples.len())));
        }
        if samples.iter().any(|(r, d)| !(r.is_finite() && d.is_finite() && *r > 0.0)) {
            return Err(Error::contract("RD samples must be finite with positive rate"));
        }
        if samples.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::contract("RD samples must have distinct rates"));
        }
        Ok(Self { samples })
    }

    /// The lower-rate, higher-quality frontier of `points`: a point survives
    /// iff every cheaper point has strictly lower PSNR.
    pub fn pareto(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
        let mut p = points.to_vec();
        p.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
        let mut out: Vec<(f64, f64)> = Vec::new();
        for q in p {
            if out.last().is_none_or(|l| q.1 > l.1 && q.0 > l.0) {
                out.push(q);
            }
        }
        out
    }
}

/// Least-squares cubic `y = c0 + c1 x + c2 x^2 + c3 x^3`.
fn cubic_fit(xs: &[f64], ys: &[f64]) -> Result<[f64; 4]> {
    let a = DMatrix::from_fn(xs.len(), 4, |i, j| xs[i].powi(j as i32));
    let b = DVector::from_column_slice(ys);
    let c = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| Error::Numerical(format!("cubic fit failed: {e}")))?;
    Ok([c[0], c[1], c[2], c[3]])
}

fn trapezoid(c: &[f64; 4], lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / (n - 1) as f64;
    let f = |x: f64| c[0] + x * (c[1] + x * (c[2] + x * c[3]));
    let inner: f64 = (1..n - 1).map(|i| f(lo + i as f64 * h)).sum();
    h * (0.5 * (f(lo) + f(hi)) + inner)
}

/// Average rate difference of `test` against `reference` in percent over
/// their common PSNR interval: cubic fits of `ln(rate)` against PSNR,
/// integrated with the trapezoid rule on 100 samples.
pub fn bd_rate(reference: &RdCurve, test: &RdCurve) -> Result<f64> {
    let split = |c: &RdCurve| -> (Vec<f64>, Vec<f64>) { c.samples.iter().map(|&(r, d)| (d, r.ln())).unzip() };
    let (dr, lr) = split(reference);
    let (dt, lt) = split(test);
    let range = |d: &[f64]| (d.iter().copied().fold(f64::INFINITY, f64::min), d.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let (r0, r1) = range(&dr);
    let (t0, t1) = range(&dt);
    let (lo, hi) = (r0.max(t0), r1.min(t1));
    if !(hi > lo) {
        return Err(Error::contract(format!(
            "PSNR ranges [{r0:.3}, {r1:.3}] and [{t0:.3}, {t1:.3}] do not overlap"
        )));
    }
    let cr = cubic_fit(&dr, &lr)?;
    let ct = cubic_fit(&dt, &lt)?;
    let avg = (trapezoid(&ct, lo, hi, 100) - trapezoid(&cr, lo, hi, 100)) / (hi - lo);
    Ok((avg.exp() - 1.0) * 100.0)
}

/// A test cloud prepared for evaluation: original points and reference
/// normals for D2.
#[derive(Debug, Clone)]
pub struct EvalCloud {
    pub name: String,
    pub points: PointCloud<f64>,
    pub normals: Vec<[f64; 3]>,
}

impl EvalCloud {
    pub fn new(name: impl Into<String>, points: PointCloud<f64>) -> Result<Self> {
        let normals = match points.normals() {
            Some(n) => n.iter().map(|v| *v).collect(),
            None => estimate_normals_points(&points.points_f64(), 9)?.normals,
        };
        Ok(Self { name: name.into(), points, normals })
    }
}

/// Encodes, decodes (failing on any mismatch), dequantizes and measures one
/// preprocessed cloud.
pub fn measure(
    original: &EvalCloud,
    coded: &VoxelCloud,
    scale: f64,
    codec: Codec<'_>,
    chain: &str,
    lambda: Option<f64>,
) -> Result<(RdPoint, Bitstream)> {
    let bs = codec.encode(coded, scale)?;
    let back = codec.decode(&Bitstream::from_bytes(&bs.to_bytes()?)?)?;
    if &back != coded {
        return Err(Error::integrity(format!("{}: lossless stage did not reproduce its input", original.name)));
    }
    let rec = back.dequantize(scale);
    let peak = peak_for_depth(coded.depth());
    let rep = point_distortion(&original.points.points_f64(), &rec, peak, Some(&original.normals))?;
    let bits = bs.payload_bits();
    Ok((
        RdPoint {
            cloud: original.name.clone(),
            chain: chain.into(),
            codec: codec.name().into(),
            lambda,
            scale,
            coded_points: back.len(),
            input_points: original.points.len(),
            payload_bits: bits,
            bpp: bits as f64 / original.points.len() as f64,
            d1_psnr: rep.d1_psnr,
            d2_psnr: rep.d2_psnr.expect("normals supplied"),
        },
        bs,
    ))
}

/// Plain quantization at every scale, then the lossless codec.
pub fn plain_sweep(cloud: &EvalCloud, scales: &[f64], depth: u8, codec: Codec<'_>) -> Result<Vec<(RdPoint, Bitstream)>> {
    scales.iter().map(|&s| measure(cloud, &quantize(&cloud.points, s, depth)?, s, codec, "plain", None)).collect()
}

/// Every (lambda, scale) operating point of the voxelization chain.
pub fn voxnet_sweep(
    cloud: &EvalCloud,
    scales: &[f64],
    depth: u8,
    models: &[(f64, VoxNet<f32>)],
    codec: Codec<'_>,
) -> Result<Vec<(RdPoint, Bitstream)>> {
    let mut out = Vec::new();
    for (lambda, m) in models {
        for &s in scales {
            let v = m.voxelize(&cloud.points, s, depth)?;
            out.push(measure(cloud, &v.cloud, s, codec, "voxnet", Some(*lambda))?);
        }
    }
    Ok(out)
}

/// The RD curve of one chain for one cloud (D1 PSNR); voxnet chains keep
/// their Pareto frontier.
pub fn curve_of(points: &[RdPoint], d2: bool) -> Result<RdCurve> {
    let raw: Vec<(f64, f64)> = points.iter().map(|p| (p.bpp, if d2 { p.d2_psnr } else { p.d1_psnr })).collect();
    RdCurve::new(RdCurve::pareto(&raw))
}

/// File name for the bitstream of `p`.
pub fn stream_name(p: &RdPoint) -> String {
    match p.lambda {
        Some(l) => format!("{}_{}_{}_lambda{l}_scale{}.pvx", p.cloud, p.chain, p.codec, p.scale),
        None => format!("{}_{}_{}_scale{}.pvx", p.cloud, p.chain, p.codec, p.scale),
    }
}

/// BD-rate of the voxnet chain against plain quantization for one cloud.
pub fn cloud_bd_rate(plain: &[RdPoint], voxnet: &[RdPoint], d2: bool) -> Result<f64> {
    bd_rate(&curve_of(plain, d2)?, &curve_of(voxnet, d2)?)
}
