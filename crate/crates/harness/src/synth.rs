//! Parametric surfaces sampled densely, randomly rotated and quantized.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Rotation3, UnitQuaternion, Vector3};
use pcvox_core::pcgeom::quantize;
use pcvox_core::{Error, PointCloud, Result, VoxelCloud};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Sphere,
    Torus,
    Superquadric,
    BoxUnion,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [ShapeKind::Sphere, ShapeKind::Torus, ShapeKind::Superquadric, ShapeKind::BoxUnion];
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Torus => "torus",
            ShapeKind::Superquadric => "superquadric",
            ShapeKind::BoxUnion => "box_union",
        })
    }
}

impl FromStr for ShapeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "sphere" => ShapeKind::Sphere,
            "torus" => ShapeKind::Torus,
            "superquadric" => ShapeKind::Superquadric,
            "box_union" => ShapeKind::BoxUnion,
            _ => return Err(Error::Config(format!("unknown shape {s:?}"))),
        })
    }
}

/// Shape parameters in the shape's own frame, centred at the origin.
#[derive(Debug, Clone, PartialEq)]
pub enum Surface {
    Sphere { r: f64 },
    Torus { major: f64, minor: f64 },
    /// `(|x/a|^(2/e2) + |y/b|^(2/e2))^(e2/e1) + |z/c|^(2/e1) = 1`
    Superquadric { a: f64, b: f64, c: f64, e1: f64, e2: f64 },
    /// Union of axis-aligned boxes given as `(min, max)` corners.
    BoxUnion { boxes: Vec<([f64; 3], [f64; 3])> },
}

impl Surface {
    /// Distance from `p` (shape frame) to the surface. Exact for spheres,
    /// tori and box unions; for superquadrics the radial distance along the
    /// ray from the origin, which bounds the true distance from above.
    pub fn distance(&self, p: [f64; 3]) -> f64 {
        let [x, y, z] = p;
        match self {
            Surface::Sphere { r } => ((x * x + y * y + z * z).sqrt() - r).abs(),
            Surface::Torus { major, minor } => {
                let q = (x * x + y * y).sqrt() - major;
                ((q * q + z * z).sqrt() - minor).abs()
            }
            Surface::Superquadric { .. } => {
                let n = (x * x + y * y + z * z).sqrt();
                if n == 0.0 {
                    return f64::INFINITY;
                }
                let t = self.radial(p.map(|v| v / n));
                (n - t).abs()
            }
            Surface::BoxUnion { boxes } => {
                let inside = boxes.iter().any(|b| box_sdf(p, b) < 0.0);
                if inside {
                    // Depth below the union's surface.
                    boxes.iter().map(|b| -box_sdf(p, b)).filter(|d| *d > 0.0).fold(0.0, f64::max)
                } else {
                    boxes.iter().map(|b| box_sdf(p, b)).fold(f64::INFINITY, f64::min)
                }
            }
        }
    }

    /// Superquadric radius along the unit direction `d`.
    fn radial(&self, d: [f64; 3]) -> f64 {
        let Surface::Superquadric { a, b, c, e1, e2 } = *self else { unreachable!() };
        let f = ((d[0] / a).abs().powf(2.0 / e2) + (d[1] / b).abs().powf(2.0 / e2)).powf(e2 / e1)
            + (d[2] / c).abs().powf(2.0 / e1);
        f.powf(-e1 / 2.0)
    }

    /// Approximately `density` samples per unit area.
    fn sample<R: Rng>(&self, density: f64, rng: &mut R) -> Vec<[f64; 3]> {
        match self {
            Surface::Sphere { r } => {
                let n = (density * 4.0 * PI * r * r).ceil() as usize;
                (0..n).map(|_| unit(rng).map(|v| v * r)).collect()
            }
            Surface::Torus { major, minor } => {
                let n = (density * 4.0 * PI * PI * major * minor).ceil() as usize;
                let mut out = Vec::with_capacity(n);
                while out.len() < n {
                    let u = rng.random_range(0.0..2.0 * PI);
                    let v = rng.random_range(0.0..2.0 * PI);
                    // Area element is proportional to major + minor cos v.
                    if rng.random_range(0.0..major + minor) <= major + minor * v.cos() {
                        let w = major + minor * v.cos();
                        out.push([w * u.cos(), w * u.sin(), minor * v.sin()]);
                    }
                }
                out
            }
            Surface::Superquadric { a, b, c, .. } => {
                // Radial projection of uniform directions; oversampled by the
                // largest axis ratio to keep flat regions dense.
                let mean = (a * b + b * c + c * a) / 3.0;
                let stretch = a.max(*b).max(*c) / a.min(*b).min(*c);
                let n = (density * 4.0 * PI * mean * stretch * 2.0).ceil() as usize;
                (0..n)
                    .map(|_| {
                        let d = unit(rng);
                        let t = self.radial(d);
                        d.map(|v| v * t)
                    })
                    .collect()
            }
            Surface::BoxUnion { boxes } => {
                let mut out = Vec::new();
                for (lo, hi) in boxes {
                    let e = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
                    for axis in 0..3 {
                        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                        let n = (density * e[u] * e[v]).ceil() as usize;
                        for side in [lo[axis], hi[axis]] {
                            for _ in 0..n {
                                let mut p = [0.0; 3];
                                p[axis] = side;
                                p[u] = rng.random_range(lo[u]..hi[u]);
                                p[v] = rng.random_range(lo[v]..hi[v]);
                                if !boxes.iter().any(|b| box_sdf(p, b) < -1e-9) {
                                    out.push(p);
                                }
                            }
                        }
                    }
                }
                out
            }
        }
    }
}

fn box_sdf(p: [f64; 3], (lo, hi): &([f64; 3], [f64; 3])) -> f64 {
    let mut outside = 0.0;
    let mut inside = f64::NEG_INFINITY;
    for k in 0..3 {
        let c = (lo[k] + hi[k]) / 2.0;
        let h = (hi[k] - lo[k]) / 2.0;
        let q = (p[k] - c).abs() - h;
        outside += q.max(0.0).powi(2);
        inside = inside.max(q);
    }
    if outside > 0.0 {
        outside.sqrt()
    } else {
        inside
    }
}

fn unit<R: Rng>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-12 {
            return v.map(|x| x / n);
        }
    }
}

/// What to generate.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub shapes: Vec<ShapeKind>,
    pub count: usize,
    pub depth: u8,
    /// Surface samples per unit area (voxel units).
    pub density: f64,
    /// Range of the characteristic radius in voxels.
    pub min_size: f64,
    pub max_size: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self { shapes: ShapeKind::ALL.to_vec(), count: 8, depth: 8, density: 2.0, min_size: 12.0, max_size: 24.0 }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCloud {
    pub name: String,
    pub kind: ShapeKind,
    pub surface: Surface,
    pub rotation: Rotation3<f64>,
    pub center: [f64; 3],
    /// Dense samples in grid units, before quantization.
    pub points: PointCloud<f64>,
    /// `points` quantized at scale 1.
    pub voxels: VoxelCloud,
}

impl SynthCloud {
    /// Maps a grid-space point into the shape frame.
    pub fn to_shape_frame(&self, p: [f64; 3]) -> [f64; 3] {
        let v = Vector3::new(p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]);
        let q = self.rotation.inverse() * v;
        [q.x, q.y, q.z]
    }

    pub fn surface_distance(&self, p: [f64; 3]) -> f64 {
        self.surface.distance(self.to_shape_frame(p))
    }
}

fn make_surface<R: Rng>(kind: ShapeKind, size: f64, rng: &mut R) -> Surface {
    match kind {
        ShapeKind::Sphere => Surface::Sphere { r: size },
        ShapeKind::Torus => {
            let minor = size * rng.random_range(0.25..0.45);
            Surface::Torus { major: size - minor, minor }
        }
        ShapeKind::Superquadric => Surface::Superquadric {
            a: size,
            b: size * rng.random_range(0.6..1.0),
            c: size * rng.random_range(0.5..1.0),
            e1: rng.random_range(0.3..1.5),
            e2: rng.random_range(0.3..1.5),
        },
        ShapeKind::BoxUnion => {
            let n = rng.random_range(2..=3);
            let boxes = (0..n)
                .map(|_| {
                    let c = [0; 3].map(|_: i32| rng.random_range(-0.4 * size..0.4 * size));
                    let h = [0; 3].map(|_: i32| rng.random_range(0.3 * size..0.6 * size));
                    ([c[0] - h[0], c[1] - h[1], c[2] - h[2]], [c[0] + h[0], c[1] + h[1], c[2] + h[2]])
                })
                .collect();
            Surface::BoxUnion { boxes }
        }
    }
}

/// Generates `spec.count` clouds cycling through `spec.shapes`.
pub fn synth_dataset(spec: &SynthSpec, seed: u64) -> Result<Vec<SynthCloud>> {
    if spec.shapes.is_empty() || !(spec.density > 0.0) || !(0.0 < spec.min_size && spec.min_size <= spec.max_size) {
        return Err(Error::Config(format!("invalid synthetic dataset spec {spec:?}")));
    }
    let side = (1u64 << spec.depth) as f64;
    if 2.0 * spec.max_size * 1.8 + 4.0 > side {
        return Err(Error::Config(format!("shapes of size {} do not fit a depth {} grid", spec.max_size, spec.depth)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let kind = spec.shapes[i % spec.shapes.len()];
        let size = rng.random_range(spec.min_size..=spec.max_size);
        let surface = make_surface(kind, size, &mut rng);
        let q = [0; 4].map(|_: i32| rng.sample::<f64, _>(StandardNormal));
        let rotation = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3])).to_rotation_matrix();
        let margin = 1.8 * spec.max_size + 2.0;
        let center = [0; 3].map(|_: i32| rng.random_range(margin..side - 1.0 - margin));
        let pts: Vec<[f64; 3]> = surface
            .sample(spec.density, &mut rng)
            .into_iter()
            .map(|p| {
                let v = rotation * Vector3::new(p[0], p[1], p[2]);
                [v.x + center[0], v.y + center[1], v.z + center[2]]
            })
            .collect();
        let points = PointCloud::new(pts)?;
        let voxels = quantize(&points, 1.0, spec.depth)?;
        out.push(SynthCloud { name: format!("{kind}_{i:03}"), kind, surface, rotation, center, points, voxels });
    }
    Ok(out)
}
