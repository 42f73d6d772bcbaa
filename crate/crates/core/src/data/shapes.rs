use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{Point3, PointCloud};
use crate::scalar::Real;

/// Analytic surfaces centered at the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Sphere { radius: f64 },
    Cube { half_extent: f64 },
    Cylinder { radius: f64, half_height: f64 },
    /// Rectangle in the `z = 0` plane.
    Plane { half_width: f64, half_depth: f64 },
    /// Ring around the z axis.
    Torus { major: f64, minor: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Sphere,
    Cube,
    Cylinder,
    Plane,
    Torus,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 5] = [Self::Sphere, Self::Cube, Self::Cylinder, Self::Plane, Self::Torus];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sphere => "sphere",
            Self::Cube => "cube",
            Self::Cylinder => "cylinder",
            Self::Plane => "plane",
            Self::Torus => "torus",
        }
    }

    /// Shape of this kind with dimensions drawn from `rng`.
    pub fn random(self, rng: &mut impl Rng) -> Shape {
        match self {
            Self::Sphere => Shape::Sphere { radius: rng.random_range(0.6..1.0) },
            Self::Cube => Shape::Cube { half_extent: rng.random_range(0.5..0.9) },
            Self::Cylinder => Shape::Cylinder {
                radius: rng.random_range(0.4..0.8),
                half_height: rng.random_range(0.5..0.9),
            },
            Self::Plane => Shape::Plane {
                half_width: rng.random_range(0.6..1.0),
                half_depth: rng.random_range(0.6..1.0),
            },
            Self::Torus => Shape::Torus {
                major: rng.random_range(0.5..0.65),
                minor: rng.random_range(0.15..0.3),
            },
        }
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid(format!("unknown shape `{s}` (expected sphere, cube, cylinder, plane or torus)")))
    }
}

impl Shape {
    pub fn kind(&self) -> ShapeKind {
        match self {
            Self::Sphere { .. } => ShapeKind::Sphere,
            Self::Cube { .. } => ShapeKind::Cube,
            Self::Cylinder { .. } => ShapeKind::Cylinder,
            Self::Plane { .. } => ShapeKind::Plane,
            Self::Torus { .. } => ShapeKind::Torus,
        }
    }

    fn validate(&self) -> Result<()> {
        let dims: Vec<f64> = match *self {
            Self::Sphere { radius } => vec![radius],
            Self::Cube { half_extent } => vec![half_extent],
            Self::Cylinder { radius, half_height } => vec![radius, half_height],
            Self::Plane { half_width, half_depth } => vec![half_width, half_depth],
            Self::Torus { major, minor } => {
                if minor >= major {
                    return Err(invalid(format!("torus: minor radius {minor} must be below major radius {major}")));
                }
                vec![major, minor]
            }
        };
        if dims.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(invalid(format!("{:?}: dimensions must be finite and positive", self)));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> [f64; 3] {
        match *self {
            Self::Sphere { radius } => loop {
                let v: [f64; 3] = [0; 3].map(|_| StandardNormal.sample(&mut *rng));
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if n > 1e-12 {
                    break v.map(|c| radius * c / n);
                }
            },
            Self::Cube { half_extent: h } => {
                let face = rng.random_range(0..6);
                let u = rng.random_range(-h..=h);
                let v = rng.random_range(-h..=h);
                let s = if face % 2 == 0 { h } else { -h };
                match face / 2 {
                    0 => [s, u, v],
                    1 => [u, s, v],
                    _ => [u, v, s],
                }
            }
            Self::Cylinder { radius: r, half_height: h } => {
                let side = 4.0 * PI * r * h;
                let cap = PI * r * r;
                let pick = rng.random_range(0.0..side + 2.0 * cap);
                let theta = rng.random_range(0.0..2.0 * PI);
                if pick < side {
                    [r * theta.cos(), r * theta.sin(), rng.random_range(-h..=h)]
                } else {
                    let rho = r * rng.random_range(0.0f64..=1.0).sqrt();
                    let z = if pick < side + cap { h } else { -h };
                    [rho * theta.cos(), rho * theta.sin(), z]
                }
            }
            Self::Plane { half_width, half_depth } => {
                [rng.random_range(-half_width..=half_width), rng.random_range(-half_depth..=half_depth), 0.0]
            }
            Self::Torus { major, minor } => loop {
                // area element is proportional to major + minor * cos(tube angle)
                let tube = rng.random_range(0.0..2.0 * PI);
                let ring = rng.random_range(0.0..2.0 * PI);
                let accept = (major + minor * tube.cos()) / (major + minor);
                if rng.random_range(0.0..1.0) < accept {
                    let w = major + minor * tube.cos();
                    break [w * ring.cos(), w * ring.sin(), minor * tube.sin()];
                }
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub shape: Shape,
    pub samples: usize,
    pub seed: u64,
}

/// Uniform surface samples of `spec.shape`, scaled down uniformly when the
/// surface leaves `[-1, 1]^3`.
pub fn generate_shape<T: Real>(spec: &ShapeSpec) -> Result<PointCloud<T>> {
    spec.shape.validate()?;
    if spec.samples == 0 {
        return Err(invalid("generate_shape: samples must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let raw: Vec<[f64; 3]> = (0..spec.samples).map(|_| spec.shape.sample(&mut rng)).collect();
    let extent = raw.iter().flatten().fold(0.0f64, |m, c| m.max(c.abs()));
    let scale = if extent > 1.0 { 1.0 / extent } else { 1.0 };
    let points: Vec<Point3<T>> = raw.iter().map(|p| p.map(|c| T::lit(c * scale))).collect();
    PointCloud::new(points)
}
