//! Ray-cast synthetic scenes with analytic depth.
//!
//! The camera sits at the origin looking down `+z` (image `y` points down)
//! and moves forward by `velocity` metres per frame. Depth is the `z`
//! distance to the first hit. Surfaces are checker-textured and attenuated
//! with distance so that intensity carries a depth cue.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{FloatMap, RgbImage};
use crate::error::{Error, Result};

/// Ground truth never exceeds this depth; farther hits are marked invalid.
pub const MAX_DEPTH: f64 = 80.0;
const NEAR: f64 = 1e-3;

type Vec3 = [f64; 3];

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    /// Plane `z = depth` facing the camera.
    FrontalPlane { depth: f64, color: Vec3 },
    Plane { point: Vec3, normal: Vec3, color: Vec3 },
    Sphere { center: Vec3, radius: f64, color: Vec3 },
    /// Axis-aligned box.
    Cuboid { min: Vec3, max: Vec3, color: Vec3 },
}

impl Primitive {
    fn color(&self) -> Vec3 {
        match self {
            Primitive::FrontalPlane { color, .. }
            | Primitive::Plane { color, .. }
            | Primitive::Sphere { color, .. }
            | Primitive::Cuboid { color, .. } => *color,
        }
    }

    /// Ray parameter of the nearest hit in front of `origin`.
    fn intersect(&self, origin: Vec3, dir: Vec3) -> Option<f64> {
        let hit = match self {
            Primitive::FrontalPlane { depth, .. } => Some((depth - origin[2]) / dir[2]),
            Primitive::Plane { point, normal, .. } => {
                let denom = dot(*normal, dir);
                (denom.abs() > 1e-12).then(|| dot(*normal, sub(*point, origin)) / denom)
            }
            Primitive::Sphere { center, radius, .. } => {
                let oc = sub(origin, *center);
                let a = dot(dir, dir);
                let b = 2.0 * dot(dir, oc);
                let c = dot(oc, oc) - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    None
                } else {
                    let sq = disc.sqrt();
                    let near = (-b - sq) / (2.0 * a);
                    let far = (-b + sq) / (2.0 * a);
                    if near > NEAR {
                        Some(near)
                    } else {
                        Some(far)
                    }
                }
            }
            Primitive::Cuboid { min, max, .. } => {
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                for i in 0..3 {
                    if dir[i].abs() < 1e-12 {
                        if origin[i] < min[i] || origin[i] > max[i] {
                            return None;
                        }
                        continue;
                    }
                    let a = (min[i] - origin[i]) / dir[i];
                    let b = (max[i] - origin[i]) / dir[i];
                    t0 = t0.max(a.min(b));
                    t1 = t1.min(a.max(b));
                }
                if t0 > t1 {
                    None
                } else if t0 > NEAR {
                    Some(t0)
                } else {
                    Some(t1)
                }
            }
        };
        hit.filter(|t| *t > NEAR && t.is_finite())
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidScene(msg.to_string()));
        match self {
            Primitive::FrontalPlane { depth, .. } if !depth.is_finite() => bad("plane depth must be finite"),
            Primitive::Plane { normal, .. } if dot(*normal, *normal) < 1e-12 => bad("plane normal is zero"),
            Primitive::Sphere { radius, .. } if !(*radius > 0.0) => bad("sphere radius must be > 0"),
            Primitive::Cuboid { min, max, .. } if (0..3).any(|i| !(min[i] < max[i])) => {
                bad("box min must be below max on every axis")
            }
            _ => Ok(()),
        }
    }

    fn translated(&self, by: Vec3) -> Primitive {
        let add = |a: Vec3| [a[0] + by[0], a[1] + by[1], a[2] + by[2]];
        match self.clone() {
            Primitive::FrontalPlane { depth, color } => Primitive::FrontalPlane {
                depth: depth + by[2],
                color,
            },
            Primitive::Plane { point, normal, color } => Primitive::Plane {
                point: add(point),
                normal,
                color,
            },
            Primitive::Sphere { center, radius, color } => Primitive::Sphere {
                center: add(center),
                radius,
                color,
            },
            Primitive::Cuboid { min, max, color } => Primitive::Cuboid {
                min: add(min),
                max: add(max),
                color,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MovingObject {
    pub shape: Primitive,
    /// World-space displacement per frame.
    pub velocity: Vec3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// Camera forward motion in metres per frame.
    pub velocity: f64,
    /// Focal length in units of image width.
    pub focal: f64,
    pub primitives: Vec<Primitive>,
    #[serde(default)]
    pub moving_object: Option<MovingObject>,
    /// Std-dev of Gaussian noise added to RGB.
    #[serde(default)]
    pub noise: f64,
    /// Probability that a pixel's ground truth is marked invalid.
    #[serde(default)]
    pub invalid_fraction: f64,
    /// Distance at which surface brightness has dropped to `1/e`.
    pub fog: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::InvalidScene(msg.into())) };
        check(self.velocity.is_finite(), "velocity must be finite")?;
        check(self.focal > 0.0, "focal length must be > 0")?;
        check(self.fog > 0.0, "fog distance must be > 0")?;
        check(self.noise >= 0.0, "noise must be >= 0")?;
        check(
            (0.0..=1.0).contains(&self.invalid_fraction),
            "invalid fraction must lie in [0, 1]",
        )?;
        check(
            !self.primitives.is_empty() || self.moving_object.is_some(),
            "scene has no primitives",
        )?;
        for p in &self.primitives {
            p.validate()?;
        }
        if let Some(m) = &self.moving_object {
            m.shape.validate()?;
        }
        Ok(())
    }

    /// A frontal back wall, a floor, a few objects and optionally a mover.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce7_e5ee_d000_0001);
        let color = |rng: &mut ChaCha8Rng| -> Vec3 {
            [
                rng.random_range(0.4..1.0),
                rng.random_range(0.4..1.0),
                rng.random_range(0.4..1.0),
            ]
        };
        let mut primitives = vec![
            Primitive::FrontalPlane {
                depth: rng.random_range(50.0..70.0),
                color: color(&mut rng),
            },
            Primitive::Plane {
                point: [0.0, rng.random_range(1.2..2.0), 0.0],
                normal: [0.0, -1.0, 0.0],
                color: color(&mut rng),
            },
        ];
        for _ in 0..rng.random_range(2..=4usize) {
            let z = rng.random_range(12.0..40.0);
            let x = rng.random_range(-0.4..0.4) * z;
            let y = rng.random_range(-0.3..0.2) * z;
            if rng.random_bool(0.5) {
                primitives.push(Primitive::Sphere {
                    center: [x, y, z],
                    radius: rng.random_range(1.0..4.0),
                    color: color(&mut rng),
                });
            } else {
                let half = rng.random_range(0.8..3.0);
                primitives.push(Primitive::Cuboid {
                    min: [x - half, y - half, z - half],
                    max: [x + half, y + half, z + half],
                    color: color(&mut rng),
                });
            }
        }
        let moving_object = rng.random_bool(0.5).then(|| MovingObject {
            shape: Primitive::Sphere {
                center: [rng.random_range(-6.0..6.0), 0.0, rng.random_range(10.0..25.0)],
                radius: rng.random_range(0.8..2.0),
                color: color(&mut rng),
            },
            velocity: [rng.random_range(-0.15..0.15), 0.0, rng.random_range(-0.1..0.1)],
        });
        SceneSpec {
            velocity: rng.random_range(0.1..0.3),
            focal: 1.0,
            primitives,
            moving_object,
            noise: 0.01,
            invalid_fraction: 0.05,
            fog: 30.0,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedSequence {
    pub rgb: Vec<RgbImage>,
    /// Metric depth; 0 where invalid.
    pub depth: Vec<FloatMap>,
    pub valid: Vec<Vec<bool>>,
}

fn checker(p: Vec3) -> f64 {
    let s = p.iter().map(|v| v.floor() as i64).sum::<i64>();
    if s.rem_euclid(2) == 0 {
        1.0
    } else {
        0.55
    }
}

/// Renders `frames` frames of `spec` at `width x height`.
pub fn generate_sequence(spec: &SceneSpec, frames: usize, width: usize, height: usize) -> Result<GeneratedSequence> {
    spec.validate()?;
    if frames == 0 {
        return Err(Error::InvalidScene("frame count must be >= 1".into()));
    }
    if width == 0 || height == 0 {
        return Err(Error::InvalidScene("resolution must be non-zero".into()));
    }
    let f = spec.focal * width as f64;
    let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
    let noise = (spec.noise > 0.0).then(|| Normal::new(0.0, spec.noise).expect("noise std"));
    let sky = [0.75, 0.8, 0.9];

    let mut out = GeneratedSequence {
        rgb: Vec::with_capacity(frames),
        depth: Vec::with_capacity(frames),
        valid: Vec::with_capacity(frames),
    };
    for t in 0..frames {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(0x9e37_79b9).wrapping_add(t as u64));
        let origin = [0.0, 0.0, spec.velocity * t as f64];
        let mover = spec.moving_object.as_ref().map(|m| {
            let k = t as f64;
            m.shape.translated([m.velocity[0] * k, m.velocity[1] * k, m.velocity[2] * k])
        });
        let mut rgb = Vec::with_capacity(width * height * 3);
        let mut depth = Vec::with_capacity(width * height);
        let mut valid = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let dir = [(x as f64 + 0.5 - cx) / f, (y as f64 + 0.5 - cy) / f, 1.0];
                let nearest = spec
                    .primitives
                    .iter()
                    .chain(mover.as_ref())
                    .filter_map(|p| p.intersect(origin, dir).map(|t| (t, p)))
                    .min_by(|a, b| a.0.total_cmp(&b.0));
                let (mut color, d) = match nearest {
                    Some((lambda, prim)) => {
                        let p = [
                            origin[0] + lambda * dir[0],
                            origin[1] + lambda * dir[1],
                            origin[2] + lambda * dir[2],
                        ];
                        let shade = checker(p) * (-lambda / spec.fog).exp();
                        let c = prim.color();
                        ([c[0] * shade, c[1] * shade, c[2] * shade], lambda)
                    }
                    None => (sky, f64::INFINITY),
                };
                let ok = d > 0.0 && d <= MAX_DEPTH && !rng.random_bool(spec.invalid_fraction);
                if let Some(n) = &noise {
                    for ch in &mut color {
                        *ch += n.sample(&mut rng);
                    }
                }
                rgb.extend(color.iter().map(|v| v.clamp(0.0, 1.0) as f32));
                depth.push(if ok { d as f32 } else { 0.0 });
                valid.push(ok);
            }
        }
        out.rgb.push(RgbImage::new(width, height, rgb)?);
        out.depth.push(FloatMap::new(width, height, depth)?);
        out.valid.push(valid);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wall(depth: f64, velocity: f64) -> SceneSpec {
        SceneSpec {
            velocity,
            focal: 1.0,
            primitives: vec![Primitive::FrontalPlane {
                depth,
                color: [0.8, 0.6, 0.4],
            }],
            moving_object: None,
            noise: 0.0,
            invalid_fraction: 0.0,
            fog: 30.0,
            seed: 1,
        }
    }

    #[test]
    fn static_scene_frames_identical() {
        let g = generate_sequence(&wall(20.0, 0.0), 3, 8, 6).unwrap();
        assert_eq!(g.rgb[0], g.rgb[2]);
        assert_eq!(g.depth[0], g.depth[1]);
    }

    #[test]
    fn frontal_plane_depth_is_analytic() {
        let g = generate_sequence(&wall(30.0, 0.5), 5, 8, 6).unwrap();
        for (t, d) in g.depth.iter().enumerate() {
            let expect = (30.0 - 0.5 * t as f64) as f32;
            assert!(d.data.iter().all(|&v| (v - expect).abs() < 1e-4), "frame {t}");
        }
    }

    #[test]
    fn sphere_in_front_of_wall_is_nearer() {
        let mut spec = wall(30.0, 0.0);
        spec.primitives.push(Primitive::Sphere {
            center: [0.0, 0.0, 10.0],
            radius: 2.0,
            color: [1.0, 1.0, 1.0],
        });
        let g = generate_sequence(&spec, 1, 9, 9).unwrap();
        // the centre ray hits the sphere front at z = 8
        assert!((g.depth[0].get(4, 4) - 8.0).abs() < 0.05);
        assert!((g.depth[0].get(0, 0) - 30.0).abs() < 1e-4);
    }

    #[test]
    fn far_and_missing_hits_are_invalid() {
        let g = generate_sequence(&wall(120.0, 0.0), 1, 4, 4).unwrap();
        assert!(g.valid[0].iter().all(|v| !v));
        assert!(g.depth[0].data.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = wall(10.0, 0.0);
        s.invalid_fraction = 1.5;
        assert!(generate_sequence(&s, 1, 4, 4).is_err());
        assert!(generate_sequence(&wall(10.0, 0.0), 0, 4, 4).is_err());
        let mut s = wall(10.0, 0.0);
        s.primitives.push(Primitive::Sphere {
            center: [0.0; 3],
            radius: -1.0,
            color: [1.0; 3],
        });
        assert!(s.validate().is_err());
    }

    #[test]
    fn random_scenes_respect_depth_cap() {
        for seed in 0..6 {
            let g = generate_sequence(&SceneSpec::random(seed), 12, 16, 16).unwrap();
            for (d, v) in g.depth.iter().zip(&g.valid) {
                for (&x, &ok) in d.data.iter().zip(v) {
                    if ok {
                        assert!(x > 0.0 && x <= MAX_DEPTH as f32);
                    }
                }
            }
        }
    }
}
