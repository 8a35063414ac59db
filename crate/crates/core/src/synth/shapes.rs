use std::f64::consts::{PI, TAU};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize, Point, PointCloud};

/// Number of built-in shape families.
pub const FAMILIES: usize = 4;

pub const FAMILY_NAMES: [&str; FAMILIES] = ["plane", "chair", "table", "vessel"];

/// Largest relative jitter applied to a standard shape.
pub const STANDARD_JITTER: f64 = 0.1;

/// Smallest cloud `gen_shape` will produce.
pub const MIN_POINTS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Style {
    Standard,
    Nonstandard,
}

/// Seeded recipe for one synthetic shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub category: usize,
    pub style: Style,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Primitive {
    Cuboid {
        center: Point,
        half: [f64; 3],
    },
    /// Axis-aligned cylinder with caps.
    Cylinder {
        center: Point,
        radius: f64,
        half_height: f64,
        axis: usize,
    },
    Ellipsoid {
        center: Point,
        radii: [f64; 3],
    },
}

/// Structural edits available to nonstandard shapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Mutation {
    DropPart,
    ExtraPart,
    Stretch,
}

impl Primitive {
    fn area(&self) -> f64 {
        match *self {
            Primitive::Cuboid { half: [a, b, c], .. } => 8.0 * (a * b + b * c + a * c),
            Primitive::Cylinder {
                radius, half_height, ..
            } => TAU * radius * 2.0 * half_height + 2.0 * PI * radius * radius,
            Primitive::Ellipsoid { radii: [a, b, c], .. } => {
                // Thomsen's approximation, within about 1%
                let p = 1.6075;
                let m = ((a * b).powf(p) + (a * c).powf(p) + (b * c).powf(p)) / 3.0;
                4.0 * PI * m.powf(1.0 / p)
            }
        }
    }

    fn center_mut(&mut self) -> &mut Point {
        match self {
            Primitive::Cuboid { center, .. }
            | Primitive::Cylinder { center, .. }
            | Primitive::Ellipsoid { center, .. } => center,
        }
    }

    /// Scales every coordinate axis (position and extent) by `s`.
    fn stretch(&mut self, s: [f64; 3]) {
        let c = self.center_mut();
        for a in 0..3 {
            c[a] *= s[a];
        }
        match self {
            Primitive::Cuboid { half, .. } => (0..3).for_each(|a| half[a] *= s[a]),
            Primitive::Ellipsoid { radii, .. } => (0..3).for_each(|a| radii[a] *= s[a]),
            Primitive::Cylinder {
                radius,
                half_height,
                axis,
                ..
            } => {
                *half_height *= s[*axis];
                let others: Vec<f64> = (0..3).filter(|a| a != axis).map(|a| s[a]).collect();
                *radius *= (others[0] * others[1]).sqrt();
            }
        }
    }

    /// Multiplies each size parameter by its own factor from `jitter`.
    fn jitter(&mut self, rng: &mut ChaCha8Rng, amount: f64) {
        let mut f = || 1.0 + rng.gen_range(-amount..=amount);
        let c = self.center_mut();
        for v in c.iter_mut() {
            *v *= f();
        }
        match self {
            Primitive::Cuboid { half, .. } => half.iter_mut().for_each(|h| *h *= f()),
            Primitive::Ellipsoid { radii, .. } => radii.iter_mut().for_each(|r| *r *= f()),
            Primitive::Cylinder {
                radius, half_height, ..
            } => {
                *radius *= f();
                *half_height *= f();
            }
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Point {
        match *self {
            Primitive::Cuboid { center, half } => {
                let areas = [half[1] * half[2], half[0] * half[2], half[0] * half[1]];
                let total: f64 = areas.iter().sum();
                let mut pick = rng.gen_range(0.0..total);
                let mut axis = 2;
                for (a, w) in areas.iter().enumerate() {
                    if pick < *w {
                        axis = a;
                        break;
                    }
                    pick -= w;
                }
                let mut p = [0.0; 3];
                for a in 0..3 {
                    p[a] = if a == axis {
                        if rng.gen_bool(0.5) {
                            half[a]
                        } else {
                            -half[a]
                        }
                    } else {
                        rng.gen_range(-half[a]..=half[a])
                    };
                }
                [center[0] + p[0], center[1] + p[1], center[2] + p[2]]
            }
            Primitive::Cylinder {
                center,
                radius,
                half_height,
                axis,
            } => {
                let side = TAU * radius * 2.0 * half_height;
                let cap = PI * radius * radius;
                let t = rng.gen_range(0.0..TAU);
                let (h, rr) = if rng.gen_range(0.0..side + 2.0 * cap) < side {
                    (rng.gen_range(-half_height..=half_height), radius)
                } else {
                    let h = if rng.gen_bool(0.5) { half_height } else { -half_height };
                    (h, radius * rng.gen_range(0.0f64..=1.0).sqrt())
                };
                let (u, v) = (rr * t.cos(), rr * t.sin());
                let mut p = center;
                let others: Vec<usize> = (0..3).filter(|a| *a != axis).collect();
                p[axis] += h;
                p[others[0]] += u;
                p[others[1]] += v;
                p
            }
            Primitive::Ellipsoid {
                center,
                radii: [a, b, c],
            } => {
                // uniform on the surface by rejection on the area element
                let max = (a * b).max(a * c).max(b * c);
                loop {
                    let z: f64 = rng.gen_range(-1.0..=1.0);
                    let t = rng.gen_range(0.0..TAU);
                    let s = (1.0 - z * z).sqrt();
                    let n = [s * t.cos(), s * t.sin(), z];
                    let dens = ((b * c * n[0]).powi(2) + (a * c * n[1]).powi(2) + (a * b * n[2]).powi(2)).sqrt();
                    if rng.gen_range(0.0..max) <= dens {
                        return [center[0] + a * n[0], center[1] + b * n[1], center[2] + c * n[2]];
                    }
                }
            }
        }
    }
}

fn cuboid(center: Point, half: [f64; 3]) -> Primitive {
    Primitive::Cuboid { center, half }
}

fn leg(x: f64, y: f64, z: f64, radius: f64, half_height: f64) -> Primitive {
    Primitive::Cylinder {
        center: [x, y, z],
        radius,
        half_height,
        axis: 2,
    }
}

/// Canonical parts of a family; the first entry is the body, which
/// mutations never remove.
fn canonical(category: usize) -> Vec<Primitive> {
    match category {
        0 => vec![
            Primitive::Ellipsoid {
                center: [0.0, 0.0, 0.0],
                radii: [1.0, 0.12, 0.12],
            },
            cuboid([0.05, 0.0, 0.0], [0.18, 0.9, 0.02]),
            cuboid([-0.85, 0.0, 0.15], [0.08, 0.02, 0.15]),
            cuboid([-0.85, 0.0, 0.02], [0.07, 0.3, 0.015]),
        ],
        1 => vec![
            cuboid([0.0, 0.0, 0.0], [0.4, 0.4, 0.05]),
            cuboid([-0.37, 0.0, 0.5], [0.03, 0.4, 0.45]),
            leg(0.33, 0.33, -0.45, 0.04, 0.4),
            leg(0.33, -0.33, -0.45, 0.04, 0.4),
            leg(-0.33, 0.33, -0.45, 0.04, 0.4),
            leg(-0.33, -0.33, -0.45, 0.04, 0.4),
        ],
        2 => vec![
            cuboid([0.0, 0.0, 0.4], [0.8, 0.5, 0.04]),
            leg(0.7, 0.4, 0.0, 0.05, 0.38),
            leg(0.7, -0.4, 0.0, 0.05, 0.38),
            leg(-0.7, 0.4, 0.0, 0.05, 0.38),
            leg(-0.7, -0.4, 0.0, 0.05, 0.38),
        ],
        _ => vec![
            Primitive::Ellipsoid {
                center: [0.0, 0.0, 0.0],
                radii: [1.0, 0.3, 0.18],
            },
            cuboid([-0.1, 0.0, 0.2], [0.3, 0.18, 0.1]),
            Primitive::Cylinder {
                center: [0.2, 0.0, 0.55],
                radius: 0.03,
                half_height: 0.4,
                axis: 2,
            },
        ],
    }
}

fn mutate(parts: &mut Vec<Primitive>, m: Mutation, rng: &mut ChaCha8Rng) {
    match m {
        Mutation::DropPart => {
            if parts.len() > 1 {
                let i = rng.gen_range(1..parts.len());
                parts.remove(i);
            }
        }
        Mutation::ExtraPart => {
            let mut extra = parts[rng.gen_range(0..parts.len())];
            let mut s = [1.0; 3];
            s[rng.gen_range(0..3)] = rng.gen_range(0.5..1.5);
            extra.stretch(s);
            let c = extra.center_mut();
            for v in c.iter_mut() {
                *v += rng.gen_range(-0.6..0.6);
            }
            parts.push(extra);
        }
        Mutation::Stretch => {
            let mut s = [1.0; 3];
            let axis = rng.gen_range(0..3);
            s[axis] = if rng.gen_bool(0.5) {
                rng.gen_range(0.3..0.5)
            } else {
                rng.gen_range(2.0..2.8)
            };
            parts.iter_mut().for_each(|p| p.stretch(s));
        }
    }
}

fn parts_for(spec: &ShapeSpec, rng: &mut ChaCha8Rng) -> Vec<Primitive> {
    let mut parts = canonical(spec.category);
    for p in &mut parts {
        p.jitter(rng, STANDARD_JITTER);
    }
    if spec.style == Style::Nonstandard {
        let mut pool = [Mutation::DropPart, Mutation::ExtraPart, Mutation::Stretch];
        pool.shuffle(rng);
        let count = rng.gen_range(1..=2);
        for m in &pool[..count] {
            mutate(&mut parts, *m, rng);
        }
    }
    parts
}

fn sample_parts(parts: &[Primitive], n: usize, rng: &mut ChaCha8Rng) -> Option<Vec<Point>> {
    let areas: Vec<f64> = parts.iter().map(Primitive::area).collect();
    let total: f64 = areas.iter().sum();
    if !(total.is_finite() && total > 1e-9) {
        return None;
    }
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let mut pick = rng.gen_range(0.0..total);
        let mut idx = parts.len() - 1;
        for (i, a) in areas.iter().enumerate() {
            if pick < *a {
                idx = i;
                break;
            }
            pick -= a;
        }
        points.push(parts[idx].sample(rng));
    }
    Some(points)
}

fn finish(points: Vec<Point>) -> Result<Option<PointCloud>> {
    let n = normalize(&points)?;
    Ok(if n.degenerate { None } else { Some(n.cloud) })
}

/// Area-weighted surface sample of the shape described by `spec`,
/// normalized to the unit cube.
pub fn gen_shape(spec: &ShapeSpec, n_points: usize) -> Result<PointCloud> {
    if n_points < MIN_POINTS {
        return Err(Error::contract(format!(
            "shapes need at least {MIN_POINTS} points, got {n_points}"
        )));
    }
    if spec.category >= FAMILIES {
        return Err(Error::contract(format!(
            "category {} outside 0..{FAMILIES}",
            spec.category
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for _ in 0..5 {
        let parts = parts_for(spec, &mut rng);
        if let Some(points) = sample_parts(&parts, n_points, &mut rng) {
            if let Some(cloud) = finish(points)? {
                return Ok(cloud);
            }
        }
    }
    Err(Error::contract(format!(
        "shape {spec:?} stayed degenerate after 5 draws"
    )))
}

/// Unjittered family member, sampled with `seed`.
pub fn canonical_shape(category: usize, n_points: usize, seed: u64) -> Result<PointCloud> {
    if category >= FAMILIES {
        return Err(Error::contract(format!("category {category} outside 0..{FAMILIES}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = sample_parts(&canonical(category), n_points, &mut rng).expect("canonical parts have area");
    finish(points)?.ok_or_else(|| Error::contract("canonical shape is degenerate"))
}
