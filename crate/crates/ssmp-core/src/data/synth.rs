//! Procedural shape families and the orthographic point renderer.
//!
//! Five parametric families (bookcase, table, chair, vessel, lamp) assembled
//! from axis-aligned boxes, cylinders, and truncated cones. Clouds are
//! area-weighted surface samples; renders are shaded orthographic splats of
//! a denser sample of the same surface, mapped into the cloud's normalized
//! frame.

use crate::cloud::{normalize_unit_sphere, unit_sphere_transform, PointCloud};
use crate::error::{Error, Result};
use crate::img::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::f64::consts::{PI, TAU};

#[derive(Debug, Clone)]
pub enum Primitive {
    /// Axis-aligned box: center and half extents.
    Box { center: [f64; 3], half: [f64; 3] },
    /// Y-axis cylinder with closed caps.
    Cylinder {
        center: [f64; 3],
        radius: f64,
        half_h: f64,
    },
    /// Y-axis truncated cone; `r_bottom`/`r_top` at `center.y ∓ half_h`.
    /// Open at the top, optionally closed at the bottom.
    TruncCone {
        center: [f64; 3],
        r_bottom: f64,
        r_top: f64,
        half_h: f64,
        closed_bottom: bool,
    },
}

impl Primitive {
    fn area(&self) -> f64 {
        match self {
            Primitive::Box { half, .. } => {
                8.0 * (half[1] * half[2] + half[0] * half[2] + half[0] * half[1])
            }
            Primitive::Cylinder { radius, half_h, .. } => {
                TAU * radius * 2.0 * half_h + 2.0 * PI * radius * radius
            }
            Primitive::TruncCone {
                r_bottom,
                r_top,
                half_h,
                closed_bottom,
                ..
            } => {
                let slant = ((r_top - r_bottom).powi(2) + (2.0 * half_h).powi(2)).sqrt();
                let lateral = PI * (r_bottom + r_top) * slant;
                lateral + if *closed_bottom { PI * r_bottom * r_bottom } else { 0.0 }
            }
        }
    }

    fn sample(&self, rng: &mut ChaCha12Rng) -> [f64; 3] {
        match self {
            Primitive::Box { center, half } => {
                let areas = [
                    half[1] * half[2],
                    half[1] * half[2],
                    half[0] * half[2],
                    half[0] * half[2],
                    half[0] * half[1],
                    half[0] * half[1],
                ];
                let total: f64 = areas.iter().sum();
                let mut pick = rng.random_range(0.0..total);
                let mut face = 5;
                for (i, &a) in areas.iter().enumerate() {
                    if pick < a {
                        face = i;
                        break;
                    }
                    pick -= a;
                }
                let u = rng.random_range(-1.0..1.0);
                let v = rng.random_range(-1.0..1.0);
                let p = match face {
                    0 => [half[0], u * half[1], v * half[2]],
                    1 => [-half[0], u * half[1], v * half[2]],
                    2 => [u * half[0], half[1], v * half[2]],
                    3 => [u * half[0], -half[1], v * half[2]],
                    4 => [u * half[0], v * half[1], half[2]],
                    _ => [u * half[0], v * half[1], -half[2]],
                };
                [center[0] + p[0], center[1] + p[1], center[2] + p[2]]
            }
            Primitive::Cylinder {
                center,
                radius,
                half_h,
            } => {
                let lateral = TAU * radius * 2.0 * half_h;
                let caps = 2.0 * PI * radius * radius;
                let theta = rng.random_range(0.0..TAU);
                if rng.random_range(0.0..lateral + caps) < lateral {
                    let y = rng.random_range(-half_h..*half_h);
                    [
                        center[0] + radius * theta.cos(),
                        center[1] + y,
                        center[2] + radius * theta.sin(),
                    ]
                } else {
                    let r = radius * rng.random_range(0.0f64..1.0).sqrt();
                    let y = if rng.random_range(0..2u8) == 0 {
                        *half_h
                    } else {
                        -*half_h
                    };
                    [
                        center[0] + r * theta.cos(),
                        center[1] + y,
                        center[2] + r * theta.sin(),
                    ]
                }
            }
            Primitive::TruncCone {
                center,
                r_bottom,
                r_top,
                half_h,
                closed_bottom,
            } => {
                let slant = ((r_top - r_bottom).powi(2) + (2.0 * half_h).powi(2)).sqrt();
                let lateral = PI * (r_bottom + r_top) * slant;
                let bottom = if *closed_bottom { PI * r_bottom * r_bottom } else { 0.0 };
                let theta = rng.random_range(0.0..TAU);
                if rng.random_range(0.0..lateral + bottom) < lateral {
                    // Lateral surface: radius grows linearly in t, so t has a
                    // linear density; invert its CDF.
                    let u: f64 = rng.random_range(0.0..1.0);
                    let (a, b) = (*r_bottom, *r_top - *r_bottom);
                    let t = if b.abs() < 1e-12 {
                        u
                    } else {
                        let disc = (a * a + b * (2.0 * a + b) * u).max(0.0);
                        ((disc).sqrt() - a) / b
                    };
                    let r = a + b * t;
                    [
                        center[0] + r * theta.cos(),
                        center[1] - half_h + 2.0 * half_h * t,
                        center[2] + r * theta.sin(),
                    ]
                } else {
                    let r = r_bottom * rng.random_range(0.0f64..1.0).sqrt();
                    [
                        center[0] + r * theta.cos(),
                        center[1] - half_h,
                        center[2] + r * theta.sin(),
                    ]
                }
            }
        }
    }
}

/// Draws one shape from the named family.
pub fn draw_family(category: &str, rng: &mut ChaCha12Rng) -> Result<Vec<Primitive>> {
    const T: f64 = 0.05; // panel thickness
    match category {
        "bookcase" => {
            let w = rng.random_range(0.8..1.4);
            let h = rng.random_range(1.2..2.0);
            let d = rng.random_range(0.35..0.6);
            let shelves = rng.random_range(1..4usize);
            let mut parts = vec![
                Primitive::Box {
                    center: [-w / 2.0, 0.0, 0.0],
                    half: [T, h / 2.0, d / 2.0],
                },
                Primitive::Box {
                    center: [w / 2.0, 0.0, 0.0],
                    half: [T, h / 2.0, d / 2.0],
                },
                Primitive::Box {
                    center: [0.0, h / 2.0, 0.0],
                    half: [w / 2.0, T, d / 2.0],
                },
                Primitive::Box {
                    center: [0.0, -h / 2.0, 0.0],
                    half: [w / 2.0, T, d / 2.0],
                },
                // back panel
                Primitive::Box {
                    center: [0.0, 0.0, -d / 2.0],
                    half: [w / 2.0, h / 2.0, T / 2.0],
                },
            ];
            for s in 1..=shelves {
                let y = -h / 2.0 + h * s as f64 / (shelves + 1) as f64;
                parts.push(Primitive::Box {
                    center: [0.0, y, 0.0],
                    half: [w / 2.0, T / 2.0, d / 2.0],
                });
            }
            Ok(parts)
        }
        "table" => {
            let w = rng.random_range(1.0..1.8);
            let d = rng.random_range(0.7..1.2);
            let lh = rng.random_range(0.6..1.0);
            let leg = 0.07;
            let inset = 0.1;
            let mut parts = vec![Primitive::Box {
                center: [0.0, lh, 0.0],
                half: [w / 2.0, 0.05, d / 2.0],
            }];
            for &sx in &[-1.0, 1.0] {
                for &sz in &[-1.0, 1.0] {
                    parts.push(Primitive::Box {
                        center: [
                            sx * (w / 2.0 - inset),
                            lh / 2.0,
                            sz * (d / 2.0 - inset),
                        ],
                        half: [leg, lh / 2.0, leg],
                    });
                }
            }
            Ok(parts)
        }
        "chair" => {
            let s = rng.random_range(0.45..0.6);
            let lh = rng.random_range(0.4..0.55);
            let bh = rng.random_range(0.45..0.75);
            let leg = 0.05;
            let mut parts = vec![
                // seat
                Primitive::Box {
                    center: [0.0, lh, 0.0],
                    half: [s / 2.0, 0.04, s / 2.0],
                },
                // back
                Primitive::Box {
                    center: [0.0, lh + bh / 2.0, -s / 2.0 + T / 2.0],
                    half: [s / 2.0, bh / 2.0, T / 2.0],
                },
            ];
            for &sx in &[-1.0, 1.0] {
                for &sz in &[-1.0, 1.0] {
                    parts.push(Primitive::Box {
                        center: [sx * (s / 2.0 - leg), lh / 2.0, sz * (s / 2.0 - leg)],
                        half: [leg, lh / 2.0, leg],
                    });
                }
            }
            Ok(parts)
        }
        "vessel" => {
            let base = rng.random_range(0.15..0.3);
            let bulge = rng.random_range(0.1..0.35);
            let q = rng.random_range(0.7..1.4);
            let height = rng.random_range(0.8..1.4);
            let bands = 6;
            let profile = |t: f64| base + bulge * (PI * t.powf(q)).sin().max(0.0);
            let mut parts = Vec::with_capacity(bands);
            for b in 0..bands {
                let t0 = b as f64 / bands as f64;
                let t1 = (b + 1) as f64 / bands as f64;
                parts.push(Primitive::TruncCone {
                    center: [0.0, height * (t0 + t1) / 2.0, 0.0],
                    r_bottom: profile(t0),
                    r_top: profile(t1),
                    half_h: height / (2.0 * bands as f64),
                    closed_bottom: b == 0,
                });
            }
            Ok(parts)
        }
        "lamp" => {
            let base_r = rng.random_range(0.25..0.4);
            let pole_h = rng.random_range(0.6..1.0);
            let shade_rb = rng.random_range(0.3..0.45);
            let shade_rt = rng.random_range(0.12..0.22);
            let shade_h = rng.random_range(0.25..0.4);
            Ok(vec![
                Primitive::Cylinder {
                    center: [0.0, 0.03, 0.0],
                    radius: base_r,
                    half_h: 0.03,
                },
                Primitive::Cylinder {
                    center: [0.0, 0.06 + pole_h / 2.0, 0.0],
                    radius: 0.03,
                    half_h: pole_h / 2.0,
                },
                Primitive::TruncCone {
                    center: [0.0, 0.06 + pole_h + shade_h / 2.0, 0.0],
                    r_bottom: shade_rb,
                    r_top: shade_rt,
                    half_h: shade_h / 2.0,
                    closed_bottom: false,
                },
            ])
        }
        other => Err(Error::invalid(format!("unknown shape family {other:?}"))),
    }
}

/// Area-weighted surface sample over a set of primitives.
pub fn sample_surface(parts: &[Primitive], n: usize, rng: &mut ChaCha12Rng) -> Result<PointCloud> {
    if parts.is_empty() {
        return Err(Error::invalid("no primitives to sample"));
    }
    let areas: Vec<f64> = parts.iter().map(|p| p.area()).collect();
    let total: f64 = areas.iter().sum();
    let points = (0..n)
        .map(|_| {
            let mut pick = rng.random_range(0.0..total);
            let mut chosen = parts.len() - 1;
            for (i, &a) in areas.iter().enumerate() {
                if pick < a {
                    chosen = i;
                    break;
                }
                pick -= a;
            }
            parts[chosen].sample(rng)
        })
        .collect();
    PointCloud::new(points)
}

/// Orthographic shaded splat of `points` (already in the normalized frame).
/// Nearer points are brighter; each point covers a 2x2 pixel footprint with
/// a max-intensity z-buffer. The result is quantized to the 8-bit grid.
pub fn render_view(
    points: &[[f64; 3]],
    img_size: usize,
    azimuth: f64,
    elevation: f64,
) -> Image {
    let mut img = Image::zeros(img_size, img_size, 1);
    let (sa, ca) = azimuth.sin_cos();
    let (se, ce) = elevation.sin_cos();
    let span = 2.2; // covers the unit sphere with a small margin
    for p in points {
        // Rotate by azimuth about y, then elevation about x.
        let x1 = ca * p[0] + sa * p[2];
        let z1 = -sa * p[0] + ca * p[2];
        let y1 = p[1];
        let y2 = ce * y1 - se * z1;
        let z2 = se * y1 + ce * z1;
        let u = (x1 + span / 2.0) / span * (img_size as f64 - 1.0);
        let v = (span / 2.0 - y2) / span * (img_size as f64 - 1.0);
        let depth = ((z2 + 1.1) / 2.2).clamp(0.0, 1.0);
        let intensity = 0.35 + 0.6 * depth;
        let (px, py) = (u.floor() as isize, v.floor() as isize);
        for dy in 0..2isize {
            for dx in 0..2isize {
                let (x, y) = (px + dx, py + dy);
                if x >= 0 && (x as usize) < img_size && y >= 0 && (y as usize) < img_size {
                    let cur = img.at(0, y as usize, x as usize);
                    if intensity > cur {
                        img.set(0, y as usize, x as usize, intensity);
                    }
                }
            }
        }
    }
    img.quantize();
    img
}

/// One fully seeded draw: ground-truth cloud (normalized), plus a render of
/// a denser sample of the same surface in the same frame.
pub fn generate_shape(
    category: &str,
    n_points: usize,
    render_points: usize,
    img_size: usize,
    azimuth_range: (f64, f64),
    elevation_range: (f64, f64),
    seed: u64,
) -> Result<(PointCloud, Image)> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for _attempt in 0..5 {
        let parts = draw_family(category, &mut rng)?;
        let raw = sample_surface(&parts, n_points, &mut rng)?;
        let Ok((center, scale)) = unit_sphere_transform(&raw) else {
            continue; // degenerate draw; retry with advanced rng state
        };
        let cloud = normalize_unit_sphere(&raw)?.with_category(category);
        let dense_raw = sample_surface(&parts, render_points, &mut rng)?;
        let dense: Vec<[f64; 3]> = dense_raw
            .points()
            .iter()
            .map(|p| {
                [
                    (p[0] - center[0]) / scale,
                    (p[1] - center[1]) / scale,
                    (p[2] - center[2]) / scale,
                ]
            })
            .collect();
        let azimuth = rng.random_range(azimuth_range.0..azimuth_range.1);
        let elevation = rng.random_range(elevation_range.0..elevation_range.1);
        let image = render_view(&dense, img_size, azimuth, elevation);
        return Ok((cloud, image));
    }
    Err(Error::DegenerateInput(format!(
        "family {category} produced degenerate samples repeatedly (seed {seed})"
    )))
}
