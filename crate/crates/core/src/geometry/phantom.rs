use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::grid::{CoordinateGrid, Image};
use crate::error::{Error, Result};

/// A filled shape with a constant attenuation value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    /// Rectangle with half-extents along its own (rotated) axes.
    Rectangle {
        center: [f64; 2],
        half_extents: [f64; 2],
        angle: f64,
        value: f64,
    },
    /// Ring `inner_radius <= r <= outer_radius`; a disk when the inner radius is 0.
    Annulus {
        center: [f64; 2],
        inner_radius: f64,
        outer_radius: f64,
        angle: f64,
        value: f64,
    },
}

impl Primitive {
    pub fn rectangle(center: [f64; 2], half_extents: [f64; 2], angle: f64, value: f64) -> Self {
        Primitive::Rectangle {
            center,
            half_extents,
            angle,
            value,
        }
    }

    pub fn disk(center: [f64; 2], radius: f64, value: f64) -> Self {
        Primitive::Annulus {
            center,
            inner_radius: 0.0,
            outer_radius: radius,
            angle: 0.0,
            value,
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            Primitive::Rectangle { value, .. } | Primitive::Annulus { value, .. } => value,
        }
    }

    fn validate(&self) -> Result<()> {
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        match *self {
            Primitive::Rectangle {
                center,
                half_extents,
                angle,
                value,
            } => {
                if half_extents[0] < 0.0 || half_extents[1] < 0.0 {
                    return Err(Error::invalid(format!(
                        "negative rectangle half-extent {half_extents:?}"
                    )));
                }
                if !finite(&[
                    center[0],
                    center[1],
                    half_extents[0],
                    half_extents[1],
                    angle,
                    value,
                ]) {
                    return Err(Error::invalid("non-finite rectangle parameter"));
                }
            }
            Primitive::Annulus {
                center,
                inner_radius,
                outer_radius,
                angle,
                value,
            } => {
                if inner_radius < 0.0 || outer_radius < 0.0 {
                    return Err(Error::invalid(format!(
                        "negative annulus radius ({inner_radius}, {outer_radius})"
                    )));
                }
                if !finite(&[
                    center[0],
                    center[1],
                    inner_radius,
                    outer_radius,
                    angle,
                    value,
                ]) {
                    return Err(Error::invalid("non-finite annulus parameter"));
                }
            }
        }
        Ok(())
    }

    /// Point membership; rectangles test the inverse-rotated offset against their half-extents.
    pub fn contains(&self, point: [f64; 2]) -> bool {
        match *self {
            Primitive::Rectangle {
                center,
                half_extents,
                angle,
                ..
            } => {
                let dx = point[0] - center[0];
                let dy = point[1] - center[1];
                let (s, c) = angle.sin_cos();
                // R(-angle) applied to the offset
                let lx = c * dx + s * dy;
                let ly = -s * dx + c * dy;
                lx.abs() <= half_extents[0] && ly.abs() <= half_extents[1]
            }
            Primitive::Annulus {
                center,
                inner_radius,
                outer_radius,
                ..
            } => {
                let dx = point[0] - center[0];
                let dy = point[1] - center[1];
                let r2 = dx * dx + dy * dy;
                r2 >= inner_radius * inner_radius && r2 <= outer_radius * outer_radius
            }
        }
    }
}

/// Ordered list of primitives; later entries paint over earlier ones.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub primitives: Vec<Primitive>,
}

impl PhantomSpec {
    pub fn new(primitives: Vec<Primitive>) -> Self {
        PhantomSpec { primitives }
    }
}

pub fn render_phantom(spec: &PhantomSpec, grid: &CoordinateGrid) -> Result<Image> {
    if spec.primitives.is_empty() {
        return Err(Error::invalid("phantom has no primitives"));
    }
    for p in &spec.primitives {
        p.validate()?;
    }
    let values = grid
        .coords()
        .iter()
        .map(|&c| {
            spec.primitives
                .iter()
                .rev()
                .find(|p| p.contains(c))
                .map_or(0.0, Primitive::value)
        })
        .collect();
    Image::new(grid.height(), grid.width(), values)
}

/// Named phantom families used by the experiment driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhantomPreset {
    /// Square frame, rotated about the origin.
    HollowSquare,
    /// L-shaped union of two rectangles.
    Bracket,
    /// Rectangles plus an annulus.
    Mixed,
    /// A single disk; purely curved control case.
    Disk,
}

impl PhantomPreset {
    pub const ALL: [PhantomPreset; 4] = [
        PhantomPreset::HollowSquare,
        PhantomPreset::Bracket,
        PhantomPreset::Mixed,
        PhantomPreset::Disk,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PhantomPreset::HollowSquare => "hollow-square",
            PhantomPreset::Bracket => "bracket",
            PhantomPreset::Mixed => "mixed",
            PhantomPreset::Disk => "disk",
        }
    }

    /// Builds the preset with every primitive rotated by `angle` about the origin.
    pub fn spec(self, angle: f64) -> PhantomSpec {
        let prims = match self {
            PhantomPreset::HollowSquare => vec![
                Primitive::rectangle([0.0, 0.0], [0.55, 0.55], 0.0, 1.0),
                Primitive::rectangle([0.0, 0.0], [0.3, 0.3], 0.0, 0.0),
            ],
            PhantomPreset::Bracket => vec![
                Primitive::rectangle([-0.35, 0.0], [0.15, 0.6], 0.0, 1.0),
                Primitive::rectangle([0.1, 0.45], [0.45, 0.15], 0.0, 1.0),
            ],
            PhantomPreset::Mixed => vec![
                Primitive::rectangle([-0.3, -0.25], [0.45, 0.3], 0.0, 0.8),
                Primitive::rectangle([-0.3, -0.25], [0.2, 0.1], 0.0, 0.3),
                Primitive::Annulus {
                    center: [0.4, 0.4],
                    inner_radius: 0.15,
                    outer_radius: 0.35,
                    angle: 0.0,
                    value: 1.0,
                },
            ],
            PhantomPreset::Disk => vec![Primitive::disk([0.0, 0.0], 0.6, 1.0)],
        };
        PhantomSpec::new(
            prims
                .into_iter()
                .map(|p| rotate_about_origin(p, angle))
                .collect(),
        )
    }
}

fn rotate_about_origin(p: Primitive, alpha: f64) -> Primitive {
    let (s, c) = alpha.sin_cos();
    let rot = |q: [f64; 2]| [c * q[0] - s * q[1], s * q[0] + c * q[1]];
    match p {
        Primitive::Rectangle {
            center,
            half_extents,
            angle,
            value,
        } => Primitive::Rectangle {
            center: rot(center),
            half_extents,
            angle: angle + alpha,
            value,
        },
        Primitive::Annulus {
            center,
            inner_radius,
            outer_radius,
            angle,
            value,
        } => Primitive::Annulus {
            center: rot(center),
            inner_radius,
            outer_radius,
            angle: angle + alpha,
            value,
        },
    }
}

impl fmt::Display for PhantomPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PhantomPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PhantomPreset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown phantom preset `{s}` (expected one of hollow-square, bracket, mixed, disk)"
                ))
            })
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use super::*;
    use crate::geometry::make_grid;

    #[test]
    fn full_cover_rectangle() {
        let grid = make_grid(4, 4).unwrap();
        let spec = PhantomSpec::new(vec![Primitive::rectangle([0.0, 0.0], [1.0, 1.0], 0.0, 1.0)]);
        let img = render_phantom(&spec, &grid).unwrap();
        assert!(img.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn quarter_turn_swaps_extents() {
        let grid = make_grid(64, 64).unwrap();
        let rotated = PhantomSpec::new(vec![Primitive::rectangle(
            [0.1, -0.05],
            [0.3, 0.6],
            FRAC_PI_2,
            1.0,
        )]);
        let swapped = PhantomSpec::new(vec![Primitive::rectangle(
            [0.1, -0.05],
            [0.6, 0.3],
            0.0,
            1.0,
        )]);
        assert_eq!(
            render_phantom(&rotated, &grid).unwrap(),
            render_phantom(&swapped, &grid).unwrap()
        );
    }

    #[test]
    fn later_primitives_overwrite() {
        let grid = make_grid(8, 8).unwrap();
        let spec = PhantomSpec::new(vec![
            Primitive::rectangle([0.0, 0.0], [1.0, 1.0], 0.0, 1.0),
            Primitive::rectangle([0.0, 0.0], [1.0, 1.0], 0.0, 2.0),
        ]);
        let img = render_phantom(&spec, &grid).unwrap();
        assert!(img.values().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn negative_extent_rejected() {
        let grid = make_grid(4, 4).unwrap();
        let spec = PhantomSpec::new(vec![Primitive::rectangle(
            [0.0, 0.0],
            [-0.1, 0.5],
            0.0,
            1.0,
        )]);
        assert!(matches!(
            render_phantom(&spec, &grid),
            Err(Error::InvalidArgument(_))
        ));
        let spec = PhantomSpec::new(vec![Primitive::disk([0.0, 0.0], -0.5, 1.0)]);
        assert!(matches!(
            render_phantom(&spec, &grid),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn empty_spec_rejected() {
        let grid = make_grid(4, 4).unwrap();
        assert!(render_phantom(&PhantomSpec::default(), &grid).is_err());
    }

    #[test]
    fn rotated_membership_matches_inverse_rotated_query() {
        let alpha = 0.37;
        let center = [0.12, -0.2];
        let rotated = Primitive::rectangle(center, [0.4, 0.2], alpha, 1.0);
        let plain = Primitive::rectangle(center, [0.4, 0.2], 0.0, 1.0);
        let (s, c) = alpha.sin_cos();
        let grid = make_grid(48, 48).unwrap();
        for &q in grid.coords() {
            let d = [q[0] - center[0], q[1] - center[1]];
            let back = [
                center[0] + c * d[0] + s * d[1],
                center[1] - s * d[0] + c * d[1],
            ];
            assert_eq!(rotated.contains(q), plain.contains(back));
        }
    }

    #[test]
    fn preset_names_round_trip() {
        for p in PhantomPreset::ALL {
            assert_eq!(p.name().parse::<PhantomPreset>().unwrap(), p);
        }
        assert!("cube".parse::<PhantomPreset>().is_err());
    }

    #[test]
    fn presets_render() {
        let grid = make_grid(32, 32).unwrap();
        for p in PhantomPreset::ALL {
            let img = render_phantom(&p.spec(0.2), &grid).unwrap();
            assert!(img.values().iter().any(|&v| v > 0.0), "{p} is empty");
        }
    }
}
