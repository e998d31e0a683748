//! Orthographic software rasterizer producing the grayscale observation.
//!
//! The scene is painted back to front: background, table, arm links, gripper
//! marker, cube. Each layer overwrites whatever is beneath it.

use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::geom::{self, Vec3};
use crate::sim::{self, KinematicChain, WorldState};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("image size {width}x{height} must be non-zero")]
    EmptyImage { width: usize, height: usize },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid scene style: {0}")]
    InvalidStyle(String),
    #[error("malformed graymap: {0}")]
    Pgm(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraSpec {
    pub view_direction: Vec3,
    pub up: Vec3,
    /// World point mapped to the image center.
    pub center: Vec3,
    /// Pixels per meter.
    pub scale: f64,
}

impl Default for CameraSpec {
    /// Side view looking along −z, framing the default arm and the cube
    /// placement area in a 64-pixel image.
    fn default() -> Self {
        Self {
            view_direction: [0.0, 0.0, -1.0],
            up: [0.0, 1.0, 0.0],
            center: [0.35, 0.30, 0.0],
            scale: 64.0 / 1.0,
        }
    }
}

impl CameraSpec {
    pub fn validate(&self) -> Result<(), RenderError> {
        let unit = |v: Vec3| (geom::norm(v) - 1.0).abs() <= 1e-9;
        if !unit(self.view_direction) || !unit(self.up) {
            return Err(RenderError::InvalidCamera(
                "view_direction and up must be unit vectors".into(),
            ));
        }
        if geom::dot(self.view_direction, self.up).abs() > 1e-9 {
            return Err(RenderError::InvalidCamera(
                "view_direction must be perpendicular to up".into(),
            ));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(RenderError::InvalidCamera(format!(
                "scale {} must be positive",
                self.scale
            )));
        }
        Ok(())
    }

    fn right(&self) -> Vec3 {
        geom::cross(self.view_direction, self.up)
    }

    /// Continuous pixel coordinates (column, row) of a world point; pixel
    /// `(i, j)` has its center at `(i + 0.5, j + 0.5)`.
    pub fn project(&self, p: Vec3, width: usize, height: usize) -> [f64; 2] {
        let d = geom::sub(p, self.center);
        [
            width as f64 / 2.0 + self.scale * geom::dot(d, self.right()),
            height as f64 / 2.0 - self.scale * geom::dot(d, self.up),
        ]
    }
}

/// Layer intensities and stroke sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneStyle {
    pub background: f64,
    pub table: f64,
    pub arm: f64,
    pub gripper_open: f64,
    pub gripper_closed: f64,
    pub cube: f64,
    /// Half-thickness of link strokes, pixels.
    pub link_thickness: f64,
    /// Radius of the gripper marker disc, pixels.
    pub gripper_radius: f64,
    /// Table rectangle on the `y = 0` plane: `[x_min, x_max, z_min, z_max]`.
    pub table_extent: [f64; 4],
}

impl Default for SceneStyle {
    fn default() -> Self {
        Self {
            background: 0.0,
            table: 0.2,
            arm: 0.6,
            gripper_open: 0.5,
            gripper_closed: 0.9,
            cube: 1.0,
            link_thickness: 1.0,
            gripper_radius: 2.0,
            table_extent: [-0.2, 1.2, -0.6, 0.6],
        }
    }
}

impl SceneStyle {
    pub fn validate(&self) -> Result<(), RenderError> {
        let levels = [
            ("background", self.background),
            ("table", self.table),
            ("arm", self.arm),
            ("gripper_open", self.gripper_open),
            ("gripper_closed", self.gripper_closed),
            ("cube", self.cube),
        ];
        for (name, v) in levels {
            if !(0.0..=1.0).contains(&v) {
                return Err(RenderError::InvalidStyle(format!(
                    "{name} intensity {v} outside [0, 1]"
                )));
            }
        }
        if !(self.link_thickness >= 0.0 && self.gripper_radius >= 0.0) {
            return Err(RenderError::InvalidStyle("stroke sizes must be >= 0".into()));
        }
        let [x0, x1, z0, z1] = self.table_extent;
        if !(x0 <= x1 && z0 <= z1) {
            return Err(RenderError::InvalidStyle("table extent is inverted".into()));
        }
        Ok(())
    }
}

/// Floating-point canvas used while painting.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// Sets every pixel whose center satisfies `inside`, restricted to the
    /// given bounding box in continuous pixel coordinates.
    fn paint_where(
        &mut self,
        bounds: [f64; 4],
        intensity: f64,
        inside: impl Fn(f64, f64) -> bool,
    ) {
        let [u0, u1, v0, v1] = bounds;
        if !(u1 >= 0.0 && v1 >= 0.0 && u0 <= self.width as f64 && v0 <= self.height as f64) {
            return;
        }
        let col_lo = (u0 - 0.5).ceil().max(0.0) as usize;
        let col_hi = ((u1 - 0.5).floor().min(self.width as f64 - 1.0)).max(-1.0);
        let row_lo = (v0 - 0.5).ceil().max(0.0) as usize;
        let row_hi = ((v1 - 0.5).floor().min(self.height as f64 - 1.0)).max(-1.0);
        if col_hi < 0.0 || row_hi < 0.0 {
            return;
        }
        for row in row_lo..=row_hi as usize {
            for col in col_lo..=col_hi as usize {
                if inside(col as f64 + 0.5, row as f64 + 0.5) {
                    self.data[row * self.width + col] = intensity;
                }
            }
        }
    }
}

fn segment_distance_sq(q: [f64; 2], p0: [f64; 2], p1: [f64; 2]) -> f64 {
    let d = [p1[0] - p0[0], p1[1] - p0[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 {
        (((q[0] - p0[0]) * d[0] + (q[1] - p0[1]) * d[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let cx = p0[0] + t * d[0] - q[0];
    let cy = p0[1] + t * d[1] - q[1];
    cx * cx + cy * cy
}

/// Sets every pixel whose center lies within `thickness` of the segment
/// `p0`–`p1` (pixel coordinates) to `intensity`.
pub fn rasterize_segment(image: &mut Image, p0: [f64; 2], p1: [f64; 2], thickness: f64, intensity: f64) {
    let r2 = thickness * thickness;
    let bounds = [
        p0[0].min(p1[0]) - thickness,
        p0[0].max(p1[0]) + thickness,
        p0[1].min(p1[1]) - thickness,
        p0[1].max(p1[1]) + thickness,
    ];
    image.paint_where(bounds, intensity, |u, v| segment_distance_sq([u, v], p0, p1) <= r2);
}

fn fill_convex_quad(image: &mut Image, corners: [[f64; 2]; 4], intensity: f64) {
    let us = corners.map(|c| c[0]);
    let vs = corners.map(|c| c[1]);
    let bounds = [
        us.iter().copied().fold(f64::INFINITY, f64::min),
        us.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        vs.iter().copied().fold(f64::INFINITY, f64::min),
        vs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    ];
    image.paint_where(bounds, intensity, |u, v| {
        let mut sign = 0.0_f64;
        for k in 0..4 {
            let a = corners[k];
            let b = corners[(k + 1) % 4];
            let c = (b[0] - a[0]) * (v - a[1]) - (b[1] - a[1]) * (u - a[0]);
            if c != 0.0 {
                if sign != 0.0 && c.signum() != sign {
                    return false;
                }
                sign = c.signum();
            }
        }
        true
    });
    // Edges keep an edge-on table visible as a line.
    for k in 0..4 {
        rasterize_segment(image, corners[k], corners[(k + 1) % 4], 0.5, intensity);
    }
}

/// Grayscale observation, stored as 8-bit levels; intensity = level / 255.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Observation {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Observation {
    pub fn from_image(image: &Image) -> Self {
        Self {
            width: image.width,
            height: image.height,
            pixels: image
                .data
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect(),
        }
    }

    pub fn intensity(&self, col: usize, row: usize) -> f64 {
        f64::from(self.pixels[row * self.width + col]) / 255.0
    }

    /// Intensities in row-major order, as fed to the network.
    pub fn to_input(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| f64::from(p) / 255.0).collect()
    }

    /// Binary portable graymap (P5, maxval 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<(), RenderError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_pgm())?;
        Ok(())
    }

    pub fn read_pgm(path: &Path) -> Result<Self, RenderError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_pgm(&bytes)
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self, RenderError> {
        let mut pos = 0;
        let mut tokens = Vec::with_capacity(4);
        while tokens.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(RenderError::Pgm("truncated header".into()));
            }
            tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        if tokens[0] != "P5" {
            return Err(RenderError::Pgm(format!("magic `{}` is not P5", tokens[0])));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| RenderError::Pgm(format!("bad header number `{s}`")))
        };
        let (width, height, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
        if maxval != 255 {
            return Err(RenderError::Pgm(format!("maxval {maxval} unsupported (need 255)")));
        }
        if width == 0 || height == 0 {
            return Err(RenderError::EmptyImage { width, height });
        }
        let raster = bytes
            .get(pos..pos + width * height)
            .ok_or_else(|| RenderError::Pgm("raster shorter than header size".into()))?;
        Ok(Self {
            width,
            height,
            pixels: raster.to_vec(),
        })
    }
}

/// Paints the scene into a floating-point canvas.
pub fn render_image(
    world: &WorldState,
    chain: &KinematicChain,
    camera: &CameraSpec,
    style: &SceneStyle,
    width: usize,
    height: usize,
) -> Result<Image, RenderError> {
    if width == 0 || height == 0 {
        return Err(RenderError::EmptyImage { width, height });
    }
    camera.validate()?;
    let project = |p: Vec3| camera.project(p, width, height);
    let mut image = Image::filled(width, height, style.background);

    let [x0, x1, z0, z1] = style.table_extent;
    let table = [[x0, 0.0, z0], [x1, 0.0, z0], [x1, 0.0, z1], [x0, 0.0, z1]].map(project);
    fill_convex_quad(&mut image, table, style.table);

    let pose = sim::forward_kinematics(chain, &world.arm);
    let points: Vec<[f64; 2]> = pose
        .segment_endpoints
        .iter()
        .chain(std::iter::once(&pose.gripper_point))
        .map(|&p| project(p))
        .collect();
    for pair in points.windows(2) {
        rasterize_segment(&mut image, pair[0], pair[1], style.link_thickness, style.arm);
    }

    let grip = project(pose.gripper_point);
    let marker = if world.arm.gripper_closed {
        style.gripper_closed
    } else {
        style.gripper_open
    };
    rasterize_segment(&mut image, grip, grip, style.gripper_radius, marker);

    let h = world.cube.half_extent;
    let center = project(geom::add(world.cube.position, [0.0, h, 0.0]));
    let half = (h * camera.scale).max(0.5);
    image.paint_where(
        [center[0] - half, center[0] + half, center[1] - half, center[1] + half],
        style.cube,
        |u, v| (u - center[0]).abs() <= half && (v - center[1]).abs() <= half,
    );
    Ok(image)
}

pub fn render(
    world: &WorldState,
    chain: &KinematicChain,
    camera: &CameraSpec,
    style: &SceneStyle,
    width: usize,
    height: usize,
) -> Result<Observation, RenderError> {
    render_image(world, chain, camera, style, width, height).map(|img| Observation::from_image(&img))
}
