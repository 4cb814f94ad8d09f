//! Synthetic camera: procedural background, leader ellipsoid rendering,
//! ground-truth masks, appearance randomization and mask statistics.
//!
//! The renderer is a pure function of its inputs. Background pixels depend
//! only on the view ray and the background seed, so moving the leader never
//! touches pixels outside the old and new masks.

use std::io::{self, BufRead, Write};

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{project_ellipsoid, CameraIntrinsics, Ellipsoid, Pose};
use crate::rng::{hash_words, unit_from_hash, StreamRng};

#[derive(Debug, Error)]
pub enum PerceptError {
    #[error("malformed image: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Rgb = [u8; 3];

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, [0, 0, 0])
    }

    pub fn filled(width: u32, height: u32, color: Rgb) -> Self {
        let n = width as usize * height as usize;
        let mut pixels = Vec::with_capacity(3 * n);
        for _ in 0..n {
            pixels.extend_from_slice(&color);
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    fn index(&self, i: u32, j: u32) -> usize {
        3 * (j as usize * self.width as usize + i as usize)
    }

    pub fn get(&self, i: u32, j: u32) -> Rgb {
        let k = self.index(i, j);
        [self.pixels[k], self.pixels[k + 1], self.pixels[k + 2]]
    }

    pub fn set(&mut self, i: u32, j: u32, color: Rgb) {
        let k = self.index(i, j);
        self.pixels[k..k + 3].copy_from_slice(&color);
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Luma `0.299 R + 0.587 G + 0.114 B`, row-major.
    pub fn luma(&self) -> Vec<f64> {
        self.pixels
            .chunks_exact(3)
            .map(|p| 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]))
            .collect()
    }

    /// Every channel mapped to `255 - value`.
    pub fn negative(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|v| 255 - v).collect(),
        }
    }

    /// Every channel shifted by `delta`, saturating.
    pub fn offset(&self, delta: i16) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&v| shift(v, delta)).collect(),
        }
    }

    /// Binary PPM (P6).
    pub fn write_ppm<W: Write>(&self, mut out: W) -> io::Result<()> {
        write!(out, "P6\n{} {}\n255\n", self.width, self.height)?;
        out.write_all(&self.pixels)
    }

    pub fn read_ppm<R: BufRead>(mut input: R) -> Result<Self, PerceptError> {
        let (width, height) = read_netpbm_header(&mut input, "P6")?;
        let mut pixels = vec![0; width as usize * height as usize * 3];
        input.read_exact(&mut pixels)?;
        Ok(Self {
            width,
            height,
            pixels,
        })
    }
}

fn shift(v: u8, delta: i16) -> u8 {
    (i16::from(v) + delta).clamp(0, 255) as u8
}

fn read_token<R: BufRead>(input: &mut R) -> Result<String, PerceptError> {
    let mut token = String::new();
    let mut byte = [0u8; 1];
    loop {
        if input.read(&mut byte)? == 0 {
            break;
        }
        let c = byte[0] as char;
        if c == '#' {
            let mut skip = String::new();
            input.read_line(&mut skip)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            break;
        }
        token.push(c);
    }
    if token.is_empty() {
        return Err(PerceptError::Format("unexpected end of header".into()));
    }
    Ok(token)
}

fn read_netpbm_header<R: BufRead>(input: &mut R, magic: &str) -> Result<(u32, u32), PerceptError> {
    let m = read_token(input)?;
    if m != magic {
        return Err(PerceptError::Format(format!("expected {magic}, found {m}")));
    }
    let mut num = |what: &str| -> Result<u32, PerceptError> {
        read_token(input)?
            .parse()
            .map_err(|_| PerceptError::Format(format!("bad {what}")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if maxval != 255 {
        return Err(PerceptError::Format(format!("unsupported maxval {maxval}")));
    }
    Ok((width, height))
}

/// Row-major binary occupancy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn get(&self, i: u32, j: u32) -> bool {
        self.bits[j as usize * self.width as usize + i as usize]
    }

    pub fn set(&mut self, i: u32, j: u32, value: bool) {
        self.bits[j as usize * self.width as usize + i as usize] = value;
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Intersection over union; two empty masks score 1.
    pub fn iou(&self, other: &Mask) -> f64 {
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.bits.iter().zip(&other.bits) {
            inter += usize::from(a && b);
            union += usize::from(a || b);
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Binary PGM (P5) with set bits as 255.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> io::Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        out.write_all(&bytes)
    }

    /// Any non-zero gray value reads back as set.
    pub fn read_pgm<R: BufRead>(mut input: R) -> Result<Self, PerceptError> {
        let (width, height) = read_netpbm_header(&mut input, "P5")?;
        let mut bytes = vec![0; width as usize * height as usize];
        input.read_exact(&mut bytes)?;
        Ok(Self {
            width,
            height,
            bits: bytes.iter().map(|&b| b != 0).collect(),
        })
    }
}

/// Leader planform 70 cm x 52 cm, 16 cm thick.
pub const LEADER_SEMI_AXES: [f64; 3] = [0.35, 0.26, 0.08];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeaderAppearance {
    /// (half-wingspan, half-length, half-thickness) in meters.
    pub semi_axes: Vector3<f64>,
    pub scale_factor: f64,
    pub brightness_offset: i16,
    pub salt_pepper_fraction: f64,
}

impl Default for LeaderAppearance {
    fn default() -> Self {
        Self {
            semi_axes: Vector3::from(LEADER_SEMI_AXES),
            scale_factor: 1.0,
            brightness_offset: 0,
            salt_pepper_fraction: 0.0,
        }
    }
}

impl LeaderAppearance {
    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale_factor = scale;
        self
    }

    pub fn with_salt_pepper(mut self, fraction: f64) -> Self {
        self.salt_pepper_fraction = fraction;
        self
    }

    pub fn is_valid(&self) -> bool {
        self.scale_factor > 0.0
            && (0.0..=1.0).contains(&self.salt_pepper_fraction)
            && self.semi_axes.iter().all(|&s| s > 0.0)
    }

    pub fn ellipsoid(&self, leader: &Pose) -> Ellipsoid {
        Ellipsoid::at_pose(leader, self.semi_axes * self.scale_factor)
    }
}

/// Inclusive sampling ranges for [`randomize_appearance`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppearanceRanges {
    pub scale: (f64, f64),
    pub brightness: (i16, i16),
    pub salt_pepper: (f64, f64),
}

impl Default for AppearanceRanges {
    fn default() -> Self {
        Self {
            scale: (0.5, 2.0),
            brightness: (-40, 40),
            salt_pepper: (0.0, 0.3),
        }
    }
}

fn draw<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo >= hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Seeded uniform draws of scale, brightness and salt-pepper level.
pub fn randomize_appearance(
    base: &LeaderAppearance,
    ranges: &AppearanceRanges,
    seed: u64,
) -> LeaderAppearance {
    let mut rng: StreamRng = rand::SeedableRng::seed_from_u64(seed);
    let scale_factor = draw(&mut rng, ranges.scale.0, ranges.scale.1);
    let (b0, b1) = ranges.brightness;
    let brightness_offset = if b0 >= b1 {
        b0
    } else {
        rng.random_range(b0..=b1)
    };
    let salt_pepper_fraction = draw(&mut rng, ranges.salt_pepper.0, ranges.salt_pepper.1);
    LeaderAppearance {
        semi_axes: base.semi_axes,
        scale_factor,
        brightness_offset,
        salt_pepper_fraction,
    }
}

/// Default leader paint, a saturated red absent from the background palette.
pub const LEADER_COLOR: Rgb = [220, 40, 40];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub intrinsics: CameraIntrinsics,
    pub background_seed: u64,
    pub leader_base_color: Rgb,
    /// Keys the per-frame salt-pepper pattern.
    pub noise_seed: u64,
}

impl RenderConfig {
    pub fn new(intrinsics: CameraIntrinsics, background_seed: u64) -> Self {
        Self {
            intrinsics,
            background_seed,
            leader_base_color: LEADER_COLOR,
            noise_seed: 0,
        }
    }

    pub fn desk(background_seed: u64) -> Self {
        Self::new(CameraIntrinsics::desk(), background_seed)
    }

    pub fn with_noise_seed(mut self, seed: u64) -> Self {
        self.noise_seed = seed;
        self
    }

    /// Leader paint after the brightness offset.
    pub fn shaded_leader_color(&self, appearance: &LeaderAppearance) -> Rgb {
        self.leader_base_color
            .map(|c| shift(c, appearance.brightness_offset))
    }
}

/// Rasterized projection of the leader ellipsoid; empty when it is not in view.
pub fn ground_truth_mask(
    config: &RenderConfig,
    camera: &Pose,
    leader: &Pose,
    appearance: &LeaderAppearance,
) -> Mask {
    let intr = &config.intrinsics;
    match project_ellipsoid(intr, camera, &appearance.ellipsoid(leader)) {
        Some(ellipse) => Mask {
            width: intr.width,
            height: intr.height,
            bits: ellipse.rasterize(intr.width, intr.height),
        },
        None => Mask::empty(intr.width, intr.height),
    }
}

const AZIMUTH_CELLS: i64 = 96;
const ELEVATION_CELLS_PER_RAD: f64 = AZIMUTH_CELLS as f64 / std::f64::consts::TAU;

fn lattice(seed: u64, ia: i64, ie: i64) -> f64 {
    let ia = ia.rem_euclid(AZIMUTH_CELLS);
    unit_from_hash(hash_words(&[seed, ia as u64, ie as u64]))
}

/// Smooth value noise in `[0, 1)` over the sphere of view directions.
fn value_noise(seed: u64, azimuth: f64, elevation: f64) -> f64 {
    let a = azimuth.rem_euclid(std::f64::consts::TAU) * ELEVATION_CELLS_PER_RAD;
    let e = elevation * ELEVATION_CELLS_PER_RAD;
    let (a0, e0) = (a.floor(), e.floor());
    let (fa, fe) = (a - a0, e - e0);
    let (sa, se) = (fa * fa * (3.0 - 2.0 * fa), fe * fe * (3.0 - 2.0 * fe));
    let (ia, ie) = (a0 as i64, e0 as i64);
    let top = lattice(seed, ia, ie) * (1.0 - sa) + lattice(seed, ia + 1, ie) * sa;
    let bottom = lattice(seed, ia, ie + 1) * (1.0 - sa) + lattice(seed, ia + 1, ie + 1) * sa;
    top * (1.0 - se) + bottom * se
}

fn lerp(a: Rgb, b: Rgb, t: f64) -> [f64; 3] {
    std::array::from_fn(|k| f64::from(a[k]) + (f64::from(b[k]) - f64::from(a[k])) * t)
}

/// Color seen along a world-frame view direction with no leader present.
pub fn background_color(seed: u64, direction: &Vector3<f64>) -> Rgb {
    let d = direction.normalize();
    let elevation = d.z.clamp(-1.0, 1.0).asin();
    let azimuth = d.y.atan2(d.x);
    let n = value_noise(seed, azimuth, elevation) - 0.5;
    let base = if elevation >= 0.0 {
        // Hall ceiling and walls.
        lerp([150, 165, 185], [95, 120, 160], (elevation / 0.6).min(1.0))
    } else {
        // Floor, darker toward the nadir.
        lerp([120, 125, 110], [70, 80, 70], (-elevation / 0.8).min(1.0))
    };
    base.map(|c| (c + 50.0 * n).round().clamp(0.0, 255.0) as u8)
}

fn view_direction(
    intr: &CameraIntrinsics,
    camera_rotation: &nalgebra::Matrix3<f64>,
    i: u32,
    j: u32,
) -> Vector3<f64> {
    let body = Vector3::new(
        1.0,
        -(f64::from(i) - intr.cx) / intr.fx,
        -(f64::from(j) - intr.cy) / intr.fy,
    );
    camera_rotation * body
}

/// Background-only frame for a camera pose.
pub fn render_background(config: &RenderConfig, camera: &Pose) -> Frame {
    let intr = &config.intrinsics;
    let rot = camera.rotation();
    let mut frame = Frame::new(intr.width, intr.height);
    for j in 0..intr.height {
        for i in 0..intr.width {
            frame.set(
                i,
                j,
                background_color(config.background_seed, &view_direction(intr, &rot, i, j)),
            );
        }
    }
    frame
}

/// Renders the scene and its ground-truth leader mask.
///
/// A `salt_pepper_fraction` share of leader pixels (seeded by `noise_seed`
/// and pixel index) turns black or white with equal odds.
pub fn render_scene(
    config: &RenderConfig,
    camera: &Pose,
    leader: Option<&Pose>,
    appearance: &LeaderAppearance,
) -> (Frame, Mask) {
    let intr = &config.intrinsics;
    let mut frame = render_background(config, camera);
    let Some(leader) = leader else {
        return (frame, Mask::empty(intr.width, intr.height));
    };
    let mask = ground_truth_mask(config, camera, leader, appearance);
    let paint = config.shaded_leader_color(appearance);
    for (k, _) in mask.bits.iter().enumerate().filter(|(_, &b)| b) {
        let h = hash_words(&[config.noise_seed, 0x5a17, k as u64]);
        let color = if unit_from_hash(h) < appearance.salt_pepper_fraction {
            if h & 1 == 0 {
                [0, 0, 0]
            } else {
                [255, 255, 255]
            }
        } else {
            paint
        };
        frame.set(
            (k % intr.width as usize) as u32,
            (k / intr.width as usize) as u32,
            color,
        );
    }
    (frame, mask)
}

/// Replaces a seeded `fraction` of all pixels with black or white, a crude
/// stand-in for analog video dropouts.
pub fn corrupt_frame(frame: &Frame, fraction: f64, seed: u64) -> Frame {
    let mut out = frame.clone();
    for k in 0..frame.pixel_count() {
        let h = hash_words(&[seed, 0xa7a1, k as u64]);
        if unit_from_hash(h) < fraction {
            let v = if h & 1 == 0 { 0 } else { 255 };
            out.pixels[3 * k..3 * k + 3].fill(v);
        }
    }
    out
}

/// Pixels within `tolerance` of `color` on every channel.
pub fn segment_color(frame: &Frame, color: Rgb, tolerance: u8) -> Mask {
    Mask {
        width: frame.width,
        height: frame.height,
        bits: frame
            .pixels
            .chunks_exact(3)
            .map(|p| (0..3).all(|c| p[c].abs_diff(color[c]) <= tolerance))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskStats {
    pub centroid: Vector2<f64>,
    pub area: usize,
    /// Inclusive pixel bounds `(i_min, j_min, i_max, j_max)`.
    pub bbox: (u32, u32, u32, u32),
}

/// Centroid, area and bounding box of the set bits; `None` for an empty mask.
pub fn mask_stats(mask: &Mask) -> Option<MaskStats> {
    let w = mask.width as usize;
    let (mut area, mut su, mut sv) = (0usize, 0.0, 0.0);
    let mut bbox = (u32::MAX, u32::MAX, 0, 0);
    for (k, _) in mask.bits.iter().enumerate().filter(|(_, &b)| b) {
        let (i, j) = ((k % w) as u32, (k / w) as u32);
        area += 1;
        su += f64::from(i);
        sv += f64::from(j);
        bbox = (bbox.0.min(i), bbox.1.min(j), bbox.2.max(i), bbox.3.max(j));
    }
    (area > 0).then(|| MaskStats {
        centroid: Vector2::new(su / area as f64, sv / area as f64),
        area,
        bbox,
    })
}
