//! Frame synthesis and the fixed parts of the keypoint decoder path.
//!
//! Image coordinates coincide with world coordinates: `x` runs along
//! columns, `y` along rows, both in [0,1]. Pixel `(row, col)` has its centre
//! at `((col + 0.5) / W, (row + 0.5) / H)`.

mod io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{Scene, Trajectory};

pub use io::{encode_png, read_png, write_pgm, write_png};

pub const BACKGROUND: [f64; 3] = [0.92, 0.92, 0.88];

/// Appearance colours indexed by `visual_id` (wrapping).
pub const PALETTE: [[f64; 3]; 8] = [
    [0.85, 0.15, 0.15],
    [0.15, 0.35, 0.85],
    [0.10, 0.65, 0.25],
    [0.95, 0.70, 0.10],
    [0.55, 0.20, 0.70],
    [0.05, 0.70, 0.75],
    [0.90, 0.40, 0.65],
    [0.35, 0.30, 0.25],
];

pub fn colour(visual_id: u8) -> [f64; 3] {
    PALETTE[visual_id as usize % PALETTE.len()]
}

/// An RGB image with values in [0,1], stored row-major, channels last.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Frame {
    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Frame {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Frame {
            height,
            width,
            data,
        }
    }

    pub fn background(size: usize) -> Frame {
        Frame::filled(size, size, BACKGROUND)
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &Frame) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn mse(&self, other: &Frame) -> Result<f64> {
        if !self.same_shape(other) {
            return Err(Error::Invalid(format!(
                "frame shapes {}x{} and {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        let n = self.data.len() as f64;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n)
    }

    /// Channel-planar copy (`[3][H][W]`), the layout the networks consume.
    pub fn to_chw(&self) -> Vec<f64> {
        let hw = self.height * self.width;
        let mut out = vec![0.0; 3 * hw];
        for p in 0..hw {
            for c in 0..3 {
                out[c * hw + p] = self.data[p * 3 + c];
            }
        }
        out
    }

    pub fn from_chw(height: usize, width: usize, chw: &[f64]) -> Frame {
        let hw = height * width;
        let mut data = vec![0.0; 3 * hw];
        for p in 0..hw {
            for c in 0..3 {
                data[p * 3 + c] = chw[c * hw + p].clamp(0.0, 1.0);
            }
        }
        Frame {
            height,
            width,
            data,
        }
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Frame {
        Frame {
            height,
            width,
            data: bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.data.len() == self.height * self.width * 3
            && self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

/// Draws discs of the given centres and radii with analytic edge coverage.
/// Later discs are painted over earlier ones.
pub fn rasterize_discs(discs: &[([f64; 2], f64, u8)], size: usize) -> Frame {
    let mut frame = Frame::background(size);
    let px = 1.0 / size as f64;
    for &(centre, radius, id) in discs {
        let rgb = colour(id);
        let r_px = radius / px;
        let (cx, cy) = (centre[0] / px, centre[1] / px);
        let lo_c = ((cx - r_px - 1.0).floor().max(0.0)) as usize;
        let hi_c = ((cx + r_px + 1.0).ceil().min(size as f64)) as usize;
        let lo_r = ((cy - r_px - 1.0).floor().max(0.0)) as usize;
        let hi_r = ((cy + r_px + 1.0).ceil().min(size as f64)) as usize;
        for row in lo_r..hi_r {
            for col in lo_c..hi_c {
                let dx = col as f64 + 0.5 - cx;
                let dy = row as f64 + 0.5 - cy;
                let coverage = (r_px - dx.hypot(dy) + 0.5).clamp(0.0, 1.0);
                if coverage > 0.0 {
                    let old = frame.pixel(row, col);
                    let mix = |c: usize| old[c] * (1.0 - coverage) + rgb[c] * coverage;
                    frame.set_pixel(row, col, [mix(0), mix(1), mix(2)]);
                }
            }
        }
    }
    frame
}

/// Renders a scene; colours come from `visual_id` only, never from mass.
pub fn rasterize(scene: &Scene, size: usize) -> Frame {
    let discs: Vec<_> = scene
        .bodies
        .iter()
        .map(|b| ([b.position.x, b.position.y], b.radius, b.visual_id))
        .collect();
    rasterize_discs(&discs, size)
}

/// Renders every frame of a trajectory using radii and appearance from
/// `scene` (bodies matched by index).
pub fn rasterize_trajectory(scene: &Scene, traj: &Trajectory, size: usize) -> Vec<Frame> {
    traj.states
        .iter()
        .map(|states| {
            let discs: Vec<_> = states
                .iter()
                .zip(&scene.bodies)
                .map(|(s, b)| ([s.position.x, s.position.y], b.radius, b.visual_id))
                .collect();
            rasterize_discs(&discs, size)
        })
        .collect()
}

/// `exp(-‖p - k‖² / σ²)` at every pixel centre of an `h × w` grid.
pub fn gaussian_map(k: [f64; 2], sigma: f64, h: usize, w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(h * w);
    let s2 = sigma * sigma;
    for row in 0..h {
        let y = (row as f64 + 0.5) / h as f64;
        for col in 0..w {
            let x = (col as f64 + 0.5) / w as f64;
            let d2 = (x - k[0]).powi(2) + (y - k[1]).powi(2);
            out.push((-d2 / s2).exp());
        }
    }
    out
}

pub const KERNEL_SIZE: usize = 5;

/// Fixed oriented line kernels; kernel `i` (from 0) lies at angle `iπ/C`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    pub kernels: Vec<[f64; KERNEL_SIZE * KERNEL_SIZE]>,
}

impl FilterBank {
    pub fn new(c: usize) -> FilterBank {
        let half = (KERNEL_SIZE / 2) as f64;
        let kernels = (0..c)
            .map(|i| {
                let theta = i as f64 * std::f64::consts::PI / c as f64;
                let (s, co) = theta.sin_cos();
                let mut k = [0.0; KERNEL_SIZE * KERNEL_SIZE];
                for r in 0..KERNEL_SIZE {
                    for q in 0..KERNEL_SIZE {
                        let (dx, dy) = (q as f64 - half, r as f64 - half);
                        let dist = (-s * dx + co * dy).abs();
                        k[r * KERNEL_SIZE + q] = (1.0 - dist).max(0.0);
                    }
                }
                let total: f64 = k.iter().sum();
                k.iter_mut().for_each(|v| *v /= total);
                k
            })
            .collect();
        FilterBank { kernels }
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn angle(&self, i: usize) -> f64 {
        i as f64 * std::f64::consts::PI / self.len() as f64
    }
}

/// Same-size 2D convolution with zero padding (kernels here are point
/// symmetric, so this equals cross-correlation).
pub fn convolve_same(map: &[f64], h: usize, w: usize, kernel: &[f64], ks: usize) -> Vec<f64> {
    let half = (ks / 2) as isize;
    let mut out = vec![0.0; h * w];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let mut acc = 0.0;
            for kr in 0..ks as isize {
                let rr = r + kr - half;
                if rr < 0 || rr >= h as isize {
                    continue;
                }
                for kc in 0..ks as isize {
                    let cc = c + kc - half;
                    if cc < 0 || cc >= w as isize {
                        continue;
                    }
                    acc += kernel[(kr * ks as isize + kc) as usize]
                        * map[(rr * w as isize + cc) as usize];
                }
            }
            out[(r * w as isize + c) as usize] = acc;
        }
    }
    out
}

/// A keypoint with `C + 1` coefficients; the last coefficient gates it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub coeffs: Vec<f64>,
}

impl Keypoint {
    pub fn gate(&self) -> f64 {
        *self.coeffs.last().expect("at least the gate coefficient")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeypointState {
    pub keypoints: Vec<Keypoint>,
}

impl KeypointState {
    pub fn k(&self) -> usize {
        self.keypoints.len()
    }

    /// Number of shape coefficients C (excluding the gate).
    pub fn c(&self) -> usize {
        self.keypoints.first().map_or(0, |k| k.coeffs.len() - 1)
    }

    /// Flat `[x, y, c1..c_{C+1}]` per keypoint.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.keypoints
            .iter()
            .map(|k| {
                let mut row = vec![k.x, k.y];
                row.extend_from_slice(&k.coeffs);
                row
            })
            .collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> KeypointState {
        KeypointState {
            keypoints: rows
                .iter()
                .map(|r| Keypoint {
                    x: r[0],
                    y: r[1],
                    coeffs: r[2..].to_vec(),
                })
                .collect(),
        }
    }
}

/// `G^i_k = gate_k · c^i_k · (G(k_k) * H_i)` for every keypoint and kernel,
/// keypoint-major. `maps` holds one Gaussian map per keypoint.
pub fn deform(
    maps: &[Vec<f64>],
    state: &KeypointState,
    bank: &FilterBank,
    h: usize,
    w: usize,
) -> Result<Vec<Vec<f64>>> {
    if maps.len() != state.k() {
        return Err(Error::Invalid(format!(
            "{} maps for {} keypoints",
            maps.len(),
            state.k()
        )));
    }
    if state.keypoints.iter().any(|k| k.coeffs.len() != bank.len() + 1) {
        return Err(Error::Invalid(format!(
            "keypoints need {} coefficients",
            bank.len() + 1
        )));
    }
    let mut out = Vec::with_capacity(maps.len() * bank.len());
    for (map, kp) in maps.iter().zip(&state.keypoints) {
        let gate = kp.gate();
        for (i, kernel) in bank.kernels.iter().enumerate() {
            let scale = gate * kp.coeffs[i];
            let conv = convolve_same(map, h, w, kernel, KERNEL_SIZE);
            out.push(conv.into_iter().map(|v| v * scale).collect());
        }
    }
    Ok(out)
}

/// Binary foreground mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn dilate3(&self) -> Mask {
        let (h, w) = (self.height as isize, self.width as isize);
        let mut data = vec![false; self.data.len()];
        for r in 0..h {
            for c in 0..w {
                let mut hit = false;
                for dr in -1..=1 {
                    for dc in -1..=1 {
                        let (rr, cc) = (r + dr, c + dc);
                        if rr >= 0 && rr < h && cc >= 0 && cc < w {
                            hit |= self.data[(rr * w + cc) as usize];
                        }
                    }
                }
                data[(r * w + c) as usize] = hit;
            }
        }
        Mask {
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Centroid `(x, y)` in normalized coordinates; `None` if empty.
    pub fn centroid(&self) -> Option<[f64; 2]> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for r in 0..self.height {
            for c in 0..self.width {
                if self.data[r * self.width + c] {
                    sx += (c as f64 + 0.5) / self.width as f64;
                    sy += (r as f64 + 0.5) / self.height as f64;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| [sx / n as f64, sy / n as f64])
    }
}

/// Pixels whose largest channel difference exceeds `thresh` (before
/// dilation).
pub fn foreground(frame: &Frame, background: &Frame, thresh: f64) -> Result<Mask> {
    if !frame.same_shape(background) {
        return Err(Error::Invalid("frame and background shapes differ".into()));
    }
    let data = frame
        .data
        .chunks_exact(3)
        .zip(background.data.chunks_exact(3))
        .map(|(a, b)| {
            let d = (0..3).map(|c| (a[c] - b[c]).abs()).fold(0.0, f64::max);
            d > thresh
        })
        .collect();
    Ok(Mask {
        height: frame.height,
        width: frame.width,
        data,
    })
}

/// Background-subtraction mask followed by a 3×3 dilation.
pub fn background_mask(frame: &Frame, background: &Frame, thresh: f64) -> Result<Mask> {
    Ok(foreground(frame, background, thresh)?.dilate3())
}

/// Tiles frames left to right, `cols` per row, with a 1-pixel white gutter.
pub fn contact_sheet(frames: &[Frame], cols: usize) -> Result<Frame> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Invalid("contact sheet needs frames".into()))?;
    if frames.iter().any(|f| !f.same_shape(first)) {
        return Err(Error::Invalid("contact sheet frames differ in size".into()));
    }
    let cols = cols.clamp(1, frames.len());
    let rows = frames.len().div_ceil(cols);
    let (fh, fw) = (first.height, first.width);
    let mut sheet = Frame::filled(rows * (fh + 1) + 1, cols * (fw + 1) + 1, [1.0; 3]);
    for (i, f) in frames.iter().enumerate() {
        let (r0, c0) = ((i / cols) * (fh + 1) + 1, (i % cols) * (fw + 1) + 1);
        for r in 0..fh {
            for c in 0..fw {
                sheet.set_pixel(r0 + r, c0 + c, f.pixel(r, c));
            }
        }
    }
    Ok(sheet)
}

/// Something that turns a keypoint state into an image.
pub trait StateDecoder {
    fn is_trained(&self) -> bool;
    fn decode_state(&self, state: &KeypointState) -> Result<Frame>;
}

/// Which scalar of a keypoint a sweep varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepComponent {
    X,
    Y,
    /// Coefficient index in `0..=C` (C is the gate).
    Coeff(usize),
}

impl std::str::FromStr for SweepComponent {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" => Ok(SweepComponent::X),
            "y" => Ok(SweepComponent::Y),
            "gate" => Ok(SweepComponent::Coeff(usize::MAX)),
            other => other
                .strip_prefix('c')
                .and_then(|i| i.parse::<usize>().ok())
                .filter(|&i| i >= 1)
                .map(|i| SweepComponent::Coeff(i - 1))
                .ok_or_else(|| Error::Invalid(format!("unknown sweep component `{other}`"))),
        }
    }
}

/// Decodes `state` with one keypoint scalar replaced by each grid value.
pub fn latent_sweep(
    state: &KeypointState,
    keypoint: usize,
    component: SweepComponent,
    grid: &[f64],
    decoder: &dyn StateDecoder,
) -> Result<Vec<Frame>> {
    if !decoder.is_trained() {
        return Err(Error::Prerequisite("latent sweep needs a trained decoder".into()));
    }
    if keypoint >= state.k() {
        return Err(Error::Invalid(format!(
            "keypoint {keypoint} out of range ({} keypoints)",
            state.k()
        )));
    }
    grid.iter()
        .map(|&v| {
            let mut s = state.clone();
            let kp = &mut s.keypoints[keypoint];
            match component {
                SweepComponent::X => kp.x = v,
                SweepComponent::Y => kp.y = v,
                SweepComponent::Coeff(i) => {
                    let i = i.min(kp.coeffs.len() - 1);
                    kp.coeffs[i] = v;
                }
            }
            decoder.decode_state(&s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Body, Vec2};

    fn one_ball(x: f64, y: f64, r: f64, m: f64) -> Scene {
        Scene::new(vec![Body::new(Vec2::new(x, y), Vec2::ZERO, r, m, 1)]).unwrap()
    }

    #[test]
    fn empty_scene_is_background() {
        let f = rasterize(&Scene::new(vec![]).unwrap(), 16);
        assert_eq!(f, Frame::background(16));
    }

    #[test]
    fn masses_are_invisible() {
        let a = rasterize(&one_ball(0.4, 0.6, 0.07, 1.0), 32);
        let b = rasterize(&one_ball(0.4, 0.6, 0.07, 10.0), 32);
        assert_eq!(a.to_rgb8(), b.to_rgb8());
        assert_eq!(a, rasterize(&one_ball(0.4, 0.6, 0.07, 1.0), 32));
        assert!(a.is_valid());
    }

    #[test]
    fn gaussian_map_values() {
        // 9x9 grid: centre pixel centre is (0.5, 0.5)
        let m = gaussian_map([0.5, 0.5], 0.1, 9, 9);
        assert_eq!(m[4 * 9 + 4], 1.0);
        // one pixel = 1/9; σ = 2/9 puts the value at distance σ two pixels away
        let m = gaussian_map([0.5, 0.5], 2.0 / 9.0, 9, 9);
        assert!((m[4 * 9 + 6] - (-1.0f64).exp()).abs() < 1e-12);
        // on-grid translation
        let a = gaussian_map([0.5, 0.5], 0.2, 9, 9);
        let b = gaussian_map([0.5 + 1.0 / 9.0, 0.5], 0.2, 9, 9);
        for r in 0..9 {
            for c in 0..8 {
                assert!((a[r * 9 + c] - b[r * 9 + c + 1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bank_orientations_and_normalization() {
        let bank = FilterBank::new(5);
        assert_eq!(bank.len(), 5);
        let degrees: Vec<f64> = (0..5).map(|i| bank.angle(i).to_degrees()).collect();
        for (d, e) in degrees.iter().zip([0.0, 36.0, 72.0, 108.0, 144.0]) {
            assert!((d - e).abs() < 1e-9);
        }
        for k in &bank.kernels {
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(k.iter().all(|&v| v >= 0.0));
        }
        for i in 0..5 {
            for j in i + 1..5 {
                assert_ne!(bank.kernels[i], bank.kernels[j]);
            }
        }
        // horizontal kernel occupies the middle row
        let h = &bank.kernels[0];
        assert!((h[2 * 5..3 * 5].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    fn state(gate: f64, c: [f64; 3]) -> KeypointState {
        KeypointState {
            keypoints: vec![Keypoint {
                x: 0.5,
                y: 0.5,
                coeffs: vec![c[0], c[1], c[2], gate],
            }],
        }
    }

    #[test]
    fn deform_gating_and_linearity() {
        let bank = FilterBank::new(3);
        let maps = vec![gaussian_map([0.5, 0.5], 0.1, 17, 17)];
        let off = deform(&maps, &state(0.0, [1.0, 1.0, 1.0]), &bank, 17, 17).unwrap();
        assert!(off.iter().all(|m| m.iter().all(|&v| v == 0.0)));
        let one = deform(&maps, &state(1.0, [0.2, 0.4, 0.6]), &bank, 17, 17).unwrap();
        let two = deform(&maps, &state(1.0, [0.6, 1.2, 1.8]), &bank, 17, 17).unwrap();
        for (a, b) in one.iter().flatten().zip(two.iter().flatten()) {
            assert!((3.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn horizontal_kernel_elongates_horizontally() {
        let bank = FilterBank::new(5);
        let maps = vec![gaussian_map([0.5, 0.5], 0.03, 17, 17)];
        let d = deform(&maps, &state(1.0, [1.0, 0.0, 0.0]).with_c(5), &bank, 17, 17).unwrap();
        let m = &d[0];
        let row: f64 = (0..17).map(|c| m[8 * 17 + c]).sum();
        let col: f64 = (0..17).map(|r| m[r * 17 + 8]).sum();
        assert!(row > col);
    }

    impl KeypointState {
        fn with_c(mut self, c: usize) -> Self {
            for k in &mut self.keypoints {
                let gate = k.gate();
                k.coeffs.resize(c, 0.0);
                k.coeffs.push(gate);
            }
            self
        }
    }

    #[test]
    fn mask_semantics() {
        let bg = Frame::background(32);
        assert_eq!(background_mask(&bg, &bg, 0.0).unwrap().count(), 0);
        let r = 0.1;
        let f = rasterize(&one_ball(0.5, 0.5, r, 1.0), 32);
        let raw = foreground(&f, &bg, 0.0).unwrap();
        let mask = background_mask(&f, &bg, 0.0).unwrap();
        let area_px = std::f64::consts::PI * (r * 32.0).powi(2);
        let dilated_px = std::f64::consts::PI * (r * 32.0 + 1.5).powi(2);
        assert!(mask.count() as f64 >= area_px);
        assert!((mask.count() as f64) <= dilated_px + 4.0 * (r * 32.0 + 1.5) * 2.0);
        let non_bg = f
            .data
            .chunks_exact(3)
            .filter(|p| p.iter().zip(BACKGROUND).any(|(a, b)| *a != b))
            .count();
        assert_eq!(raw.count(), non_bg);
    }

    #[test]
    fn contact_sheet_layout() {
        let frames = vec![Frame::background(8); 5];
        let sheet = contact_sheet(&frames, 3).unwrap();
        assert_eq!((sheet.height, sheet.width), (2 * 9 + 1, 3 * 9 + 1));
        assert!(contact_sheet(&[], 3).is_err());
    }

    struct Untrained;
    impl StateDecoder for Untrained {
        fn is_trained(&self) -> bool {
            false
        }
        fn decode_state(&self, _: &KeypointState) -> Result<Frame> {
            unreachable!()
        }
    }

    struct Splat;
    impl StateDecoder for Splat {
        fn is_trained(&self) -> bool {
            true
        }
        fn decode_state(&self, s: &KeypointState) -> Result<Frame> {
            let discs: Vec<_> = s
                .keypoints
                .iter()
                .map(|k| ([k.x, k.y], 0.08 * k.gate(), 0))
                .collect();
            Ok(rasterize_discs(&discs, 32))
        }
    }

    #[test]
    fn latent_sweep_contract() {
        let s = state(1.0, [0.5, 0.5, 0.5]);
        assert!(latent_sweep(&s, 0, SweepComponent::X, &[0.3], &Untrained).is_err());
        assert!(latent_sweep(&s, 0, SweepComponent::X, &[], &Splat).unwrap().is_empty());
        let frames = latent_sweep(&s, 0, SweepComponent::X, &[0.2, 0.4, 0.6, 0.8], &Splat).unwrap();
        let bg = Frame::background(32);
        let xs: Vec<f64> = frames
            .iter()
            .map(|f| background_mask(f, &bg, 0.05).unwrap().centroid().unwrap()[0])
            .collect();
        assert!(xs.windows(2).all(|w| w[1] > w[0]));
        let gates = latent_sweep(&s, 0, SweepComponent::Coeff(3), &[1.0, 0.5, 0.0], &Splat).unwrap();
        let areas: Vec<usize> = gates
            .iter()
            .map(|f| foreground(f, &bg, 0.05).unwrap().count())
            .collect();
        assert!(areas[0] > areas[1] && areas[2] == 0);
        assert_eq!("c2".parse::<SweepComponent>().unwrap(), SweepComponent::Coeff(1));
    }
}
