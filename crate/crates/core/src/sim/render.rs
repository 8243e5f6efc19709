use std::collections::BTreeMap;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ObjectState, Vec3, WorldState};

/// Entity id under which the end-effector box is reported.
pub const END_EFFECTOR_ID: &str = "end_effector";

pub const BACKGROUND_INDEX: u8 = 0;
pub const END_EFFECTOR_INDEX: u8 = 1;

/// Top-down orthographic raster settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    pub meters_per_pixel: f64,
    /// End-effector square half-size at z = 0, in pixels.
    pub ee_base_half_px: f64,
    /// Growth of the square half-size per meter of height.
    pub ee_half_px_per_meter: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            meters_per_pixel: 0.005,
            ee_base_half_px: 2.0,
            ee_half_px_per_meter: 50.0,
        }
    }
}

/// Row-major raster of palette indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn get(&self, col: usize, row: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.width as u64).to_le_bytes());
        hasher.update((self.height as u64).to_le_bytes());
        hasher.update(&self.pixels);
        hex::encode(&hasher.finalize()[..8])
    }

    /// Binary portable graymap (P5); maxval is the largest palette index present.
    pub fn to_pgm(&self) -> Vec<u8> {
        let maxval = self.pixels.iter().copied().max().unwrap_or(0).max(1);
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, maxval).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Axis-aligned box in pixel-edge coordinates: pixel `(c, r)` spans
/// `[c, c + 1) x [r, r + 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_corner: Vector2<f64>,
    pub max_corner: Vector2<f64>,
}

impl BoundingBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            min_corner: Vector2::new(x0, y0),
            max_corner: Vector2::new(x1, y1),
        }
    }

    pub fn center(&self) -> Vector2<f64> {
        (self.min_corner + self.max_corner) * 0.5
    }

    pub fn width(&self) -> f64 {
        self.max_corner.x - self.min_corner.x
    }

    pub fn height(&self) -> f64 {
        self.max_corner.y - self.min_corner.y
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.min_corner.x, self.min_corner.y, self.max_corner.x, self.max_corner.y]
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let ix = (self.max_corner.x.min(other.max_corner.x) - self.min_corner.x.max(other.min_corner.x)).max(0.0);
        let iy = (self.max_corner.y.min(other.max_corner.y) - self.min_corner.y.max(other.min_corner.y)).max(0.0);
        let inter = ix * iy;
        let union = self.width() * self.height() + other.width() * other.height() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub image: Image,
    /// Height (meters) of the topmost object per pixel, row-major; table level
    /// is 0. The end-effector is masked out, like a depth image with the robot
    /// filtered away.
    pub heights: Vec<f64>,
    pub boxes: BTreeMap<String, BoundingBox>,
    pub state_snapshot: WorldState,
}

struct Canvas<'a> {
    image: &'a mut Image,
    heights: &'a mut [f64],
}

impl Canvas<'_> {
    /// Paints every pixel whose center satisfies `inside`, plus the pixel that
    /// contains `(cx, cy)`, and returns the tight box of what was painted.
    fn paint(
        &mut self,
        cx: f64,
        cy: f64,
        reach: f64,
        color: u8,
        z: Option<f64>,
        inside: impl Fn(f64, f64) -> bool,
    ) -> BoundingBox {
        let w = self.image.width;
        let h = self.image.height;
        let clamp_idx = |v: f64, n: usize| -> usize { (v.floor().max(0.0) as usize).min(n - 1) };
        let c0 = clamp_idx(cx - reach - 1.0, w);
        let c1 = clamp_idx(cx + reach + 1.0, w);
        let r0 = clamp_idx(cy - reach - 1.0, h);
        let r1 = clamp_idx(cy + reach + 1.0, h);
        let center = (clamp_idx(cx, w), clamp_idx(cy, h));

        let (mut min_c, mut min_r, mut max_c, mut max_r) = (usize::MAX, usize::MAX, 0, 0);
        for row in r0..=r1 {
            for col in c0..=c1 {
                let dx = col as f64 + 0.5 - cx;
                let dy = row as f64 + 0.5 - cy;
                if (col, row) == center || inside(dx, dy) {
                    let idx = row * w + col;
                    self.image.pixels[idx] = color;
                    if let Some(z) = z {
                        self.heights[idx] = z;
                    }
                    min_c = min_c.min(col);
                    min_r = min_r.min(row);
                    max_c = max_c.max(col);
                    max_r = max_r.max(row);
                }
            }
        }
        BoundingBox::new(min_c as f64, min_r as f64, (max_c + 1) as f64, (max_r + 1) as f64)
    }
}

/// World position to continuous pixel coordinates.
pub(crate) fn to_pixel(p: &Vec3, state: &WorldState, cfg: &RenderConfig) -> (f64, f64) {
    (
        (p.x - state.workspace.min.x) / cfg.meters_per_pixel,
        (p.y - state.workspace.min.y) / cfg.meters_per_pixel,
    )
}

pub(crate) fn ee_half_px(z: f64, cfg: &RenderConfig) -> f64 {
    cfg.ee_base_half_px + z.max(0.0) * cfg.ee_half_px_per_meter
}

/// Rasterizes the world top-down: objects as filled disks in layer order,
/// the end-effector last as a filled square whose size grows with height.
pub fn render(state: &WorldState, cfg: &RenderConfig) -> Observation {
    let mut image = Image::filled(cfg.width, cfg.height, BACKGROUND_INDEX);
    let mut heights = vec![0.0; cfg.width * cfg.height];
    let mut boxes = BTreeMap::new();
    let mut canvas = Canvas {
        image: &mut image,
        heights: &mut heights,
    };

    let mut order: Vec<&ObjectState> = state.objects.iter().collect();
    order.sort_by_key(|o| o.kind.layer());
    for obj in order {
        let (cx, cy) = to_pixel(&obj.position, state, cfg);
        let r_px = obj.radius / cfg.meters_per_pixel;
        let r2 = r_px * r_px;
        let bbox = canvas.paint(cx, cy, r_px, obj.color_index, Some(obj.position.z), |dx, dy| dx * dx + dy * dy <= r2);
        boxes.insert(obj.id.clone(), bbox);
    }

    let (cx, cy) = to_pixel(&state.ee_position, state, cfg);
    let half = ee_half_px(state.ee_position.z, cfg);
    let bbox = canvas.paint(cx, cy, half, END_EFFECTOR_INDEX, None, |dx, dy| {
        dx.abs() <= half && dy.abs() <= half
    });
    boxes.insert(END_EFFECTOR_ID.to_string(), bbox);

    Observation {
        image,
        heights,
        boxes,
        state_snapshot: state.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Bounds3, ObjectKind};

    fn scene(objects: Vec<ObjectState>) -> WorldState {
        WorldState::new(Vec3::new(0.1, 0.1, 0.05), objects, Bounds3::default()).unwrap()
    }

    /// Independent scanline rasterizer: counts lit columns of a disk by
    /// solving the circle equation per row.
    fn scanline_width(cx: f64, cy: f64, r: f64) -> usize {
        let mut cols = std::collections::BTreeSet::new();
        for row in 0..128 {
            let dy = row as f64 + 0.5 - cy;
            if dy.abs() > r {
                continue;
            }
            let half = (r * r - dy * dy).sqrt();
            let lo = (cx - half - 0.5).ceil() as i64;
            let hi = (cx + half - 0.5).floor() as i64;
            for c in lo..=hi {
                cols.insert(c);
            }
        }
        cols.len()
    }

    #[test]
    fn deterministic() {
        let s = scene(vec![ObjectState::new("a", Vec3::new(0.0, 0.0, 0.02), 0.03, ObjectKind::Graspable, 3)]);
        let cfg = RenderConfig::default();
        assert_eq!(render(&s, &cfg), render(&s, &cfg));
    }

    #[test]
    fn empty_scene_has_only_end_effector() {
        let mut s = scene(vec![]);
        s.ee_position = Vec3::new(0.2, 0.2, 0.0);
        let obs = render(&s, &RenderConfig::default());
        assert_eq!(obs.boxes.len(), 1);
        assert!(obs.boxes.contains_key(END_EFFECTOR_ID));
        assert!(obs.image.pixels.iter().all(|&p| p == BACKGROUND_INDEX || p == END_EFFECTOR_INDEX));
        // the square only covers a small patch; the rest is background
        let lit = obs.image.pixels.iter().filter(|&&p| p != BACKGROUND_INDEX).count();
        assert_eq!(lit, 16);
    }

    #[test]
    fn disk_box_width_matches_scanline_oracle() {
        let s = scene(vec![ObjectState::new("a", Vec3::new(0.0, 0.0, 0.0), 0.05, ObjectKind::Container, 4)]);
        let obs = render(&s, &RenderConfig::default());
        let b = obs.boxes["a"];
        let oracle = scanline_width(64.0, 64.0, 10.0);
        assert_eq!(b.width() as usize, oracle);
        assert!((b.width() - 20.0).abs() <= 1.0);
        assert_eq!(b.center(), Vector2::new(64.0, 64.0));
    }

    #[test]
    fn end_effector_square_grows_with_height() {
        let cfg = RenderConfig::default();
        let mut s = scene(vec![]);
        s.ee_position.z = 0.0;
        let low = render(&s, &cfg).boxes[END_EFFECTOR_ID];
        s.ee_position.z = 0.2;
        let high = render(&s, &cfg).boxes[END_EFFECTOR_ID];
        assert!(high.width() > low.width());
    }

    #[test]
    fn boxes_stay_inside_image() {
        let s = scene(vec![ObjectState::new("edge", Vec3::new(0.32, -0.32, 0.0), 0.05, ObjectKind::Obstacle, 2)]);
        let obs = render(&s, &RenderConfig::default());
        let b = obs.boxes["edge"];
        assert!(b.min_corner.x >= 0.0 && b.min_corner.y >= 0.0);
        assert!(b.max_corner.x <= 128.0 && b.max_corner.y <= 128.0);
    }

    #[test]
    fn tiny_object_still_gets_a_pixel() {
        let s = scene(vec![ObjectState::new("dot", Vec3::new(-0.1, 0.0, 0.0), 1e-4, ObjectKind::SurfaceMark, 6)]);
        let obs = render(&s, &RenderConfig::default());
        let b = obs.boxes["dot"];
        assert_eq!(b.width(), 1.0);
        assert_eq!(b.height(), 1.0);
    }

    #[test]
    fn heights_follow_the_topmost_object() {
        let cfg = RenderConfig::default();
        let mut s = scene(vec![ObjectState::new("a", Vec3::new(-0.2, -0.2, 0.03), 0.03, ObjectKind::Graspable, 3)]);
        s.ee_position = Vec3::new(-0.2, -0.2, 0.1);
        let obs = render(&s, &cfg);
        let at = |x: f64, y: f64| {
            let c = ((x + 0.32) / 0.005) as usize;
            let r = ((y + 0.32) / 0.005) as usize;
            obs.heights[r * 128 + c]
        };
        assert_eq!(at(-0.2, -0.2), 0.03);
        assert_eq!(at(0.0, 0.0), 0.0);
    }
}
