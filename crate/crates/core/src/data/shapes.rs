//! Synthetic single-object detection scenes.
//!
//! Each image holds at most one filled shape (square, disk or triangle) on a
//! smoothly shaded, lightly noisy background. Boxes are tight around the
//! rendered pixels and normalized as `(center_x, center_y, width, height)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Detector categories. Index 0 is the no-object category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Background = 0,
    Square = 1,
    Disk = 2,
    Triangle = 3,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [ShapeKind::Background, ShapeKind::Square, ShapeKind::Disk, ShapeKind::Triangle];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Background => "background",
            ShapeKind::Square => "square",
            ShapeKind::Disk => "disk",
            ShapeKind::Triangle => "triangle",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn category_names() -> Vec<String> {
        Self::ALL.iter().map(|k| k.name().to_string()).collect()
    }
}

/// Normalized `(center_x, center_y, width, height)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoundingBox {
    pub cx: f32,
    pub cy: f32,
    pub w: f32,
    pub h: f32,
}

impl BoundingBox {
    /// The box attached to background samples.
    pub const NONE: Self = Self {
        cx: 0.0,
        cy: 0.0,
        w: 0.0,
        h: 0.0,
    };

    pub fn new(cx: f32, cy: f32, w: f32, h: f32) -> Result<Self> {
        let b = Self { cx, cy, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn to_array(self) -> [f32; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn from_slice(v: &[f32]) -> Result<Self> {
        match *v {
            [cx, cy, w, h] => Self::new(cx, cy, w, h),
            _ => Err(Error::shape("bounding box", 4, v.len())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.to_array();
        if a.iter().all(|v| (0.0..=1.0).contains(v)) {
            Ok(())
        } else {
            Err(Error::InvalidBox(a))
        }
    }

    /// Box spanning pixel columns `x0..x1` and rows `y0..y1` of a `h×w` image.
    pub fn from_pixels(x0: usize, x1: usize, y0: usize, y1: usize, h: usize, w: usize) -> Self {
        Self {
            cx: (x0 + x1) as f32 / 2.0 / w as f32,
            cy: (y0 + y1) as f32 / 2.0 / h as f32,
            w: (x1 - x0) as f32 / w as f32,
            h: (y1 - y0) as f32 / h as f32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSample {
    pub image: Tensor,
    pub category: usize,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSet {
    pub samples: Vec<DetectionSample>,
    pub category_names: Vec<String>,
}

impl DetectionSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split_at(&self, n: usize) -> (Self, Self) {
        let n = n.min(self.len());
        let part = |s: &[DetectionSample]| Self {
            samples: s.to_vec(),
            category_names: self.category_names.clone(),
        };
        (part(&self.samples[..n]), part(&self.samples[n..]))
    }
}

pub const DEFAULT_IMAGE_SIZE: [usize; 3] = [3, 64, 64];

/// Renders `count` scenes, cycling through the four categories so each
/// appears equally often.
pub fn gen_shapes_dataset(count: usize, seed: u64, image_size: [usize; 3]) -> Result<DetectionSet> {
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    let [_, h, w] = image_size;
    if h < 16 || w < 16 {
        return Err(Error::ImageTooSmall {
            height: h,
            width: w,
            min: 16,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..count)
        .map(|i| {
            let kind = ShapeKind::ALL[i % 4];
            random_scene(&mut rng, kind, image_size)
        })
        .collect();
    Ok(DetectionSet {
        samples,
        category_names: ShapeKind::category_names(),
    })
}

/// An object-free scene drawn from the same background distribution.
pub fn gen_background(seed: u64, image_size: [usize; 3]) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_scene(&mut rng, ShapeKind::Background, image_size).image
}

fn random_scene(rng: &mut ChaCha8Rng, kind: ShapeKind, image_size: [usize; 3]) -> DetectionSample {
    let [c, h, w] = image_size;
    let base: Vec<f32> = (0..c).map(|_| rng.random_range(50.0..170.0)).collect();
    let mut image = background(rng, &base, image_size);
    if kind == ShapeKind::Background {
        return DetectionSample {
            image,
            category: 0,
            bbox: BoundingBox::NONE,
        };
    }
    let max_half = (h.min(w) / 4).max(4);
    let half = rng.random_range(max_half * 3 / 8..=max_half);
    let cx = rng.random_range(half..=w - half);
    let cy = rng.random_range(half..=h - half);
    // bright or dark object, well separated from the background in every channel
    let brighter = rng.random_bool(0.5);
    let color: Vec<f32> = base
        .iter()
        .map(|&b| {
            let delta = rng.random_range(60.0..85.0);
            if brighter {
                b + delta
            } else {
                b - delta
            }
        })
        .collect();
    let bbox = paint_shape(&mut image, kind, (cx, cy), half, &color);
    DetectionSample {
        image,
        category: kind.index(),
        bbox,
    }
}

fn background(rng: &mut ChaCha8Rng, base: &[f32], [c, h, w]: [usize; 3]) -> Tensor {
    let gx: f32 = rng.random_range(-0.4..0.4);
    let gy: f32 = rng.random_range(-0.4..0.4);
    let mut data = Vec::with_capacity(c * h * w);
    for &b in base {
        for y in 0..h {
            for x in 0..w {
                let shade = gx * (x as f32 - w as f32 / 2.0) + gy * (y as f32 - h as f32 / 2.0);
                let noise: f32 = rng.random_range(-6.0..6.0);
                data.push((b + shade + noise).round().clamp(0.0, 255.0));
            }
        }
    }
    Tensor::new(vec![c, h, w], data).expect("sized from shape")
}

/// Fills `kind` centred at pixel corner `(cx, cy)` with half-extent `half`
/// and returns its tight box.
pub fn paint_shape(image: &mut Tensor, kind: ShapeKind, (cx, cy): (usize, usize), half: usize, color: &[f32]) -> BoundingBox {
    let (c, h, w) = image.chw().expect("image tensor");
    let inside = |x: usize, y: usize| -> bool {
        let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
        let (fx, fy, s) = (cx as f32, cy as f32, half as f32);
        match kind {
            ShapeKind::Background => false,
            ShapeKind::Square => (fx - s..fx + s).contains(&px) && (fy - s..fy + s).contains(&py),
            ShapeKind::Disk => (px - fx).powi(2) + (py - fy).powi(2) <= s * s,
            ShapeKind::Triangle => {
                // half-width taken at the row's lower edge so the apex row is painted
                let t = (py + 0.5 - (fy - s)) / (2.0 * s);
                t > 0.0 && t <= 1.0 && (px - fx).abs() <= s * t
            }
        }
    };
    let (mut x0, mut x1, mut y0, mut y1) = (usize::MAX, 0, usize::MAX, 0);
    let plane = h * w;
    for y in 0..h {
        for x in 0..w {
            if inside(x, y) {
                for (ch, v) in color.iter().enumerate().take(c) {
                    image.data_mut()[ch * plane + y * w + x] = v.round().clamp(0.0, 255.0);
                }
                x0 = x0.min(x);
                x1 = x1.max(x + 1);
                y0 = y0.min(y);
                y1 = y1.max(y + 1);
            }
        }
    }
    if x0 == usize::MAX {
        return BoundingBox::NONE;
    }
    BoundingBox::from_pixels(x0, x1, y0, y1, h, w)
}
