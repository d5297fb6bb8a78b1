//! Procedural cartoon faces and backgrounds for license-free experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{derive_seed, BackgroundImage, FaceSample, OUTPUT_SIZE};
use crate::error::{config, Result};
use crate::image::ImageTensor;

pub const MAX_TOY_CLASSES: usize = 8;

/// Expression categories in class-index order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Expression {
    Neutral,
    Happy,
    Sad,
    Surprise,
    Anger,
    Disgust,
    Fear,
    Contempt,
}

impl Expression {
    pub const ALL: [Expression; MAX_TOY_CLASSES] = [
        Expression::Neutral,
        Expression::Happy,
        Expression::Sad,
        Expression::Surprise,
        Expression::Anger,
        Expression::Disgust,
        Expression::Fear,
        Expression::Contempt,
    ];

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Expression::Neutral => "neutral",
            Expression::Happy => "happy",
            Expression::Sad => "sad",
            Expression::Surprise => "surprise",
            Expression::Anger => "anger",
            Expression::Disgust => "disgust",
            Expression::Fear => "fear",
            Expression::Contempt => "contempt",
        }
    }

    fn geometry(self) -> ExpressionGeometry {
        let g = |mouth_curve, mouth_open, mouth_skew, brow_tilt, brow_raise, eye_open| ExpressionGeometry {
            mouth_curve,
            mouth_open,
            mouth_skew,
            brow_tilt,
            brow_raise,
            eye_open,
        };
        match self {
            Expression::Neutral => g(0.0, 0.0, 0.0, 0.0, 0.0, 1.0),
            Expression::Happy => g(0.9, 0.35, 0.0, 0.0, 0.1, 0.8),
            Expression::Sad => g(-0.8, 0.0, 0.0, 0.6, 0.0, 0.8),
            Expression::Surprise => g(0.0, 1.0, 0.0, 0.0, 1.0, 1.5),
            Expression::Anger => g(-0.3, 0.0, 0.0, -0.9, -0.3, 0.6),
            Expression::Disgust => g(-0.5, 0.2, 0.5, -0.4, -0.2, 0.5),
            Expression::Fear => g(-0.2, 0.6, 0.0, 0.8, 0.8, 1.4),
            Expression::Contempt => g(0.1, 0.0, 1.0, 0.0, 0.0, 0.9),
        }
    }
}

/// Class-conditional shape controls, each roughly in `[-1, 1]`.
#[derive(Clone, Copy, Debug)]
struct ExpressionGeometry {
    mouth_curve: f32,
    mouth_open: f32,
    /// Raises the right mouth corner relative to the left.
    mouth_skew: f32,
    /// Positive lifts the inner brow ends.
    brow_tilt: f32,
    brow_raise: f32,
    eye_open: f32,
}

/// Identity controls drawn once per subject seed.
#[derive(Clone, Copy, Debug)]
struct Identity {
    skin: [f32; 3],
    head_rx: f32,
    head_ry: f32,
    eye_dx: f32,
    eye_y: f32,
    eye_r: f32,
    mouth_y: f32,
    mouth_half: f32,
    brow_dark: f32,
}

impl Identity {
    fn draw(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x1d));
        let tone: f32 = rng.gen_range(0.45..0.95);
        Identity {
            skin: [tone, tone * rng.gen_range(0.7..0.85), tone * rng.gen_range(0.55..0.7)],
            head_rx: rng.gen_range(36.0..42.0),
            head_ry: rng.gen_range(44.0..50.0),
            eye_dx: rng.gen_range(15.0..19.0),
            eye_y: rng.gen_range(-14.0..-9.0),
            eye_r: rng.gen_range(5.5..7.0),
            mouth_y: rng.gen_range(18.0..23.0),
            mouth_half: rng.gen_range(14.0..18.0),
            brow_dark: rng.gen_range(0.05..0.25),
        }
    }
}

struct Canvas {
    image: ImageTensor,
    mask: ImageTensor,
}

impl Canvas {
    fn new(size: usize) -> Self {
        Self {
            image: ImageTensor::new(size, size, 3),
            mask: ImageTensor::new(size, size, 1),
        }
    }

    fn paint_where(&mut self, color: [f32; 3], inside: impl Fn(f32, f32) -> bool) {
        let n = self.image.height();
        for y in 0..n {
            for x in 0..self.image.width() {
                if inside(x as f32 + 0.5, y as f32 + 0.5) {
                    self.image.pixel_mut(y, x).copy_from_slice(&color);
                    self.mask.set(y, x, 0, 1.0);
                }
            }
        }
    }

    fn ellipse(&mut self, cx: f32, cy: f32, rx: f32, ry: f32, color: [f32; 3]) {
        if rx <= 0.0 || ry <= 0.0 {
            return;
        }
        self.paint_where(color, |x, y| ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2) <= 1.0);
    }

    /// Thick polyline through `points`.
    fn stroke(&mut self, points: &[(f32, f32)], half_width: f32, color: [f32; 3]) {
        let segs: Vec<_> = points.windows(2).map(|w| (w[0], w[1])).collect();
        self.paint_where(color, |x, y| segs.iter().any(|&(a, b)| segment_distance((x, y), a, b) <= half_width));
    }
}

fn segment_distance(p: (f32, f32), a: (f32, f32), b: (f32, f32)) -> f32 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// Deterministic face of class `class_index` for the subject identified by `seed`.
/// The mask is exactly the set of painted pixels and everything else is zero.
pub fn toy_face(class_index: usize, seed: u64) -> Result<FaceSample> {
    let expr = Expression::from_index(class_index)
        .ok_or_else(|| config(format!("toy faces support at most {MAX_TOY_CLASSES} classes, got index {class_index}")))?;
    let id = Identity::draw(seed);
    let e = expr.geometry();
    let size = OUTPUT_SIZE;
    let (cx, cy) = (size as f32 / 2.0, size as f32 / 2.0 + 2.0);
    let mut canvas = Canvas::new(size);
    canvas.ellipse(cx, cy, id.head_rx, id.head_ry, id.skin);

    let white = [0.97, 0.97, 0.95];
    let dark = [id.brow_dark, id.brow_dark * 0.8, id.brow_dark * 0.6];
    for side in [-1.0f32, 1.0] {
        let ex = cx + side * id.eye_dx;
        let ey = cy + id.eye_y;
        let ry = id.eye_r * 0.75 * e.eye_open;
        canvas.ellipse(ex, ey, id.eye_r * 1.2, ry, white);
        canvas.ellipse(ex, ey, id.eye_r * 0.55, (id.eye_r * 0.55).min(ry), dark);

        let brow_y = ey - id.eye_r * 1.6 - 4.0 * e.brow_raise;
        let inner = (ex - side * id.eye_r * 1.2, brow_y - 5.0 * e.brow_tilt);
        let outer = (ex + side * id.eye_r * 1.3, brow_y + 2.0 * e.brow_tilt);
        canvas.stroke(&[inner, outer], 1.8, dark);
    }

    let lip = [0.55, 0.12, 0.14];
    let my = cy + id.mouth_y;
    if e.mouth_open > 0.0 {
        let rx = id.mouth_half * (0.55 + 0.35 * (1.0 - e.mouth_open.min(1.0)) + 0.25 * e.mouth_curve.max(0.0));
        let ry = 3.0 + 7.0 * e.mouth_open;
        canvas.ellipse(cx, my + 2.0 * e.mouth_curve, rx, ry, [0.25, 0.04, 0.06]);
    }
    let steps = 12;
    let curve: Vec<(f32, f32)> = (0..=steps)
        .map(|i| {
            let t = i as f32 / steps as f32 * 2.0 - 1.0;
            let x = cx + t * id.mouth_half;
            let bow = -8.0 * e.mouth_curve * (t * t - 0.5);
            let skew = -5.0 * e.mouth_skew * (t + 1.0) / 2.0 * t.max(0.0);
            (x, my + bow + skew)
        })
        .collect();
    canvas.stroke(&curve, 1.6, lip);

    Ok(FaceSample {
        id: format!("toy-{seed:016x}-{}", expr.name()),
        subject: format!("toy-{seed:016x}"),
        image: canvas.image,
        mask: canvas.mask,
        label: class_index,
    })
}

/// `subjects × num_classes` toy faces; subject `s` uses seed `derive_seed(seed, s)`.
pub fn toy_face_set(num_classes: usize, subjects: usize, seed: u64) -> Result<Vec<FaceSample>> {
    if num_classes == 0 || num_classes > MAX_TOY_CLASSES {
        return Err(config(format!("toy faces need 1..={MAX_TOY_CLASSES} classes, got {num_classes}")));
    }
    let mut faces = Vec::with_capacity(subjects * num_classes);
    for s in 0..subjects {
        let subject_seed = derive_seed(seed, s as u64);
        for c in 0..num_classes {
            faces.push(toy_face(c, subject_seed)?);
        }
    }
    Ok(faces)
}

/// Smooth two-colour gradient overlaid with random rectangles and discs.
pub fn procedural_background(seed: u64, height: usize, width: usize) -> BackgroundImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let color = |rng: &mut ChaCha8Rng| -> [f32; 3] { [rng.gen(), rng.gen(), rng.gen()] };
    let (c0, c1) = (color(&mut rng), color(&mut rng));
    let angle: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    let (s, c) = angle.sin_cos();
    let diag = (height * height + width * width) as f32;
    let mut image = ImageTensor::from_fn(height, width, 3, |y, x, ch| {
        let t = ((x as f32 * c + y as f32 * s) / diag.sqrt() * 0.5 + 0.5).clamp(0.0, 1.0);
        c0[ch] * (1.0 - t) + c1[ch] * t
    });
    let shapes = rng.gen_range(6..14);
    for _ in 0..shapes {
        let col = color(&mut rng);
        let (py, px) = (rng.gen_range(0.0..height as f32), rng.gen_range(0.0..width as f32));
        let (ry, rx) = (rng.gen_range(4.0..30.0f32), rng.gen_range(4.0..30.0f32));
        let disc = rng.gen_bool(0.5);
        for y in 0..height {
            for x in 0..width {
                let (dy, dx) = ((y as f32 - py) / ry, (x as f32 - px) / rx);
                let inside = if disc { dy * dy + dx * dx <= 1.0 } else { dy.abs() <= 1.0 && dx.abs() <= 1.0 };
                if inside {
                    image.pixel_mut(y, x).copy_from_slice(&col);
                }
            }
        }
    }
    BackgroundImage {
        id: format!("bg-{seed:016x}"),
        image,
    }
}

/// `count` procedural backgrounds of `size × size`.
pub fn toy_background_set(count: usize, size: usize, seed: u64) -> Vec<BackgroundImage> {
    (0..count)
        .map(|i| procedural_background(derive_seed(seed ^ 0xb6, i as u64), size, size))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_valid() {
        let a = toy_face(3, 11).unwrap();
        assert_eq!(a, toy_face(3, 11).unwrap());
        a.validate(8).unwrap();
        assert!(toy_face(8, 0).is_err());
    }

    #[test]
    fn mask_is_exactly_the_painted_set() {
        let f = toy_face(1, 5).unwrap();
        for y in 0..f.image.height() {
            for x in 0..f.image.width() {
                let painted = f.image.pixel(y, x).iter().any(|&v| v != 0.0);
                assert_eq!(painted, f.mask.get(y, x, 0) == 1.0);
            }
        }
    }

    #[test]
    fn classes_differ_for_one_subject() {
        let faces: Vec<_> = (0..MAX_TOY_CLASSES).map(|c| toy_face(c, 9).unwrap()).collect();
        for i in 0..faces.len() {
            for j in i + 1..faces.len() {
                assert_ne!(faces[i].image, faces[j].image, "{i} vs {j}");
            }
        }
    }

    #[test]
    fn backgrounds_are_in_range() {
        let b = procedural_background(3, 150, 140);
        b.validate().unwrap();
        assert_eq!(b, procedural_background(3, 150, 140));
    }
}
