//! Synthetic segmentation data: coloured geometric shapes on a textured
//! background, one class per shape type, void rings on every boundary.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Sample;
use crate::error::{Result, SegError};
use crate::label::{LabelMap, VOID};
use crate::tensor::{Shape, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Rectangle,
    Disk,
    Triangle,
    Diamond,
    Cross,
    Ring,
}

/// Class `c ≥ 1` is drawn as `SHAPE_KINDS[c − 1]`; class 0 is background.
pub const SHAPE_KINDS: [ShapeKind; 6] =
    [ShapeKind::Rectangle, ShapeKind::Disk, ShapeKind::Triangle, ShapeKind::Diamond, ShapeKind::Cross, ShapeKind::Ring];

pub const MIN_SIDE: usize = 32;
const MIN_VISIBLE: usize = 12;
const MAX_ATTEMPTS: usize = 64;

#[derive(Clone, Debug)]
struct Placed {
    kind: ShapeKind,
    cx: f64,
    cy: f64,
    r: f64,
    /// Aspect / rotation parameters, meaning depends on the kind.
    a: f64,
    b: f64,
}

impl Placed {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        match self.kind {
            ShapeKind::Rectangle => dx.abs() <= self.r * self.a && dy.abs() <= self.r * self.b,
            ShapeKind::Disk => dx * dx + dy * dy <= self.r * self.r,
            ShapeKind::Diamond => dx.abs() / self.a + dy.abs() / self.b <= self.r,
            ShapeKind::Cross => {
                let arm = self.r * 0.35;
                (dx.abs() <= arm && dy.abs() <= self.r) || (dy.abs() <= arm && dx.abs() <= self.r)
            }
            ShapeKind::Ring => {
                let d2 = dx * dx + dy * dy;
                d2 <= self.r * self.r && d2 >= (0.5 * self.r) * (0.5 * self.r)
            }
            ShapeKind::Triangle => {
                let v: Vec<(f64, f64)> = (0..3)
                    .map(|i| {
                        let t = self.a + i as f64 * std::f64::consts::TAU / 3.0;
                        (self.r * t.cos(), self.r * t.sin())
                    })
                    .collect();
                let side = |p: (f64, f64), q: (f64, f64)| (q.0 - p.0) * (dy - p.1) - (q.1 - p.1) * (dx - p.0);
                let s = [side(v[0], v[1]), side(v[1], v[2]), side(v[2], v[0])];
                s.iter().all(|&e| e >= 0.0) || s.iter().all(|&e| e <= 0.0)
            }
        }
    }
}

fn random_shape(rng: &mut ChaCha8Rng, kind: ShapeKind, side: f64) -> Placed {
    let r = rng.gen_range(side / 10.0..side / 5.0);
    let margin = r * 0.5;
    let cx = rng.gen_range(margin..side - margin);
    let cy = rng.gen_range(margin..side - margin);
    let (a, b) = match kind {
        ShapeKind::Rectangle | ShapeKind::Diamond => (rng.gen_range(0.6..1.4), rng.gen_range(0.6..1.4)),
        ShapeKind::Triangle => (rng.gen_range(0.0..std::f64::consts::TAU), 0.0),
        _ => (1.0, 1.0),
    };
    Placed { kind, cx, cy, r, a, b }
}

fn random_color(rng: &mut ChaCha8Rng, away_from: [f64; 3]) -> [f64; 3] {
    loop {
        let c = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
        let d: f64 = c.iter().zip(&away_from).map(|(a, b)| (a - b).abs()).sum();
        if d >= 0.45 {
            return c;
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, side: usize, num_classes: usize) -> (Tensor4<f64>, LabelMap, Vec<usize>) {
    let sf = side as f64;
    let base = [rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)];
    let (fx, fy, phase) = (rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0), rng.gen_range(0.0..std::f64::consts::TAU));
    let mut image = Tensor4::zeros(Shape::new(1, 3, side, side)).expect("valid shape");
    for y in 0..side {
        for x in 0..side {
            let wave = 0.08 * ((fx * x as f64 / sf + fy * y as f64 / sf) * std::f64::consts::TAU + phase).sin();
            for (c, &b) in base.iter().enumerate() {
                let noise = rng.gen_range(-0.04..0.04);
                image.set(0, c, y, x, (b + wave + noise).clamp(0.0, 1.0));
            }
        }
    }
    // One instance per shape class, then up to two extra random instances.
    let mut classes: Vec<usize> = (1..num_classes).collect();
    for _ in 0..rng.gen_range(0..=2usize) {
        classes.push(rng.gen_range(1..num_classes));
    }
    for i in (1..classes.len()).rev() {
        let j = rng.gen_range(0..=i);
        classes.swap(i, j);
    }
    let mut instance = vec![0usize; side * side];
    let mut class_of = vec![0usize];
    for &class in &classes {
        let shape = random_shape(rng, SHAPE_KINDS[class - 1], sf);
        let color = random_color(rng, base);
        let id = class_of.len();
        class_of.push(class);
        for y in 0..side {
            for x in 0..side {
                if shape.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    instance[y * side + x] = id;
                    for (c, &v) in color.iter().enumerate() {
                        let noise = rng.gen_range(-0.03..0.03);
                        image.set(0, c, y, x, (v + noise).clamp(0.0, 1.0));
                    }
                }
            }
        }
    }
    // A pixel bordering a later-painted instance becomes void: a one-pixel
    // ring just outside every visible boundary.
    let mut label = LabelMap::filled(side, side, 0);
    let mut visible = vec![0usize; num_classes];
    for y in 0..side {
        for x in 0..side {
            let id = instance[y * side + x];
            let mut void = false;
            for (ny, nx) in [(y.wrapping_sub(1), x), (y + 1, x), (y, x.wrapping_sub(1)), (y, x + 1)] {
                if ny < side && nx < side && instance[ny * side + nx] > id {
                    void = true;
                }
            }
            if void {
                label.set(y, x, VOID);
            } else {
                let c = class_of[id];
                label.set(y, x, c as u8);
                visible[c] += 1;
            }
        }
    }
    (image, label, visible)
}

/// Image `index` of the dataset identified by `seed`. Independent of how
/// many other images are generated.
pub fn shape_sample(index: u64, side: usize, num_classes: usize, seed: u64) -> Result<Sample> {
    check_params(side, num_classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    for _ in 0..MAX_ATTEMPTS {
        let (image, label, visible) = draw(&mut rng, side, num_classes);
        if visible[1..].iter().all(|&v| v >= MIN_VISIBLE) {
            return Sample::new(image, label);
        }
    }
    Err(SegError::Data(format!("could not place {} visible shapes on a {side}x{side} canvas", num_classes - 1)))
}

/// Images `start..start+n` of the dataset identified by `seed`.
pub fn generate_shapes(start: u64, n: usize, side: usize, num_classes: usize, seed: u64) -> Result<Vec<Sample>> {
    (start..start + n as u64).map(|i| shape_sample(i, side, num_classes, seed)).collect()
}

fn check_params(side: usize, num_classes: usize) -> Result<()> {
    if side < MIN_SIDE {
        return Err(SegError::Config(format!("shape images need side >= {MIN_SIDE}, got {side}")));
    }
    if !(2..=SHAPE_KINDS.len() + 1).contains(&num_classes) {
        return Err(SegError::Config(format!(
            "shape datasets support 2..={} classes, got {num_classes}",
            SHAPE_KINDS.len() + 1
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_are_in_range_and_shapes_visible() {
        for s in generate_shapes(0, 5, 64, 4, 7).unwrap() {
            s.label.validate(4).unwrap();
            for c in 0..4u8 {
                assert!(s.label.data().contains(&c));
            }
            assert!(s.label.void_count() > 0);
        }
    }

    #[test]
    fn samples_do_not_depend_on_batch() {
        let a = generate_shapes(0, 3, 48, 3, 1).unwrap();
        let b = shape_sample(2, 48, 3, 1).unwrap();
        assert_eq!(a[2].label, b.label);
        assert_eq!(a[2].image, b.image);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(shape_sample(0, 16, 3, 0).is_err());
        assert!(shape_sample(0, 64, 1, 0).is_err());
        assert!(shape_sample(0, 64, 9, 0).is_err());
    }
}
