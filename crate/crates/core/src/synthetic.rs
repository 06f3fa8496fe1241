//! Procedural face-like images for tests, benchmarks and demos.
//!
//! Each image is a smooth cartoon face (background gradient, hair, skin
//! oval, eyes, brows, nose shading, mouth) whose geometry and colors are
//! drawn from a seeded generator.

use rand::Rng;

use crate::image::Image;
use crate::rng::seeded;

struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
}

impl Ellipse {
    /// Anti-aliased coverage in `[0, 1]` with a soft edge of `soft` pixels
    /// at resolution `res`.
    fn coverage(&self, x: f64, y: f64, res: f64, soft: f64) -> f64 {
        let dx = (x - self.cx) / self.rx;
        let dy = (y - self.cy) / self.ry;
        let d = (dx * dx + dy * dy).sqrt();
        let scale = self.rx.min(self.ry) * res;
        let signed = (1.0 - d) * scale / soft.max(1e-6);
        smoothstep(signed)
    }
}

fn smoothstep(t: f64) -> f64 {
    let u = (t * 0.5 + 0.5).clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

fn jitter(rng: &mut impl Rng, base: [f64; 3], amount: f64) -> [f64; 3] {
    base.map(|c| (c + rng.random_range(-amount..=amount)).clamp(0.0, 1.0))
}

/// A `3 x res x res` face drawn from `seed`.
pub fn synthetic_face(res: usize, seed: u64) -> Image {
    let mut rng = seeded(seed);
    let bg_top = jitter(&mut rng, [0.55, 0.65, 0.8], 0.3);
    let bg_bottom = jitter(&mut rng, [0.3, 0.35, 0.45], 0.2);
    let skin = jitter(&mut rng, [0.85, 0.68, 0.55], 0.12);
    let hair = jitter(&mut rng, [0.25, 0.17, 0.1], 0.15);
    let iris = jitter(&mut rng, [0.25, 0.35, 0.45], 0.2);
    let lips = jitter(&mut rng, [0.75, 0.35, 0.35], 0.1);

    let face_cx = 0.5 + rng.random_range(-0.04..0.04);
    let face_cy = 0.55 + rng.random_range(-0.03..0.03);
    let face = Ellipse { cx: face_cx, cy: face_cy, rx: rng.random_range(0.26..0.32), ry: rng.random_range(0.33..0.39) };
    let hair_shape = Ellipse { cx: face_cx, cy: face.cy - face.ry * 0.35, rx: face.rx * 1.12, ry: face.ry * 0.85 };
    let eye_dx = rng.random_range(0.1..0.14);
    let eye_y = face_cy - rng.random_range(0.02..0.08);
    let eye_r = rng.random_range(0.035..0.05);
    let eyes = [-1.0, 1.0].map(|s| Ellipse { cx: face_cx + s * eye_dx, cy: eye_y, rx: eye_r * 1.4, ry: eye_r });
    let pupils = [-1.0, 1.0].map(|s| Ellipse { cx: face_cx + s * eye_dx, cy: eye_y, rx: eye_r * 0.6, ry: eye_r * 0.6 });
    let brow_lift = rng.random_range(0.05..0.08);
    let brows = [-1.0, 1.0].map(|s| Ellipse { cx: face_cx + s * eye_dx, cy: eye_y - brow_lift, rx: eye_r * 1.6, ry: 0.012 });
    let mouth = Ellipse {
        cx: face_cx,
        cy: face_cy + rng.random_range(0.17..0.22),
        rx: rng.random_range(0.07..0.11),
        ry: rng.random_range(0.02..0.035),
    };
    let nose = Ellipse { cx: face_cx + 0.015, cy: face_cy + 0.06, rx: 0.03, ry: 0.07 };
    let light = rng.random_range(-0.4..0.4);

    let rf = res as f64;
    let mut rgb = vec![[0.0; 3]; res * res];
    for py in 0..res {
        for px in 0..res {
            let x = (px as f64 + 0.5) / rf;
            let y = (py as f64 + 0.5) / rf;
            let mut c = mix(bg_top, bg_bottom, y);
            c = mix(c, hair, hair_shape.coverage(x, y, rf, 1.0));
            let shade = 1.0 + 0.15 * light * (x - face_cx) / face.rx - 0.08 * ((y - face_cy) / face.ry).powi(2);
            let lit_skin = skin.map(|v| (v * shade).clamp(0.0, 1.0));
            c = mix(c, lit_skin, face.coverage(x, y, rf, 1.0));
            c = mix(c, skin.map(|v| v * 0.85), 0.5 * nose.coverage(x, y, rf, 2.0) * face.coverage(x, y, rf, 1.0));
            for e in &eyes {
                c = mix(c, [0.95, 0.95, 0.93], e.coverage(x, y, rf, 0.7));
            }
            for p in &pupils {
                c = mix(c, iris, p.coverage(x, y, rf, 0.7));
            }
            for b in &brows {
                c = mix(c, hair, b.coverage(x, y, rf, 0.7));
            }
            c = mix(c, lips, mouth.coverage(x, y, rf, 0.7));
            rgb[py * res + px] = c;
        }
    }
    Image::from_fn(3, res, res, |ch, y, x| rgb[y * res + x][ch].clamp(0.0, 1.0))
}

/// Writes `count` faces as `face_{i:02}.png` into `dir`.
pub fn write_faces(dir: &std::path::Path, res: usize, count: usize, seed: u64) -> crate::Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    (0..count)
        .map(|i| {
            let path = dir.join(format!("face_{i:02}.png"));
            synthetic_face(res, crate::rng::derive_seed(seed, i as u64)).save_png(&path)?;
            Ok(path)
        })
        .collect()
}
