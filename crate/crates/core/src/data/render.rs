// Signed-distance rendering of the class prototypes. Coordinates are
// normalized to [-1, 1] across the frame; shapes live in a local frame that
// is translated, rotated and scaled per instance and per time step.

use std::f32::consts::PI;

/// Number of distinct shape prototypes available as classes.
pub const NUM_PROTOTYPES: usize = 12;

#[derive(Clone, Copy, Debug)]
pub struct Pose {
    pub cx: f32,
    pub cy: f32,
    pub angle: f32,
    pub scale: f32,
    pub foreground: f32,
    pub background: f32,
}

/// Canonical orientation of each prototype in radians.
pub fn base_angle(class: usize) -> f32 {
    const ANGLES: [f32; NUM_PROTOTYPES] = [
        0.35, 0.0, 0.0, 0.0, 0.0, 0.2, 1.1, -0.5, 0.0, 0.0, 0.6, -1.2,
    ];
    ANGLES[class]
}

fn sd_box(x: f32, y: f32, hx: f32, hy: f32) -> f32 {
    let dx = x.abs() - hx;
    let dy = y.abs() - hy;
    let outside = (dx.max(0.0).powi(2) + dy.max(0.0).powi(2)).sqrt();
    outside + dx.max(dy).min(0.0)
}

fn sd_circle(x: f32, y: f32, r: f32) -> f32 {
    (x * x + y * y).sqrt() - r
}

fn sd_triangle(x: f32, y: f32, r: f32) -> f32 {
    // equilateral, pointing up
    let k = 3f32.sqrt();
    let mut px = x.abs() - r;
    let mut py = -y + r / k;
    if px + k * py > 0.0 {
        let (nx, ny) = ((px - k * py) / 2.0, (-k * px - py) / 2.0);
        px = nx;
        py = ny;
    }
    px -= px.clamp(-2.0 * r, 0.0);
    -(px * px + py * py).sqrt() * py.signum()
}

fn rotate(x: f32, y: f32, a: f32) -> (f32, f32) {
    let (s, c) = a.sin_cos();
    (c * x - s * y, s * x + c * y)
}

/// Coverage in [0, 1] of prototype `class` at local coordinates `(x, y)`;
/// `aa` is the antialiasing width in local units.
fn coverage(class: usize, x: f32, y: f32, aa: f32) -> f32 {
    let fill = |d: f32| (0.5 - d / aa).clamp(0.0, 1.0);
    match class {
        // bar
        0 => fill(sd_box(x, y, 0.62, 0.13)),
        // disk
        1 => fill(sd_circle(x, y, 0.42)),
        // plus
        2 => fill(sd_box(x, y, 0.55, 0.12).min(sd_box(x, y, 0.12, 0.55))),
        // ring
        3 => fill(((x * x + y * y).sqrt() - 0.45).abs() - 0.09),
        // triangle
        4 => fill(sd_triangle(x, y + 0.08, 0.55)),
        // square outline
        5 => fill(sd_box(x, y, 0.42, 0.42).abs() - 0.07),
        // striped disk, low frequency
        6 => fill(sd_circle(x, y, 0.55)) * (0.5 + 0.5 * (x * 2.5 * PI).sin()),
        // two dots
        7 => fill(sd_circle(x - 0.36, y, 0.17).min(sd_circle(x + 0.36, y, 0.17))),
        // L shape
        8 => fill(sd_box(x + 0.3, y, 0.12, 0.5).min(sd_box(x, y + 0.4, 0.42, 0.12))),
        // diagonal cross
        9 => {
            let (u, v) = rotate(x, y, PI / 4.0);
            fill(sd_box(u, v, 0.6, 0.1).min(sd_box(u, v, 0.1, 0.6)))
        }
        // crescent
        10 => fill(sd_circle(x, y, 0.48).max(-sd_circle(x - 0.25, y, 0.4))),
        // striped square, high frequency
        _ => fill(sd_box(x, y, 0.42, 0.42)) * (0.5 + 0.5 * (y * 5.0 * PI).sin()),
    }
}

/// Sinusoidal background texture.
#[derive(Clone, Copy, Debug, Default)]
pub struct Grating {
    pub amplitude: f32,
    /// Cycles across the frame width.
    pub frequency: f32,
    pub angle: f32,
    pub phase: f32,
}

impl Grating {
    fn at(&self, x: f32, y: f32) -> f32 {
        if self.amplitude == 0.0 {
            return 0.0;
        }
        let (s, c) = self.angle.sin_cos();
        self.amplitude * (PI * self.frequency * (c * x + s * y) + self.phase).sin()
    }
}

/// Renders one `height×width` frame over a textured background into `out`,
/// values in [0, 1].
pub fn render_on(class: usize, pose: &Pose, backdrop: &Grating, height: usize, width: usize, out: &mut [f32]) {
    let aa = 2.0 / (height.max(width) as f32) / pose.scale;
    for r in 0..height {
        let py = (r as f32 + 0.5) / height as f32 * 2.0 - 1.0;
        for c in 0..width {
            let px = (c as f32 + 0.5) / width as f32 * 2.0 - 1.0;
            let (lx, ly) = rotate(px - pose.cx, py - pose.cy, -pose.angle);
            let a = coverage(class, lx / pose.scale, ly / pose.scale, aa);
            let bg = pose.background + backdrop.at(px, py);
            let v = bg + (pose.foreground - bg) * a;
            out[r * width + c] = v.clamp(0.0, 1.0);
        }
    }
}

/// A short bar painted over a frame, independent of the object.
#[derive(Clone, Copy, Debug)]
pub struct Stroke {
    pub cx: f32,
    pub cy: f32,
    pub angle: f32,
    pub half_length: f32,
    pub half_width: f32,
    pub intensity: f32,
}

/// Paints `strokes` over a rendered frame.
pub fn paint_strokes(strokes: &[Stroke], height: usize, width: usize, out: &mut [f32]) {
    let aa = 2.0 / height.max(width) as f32;
    for st in strokes {
        for r in 0..height {
            let py = (r as f32 + 0.5) / height as f32 * 2.0 - 1.0;
            for c in 0..width {
                let px = (c as f32 + 0.5) / width as f32 * 2.0 - 1.0;
                let (lx, ly) = rotate(px - st.cx, py - st.cy, -st.angle);
                let a = (0.5 - sd_box(lx, ly, st.half_length, st.half_width) / aa).clamp(0.0, 1.0);
                if a > 0.0 {
                    let v = &mut out[r * width + c];
                    *v = (*v + (st.intensity - *v) * a).clamp(0.0, 1.0);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_prototype_draws_something_distinct() {
        let pose = Pose {
            cx: 0.0,
            cy: 0.0,
            angle: 0.0,
            scale: 1.0,
            foreground: 1.0,
            background: 0.0,
        };
        let mut frames = Vec::new();
        for class in 0..NUM_PROTOTYPES {
            let mut f = vec![0.0; 32 * 32];
            render_on(class, &pose, &Grating::default(), 32, 32, &mut f);
            let mass: f32 = f.iter().sum();
            assert!(mass > 20.0 && mass < 700.0, "class {class} mass {mass}");
            frames.push(f);
        }
        for a in 0..NUM_PROTOTYPES {
            for b in a + 1..NUM_PROTOTYPES {
                let d: f32 = frames[a].iter().zip(&frames[b]).map(|(x, y)| (x - y).abs()).sum();
                assert!(d > 20.0, "classes {a} and {b} nearly identical ({d})");
            }
        }
    }
}
