//! Small shared geometry types: axis-aligned rectangles and 2x3 affine matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle in (x, y, w, h) form, COCO bbox convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Rect { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Intersection-over-union of two rectangles; 0 when the union is empty.
    pub fn iou(&self, other: &Rect) -> f64 {
        let x1 = self.x.max(other.x);
        let y1 = self.y.max(other.y);
        let x2 = (self.x + self.w).min(other.x + other.w);
        let y2 = (self.y + self.h).min(other.y + other.h);
        let inter = (x2 - x1).max(0.0) * (y2 - y1).max(0.0);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// The rectangle expanded to a square along its shorter side, keeping the center.
    pub fn expanded_to_square(&self) -> Rect {
        let side = self.w.max(self.h);
        let (cx, cy) = self.center();
        Rect::new(cx - side / 2.0, cy - side / 2.0, side, side)
    }

    /// Clip to `[0, width] x [0, height]`.
    pub fn clamped(&self, width: f64, height: f64) -> Rect {
        let x1 = self.x.clamp(0.0, width);
        let y1 = self.y.clamp(0.0, height);
        let x2 = (self.x + self.w).clamp(0.0, width);
        let y2 = (self.y + self.h).clamp(0.0, height);
        Rect::new(x1, y1, (x2 - x1).max(0.0), (y2 - y1).max(0.0))
    }
}

/// Row-major 2x3 affine matrix mapping homogeneous 2D points: `p' = A * [x, y, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMat(pub [[f64; 3]; 2]);

impl AffineMat {
    pub fn identity() -> Self {
        AffineMat([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    }

    /// Similarity transform `s * R(theta) * p + t`.
    pub fn similarity(theta: f64, scale: f64, tx: f64, ty: f64) -> Self {
        let (sin, cos) = theta.sin_cos();
        AffineMat([
            [scale * cos, -scale * sin, tx],
            [scale * sin, scale * cos, ty],
        ])
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.0;
        (
            m[0][0] * x + m[0][1] * y + m[0][2],
            m[1][0] * x + m[1][1] * y + m[1][2],
        )
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn inverse(&self) -> Result<AffineMat> {
        let m = &self.0;
        let det = self.determinant();
        if det.abs() < 1e-12 {
            return Err(Error::SingularTransform);
        }
        let a = m[1][1] / det;
        let b = -m[0][1] / det;
        let c = -m[1][0] / det;
        let d = m[0][0] / det;
        Ok(AffineMat([
            [a, b, -(a * m[0][2] + b * m[1][2])],
            [c, d, -(c * m[0][2] + d * m[1][2])],
        ]))
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &AffineMat) -> AffineMat {
        let a = &self.0;
        let b = &other.0;
        let mut out = [[0.0; 3]; 2];
        for (row, out_row) in out.iter_mut().enumerate() {
            for col in 0..2 {
                out_row[col] = a[row][0] * b[0][col] + a[row][1] * b[1][col];
            }
            out_row[2] = a[row][0] * b[0][2] + a[row][1] * b[1][2] + a[row][2];
        }
        AffineMat(out)
    }

    /// Multiply every entry: rescales the output coordinate frame.
    pub fn scaled(&self, factor: f64) -> AffineMat {
        let mut m = self.0;
        for row in &mut m {
            for v in row {
                *v *= factor;
            }
        }
        AffineMat(m)
    }
}
