//! Real spherical harmonics up to degree 3, in the basis and sign
//! convention used by Gaussian Splatting exporters.

use nalgebra::{DMatrix, UnitQuaternion, Vector3};

use crate::splat_io::SH_COEFFS;

const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Basis values `Y_k(dir)` for `k < (degree + 1)²`; higher entries are zero.
pub fn sh_basis(dir: &Vector3<f64>, degree: usize) -> [f64; SH_COEFFS] {
    let mut b = [0.0; SH_COEFFS];
    b[0] = C0;
    if degree == 0 {
        return b;
    }
    let (x, y, z) = (dir.x, dir.y, dir.z);
    b[1] = -C1 * y;
    b[2] = C1 * z;
    b[3] = -C1 * x;
    if degree == 1 {
        return b;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    b[4] = C2[0] * xy;
    b[5] = C2[1] * yz;
    b[6] = C2[2] * (2.0 * zz - xx - yy);
    b[7] = C2[3] * xz;
    b[8] = C2[4] * (xx - yy);
    if degree == 2 {
        return b;
    }
    b[9] = C3[0] * y * (3.0 * xx - yy);
    b[10] = C3[1] * xy * z;
    b[11] = C3[2] * y * (4.0 * zz - xx - yy);
    b[12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    b[13] = C3[4] * x * (4.0 * zz - xx - yy);
    b[14] = C3[5] * z * (xx - yy);
    b[15] = C3[6] * x * (xx - 3.0 * yy);
    b
}

/// View-dependent colour: SH expansion plus 0.5, clamped to [0, 1].
pub fn eval_sh(sh: &[[f64; 3]; SH_COEFFS], dir: &Vector3<f64>, degree: usize) -> [f64; 3] {
    let degree = degree.min(3);
    let basis = sh_basis(dir, degree);
    let n = (degree + 1) * (degree + 1);
    let mut rgb = [0.5; 3];
    for (k, b) in basis.iter().enumerate().take(n) {
        for c in 0..3 {
            rgb[c] += b * sh[k][c];
        }
    }
    rgb.map(|v| v.clamp(0.0, 1.0))
}

/// Per-degree coefficient transforms for a fixed rotation.
///
/// Applying it to a Gaussian's coefficients yields the expansion of the
/// rotated colour field: `f'(R d) = f(d)`.
#[derive(Debug, Clone)]
pub struct ShRotation {
    blocks: [DMatrix<f64>; 3],
}

fn sample_directions(n: usize) -> Vec<Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let t = golden * i as f64;
            Vector3::new(r * t.cos(), r * t.sin(), z)
        })
        .collect()
}

impl ShRotation {
    pub fn new(rotation: &UnitQuaternion<f64>) -> Self {
        let dirs = sample_directions(48);
        let inv = rotation.inverse();
        let blocks = [1usize, 2, 3].map(|l| {
            let first = l * l;
            let width = 2 * l + 1;
            let mut a = DMatrix::zeros(dirs.len(), width);
            let mut b = DMatrix::zeros(dirs.len(), width);
            for (i, d) in dirs.iter().enumerate() {
                let ya = sh_basis(d, l);
                let yb = sh_basis(&(inv * d), l);
                for m in 0..width {
                    a[(i, m)] = ya[first + m];
                    b[(i, m)] = yb[first + m];
                }
            }
            // least squares: A·D = B
            let svd = a.svd(true, true);
            svd.solve(&b, 1e-12).expect("SVD solve")
        });
        Self { blocks }
    }

    /// Rotates the coefficients of degrees 1..=`degree` in place.
    pub fn apply(&self, sh: &mut [[f64; 3]; SH_COEFFS], degree: usize) {
        for l in 1..=degree.min(3) {
            let first = l * l;
            let width = 2 * l + 1;
            let block = &self.blocks[l - 1];
            for c in 0..3 {
                let old: Vec<f64> = (0..width).map(|m| sh[first + m][c]).collect();
                for (row, target) in (first..first + width).enumerate() {
                    sh[target][c] = (0..width).map(|m| block[(row, m)] * old[m]).sum();
                }
            }
        }
    }
}
