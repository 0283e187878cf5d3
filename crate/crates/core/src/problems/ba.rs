//! Bundle adjustment in the BAL camera model.
//!
//! A camera is `(ω, t, f, k₁, k₂)`: axis-angle rotation, translation, focal
//! length and two radial distortion terms. An observation of point `X` by a
//! camera predicts
//!
//! ```text
//! P = R(ω) X + t,   p = −(P_x, P_y) / P_z,   r = 1 + k₁‖p‖² + k₂‖p‖⁴,
//! residual = f · r · p − (u, v)
//! ```
//!
//! Parameters are ordered `[all points (3 each) | all cameras (9 each)]` and
//! residuals follow the observations stably sorted by point, which makes the
//! point part of the Jacobian block diagonal.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::levmar::{Jacobian, LeastSquaresProblem};
use crate::matrix::{BlockDiagonalMatrix, DenseMatrix, Permutation};
use crate::scalar::Scalar;

pub const CAMERA_PARAMS: usize = 9;
pub const POINT_PARAMS: usize = 3;

/// Below this rotation angle the first-order expansion of `R(ω)` is used.
const SMALL_ANGLE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub camera: usize,
    pub point: usize,
    pub u: f64,
    pub v: f64,
}

/// A BAL dataset as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct BalProblem {
    pub cameras: Vec<[f64; CAMERA_PARAMS]>,
    pub points: Vec<[f64; POINT_PARAMS]>,
    pub observations: Vec<Observation>,
}

impl BalProblem {
    pub fn num_residuals(&self) -> usize {
        2 * self.observations.len()
    }

    pub fn num_params(&self) -> usize {
        CAMERA_PARAMS * self.cameras.len() + POINT_PARAMS * self.points.len()
    }

    /// Stable sort of the observations by point, and the block layout it
    /// induces.
    pub fn structure(&self) -> BaStructure {
        let mut order: Vec<usize> = (0..self.observations.len()).collect();
        order.sort_by_key(|&i| self.observations[i].point);
        let mut counts = vec![0usize; self.points.len()];
        for o in &self.observations {
            counts[o.point] += 1;
        }
        BaStructure {
            order,
            block_rows: counts.iter().map(|&k| 2 * k).collect(),
            point_cols: POINT_PARAMS * self.points.len(),
            camera_cols: CAMERA_PARAMS * self.cameras.len(),
        }
    }

    /// `[points | cameras]` parameter vector.
    pub fn params(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.num_params());
        for p in &self.points {
            x.extend_from_slice(p);
        }
        for c in &self.cameras {
            x.extend_from_slice(c);
        }
        x
    }

    /// Replaces camera and point values from a `[points | cameras]` vector.
    pub fn set_params(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.num_params() {
            return Err(Error::dims("bal parameters", (self.num_residuals(), self.num_params()), (x.len(), 1)));
        }
        let off = POINT_PARAMS * self.points.len();
        for (j, p) in self.points.iter_mut().enumerate() {
            p.copy_from_slice(&x[POINT_PARAMS * j..POINT_PARAMS * (j + 1)]);
        }
        for (c, cam) in self.cameras.iter_mut().enumerate() {
            cam.copy_from_slice(&x[off + CAMERA_PARAMS * c..off + CAMERA_PARAMS * (c + 1)]);
        }
        Ok(())
    }

    pub fn problem<T: Scalar>(&self) -> BaProblem<T> {
        BaProblem::new(self)
    }
}

/// Row order and block sizes of the structured BA Jacobian.
#[derive(Clone, Debug, PartialEq)]
pub struct BaStructure {
    /// `order[r]` is the BAL observation placed at residual pair `r`.
    pub order: Vec<usize>,
    /// Rows of each point block (`2 ·` observations of the point).
    pub block_rows: Vec<usize>,
    pub point_cols: usize,
    pub camera_cols: usize,
}

impl BaStructure {
    /// Residual-row permutation from BAL observation order to sorted order.
    pub fn row_permutation(&self) -> Permutation {
        let rows: Vec<usize> = self.order.iter().flat_map(|&o| [2 * o, 2 * o + 1]).collect();
        Permutation::from_order(&rows).expect("order is a permutation")
    }
}

/// The least-squares view of a [`BalProblem`] in scalar type `T`.
#[derive(Clone, Debug)]
pub struct BaProblem<T> {
    observations: Vec<(usize, usize, [T; 2])>,
    /// BAL index of each sorted observation, for error reports.
    original: Vec<usize>,
    structure: BaStructure,
    num_points: usize,
    num_cameras: usize,
}

impl<T: Scalar> BaProblem<T> {
    pub fn new(bal: &BalProblem) -> Self {
        let structure = bal.structure();
        let observations = structure
            .order
            .iter()
            .map(|&i| {
                let o = bal.observations[i];
                (o.camera, o.point, [T::of(o.u), T::of(o.v)])
            })
            .collect();
        Self {
            observations,
            original: structure.order.clone(),
            structure,
            num_points: bal.points.len(),
            num_cameras: bal.cameras.len(),
        }
    }

    pub fn structure(&self) -> &BaStructure {
        &self.structure
    }

    fn check(&self, x: &[T]) -> Result<()> {
        if x.len() != self.num_params() {
            return Err(Error::dims("ba parameters", (self.num_residuals(), self.num_params()), (x.len(), 1)));
        }
        Ok(())
    }

    fn parts<'a>(&self, x: &'a [T], obs: usize) -> (&'a [T], &'a [T]) {
        let (cam, pt, _) = self.observations[obs];
        let off = POINT_PARAMS * self.num_points;
        (
            &x[off + CAMERA_PARAMS * cam..off + CAMERA_PARAMS * (cam + 1)],
            &x[POINT_PARAMS * pt..POINT_PARAMS * (pt + 1)],
        )
    }
}

impl<T: Scalar> LeastSquaresProblem<T> for BaProblem<T> {
    fn num_params(&self) -> usize {
        POINT_PARAMS * self.num_points + CAMERA_PARAMS * self.num_cameras
    }

    fn num_residuals(&self) -> usize {
        2 * self.observations.len()
    }

    fn residuals(&self, x: &[T]) -> Result<Vec<T>> {
        self.check(x)?;
        let mut out = vec![T::zero(); self.num_residuals()];
        out.par_chunks_mut(2).enumerate().try_for_each(|(i, r)| {
            let (cam, pt) = self.parts(x, i);
            let pred = project(cam, pt).ok_or(Error::PointOnCameraPlane {
                observation: self.original[i],
            })?;
            let uv = self.observations[i].2;
            r[0] = pred[0] - uv[0];
            r[1] = pred[1] - uv[1];
            Ok::<(), Error>(())
        })?;
        Ok(out)
    }

    fn jacobian(&self, x: &[T]) -> Result<Jacobian<T>> {
        self.check(x)?;
        let n = self.observations.len();
        let m2 = CAMERA_PARAMS * self.num_cameras;
        let rows: Vec<([[T; 3]; 2], [[T; 9]; 2])> = (0..n)
            .into_par_iter()
            .map(|i| {
                let (cam, pt) = self.parts(x, i);
                project_jacobian(cam, pt).ok_or(Error::PointOnCameraPlane {
                    observation: self.original[i],
                })
            })
            .collect::<Result<_>>()?;
        let mut blocks = Vec::with_capacity(self.num_points);
        let mut r = 0;
        for &h in &self.structure.block_rows {
            let mut b = DenseMatrix::zeros(h, POINT_PARAMS);
            for k in 0..h / 2 {
                let (dx, _) = &rows[r / 2 + k];
                for j in 0..POINT_PARAMS {
                    b.col_mut(j)[2 * k] = dx[0][j];
                    b.col_mut(j)[2 * k + 1] = dx[1][j];
                }
            }
            blocks.push(b);
            r += h;
        }
        let mut right = DenseMatrix::zeros(2 * n, m2);
        for (i, (_, dc)) in rows.iter().enumerate() {
            let c0 = CAMERA_PARAMS * self.observations[i].0;
            for j in 0..CAMERA_PARAMS {
                let col = right.col_mut(c0 + j);
                col[2 * i] = dc[0][j];
                col[2 * i + 1] = dc[1][j];
            }
        }
        Ok(Jacobian::BlockAngular {
            left: BlockDiagonalMatrix::new(blocks),
            right,
        })
    }
}

fn cross<T: Scalar>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot3<T: Scalar>(a: [T; 3], b: [T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Rotation matrix of an axis-angle vector (row-major).
pub fn rotation_matrix<T: Scalar>(w: [T; 3]) -> [[T; 3]; 3] {
    let theta = dot3(w, w).sqrt();
    let one = T::one();
    if theta < T::of(SMALL_ANGLE) {
        return [
            [one, -w[2], w[1]],
            [w[2], one, -w[0]],
            [-w[1], w[0], one],
        ];
    }
    let k = [w[0] / theta, w[1] / theta, w[2] / theta];
    let (s, c) = theta.sin_cos();
    let v = one - c;
    [
        [c + k[0] * k[0] * v, k[0] * k[1] * v - k[2] * s, k[0] * k[2] * v + k[1] * s],
        [k[1] * k[0] * v + k[2] * s, c + k[1] * k[1] * v, k[1] * k[2] * v - k[0] * s],
        [k[2] * k[0] * v - k[1] * s, k[2] * k[1] * v + k[0] * s, c + k[2] * k[2] * v],
    ]
}

fn mat_vec<T: Scalar>(m: &[[T; 3]; 3], x: [T; 3]) -> [T; 3] {
    [dot3(m[0], x), dot3(m[1], x), dot3(m[2], x)]
}

/// `R(ω) X`.
pub fn rotate<T: Scalar>(w: [T; 3], x: [T; 3]) -> [T; 3] {
    mat_vec(&rotation_matrix(w), x)
}

fn arr3<T: Scalar>(s: &[T]) -> [T; 3] {
    [s[0], s[1], s[2]]
}

/// Predicted image point, or `None` when the point lies on the camera plane.
pub fn project<T: Scalar>(cam: &[T], pt: &[T]) -> Option<[T; 2]> {
    let r = rotate(arr3(&cam[0..3]), arr3(pt));
    let p = [r[0] + cam[3], r[1] + cam[4], r[2] + cam[5]];
    if p[2] == T::zero() {
        return None;
    }
    let (px, py) = (-p[0] / p[2], -p[1] / p[2]);
    let s = px * px + py * py;
    let dist = T::one() + cam[7] * s + cam[8] * s * s;
    Some([cam[6] * dist * px, cam[6] * dist * py])
}

/// Derivatives of the predicted point with respect to the point (`2 x 3`)
/// and the camera (`2 x 9`).
#[allow(clippy::type_complexity)]
pub fn project_jacobian<T: Scalar>(cam: &[T], pt: &[T]) -> Option<([[T; 3]; 2], [[T; 9]; 2])> {
    let w = arr3(&cam[0..3]);
    let x = arr3(pt);
    let rm = rotation_matrix(w);
    let rx = mat_vec(&rm, x);
    let p = [rx[0] + cam[3], rx[1] + cam[4], rx[2] + cam[5]];
    if p[2] == T::zero() {
        return None;
    }
    let (f, k1, k2) = (cam[6], cam[7], cam[8]);
    let iz = T::one() / p[2];
    let (px, py) = (-p[0] * iz, -p[1] * iz);
    let s = px * px + py * py;
    let dist = T::one() + k1 * s + k2 * s * s;
    let two = T::of(2.0);
    let ds = k1 + two * k2 * s;
    // d(pred)/d(p), 2 x 2.
    let dpp = [
        [f * (dist + two * ds * px * px), f * two * ds * px * py],
        [f * two * ds * py * px, f * (dist + two * ds * py * py)],
    ];
    // d(p)/d(P), 2 x 3.
    let dpdp = [[-iz, T::zero(), p[0] * iz * iz], [T::zero(), -iz, p[1] * iz * iz]];
    let mut dpred_dp3 = [[T::zero(); 3]; 2];
    for i in 0..2 {
        for j in 0..3 {
            dpred_dp3[i][j] = dpp[i][0] * dpdp[0][j] + dpp[i][1] * dpdp[1][j];
        }
    }
    // d(R X)/dω, 3 x 3 (column i is the derivative along ωᵢ).
    let drx = rotated_point_derivative(w, &rm, rx);
    let mut d_point = [[T::zero(); 3]; 2];
    let mut d_cam = [[T::zero(); 9]; 2];
    for i in 0..2 {
        for j in 0..3 {
            d_point[i][j] = (0..3).fold(T::zero(), |a, k| a + dpred_dp3[i][k] * rm[k][j]);
            d_cam[i][j] = (0..3).fold(T::zero(), |a, k| a + dpred_dp3[i][k] * drx[k][j]);
            d_cam[i][3 + j] = dpred_dp3[i][j];
        }
    }
    let pp = [px, py];
    for i in 0..2 {
        d_cam[i][6] = dist * pp[i];
        d_cam[i][7] = f * s * pp[i];
        d_cam[i][8] = f * s * s * pp[i];
    }
    Some((d_point, d_cam))
}

/// `∂(R(ω) X)/∂ω` as a row-major `3 x 3` matrix, using
/// `∂R/∂ωᵢ = (ωᵢ [ω]ₓ + [ω × (I − R) eᵢ]ₓ) R / θ²`.
fn rotated_point_derivative<T: Scalar>(w: [T; 3], rm: &[[T; 3]; 3], rx: [T; 3]) -> [[T; 3]; 3] {
    let theta2 = dot3(w, w);
    let mut out = [[T::zero(); 3]; 3];
    if theta2.sqrt() < T::of(SMALL_ANGLE) {
        // R X ≈ X + ω × X, so the derivative is −[X]ₓ (with X ≈ R X).
        let c = [
            [T::zero(), rx[2], -rx[1]],
            [-rx[2], T::zero(), rx[0]],
            [rx[1], -rx[0], T::zero()],
        ];
        return c;
    }
    for i in 0..3 {
        // (I − R) eᵢ is column i of I − R.
        let col = [
            if i == 0 { T::one() } else { T::zero() } - rm[0][i],
            if i == 1 { T::one() } else { T::zero() } - rm[1][i],
            if i == 2 { T::one() } else { T::zero() } - rm[2][i],
        ];
        let v = cross(w, col);
        let a = cross(w, rx);
        let b = cross(v, rx);
        for k in 0..3 {
            out[k][i] = (w[i] * a[k] + b[k]) / theta2;
        }
    }
    out
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Parses BAL text: a header `cameras points observations`, one
/// `camera point u v` line per observation, then `9 · cameras + 3 · points`
/// scalars (whitespace separated, normally one per line).
pub fn parse_bal<R: BufRead>(reader: R) -> Result<BalProblem> {
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next_nonempty = |what: &str| -> Result<(usize, String)> {
        for (no, line) in lines.by_ref() {
            let line = line?;
            if !line.trim().is_empty() {
                return Ok((no, line));
            }
        }
        Err(parse_err(0, format!("unexpected end of file while reading {what}")))
    };
    let (hline, header) = next_nonempty("the header")?;
    let counts: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| parse_err(hline, format!("malformed count `{t}`"))))
        .collect::<Result<_>>()?;
    let [nc, np, no] = counts[..] else {
        return Err(parse_err(hline, "header must hold three counts"));
    };
    let mut observations = Vec::with_capacity(no);
    for _ in 0..no {
        let (ln, line) = next_nonempty("observations")?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 4 {
            return Err(parse_err(ln, format!("observation needs 4 fields, found {}", toks.len())));
        }
        let camera: usize = toks[0]
            .parse()
            .map_err(|_| parse_err(ln, format!("malformed camera index `{}`", toks[0])))?;
        let point: usize = toks[1]
            .parse()
            .map_err(|_| parse_err(ln, format!("malformed point index `{}`", toks[1])))?;
        if camera >= nc {
            return Err(parse_err(ln, format!("camera index {camera} out of range ({nc} cameras)")));
        }
        if point >= np {
            return Err(parse_err(ln, format!("point index {point} out of range ({np} points)")));
        }
        let u = parse_scalar(toks[2], ln)?;
        let v = parse_scalar(toks[3], ln)?;
        observations.push(Observation { camera, point, u, v });
    }
    let need = CAMERA_PARAMS * nc + POINT_PARAMS * np;
    let mut values = Vec::with_capacity(need);
    while values.len() < need {
        let (ln, line) = next_nonempty("parameters")?;
        for tok in line.split_whitespace() {
            if values.len() == need {
                return Err(parse_err(ln, "more parameter values than the header declares"));
            }
            values.push(parse_scalar(tok, ln)?);
        }
    }
    if let Ok((ln, _)) = next_nonempty("trailing data") {
        return Err(parse_err(ln, "more parameter values than the header declares"));
    }
    let cameras = values[..CAMERA_PARAMS * nc]
        .chunks_exact(CAMERA_PARAMS)
        .map(|c| c.try_into().expect("chunk of 9"))
        .collect();
    let points = values[CAMERA_PARAMS * nc..]
        .chunks_exact(POINT_PARAMS)
        .map(|c| c.try_into().expect("chunk of 3"))
        .collect();
    Ok(BalProblem {
        cameras,
        points,
        observations,
    })
}

fn parse_scalar(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(line, format!("malformed scalar `{tok}`")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("non-finite scalar `{tok}`")));
    }
    Ok(v)
}

/// Reads a BAL file, gunzipping when the content starts with the gzip magic.
pub fn read_bal_file(path: &Path) -> Result<BalProblem> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_bal_any(file).map_err(|e| e.context(path.display().to_string()))
}

/// Writes BAL text that [`parse_bal`] reads back exactly.
pub fn write_bal<W: Write>(bal: &BalProblem, mut w: W) -> Result<()> {
    writeln!(w, "{} {} {}", bal.cameras.len(), bal.points.len(), bal.observations.len())?;
    for o in &bal.observations {
        writeln!(w, "{} {} {:e} {:e}", o.camera, o.point, o.u, o.v)?;
    }
    for c in &bal.cameras {
        for v in c {
            writeln!(w, "{v:e}")?;
        }
    }
    for p in &bal.points {
        for v in p {
            writeln!(w, "{v:e}")?;
        }
    }
    Ok(())
}

/// Reads an uncompressed or gzip-compressed BAL stream.
pub fn parse_bal_any<R: Read>(reader: R) -> Result<BalProblem> {
    let mut reader = BufReader::new(reader);
    let gz = reader.fill_buf()?.starts_with(&[0x1f, 0x8b]);
    if gz {
        parse_bal(BufReader::new(flate2::bufread::GzDecoder::new(reader)))
    } else {
        parse_bal(reader)
    }
}

/// Options for [`synthetic_scene`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneOptions {
    pub cameras: usize,
    pub points: usize,
    /// Each point is seen by this many distinct cameras (at least 2).
    pub views_per_point: usize,
    /// Pixel noise added to the observations.
    pub pixel_noise: f64,
    /// Relative perturbation of the stored parameters away from the truth.
    pub perturbation: f64,
    pub seed: u64,
}

impl Default for SceneOptions {
    fn default() -> Self {
        Self {
            cameras: 4,
            points: 50,
            views_per_point: 3,
            pixel_noise: 0.5,
            perturbation: 0.01,
            seed: 0,
        }
    }
}

/// A random scene in front of `cameras` BAL cameras (which look down `−z`).
/// Returns `(problem with perturbed parameters, true parameters)`.
pub fn synthetic_scene(opts: SceneOptions) -> Result<(BalProblem, Vec<f64>)> {
    if opts.cameras < 2 || opts.views_per_point < 2 || opts.views_per_point > opts.cameras {
        return Err(Error::InvalidParameter(format!(
            "scene needs >= 2 cameras and 2..=cameras views per point (got {} cameras, {} views)",
            opts.cameras, opts.views_per_point
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let cameras: Vec<[f64; 9]> = (0..opts.cameras)
        .map(|_| {
            [
                rng.gen_range(-0.1..0.1),
                rng.gen_range(-0.1..0.1),
                rng.gen_range(-0.1..0.1),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-12.0..-8.0),
                rng.gen_range(400.0..600.0),
                rng.gen_range(-0.05..0.05),
                rng.gen_range(-0.01..0.01),
            ]
        })
        .collect();
    let points: Vec<[f64; 3]> = (0..opts.points)
        .map(|_| [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)])
        .collect();
    let noise = Normal::new(0.0, opts.pixel_noise.max(0.0)).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut observations = Vec::with_capacity(opts.points * opts.views_per_point);
    for (j, pt) in points.iter().enumerate() {
        let mut cams: Vec<usize> = (0..opts.cameras).collect();
        for k in 0..opts.views_per_point {
            let pick = rng.gen_range(k..cams.len());
            cams.swap(k, pick);
        }
        let mut chosen = cams[..opts.views_per_point].to_vec();
        chosen.sort_unstable();
        for c in chosen {
            let p = project(&cameras[c], pt).ok_or(Error::PointOnCameraPlane {
                observation: observations.len(),
            })?;
            let (du, dv) = if opts.pixel_noise > 0.0 {
                (noise.sample(&mut rng), noise.sample(&mut rng))
            } else {
                (0.0, 0.0)
            };
            observations.push(Observation {
                camera: c,
                point: j,
                u: p[0] + du,
                v: p[1] + dv,
            });
        }
    }
    // Interleave observations by camera as BAL files do.
    observations.sort_by_key(|o| (o.camera, o.point));
    let truth = BalProblem {
        cameras: cameras.clone(),
        points: points.clone(),
        observations: observations.clone(),
    };
    let x_true = truth.params();
    let mut perturbed = truth;
    let scale = opts.perturbation;
    for c in &mut perturbed.cameras {
        for v in c.iter_mut().take(6) {
            *v += scale * rng.gen_range(-1.0..1.0);
        }
        c[6] *= 1.0 + scale * rng.gen_range(-1.0..1.0);
    }
    for p in &mut perturbed.points {
        for v in p.iter_mut() {
            *v += scale * rng.gen_range(-1.0..1.0);
        }
    }
    Ok((perturbed, x_true))
}
