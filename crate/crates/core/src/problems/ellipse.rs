//! Ellipse fitting with one latent angle per observed point.
//!
//! Parameters are `x = (t₁, …, t_N, c_x, c_y, a, b, φ)` and residual pair `i`
//! is `pᵢ − (c + Rot(φ) (a cos tᵢ, b sin tᵢ))`. The Jacobian is block angular:
//! a `2 x 1` block per angle and a dense `2N x 5` global part.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levmar::{Jacobian, LeastSquaresProblem};
use crate::matrix::{BlockDiagonalMatrix, DenseMatrix};
use crate::scalar::Scalar;

/// Number of global (non-latent) parameters.
pub const GLOBAL_PARAMS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllipseParams {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    pub phi: f64,
}

impl EllipseParams {
    pub fn to_array(self) -> [f64; GLOBAL_PARAMS] {
        [self.cx, self.cy, self.a, self.b, self.phi]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            cx: v[0],
            cy: v[1],
            a: v[2],
            b: v[3],
            phi: v[4],
        }
    }

    /// Point at angle `t`.
    pub fn point(&self, t: f64) -> [f64; 2] {
        let (s, c) = self.phi.sin_cos();
        let (ex, ey) = (self.a * t.cos(), self.b * t.sin());
        [self.cx + c * ex - s * ey, self.cy + s * ex + c * ey]
    }
}

impl Default for EllipseParams {
    fn default() -> Self {
        Self {
            cx: 1.0,
            cy: -0.5,
            a: 3.0,
            b: 1.5,
            phi: 0.4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EllipseProblem<T> {
    points: Vec<[T; 2]>,
}

impl<T: Scalar> EllipseProblem<T> {
    pub fn new(points: Vec<[T; 2]>) -> Self {
        Self { points }
    }

    pub fn points(&self) -> &[[T; 2]] {
        &self.points
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    fn globals(&self, x: &[T]) -> Result<(T, T, T, T, T)> {
        let n = self.points.len();
        if x.len() != n + GLOBAL_PARAMS {
            return Err(Error::dims("ellipse parameters", (2 * n, n + GLOBAL_PARAMS), (x.len(), 1)));
        }
        let g = &x[n..];
        if !(g[2] > T::zero() && g[3] > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "ellipse semi-axes must be positive, got a = {}, b = {}",
                g[2], g[3]
            )));
        }
        Ok((g[0], g[1], g[2], g[3], g[4]))
    }
}

impl<T: Scalar> LeastSquaresProblem<T> for EllipseProblem<T> {
    fn num_params(&self) -> usize {
        self.points.len() + GLOBAL_PARAMS
    }

    fn num_residuals(&self) -> usize {
        2 * self.points.len()
    }

    fn residuals(&self, x: &[T]) -> Result<Vec<T>> {
        let (cx, cy, a, b, phi) = self.globals(x)?;
        let (s, c) = phi.sin_cos();
        let mut out = Vec::with_capacity(2 * self.points.len());
        for (p, &t) in self.points.iter().zip(x) {
            let (st, ct) = t.sin_cos();
            let (ex, ey) = (a * ct, b * st);
            out.push(p[0] - (cx + c * ex - s * ey));
            out.push(p[1] - (cy + s * ex + c * ey));
        }
        Ok(out)
    }

    fn jacobian(&self, x: &[T]) -> Result<Jacobian<T>> {
        let (_, _, a, b, phi) = self.globals(x)?;
        let n = self.points.len();
        let (s, c) = phi.sin_cos();
        let mut blocks = Vec::with_capacity(n);
        let mut right = DenseMatrix::zeros(2 * n, GLOBAL_PARAMS);
        for (i, &t) in x[..n].iter().enumerate() {
            let (st, ct) = t.sin_cos();
            // Derivatives of the model point; residual derivatives are negated.
            let dt = [-c * a * st - s * b * ct, -s * a * st + c * b * ct];
            blocks.push(DenseMatrix::from_col_major(2, 1, vec![-dt[0], -dt[1]])?);
            let cols: [[T; 2]; GLOBAL_PARAMS] = [
                [T::one(), T::zero()],
                [T::zero(), T::one()],
                [c * ct, s * ct],
                [-s * st, c * st],
                [-s * a * ct - c * b * st, c * a * ct - s * b * st],
            ];
            for (j, d) in cols.iter().enumerate() {
                let col = right.col_mut(j);
                col[2 * i] = -d[0];
                col[2 * i + 1] = -d[1];
            }
        }
        Ok(Jacobian::BlockAngular {
            left: BlockDiagonalMatrix::new(blocks),
            right,
        })
    }
}

/// A generated dataset with its ground truth and starting point.
#[derive(Clone, Debug, PartialEq)]
pub struct EllipseData {
    pub points: Vec<[f64; 2]>,
    pub truth: EllipseParams,
    pub true_angles: Vec<f64>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl EllipseData {
    pub fn problem<T: Scalar>(&self) -> EllipseProblem<T> {
        EllipseProblem::new(self.points.iter().map(|p| [T::of(p[0]), T::of(p[1])]).collect())
    }

    /// `(true angles, true globals)`.
    pub fn true_params(&self) -> Vec<f64> {
        let mut x = self.true_angles.clone();
        x.extend(self.truth.to_array());
        x
    }

    /// Globals perturbed by 10% of the axis lengths (and 0.1 rad in `φ`),
    /// angles from the arctangent of the centered, unrotated, axis-scaled
    /// data under those perturbed globals.
    pub fn initial_params(&self) -> Vec<f64> {
        let t = self.truth;
        let g = EllipseParams {
            cx: t.cx + 0.1 * t.a,
            cy: t.cy - 0.1 * t.b,
            a: t.a * 1.1,
            b: t.b * 0.9,
            phi: t.phi + 0.1,
        };
        initial_angles(&self.points, g)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,y")?;
        for p in &self.points {
            writeln!(w, "{},{}", p[0], p[1])?;
        }
        Ok(())
    }

    /// Writes `<stem>.csv` and the `<stem>.json` sidecar.
    pub fn save(&self, csv_path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(csv_path)?);
        self.write_csv(&mut f)?;
        f.flush()?;
        let side = EllipseSidecar {
            n: self.points.len(),
            truth: self.truth,
            true_angles: self.true_angles.clone(),
            noise_sigma: self.noise_sigma,
            seed: self.seed,
        };
        let json = serde_json::to_string_pretty(&side).map_err(|e| Error::Io(e.to_string()))?;
        std::fs::write(csv_path.with_extension("json"), json)?;
        Ok(())
    }

    /// Reads a CSV written by [`EllipseData::save`] and its sidecar.
    pub fn load(csv_path: &Path) -> Result<Self> {
        let file = std::fs::File::open(csv_path)
            .map_err(|e| Error::Io(format!("{}: {e}", csv_path.display())))?;
        let points = read_points_csv(std::io::BufReader::new(file))?;
        let side_path = csv_path.with_extension("json");
        let text = std::fs::read_to_string(&side_path)
            .map_err(|e| Error::Io(format!("{}: {e}", side_path.display())))?;
        let side: EllipseSidecar = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        if side.n != points.len() || side.true_angles.len() != points.len() {
            return Err(Error::Parse {
                line: 1,
                message: format!("sidecar describes {} points, csv has {}", side.n, points.len()),
            });
        }
        Ok(Self {
            points,
            truth: side.truth,
            true_angles: side.true_angles,
            noise_sigma: side.noise_sigma,
            seed: side.seed,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct EllipseSidecar {
    n: usize,
    truth: EllipseParams,
    true_angles: Vec<f64>,
    noise_sigma: f64,
    seed: u64,
}

/// Parses `x,y` rows (header required).
pub fn read_points_csv<R: BufRead>(reader: R) -> Result<Vec<[f64; 2]>> {
    let mut points = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if idx == 0 {
            if trimmed.replace(' ', "") != "x,y" {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("expected header `x,y`, found `{trimmed}`"),
                });
            }
            continue;
        }
        if trimmed.is_empty() {
            continue;
        }
        let mut it = trimmed.split(',');
        let mut next = || -> Result<f64> {
            let tok = it.next().ok_or_else(|| Error::Parse {
                line: lineno,
                message: "expected two columns".into(),
            })?;
            tok.trim().parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("malformed number `{}`", tok.trim()),
            })
        };
        let p = [next()?, next()?];
        if it.next().is_some() {
            return Err(Error::Parse {
                line: lineno,
                message: "expected two columns".into(),
            });
        }
        points.push(p);
    }
    Ok(points)
}

/// Arctangent angles of the centered, unrotated, axis-scaled points under
/// `g`, followed by the globals of `g`.
fn initial_angles(points: &[[f64; 2]], g: EllipseParams) -> Vec<f64> {
    let n = points.len().max(1) as f64;
    let mx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let (s, c) = g.phi.sin_cos();
    let mut x: Vec<f64> = points
        .iter()
        .map(|p| {
            let (dx, dy) = (p[0] - mx, p[1] - my);
            let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
            (v / g.b).atan2(u / g.a)
        })
        .collect();
    x.extend(g.to_array());
    x
}

/// A starting point from the data alone: the centroid, and axes and
/// orientation from the eigen-decomposition of the point covariance (for
/// uniformly spread angles the covariance is `R diag(a²/2, b²/2) Rᵀ`).
pub fn moment_initial_params(points: &[[f64; 2]]) -> Result<Vec<f64>> {
    if points.len() < 3 {
        return Err(Error::InvalidParameter("ellipse fit needs at least three points".into()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let (sxx, sxy, syy) = (sxx / n, sxy / n, syy / n);
    let mean = 0.5 * (sxx + syy);
    let rad = (0.25 * (sxx - syy).powi(2) + sxy * sxy).sqrt();
    let (l1, l2) = (mean + rad, mean - rad);
    if !(l2 > 0.0 && l1.is_finite()) {
        return Err(Error::InvalidParameter("points are collinear; no ellipse to fit".into()));
    }
    let g = EllipseParams {
        cx: mx,
        cy: my,
        a: (2.0 * l1).sqrt(),
        b: (2.0 * l2).sqrt(),
        phi: 0.5 * (2.0 * sxy).atan2(sxx - syy),
    };
    Ok(initial_angles(points, g))
}

/// Samples `n` points with angles uniform on `[0, 2π)` and isotropic
/// Gaussian noise. Deterministic in `seed`.
pub fn generate_ellipse_data(n: usize, truth: EllipseParams, noise_sigma: f64, seed: u64) -> Result<EllipseData> {
    if n == 0 {
        return Err(Error::InvalidParameter("ellipse dataset needs at least one point".into()));
    }
    if !(truth.a > 0.0 && truth.b > 0.0) {
        return Err(Error::InvalidParameter("ellipse semi-axes must be positive".into()));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise sigma must be finite and >= 0, got {noise_sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise_sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut true_angles = Vec::with_capacity(n);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let t = rng.gen_range(0.0..std::f64::consts::TAU);
        let p = truth.point(t);
        let noise = if noise_sigma > 0.0 {
            [normal.sample(&mut rng), normal.sample(&mut rng)]
        } else {
            [0.0, 0.0]
        };
        true_angles.push(t);
        points.push([p[0] + noise[0], p[1] + noise[1]]);
    }
    Ok(EllipseData {
        points,
        truth,
        true_angles,
        noise_sigma,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_residual() {
        let p = EllipseProblem::new(vec![[2.0, 0.0]]);
        let r = p.residuals(&[0.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(r, vec![1.0, 0.0]);
    }

    #[test]
    fn non_positive_axis_is_rejected() {
        let p = EllipseProblem::new(vec![[2.0, 0.0]]);
        assert!(matches!(
            p.residuals(&[0.0, 0.0, 0.0, -1.0, 1.0, 0.0]),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn sizes() {
        let d = generate_ellipse_data(500, EllipseParams::default(), 0.01, 1).unwrap();
        assert_eq!(d.points.len(), 500);
        assert_eq!(d.initial_params().len(), 505);
        let p = d.problem::<f64>();
        let j = p.jacobian(&d.initial_params()).unwrap();
        assert_eq!((j.rows(), j.cols()), (1000, 505));
    }

    #[test]
    fn moment_guess_is_near_truth() {
        let truth = EllipseParams::default();
        let d = generate_ellipse_data(2000, truth, 0.0, 4).unwrap();
        let x = moment_initial_params(&d.points).unwrap();
        let g = EllipseParams::from_slice(&x[2000..]);
        assert!((g.cx - truth.cx).abs() < 0.2 && (g.cy - truth.cy).abs() < 0.2);
        assert!((g.a / truth.a - 1.0).abs() < 0.1 && (g.b / truth.b - 1.0).abs() < 0.1);
        assert!((g.phi - truth.phi).abs() < 0.05);
        assert!(moment_initial_params(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]).is_err());
    }
}
