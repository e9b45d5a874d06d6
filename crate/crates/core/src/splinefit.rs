//! Penalized cubic regression splines for a single patch row.
//!
//! A row of `m` intensities observed at `t_j = j` (`j = 1..=m`) is smoothed by
//! minimizing `‖z − Xβ‖² + λ βᵀSβ`, where `X` evaluates `q` cubic B-splines at
//! the sites and `S` is the Gram matrix of their second derivatives over
//! `[1, m]`. The smoothing parameter is chosen by generalized cross
//! validation, and the trace of the influence matrix (the effective degrees
//! of freedom) is what the feature extractor consumes.
//!
//! Fits go through a Demmler–Reinsch style decomposition that is computed
//! once per model: with `X = QR` and `R⁻ᵀ S R⁻¹ = U diag(d) Uᵀ`, the fit at
//! any `λ` is diagonal in the rotated basis, so the EDF is `Σ 1/(1 + λ dᵢ)`
//! and the GCV score costs `O(q)` per candidate `λ`. Models whose design is
//! rank deficient fall back to a Cholesky solve of the normal equations.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

const DEGREE: usize = 3;

/// Lower end of the smoothing-parameter search grid.
pub const LAMBDA_MIN: f64 = 1e-6;
/// Upper end of the smoothing-parameter search grid.
pub const LAMBDA_MAX: f64 = 1e6;
/// Grid density of the GCV search, in points per decade of `λ`.
pub const GRID_POINTS_PER_DECADE: usize = 7;

/// Fits with `m − edf` below this gap are rejected instead of scored.
const DEGENERATE_GAP: f64 = 1e-8;
/// Rotated penalty eigenvalues below this fraction of the largest are the
/// affine null space and are pinned to zero.
const NULL_EIGEN_RELATIVE: f64 = 1e-10;
const RANK_RELATIVE: f64 = 1e-10;
const GOLDEN_TOL_LOG10: f64 = 1e-7;

#[derive(Debug, Clone)]
struct Spectral {
    /// `Q U`, m×q with orthonormal columns.
    rotated_basis: DMatrix<f64>,
    /// `R⁻¹ U`, maps rotated coefficients back to B-spline coefficients.
    coef_map: DMatrix<f64>,
    eigenvalues: DVector<f64>,
}

/// Cubic B-spline basis, design matrix and second-derivative penalty for
/// rows of length `m`.
#[derive(Debug, Clone)]
pub struct SplineModel {
    q: usize,
    m: usize,
    breakpoints: Vec<f64>,
    knot_vector: Vec<f64>,
    design: DMatrix<f64>,
    penalty: DMatrix<f64>,
    spectral: Option<Spectral>,
}

/// Result of one penalized least-squares fit.
#[derive(Debug, Clone)]
pub struct PenalizedFit {
    pub coefficients: DVector<f64>,
    pub lambda: f64,
    pub fitted: DVector<f64>,
    pub edf: f64,
    pub gcv: f64,
    pub rss: f64,
}

/// Builds the model for rows of length `m` with `q` basis functions.
pub fn build_spline_model(m: usize, q: usize) -> Result<SplineModel> {
    SplineModel::new(m, q)
}

impl SplineModel {
    pub fn new(m: usize, q: usize) -> Result<Self> {
        if q < DEGREE + 1 {
            return Err(Error::InvalidBasis(format!("q = {q} is below the cubic minimum of 4")));
        }
        if q > m {
            return Err(Error::InvalidBasis(format!(
                "q = {q} exceeds the number of sites m = {m}"
            )));
        }

        // q − 2 evenly spaced breakpoints on [1, m], boundary knots repeated 4×.
        let spans = q - DEGREE;
        let lo = 1.0;
        let hi = m as f64;
        let breakpoints: Vec<f64> = (0..=spans)
            .map(|k| {
                if k == spans {
                    hi
                } else {
                    lo + (hi - lo) * k as f64 / spans as f64
                }
            })
            .collect();
        let mut knot_vector = Vec::with_capacity(q + DEGREE + 1);
        knot_vector.extend(std::iter::repeat_n(lo, DEGREE));
        knot_vector.extend_from_slice(&breakpoints);
        knot_vector.extend(std::iter::repeat_n(hi, DEGREE));

        let mut model = SplineModel {
            q,
            m,
            breakpoints,
            knot_vector,
            design: DMatrix::zeros(m, q),
            penalty: DMatrix::zeros(q, q),
            spectral: None,
        };

        for j in 0..m {
            let t = (j + 1) as f64;
            let span = model.find_span(t);
            let ders = model.basis_derivatives(span, t);
            for (a, value) in ders[0].iter().enumerate() {
                model.design[(j, span - DEGREE + a)] = *value;
            }
        }

        model.penalty = model.assemble_penalty();
        model.spectral = model.decompose();
        Ok(model)
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Distinct breakpoints, strictly increasing from 1 to m.
    pub fn knots(&self) -> &[f64] {
        &self.breakpoints
    }

    /// Full knot vector including the repeated boundary knots.
    pub fn knot_vector(&self) -> &[f64] {
        &self.knot_vector
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn penalty(&self) -> &DMatrix<f64> {
        &self.penalty
    }

    pub fn is_full_rank(&self) -> bool {
        self.spectral.is_some()
    }

    /// Values of all `q` basis functions at `t` (zero outside `[1, m]`).
    pub fn basis_values(&self, t: f64) -> Vec<f64> {
        self.evaluate(t, 0)
    }

    /// Second derivatives of all `q` basis functions at `t`.
    pub fn basis_second_derivatives(&self, t: f64) -> Vec<f64> {
        self.evaluate(t, 2)
    }

    fn evaluate(&self, t: f64, order: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.q];
        if !(1.0..=self.m as f64).contains(&t) {
            return out;
        }
        let span = self.find_span(t);
        let ders = self.basis_derivatives(span, t);
        for (a, value) in ders[order].iter().enumerate() {
            out[span - DEGREE + a] = *value;
        }
        out
    }

    /// Index `i` of the knot span `[u_i, u_{i+1})` containing `t`, clamped so
    /// the right end of the domain belongs to the last non-empty span.
    fn find_span(&self, t: f64) -> usize {
        let last = self.q - 1;
        let i = self.knot_vector[..=last].partition_point(|&k| k <= t);
        i.saturating_sub(1).clamp(DEGREE, last)
    }

    /// Values, first and second derivatives of the four cubics supported on
    /// `span` at `t` (de Boor / Cox recursion with derivative table).
    fn basis_derivatives(&self, span: usize, t: f64) -> [[f64; DEGREE + 1]; 3] {
        let p = DEGREE;
        let u = &self.knot_vector;
        let mut ndu = [[0.0f64; DEGREE + 1]; DEGREE + 1];
        let mut left = [0.0f64; DEGREE + 1];
        let mut right = [0.0f64; DEGREE + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = t - u[span + 1 - j];
            right[j] = u[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }

        let mut ders = [[0.0f64; DEGREE + 1]; 3];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }

        let mut a = [[0.0f64; DEGREE + 1]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=2usize {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    let rk = rk as usize;
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
                    d = a[s2][0] * ndu[rk][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if r as isize - 1 <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for (k, row) in ders.iter_mut().enumerate().skip(1) {
            for value in row.iter_mut() {
                *value *= factor;
            }
            factor *= (p - k) as f64;
        }
        ders
    }

    /// `S_kl = ∫ b_k'' b_l''` over `[1, m]`. Second derivatives are linear on
    /// each span, so two-point Gauss–Legendre per span is exact.
    fn assemble_penalty(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.q, self.q);
        let offset = 1.0 / 3f64.sqrt();
        for span in DEGREE..self.q {
            let a = self.knot_vector[span];
            let b = self.knot_vector[span + 1];
            if b <= a {
                continue;
            }
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for node in [mid - half * offset, mid + half * offset] {
                let second = self.basis_derivatives(span, node)[2];
                for (i, di) in second.iter().enumerate() {
                    for (k, dk) in second.iter().enumerate() {
                        s[(span - DEGREE + i, span - DEGREE + k)] += half * di * dk;
                    }
                }
            }
        }
        // Accumulation order differs between (i, k) and (k, i) only in
        // rounding; force exact symmetry.
        for i in 0..self.q {
            for k in (i + 1)..self.q {
                let v = 0.5 * (s[(i, k)] + s[(k, i)]);
                s[(i, k)] = v;
                s[(k, i)] = v;
            }
        }
        s
    }

    fn decompose(&self) -> Option<Spectral> {
        let sv = self.design.clone().svd(false, false).singular_values;
        let smax = sv.max();
        if !(sv.min() > RANK_RELATIVE * smax) {
            return None;
        }
        let qr = self.design.clone().qr();
        let q_mat = qr.q();
        let r_inv = qr.r().try_inverse()?;
        let mut rotated = r_inv.transpose() * &self.penalty * &r_inv;
        rotated = 0.5 * (&rotated + rotated.transpose());
        let eig = SymmetricEigen::new(rotated);
        let dmax = eig.eigenvalues.max();
        let eigenvalues = eig
            .eigenvalues
            .map(|d| if d < NULL_EIGEN_RELATIVE * dmax { 0.0 } else { d });
        Some(Spectral {
            rotated_basis: q_mat * &eig.eigenvectors,
            coef_map: r_inv * &eig.eigenvectors,
            eigenvalues,
        })
    }

    fn check_row(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                actual: z.len(),
            });
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("row contains non-finite values".into()));
        }
        Ok(())
    }
}

fn gcv_score(m: usize, rss: f64, edf: f64) -> Option<f64> {
    let gap = m as f64 - edf;
    if gap < DEGENERATE_GAP {
        None
    } else {
        Some(m as f64 * rss / (gap * gap))
    }
}

/// Minimizes `‖z − Xβ‖² + λ βᵀSβ` for a fixed `λ`.
pub fn fit_penalized(model: &SplineModel, z: &[f64], lambda: f64) -> Result<PenalizedFit> {
    model.check_row(z)?;
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidInput(format!(
            "smoothing parameter must be finite and non-negative, got {lambda}"
        )));
    }
    let zv = DVector::from_column_slice(z);

    let (coefficients, edf) = match &model.spectral {
        Some(sp) => {
            let y = sp.rotated_basis.tr_mul(&zv);
            let shrink = sp.eigenvalues.map(|d| 1.0 / (1.0 + lambda * d));
            let coefficients = &sp.coef_map * y.component_mul(&shrink);
            (coefficients, shrink.sum())
        }
        None => {
            let xtx = model.design.tr_mul(&model.design);
            let normal = &xtx + &model.penalty * lambda;
            let chol = normal.cholesky().ok_or_else(|| {
                Error::IllPosedFit(format!(
                    "normal matrix is singular at lambda = {lambda} (rank-deficient design)"
                ))
            })?;
            let coefficients = chol.solve(&model.design.tr_mul(&zv));
            let edf = chol.solve(&xtx).trace();
            (coefficients, edf)
        }
    };

    let fitted = &model.design * &coefficients;
    let rss = (&zv - &fitted).norm_squared();
    let gcv = gcv_score(model.m, rss, edf)
        .ok_or_else(|| Error::DegenerateGcv(format!("m − edf = {} at lambda = {lambda}", model.m as f64 - edf)))?;
    Ok(PenalizedFit {
        coefficients,
        lambda,
        fitted,
        edf,
        gcv,
        rss,
    })
}

/// The geometric `λ` grid searched by [`select_lambda`].
pub fn lambda_grid() -> Vec<f64> {
    lambda_grid_with_density(GRID_POINTS_PER_DECADE)
}

pub fn lambda_grid_with_density(per_decade: usize) -> Vec<f64> {
    let lo = LAMBDA_MIN.log10();
    let hi = LAMBDA_MAX.log10();
    let steps = ((hi - lo) * per_decade as f64).round() as usize;
    (0..=steps)
        .map(|k| 10f64.powf(lo + (hi - lo) * k as f64 / steps as f64))
        .collect()
}

/// Cheap GCV evaluation for one row at many `λ`.
enum RowScorer<'a> {
    Spectral {
        m: usize,
        eigenvalues: &'a DVector<f64>,
        rotated: DVector<f64>,
        residual_floor: f64,
    },
    Direct {
        model: &'a SplineModel,
        z: &'a [f64],
    },
}

impl<'a> RowScorer<'a> {
    fn new(model: &'a SplineModel, z: &'a [f64]) -> Self {
        match &model.spectral {
            Some(sp) => {
                let zv = DVector::from_column_slice(z);
                let rotated = sp.rotated_basis.tr_mul(&zv);
                let residual_floor = (&zv - &sp.rotated_basis * &rotated).norm_squared();
                RowScorer::Spectral {
                    m: model.m,
                    eigenvalues: &sp.eigenvalues,
                    rotated,
                    residual_floor,
                }
            }
            None => RowScorer::Direct { model, z },
        }
    }

    fn gcv(&self, lambda: f64) -> Option<f64> {
        match self {
            RowScorer::Spectral {
                m,
                eigenvalues,
                rotated,
                residual_floor,
            } => {
                let mut edf = 0.0;
                let mut rss = *residual_floor;
                for (d, y) in eigenvalues.iter().zip(rotated.iter()) {
                    let ld = lambda * d;
                    let s = 1.0 / (1.0 + ld);
                    edf += s;
                    let r = ld * s * y;
                    rss += r * r;
                }
                gcv_score(*m, rss, edf)
            }
            RowScorer::Direct { model, z } => fit_penalized(model, z, lambda).ok().map(|f| f.gcv),
        }
    }

    /// A positive multiple of `dV/d log λ`, when the spectral form is
    /// available.
    fn slope(&self, lambda: f64) -> Option<f64> {
        let RowScorer::Spectral {
            m,
            eigenvalues,
            rotated,
            residual_floor,
        } = self
        else {
            return None;
        };
        let (mut edf, mut rss) = (0.0, *residual_floor);
        let (mut d_rss, mut d_edf) = (0.0, 0.0);
        for (d, y) in eigenvalues.iter().zip(rotated.iter()) {
            let s = 1.0 / (1.0 + lambda * d);
            let a = 1.0 - s;
            edf += s;
            rss += (a * y) * (a * y);
            d_rss += a * a * s * y * y;
            d_edf += a * s;
        }
        Some((*m as f64 - edf) * d_rss - rss * d_edf)
    }
}

/// Moves a golden-section estimate onto the root of the GCV slope. Comparing
/// scores alone pins a flat minimum only to about the square root of machine
/// precision; the slope's sign is reliable much closer in.
fn polish_minimum(scorer: &RowScorer, x: f64, lo: f64, hi: f64) -> f64 {
    let slope = |x: f64| scorer.slope(10f64.powf(x));
    let (mut a, mut b) = ((x - 1e-3).max(lo), (x + 1e-3).min(hi));
    match (slope(a), slope(b)) {
        (Some(sa), Some(sb)) if sa < 0.0 && sb > 0.0 => {}
        _ => return x,
    }
    for _ in 0..60 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        match slope(mid) {
            Some(v) if v < 0.0 => a = mid,
            Some(_) => b = mid,
            None => return x,
        }
    }
    0.5 * (a + b)
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Chooses `λ` by minimizing the GCV score over [`lambda_grid`], then refines
/// by golden-section search in `log10 λ` between the grid neighbours of the
/// minimizer. Scores equal up to rounding are resolved toward larger `λ`.
pub fn select_lambda(model: &SplineModel, z: &[f64]) -> Result<PenalizedFit> {
    model.check_row(z)?;
    let grid = lambda_grid();
    let scorer = RowScorer::new(model, z);
    let scores: Vec<Option<f64>> = grid.iter().map(|&l| scorer.gcv(l)).collect();

    let best = scores.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(Error::DegenerateGcv(
            "every grid value of lambda gives m − edf below the guard".into(),
        ));
    }

    let scale = z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64;
    let tie = 1e-10 * best + 1e-13 * scale + f64::MIN_POSITIVE;
    let k = scores
        .iter()
        .rposition(|s| matches!(s, Some(v) if *v <= best + tie))
        .expect("minimum is attained on the grid");

    let lo = grid[k.saturating_sub(1)].log10();
    let hi = grid[(k + 1).min(grid.len() - 1)].log10();
    let (x, refined) = golden_section(
        |x| scorer.gcv(10f64.powf(x)).unwrap_or(f64::INFINITY),
        lo,
        hi,
        GOLDEN_TOL_LOG10,
    );
    let x = polish_minimum(&scorer, x, lo, hi);
    let refined = scorer.gcv(10f64.powf(x)).unwrap_or(refined);
    let grid_score = scores[k].expect("selected grid point is scored");
    let lambda = if refined < grid_score - tie {
        10f64.powf(x)
    } else {
        grid[k]
    };
    fit_penalized(model, z, lambda)
}
