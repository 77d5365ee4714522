//! Non-negative L1-regularized reconstruction.
//!
//! Solves `min_{s >= 0} 1/2 ||A s - m||^2 + gamma ||s||_1` with accelerated
//! proximal gradient (FISTA). The momentum is reset whenever a step would
//! increase the objective, which makes the objective sequence monotone.

use crate::domain::{check_len, SpeckleImage, Spectrum, TransmissionMatrix};
use crate::error::{Error, Result};
use crate::recon::Reconstructor;
use crate::stats::pearson;

/// How the L1 weight is chosen for each image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gamma {
    Fixed(f64),
    /// Multiple of `||A^T m||_inf`, the smallest weight for which `s = 0` is
    /// optimal.
    Relative(f64),
}

impl Gamma {
    pub const DEFAULT: Gamma = Gamma::Relative(0.01);

    pub fn resolve(self, atm_inf: f64) -> f64 {
        match self {
            Gamma::Fixed(g) => g,
            Gamma::Relative(c) => c * atm_inf,
        }
    }

    fn validate(self) -> Result<()> {
        let v = match self {
            Gamma::Fixed(g) | Gamma::Relative(g) => g,
        };
        if v >= 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "gamma must be finite and >= 0 (got {v})"
            )))
        }
    }
}

impl std::fmt::Display for Gamma {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Gamma::Fixed(g) => write!(f, "{g}"),
            Gamma::Relative(c) => write!(f, "rel:{c}"),
        }
    }
}

impl std::str::FromStr for Gamma {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::invalid(format!(
                "bad gamma '{s}' (expected a number or rel:<factor>)"
            ))
        };
        let g = match s.strip_prefix("rel:") {
            Some(rest) => Gamma::Relative(rest.trim().parse().map_err(|_| bad())?),
            None => Gamma::Fixed(s.trim().parse().map_err(|_| bad())?),
        };
        g.validate()?;
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsOptions {
    pub gamma: Gamma,
    pub max_iters: usize,
    /// Stop when `||s_k - s_{k-1}|| <= rel_tol * ||s_k||`.
    pub rel_tol: f64,
    /// Step size is `1 / lipschitz`; estimated by power iteration when `None`.
    pub lipschitz: Option<f64>,
    pub record_objective: bool,
}

impl Default for CsOptions {
    fn default() -> Self {
        Self {
            gamma: Gamma::DEFAULT,
            max_iters: 5000,
            rel_tol: 1e-6,
            lipschitz: None,
            record_objective: false,
        }
    }
}

impl CsOptions {
    pub fn validate(&self) -> Result<()> {
        self.gamma.validate()?;
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be >= 1"));
        }
        if !(self.rel_tol >= 0.0 && self.rel_tol.is_finite()) {
            return Err(Error::invalid("rel_tol must be finite and >= 0"));
        }
        if let Some(l) = self.lipschitz {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::invalid("lipschitz constant must be finite and > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsSolution {
    pub spectrum: Spectrum,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every iteration when `record_objective` is set; the
    /// first entry is the objective at the starting point.
    pub objective: Vec<f64>,
    pub gamma: f64,
}

/// Largest eigenvalue of `A^T A` by power iteration.
pub fn lipschitz_bound(a: &TransmissionMatrix) -> Result<f64> {
    lipschitz_bound_tol(a, 1e-6)
}

pub fn lipschitz_bound_tol(a: &TransmissionMatrix, tol: f64) -> Result<f64> {
    let m = a.matrix();
    let (x, y) = m.shape();
    let mut v = vec![1.0 / (y as f64).sqrt(); y];
    let mut av = vec![0.0; x];
    let mut w = vec![0.0; y];
    let mut estimate = 0.0;
    for _ in 0..100_000 {
        mat_vec(m, &v, &mut av);
        mat_t_vec(m, &av, &mut w);
        let rayleigh: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Singular(
                "A^T A is zero along the iteration vector".into(),
            ));
        }
        if !norm.is_finite() {
            return Err(Error::NonFinite("transmission matrix".into()));
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / norm;
        }
        if (rayleigh - estimate).abs() <= tol * 1e-3 * rayleigh {
            return Ok(rayleigh);
        }
        estimate = rayleigh;
    }
    Ok(estimate)
}

/// `out = A v`, with `A` stored column-major.
fn mat_vec(a: &nalgebra::DMatrix<f64>, v: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    let x = a.nrows();
    for (j, &vj) in v.iter().enumerate() {
        if vj == 0.0 {
            continue;
        }
        let col = &a.as_slice()[j * x..(j + 1) * x];
        for (o, c) in out.iter_mut().zip(col) {
            *o += c * vj;
        }
    }
}

/// `out = A^T r`.
fn mat_t_vec(a: &nalgebra::DMatrix<f64>, r: &[f64], out: &mut [f64]) {
    let x = a.nrows();
    for (j, o) in out.iter_mut().enumerate() {
        let col = &a.as_slice()[j * x..(j + 1) * x];
        *o = col.iter().zip(r).map(|(c, ri)| c * ri).sum();
    }
}

fn objective(ax: &[f64], m: &[f64], s: &[f64], gamma: f64) -> f64 {
    let fit: f64 = ax.iter().zip(m).map(|(p, q)| (p - q) * (p - q)).sum();
    0.5 * fit + gamma * s.iter().sum::<f64>()
}

/// Working vectors for [`solve_cs_into`].
#[derive(Debug, Default, Clone)]
pub struct CsScratch {
    x: Vec<f64>,
    z: Vec<f64>,
    yv: Vec<f64>,
    grad: Vec<f64>,
    ax: Vec<f64>,
    az: Vec<f64>,
    ay: Vec<f64>,
    resid: Vec<f64>,
}

impl CsScratch {
    fn resize(&mut self, pixels: usize, channels: usize) {
        for v in [&mut self.x, &mut self.z, &mut self.yv, &mut self.grad] {
            v.clear();
            v.resize(channels, 0.0);
        }
        for v in [&mut self.ax, &mut self.az, &mut self.ay, &mut self.resid] {
            v.clear();
            v.resize(pixels, 0.0);
        }
    }
}

pub fn solve_cs(
    a: &TransmissionMatrix,
    image: &SpeckleImage,
    opts: &CsOptions,
) -> Result<CsSolution> {
    solve_cs_into(a, image, opts, None, &mut CsScratch::default())
}

/// FISTA from an optional warm start.
pub fn solve_cs_into(
    a: &TransmissionMatrix,
    image: &SpeckleImage,
    opts: &CsOptions,
    start: Option<&[f64]>,
    scratch: &mut CsScratch,
) -> Result<CsSolution> {
    opts.validate()?;
    check_len("cs image pixels", a.pixels(), image.len())?;
    let m = image.pixels();
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("speckle image".into()));
    }
    let mat = a.matrix();
    let (px, ch) = mat.shape();
    let lipschitz = match opts.lipschitz {
        Some(l) => l,
        None => lipschitz_bound(a)?,
    };
    let step = 1.0 / lipschitz;

    let s = scratch;
    s.resize(px, ch);
    mat_t_vec(mat, m, &mut s.grad);
    let atm_inf = s.grad.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let gamma = opts.gamma.resolve(atm_inf);

    if let Some(x0) = start {
        check_len("cs warm start", ch, x0.len())?;
        for (xi, v) in s.x.iter_mut().zip(x0) {
            *xi = v.max(0.0);
        }
    }
    mat_vec(mat, &s.x, &mut s.ax);
    let mut f_prev = objective(&s.ax, m, &s.x, gamma);
    let mut history = Vec::new();
    if opts.record_objective {
        history.push(f_prev);
    }
    s.yv.copy_from_slice(&s.x);
    s.ay.copy_from_slice(&s.ax);
    let mut t = 1.0f64;
    let mut converged = false;
    let mut iterations = 0;
    let thresh = gamma * step;

    for _ in 0..opts.max_iters {
        iterations += 1;
        prox_step(
            mat,
            m,
            &s.yv,
            &s.ay,
            step,
            thresh,
            &mut s.resid,
            &mut s.grad,
            &mut s.z,
        );
        mat_vec(mat, &s.z, &mut s.az);
        let mut f_new = objective(&s.az, m, &s.z, gamma);
        let mut restarted = false;
        if f_new > f_prev {
            // Momentum overshot: take a plain proximal gradient step from x.
            restarted = true;
            prox_step(
                mat,
                m,
                &s.x,
                &s.ax,
                step,
                thresh,
                &mut s.resid,
                &mut s.grad,
                &mut s.z,
            );
            mat_vec(mat, &s.z, &mut s.az);
            f_new = objective(&s.az, m, &s.z, gamma);
            if f_new > f_prev {
                s.z.copy_from_slice(&s.x);
                s.az.copy_from_slice(&s.ax);
                f_new = f_prev;
            }
        }
        if restarted {
            t = 1.0;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;

        let mut diff2 = 0.0;
        let mut norm2 = 0.0;
        for j in 0..ch {
            let d = s.z[j] - s.x[j];
            diff2 += d * d;
            norm2 += s.z[j] * s.z[j];
            s.yv[j] = s.z[j] + beta * d;
        }
        for i in 0..px {
            s.ay[i] = s.az[i] + beta * (s.az[i] - s.ax[i]);
        }
        std::mem::swap(&mut s.x, &mut s.z);
        std::mem::swap(&mut s.ax, &mut s.az);
        t = t_next;
        f_prev = f_new;
        if opts.record_objective {
            history.push(f_new);
        }
        if !f_new.is_finite() {
            return Err(Error::NonFinite("cs objective".into()));
        }
        if diff2.sqrt() <= opts.rel_tol * norm2.sqrt() || (diff2 == 0.0 && norm2 == 0.0) {
            converged = true;
            break;
        }
    }
    Ok(CsSolution {
        spectrum: Spectrum::from_clamped(s.x.clone()),
        iterations,
        converged,
        objective: history,
        gamma,
    })
}

/// `z = max(y - step * A^T (A y - m) - thresh, 0)`, given `ay = A y`.
#[allow(clippy::too_many_arguments)]
fn prox_step(
    a: &nalgebra::DMatrix<f64>,
    m: &[f64],
    y: &[f64],
    ay: &[f64],
    step: f64,
    thresh: f64,
    resid: &mut [f64],
    grad: &mut [f64],
    z: &mut [f64],
) {
    for ((r, p), q) in resid.iter_mut().zip(ay).zip(m) {
        *r = p - q;
    }
    mat_t_vec(a, resid, grad);
    for ((zj, yj), gj) in z.iter_mut().zip(y).zip(grad.iter()) {
        *zj = (yj - step * gj - thresh).max(0.0);
    }
}

/// A calibrated fiber plus solver settings.
#[derive(Debug, Clone)]
pub struct CsReconstructor {
    matrix: TransmissionMatrix,
    opts: CsOptions,
}

impl CsReconstructor {
    /// Fixes the step size once so that each call skips the power iteration.
    pub fn new(matrix: TransmissionMatrix, mut opts: CsOptions) -> Result<Self> {
        if opts.lipschitz.is_none() {
            opts.lipschitz = Some(lipschitz_bound(&matrix)?);
        }
        opts.validate()?;
        Ok(Self { matrix, opts })
    }

    pub fn options(&self) -> &CsOptions {
        &self.opts
    }

    pub fn matrix(&self) -> &TransmissionMatrix {
        &self.matrix
    }

    pub fn solve(&self, image: &SpeckleImage, scratch: &mut CsScratch) -> Result<CsSolution> {
        solve_cs_into(&self.matrix, image, &self.opts, None, scratch)
    }
}

impl Reconstructor for CsReconstructor {
    type Scratch = CsScratch;

    fn reconstruct_with(&self, image: &SpeckleImage, scratch: &mut CsScratch) -> Result<Spectrum> {
        Ok(self.solve(image, scratch)?.spectrum)
    }

    fn roi_shape(&self) -> (usize, usize) {
        self.matrix.roi_shape()
    }

    fn channels(&self) -> usize {
        self.matrix.channels()
    }
}

/// Relative weights tried by [`select_gamma`] by default.
pub const DEFAULT_GAMMA_GRID: [f64; 7] = [0.0, 1e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1];

pub fn default_gamma_grid() -> Vec<Gamma> {
    DEFAULT_GAMMA_GRID
        .iter()
        .map(|&c| Gamma::Relative(c))
        .collect()
}

/// Grid entry maximizing mean validation cross-correlation. Ties go to the
/// larger weight.
pub fn select_gamma(
    a: &TransmissionMatrix,
    validation: &[(SpeckleImage, Spectrum)],
    grid: &[Gamma],
    base: &CsOptions,
) -> Result<Gamma> {
    if grid.is_empty() || validation.is_empty() {
        return Err(Error::invalid(
            "select_gamma needs a non-empty grid and validation set",
        ));
    }
    let mut opts = *base;
    if opts.lipschitz.is_none() {
        opts.lipschitz = Some(lipschitz_bound(a)?);
    }
    let mut scratch = CsScratch::default();
    let mut best: Option<(Gamma, f64)> = None;
    for &g in grid {
        opts.gamma = g;
        let mut acc = 0.0;
        for (img, truth) in validation {
            let sol = solve_cs_into(a, img, &opts, None, &mut scratch)?;
            acc += pearson(sol.spectrum.values(), truth.values());
        }
        let score = acc / validation.len() as f64;
        let larger = |x: Gamma, y: Gamma| match (x, y) {
            (Gamma::Fixed(p), Gamma::Fixed(q)) | (Gamma::Relative(p), Gamma::Relative(q)) => p > q,
            _ => false,
        };
        best = match best {
            None => Some((g, score)),
            Some((bg, bs)) => {
                if score > bs + 1e-12 || ((score - bs).abs() <= 1e-12 && larger(g, bg)) {
                    Some((g, score))
                } else {
                    Some((bg, bs))
                }
            }
        };
    }
    Ok(best.map(|(g, _)| g).expect("grid is non-empty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::render_speckle;
    use crate::rng::SpeckleRng;
    use crate::specklegen::{desk, generate_fiber, FiberModel};
    use crate::synth::sample_sparse_spectrum;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn random_matrix(seed: u64, x: usize, y: usize) -> TransmissionMatrix {
        let mut rng = SpeckleRng::new(seed);
        TransmissionMatrix::with_default_labels(
            DMatrix::from_fn(x, y, |_, _| rng.uniform()),
            (1, x),
        )
        .unwrap()
    }

    fn desk_fiber(seed: u64, roi: (usize, usize)) -> TransmissionMatrix {
        generate_fiber(&FiberModel::default().with_seed(seed), desk::PATCH, 43)
            .unwrap()
            .crop_centered(roi)
            .unwrap()
    }

    #[test]
    fn power_iteration_matches_dense_eigenvalues() {
        for seed in 0..5 {
            let a = random_matrix(seed, 30, 10);
            let gram = a.matrix().transpose() * a.matrix();
            let exact = gram.symmetric_eigen().eigenvalues.max();
            let est = lipschitz_bound(&a).unwrap();
            assert!((est - exact).abs() <= 1e-5 * exact, "{est} vs {exact}");
        }
        let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let a = TransmissionMatrix::with_default_labels(diag, (1, 3)).unwrap();
        assert!((lipschitz_bound(&a).unwrap() - 9.0).abs() < 9e-6);
    }

    #[test]
    fn zero_matrix_has_no_step_size() {
        let a = TransmissionMatrix::with_default_labels(DMatrix::zeros(4, 2), (2, 2)).unwrap();
        assert!(matches!(lipschitz_bound(&a), Err(Error::Singular(_))));
    }

    /// Global optimum by enumerating every support and solving the
    /// stationarity conditions restricted to it.
    fn support_enumeration(a: &DMatrix<f64>, m: &[f64], gamma: f64) -> f64 {
        let (x, y) = a.shape();
        let mv = nalgebra::DVector::from_column_slice(m);
        let mut best = 0.5 * mv.norm_squared();
        for mask in 1u32..(1 << y) {
            let cols: Vec<usize> = (0..y).filter(|j| mask & (1 << j) != 0).collect();
            if cols.len() > x {
                continue;
            }
            let sub = a.select_columns(cols.iter());
            let gram = sub.transpose() * &sub;
            let rhs = sub.transpose() * &mv - nalgebra::DVector::from_element(cols.len(), gamma);
            let Some(chol) = gram.cholesky() else {
                continue;
            };
            let sol = chol.solve(&rhs);
            if sol.iter().any(|v| *v <= 0.0) {
                continue;
            }
            let r = &sub * &sol - &mv;
            let f = 0.5 * r.norm_squared() + gamma * sol.sum();
            best = best.min(f);
        }
        best
    }

    #[test]
    fn matches_support_enumeration_oracle() {
        let mut rng = SpeckleRng::new(11);
        for case in 0..12 {
            let y = 6 + case % 7;
            let x = 5 + case % 5;
            let a = random_matrix(100 + case as u64, x, y);
            let s = sample_sparse_spectrum(&mut rng, y, 1 + case % 2).unwrap();
            let img = render_speckle(&a, &s).unwrap();
            let opts = CsOptions {
                gamma: Gamma::Relative(0.05),
                max_iters: 200_000,
                rel_tol: 1e-13,
                record_objective: true,
                ..CsOptions::default()
            };
            let sol = solve_cs(&a, &img, &opts).unwrap();
            let oracle = support_enumeration(a.matrix(), img.pixels(), sol.gamma);
            let got = *sol.objective.last().unwrap();
            assert!(
                (got - oracle).abs() < 1e-8,
                "case {case}: {got} vs {oracle}"
            );
        }
    }

    #[test]
    fn optimum_is_a_fixed_point() {
        let a = random_matrix(5, 9, 12);
        let mut rng = SpeckleRng::new(6);
        let s = sample_sparse_spectrum(&mut rng, 12, 2).unwrap();
        let img = render_speckle(&a, &s).unwrap();
        let tight = CsOptions {
            max_iters: 200_000,
            rel_tol: 1e-14,
            ..CsOptions::default()
        };
        let sol = solve_cs(&a, &img, &tight).unwrap();
        let one = CsOptions {
            max_iters: 1,
            ..CsOptions::default()
        };
        let again = solve_cs_into(
            &a,
            &img,
            &one,
            Some(sol.spectrum.values()),
            &mut CsScratch::default(),
        )
        .unwrap();
        let moved: f64 = again
            .spectrum
            .values()
            .iter()
            .zip(sol.spectrum.values())
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt();
        let norm = sol
            .spectrum
            .values()
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        assert!(moved < one.rel_tol * norm, "moved {moved}");
    }

    #[test]
    fn objective_never_increases() {
        let mut rng = SpeckleRng::new(21);
        for case in 0..100u64 {
            let y = 4 + (case % 20) as usize;
            let x = 3 + (case % 17) as usize;
            let a = random_matrix(500 + case, x, y);
            let s = sample_sparse_spectrum(&mut rng, y, 1 + (case % 3) as usize).unwrap();
            let img = render_speckle(&a, &s).unwrap();
            let opts = CsOptions {
                gamma: Gamma::Relative(rng.uniform() * 0.2),
                max_iters: 400,
                record_objective: true,
                ..CsOptions::default()
            };
            let sol = solve_cs(&a, &img, &opts).unwrap();
            for w in sol.objective.windows(2) {
                assert!(w[1] <= w[0], "case {case}: {} > {}", w[1], w[0]);
            }
        }
    }

    fn validation_set(
        a: &TransmissionMatrix,
        n: usize,
        seed: u64,
        draw: impl Fn(&mut SpeckleRng) -> Spectrum,
    ) -> Vec<(SpeckleImage, Spectrum)> {
        let mut rng = SpeckleRng::new(seed);
        (0..n)
            .map(|_| {
                let s = draw(&mut rng);
                (render_speckle(a, &s).unwrap(), s)
            })
            .collect()
    }

    #[test]
    fn one_sparse_recovery_at_five_by_five() {
        let a = desk_fiber(3, (5, 5));
        let val = validation_set(&a, 20, 4, |r| sample_sparse_spectrum(r, 43, 1).unwrap());
        let base = CsOptions {
            max_iters: 2000,
            ..CsOptions::default()
        };
        let gamma = select_gamma(&a, &val, &default_gamma_grid(), &base).unwrap();
        let cs = CsReconstructor::new(
            a.clone(),
            CsOptions {
                gamma,
                ..CsOptions::default()
            },
        )
        .unwrap();
        let mut scratch = CsScratch::default();
        let m_of = |img: &SpeckleImage| nalgebra::DVector::from_column_slice(img.pixels());
        for j in 0..43 {
            let truth = Spectrum::delta(43, j);
            let img = render_speckle(&a, &truth).unwrap();
            let rec = cs.solve(&img, &mut scratch).unwrap().spectrum;
            let rec = rec.values();
            let argmax = (0..43).max_by(|&p, &q| rec[p].total_cmp(&rec[q])).unwrap();
            assert_eq!(argmax, j);
            assert!(pearson(rec, truth.values()) > 0.99, "channel {j}");
            // The best single-channel least-squares fit is the true channel.
            let m = m_of(&img);
            let res = |k: usize| {
                let c = a.matrix().column(k);
                let amp = c.dot(&m) / c.norm_squared();
                (&m - c * amp).norm()
            };
            let best = (0..43).min_by(|&p, &q| res(p).total_cmp(&res(q))).unwrap();
            assert_eq!(best, j);
        }
    }

    #[test]
    fn unpenalized_oversampled_matches_least_squares() {
        let a = desk_fiber(5, desk::ROI);
        let tr = crate::recon_linear::fit_tikhonov(&a, 1e-9).unwrap();
        let opts = CsOptions {
            gamma: Gamma::Fixed(0.0),
            max_iters: 100_000,
            rel_tol: 1e-10,
            ..CsOptions::default()
        };
        let cs = CsReconstructor::new(a.clone(), opts).unwrap();
        let mut rng = SpeckleRng::new(2);
        for _ in 0..5 {
            let s = crate::synth::sample_dense_spectrum(&mut rng, 43, 0.2).unwrap();
            let img = render_speckle(&a, &s).unwrap();
            let c = cs.reconstruct(&img).unwrap();
            let t = crate::recon_linear::reconstruct(&tr, &img).unwrap();
            let r = pearson(c.values(), t.values());
            assert!(r > 1.0 - 1e-4, "{r}");
        }
    }

    #[test]
    fn dense_noiseless_validation_selects_small_gamma() {
        let a = desk_fiber(8, (5, 5));
        let val = validation_set(&a, 20, 5, |r| {
            crate::synth::sample_dense_spectrum(r, 43, 0.2).unwrap()
        });
        let base = CsOptions {
            max_iters: 1000,
            ..CsOptions::default()
        };
        let g = select_gamma(&a, &val, &default_gamma_grid(), &base).unwrap();
        assert!(matches!(g, Gamma::Relative(c) if c <= 1e-3), "{g}");
    }

    #[test]
    fn zero_image_returns_zero() {
        let a = random_matrix(1, 10, 5);
        let sol = solve_cs(&a, &SpeckleImage::zeros(1, 10), &CsOptions::default()).unwrap();
        assert!(sol.spectrum.values().iter().all(|v| *v == 0.0));
        assert!(sol.converged);
    }

    #[test]
    fn bad_options_are_rejected() {
        let a = random_matrix(1, 10, 5);
        let img = SpeckleImage::zeros(1, 10);
        let bad = [
            CsOptions {
                gamma: Gamma::Fixed(-1.0),
                ..CsOptions::default()
            },
            CsOptions {
                max_iters: 0,
                ..CsOptions::default()
            },
            CsOptions {
                lipschitz: Some(0.0),
                ..CsOptions::default()
            },
        ];
        for o in bad {
            assert!(matches!(
                solve_cs(&a, &img, &o),
                Err(Error::InvalidParameter(_))
            ));
        }
        assert!(matches!(
            solve_cs(&a, &SpeckleImage::zeros(2, 2), &CsOptions::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn sparse_validation_selects_positive_gamma() {
        let a = desk_fiber(8, (5, 5));
        let val = validation_set(&a, 20, 9, |r| sample_sparse_spectrum(r, 43, 2).unwrap());
        let base = CsOptions {
            max_iters: 1000,
            ..CsOptions::default()
        };
        let g = select_gamma(&a, &val, &default_gamma_grid(), &base).unwrap();
        assert!(matches!(g, Gamma::Relative(c) if c > 0.0), "{g}");
        let one = [Gamma::Fixed(0.3)];
        assert_eq!(select_gamma(&a, &val, &one, &base).unwrap(), one[0]);
    }

    #[test]
    fn gamma_text_round_trip() {
        for g in [Gamma::Fixed(0.5), Gamma::Relative(0.01)] {
            assert_eq!(g.to_string().parse::<Gamma>().unwrap(), g);
        }
        assert!("rel:-1".parse::<Gamma>().is_err());
        assert!("abc".parse::<Gamma>().is_err());
    }

    proptest! {
        #[test]
        fn solution_is_non_negative(seed in 0u64..500, g in 0.0f64..0.5) {
            let a = random_matrix(seed, 8, 6);
            let mut rng = SpeckleRng::new(seed);
            let img = SpeckleImage::new(1, 8, (0..8).map(|_| rng.uniform()).collect()).unwrap();
            let opts = CsOptions { gamma: Gamma::Relative(g), max_iters: 300, ..CsOptions::default() };
            let sol = solve_cs(&a, &img, &opts).unwrap();
            prop_assert!(sol.spectrum.values().iter().all(|v| *v >= 0.0));
        }
    }
}
