//! Sampling sweep, method comparison and robustness map.

use rayon::prelude::*;

use crate::domain::{SamplingRatio, TransmissionMatrix};
use crate::error::{Error, Result};
use crate::rng::SpeckleRng;
use crate::synth::{Perturbation, SpectrumSampler, DEFAULT_WALK_STEP};

use super::methods::{fit_method, test_samples, FittedMethod, MethodKind, MethodSettings};
use super::metrics::EvalReport;
use super::table::{num, Table};

/// Deterministic sub-seed for a job identified by `path`.
pub fn sub_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(seed, |s, &i| SpeckleRng::derive(s, i).next_u64())
}

/// Side of the square ROI realizing `ratio` (pixels over channels) to two
/// decimals, checked against the patch size.
pub fn realize_ratio(ratio: f64, channels: usize, patch: (usize, usize)) -> Result<usize> {
    let side = SamplingRatio::square_side_for(ratio, channels);
    let got = SamplingRatio::from_counts(side * side, channels).value();
    if !(ratio > 0.0) || (got - ratio).abs() > 0.005 + 1e-9 {
        return Err(Error::invalid(format!(
            "sampling ratio {ratio} is not realizable with a square ROI at {channels} channels \
             (nearest: {side}x{side} = {got:.3})"
        )));
    }
    if side > patch.0 || side > patch.1 {
        return Err(Error::invalid(format!(
            "sampling ratio {ratio} needs a {side}x{side} ROI; the matrices are {}x{}",
            patch.0, patch.1
        )));
    }
    Ok(side)
}

fn ratio_of(side: usize, channels: usize) -> f64 {
    SamplingRatio::from_counts(side * side, channels).value()
}

fn check_fibers(fibers: &[TransmissionMatrix]) -> Result<(usize, (usize, usize))> {
    let first = fibers
        .first()
        .ok_or_else(|| Error::invalid("at least one fiber matrix is required"))?;
    Ok((first.channels(), first.roi_shape()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub ratios: Vec<f64>,
    pub n_lambdas: Vec<usize>,
    pub n_spectra_per_fiber: usize,
    /// Spectra the method is tuned or trained on; every N_lambda by default.
    pub train_sampler: Option<SpectrumSampler>,
    pub seed: u64,
}

impl SweepConfig {
    /// 3x3, 5x5, 7x7 and 20x20 ROIs at 43 channels.
    pub fn desk(seed: u64) -> Self {
        Self {
            ratios: vec![0.21, 0.58, 1.14, 9.30],
            n_lambdas: vec![1, 2, 5, 10, 20, 43],
            n_spectra_per_fiber: 100,
            train_sampler: None,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub ratio: f64,
    pub side: usize,
    pub n_lambda: usize,
    /// Correlations pooled over all fibers.
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub method: MethodKind,
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn cell(&self, side: usize, n_lambda: usize) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.side == side && c.n_lambda == n_lambda)
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(&[
            "method",
            "ratio",
            "roi",
            "n_lambda",
            "mean",
            "std",
            "n",
            "failure_fraction",
        ]);
        for c in &self.cells {
            t.push(vec![
                self.method.to_string(),
                format!("{:.2}", c.ratio),
                format!("{0}x{0}", c.side),
                c.n_lambda.to_string(),
                num(c.report.mean),
                num(c.report.std),
                c.report.count().to_string(),
                num(c.report.failure_fraction),
            ]);
        }
        t
    }

    /// True when, at ROI `side`, the mean never rises by more than one
    /// standard deviation from one N_lambda to the next larger one.
    pub fn non_increasing_within_std(&self, side: usize) -> bool {
        let mut cells: Vec<&SweepCell> = self.cells.iter().filter(|c| c.side == side).collect();
        cells.sort_by_key(|c| c.n_lambda);
        cells
            .windows(2)
            .all(|w| w[1].report.mean <= w[0].report.mean + w[0].report.std)
    }
}

/// Mean correlation versus sampling ratio and N_lambda. The method is refit
/// per fiber and per ratio; test spectra for a given fiber and N_lambda are
/// shared across ratios.
pub fn sweep_sampling(
    fibers: &[TransmissionMatrix],
    method: MethodKind,
    cfg: &SweepConfig,
    settings: &MethodSettings,
) -> Result<SweepResult> {
    let (y, patch) = check_fibers(fibers)?;
    if cfg.n_spectra_per_fiber == 0 || cfg.n_lambdas.is_empty() {
        return Err(Error::invalid(
            "sweep needs at least one N_lambda and one spectrum per fiber",
        ));
    }
    let sides = cfg
        .ratios
        .iter()
        .map(|&r| realize_ratio(r, y, patch))
        .collect::<Result<Vec<_>>>()?;
    let train_sampler = cfg
        .train_sampler
        .unwrap_or(SpectrumSampler::sparse_range(1, y));
    for &n in &cfg.n_lambdas {
        SpectrumSampler::sparse(n).validate(y)?;
    }

    let jobs: Vec<(usize, usize)> = (0..sides.len())
        .flat_map(|r| (0..fibers.len()).map(move |f| (r, f)))
        .collect();
    // Per job: correlations for every N_lambda.
    let per_job = jobs
        .par_iter()
        .map(|&(r, f)| -> Result<Vec<Vec<f64>>> {
            let side = sides[r];
            let fitted = fit_method(
                method,
                &fibers[f],
                (side, side),
                train_sampler,
                settings,
                sub_seed(cfg.seed, &[0, r as u64, f as u64]),
            )?;
            cfg.n_lambdas
                .iter()
                .enumerate()
                .map(|(k, &n)| {
                    let test = test_samples(
                        &fibers[f],
                        (side, side),
                        SpectrumSampler::sparse(n),
                        Perturbation::NONE,
                        cfg.n_spectra_per_fiber,
                        sub_seed(cfg.seed, &[1, f as u64, k as u64]),
                    )?;
                    fitted.correlations(&test)
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut cells = Vec::new();
    for (r, &side) in sides.iter().enumerate() {
        for (k, &n) in cfg.n_lambdas.iter().enumerate() {
            let pooled: Vec<f64> = jobs
                .iter()
                .zip(&per_job)
                .filter(|((jr, _), _)| *jr == r)
                .flat_map(|(_, c)| c[k].iter().copied())
                .collect();
            let mut m = settings.to_manifest();
            m.set("method", method)
                .set("roi", format!("{side}x{side}"))
                .set("n_lambda", n)
                .set("fibers", fibers.len())
                .set("seed", cfg.seed)
                .set("train_sampler", train_sampler);
            cells.push(SweepCell {
                ratio: ratio_of(side, y),
                side,
                n_lambda: n,
                report: EvalReport::new(pooled, m)?,
            });
        }
    }
    Ok(SweepResult { method, cells })
}

/// Spectrum class of the comparison histograms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumClass {
    /// Fewer than half the channels lit.
    Sparse,
    /// Every channel non-zero.
    Dense,
}

impl SpectrumClass {
    pub fn name(self) -> &'static str {
        match self {
            SpectrumClass::Sparse => "sparse",
            SpectrumClass::Dense => "dense",
        }
    }

    pub fn sampler(self, channels: usize) -> SpectrumSampler {
        match self {
            SpectrumClass::Sparse => SpectrumSampler::below_half(channels),
            SpectrumClass::Dense => SpectrumSampler::dense(DEFAULT_WALK_STEP),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareConfig {
    /// Square ROI sides, one per sampling regime.
    pub sides: Vec<usize>,
    pub classes: Vec<SpectrumClass>,
    pub n_per_class: usize,
    pub bins: usize,
    pub seed: u64,
}

impl CompareConfig {
    /// Undersampled 5x5 and oversampled 20x20, 1000 spectra per class.
    pub fn desk(seed: u64) -> Self {
        Self {
            sides: vec![5, 20],
            classes: vec![SpectrumClass::Sparse, SpectrumClass::Dense],
            n_per_class: 1000,
            bins: 20,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareCell {
    pub method: MethodKind,
    pub side: usize,
    pub ratio: f64,
    pub class: SpectrumClass,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareResult {
    pub cells: Vec<CompareCell>,
    pub bins: usize,
}

impl CompareResult {
    pub fn get(
        &self,
        method: MethodKind,
        side: usize,
        class: SpectrumClass,
    ) -> Option<&EvalReport> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.side == side && c.class == class)
            .map(|c| &c.report)
    }

    pub fn summary(&self) -> Table {
        let mut t = Table::new(&[
            "method",
            "ratio",
            "roi",
            "class",
            "mean",
            "std",
            "n",
            "failure_fraction",
        ]);
        for c in &self.cells {
            t.push(vec![
                c.method.to_string(),
                format!("{:.2}", c.ratio),
                format!("{0}x{0}", c.side),
                c.class.name().into(),
                num(c.report.mean),
                num(c.report.std),
                c.report.count().to_string(),
                num(c.report.failure_fraction),
            ]);
        }
        t
    }

    /// One row per (cell, bin) with the bin's lower and upper edges.
    pub fn histogram(&self) -> Table {
        let mut t = Table::new(&["method", "ratio", "class", "bin_lo", "bin_hi", "count"]);
        let w = 2.0 / self.bins as f64;
        for c in &self.cells {
            for (b, n) in c.report.histogram(self.bins).into_iter().enumerate() {
                t.push(vec![
                    c.method.to_string(),
                    format!("{:.2}", c.ratio),
                    c.class.name().into(),
                    num(-1.0 + b as f64 * w),
                    num(-1.0 + (b + 1) as f64 * w),
                    n.to_string(),
                ]);
            }
        }
        t
    }
}

/// Histograms of correlation per method, sampling regime and spectrum
/// class. Each method is tuned or trained on the class it is tested on.
pub fn compare_methods(
    fiber: &TransmissionMatrix,
    methods: &[MethodKind],
    cfg: &CompareConfig,
    settings: &MethodSettings,
) -> Result<CompareResult> {
    let y = fiber.channels();
    if methods.is_empty() || cfg.sides.is_empty() || cfg.classes.is_empty() {
        return Err(Error::invalid(
            "comparison needs at least one method, regime and class",
        ));
    }
    if cfg.n_per_class == 0 || cfg.bins == 0 {
        return Err(Error::invalid("n_per_class and bins must be >= 1"));
    }
    let mut jobs = Vec::new();
    for (si, &side) in cfg.sides.iter().enumerate() {
        for (ci, &class) in cfg.classes.iter().enumerate() {
            for &m in methods {
                jobs.push((si, side, ci, class, m));
            }
        }
    }
    let cells = jobs
        .par_iter()
        .map(|&(si, side, ci, class, method)| -> Result<CompareCell> {
            let roi = (side, side);
            let sampler = class.sampler(y);
            let fitted = fit_method(
                method,
                fiber,
                roi,
                sampler,
                settings,
                sub_seed(cfg.seed, &[0, si as u64, ci as u64]),
            )?;
            let test = test_samples(
                fiber,
                roi,
                sampler,
                Perturbation::NONE,
                cfg.n_per_class,
                sub_seed(cfg.seed, &[1, si as u64, ci as u64]),
            )?;
            let mut m = settings.to_manifest();
            m.set("method", method)
                .set("roi", format!("{side}x{side}"))
                .set("class", class.name())
                .set("seed", cfg.seed)
                .set("fitted", fitted.describe());
            Ok(CompareCell {
                method,
                side,
                ratio: ratio_of(side, y),
                class,
                report: fitted.evaluate(&test, m)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CompareResult {
        cells,
        bins: cfg.bins,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessConfig {
    pub sides: Vec<usize>,
    /// Test-image noise levels (fraction of the mean intensity).
    pub noise_levels: Vec<f64>,
    pub n_lambdas: Vec<usize>,
    pub n_per_cell: usize,
    /// Run the one-pixel-shift comparison as well.
    pub shift_test: bool,
    /// Spectra for the shift comparison.
    pub shift_sampler: SpectrumSampler,
    /// Spectra every method is tuned or trained on.
    pub train_sampler: SpectrumSampler,
    pub seed: u64,
}

impl RobustnessConfig {
    pub fn desk(seed: u64) -> Self {
        Self {
            sides: vec![5],
            noise_levels: vec![0.0, 0.05, 0.1, 0.25],
            n_lambdas: vec![1, 5, 10, 15, 20, 30, 43],
            n_per_cell: 200,
            shift_test: true,
            shift_sampler: SpectrumSampler::dense(DEFAULT_WALK_STEP),
            train_sampler: SpectrumSampler::sparse_range(1, crate::domain::DEFAULT_CHANNELS),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessCell {
    pub method: MethodKind,
    pub side: usize,
    pub noise: f64,
    pub n_lambda: usize,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftCell {
    pub method: MethodKind,
    pub side: usize,
    pub shifted: bool,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessResult {
    pub cells: Vec<RobustnessCell>,
    pub shift: Vec<ShiftCell>,
    pub channels: usize,
}

impl RobustnessResult {
    pub fn get(
        &self,
        method: MethodKind,
        side: usize,
        noise: f64,
        n_lambda: usize,
    ) -> Option<&EvalReport> {
        self.cells
            .iter()
            .find(|c| {
                c.method == method && c.side == side && c.noise == noise && c.n_lambda == n_lambda
            })
            .map(|c| &c.report)
    }

    pub fn get_shift(&self, method: MethodKind, side: usize, shifted: bool) -> Option<&EvalReport> {
        self.shift
            .iter()
            .find(|c| c.method == method && c.side == side && c.shifted == shifted)
            .map(|c| &c.report)
    }

    pub fn grid(&self) -> Table {
        let mut t = Table::new(&[
            "method",
            "ratio",
            "noise",
            "n_lambda",
            "mean",
            "std",
            "n",
            "failure_fraction",
        ]);
        for c in &self.cells {
            t.push(vec![
                c.method.to_string(),
                format!("{:.2}", ratio_of(c.side, self.channels)),
                num(c.noise),
                c.n_lambda.to_string(),
                num(c.report.mean),
                num(c.report.std),
                c.report.count().to_string(),
                num(c.report.failure_fraction),
            ]);
        }
        t
    }

    /// DL+N mean over CS mean per cell, where both were run.
    pub fn ratio_map(&self) -> Table {
        let mut t = Table::new(&["ratio", "noise", "n_lambda", "dl_n_over_cs"]);
        for c in self
            .cells
            .iter()
            .filter(|c| c.method == MethodKind::DlNoise)
        {
            if let Some(cs) = self.get(MethodKind::Cs, c.side, c.noise, c.n_lambda) {
                t.push(vec![
                    format!("{:.2}", ratio_of(c.side, self.channels)),
                    num(c.noise),
                    c.n_lambda.to_string(),
                    num(c.report.mean / cs.mean),
                ]);
            }
        }
        t
    }

    pub fn shift_table(&self) -> Table {
        let mut t = Table::new(&["method", "ratio", "test", "mean", "std", "n"]);
        for c in &self.shift {
            t.push(vec![
                c.method.to_string(),
                format!("{:.2}", ratio_of(c.side, self.channels)),
                if c.shifted { "shifted" } else { "unshifted" }.into(),
                num(c.report.mean),
                num(c.report.std),
                c.report.count().to_string(),
            ]);
        }
        t
    }
}

/// Correlation of every method over noise level x N_lambda x ratio, plus the
/// one-pixel-shift comparison. Methods are fitted once per ratio; the DL
/// variants see their perturbation at training time only.
pub fn robustness_map(
    fiber: &TransmissionMatrix,
    methods: &[MethodKind],
    cfg: &RobustnessConfig,
    settings: &MethodSettings,
) -> Result<RobustnessResult> {
    let y = fiber.channels();
    if methods.is_empty() || cfg.sides.is_empty() || cfg.n_per_cell == 0 {
        return Err(Error::invalid(
            "robustness map needs methods, ratios and a non-zero cell size",
        ));
    }
    if cfg.noise_levels.iter().any(|&p| p > 0.0) && !methods.contains(&MethodKind::DlNoise) {
        return Err(Error::invalid(
            "missing trained variant: noisy test levels need dl+n",
        ));
    }
    if cfg.shift_test && !methods.contains(&MethodKind::DlShift) {
        return Err(Error::invalid(
            "missing trained variant: the shift test needs dl+s",
        ));
    }
    for &n in &cfg.n_lambdas {
        SpectrumSampler::sparse(n).validate(y)?;
    }
    for &p in &cfg.noise_levels {
        Perturbation::noise(p).validate()?;
    }

    let fit_jobs: Vec<(usize, MethodKind)> = (0..cfg.sides.len())
        .flat_map(|s| methods.iter().map(move |&m| (s, m)))
        .collect();
    let fitted: Vec<FittedMethod> = fit_jobs
        .par_iter()
        .map(|&(s, m)| {
            let side = cfg.sides[s];
            fit_method(
                m,
                fiber,
                (side, side),
                cfg.train_sampler,
                settings,
                sub_seed(cfg.seed, &[0, s as u64]),
            )
        })
        .collect::<Result<_>>()?;
    let model = |s: usize, m: MethodKind| {
        &fitted[fit_jobs
            .iter()
            .position(|&j| j == (s, m))
            .expect("every (ratio, method) pair was fitted")]
    };

    let mut eval_jobs = Vec::new();
    for s in 0..cfg.sides.len() {
        for (ni, &noise) in cfg.noise_levels.iter().enumerate() {
            for (ki, &n) in cfg.n_lambdas.iter().enumerate() {
                for &m in methods {
                    eval_jobs.push((s, ni, noise, ki, n, m));
                }
            }
        }
    }
    let cells = eval_jobs
        .par_iter()
        .map(|&(s, _ni, noise, ki, n, m)| -> Result<RobustnessCell> {
            let side = cfg.sides[s];
            // Spectra depend on (ratio, N_lambda) only, so every noise level
            // and method sees the same ones.
            let test = test_samples(
                fiber,
                (side, side),
                SpectrumSampler::sparse(n),
                Perturbation::noise(noise),
                cfg.n_per_cell,
                sub_seed(cfg.seed, &[1, s as u64, ki as u64]),
            )?;
            let mut man = settings.to_manifest();
            man.set("method", m)
                .set("roi", format!("{side}x{side}"))
                .set("noise", noise)
                .set("n_lambda", n)
                .set("seed", cfg.seed);
            Ok(RobustnessCell {
                method: m,
                side,
                noise,
                n_lambda: n,
                report: model(s, m).evaluate(&test, man)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut shift = Vec::new();
    if cfg.shift_test {
        let shift_jobs: Vec<(usize, bool, MethodKind)> = (0..cfg.sides.len())
            .flat_map(|s| {
                [false, true]
                    .into_iter()
                    .flat_map(move |b| methods.iter().map(move |&m| (s, b, m)))
            })
            .collect();
        shift = shift_jobs
            .par_iter()
            .map(|&(s, shifted, m)| -> Result<ShiftCell> {
                let side = cfg.sides[s];
                let p = if shifted {
                    Perturbation::shift()
                } else {
                    Perturbation::NONE
                };
                let test = test_samples(
                    fiber,
                    (side, side),
                    cfg.shift_sampler,
                    p,
                    cfg.n_per_cell,
                    sub_seed(cfg.seed, &[2, s as u64]),
                )?;
                let mut man = settings.to_manifest();
                man.set("method", m)
                    .set("roi", format!("{side}x{side}"))
                    .set("shifted", shifted)
                    .set("sampler", cfg.shift_sampler)
                    .set("seed", cfg.seed);
                Ok(ShiftCell {
                    method: m,
                    side,
                    shifted,
                    report: model(s, m).evaluate(&test, man)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
    }
    Ok(RobustnessResult {
        cells,
        shift,
        channels: y,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::Manifest;
    use crate::specklegen::{generate_fiber, FiberModel};

    #[test]
    fn desk_ratios_are_realizable() {
        let sides: Vec<usize> = [0.21, 0.58, 0.84, 1.14, 9.30]
            .iter()
            .map(|&r| realize_ratio(r, 43, (24, 24)).unwrap())
            .collect();
        assert_eq!(sides, vec![3, 5, 6, 7, 20]);
    }

    #[test]
    fn unrealizable_ratios() {
        assert!(realize_ratio(0.5, 43, (24, 24)).is_err());
        assert!(realize_ratio(9.30, 43, (12, 12)).is_err());
        assert!(realize_ratio(0.0, 43, (24, 24)).is_err());
    }

    #[test]
    fn sub_seeds_differ() {
        let a = sub_seed(7, &[0, 1, 2]);
        assert_eq!(a, sub_seed(7, &[0, 1, 2]));
        assert_ne!(a, sub_seed(7, &[0, 2, 1]));
        assert_ne!(a, sub_seed(8, &[0, 1, 2]));
    }

    fn fibers(n: usize) -> Vec<TransmissionMatrix> {
        (0..n)
            .map(|i| {
                generate_fiber(&FiberModel::default().with_seed(i as u64 + 1), (12, 12), 43)
                    .unwrap()
            })
            .collect()
    }

    #[test]
    fn tr_sweep_table_shape_and_determinism() {
        let f = fibers(2);
        let cfg = SweepConfig {
            ratios: vec![0.58, 1.14],
            n_lambdas: vec![1, 10],
            n_spectra_per_fiber: 20,
            train_sampler: None,
            seed: 3,
        };
        let s = MethodSettings::default();
        let a = sweep_sampling(&f, MethodKind::Tr, &cfg, &s).unwrap();
        assert_eq!(a.cells.len(), 4);
        assert!(a.cells.iter().all(|c| c.report.count() == 40));
        assert_eq!(a.table().len(), 4);
        let b = sweep_sampling(&f, MethodKind::Tr, &cfg, &s).unwrap();
        assert_eq!(a, b);
        // More pixels help the linear inversion.
        assert!(a.cell(7, 10).unwrap().report.mean > a.cell(5, 10).unwrap().report.mean);
    }

    #[test]
    fn sweep_rejects_bad_ratio() {
        let cfg = SweepConfig {
            ratios: vec![0.5],
            ..SweepConfig::desk(1)
        };
        assert!(
            sweep_sampling(&fibers(1), MethodKind::Tr, &cfg, &MethodSettings::default()).is_err()
        );
    }

    #[test]
    fn monotonicity_helper() {
        let mk = |n, mean, std| SweepCell {
            ratio: 0.58,
            side: 5,
            n_lambda: n,
            report: EvalReport {
                correlations: vec![mean],
                mean,
                std,
                failure_fraction: 0.0,
                settings: Manifest::new(),
            },
        };
        let mut r = SweepResult {
            method: MethodKind::Dl,
            cells: vec![mk(1, 0.9, 0.05), mk(5, 0.94, 0.05), mk(10, 0.7, 0.1)],
        };
        assert!(r.non_increasing_within_std(5));
        r.cells[1].report.mean = 0.96;
        assert!(!r.non_increasing_within_std(5));
    }

    #[test]
    fn robustness_requires_variants() {
        let f = &fibers(1)[0];
        let cfg = RobustnessConfig {
            n_per_cell: 5,
            ..RobustnessConfig::desk(1)
        };
        let s = MethodSettings::default();
        assert!(robustness_map(f, &[MethodKind::Tr, MethodKind::DlShift], &cfg, &s).is_err());
        let no_shift = RobustnessConfig {
            shift_test: true,
            noise_levels: vec![0.0],
            ..cfg
        };
        assert!(robustness_map(f, &[MethodKind::Tr], &no_shift, &s).is_err());
    }

    #[test]
    fn linear_methods_over_noise_and_shift() {
        let f = &fibers(1)[0];
        let cfg = RobustnessConfig {
            sides: vec![7],
            noise_levels: vec![0.0],
            n_lambdas: vec![2, 20],
            n_per_cell: 30,
            shift_test: false,
            ..RobustnessConfig::desk(5)
        };
        let r = robustness_map(
            f,
            &[MethodKind::Tr, MethodKind::Cs],
            &cfg,
            &MethodSettings::default(),
        )
        .unwrap();
        assert_eq!(r.cells.len(), 4);
        assert_eq!(r.grid().len(), 4);
        assert!(r.ratio_map().is_empty());
        assert!(r.get(MethodKind::Cs, 7, 0.0, 2).unwrap().mean > 0.9);
    }
}
