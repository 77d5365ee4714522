//! Real-time multi-fiber reconstruction harness.
//!
//! A frame source produces full-array camera frames; every frame is cropped
//! into per-fiber ROIs, reconstructed fiber by fiber on a worker pool and
//! assembled into a hyperspectral raster with one spectrum per grid cell.
//! Each stage is timed as a wall-clock phase, so stage times add up to no
//! more than the frame total.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::domain::{crop_roi, SpeckleImage, Spectrum};
use crate::error::{Error, Result};
use crate::nn::{MultiFiberReconstructor, NnScratch, Scalar};
use crate::recon::Reconstructor;
use crate::rng::SpeckleRng;
use crate::specklegen::FiberArrayModel;
use crate::synth::SpectrumSampler;

/// One camera frame of the whole fiber array.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePacket {
    pub frame: SpeckleImage,
    /// Nominal capture time since the start of the stream.
    pub timestamp: Duration,
    pub sequence: u64,
}

/// Anything that yields frames: a synthetic renderer now, a camera later.
pub trait FrameSource {
    fn next_frame(&mut self) -> Result<Option<FramePacket>>;
}

/// Reconstructed spectra on the fiber grid, one per cell, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperspectralFrame {
    pub sequence: u64,
    pub grid: (usize, usize),
    pub channels: usize,
    /// `grid.0 * grid.1 * channels` values; cell `p` holds fiber `p`, and
    /// cells without a fiber stay zero.
    pub data: Vec<f64>,
}

impl HyperspectralFrame {
    fn zeros(sequence: u64, grid: (usize, usize), channels: usize) -> Self {
        Self {
            sequence,
            grid,
            channels,
            data: vec![0.0; grid.0 * grid.1 * channels],
        }
    }

    pub fn spectrum(&self, fiber: usize) -> &[f64] {
        &self.data[fiber * self.channels..(fiber + 1) * self.channels]
    }

    pub fn get(&self, fiber: usize, channel: usize) -> f64 {
        self.data[fiber * self.channels + channel]
    }

    /// Channel `j` as a `grid`-shaped image.
    pub fn channel_image(&self, j: usize) -> Result<SpeckleImage> {
        let plane = self
            .data
            .chunks(self.channels)
            .map(|s| s[j].max(0.0))
            .collect();
        SpeckleImage::new(self.grid.0, self.grid.1, plane)
    }

    /// Channel with the largest value at `fiber`; the lowest index wins ties.
    pub fn dominant_channel(&self, fiber: usize) -> usize {
        let s = self.spectrum(fiber);
        (0..s.len()).fold(0, |b, j| if s[j] > s[b] { j } else { b })
    }

    /// Sum over fibers of each channel.
    pub fn channel_totals(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.channels];
        for s in self.data.chunks(self.channels) {
            for (a, v) in t.iter_mut().zip(s) {
                *a += v;
            }
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FrameTiming {
    pub sequence: u64,
    /// Frame synthesis or capture.
    pub acquire: Duration,
    /// ROI cropping.
    pub preprocess: Duration,
    pub inference: Duration,
    /// Writing spectra into the raster.
    pub assemble: Duration,
    pub total: Duration,
}

impl FrameTiming {
    pub fn stage_sum(&self) -> Duration {
        self.acquire + self.preprocess + self.inference + self.assemble
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimingProfile {
    pub fibers: usize,
    pub workers: usize,
    pub frames: Vec<FrameTiming>,
}

impl TimingProfile {
    fn sum(&self, f: impl Fn(&FrameTiming) -> Duration) -> Duration {
        self.frames.iter().map(f).sum()
    }

    pub fn acquire(&self) -> Duration {
        self.sum(|t| t.acquire)
    }

    pub fn preprocess(&self) -> Duration {
        self.sum(|t| t.preprocess)
    }

    pub fn inference(&self) -> Duration {
        self.sum(|t| t.inference)
    }

    pub fn assemble(&self) -> Duration {
        self.sum(|t| t.assemble)
    }

    pub fn total(&self) -> Duration {
        self.sum(|t| t.total)
    }

    /// Mean wall time of one frame's reconstruction (preprocess, inference
    /// and assembly; acquisition excluded).
    pub fn mean_reconstruction_per_frame(&self) -> Duration {
        if self.frames.is_empty() {
            return Duration::ZERO;
        }
        (self.preprocess() + self.inference() + self.assemble()) / self.frames.len() as u32
    }

    /// Inference wall time per fiber per frame.
    pub fn inference_per_fiber(&self) -> Duration {
        let n = self.frames.len() * self.fibers;
        if n == 0 {
            return Duration::ZERO;
        }
        Duration::from_secs_f64(self.inference().as_secs_f64() / n as f64)
    }

    /// Fibers reconstructed per second of total wall time.
    pub fn fibers_per_second(&self) -> f64 {
        let t = self.total().as_secs_f64();
        if t == 0.0 {
            return f64::INFINITY;
        }
        (self.frames.len() * self.fibers) as f64 / t
    }

    /// One row per frame, durations in milliseconds.
    pub fn to_csv(&self) -> String {
        let ms = |d: Duration| format!("{:.6}", d.as_secs_f64() * 1e3);
        let mut out =
            String::from("sequence,acquire_ms,preprocess_ms,inference_ms,assemble_ms,total_ms\n");
        for t in &self.frames {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                t.sequence,
                ms(t.acquire),
                ms(t.preprocess),
                ms(t.inference),
                ms(t.assemble),
                ms(t.total)
            ));
        }
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "frames={} fibers={} workers={} acquire={:?} preprocess={:?} inference={:?} \
             assemble={:?} total={:?} inference_per_fiber={:?} fibers_per_second={:.1}",
            self.frames.len(),
            self.fibers,
            self.workers,
            self.acquire(),
            self.preprocess(),
            self.inference(),
            self.assemble(),
            self.total(),
            self.inference_per_fiber(),
            self.fibers_per_second()
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamOutput {
    pub frames: Vec<HyperspectralFrame>,
    pub timing: TimingProfile,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    if workers == 0 {
        return Err(Error::invalid("workers must be >= 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start {workers} workers: {e}")))
}

fn roi_origins(array: &FiberArrayModel, roi: (usize, usize)) -> Result<Vec<(usize, usize)>> {
    (0..array.len())
        .map(|i| array.roi_origin_in_frame(i, roi))
        .collect()
}

fn check_frame(array: &FiberArrayModel, packet: &FramePacket) -> Result<()> {
    if packet.frame.shape() != array.frame_shape() {
        let (h, w) = array.frame_shape();
        return Err(Error::DimensionMismatch {
            context: "frame pixels vs array layout",
            expected: h * w,
            actual: packet.frame.len(),
        });
    }
    Ok(())
}

/// Streams `n_frames` frames from `source` through one reconstructor per
/// fiber on `workers` threads. The output does not depend on `workers`.
pub fn run_stream<R: Reconstructor>(
    array: &FiberArrayModel,
    reconstructors: &[R],
    source: &mut dyn FrameSource,
    n_frames: usize,
    workers: usize,
) -> Result<StreamOutput> {
    if reconstructors.len() != array.len() {
        return Err(Error::DimensionMismatch {
            context: "reconstructors vs fibers",
            expected: array.len(),
            actual: reconstructors.len(),
        });
    }
    let roi = reconstructors[0].roi_shape();
    let y = array.channels();
    for (i, r) in reconstructors.iter().enumerate() {
        if r.roi_shape() != roi || r.channels() != y {
            return Err(Error::invalid(format!(
                "reconstructor {i} expects ROI {:?} / {} channels; fiber 0 has {roi:?} / {y}",
                r.roi_shape(),
                r.channels()
            )));
        }
    }
    let origins = roi_origins(array, roi)?;
    let pool = pool(workers)?;
    let mut frames = Vec::with_capacity(n_frames);
    let mut timing = TimingProfile {
        fibers: array.len(),
        workers,
        frames: Vec::with_capacity(n_frames),
    };

    for _ in 0..n_frames {
        let t0 = Instant::now();
        let Some(packet) = source.next_frame()? else {
            break;
        };
        check_frame(array, &packet)?;
        let t1 = Instant::now();
        let crops = pool.install(|| {
            origins
                .par_iter()
                .map(|&o| crop_roi(&packet.frame, o, roi))
                .collect::<Result<Vec<_>>>()
        })?;
        let t2 = Instant::now();
        let spectra = pool.install(|| {
            reconstructors
                .par_iter()
                .zip(crops.par_iter())
                .map_init(R::Scratch::default, |s, (r, img)| {
                    r.reconstruct_with(img, s)
                })
                .collect::<Result<Vec<Spectrum>>>()
        })?;
        let t3 = Instant::now();
        let mut out = HyperspectralFrame::zeros(packet.sequence, array.grid_layout(), y);
        for (i, s) in spectra.iter().enumerate() {
            out.data[i * y..(i + 1) * y].copy_from_slice(s.values());
        }
        let t4 = Instant::now();
        frames.push(out);
        timing.frames.push(FrameTiming {
            sequence: packet.sequence,
            acquire: t1 - t0,
            preprocess: t2 - t1,
            inference: t3 - t2,
            assemble: t4 - t3,
            total: t0.elapsed(),
        });
    }
    Ok(StreamOutput { frames, timing })
}

/// As [`run_stream`], with consecutive groups of `nets[0].fibers()` fibers
/// sharing one multi-fiber network.
pub fn run_multifiber_stream<T: Scalar>(
    array: &FiberArrayModel,
    nets: &[MultiFiberReconstructor<T>],
    source: &mut dyn FrameSource,
    n_frames: usize,
    workers: usize,
) -> Result<StreamOutput> {
    let first = nets
        .first()
        .ok_or_else(|| Error::invalid("at least one multi-fiber network is required"))?;
    let group = first.fibers();
    let roi = first.roi_shape();
    let y = array.channels();
    if nets
        .iter()
        .any(|n| n.fibers() != group || n.roi_shape() != roi || n.channels() != y)
    {
        return Err(Error::invalid(
            "multi-fiber networks must share group size, ROI and channel count",
        ));
    }
    if nets.len() * group != array.len() {
        return Err(Error::invalid(format!(
            "partition mismatch: {} networks of {group} fibers cannot cover {} fibers",
            nets.len(),
            array.len()
        )));
    }
    let origins = roi_origins(array, roi)?;
    let pool = pool(workers)?;
    let mut frames = Vec::with_capacity(n_frames);
    let mut timing = TimingProfile {
        fibers: array.len(),
        workers,
        frames: Vec::with_capacity(n_frames),
    };

    for _ in 0..n_frames {
        let t0 = Instant::now();
        let Some(packet) = source.next_frame()? else {
            break;
        };
        check_frame(array, &packet)?;
        let t1 = Instant::now();
        let crops = pool.install(|| {
            origins
                .par_iter()
                .map(|&o| crop_roi(&packet.frame, o, roi))
                .collect::<Result<Vec<_>>>()
        })?;
        let t2 = Instant::now();
        let groups = pool.install(|| {
            nets.par_iter()
                .zip(crops.par_chunks(group))
                .map_init(NnScratch::<T>::default, |s, (net, imgs)| {
                    let refs: Vec<&SpeckleImage> = imgs.iter().collect();
                    let mut out = vec![0.0; group * y];
                    net.reconstruct_group(&refs, s, &mut out)?;
                    Ok(out)
                })
                .collect::<Result<Vec<Vec<f64>>>>()
        })?;
        let t3 = Instant::now();
        let mut out = HyperspectralFrame::zeros(packet.sequence, array.grid_layout(), y);
        for (g, vals) in groups.iter().enumerate() {
            let at = g * group * y;
            out.data[at..at + vals.len()].copy_from_slice(vals);
        }
        let t4 = Instant::now();
        frames.push(out);
        timing.frames.push(FrameTiming {
            sequence: packet.sequence,
            acquire: t1 - t0,
            preprocess: t2 - t1,
            inference: t3 - t2,
            assemble: t4 - t3,
            total: t0.elapsed(),
        });
    }
    Ok(StreamOutput { frames, timing })
}

/// Frames replayed from memory; acquisition then costs only a clone.
#[derive(Debug, Clone)]
pub struct ReplaySource {
    packets: Vec<FramePacket>,
    next: usize,
}

impl ReplaySource {
    pub fn new(packets: Vec<FramePacket>) -> Self {
        Self { packets, next: 0 }
    }
}

impl FrameSource for ReplaySource {
    fn next_frame(&mut self) -> Result<Option<FramePacket>> {
        let p = self.packets.get(self.next).cloned();
        self.next += 1;
        Ok(p)
    }
}

/// Renders frames where every fiber carries an independent random spectrum.
pub struct RandomSpectraSource<'a> {
    array: &'a FiberArrayModel,
    sampler: SpectrumSampler,
    rng: SpeckleRng,
    period: Duration,
    sequence: u64,
    /// Spectra of the most recent frame, fiber by fiber.
    pub last_spectra: Vec<Spectrum>,
}

impl<'a> RandomSpectraSource<'a> {
    pub fn new(array: &'a FiberArrayModel, sampler: SpectrumSampler, seed: u64) -> Self {
        Self {
            array,
            sampler,
            rng: SpeckleRng::new(seed),
            period: DEFAULT_FRAME_PERIOD,
            sequence: 0,
            last_spectra: Vec::new(),
        }
    }
}

impl FrameSource for RandomSpectraSource<'_> {
    fn next_frame(&mut self) -> Result<Option<FramePacket>> {
        let y = self.array.channels();
        self.last_spectra = (0..self.array.len())
            .map(|_| self.sampler.sample(&mut self.rng, y))
            .collect::<Result<_>>()?;
        let frame = self.array.render_frame(&self.last_spectra)?;
        let p = FramePacket {
            frame,
            timestamp: self.period * self.sequence as u32,
            sequence: self.sequence,
        };
        self.sequence += 1;
        Ok(Some(p))
    }
}

/// Nominal spacing of synthetic frames.
pub const DEFAULT_FRAME_PERIOD: Duration = Duration::from_millis(350);

/// Inclusive frame range lit by a fixed combination of channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptSegment {
    pub start: usize,
    pub end: usize,
    /// `(channel, weight)` pairs.
    pub lines: Vec<(usize, f64)>,
}

/// Illumination schedule for a stream. Consecutive segments either abut or
/// share exactly one frame; a shared frame is a mid-exposure switch and sees
/// both spectra at half weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchScript {
    segments: Vec<ScriptSegment>,
}

impl SwitchScript {
    pub fn new(segments: Vec<ScriptSegment>) -> Result<Self> {
        let first = segments
            .first()
            .ok_or_else(|| Error::invalid("script has no segments"))?;
        if first.start != 0 {
            return Err(Error::invalid(format!(
                "script must start at frame 0 (starts at {})",
                first.start
            )));
        }
        for (i, s) in segments.iter().enumerate() {
            if s.end < s.start {
                return Err(Error::invalid(format!(
                    "script segment {i}: end {} before start {}",
                    s.end, s.start
                )));
            }
            if s.lines.is_empty() {
                return Err(Error::invalid(format!(
                    "script segment {i} lights no channel"
                )));
            }
            if let Some((c, w)) = s.lines.iter().find(|(_, w)| !(*w >= 0.0 && w.is_finite())) {
                return Err(Error::invalid(format!(
                    "script segment {i}: channel {c} has weight {w}"
                )));
            }
        }
        for (i, pair) in segments.windows(2).enumerate() {
            let (a, b) = (&pair[0], &pair[1]);
            if b.start > a.end + 1 {
                return Err(Error::invalid(format!(
                    "gap in script: frames {}..{} are not covered",
                    a.end + 1,
                    b.start - 1
                )));
            }
            if b.start + 1 < a.end + 1 || b.start < a.end {
                return Err(Error::invalid(format!(
                    "script segments {i} and {} overlap by more than one frame",
                    i + 1
                )));
            }
            if b.start == a.end && (a.start == a.end || b.start == b.end) {
                return Err(Error::invalid(format!(
                    "script segments {i} and {}: a switch frame needs both neighbors to last longer",
                    i + 1
                )));
            }
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[ScriptSegment] {
        &self.segments
    }

    /// Number of frames the script covers.
    pub fn len(&self) -> usize {
        self.segments.last().map_or(0, |s| s.end + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn segment_spectrum(s: &ScriptSegment, y: usize) -> Result<Spectrum> {
        let mut v = vec![0.0; y];
        for &(c, w) in &s.lines {
            if c >= y {
                return Err(Error::invalid(format!(
                    "script channel {c} out of range for {y} channels"
                )));
            }
            v[c] += w;
        }
        Spectrum::new(v)
    }

    /// Illumination of frame `k`.
    pub fn spectrum_at(&self, k: usize, y: usize) -> Result<Spectrum> {
        let hits: Vec<&ScriptSegment> = self
            .segments
            .iter()
            .filter(|s| s.start <= k && k <= s.end)
            .collect();
        match hits.as_slice() {
            [one] => Self::segment_spectrum(one, y),
            [a, b] => {
                Self::segment_spectrum(a, y)?.combine(0.5, &Self::segment_spectrum(b, y)?, 0.5)
            }
            _ => Err(Error::invalid(format!("frame {k} is outside the script"))),
        }
    }

    /// Frames where two segments meet.
    pub fn switch_frames(&self) -> Vec<usize> {
        self.segments
            .windows(2)
            .filter(|p| p[1].start == p[0].end)
            .map(|p| p[1].start)
            .collect()
    }
}

impl FromStr for SwitchScript {
    type Err = Error;

    /// Lines `start_frame end_frame channel[:weight],...`; `#` starts a comment.
    fn from_str(text: &str) -> Result<Self> {
        let mut segs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = || Error::invalid(format!("script line {}: cannot parse {line:?}", n + 1));
            let mut parts = line.split_whitespace();
            let start = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let end = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let lines = parts
                .next()
                .ok_or_else(bad)?
                .split(',')
                .map(|item| match item.split_once(':') {
                    Some((c, w)) => {
                        Ok((c.parse().map_err(|_| bad())?, w.parse().map_err(|_| bad())?))
                    }
                    None => Ok((item.parse().map_err(|_| bad())?, 1.0)),
                })
                .collect::<Result<Vec<(usize, f64)>>>()?;
            if parts.next().is_some() {
                return Err(bad());
            }
            segs.push(ScriptSegment { start, end, lines });
        }
        SwitchScript::new(segs)
    }
}

impl fmt::Display for SwitchScript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.segments {
            let lines: Vec<String> = s.lines.iter().map(|(c, w)| format!("{c}:{w}")).collect();
            writeln!(f, "{} {} {}", s.start, s.end, lines.join(","))?;
        }
        Ok(())
    }
}

/// Frame source lighting every fiber with the scripted spectrum.
pub struct ScriptedSource<'a> {
    array: &'a FiberArrayModel,
    script: &'a SwitchScript,
    next: usize,
}

impl<'a> ScriptedSource<'a> {
    pub fn new(array: &'a FiberArrayModel, script: &'a SwitchScript) -> Self {
        Self {
            array,
            script,
            next: 0,
        }
    }
}

impl FrameSource for ScriptedSource<'_> {
    fn next_frame(&mut self) -> Result<Option<FramePacket>> {
        if self.next >= self.script.len() {
            return Ok(None);
        }
        let s = self.script.spectrum_at(self.next, self.array.channels())?;
        let frame = self.array.render_frame(&vec![s; self.array.len()])?;
        let p = FramePacket {
            frame,
            timestamp: DEFAULT_FRAME_PERIOD * self.next as u32,
            sequence: self.next as u64,
        };
        self.next += 1;
        Ok(Some(p))
    }
}

/// Renders every frame of `script`.
pub fn simulate_wavelength_switch(
    array: &FiberArrayModel,
    script: &SwitchScript,
) -> Result<Vec<FramePacket>> {
    let mut src = ScriptedSource::new(array, script);
    let mut out = Vec::with_capacity(script.len());
    while let Some(p) = src.next_frame()? {
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recon_linear::{fit_tikhonov, LinearReconstructor};
    use crate::specklegen::{generate_array, FiberModel};

    fn array(n: usize) -> FiberArrayModel {
        generate_array(
            &mut SpeckleRng::new(5),
            n,
            &FiberModel::default(),
            (12, 12),
            43,
        )
        .unwrap()
    }

    fn tr_recons(a: &FiberArrayModel, side: usize) -> Vec<LinearReconstructor> {
        a.roi_matrices((side, side))
            .unwrap()
            .iter()
            .map(|m| fit_tikhonov(m, 1e-9).unwrap())
            .collect()
    }

    #[test]
    fn script_parsing_and_blending() {
        let s: SwitchScript = "# ramp\n0 4 3\n4 9 10:0.5,11\n".parse().unwrap();
        assert_eq!(s.len(), 10);
        assert_eq!(s.switch_frames(), vec![4]);
        let v = s.spectrum_at(4, 43).unwrap();
        assert_eq!(v.values()[3], 0.5);
        assert_eq!(v.values()[10], 0.25);
        assert_eq!(v.values()[11], 0.5);
        assert_eq!(s.spectrum_at(2, 43).unwrap(), Spectrum::delta(43, 3));
        assert!(s.spectrum_at(10, 43).is_err());
        let again: SwitchScript = s.to_string().parse().unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn script_errors() {
        assert!("1 4 3".parse::<SwitchScript>().is_err(), "must start at 0");
        assert!("0 4 3\n6 9 4".parse::<SwitchScript>().is_err(), "gap");
        assert!(
            "0 4 3\n3 9 4".parse::<SwitchScript>().is_err(),
            "overlap of two"
        );
        assert!("0 4 3\n5 2 4".parse::<SwitchScript>().is_err(), "reversed");
        assert!("0 4 x".parse::<SwitchScript>().is_err());
        assert!("0 4 3:-1".parse::<SwitchScript>().is_err());
        assert!("".parse::<SwitchScript>().is_err());
        let s: SwitchScript = "0 2 50".parse().unwrap();
        assert!(s.spectrum_at(0, 43).is_err());
    }

    #[test]
    fn raster_matches_per_fiber_reconstruction() {
        let a = array(5);
        let recons = tr_recons(&a, 6);
        let mut src = RandomSpectraSource::new(&a, SpectrumSampler::sparse(3), 1);
        let out = run_stream(&a, &recons, &mut src, 2, 1).unwrap();
        let truth = src.last_spectra.clone();
        let last = &out.frames[1];
        assert_eq!(last.grid, (2, 3));
        // The empty sixth cell stays dark.
        assert!(last.spectrum(5).iter().all(|v| *v == 0.0));
        let frame = a.render_frame(&truth).unwrap();
        for i in 0..5 {
            let crop = crop_roi(&frame, a.roi_origin_in_frame(i, (6, 6)).unwrap(), (6, 6)).unwrap();
            assert_eq!(
                last.spectrum(i),
                recons[i].reconstruct(&crop).unwrap().values()
            );
        }
        assert_eq!(out.timing.frames.len(), 2);
        for t in &out.timing.frames {
            assert!(t.stage_sum() <= t.total);
        }
        assert!(out.timing.to_csv().lines().count() == 3);
    }

    #[test]
    fn workers_do_not_change_output() {
        let a = array(9);
        let recons = tr_recons(&a, 6);
        let frames: Vec<FramePacket> = {
            let mut src = RandomSpectraSource::new(&a, SpectrumSampler::dense(0.2), 4);
            (0..3).map(|_| src.next_frame().unwrap().unwrap()).collect()
        };
        let one = run_stream(&a, &recons, &mut ReplaySource::new(frames.clone()), 3, 1).unwrap();
        let three = run_stream(&a, &recons, &mut ReplaySource::new(frames), 3, 3).unwrap();
        assert_eq!(one.frames, three.frames);
    }

    #[test]
    fn count_and_layout_errors() {
        let a = array(4);
        let mut recons = tr_recons(&a, 6);
        recons.pop();
        let mut src = RandomSpectraSource::new(&a, SpectrumSampler::sparse(1), 1);
        assert!(matches!(
            run_stream(&a, &recons, &mut src, 1, 1),
            Err(Error::DimensionMismatch { .. })
        ));
        let recons = tr_recons(&a, 6);
        assert!(run_stream(&a, &recons, &mut src, 1, 0).is_err());
        let wrong = FramePacket {
            frame: SpeckleImage::zeros(3, 3),
            timestamp: Duration::ZERO,
            sequence: 0,
        };
        assert!(run_stream(&a, &recons, &mut ReplaySource::new(vec![wrong]), 1, 1).is_err());
    }

    #[test]
    fn switch_frame_lights_two_channels() {
        let a = array(4);
        let recons = tr_recons(&a, 8);
        let script: SwitchScript = "0 3 7\n3 6 20".parse().unwrap();
        let packets = simulate_wavelength_switch(&a, &script).unwrap();
        assert_eq!(packets.len(), 7);
        let out = run_stream(&a, &recons, &mut ReplaySource::new(packets), 10, 1).unwrap();
        assert_eq!(out.frames.len(), 7);
        for f in &out.frames {
            let totals = f.channel_totals();
            let peak = totals.iter().cloned().fold(0.0, f64::max);
            let lit: Vec<usize> = (0..43).filter(|&j| totals[j] > 0.3 * peak).collect();
            match f.sequence {
                0..=2 => assert_eq!(lit, vec![7]),
                3 => assert_eq!(lit, vec![7, 20]),
                _ => assert_eq!(lit, vec![20]),
            }
        }
    }

    #[test]
    fn multifiber_partition_checked() {
        use crate::nn::{ArchConfig, Network, UpsampleHead};
        let a = array(4);
        let head = UpsampleHead {
            dense: 8,
            seed_channels: 2,
            ..Default::default()
        };
        let spec = ArchConfig::small()
            .with_input((5, 5))
            .multi_fiber(3, &head)
            .unwrap();
        let net = MultiFiberReconstructor::new(
            Network::<f32>::new(spec, &mut SpeckleRng::new(1)).unwrap(),
        )
        .unwrap();
        let mut src = RandomSpectraSource::new(&a, SpectrumSampler::sparse(1), 1);
        let err = run_multifiber_stream(&a, &[net], &mut src, 1, 1).unwrap_err();
        assert!(err.to_string().contains("partition mismatch"));
    }

    #[test]
    fn multifiber_groups_land_in_their_cells() {
        use crate::nn::{ArchConfig, Network, UpsampleHead};
        let a = array(4);
        let head = UpsampleHead {
            dense: 8,
            seed_channels: 2,
            ..Default::default()
        };
        let spec = ArchConfig::small()
            .with_input((5, 5))
            .multi_fiber(2, &head)
            .unwrap();
        let nets: Vec<_> = (0..2)
            .map(|s| {
                MultiFiberReconstructor::new(
                    Network::<f64>::new(spec.clone(), &mut SpeckleRng::new(s)).unwrap(),
                )
                .unwrap()
            })
            .collect();
        let mut src = RandomSpectraSource::new(&a, SpectrumSampler::sparse(2), 3);
        let packet = src.next_frame().unwrap().unwrap();
        let out = run_multifiber_stream(
            &a,
            &nets,
            &mut ReplaySource::new(vec![packet.clone()]),
            1,
            1,
        )
        .unwrap();
        let crops: Vec<SpeckleImage> = (0..4)
            .map(|i| {
                crop_roi(
                    &packet.frame,
                    a.roi_origin_in_frame(i, (5, 5)).unwrap(),
                    (5, 5),
                )
                .unwrap()
            })
            .collect();
        let mut want = vec![0.0; 86];
        nets[1]
            .reconstruct_group(
                &[&crops[2], &crops[3]],
                &mut NnScratch::default(),
                &mut want,
            )
            .unwrap();
        assert_eq!(out.frames[0].spectrum(2), &want[..43]);
        assert_eq!(out.frames[0].spectrum(3), &want[43..]);
    }

    #[test]
    fn replay_ends() {
        let mut r = ReplaySource::new(vec![]);
        assert!(r.next_frame().unwrap().is_none());
    }
}
