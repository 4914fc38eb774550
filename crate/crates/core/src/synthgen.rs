//! Synthetic series: sums of hourly-period sinusoids plus white noise, the
//! four piecewise presets S1-S4 and a 3-variate motif dataset.
//!
//! `x(t) = sum_k lambda_k sin(2 pi t / (60 k) + phi_k) + gamma + eps_t`, with
//! `t` in minutes and `eps_t ~ N(0, sigma^2)`. Noise is drawn from ChaCha8
//! seeded with `SynthSpec::seed`, one standard normal per sample in time order.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datastore::{GroundTruth, TimeSeriesDataset};
use crate::{Error, Result};

/// Admissible seasonalities in hours.
pub const SEASONALITIES: [u32; 9] = [1, 2, 3, 4, 6, 8, 12, 24, 168];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// `k -> lambda_k`.
    pub amplitudes: BTreeMap<u32, f64>,
    /// `k -> phi_k` in radians; missing entries are 0.
    #[serde(default)]
    pub phases: BTreeMap<u32, f64>,
    pub offset: f64,
    pub noise_std: f64,
    pub step_minutes: u64,
    pub length_minutes: u64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(length_minutes: u64) -> Self {
        Self {
            amplitudes: BTreeMap::new(),
            phases: BTreeMap::new(),
            offset: 0.0,
            noise_std: 0.0,
            step_minutes: 1,
            length_minutes,
            seed: 0,
        }
    }

    /// Builder form: `(k, lambda_k)` pairs, offset and noise std.
    pub fn components(amps: &[(u32, f64)], offset: f64, noise_std: f64) -> Self {
        let mut s = Self::new(0);
        s.amplitudes = amps.iter().copied().collect();
        s.offset = offset;
        s.noise_std = noise_std;
        s
    }

    pub fn seasonalities(&self) -> Vec<u32> {
        let mut ks: Vec<u32> = self.amplitudes.keys().chain(self.phases.keys()).copied().collect();
        ks.sort_unstable();
        ks.dedup();
        ks
    }

    fn check_components(&self) -> Result<()> {
        if let Some(k) = self.seasonalities().into_iter().find(|k| !SEASONALITIES.contains(k)) {
            return Err(Error::invalid(format!(
                "seasonality {k}h is not one of {SEASONALITIES:?}"
            )));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::invalid(format!(
                "noise std {} must be non-negative",
                self.noise_std
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check_components()?;
        if self.step_minutes == 0 || self.length_minutes == 0 {
            return Err(Error::invalid("step and length must be positive"));
        }
        if self.length_minutes % self.step_minutes != 0 {
            return Err(Error::invalid(format!(
                "length {} min is not a multiple of the {} min step",
                self.length_minutes, self.step_minutes
            )));
        }
        Ok(())
    }

    /// Noise-free value at minute `t`.
    pub fn deterministic(&self, t: f64) -> f64 {
        let mut v = self.offset;
        for (&k, &lam) in &self.amplitudes {
            let phi = self.phases.get(&k).copied().unwrap_or(0.0);
            v += lam * (2.0 * PI * t / (60.0 * k as f64) + phi).sin();
        }
        v
    }
}

/// Univariate series of `length_minutes / step_minutes` samples.
pub fn gen_sinusoidal(spec: &SynthSpec) -> Result<TimeSeriesDataset> {
    spec.validate()?;
    let n = (spec.length_minutes / spec.step_minutes) as usize;
    let mut rng = crate::seeded_rng(spec.seed);
    let values = (0..n)
        .map(|i| {
            let t = (i as u64 * spec.step_minutes) as f64;
            let e: f64 = StandardNormal.sample(&mut rng);
            spec.deterministic(t) + spec.noise_std * e
        })
        .collect();
    let mut ds = TimeSeriesDataset::univariate("synthetic", values)?;
    ds.step = format!("{}min", spec.step_minutes);
    ds.source = "synthgen:sinusoidal".to_string();
    Ok(ds)
}

/// Consecutive segments `(prev_end, end]` in minutes, each with its own
/// component spec, plus an optional linear trend.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseSpec {
    pub segments: Vec<(u64, SynthSpec)>,
    #[serde(default)]
    pub trend_slope: f64,
}

impl PiecewiseSpec {
    pub fn length_minutes(&self) -> u64 {
        self.segments.last().map_or(0, |s| s.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::invalid("piecewise spec has no segments"));
        }
        for w in self.segments.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::invalid(format!(
                    "segment ends must increase ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        for (_, s) in &self.segments {
            s.check_components()?;
        }
        Ok(())
    }

    fn segment_at(&self, t: u64) -> &SynthSpec {
        self.segments
            .iter()
            .find(|(end, _)| t <= *end)
            .map(|(_, s)| s)
            .unwrap_or(&self.segments.last().expect("validated").1)
    }

    /// Samples at minutes `0, step, 2 step, ...` below the total length.
    pub fn generate(&self, step_minutes: u64, seed: u64) -> Result<Vec<f64>> {
        self.validate()?;
        if step_minutes == 0 || self.length_minutes() % step_minutes != 0 {
            return Err(Error::invalid(format!(
                "length {} min is not a multiple of the {step_minutes} min step",
                self.length_minutes()
            )));
        }
        let n = (self.length_minutes() / step_minutes) as usize;
        let mut rng = crate::seeded_rng(seed);
        Ok((0..n)
            .map(|i| {
                let t = i as u64 * step_minutes;
                let s = self.segment_at(t);
                let e: f64 = StandardNormal.sample(&mut rng);
                self.trend_slope * t as f64 + s.deterministic(t as f64) + s.noise_std * e
            })
            .collect())
    }

    pub fn without_noise(&self) -> Self {
        let mut out = self.clone();
        for (_, s) in &mut out.segments {
            s.noise_std = 0.0;
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    S1,
    S2,
    S3,
    S4,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s1" => Ok(Preset::S1),
            "s2" => Ok(Preset::S2),
            "s3" => Ok(Preset::S3),
            "s4" => Ok(Preset::S4),
            other => Err(Error::invalid(format!(
                "unknown preset {other:?} (expected s1, s2, s3 or s4)"
            ))),
        }
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Preset::S1 => "s1",
            Preset::S2 => "s2",
            Preset::S3 => "s3",
            Preset::S4 => "s4",
        })
    }
}

const TWENTY_DAYS: u64 = 20 * 1440;

fn seg(amps: &[(u32, f64)], offset: f64, sigma: f64) -> SynthSpec {
    SynthSpec::components(amps, offset, sigma)
}

/// Component schedule of a preset, in minutes.
pub fn preset_spec(p: Preset) -> PiecewiseSpec {
    match p {
        Preset::S1 => PiecewiseSpec {
            segments: vec![
                (10800, seg(&[(2, 0.6), (4, 1.5), (12, 2.3), (24, 2.3), (168, 2.5)], 1.0, 2.0)),
                (20160, seg(&[(2, 1.5), (4, 1.5), (12, 2.3), (24, 2.3), (168, 1.5)], 1.0, 4.0)),
                (34560, seg(&[(2, 0.6), (4, 1.5), (12, 2.3), (24, 3.0), (168, 5.0)], 1.0, 2.0)),
                (40320, seg(&[(2, 0.6), (4, 0.5), (12, 4.3), (24, 1.0), (168, 2.0)], 1.0, 3.0)),
            ],
            trend_slope: 0.0,
        },
        Preset::S2 => {
            let base = seg(&[(3, 0.5), (6, 2.0), (24, 3.0), (168, 0.5)], 0.0, 2.0);
            let hit = seg(&[(2, 7.0), (6, 2.0), (24, 3.0), (168, 0.5)], 0.0, 2.0);
            PiecewiseSpec {
                segments: vec![
                    (5759, base.clone()),
                    (5880, hit.clone()),
                    (20039, base.clone()),
                    (20160, hit),
                    (TWENTY_DAYS, base),
                ],
                trend_slope: 0.0,
            }
        }
        Preset::S3 => PiecewiseSpec {
            segments: vec![(
                TWENTY_DAYS,
                seg(&[(6, 2.5), (8, 2.0), (12, 6.0), (24, 3.0), (168, 1.0)], -20.0, 6.0),
            )],
            trend_slope: 0.002,
        },
        Preset::S4 => PiecewiseSpec {
            segments: vec![
                (26280, seg(&[(4, 0.5), (8, 2.0), (24, 3.0), (168, 0.5)], 0.0, 2.0)),
                (26340, seg(&[(4, 5.0), (8, 2.0), (24, 3.0), (168, 0.5)], 0.0, 2.0)),
                (TWENTY_DAYS, seg(&[(4, 0.5), (8, 2.0), (24, 3.0), (168, 0.5)], 0.0, 2.0)),
            ],
            trend_slope: 0.0,
        },
    }
}

/// Ground truth of a preset at 1-minute resolution.
pub fn preset_truth(p: Preset) -> GroundTruth {
    match p {
        Preset::S1 => GroundTruth {
            changepoints: vec![10800, 20160, 34560],
            ..GroundTruth::default()
        },
        Preset::S2 => GroundTruth {
            anomaly_intervals: vec![(5760, 5881), (20040, 20161)],
            ..GroundTruth::default()
        },
        Preset::S3 => GroundTruth::default(),
        Preset::S4 => GroundTruth {
            anomaly_intervals: vec![(26281, 26341)],
            ..GroundTruth::default()
        },
    }
}

/// A preset at 1-minute resolution with its ground truth.
pub fn gen_preset(p: Preset, seed: u64) -> Result<(TimeSeriesDataset, GroundTruth)> {
    let values = preset_spec(p).generate(1, seed)?;
    let mut ds = TimeSeriesDataset::univariate(&p.to_string(), values)?;
    ds.name = p.to_string().to_uppercase();
    ds.step = "1min".to_string();
    ds.source = format!("synthgen:{p}");
    Ok((ds, preset_truth(p)))
}

pub const MTOY_LENGTH: usize = 1000;
pub const MTOY_MOTIF_LEN: usize = 30;
/// Implant starts are multiples of this, so windows of stride 5 line up.
pub const MTOY_ALIGN: usize = 5;
const MTOY_AMPLITUDE: f64 = 3.0;
const MTOY_NOISE_STD: f64 = 0.5;
const MTOY_AR: f64 = 0.9;
const MTOY_WALK_STD: f64 = 0.5;

/// One period of a sine of amplitude 3 over `len` steps.
pub fn mtoy_pattern(len: usize) -> Vec<f64> {
    (0..len)
        .map(|j| MTOY_AMPLITUDE * (2.0 * PI * j as f64 / len as f64).sin())
        .collect()
}

/// Stationary AR(1) noise with marginal std `MTOY_NOISE_STD`.
fn smooth_noise(n: usize, rng: &mut crate::Rng) -> Vec<f64> {
    let innov = MTOY_NOISE_STD * (1.0 - MTOY_AR * MTOY_AR).sqrt();
    let first: f64 = StandardNormal.sample(rng);
    let mut x = MTOY_NOISE_STD * first;
    (0..n)
        .map(|_| {
            let e: f64 = StandardNormal.sample(rng);
            x = MTOY_AR * x + innov * e;
            x
        })
        .collect()
}

/// Three variables: T1 and T2 share the same burst at two places on top of
/// independent smooth noise, T3 is a Gaussian random walk.
pub fn gen_mtoy(seed: u64, length: usize, motif_len: usize) -> Result<(TimeSeriesDataset, GroundTruth)> {
    if motif_len == 0 || length < 4 * motif_len {
        return Err(Error::invalid(format!(
            "length {length} is too short for two non-overlapping implants of length {motif_len} (need at least {})",
            4 * motif_len.max(1)
        )));
    }
    let mut rng = crate::seeded_rng(seed);
    let slots = (length - motif_len) / MTOY_ALIGN + 1;
    // keep the two implants at least one motif length apart
    let (a, b) = loop {
        let a = rng.random_range(0..slots) * MTOY_ALIGN;
        let b = rng.random_range(0..slots) * MTOY_ALIGN;
        let (a, b) = (a.min(b), a.max(b));
        if b >= a + 2 * motif_len {
            break (a, b);
        }
    };
    let pattern = mtoy_pattern(motif_len);
    let mut t1 = smooth_noise(length, &mut rng);
    let mut t2 = smooth_noise(length, &mut rng);
    for start in [a, b] {
        for (j, p) in pattern.iter().enumerate() {
            t1[start + j] += p;
            t2[start + j] += p;
        }
    }
    let mut level = 0.0;
    let t3: Vec<f64> = (0..length)
        .map(|_| {
            let e: f64 = StandardNormal.sample(&mut rng);
            level += MTOY_WALK_STD * e;
            level
        })
        .collect();
    let values = Array2::from_shape_fn((length, 3), |(t, j)| match j {
        0 => t1[t],
        1 => t2[t],
        _ => t3[t],
    });
    let mut ds = TimeSeriesDataset::new("mtoy", values, vec!["T1".into(), "T2".into(), "T3".into()])?;
    ds.name = "M-toy".to_string();
    ds.source = "synthgen:mtoy".to_string();
    let truth = GroundTruth {
        motif_occurrences: vec![((a, a + motif_len), vec![0, 1]), ((b, b + motif_len), vec![0, 1])],
        ..GroundTruth::default()
    };
    Ok((ds, truth))
}
