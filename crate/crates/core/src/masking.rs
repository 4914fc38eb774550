//! Binary masks for the self-supervised objective.
//!
//! Convention: `0` marks a masked entry (zeroed in the input, reconstructed
//! by the model), `1` a visible one.

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::model::Real;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    /// Independent Bernoulli(r) per entry.
    Stateless,
    /// Alternating masked/visible runs with geometric lengths.
    Stateful,
    /// Deterministic suffix of length ceil(r * w).
    Future,
}

impl std::str::FromStr for MaskMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "stateless" => Ok(MaskMode::Stateless),
            "stateful" => Ok(MaskMode::Stateful),
            "future" => Ok(MaskMode::Future),
            other => Err(Error::invalid(format!(
                "unknown mask mode {other:?} (expected stateless, stateful or future)"
            ))),
        }
    }
}

/// How masks are drawn. Serialized as `{r, mode, lm?, sync, future}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "MaskMeta", try_from = "MaskMeta")]
pub struct MaskConfig {
    pub r: f64,
    pub mode: MaskMode,
    /// Mean masked run length (stateful only).
    pub lm: f64,
    /// Same mask for every variable.
    pub sync: bool,
}

#[derive(Serialize, Deserialize)]
struct MaskMeta {
    r: f64,
    mode: MaskMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lm: Option<f64>,
    sync: bool,
    future: bool,
}

impl From<MaskConfig> for MaskMeta {
    fn from(c: MaskConfig) -> Self {
        MaskMeta {
            r: c.r,
            mode: c.mode,
            lm: (c.mode == MaskMode::Stateful).then_some(c.lm),
            sync: c.sync,
            future: c.mode == MaskMode::Future,
        }
    }
}

impl TryFrom<MaskMeta> for MaskConfig {
    type Error = String;
    fn try_from(m: MaskMeta) -> std::result::Result<Self, String> {
        if m.future != (m.mode == MaskMode::Future) {
            return Err(format!(
                "mask flag future={} contradicts mode {:?}",
                m.future, m.mode
            ));
        }
        let c = MaskConfig {
            r: m.r,
            mode: m.mode,
            lm: m.lm.unwrap_or(DEFAULT_LM),
            sync: m.sync,
        };
        c.validate().map_err(|e| e.to_string())?;
        Ok(c)
    }
}

pub const DEFAULT_LM: f64 = 3.0;

impl MaskConfig {
    pub fn stateless(r: f64) -> Self {
        Self {
            r,
            mode: MaskMode::Stateless,
            lm: DEFAULT_LM,
            sync: false,
        }
    }

    pub fn stateful(r: f64, lm: f64) -> Self {
        Self {
            r,
            mode: MaskMode::Stateful,
            lm,
            sync: false,
        }
    }

    pub fn future(r: f64) -> Self {
        Self {
            r,
            mode: MaskMode::Future,
            lm: DEFAULT_LM,
            sync: true,
        }
    }

    pub fn with_sync(mut self, sync: bool) -> Self {
        self.sync = sync;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.r) || self.r.is_nan() {
            return Err(Error::OutOfRange(format!(
                "masking probability r = {} outside [0, 1]",
                self.r
            )));
        }
        if self.mode == MaskMode::Stateful && !(self.lm >= 1.0) {
            return Err(Error::OutOfRange(format!(
                "mean masked run length lm = {} must be >= 1",
                self.lm
            )));
        }
        Ok(())
    }

    /// Number of trailing steps a future mask hides in a window of `len`.
    pub fn future_len(&self, len: usize) -> usize {
        // guard against 0.7 * 30 = 21.000000000000004
        let n = (self.r * len as f64 - 1e-9).ceil().max(0.0) as usize;
        n.min(len)
    }
}

/// `vars x len` binary mask.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    vars: usize,
    len: usize,
    bits: Vec<u8>,
}

impl Mask {
    pub fn visible(vars: usize, len: usize) -> Self {
        Self {
            vars,
            len,
            bits: vec![1; vars * len],
        }
    }

    pub fn from_bits(vars: usize, len: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != vars * len || bits.iter().any(|&b| b > 1) {
            return Err(Error::shape(format!(
                "mask of {vars}x{len} needs {} binary entries",
                vars * len
            )));
        }
        Ok(Self { vars, len, bits })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.vars, self.len)
    }

    pub fn get(&self, var: usize, t: usize) -> u8 {
        self.bits[var * self.len + t]
    }

    pub fn is_masked(&self, var: usize, t: usize) -> bool {
        self.get(var, t) == 0
    }

    pub fn row(&self, var: usize) -> &[u8] {
        &self.bits[var * self.len..(var + 1) * self.len]
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn n_masked(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 0).count()
    }

    /// Keep the first `len` time steps.
    pub fn truncate(&self, len: usize) -> Mask {
        let len = len.min(self.len);
        let mut bits = Vec::with_capacity(self.vars * len);
        for v in 0..self.vars {
            bits.extend_from_slice(&self.row(v)[..len]);
        }
        Mask {
            vars: self.vars,
            len,
            bits,
        }
    }

    pub fn to_array<F: Real>(&self) -> Array2<F> {
        Array2::from_shape_fn((self.vars, self.len), |(v, t)| {
            if self.get(v, t) == 1 {
                F::one()
            } else {
                F::zero()
            }
        })
    }
}

/// Geometric run length on {1, 2, ...} with the given mean.
fn geometric_run(mean: f64, rng: &mut crate::Rng) -> usize {
    if mean <= 1.0 {
        return 1;
    }
    let p = 1.0 / mean;
    let u: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
    let k = (u.ln() / (1.0 - p).ln()).ceil();
    k.max(1.0) as usize
}

fn stateful_row(len: usize, r: f64, lm: f64, rng: &mut crate::Rng) -> Vec<u8> {
    if r <= 0.0 {
        return vec![1; len];
    }
    if r >= 1.0 {
        return vec![0; len];
    }
    let mut visible_mean = lm * (1.0 - r) / r;
    if visible_mean < 1.0 {
        log::warn!(
            "stateful mask: visible-run mean {visible_mean:.3} < 1 for r = {r}, lm = {lm}; clamped to 1"
        );
        visible_mean = 1.0;
    }
    let mut out = Vec::with_capacity(len);
    let mut masked = rng.random::<f64>() < r;
    while out.len() < len {
        let run = geometric_run(if masked { lm } else { visible_mean }, rng);
        let take = run.min(len - out.len());
        out.extend(std::iter::repeat_n(if masked { 0 } else { 1 }, take));
        masked = !masked;
    }
    out
}

fn stateless_row(len: usize, r: f64, rng: &mut crate::Rng) -> Vec<u8> {
    (0..len)
        .map(|_| if rng.random::<f64>() < r { 0 } else { 1 })
        .collect()
}

/// Draw a `vars x len` mask.
pub fn gen_mask(vars: usize, len: usize, cfg: &MaskConfig, rng: &mut crate::Rng) -> Result<Mask> {
    cfg.validate()?;
    if vars == 0 || len == 0 {
        return Err(Error::shape(format!("cannot mask a {vars}x{len} window")));
    }
    let bits = match cfg.mode {
        MaskMode::Future => {
            let start = len - cfg.future_len(len);
            let row: Vec<u8> = (0..len).map(|t| u8::from(t < start)).collect();
            row.repeat(vars)
        }
        MaskMode::Stateless | MaskMode::Stateful => {
            let draw = |rng: &mut crate::Rng| match cfg.mode {
                MaskMode::Stateless => stateless_row(len, cfg.r, rng),
                _ => stateful_row(len, cfg.r, cfg.lm, rng),
            };
            if cfg.sync {
                draw(rng).repeat(vars)
            } else {
                (0..vars).flat_map(|_| draw(rng)).collect()
            }
        }
    };
    Ok(Mask { vars, len, bits })
}

/// `window ⊙ mask`: masked positions zeroed.
pub fn apply_mask<F: Real>(window: ArrayView2<'_, F>, mask: &Mask) -> Result<Array2<F>> {
    if window.dim() != mask.shape() {
        return Err(Error::shape(format!(
            "window {:?} vs mask {:?}",
            window.dim(),
            mask.shape()
        )));
    }
    let mut out = window.to_owned();
    for ((v, t), x) in out.indexed_iter_mut() {
        if mask.is_masked(v, t) {
            *x = F::zero();
        }
    }
    Ok(out)
}
