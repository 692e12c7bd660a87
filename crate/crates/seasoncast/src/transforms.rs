//! Invertible per-window transforms: differencing and normalization.
//!
//! Every feature window is optionally differenced (consecutive deltas,
//! capturing relative trend) and then normalized (window mean/std, population
//! formula). Both steps save just enough metadata to be inverted exactly, so
//! model outputs can be mapped back to original series units.

use crate::error::{Error, Result};

/// Floor applied to the window standard deviation before dividing, so constant
/// windows normalize to zeros instead of NaN. Inversion uses the same floor,
/// which keeps the round-trip exact.
pub const EPS_NORM: f64 = 1e-6;

/// A fixed-length slice of one series, in series units.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    values: Vec<f64>,
}

impl Window {
    /// Wraps raw values; rejects non-finite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("window values".into()));
        }
        Ok(Self { values })
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(values.to_vec())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn last(&self) -> Option<f64> {
        self.values.last().copied()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Metadata saved by [`difference`]: the first pre-difference value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffMeta {
    pub anchor: f64,
}

/// Metadata saved by [`normalize`]: window mean and population standard
/// deviation (divisor n, no Bessel correction).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormMeta {
    pub mu: f64,
    pub sigma: f64,
}

impl NormMeta {
    /// Scale actually used when dividing/multiplying (sigma with the ε floor).
    pub fn scale(&self) -> f64 {
        self.sigma.max(EPS_NORM)
    }
}

/// Consecutive deltas of a window. Output is one element shorter; the first
/// input value is saved as the anchor for inversion.
pub fn difference(w: &Window) -> Result<(Window, DiffMeta)> {
    if w.len() < 2 {
        return Err(Error::WindowTooShort { len: w.len(), min: 2 });
    }
    let values = w.values();
    let deltas: Vec<f64> = values.windows(2).map(|p| p[1] - p[0]).collect();
    let meta = DiffMeta { anchor: values[0] };
    Ok((Window { values: deltas }, meta))
}

/// Rebuilds the original window from deltas: output[0] is the anchor and each
/// later element adds the running sum of deltas.
pub fn invert_difference(d: &Window, meta: DiffMeta) -> Window {
    let mut values = Vec::with_capacity(d.len() + 1);
    let mut acc = meta.anchor;
    values.push(acc);
    for delta in d.values() {
        acc += delta;
        values.push(acc);
    }
    Window { values }
}

/// Standardizes a window by its empirical mean and population standard
/// deviation. Constant windows map to zeros via the [`EPS_NORM`] floor.
pub fn normalize(w: &Window) -> Result<(Window, NormMeta)> {
    if w.is_empty() {
        return Err(Error::WindowTooShort { len: 0, min: 1 });
    }
    let n = w.len() as f64;
    let mu = w.values().iter().sum::<f64>() / n;
    let var = w.values().iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    let meta = NormMeta { mu, sigma: var.sqrt() };
    let scale = meta.scale();
    let values = w.values().iter().map(|v| (v - mu) / scale).collect();
    Ok((Window { values }, meta))
}

/// Undoes [`normalize`] using the transmitted mean and standard deviation.
pub fn invert_normalize(n: &Window, meta: NormMeta) -> Window {
    let scale = meta.scale();
    let values = n.values().iter().map(|v| v * scale + meta.mu).collect();
    Window { values }
}

/// Which transform steps a feature opts into. Level-valued features default to
/// both; uncertainty (std) features typically opt out of both.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransformFlags {
    pub apply_diff: bool,
    pub apply_norm: bool,
}

impl TransformFlags {
    pub fn new(apply_diff: bool, apply_norm: bool) -> Self {
        Self { apply_diff, apply_norm }
    }

    pub fn none() -> Self {
        Self::new(false, false)
    }
}

/// Metadata for the steps that were actually applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformMeta {
    pub diff: Option<DiffMeta>,
    pub norm: Option<NormMeta>,
}

/// Difference-then-normalize, honoring the per-feature flags.
pub fn apply_transforms(w: &Window, flags: TransformFlags) -> Result<(Window, TransformMeta)> {
    let mut meta = TransformMeta { diff: None, norm: None };
    let mut current = w.clone();
    if flags.apply_diff {
        let (d, dm) = difference(&current)?;
        current = d;
        meta.diff = Some(dm);
    }
    if flags.apply_norm {
        let (n, nm) = normalize(&current)?;
        current = n;
        meta.norm = Some(nm);
    }
    Ok((current, meta))
}

/// Inverse of [`apply_transforms`]: inverse-normalize, then inverse-difference.
pub fn invert_transforms(w: &Window, meta: &TransformMeta) -> Window {
    let mut current = w.clone();
    if let Some(nm) = meta.norm {
        current = invert_normalize(&current, nm);
    }
    if let Some(dm) = meta.diff {
        current = invert_difference(&current, dm);
    }
    current
}
