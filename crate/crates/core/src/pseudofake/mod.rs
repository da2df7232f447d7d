//! Temporally-local manipulations of a sequence `A_0 .. A_{T-1}`.
//!
//! A manipulation rewrites the chunk `[i, i + l - 1]` (0-based) and leaves
//! every other step untouched. With `a = t - i` the chunk offset:
//!
//! | kind            | source index for position `a`                     |
//! |-----------------|---------------------------------------------------|
//! | replace         | same position `i + a` in a donor sequence         |
//! | repeat `p`      | `i + floor(a / p) * p`                            |
//! | flip `f`        | `i + 2f*floor(a / f) + f - 1 - a`, clamped to chunk |
//! | translate-left  | `i + min(l - 1, a + v)`                           |
//! | translate-right | `i + max(0, a - v)`                               |
//!
//! Flip's final block is partial when `f` does not divide `l`; its mapped
//! indices are clamped into the chunk so the manipulation stays local.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::avdata::TemporalSequence;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChunkParams {
    pub r_min: f64,
    pub r_max: f64,
    #[serde(default = "default_hard_min")]
    pub hard_min: usize,
}

fn default_hard_min() -> usize {
    2
}

impl Default for ChunkParams {
    /// `r_min ≈ 0` (so `l_min` is the hard minimum of 2) and `r_max = 1`.
    fn default() -> Self {
        ChunkParams {
            r_min: 1e-6,
            r_max: 1.0,
            hard_min: 2,
        }
    }
}

impl ChunkParams {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |r: f64| r > 0.0 && r <= 1.0;
        if !in_unit(self.r_min) || !in_unit(self.r_max) || self.r_min > self.r_max {
            return Err(Error::Config(format!(
                "chunk ratios must satisfy 0 < r_min <= r_max <= 1, got r_min={} r_max={}",
                self.r_min, self.r_max
            )));
        }
        if self.hard_min < 2 {
            return Err(Error::Config(format!("hard_min must be >= 2, got {}", self.hard_min)));
        }
        Ok(())
    }

    /// Inclusive chunk-length bounds for a sequence of length `len`.
    pub fn length_bounds(&self, len: usize) -> (usize, usize) {
        let l_min = self.hard_min.max((self.r_min * len as f64).floor() as usize);
        let l_max = ((self.r_max * len as f64).floor() as usize).min(len);
        (l_min, l_max)
    }
}

/// Draw `(i, l)`: `l` uniform on `[l_min, l_max]`, then `i` uniform on
/// `[0, T - l]`.
pub fn sample_chunk(len: usize, cp: &ChunkParams, rng: &mut Rng) -> Result<(usize, usize)> {
    cp.validate()?;
    let (l_min, l_max) = cp.length_bounds(len);
    if len < cp.hard_min || l_max < l_min {
        return Err(Error::ChunkRejected { len, l_min, l_max });
    }
    let l = rng.random_range(l_min..=l_max);
    let i = rng.random_range(0..=len - l);
    Ok((i, l))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManipulationKind {
    Replace,
    Repeat,
    Flip,
    Translate,
}

impl ManipulationKind {
    pub const ALL: [ManipulationKind; 4] = [
        ManipulationKind::Replace,
        ManipulationKind::Repeat,
        ManipulationKind::Flip,
        ManipulationKind::Translate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ManipulationKind::Replace => "replace",
            ManipulationKind::Repeat => "repeat",
            ManipulationKind::Flip => "flip",
            ManipulationKind::Translate => "translate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Left,
    Right,
}

/// One fully determined manipulation. `param` is `p` (repeat), `f` (flip)
/// or `v` (translate) and is `None` for replace; `direction` is only set for
/// translate and `donor_id` only for replace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManipulationSpec {
    pub kind: ManipulationKind,
    pub i: usize,
    pub l: usize,
    pub param: Option<usize>,
    pub direction: Option<Direction>,
    pub donor_id: Option<String>,
}

impl ManipulationSpec {
    pub fn replace(i: usize, l: usize, donor_id: impl Into<String>) -> Self {
        ManipulationSpec {
            kind: ManipulationKind::Replace,
            i,
            l,
            param: None,
            direction: None,
            donor_id: Some(donor_id.into()),
        }
    }

    pub fn repeat(i: usize, l: usize, p: usize) -> Self {
        Self::parametric(ManipulationKind::Repeat, i, l, p, None)
    }

    pub fn flip(i: usize, l: usize, f: usize) -> Self {
        Self::parametric(ManipulationKind::Flip, i, l, f, None)
    }

    pub fn translate(i: usize, l: usize, v: usize, direction: Direction) -> Self {
        Self::parametric(ManipulationKind::Translate, i, l, v, Some(direction))
    }

    fn parametric(kind: ManipulationKind, i: usize, l: usize, param: usize, direction: Option<Direction>) -> Self {
        ManipulationSpec {
            kind,
            i,
            l,
            param: Some(param),
            direction,
            donor_id: None,
        }
    }

    pub fn chunk(&self) -> std::ops::Range<usize> {
        self.i..self.i + self.l
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        if self.l < 2 || self.i + self.l > len {
            return Err(Error::Config(format!(
                "chunk i={} l={} does not fit a sequence of length {len} (need l >= 2)",
                self.i, self.l
            )));
        }
        match self.kind {
            ManipulationKind::Replace => Ok(()),
            kind => {
                let p = self.param.ok_or_else(|| {
                    Error::Config(format!("{} needs a parameter", kind.name()))
                })?;
                if p < 2 || p > self.l {
                    return Err(Error::Config(format!(
                        "{} parameter {p} outside [2, l={}]",
                        kind.name(),
                        self.l
                    )));
                }
                if kind == ManipulationKind::Translate && self.direction.is_none() {
                    return Err(Error::Config("translate needs a direction".into()));
                }
                Ok(())
            }
        }
    }
}

/// Source index `g[t]` for every output position `t`. Identity outside the
/// chunk.
pub fn index_map(spec: &ManipulationSpec, len: usize) -> Result<Vec<usize>> {
    spec.validate(len)?;
    let (i, l) = (spec.i, spec.l);
    let param = match (spec.kind, spec.param) {
        (ManipulationKind::Replace, _) => {
            return Err(Error::Usage("replace has no index map; it reads from a donor".into()))
        }
        (_, Some(p)) => p,
        (_, None) => unreachable!("validated"),
    };
    let chunk_source = |a: usize| -> usize {
        match spec.kind {
            ManipulationKind::Repeat => (a / param) * param,
            ManipulationKind::Flip => {
                let f = param;
                (2 * f * (a / f) + f - 1 - a).min(l - 1)
            }
            ManipulationKind::Translate => match spec.direction {
                Some(Direction::Left) => (l - 1).min(a + param),
                Some(Direction::Right) => a.saturating_sub(param),
                None => unreachable!("validated"),
            },
            ManipulationKind::Replace => unreachable!(),
        }
    };
    Ok((0..len)
        .map(|t| if spec.chunk().contains(&t) { i + chunk_source(t - i) } else { t })
        .collect())
}

/// Apply `spec` to `seq`. Replace copies the chunk window of `donor`;
/// every other kind gathers steps through [`index_map`].
pub fn apply_manipulation<S: TemporalSequence>(
    seq: &S,
    spec: &ManipulationSpec,
    donor: Option<&S>,
) -> Result<S> {
    let len = seq.steps();
    spec.validate(len)?;
    let n = seq.step_len();
    let mut out = seq.clone();
    match (spec.kind, donor) {
        (ManipulationKind::Replace, Some(donor)) => {
            if donor.step_len() != n {
                return Err(Error::Donor(format!(
                    "donor step size {} differs from sequence step size {n}",
                    donor.step_len()
                )));
            }
            if donor.steps() < spec.i + spec.l {
                return Err(Error::Donor(format!(
                    "donor has {} steps, chunk needs {}",
                    donor.steps(),
                    spec.i + spec.l
                )));
            }
            let span = spec.i * n..(spec.i + spec.l) * n;
            out.raw_mut()[span.clone()].copy_from_slice(&donor.raw()[span]);
        }
        (ManipulationKind::Replace, None) => {
            return Err(Error::Usage("replace needs a donor sequence".into()))
        }
        (_, Some(_)) => {
            return Err(Error::Usage(format!("{} does not take a donor", spec.kind.name())))
        }
        (_, None) => {
            let g = index_map(spec, len)?;
            let src = seq.raw();
            let dst = out.raw_mut();
            for t in spec.chunk() {
                dst[t * n..(t + 1) * n].copy_from_slice(&src[g[t] * n..(g[t] + 1) * n]);
            }
        }
    }
    Ok(out)
}

/// Probability of each manipulation kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KindPolicy {
    pub replace: f64,
    pub repeat: f64,
    pub flip: f64,
    pub translate: f64,
}

impl Default for KindPolicy {
    fn default() -> Self {
        KindPolicy::only(ManipulationKind::Replace)
    }
}

impl KindPolicy {
    pub fn only(kind: ManipulationKind) -> Self {
        let mut p = KindPolicy {
            replace: 0.0,
            repeat: 0.0,
            flip: 0.0,
            translate: 0.0,
        };
        *p.weight_mut(kind) = 1.0;
        p
    }

    pub fn weight(&self, kind: ManipulationKind) -> f64 {
        match kind {
            ManipulationKind::Replace => self.replace,
            ManipulationKind::Repeat => self.repeat,
            ManipulationKind::Flip => self.flip,
            ManipulationKind::Translate => self.translate,
        }
    }

    fn weight_mut(&mut self, kind: ManipulationKind) -> &mut f64 {
        match kind {
            ManipulationKind::Replace => &mut self.replace,
            ManipulationKind::Repeat => &mut self.repeat,
            ManipulationKind::Flip => &mut self.flip,
            ManipulationKind::Translate => &mut self.translate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ws = ManipulationKind::ALL.map(|k| self.weight(k));
        if ws.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || (ws.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("kind policy must be a distribution, got {self:?}")));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut Rng) -> ManipulationKind {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for kind in ManipulationKind::ALL {
            acc += self.weight(kind);
            if u < acc {
                return kind;
            }
        }
        // Rounding slack lands on the last kind with positive weight.
        *ManipulationKind::ALL
            .iter()
            .rev()
            .find(|k| self.weight(**k) > 0.0)
            .expect("validated policy has positive mass")
    }
}

/// Draw kind, then `(i, l)`, then `param ~ U[2, l]`, then (translate only)
/// a direction. The donor id for replace is left for the caller to fill.
pub fn sample_manipulation(
    policy: &KindPolicy,
    len: usize,
    cp: &ChunkParams,
    rng: &mut Rng,
) -> Result<ManipulationSpec> {
    policy.validate()?;
    let kind = policy.sample(rng);
    let (i, l) = sample_chunk(len, cp, rng)?;
    Ok(match kind {
        ManipulationKind::Replace => ManipulationSpec {
            kind,
            i,
            l,
            param: None,
            direction: None,
            donor_id: None,
        },
        ManipulationKind::Repeat => ManipulationSpec::repeat(i, l, rng.random_range(2..=l)),
        ManipulationKind::Flip => ManipulationSpec::flip(i, l, rng.random_range(2..=l)),
        ManipulationKind::Translate => {
            let v = rng.random_range(2..=l);
            let dir = if rng.random_bool(0.5) { Direction::Left } else { Direction::Right };
            ManipulationSpec::translate(i, l, v, dir)
        }
    })
}

#[cfg(test)]
mod tests;
