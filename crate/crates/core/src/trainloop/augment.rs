use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::avdata::{AVPair, Label, TemporalSequence};
use crate::error::{Error, Result};
use crate::pseudofake::{apply_manipulation, sample_manipulation, ManipulationKind, ManipulationSpec};
use crate::rng::Rng;

use super::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combo {
    AudioOnly,
    VisualOnly,
    Both,
}

impl Combo {
    fn sample(cfg: &RunConfig, rng: &mut Rng) -> Combo {
        let w = &cfg.combo_weights;
        let u: f64 = rng.random();
        if u < w.audio_only {
            Combo::AudioOnly
        } else if u < w.audio_only + w.visual_only || w.both == 0.0 {
            Combo::VisualOnly
        } else {
            Combo::Both
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Unchanged,
    PseudoFake(Combo),
    /// A pseudo-fake was drawn but no valid chunk or donor existed.
    Rejected,
}

#[derive(Debug, Clone)]
pub struct Augmented {
    pub pair: AVPair,
    pub outcome: Outcome,
}

/// Draw a spec for one modality; replace borrows the same window from a
/// random donor other than `pair`.
fn manipulate<S: TemporalSequence>(
    seq: &S,
    source_id: &str,
    donors: &[AVPair],
    view: impl Fn(&AVPair) -> Result<S>,
    cfg: &RunConfig,
    rng: &mut Rng,
) -> Result<(S, ManipulationSpec)> {
    let mut spec = sample_manipulation(&cfg.kind_policy, seq.steps(), &cfg.chunk, rng)?;
    let donor = if spec.kind == ManipulationKind::Replace {
        let eligible: Vec<&AVPair> = donors.iter().filter(|d| d.meta.source_id != source_id).collect();
        if eligible.is_empty() {
            return Err(Error::Donor(format!("no donor other than {source_id:?}")));
        }
        let d = eligible[rng.random_range(0..eligible.len())];
        spec.donor_id = Some(d.meta.source_id.clone());
        Some(view(d)?)
    } else {
        None
    };
    let out = apply_manipulation(seq, &spec, donor.as_ref())?;
    Ok((out, spec))
}

/// Turn a real pair into a pseudo-fake with probability
/// `cfg.pseudo_fake_prob`. Chunk or donor shortages leave the pair
/// unchanged and report [`Outcome::Rejected`].
pub fn augment_sample(pair: &AVPair, donors: &[AVPair], cfg: &RunConfig, rng: &mut Rng) -> Result<Augmented> {
    if pair.label != Label::Real {
        return Err(Error::Usage(format!("augment_sample needs a real pair, {:?} is fake", pair.meta.source_id)));
    }
    if !rng.random_bool(cfg.pseudo_fake_prob) {
        return Ok(Augmented { pair: pair.clone(), outcome: Outcome::Unchanged });
    }
    let combo = Combo::sample(cfg, rng);
    let id = pair.meta.source_id.as_str();
    let mut out = pair.clone();
    let attempt = (|| -> Result<()> {
        if matches!(combo, Combo::VisualOnly | Combo::Both) {
            let (v, spec) = manipulate(&pair.visual, id, donors, |d| Ok(d.visual.clone()), cfg, rng)?;
            out.visual = v;
            out.meta.visual_manipulations.push(spec);
        }
        if matches!(combo, Combo::AudioOnly | Combo::Both) {
            let (a, spec) = manipulate(&pair.audio, id, donors, |d| Ok(d.audio.clone()), cfg, rng)?;
            out.audio = a;
            out.meta.audio_manipulations.push(spec);
        }
        Ok(())
    })();
    match attempt {
        Ok(()) => {
            out.label = Label::Fake;
            Ok(Augmented { pair: out, outcome: Outcome::PseudoFake(combo) })
        }
        Err(Error::ChunkRejected { .. } | Error::Donor(_)) => {
            log::debug!("augmentation of {id} rejected");
            Ok(Augmented { pair: pair.clone(), outcome: Outcome::Rejected })
        }
        Err(e) => Err(e),
    }
}
