use proptest::prelude::*;

use super::*;
use crate::avdata::{AudioClip, VisualClip};
use crate::rng;

/// Independent oracle: builds each chunk's source list by explicit list
/// surgery instead of evaluating the closed-form index expressions.
pub(crate) fn brute_force_chunk(kind: ManipulationKind, l: usize, param: usize, dir: Option<Direction>) -> Vec<usize> {
    let offsets: Vec<usize> = (0..l).collect();
    match kind {
        ManipulationKind::Repeat => {
            // every group of `param` positions shows the group's first step
            let mut out = Vec::new();
            for group in offsets.chunks(param) {
                out.extend(std::iter::repeat_n(group[0], group.len()));
            }
            out
        }
        ManipulationKind::Flip => {
            // reverse every full-width block; a trailing partial block
            // reverses as if full-width and is clipped at the chunk end
            let mut out = Vec::new();
            let mut start = 0;
            while start < l {
                let block: Vec<usize> = (start..start + param).rev().collect();
                for &s in block.iter().take(l - start) {
                    out.push(if s > l - 1 { l - 1 } else { s });
                }
                start += param;
            }
            out
        }
        ManipulationKind::Translate => {
            let mut v = offsets.clone();
            match dir.unwrap() {
                Direction::Left => {
                    let k = param.min(l);
                    v.drain(..k);
                    while v.len() < l {
                        v.push(l - 1);
                    }
                }
                Direction::Right => {
                    for _ in 0..param {
                        v.insert(0, 0);
                    }
                    v.truncate(l);
                }
            }
            v
        }
        ManipulationKind::Replace => unreachable!(),
    }
}

fn chunk_of(spec: &ManipulationSpec, len: usize) -> Vec<usize> {
    index_map(spec, len).unwrap()[spec.chunk()].to_vec()
}

#[test]
fn repeat_example() {
    assert_eq!(chunk_of(&ManipulationSpec::repeat(2, 4, 2), 8), vec![2, 2, 4, 4]);
}

#[test]
fn flip_example() {
    assert_eq!(chunk_of(&ManipulationSpec::flip(2, 4, 2), 8), vec![3, 2, 5, 4]);
}

#[test]
fn translate_examples() {
    assert_eq!(chunk_of(&ManipulationSpec::translate(2, 4, 2, Direction::Left), 8), vec![4, 5, 5, 5]);
    assert_eq!(chunk_of(&ManipulationSpec::translate(2, 4, 2, Direction::Right), 8), vec![2, 2, 2, 3]);
}

#[test]
fn repeat_with_full_period_freezes_first_step() {
    for l in 2..10 {
        assert!(chunk_of(&ManipulationSpec::repeat(1, l, l), 12).iter().all(|&g| g == 1));
    }
}

#[test]
fn flip_partial_block_is_clamped() {
    // l=5, f=2: a=4 would address i+5 without the clamp
    assert_eq!(chunk_of(&ManipulationSpec::flip(0, 5, 2), 5), vec![1, 0, 3, 2, 4]);
}

#[test]
fn index_map_matches_brute_force_exhaustively() {
    let mut mismatches = 0usize;
    for len in 2..=24 {
        for l in 2..=len {
            for p in 2..=l {
                let i = len - l;
                for (kind, dir) in [
                    (ManipulationKind::Repeat, None),
                    (ManipulationKind::Flip, None),
                    (ManipulationKind::Translate, Some(Direction::Left)),
                    (ManipulationKind::Translate, Some(Direction::Right)),
                ] {
                    let spec = ManipulationSpec { kind, i, l, param: Some(p), direction: dir, donor_id: None };
                    let got: Vec<usize> = chunk_of(&spec, len).iter().map(|g| g - i).collect();
                    if got != brute_force_chunk(kind, l, p, dir) {
                        mismatches += 1;
                    }
                }
            }
        }
    }
    assert_eq!(mismatches, 0);
}

#[test]
fn sample_chunk_near_zero_r_min_defaults() {
    let cp = ChunkParams::default();
    let mut rng = rng::seeded(11);
    for _ in 0..2000 {
        let (i, l) = sample_chunk(30, &cp, &mut rng).unwrap();
        assert!((2..=30).contains(&l));
        assert!(i <= 30 - l);
    }
}

#[test]
fn forced_full_chunk() {
    let cp = ChunkParams { r_min: 1.0, r_max: 1.0, hard_min: 2 };
    let mut rng = rng::seeded(0);
    for _ in 0..50 {
        assert_eq!(sample_chunk(4, &cp, &mut rng).unwrap(), (0, 4));
    }
}

#[test]
fn too_short_sequences_are_rejected() {
    let mut rng = rng::seeded(0);
    assert!(matches!(sample_chunk(1, &ChunkParams::default(), &mut rng), Err(Error::ChunkRejected { .. })));
    let cp = ChunkParams { r_min: 0.1, r_max: 0.1, hard_min: 2 };
    assert!(matches!(sample_chunk(10, &cp, &mut rng), Err(Error::ChunkRejected { .. })));
}

#[test]
fn invalid_chunk_params() {
    for cp in [
        ChunkParams { r_min: 0.0, r_max: 1.0, hard_min: 2 },
        ChunkParams { r_min: 0.6, r_max: 0.5, hard_min: 2 },
        ChunkParams { r_min: 0.1, r_max: 1.5, hard_min: 2 },
        ChunkParams { r_min: 0.1, r_max: 1.0, hard_min: 1 },
    ] {
        assert!(cp.validate().is_err(), "{cp:?}");
    }
}

#[test]
fn chunk_length_is_uniform_chi_square() {
    let cp = ChunkParams::default();
    let mut rng = rng::seeded(2024);
    let n = 100_000;
    let mut counts = [0usize; 31];
    for _ in 0..n {
        counts[sample_chunk(30, &cp, &mut rng).unwrap().1] += 1;
    }
    let expected = n as f64 / 29.0;
    let chi2: f64 = counts[2..].iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // upper 1% point of chi-square with 28 degrees of freedom
    assert!(chi2 < 48.278, "chi2 = {chi2}");
}

#[test]
fn replace_only_policy() {
    let mut rng = rng::seeded(5);
    for _ in 0..200 {
        let s = sample_manipulation(&KindPolicy::default(), 16, &ChunkParams::default(), &mut rng).unwrap();
        assert_eq!(s.kind, ManipulationKind::Replace);
        assert_eq!(s.param, None);
    }
}

#[test]
fn length_two_forces_param_two() {
    let cp = ChunkParams { r_min: 1.0, r_max: 1.0, hard_min: 2 };
    let policy = KindPolicy { replace: 0.0, repeat: 0.4, flip: 0.3, translate: 0.3 };
    let mut rng = rng::seeded(6);
    for _ in 0..200 {
        let s = sample_manipulation(&policy, 2, &cp, &mut rng).unwrap();
        assert_eq!(s.param, Some(2));
    }
}

#[test]
fn kind_frequencies_match_policy() {
    let policy = KindPolicy { replace: 0.1, repeat: 0.2, flip: 0.3, translate: 0.4 };
    let mut rng = rng::seeded(99);
    let n = 100_000usize;
    let mut counts = std::collections::HashMap::new();
    let mut dirs = [0usize; 2];
    for _ in 0..n {
        let s = sample_manipulation(&policy, 30, &ChunkParams::default(), &mut rng).unwrap();
        *counts.entry(s.kind).or_insert(0usize) += 1;
        match s.direction {
            Some(Direction::Left) => dirs[0] += 1,
            Some(Direction::Right) => dirs[1] += 1,
            None => assert_ne!(s.kind, ManipulationKind::Translate),
        }
        if let Some(p) = s.param {
            assert!((2..=s.l).contains(&p));
        }
    }
    for kind in ManipulationKind::ALL {
        let p = policy.weight(kind);
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        let got = *counts.get(&kind).unwrap_or(&0) as f64;
        assert!((got - n as f64 * p).abs() < 3.0 * sigma, "{kind:?}: {got}");
    }
    let t = (dirs[0] + dirs[1]) as f64;
    assert!((dirs[0] as f64 - t / 2.0).abs() < 3.0 * (t * 0.25).sqrt());
}

#[test]
fn policy_must_sum_to_one() {
    let policy = KindPolicy { replace: 0.5, repeat: 0.2, flip: 0.0, translate: 0.0 };
    assert!(sample_manipulation(&policy, 30, &ChunkParams::default(), &mut rng::seeded(0)).is_err());
}

fn ramp_audio(n: usize) -> AudioClip {
    AudioClip::new((0..n).map(|t| t as f32 / n as f32).collect()).unwrap()
}

#[test]
fn flip_on_constant_sequence_is_identity() {
    let a = AudioClip::new(vec![0.25; 20]).unwrap();
    let out = apply_manipulation(&a, &ManipulationSpec::flip(3, 7, 3), None).unwrap();
    assert_eq!(out, a);
}

#[test]
fn self_replacement_is_identity() {
    let a = ramp_audio(20);
    let out = apply_manipulation(&a, &ManipulationSpec::replace(4, 9, "self"), Some(&a)).unwrap();
    assert_eq!(out, a);
}

#[test]
fn replace_takes_same_window_from_donor() {
    let a = ramp_audio(10);
    let d = AudioClip::new(vec![-0.5; 10]).unwrap();
    let out = apply_manipulation(&a, &ManipulationSpec::replace(2, 3, "d"), Some(&d)).unwrap();
    for t in 0..10 {
        let expect = if (2..5).contains(&t) { -0.5 } else { a.data()[t] };
        assert_eq!(out.data()[t], expect);
    }
}

#[test]
fn donor_and_kind_errors() {
    let a = ramp_audio(10);
    let short = ramp_audio(4);
    assert!(matches!(
        apply_manipulation(&a, &ManipulationSpec::replace(2, 5, "d"), Some(&short)),
        Err(Error::Donor(_))
    ));
    assert!(matches!(apply_manipulation(&a, &ManipulationSpec::replace(2, 5, "d"), None), Err(Error::Usage(_))));
    assert!(matches!(apply_manipulation(&a, &ManipulationSpec::repeat(2, 5, 2), Some(&a)), Err(Error::Usage(_))));
    assert!(apply_manipulation(&a, &ManipulationSpec::repeat(8, 5, 2), None).is_err());
    assert!(apply_manipulation(&a, &ManipulationSpec::repeat(0, 5, 6), None).is_err());
}

#[test]
fn manipulation_spec_json_fields() {
    let v = serde_json::to_value(ManipulationSpec::translate(1, 4, 2, Direction::Left)).unwrap();
    assert_eq!(
        v,
        serde_json::json!({"kind": "translate", "i": 1, "l": 4, "param": 2, "direction": "left", "donor_id": null})
    );
}

fn arb_spec(len: usize) -> impl Strategy<Value = ManipulationSpec> {
    (2..=len).prop_flat_map(move |l| {
        (0..=len - l, 2..=l, 0..4usize, any::<bool>()).prop_map(move |(i, p, k, left)| {
            let dir = if left { Direction::Left } else { Direction::Right };
            match k {
                0 => ManipulationSpec::replace(i, l, "donor"),
                1 => ManipulationSpec::repeat(i, l, p),
                2 => ManipulationSpec::flip(i, l, p),
                _ => ManipulationSpec::translate(i, l, p, dir),
            }
        })
    })
}

proptest! {
    #[test]
    fn manipulation_is_local(
        (len, data, donor, spec) in (2usize..40).prop_flat_map(|len| (
            Just(len),
            prop::collection::vec(-1.0f32..1.0, len),
            prop::collection::vec(-1.0f32..1.0, len),
            arb_spec(len),
        ))
    ) {
        let a = AudioClip::new(data).unwrap();
        let d = AudioClip::new(donor).unwrap();
        let donor = (spec.kind == ManipulationKind::Replace).then_some(&d);
        let out = apply_manipulation(&a, &spec, donor).unwrap();
        for t in (0..len).filter(|t| !spec.chunk().contains(t)) {
            prop_assert_eq!(out.data()[t].to_bits(), a.data()[t].to_bits());
        }
        if spec.kind != ManipulationKind::Replace {
            let g = index_map(&spec, len).unwrap();
            prop_assert!(g.iter().all(|&s| s < len));
            for t in spec.chunk() {
                prop_assert!(spec.chunk().contains(&g[t]));
            }
        }
    }

    #[test]
    fn repeat_with_dividing_period_is_idempotent(
        (_len, data, i, l, p) in (2usize..40).prop_flat_map(|len| (2..=len).prop_flat_map(move |l| {
            let divisors: Vec<usize> = (2..=l).filter(|p| l % p == 0).collect();
            (Just(len), prop::collection::vec(-1.0f32..1.0, len), 0..=len - l, Just(l), prop::sample::select(divisors))
        }))
    ) {
        let a = AudioClip::new(data).unwrap();
        let spec = ManipulationSpec::repeat(i, l, p);
        let once = apply_manipulation(&a, &spec, None).unwrap();
        let twice = apply_manipulation(&once, &spec, None).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn same_spec_selects_same_steps_in_both_modalities(
        (len, spec) in (2usize..24).prop_flat_map(|len| (Just(len), arb_spec(len)))
    ) {
        prop_assume!(spec.kind != ManipulationKind::Replace);
        // encode each step's index in its values so the output reveals the
        // gathered source index
        let audio = AudioClip::new((0..len).map(|t| t as f32 / 64.0).collect()).unwrap();
        let frame = 2 * 3 * 3;
        let visual = VisualClip::new([len, 2, 3, 3], (0..len * frame).map(|k| (k / frame) as f32 / 64.0).collect()).unwrap();
        let a = apply_manipulation(&audio, &spec, None).unwrap();
        let v = apply_manipulation(&visual, &spec, None).unwrap();
        for t in 0..len {
            let src_audio = (a.data()[t] * 64.0).round() as usize;
            let src_visual = (v.step(t)[0] * 64.0).round() as usize;
            prop_assert_eq!(src_audio, src_visual);
            prop_assert!(v.step(t).iter().all(|&x| x == v.step(t)[0]));
        }
    }
}
