use std::collections::BTreeMap;

use prefsteer::directions::{extract_directions, ContrastivePromptPair, DirectionSet};
use prefsteer::instructions::*;
use prefsteer::runtime::{forward_capture, LayerRepresentations, SamplingConfig};
use prefsteer::toy::{eos_dominant_model, random_model, synthetic_instructions, ToySpec};
use prefsteer::Error;
use proptest::prelude::*;

fn long(n: usize) -> ToySpec {
    ToySpec {
        max_seq_len: 256,
        ..ToySpec::tiny(n)
    }
}

fn directions(m: &prefsteer::runtime::ModelBundle) -> DirectionSet {
    let pairs = [
        ContrastivePromptPair::new("alpha", "Be exact.", "Be vague.").unwrap(),
        ContrastivePromptPair::new("beta", "Be gentle.", "Be blunt.").unwrap(),
    ];
    extract_directions(m, &synthetic_instructions(20, 7), &pairs).unwrap()
}

fn record(id: &str, scores: &[(&str, f64)]) -> InstructionRecord {
    let scores: BTreeMap<String, f64> = scores.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    let (criterion, score) = assign_criterion(&scores).unwrap();
    InstructionRecord {
        id: id.into(),
        text: format!("text {id}"),
        scores: Some(scores),
        assigned: Some(Assignment { criterion, score }),
    }
}

#[test]
fn score_text_matches_per_layer_dot_products() {
    let m = random_model(&long(3), 2);
    let dirs = directions(&m);
    let text = "Write a haiku about rain.";
    let reps = forward_capture(&m, &m.tokenizer.instruction_tokens(text)).unwrap();
    let scores = score_text(&m, &dirs, text, ScoreMode::Dot).unwrap();
    for c in ["alpha", "beta"] {
        let mut want = 0.0;
        for l in 1..=3 {
            let dot: f64 = reps
                .layer(l)
                .iter()
                .zip(dirs.layer(c, l).unwrap())
                .map(|(a, b)| *a as f64 * *b as f64)
                .sum();
            want += dot / 3.0;
        }
        assert!((scores[c] - want).abs() <= 1e-9 * want.abs().max(1.0));
    }
    // cosine mode is bounded
    let cos = score_text(&m, &dirs, text, ScoreMode::Cosine).unwrap();
    assert!(cos.values().all(|v| v.abs() <= 1.0 + 1e-9));
}

#[test]
fn assignment_breaks_ties_by_name() {
    let r = record("x", &[("b", 1.0), ("a", 1.0), ("c", 0.5)]);
    assert_eq!(r.assigned.unwrap().criterion, "a");
    assert!(matches!(
        assign_criterion(&BTreeMap::new()),
        Err(Error::EmptyScores)
    ));
}

#[test]
fn top_k_matches_sort_oracle() {
    let recs: Vec<InstructionRecord> = [3.0, -1.0, 3.0, 7.5, 0.0, 2.0]
        .iter()
        .enumerate()
        .map(|(i, &s)| record(&format!("r{i}"), &[("a", s), ("b", s - 1.0)]))
        .collect();
    let kept = select_scored(&recs, &FilterPolicy::top_k(3)).unwrap();
    let ids: Vec<&str> = kept.records.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, ["r3", "r0", "r2"]);
    let all = select_scored(&recs, &FilterPolicy::top_k(6)).unwrap();
    assert_eq!(all.len(), 6);
    assert!(
        select_scored(&recs, &FilterPolicy::threshold(f64::INFINITY))
            .unwrap()
            .is_empty()
    );
    assert!(matches!(
        select_scored(&recs, &FilterPolicy::top_k(7)),
        Err(Error::InvalidPolicy(_))
    ));
    assert!(matches!(
        select_scored(&recs, &FilterPolicy::top_k(0)),
        Err(Error::InvalidPolicy(_))
    ));
}

#[test]
fn margin_drops_ambiguous_records() {
    let recs = vec![
        record("clear", &[("a", 5.0), ("b", 1.0)]),
        record("tied", &[("a", 2.0), ("b", 1.9)]),
    ];
    let policy = FilterPolicy {
        margin: Some(0.5),
        ..FilterPolicy::threshold(0.0)
    };
    let kept = select_scored(&recs, &policy).unwrap();
    assert_eq!(kept.records.len(), 1);
    assert_eq!(kept.records[0].id, "clear");
}

#[test]
fn unassigned_records_are_rejected() {
    let mut r = record("x", &[("a", 1.0)]);
    r.assigned = None;
    assert!(matches!(
        select_scored(&[r], &FilterPolicy::top_k(1)),
        Err(Error::MissingAssignment(_))
    ));
}

#[test]
fn filter_end_to_end_is_deterministic() {
    let m = random_model(&long(3), 5);
    let dirs = directions(&m);
    let raw = InstructionSet::from_texts(SetRole::Raw, "raw", &synthetic_instructions(30, 9));
    let policy = FilterPolicy {
        dedup: true,
        ..FilterPolicy::top_k(8)
    };
    let a = filter_instructions(&raw, &dirs, &m, &policy).unwrap();
    let b = filter_instructions(&raw, &dirs, &m, &policy).unwrap();
    assert_eq!(a.to_jsonl().unwrap(), b.to_jsonl().unwrap());
    assert_eq!(a.len(), 8);
    let scores: Vec<f64> = a.records.iter().map(|r| r.consistency().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn length_bounds_apply_before_scoring() {
    let m = random_model(&long(2), 5);
    let dirs = directions(&m);
    let texts: Vec<String> = ["hi", "a medium instruction", "x".repeat(60).as_str()]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let raw = InstructionSet::from_texts(SetRole::Raw, "raw", &texts);
    let policy = FilterPolicy {
        min_len: Some(3),
        max_len: Some(40),
        ..FilterPolicy::threshold(f64::NEG_INFINITY)
    };
    let kept = filter_instructions(&raw, &dirs, &m, &policy).unwrap();
    assert_eq!(kept.texts(), vec!["a medium instruction".to_string()]);
}

#[test]
fn synthesis_is_seeded() {
    let m = random_model(&long(2), 3);
    let s = SamplingConfig::temperature(1.0, 24, 42);
    let opts = SynthOptions::default();
    let (a, ra) = synth_instructions(&m, "", 6, &s, &opts).unwrap();
    let (b, _) = synth_instructions(&m, "", 6, &s, &opts).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra.requested, 6);
    assert!(ra.produced <= 6 && ra.attempts <= 24);
    let texts = a.texts();
    let mut uniq = texts.clone();
    uniq.sort();
    uniq.dedup();
    assert_eq!(uniq.len(), texts.len());
    let (c, _) = synth_instructions(&m, "", 6, &s.with_seed(43), &opts).unwrap();
    assert_ne!(a, c);
}

#[test]
fn synthesis_gives_up_on_a_model_that_only_stops() {
    let m = eos_dominant_model(&long(2), 3);
    let s = SamplingConfig::temperature(1.0, 8, 1);
    let err = synth_instructions(
        &m,
        "",
        3,
        &s,
        &SynthOptions {
            dedup: true,
            attempts_per_record: 2,
        },
    )
    .unwrap_err();
    assert!(
        matches!(
            err,
            Error::RetryBudgetExhausted {
                attempts: 6,
                empties: 6,
                ..
            }
        ),
        "{err:?}"
    );
    assert!(matches!(
        synth_instructions(
            &m,
            "",
            3,
            &SamplingConfig::greedy(8),
            &SynthOptions::default()
        ),
        Err(Error::InvalidSampling(_))
    ));
}

#[test]
fn instruction_lines_reject_duplicate_ids() {
    let text = "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"a\",\"text\":\"y\"}\n";
    assert!(InstructionSet::read_jsonl(SetRole::Raw, text.as_bytes()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn consistency_is_linear_in_direction(
        h in proptest::collection::vec(proptest::collection::vec(-5.0f32..5.0, 4), 3),
        u in proptest::collection::vec(proptest::collection::vec(-1.0f32..1.0, 4), 3),
        k in -4i32..5,
    ) {
        // scaled directions are rounded in f32
        let mass: f64 = h.iter().flatten().zip(u.iter().flatten()).map(|(a, b)| (*a as f64 * *b as f64).abs()).sum();
        let reps = LayerRepresentations { layers: h };
        let scaled: Vec<Vec<f32>> = u.iter().map(|l| l.iter().map(|x| x * k as f32).collect()).collect();
        let a = consistency_score(&reps, &u).unwrap();
        let b = consistency_score(&reps, &scaled).unwrap();
        prop_assert!((b - k as f64 * a).abs() <= 1e-7 * mass * k.abs() as f64 + 1e-12);
    }

    #[test]
    fn threshold_and_top_k_are_nested(
        raw in proptest::collection::vec((-10i32..10, -10i32..10), 1..40),
        t in -3.0f64..3.0, dt in 0.0f64..3.0, k in 1usize..40,
    ) {
        let recs: Vec<InstructionRecord> = raw
            .iter()
            .enumerate()
            .map(|(i, (a, b))| record(&format!("r{i:02}"), &[("a", *a as f64 * 0.5), ("b", *b as f64 * 0.5)]))
            .collect();
        let ids = |s: InstructionSet| s.records.into_iter().map(|r| r.id).collect::<Vec<_>>();
        let lo = ids(select_scored(&recs, &FilterPolicy::threshold(t)).unwrap());
        let hi = ids(select_scored(&recs, &FilterPolicy::threshold(t + dt)).unwrap());
        prop_assert!(hi.iter().all(|i| lo.contains(i)));
        prop_assert_eq!(&lo[..hi.len()], &hi[..]);
        let k = k.min(recs.len());
        let top = ids(select_scored(&recs, &FilterPolicy::top_k(k)).unwrap());
        let all = ids(select_scored(&recs, &FilterPolicy::top_k(recs.len())).unwrap());
        prop_assert_eq!(&all[..k], &top[..]);
    }
}
