mod common;

use common::permutation_p;
use prefsteer::analysis::*;
use prefsteer::directions::DirectionSet;
use prefsteer::instructions::InstructionRecord;
use prefsteer::Error;
use proptest::prelude::*;

fn normalized(v: Vec<f32>) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn set(layers: Vec<Vec<f32>>) -> DirectionSet {
    let mut s = DirectionSet::new(layers.len(), layers[0].len());
    s.insert("c", layers.into_iter().map(normalized).collect())
        .unwrap();
    s
}

fn wavy(n_layers: usize, d: usize, phase: f32) -> Vec<Vec<f32>> {
    (0..n_layers)
        .map(|l| {
            (0..d)
                .map(|j| ((l * d + j) as f32 * 0.7 + phase).sin() + 0.1)
                .collect()
        })
        .collect()
}

#[test]
fn identical_sets() {
    let a = set(wavy(6, 8, 0.0));
    let cos = layerwise_cosine(&a, &a, "c").unwrap();
    assert!(cos.per_layer.iter().all(|c| (c - 1.0).abs() <= 1e-6));
    let u = dimensionwise_utest(&a, &a, "c", DEFAULT_ALPHA).unwrap();
    assert!(u.dims.iter().all(|t| t.p == 1.0));
    assert!(u.accept);
}

#[test]
fn shifted_dimension_is_detected() {
    let base = wavy(8, 6, 0.3);
    let mut shifted = base.clone();
    for l in &mut shifted {
        l[2] += 3.0;
    }
    let u = dimensionwise_utest(&set(base), &set(shifted), "c", DEFAULT_ALPHA).unwrap();
    assert!(u.dims[2].p < 0.05, "{}", u.dims[2].p);
    assert!(!u.accept);
    assert_eq!(u.rows().len(), 6);
}

#[test]
fn cosine_is_symmetric_and_zero_when_orthogonal() {
    let a = set(wavy(3, 5, 0.0));
    let b = set(wavy(3, 5, 1.1));
    let ab = layerwise_cosine(&a, &b, "c").unwrap();
    let ba = layerwise_cosine(&b, &a, "c").unwrap();
    assert_eq!(ab.per_layer, ba.per_layer);
    let e = |i: usize| {
        (0..4)
            .map(|j| if j == i { 1.0 } else { 0.0 })
            .collect::<Vec<f32>>()
    };
    let x = set(vec![e(0), e(1)]);
    let y = set(vec![e(2), e(3)]);
    let r = layerwise_cosine(&x, &y, "c").unwrap();
    assert_eq!(r.per_layer, vec![0.0, 0.0]);
    assert_eq!((r.mean, r.min, r.max), (0.0, 0.0, 0.0));
}

#[test]
fn mismatched_sets_are_rejected() {
    let a = set(wavy(3, 5, 0.0));
    let b = set(wavy(4, 5, 0.0));
    assert!(layerwise_cosine(&a, &b, "c").is_err());
    assert!(matches!(
        layerwise_cosine(&a, &a, "other"),
        Err(Error::CriterionMissing(_))
    ));
    assert!(matches!(
        mann_whitney_u(&[], &[1.0]),
        Err(Error::EmptySample)
    ));
}

#[test]
fn exact_and_normal_agree_in_large_samples() {
    // away from tiny samples the approximation is close
    let x: Vec<f64> = (0..10).map(|i| (i as f64 * 1.3).sin()).collect();
    let y: Vec<f64> = (0..10).map(|i| (i as f64 * 0.9).cos() + 0.3).collect();
    let ex = exact_p(&x, &y).unwrap();
    let nm = normal_p(&x, &y).unwrap();
    assert_eq!(ex.u, nm.u);
    assert!((ex.p - nm.p).abs() < 0.02, "{} vs {}", ex.p, nm.p);
}

#[test]
fn leakage_examples() {
    let train = ["The quick brown fox jumps"];
    let test = vec![
        InstructionRecord::new("a", "the QUICK brown fox"),
        InstructionRecord::new("b", "quick fox"),
    ];
    let r = ngram_overlap(&train, &test, 3).unwrap();
    assert_eq!(r.leaked_ids, vec!["a".to_string()]);
    assert_eq!(r.leaked_fraction, 0.5);
    let none = ngram_overlap(&["alpha beta gamma"], &test, 1).unwrap();
    assert_eq!(none.leaked_fraction, 0.0);
    assert!(ngram_overlap(&train, &test, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn u_statistics_are_complementary(
        x in proptest::collection::vec(-3i32..3, 1..9),
        y in proptest::collection::vec(-3i32..3, 1..9),
    ) {
        let x: Vec<f64> = x.into_iter().map(f64::from).collect();
        let y: Vec<f64> = y.into_iter().map(f64::from).collect();
        let uxy = u_statistic(&x, &y).unwrap();
        let uyx = u_statistic(&y, &x).unwrap();
        prop_assert_eq!(uxy + uyx, (x.len() * y.len()) as f64);
        let a = mann_whitney_u(&x, &y).unwrap();
        let b = mann_whitney_u(&y, &x).unwrap();
        prop_assert_eq!(a.p, b.p);
    }

    #[test]
    fn exact_p_matches_enumeration(
        x in proptest::collection::vec(-4i32..4, 1..7),
        y in proptest::collection::vec(-4i32..4, 1..7),
    ) {
        let x: Vec<f64> = x.into_iter().map(f64::from).collect();
        let y: Vec<f64> = y.into_iter().map(f64::from).collect();
        let got = exact_p(&x, &y).unwrap();
        let (u, p) = permutation_p(&x, &y);
        prop_assert_eq!(got.u, u);
        prop_assert_eq!(got.p.to_bits(), p.to_bits());
    }

    #[test]
    fn leakage_shrinks_as_n_grows(
        train in proptest::collection::vec(proptest::collection::vec(0usize..4, 0..25), 1..4),
        test in proptest::collection::vec(proptest::collection::vec(0usize..4, 0..15), 1..8),
    ) {
        let words = ["red", "green", "blue", "Red"];
        let join = |v: &Vec<usize>| v.iter().map(|&i| words[i]).collect::<Vec<_>>().join(" ");
        let train: Vec<String> = train.iter().map(join).collect();
        let test: Vec<InstructionRecord> = test.iter().enumerate().map(|(i, v)| InstructionRecord::new(format!("t{i}"), join(v))).collect();
        let mut prev = 1.0;
        for n in 1..=14 {
            let f = ngram_overlap(&train, &test, n).unwrap().leaked_fraction;
            prop_assert!(f <= prev);
            prev = f;
        }
    }
}
