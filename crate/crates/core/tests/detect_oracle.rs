use cifs_core::es::{detect_es, Detection};
use proptest::prelude::*;

/// Every eligible `t` checked against its full window.
fn oracle(m: &[f64], s: usize) -> Detection {
    let total = m.len();
    let candidates: Vec<usize> = (1..=total)
        .filter(|&t| t + s <= total && (t..=t + s).all(|tau| m[t - 1] <= m[tau - 1]))
        .collect();
    match candidates.first() {
        Some(&t) => Detection { t_star: t, candidates, fallback: false },
        None => Detection { candidates, t_star: total, fallback: true },
    }
}

fn sequence() -> impl Strategy<Value = (Vec<f64>, usize)> {
    (5usize..50).prop_flat_map(|s| {
        let values = prop_oneof![
            // small alphabet produces many ties
            prop::collection::vec((0u8..6).prop_map(f64::from), s + 1..200),
            prop::collection::vec(-1e3f64..1e3, s + 1..200),
            // strictly decreasing: nothing qualifies
            (s + 1..200).prop_map(|n| (0..n).map(|i| -(i as f64)).collect()),
        ];
        (values, Just(s))
    })
}

#[test]
fn documented_examples() {
    let d = detect_es(&[5.0, 4.0, 3.0, 4.0, 5.0, 6.0], 2).unwrap();
    assert_eq!(d, Detection { candidates: vec![3, 4], t_star: 3, fallback: false });
    let d = detect_es(&[5.0, 4.0, 3.0, 2.0, 1.0], 2).unwrap();
    assert_eq!(d, Detection { candidates: vec![], t_star: 5, fallback: true });
    let d = detect_es(&[1.0; 6], 2).unwrap();
    assert_eq!(d.t_star, 1);
    assert!(detect_es(&[1.0, 2.0], 2).is_err());
    assert!(detect_es(&[1.0, 2.0], 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn equals_window_scan((m, s) in sequence()) {
        prop_assert_eq!(detect_es(&m, s).unwrap(), oracle(&m, s));
    }

    #[test]
    fn invariant_under_positive_scaling((m, s) in sequence(), k in 1e-3f64..1e3) {
        let scaled: Vec<f64> = m.iter().map(|v| v * k).collect();
        let a = detect_es(&m, s).unwrap();
        let b = detect_es(&scaled, s).unwrap();
        prop_assert_eq!(a.t_star, b.t_star);
        prop_assert_eq!(a.fallback, b.fallback);
    }

    #[test]
    fn t_star_is_a_strict_running_minimum((m, s) in sequence()) {
        let d = detect_es(&m, s).unwrap();
        if !d.fallback {
            let v = m[d.t_star - 1];
            prop_assert!(m[..d.t_star - 1].iter().all(|&p| p > v));
        }
    }
}
