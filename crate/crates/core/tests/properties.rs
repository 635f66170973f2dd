use dib_core::decomposition::{build_base_expansion, decode_index};
use dib_core::info::empirical_mutual_information;
use dib_core::models::{init_classifier, Encoder, EncoderConfig, FamilySpec};
use dib_core::oracle::{exact_entropy, exact_mutual_information, exact_v_entropy, exact_v_information, TabularFamily};
use dib_core::probes::{kendall_tau, sign_test};
use dib_core::tensor::Tensor;
use proptest::prelude::*;

fn labels_strategy() -> impl Strategy<Value = (Vec<usize>, usize)> {
    (2usize..5).prop_flat_map(|c| (prop::collection::vec(0..c, c..60), Just(c))).prop_filter("every class present", |(l, c)| (0..*c).all(|k| l.contains(&k)))
}

/// Tau-b by enumerating every pair.
fn brute_tau_b(a: &[f64], b: &[f64]) -> Option<f64> {
    let (mut conc, mut disc, mut tie_a, mut tie_b) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let s = (a[i] - a[j]).signum() * (b[i] - b[j]).signum();
            let ta = a[i] == a[j];
            let tb = b[i] == b[j];
            if ta {
                tie_a += 1.0;
            }
            if tb {
                tie_b += 1.0;
            }
            if !ta && !tb {
                if s > 0.0 {
                    conc += 1.0;
                } else {
                    disc += 1.0;
                }
            }
        }
    }
    let n0 = (a.len() * (a.len() - 1) / 2) as f64;
    let denom = ((n0 - tie_a) * (n0 - tie_b)).sqrt();
    (denom > 0.0).then(|| (conc - disc) / denom)
}

fn joint_strategy(ny: usize, nz: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(0.0f64..1.0, ny * nz).prop_filter_map("non-zero mass", move |w| {
        let total: f64 = w.iter().sum();
        (total > 1e-3).then(|| w.chunks(nz).map(|r| r.iter().map(|v| v / total).collect()).collect())
    })
}

fn shannon_conditional(joint: &[Vec<f64>]) -> f64 {
    let nz = joint[0].len();
    (0..nz)
        .map(|z| {
            let col: Vec<f64> = joint.iter().map(|r| r[z]).collect();
            let m: f64 = col.iter().sum();
            if m <= 0.0 {
                0.0
            } else {
                m * exact_entropy(&col.iter().map(|v| v / m).collect::<Vec<_>>()).unwrap()
            }
        })
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn base_expansion_round_trips((labels, c) in labels_strategy()) {
        let plan = build_base_expansion(&labels, c).unwrap();
        let mut seen = std::collections::HashSet::new();
        for i in 0..labels.len() {
            prop_assert!(plan.row(i).iter().all(|&d| d < c));
            prop_assert_eq!(decode_index(&plan, i).unwrap(), plan.per_class_index[i]);
            prop_assert!(seen.insert((labels[i], plan.row(i).to_vec())));
        }
    }

    #[test]
    fn digit_columns_independent_on_power_classes(c in 2usize..4, d in 1u32..4) {
        let size = c.pow(d);
        let labels: Vec<usize> = (0..size * c).map(|i| i % c).collect();
        let plan = build_base_expansion(&labels, c).unwrap();
        prop_assert_eq!(plan.n_digits, d as usize);
        for y in 0..c {
            let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == y).collect();
            for a in 0..plan.n_digits {
                for b in a + 1..plan.n_digits {
                    let ca: Vec<usize> = rows.iter().map(|&i| plan.row(i)[a]).collect();
                    let cb: Vec<usize> = rows.iter().map(|&i| plan.row(i)[b]).collect();
                    prop_assert!(empirical_mutual_information(&ca, &cb).abs() < 1e-9);
                    // Exact counting: every digit pair occurs equally often.
                    let mut counts = vec![0usize; c * c];
                    for (&p, &q) in ca.iter().zip(&cb) {
                        counts[p * c + q] += 1;
                    }
                    prop_assert!(counts.iter().all(|&n| n == size / (c * c)));
                }
            }
        }
    }

    #[test]
    fn kendall_matches_pair_enumeration(pairs in prop::collection::vec((0u8..6, 0u8..6), 2..25)) {
        let a: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        let k = kendall_tau(&a, &b).unwrap();
        match brute_tau_b(&a, &b) {
            Some(t) => {
                prop_assert!(!k.undefined);
                prop_assert!((k.tau - t).abs() < 1e-12);
            }
            None => prop_assert!(k.undefined && k.tau == 0.0),
        }
        let neg: Vec<f64> = b.iter().map(|v| -v).collect();
        prop_assert!((kendall_tau(&a, &neg).unwrap().tau + k.tau).abs() < 1e-12);
        prop_assert!((kendall_tau(&b, &a).unwrap().tau - k.tau).abs() < 1e-12);
    }

    #[test]
    fn sign_test_is_monotone(pos in 0usize..40, neg in 0usize..40) {
        let p = sign_test(pos, neg).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!(sign_test(pos + 1, neg).unwrap() <= p + 1e-12);
    }

    #[test]
    fn exact_v_quantities_are_ordered(joint in joint_strategy(2, 3)) {
        let coarse = TabularFamily::grid(2, 0.5, &[]).unwrap();
        let mid = TabularFamily::grid(2, 0.25, &[]).unwrap();
        let fine = TabularFamily::grid(2, 0.05, &[]).unwrap();
        let (hc, hm, hf) = (exact_v_entropy(&joint, &coarse).unwrap(), exact_v_entropy(&joint, &mid).unwrap(), exact_v_entropy(&joint, &fine).unwrap());
        prop_assert!(hc >= hm - 1e-12 && hm >= hf - 1e-12);
        prop_assert!(hf >= shannon_conditional(&joint) - 1e-12);
        for fam in [&coarse, &mid, &fine] {
            prop_assert!(exact_v_information(&joint, fam).unwrap() >= -1e-12);
        }
        prop_assert!(exact_mutual_information(&joint) >= -1e-12);
    }

    #[test]
    fn product_joint_has_no_information(p in 0.01f64..0.99, q in prop::collection::vec(0.01f64..1.0, 3)) {
        let qs: f64 = q.iter().sum();
        let joint: Vec<Vec<f64>> = [p, 1.0 - p].iter().map(|&a| q.iter().map(|b| a * b / qs).collect()).collect();
        prop_assert!(exact_mutual_information(&joint).abs() < 1e-12);
        let with_marginal = TabularFamily::grid(2, 0.1, &[vec![p, 1.0 - p]]).unwrap();
        prop_assert!(exact_v_information(&joint, &with_marginal).unwrap().abs() < 1e-12);
    }

    #[test]
    fn predictions_are_distributions(seed in 0u64..1000, scale in 0.1f64..100.0) {
        let c = init_classifier(&FamilySpec::mlp(3, &[8], 4), seed).unwrap();
        let z = Tensor::matrix(2, 3, vec![scale, -scale, 0.5, -1.0, 2.0 * scale, 0.0]).unwrap();
        let p = c.predict(&z, false, seed).unwrap();
        for r in 0..2 {
            prop_assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.row(r).iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn normalized_encoder_output_is_bounded(seed in 0u64..1000, spread in 0.01f64..1000.0, stochastic: bool) {
        let mut cfg = EncoderConfig::new(4, 3);
        cfg.hidden_widths = vec![8];
        cfg.stochastic = stochastic;
        let e = Encoder::init(&cfg, seed).unwrap();
        let x = Tensor::matrix(6, 4, (0..24).map(|i| ((i * 37 % 11) as f64 - 5.0) * spread).collect()).unwrap();
        for z in e.encode(&x, 2, seed).unwrap() {
            for col in 0..3 {
                let v: Vec<f64> = (0..6).map(|r| z.get(r, col)).collect();
                let m = v.iter().sum::<f64>() / 6.0;
                let sd = (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 6.0).sqrt();
                prop_assert!(sd <= 1.0 + 1e-6, "{}", sd);
            }
        }
    }
}

#[test]
fn digit_example_and_large_round_trip() {
    assert_eq!(dib_core::decomposition::to_digits(627, 10, 4), vec![0, 6, 2, 7]);
    let labels: Vec<usize> = (0..500).map(|i| (i * 7) % 10).collect();
    let plan = build_base_expansion(&labels, 10).unwrap();
    for i in 0..500 {
        assert_eq!(decode_index(&plan, i).unwrap(), plan.per_class_index[i]);
    }
}
