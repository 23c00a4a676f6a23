use std::collections::{HashMap, HashSet};

use chrono::{Days, NaiveDate};
use density_core::baseline::extract_features;
use density_core::cnn::{augment, AugmentationPolicy, MultiColumnConfig, MultiColumnNet};
use density_core::corpus::{
    parse_report, temporal_split, ExamRecord, Manifest, SplitFractions, ViewPaths,
};
use density_core::evalkit::{
    cohen_kappa, confusion_matrix, roc_and_auc, top_k_accuracy, ReaderRanking,
};
use density_core::numerics::{
    adam_step, backward, forward, softmax, Gradients, LayerSpec, ParamSet, Tensor,
};
use density_core::synthgen::{compose_report, plan_corpus, PhantomConfig};
use density_core::types::{BiRads, DensityClass, ViewImage, ViewKind};
use proptest::prelude::*;
use proptest::sample::subsequence;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn prob_rows(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.0f64..1.0, 4), n).prop_map(|rows| {
        rows.into_iter()
            .map(|r| {
                let s: f64 = r.iter().sum::<f64>() + 1e-9;
                r.iter().map(|v| (v + 1e-9 / 4.0) / s).collect()
            })
            .collect()
    })
}

fn view(kind: ViewKind, h: usize, w: usize, pixels: Vec<u16>) -> ViewImage {
    ViewImage::new(kind, h, w, pixels)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn softmax_is_a_distribution(x in prop::collection::vec(-700.0f64..700.0, 1..12)) {
        let p = softmax(&x);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn forward_is_bit_deterministic(seed in any::<u64>(), c in 1usize..3, k in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = LayerSpec::conv(c, 2, k);
        let w = density_core::numerics::glorot_init(&[2, c, k, k], &mut rng).unwrap();
        let b = Tensor::vector(vec![0.1, -0.2]);
        let x = density_core::numerics::glorot_init(&[c, 6, 7], &mut rng).unwrap();
        let a = forward(&layer, &[&w, &b], &x).unwrap();
        let again = forward(&layer, &[&w, &b], &x).unwrap();
        prop_assert!(a.data().iter().zip(again.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn adam_with_zero_gradients_keeps_values(
        values in prop::collection::vec(-5.0f64..5.0, 1..20),
        steps in 1usize..5,
        lr in 1e-5f64..1.0,
    ) {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::vector(values.clone())).unwrap();
        let zero = Gradients::from([("w".to_string(), Tensor::zeros(&[values.len()]))]);
        for _ in 0..steps {
            adam_step(&mut params, &zero, lr).unwrap();
        }
        prop_assert_eq!(params.get("w").unwrap().data(), values.as_slice());
    }

    #[test]
    fn disjoint_max_pool_conserves_gradient(
        c in 1usize..3,
        oh in 1usize..4,
        ow in 1usize..4,
        size in 1usize..4,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = LayerSpec::MaxPool { size, stride: size };
        let x = density_core::numerics::glorot_init(&[c, oh * size, ow * size], &mut rng).unwrap();
        let g = density_core::numerics::glorot_init(&[c, oh, ow], &mut rng).unwrap();
        let back = backward(&layer, &[], &x, &g).unwrap();
        prop_assert!((back.input.sum() - g.sum()).abs() <= 1e-12);
        let nonzero = back.input.data().iter().filter(|&&v| v != 0.0).count();
        prop_assert!(nonzero <= c * oh * ow);
    }

    #[test]
    fn auc_equals_mann_whitney(
        pairs in prop::collection::vec((0u8..20, any::<bool>()), 2..200),
    ) {
        let scores: Vec<f64> = pairs.iter().map(|p| f64::from(p.0) / 3.0).collect();
        let mut truths: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        truths[0] = true;
        truths[1] = false;
        let mut wins = 0.0;
        let mut total = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if truths[i] && !truths[j] {
                    total += 1.0;
                    wins += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
                }
            }
        }
        let curve = roc_and_auc(&scores, &truths).unwrap();
        prop_assert!((curve.auc - wins / total).abs() <= 1e-12);
        let first = curve.points.first().unwrap();
        let last = curve.points.last().unwrap();
        prop_assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        prop_assert!(curve.points.windows(2).all(|w| w[0].fpr <= w[1].fpr && w[0].tpr <= w[1].tpr));
    }

    #[test]
    fn top_k_is_monotone_and_confusion_trace_is_top1(
        probs in prob_rows(30),
        truths in prop::collection::vec(0usize..4, 30),
    ) {
        let acc: Vec<f64> = (1..=4).map(|k| top_k_accuracy(&probs, &truths, k).unwrap()).collect();
        prop_assert!(acc.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(acc[3], 1.0);
        let m = confusion_matrix(&probs, &truths).unwrap();
        let trace: usize = (0..4).map(|i| m[i][i]).sum();
        prop_assert_eq!(trace as f64 / truths.len() as f64, acc[0]);
    }

    #[test]
    fn kappa_ignores_class_relabelling(
        a in prop::collection::vec(0usize..4, 10..60),
        noise in prop::collection::vec(0usize..4, 60),
        perm in Just([0usize, 1, 2, 3]).prop_shuffle(),
    ) {
        let b: Vec<usize> = a.iter().zip(&noise).map(|(&x, &n)| if n == 0 { (x + 1) % 4 } else { x }).collect();
        let relabel = |v: &[usize]| v.iter().map(|&x| perm[x]).collect::<Vec<_>>();
        match cohen_kappa(&a, &b, 4) {
            Ok(k) => {
                let k2 = cohen_kappa(&relabel(&a), &relabel(&b), 4).unwrap();
                prop_assert!((k - k2).abs() <= 1e-12);
            }
            Err(_) => prop_assert!(cohen_kappa(&relabel(&a), &relabel(&b), 4).is_err()),
        }
    }

    #[test]
    fn rankings_must_be_permutations(r in prop::array::uniform4(0usize..5)) {
        let mut sorted = r;
        sorted.sort_unstable();
        let valid = sorted == [0, 1, 2, 3];
        prop_assert_eq!(ReaderRanking::new("r", "e", r).is_ok(), valid);
    }

    #[test]
    fn report_round_trips_density(class in 0usize..4, birads in 0u8..3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = DensityClass::from_index(class).unwrap();
        let text = compose_report(Some(d), Some(BiRads::new(birads).unwrap()), &mut rng);
        prop_assert_eq!(parse_report(&text).unwrap(), Some(d));
    }

    #[test]
    fn histograms_ignore_pixel_positions(
        pixels in prop::collection::vec(any::<u16>(), 48),
        order in Just((0..48usize).collect::<Vec<_>>()).prop_shuffle(),
        bins in prop::sample::select(vec![10usize, 20, 50, 100]),
    ) {
        let views: Vec<ViewImage> = ViewKind::ALL.iter().map(|&k| view(k, 6, 8, pixels.clone())).collect();
        let shuffled_pixels: Vec<u16> = order.iter().map(|&i| pixels[i]).collect();
        let shuffled: Vec<ViewImage> = ViewKind::ALL.iter().map(|&k| view(k, 6, 8, shuffled_pixels.clone())).collect();
        let a = extract_features(&views, bins).unwrap();
        let b = extract_features(&shuffled, bins).unwrap();
        prop_assert_eq!(&a.values, &b.values);
        prop_assert_eq!(a.values.len(), 4 * bins);
        for segment in a.values.chunks(bins) {
            prop_assert!((segment.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn augmentation_keeps_shape_and_range(
        h in 1usize..20,
        w in 1usize..20,
        seed in any::<u64>(),
        max_translation in 0usize..10,
        jitter in 0.0f64..0.5,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pixels: Vec<u16> = (0..h * w).map(|i| (i as u16).wrapping_mul(40503)).collect();
        let image = view(ViewKind::RightMlo, h, w, pixels);
        let policy = AugmentationPolicy { max_translation, intensity_jitter: jitter, enabled: true };
        for _ in 0..30 {
            let out = augment(&image, &policy, &mut rng);
            prop_assert_eq!((out.view, out.height, out.width), (image.view, h, w));
            prop_assert_eq!(out.pixels.len(), h * w);
        }
        let off = AugmentationPolicy { enabled: false, ..policy };
        prop_assert_eq!(augment(&image, &off, &mut rng), image);
    }

    #[test]
    fn split_invariants(
        exams in prop::collection::vec((0usize..30, 0u64..50), 1..120),
        order in any::<u64>(),
    ) {
        let epoch = NaiveDate::from_ymd_opt(2015, 6, 1).unwrap();
        let records: Vec<ExamRecord> = exams
            .iter()
            .enumerate()
            .map(|(i, &(p, d))| {
                let exam_id = format!("E{i:04}");
                ExamRecord {
                    views: ViewPaths::conventional(&exam_id),
                    exam_id,
                    patient_id: format!("P{p:02}"),
                    date: epoch + Days::new(d),
                    report: String::new(),
                }
            })
            .collect();
        let manifest = Manifest::new(records.clone()).unwrap();
        let split = temporal_split(&manifest, SplitFractions::default()).unwrap();
        let n: usize = records.iter().map(|r| r.patient_id.as_str()).collect::<HashSet<_>>().len();
        prop_assert_eq!(split.train.len(), 8 * n / 10);
        prop_assert_eq!(split.validation.len(), 9 * n / 10 - 8 * n / 10);
        prop_assert_eq!(split.test.len(), n - 9 * n / 10);
        let mut owner: HashMap<&str, usize> = HashMap::new();
        for (i, part) in [&split.train, &split.validation].iter().enumerate() {
            for p in part.iter() {
                prop_assert!(owner.insert(p.as_str(), i).is_none());
            }
        }
        for t in &split.test {
            prop_assert!(owner.insert(t.patient_id.as_str(), 2).is_none());
        }
        prop_assert_eq!(owner.len(), n);

        let mut rng = ChaCha8Rng::seed_from_u64(order);
        let mut shuffled = records;
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
        prop_assert_eq!(temporal_split(&Manifest::new(shuffled).unwrap(), SplitFractions::default()).unwrap(), split);
    }

    #[test]
    fn planned_corpora_are_well_formed(seed in any::<u64>(), patients in 1usize..40) {
        let config = PhantomConfig { seed, ..PhantomConfig::default() };
        let plans = plan_corpus(patients, 1..=4, &config).unwrap();
        let ids: HashSet<&str> = plans.iter().map(|p| p.exam_id.as_str()).collect();
        prop_assert_eq!(ids.len(), plans.len());
        let mut last: HashMap<&str, NaiveDate> = HashMap::new();
        for p in &plans {
            if let Some(prev) = last.insert(&p.patient_id, p.date) {
                prop_assert!(p.date > prev);
            }
        }
        prop_assert_eq!(plan_corpus(patients, 1..=4, &config).unwrap(), plans);
    }

    #[test]
    fn kept_subsequence_of_rankings_round_trips(
        keep in subsequence((0..12usize).collect::<Vec<_>>(), 1..12),
    ) {
        let rankings: Vec<ReaderRanking> = keep
            .iter()
            .map(|&i| ReaderRanking::new(format!("R{}", i % 2), format!("E{i:07}"), [i % 4, (i + 1) % 4, (i + 2) % 4, (i + 3) % 4]).unwrap())
            .collect();
        let mut buf = Vec::new();
        density_core::evalkit::write_rankings_csv(&mut buf, &rankings).unwrap();
        prop_assert_eq!(density_core::evalkit::read_rankings_csv(buf.as_slice()).unwrap(), rankings);
    }
}

/// With sharing, the column gradient is the sum of what four separate
/// columns holding the same weights would receive.
#[test]
fn shared_column_gradient_is_sum_over_views() {
    let mut shared_cfg = MultiColumnConfig::with_widths(32, 24, 4, [2, 2, 3], 4, 5);
    shared_cfg.share_columns = true;
    let mut split_cfg = shared_cfg.clone();
    split_cfg.share_columns = false;
    let shared = MultiColumnNet::new(shared_cfg).unwrap();
    let split = MultiColumnNet::new(split_cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let shared_params = shared.init_params(&mut rng).unwrap();
    let mut split_params = ParamSet::new();
    for (name, shape) in split.param_shapes() {
        let source = match name.strip_prefix("column") {
            Some(rest) if rest.as_bytes()[0].is_ascii_digit() => format!("column{}", &rest[1..]),
            _ => name.clone(),
        };
        let t = shared_params.get(&source).unwrap().clone();
        assert_eq!(t.shape(), shape.as_slice());
        split_params.insert(name, t).unwrap();
    }
    let inputs: [Tensor; 4] = std::array::from_fn(|v| {
        Tensor::new(
            vec![1, 32, 24],
            (0..32 * 24)
                .map(|i| ((i * (v + 3)) % 17) as f64 / 17.0)
                .collect(),
        )
        .unwrap()
    });
    let mut g_shared = Gradients::new();
    let mut g_split = Gradients::new();
    let l1 = shared
        .loss_and_gradients(&shared_params, inputs.clone(), 2, &mut g_shared)
        .unwrap();
    let l2 = split
        .loss_and_gradients(&split_params, inputs, 2, &mut g_split)
        .unwrap();
    assert_eq!(l1.to_bits(), l2.to_bits());
    for (name, g) in &g_shared {
        if let Some(rest) = name.strip_prefix("column.") {
            let mut sum = vec![0.0; g.len()];
            for v in 0..4 {
                for (s, x) in sum
                    .iter_mut()
                    .zip(g_split[&format!("column{v}.{rest}")].data())
                {
                    *s += x;
                }
            }
            for (a, b) in g.data().iter().zip(&sum) {
                assert!(
                    (a - b).abs() <= 1e-12 * (1.0 + b.abs()),
                    "{name}: {a} vs {b}"
                );
            }
        } else {
            assert_eq!(g.data(), g_split[name].data(), "{name}");
        }
    }
}
