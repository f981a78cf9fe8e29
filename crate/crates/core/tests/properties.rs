//! Property tests over randomly generated inputs.

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use selcl::datagen::{augment, inject_noise, make_blobs, AugmentationSpec, NoiseKind, NoiseSpec};
use selcl::evaluation::{example_precision, pair_precision};
use selcl::losses::{
    classification_loss, mixup_contrastive, similarity_loss, sup_contrastive, BatchView, MixedBatch,
};
use selcl::model::{softmax_rows, Architecture, Network, ProjectionKind};
use selcl::neighbors::{aggregate_with_similarities, PosteriorSource, SimilarityMatrix};
use selcl::selection::{
    build_pairs_from_confident, run_selection, select_confident_examples, select_confident_pairs, union_pairs,
    PairSet, SelectionConfig,
};
use selcl::trainer::{KnnLabels, RunConfig, WarmupKind};
use selcl::Matrix;

fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
    let data: Vec<Vec<f64>> = (0..rows)
        .map(|_| {
            let v: Vec<f64> = (0..cols).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    Matrix::from_rows(&data).unwrap()
}

/// Two views per origin in a shuffled layout, plus random cross-origin pairs.
fn random_batch(seed: u64, n: usize) -> (BatchView<f64>, PairSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut origin: Vec<usize> = (0..n).chain(0..n).collect();
    for i in (1..origin.len()).rev() {
        origin.swap(i, rng.random_range(0..=i));
    }
    let z = unit_rows(&mut rng, 2 * n, 4);
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < 0.3 {
                pairs.push((i, j));
            }
        }
    }
    (BatchView::new(z, origin).unwrap(), PairSet::from_pairs(pairs))
}

fn permuted(view: &BatchView<f64>, perm: &[usize]) -> BatchView<f64> {
    BatchView::new(view.z.select_rows(perm), perm.iter().map(|&p| view.origin[p]).collect()).unwrap()
}

fn shuffled(len: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..len).collect();
    for i in (1..len).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    perm
}

/// Unit embeddings, noisy labels and a neighbour count for a selection run.
fn selection_input() -> impl Strategy<Value = (Matrix<f64>, Vec<usize>, usize, usize)> {
    (4usize..30, 2usize..5, any::<u64>()).prop_flat_map(|(n, c, seed)| {
        (prop::collection::vec(0..c, n), 1..n).prop_map(move |(labels, k)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (unit_rows(&mut rng, n, 3), labels, c, k)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn pseudo_labels_are_permutation_equivariant((z, noisy, c, k) in selection_input(), pseed in any::<u64>()) {
        let n = noisy.len();
        let perm = shuffled(n, pseed);
        let base = aggregate_with_similarities(&SimilarityMatrix::from_rows(&z).unwrap(), &noisy, c, k, PosteriorSource::PseudoLabels).unwrap();
        let z_p = z.select_rows(&perm);
        let noisy_p: Vec<usize> = perm.iter().map(|&p| noisy[p]).collect();
        let moved = aggregate_with_similarities(&SimilarityMatrix::from_rows(&z_p).unwrap(), &noisy_p, c, k, PosteriorSource::PseudoLabels).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            prop_assert_eq!(moved.pseudo_labels[new], base.pseudo_labels[old]);
            prop_assert_eq!(moved.posterior.row(new), base.posterior.row(old));
        }
    }

    #[test]
    fn posterior_rows_are_neighbour_counts((z, noisy, c, k) in selection_input()) {
        let st = aggregate_with_similarities(&SimilarityMatrix::from_rows(&z).unwrap(), &noisy, c, k, PosteriorSource::PseudoLabels).unwrap();
        for row in st.posterior.iter_rows() {
            let counts: Vec<f64> = row.iter().map(|q| q * k as f64).collect();
            prop_assert!(counts.iter().all(|x| (x - x.round()).abs() < 1e-9));
            prop_assert_eq!(counts.iter().map(|x| x.round() as usize).sum::<usize>(), k);
        }
    }

    #[test]
    fn raising_alpha_never_shrinks_the_budget((z, noisy, c, k) in selection_input(), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let st = aggregate_with_similarities(&SimilarityMatrix::from_rows(&z).unwrap(), &noisy, c, k, PosteriorSource::PseudoLabels).unwrap();
        let (lo, hi) = (a.min(b), a.max(b));
        let small = select_confident_examples(&st, &noisy, c, lo).unwrap();
        let large = select_confident_examples(&st, &noisy, c, hi).unwrap();
        prop_assert!(small.n_sel <= large.n_sel);
        for (s, l) in small.per_class.iter().zip(&large.per_class) {
            prop_assert_eq!(&l[..s.len()], &s[..]);
        }
    }

    #[test]
    fn lowering_beta_never_shrinks_similarity_pairs((z, noisy, c, k) in selection_input(), alpha in 0.0f64..=1.0, a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let sims = SimilarityMatrix::from_rows(&z).unwrap();
        let st = aggregate_with_similarities(&sims, &noisy, c, k, PosteriorSource::PseudoLabels).unwrap();
        let conf = select_confident_examples(&st, &noisy, c, alpha).unwrap();
        let g_prime = build_pairs_from_confident(&conf, &noisy);
        let (lo, hi) = (a.min(b), a.max(b));
        let (wide, gamma_lo) = select_confident_pairs(&sims, &noisy, &g_prime, lo).unwrap();
        let (narrow, gamma_hi) = select_confident_pairs(&sims, &noisy, &g_prime, hi).unwrap();
        prop_assert!(gamma_lo <= gamma_hi);
        prop_assert!(narrow.is_subset_of(&wide));
    }

    #[test]
    fn union_obeys_inclusion_exclusion(a in prop::collection::btree_set((0usize..12, 0usize..12), 0..30), b in prop::collection::btree_set((0usize..12, 0usize..12), 0..30)) {
        let canon = |s: &BTreeSet<(usize, usize)>| -> BTreeSet<(usize, usize)> {
            s.iter().filter(|(i, j)| i != j).map(|&(i, j)| (i.min(j), i.max(j))).collect()
        };
        let (ca, cb) = (canon(&a), canon(&b));
        let u = union_pairs(&PairSet::from_pairs(ca.iter().copied()), &PairSet::from_pairs(cb.iter().copied()));
        prop_assert_eq!(u.len(), ca.len() + cb.len() - ca.intersection(&cb).count());
        prop_assert!(u.iter().all(|(i, j)| i < j));
    }

    #[test]
    fn precisions_are_percentages((z, noisy, c, k) in selection_input(), alpha in 0.0f64..=1.0, beta in 0.0f64..=1.0, tseed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(tseed);
        let truth: Vec<usize> = noisy.iter().map(|&y| if rng.random::<f64>() < 0.3 { rng.random_range(0..c) } else { y }).collect();
        let cfg = SelectionConfig { alpha, beta, k, posterior_source: PosteriorSource::PseudoLabels };
        let st = run_selection(&SimilarityMatrix::from_rows(&z).unwrap(), &noisy, c, &cfg, 0).unwrap();
        for p in [example_precision(&st.confident, &truth, &noisy), pair_precision(&st.g, &truth)] {
            prop_assert!((0.0..=100.0).contains(&p.percent));
        }
    }

    #[test]
    fn sup_contrastive_ignores_batch_order(seed in any::<u64>(), n in 2usize..7, pseed in any::<u64>()) {
        let (view, pairs) = random_batch(seed, n);
        let perm = shuffled(2 * n, pseed);
        let a = sup_contrastive(&view, &pairs, 0.1).unwrap();
        let b = sup_contrastive(&permuted(&view, &perm), &pairs, 0.1).unwrap();
        prop_assert!((a.value - b.value).abs() <= 1e-10 * a.value.abs().max(1.0));
        for (new, &old) in perm.iter().enumerate() {
            for (x, y) in b.grad.row(new).iter().zip(a.grad.row(old)) {
                prop_assert!((x - y).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn losses_are_finite_and_nonnegative(seed in any::<u64>(), n in 2usize..7, lambda in 0.0f64..=1.0, c in 2usize..5) {
        let (view, pairs) = random_batch(seed, n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let partner: Vec<usize> = (0..2 * n).map(|_| rng.random_range(0..n)).collect();
        let sup = sup_contrastive(&view, &pairs, 0.1).unwrap().value;
        let mix = mixup_contrastive(&MixedBatch::new(view.clone(), partner, lambda).unwrap(), &pairs, 0.1).unwrap().value;
        let logits = Matrix::from_vec(2 * n, c, (0..2 * n * c).map(|_| rng.sample::<f64, _>(StandardNormal) * 5.0).collect()).unwrap();
        let p = softmax_rows(&logits);
        let targets: Vec<(usize, usize)> = (0..2 * n).map(|r| (r, rng.random_range(0..c))).collect();
        let cls = classification_loss(&p, &targets).value;
        let sim = similarity_loss(&p, &view.origin, &pairs).unwrap().value;
        for v in [sup, mix, cls, sim] {
            prop_assert!(v.is_finite() && v >= 0.0, "loss {v}");
        }
    }

    #[test]
    fn forward_is_bitwise_repeatable(seed in any::<u64>(), rows in 1usize..8, mlp in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = Architecture {
            input_dim: 5,
            hidden_dim: 7,
            proj_dim: 3,
            num_classes: 3,
            projection: if mlp { ProjectionKind::Mlp } else { ProjectionKind::Linear },
        };
        let net = Network::<f64>::new(arch, &mut rng).unwrap();
        let x = Matrix::from_vec(rows, 5, (0..rows * 5).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        prop_assert_eq!(a.z.as_slice(), b.z.as_slice());
        prop_assert_eq!(a.p.as_slice(), b.p.as_slice());
        for row in a.p.iter_rows() {
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn identity_augmentation_is_identity(x in prop::collection::vec(-1e3f64..1e3, 0..20), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert_eq!(augment(&x, &AugmentationSpec::IDENTITY, &mut rng), x);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn noise_only_touches_train_noisy_labels(n in 8usize..120, c in 2usize..6, rate in 0.0f64..=1.0, asym in any::<bool>(), seed in any::<u64>()) {
        let clean = make_blobs::<f64>(n.max(c), c, 4, 0.5, seed).unwrap();
        let kind = if asym { NoiseKind::Asymmetric } else { NoiseKind::Symmetric };
        let spec = NoiseSpec { kind, rate, asym_map: None, seed: seed.wrapping_add(1) };
        let noisy = inject_noise(&clean, &spec).unwrap();
        prop_assert_eq!(noisy.instances(), clean.instances());
        prop_assert_eq!(noisy.true_labels(), clean.true_labels());
        prop_assert_eq!(noisy.splits(), clean.splits());
        for i in clean.test_indices() {
            prop_assert_eq!(noisy.noisy_labels()[i], clean.true_labels()[i]);
        }
        let again = inject_noise(&clean, &spec).unwrap();
        prop_assert_eq!(again.noisy_labels(), noisy.noisy_labels());
    }

    #[test]
    fn config_survives_json(
        alpha in 0.0f64..=1.0,
        beta in 0.0f64..=1.0,
        lambda_s in 1e-5f64..1.0,
        tau in 0.01f64..1.0,
        t_warm in 1usize..5,
        extra in 0usize..20,
        seed in any::<u64>(),
        supervised in any::<bool>(),
        pseudo in any::<bool>(),
        schedule in prop::collection::vec((1usize..50, 0.01f64..1.0), 0..3),
    ) {
        let cfg = RunConfig {
            alpha,
            beta,
            lambda_s,
            tau,
            t_warm,
            t_max: t_warm + extra + 1,
            seed,
            warmup_kind: if supervised { WarmupKind::Supervised } else { WarmupKind::Unsupervised },
            knn_labels: if pseudo { KnnLabels::Pseudo } else { KnnLabels::Noisy },
            lr_schedule: schedule,
            ..RunConfig::default()
        };
        let once = RunConfig::from_json_str(&cfg.to_json_pretty()).unwrap();
        prop_assert_eq!(&once, &cfg);
        let twice = RunConfig::from_json_str(&once.to_json_pretty()).unwrap();
        prop_assert_eq!(twice, once);
    }
}

/// Well-separated clusters with correct labels: every pseudo-label agrees.
#[test]
fn clean_separated_clusters_keep_their_labels() {
    for seed in 0..5 {
        let ds = make_blobs::<f64>(120, 4, 8, 0.1, seed).unwrap();
        let normed: Vec<Vec<f64>> = ds
            .instances()
            .iter_rows()
            .map(|r| {
                let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                r.iter().map(|v| v / norm).collect()
            })
            .collect();
        let sims = SimilarityMatrix::from_rows(&Matrix::from_rows(&normed).unwrap()).unwrap();
        let st = aggregate_with_similarities(&sims, ds.noisy_labels(), 4, 20, PosteriorSource::PseudoLabels).unwrap();
        assert_eq!(st.pseudo_labels, ds.noisy_labels());
    }
}
