mod common;

use std::sync::OnceLock;

use proptest::prelude::*;
use rand::Rng;
use weightgen::codec::{apply_permutations, detokenize, layer_stats, random_permutations, tokenize, LayerLayout, LayerStats};
use weightgen::datasets::{parse_idx, serialize_idx, synth_dataset, IdxArray, ImageDataset};
use weightgen::evalharness::analysis::Histogram;
use weightgen::evalharness::redistribute_weights;
use weightgen::evalharness::stats::{bootstrap_median_ci, median, mwu_test};
use weightgen::hyperae::format::{read_wza, read_wze, write_wza, write_wze};
use weightgen::hyperae::{loss_lwln, loss_mse, r_squared, train_on, AeConfig, HyperAe};
use weightgen::rng::stream;
use weightgen::samplers::{kde_fit, select_anchors, Bandwidth};
use weightgen::zoo::model::{flatten_store, to_store};
use weightgen::zoo::wts::{layers_of, read_wts, write_wts};
use weightgen::zoo::{init_weights, logits, Activation, ArchKind, ArchSpec, Architecture, InitScheme};

fn table3() -> Architecture {
    Architecture::table3(1, Activation::Tanh).unwrap()
}

fn random_vector(arch: &Architecture, seed: u64) -> Vec<f32> {
    let mut rng = stream(seed, "prop-vector");
    (0..arch.param_count()).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
}

fn rows(seed: u64, n: usize, d: usize) -> Vec<Vec<f32>> {
    let mut rng = stream(seed, "prop-rows");
    (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).collect()
}

fn images() -> &'static ImageDataset {
    static DS: OnceLock<ImageDataset> = OnceLock::new();
    DS.get_or_init(|| synth_dataset(5, 64, 10, 1).unwrap())
}

/// A one-epoch autoencoder shared by the tests that only need a valid one.
fn tiny_ae() -> &'static HyperAe {
    static AE: OnceLock<HyperAe> = OnceLock::new();
    AE.get_or_init(|| {
        let cfg = AeConfig {
            d_token: 16,
            d_hidden: 32,
            n_layers: 1,
            n_heads: 2,
            d_z: 8,
            epochs: 1,
            batch_size: 8,
            proj_hidden: 16,
            proj_dim: 8,
            ..AeConfig::default()
        };
        let arch = table3();
        let v: Vec<Vec<f32>> = (0..12).map(|s| init_weights(&arch, InitScheme::KaimingUniform, s)).collect();
        train_on(&cfg, &ArchSpec::table3(1, Activation::Tanh), &v, &[]).unwrap()
    })
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn tokens_and_store_round_trip(seed in any::<u64>()) {
        let arch = table3();
        let layout = LayerLayout::of(&arch);
        let v = random_vector(&arch, seed);
        prop_assert_eq!(bits(&detokenize(&tokenize(&v, &layout).unwrap(), &layout).unwrap()), bits(&v));
        prop_assert_eq!(bits(&flatten_store(&to_store(&arch, &v).unwrap())), bits(&v));
    }

    #[test]
    fn permutations_preserve_function_and_invert(seed in any::<u64>()) {
        let arch = table3();
        let layout = LayerLayout::of(&arch);
        let v = init_weights(&arch, InitScheme::KaimingUniform, seed);
        let perms = random_permutations(&layout, seed);
        let p = apply_permutations(&v, &layout, &perms).unwrap();
        let (a, b) = (logits(&arch, &v, images()).unwrap(), logits(&arch, &p, images()).unwrap());
        let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0f32, f32::max);
        prop_assert!(worst <= 1e-4, "logit drift {}", worst);
        let inverse: Vec<Vec<usize>> = perms
            .iter()
            .map(|q| {
                let mut inv = vec![0; q.len()];
                for (new, &old) in q.iter().enumerate() {
                    inv[old] = new;
                }
                inv
            })
            .collect();
        prop_assert_eq!(bits(&apply_permutations(&p, &layout, &inverse).unwrap()), bits(&v));
    }

    #[test]
    fn normalized_loss_identities(seed in any::<u64>(), s in 0.1f64..10.0) {
        let arch = table3();
        let layout = LayerLayout::of(&arch);
        let (p, t) = (rows(seed, 3, arch.param_count()), rows(seed ^ 1, 3, arch.param_count()));
        let mse = loss_mse(&p, &t).unwrap();
        let unit = LayerStats::unit(layout.layers.len());
        let lw = loss_lwln(&p, &t, &unit, &layout).unwrap();
        prop_assert!((lw - mse).abs() <= 1e-6 * mse);
        let scaled = LayerStats { mean: unit.mean.clone(), std: vec![s; layout.layers.len()] };
        let ls = loss_lwln(&p, &t, &scaled, &layout).unwrap();
        prop_assert!((ls - mse / (s * s)).abs() <= 1e-9 * mse / (s * s));
    }

    #[test]
    fn r_squared_endpoints(seed in any::<u64>()) {
        let w = rows(seed, 4, 50);
        let mean: Vec<f32> = (0..50).map(|j| w.iter().map(|r| r[j]).sum::<f32>() / 4.0).collect();
        prop_assert_eq!(r_squared(&w, &w, &mean).unwrap(), 1.0);
        prop_assert_eq!(r_squared(&vec![mean.clone(); 4], &w, &mean).unwrap(), 0.0);
    }

    #[test]
    fn kde_density_integrates_to_one(seed in any::<u64>(), h in 0.01f32..0.5, n in 2usize..40) {
        let anchors = rows(seed, n, 2);
        let kde = kde_fit(&anchors, Bandwidth::Scalar(h)).unwrap();
        for j in 0..2 {
            let (lo, hi) = (-1.0 - 10.0 * h as f64, 1.0 + 10.0 * h as f64);
            let steps = 20_000;
            let dx = (hi - lo) / steps as f64;
            let mut s = 0.5 * (kde.density_dim(j, lo) + kde.density_dim(j, hi));
            for i in 1..steps {
                s += kde.density_dim(j, lo + i as f64 * dx);
            }
            prop_assert!((s * dx - 1.0).abs() <= 0.01, "integral {}", s * dx);
        }
    }

    #[test]
    fn kde_samples_stay_in_box(seed in any::<u64>(), n in 2usize..20) {
        let kde = kde_fit(&rows(seed, n, 4), Bandwidth::Silverman).unwrap();
        let s = kde.sample(50, seed);
        prop_assert!(s.iter().flatten().all(|v| v.abs() <= 1.0));
        prop_assert_eq!(s, kde.sample(50, seed));
    }

    #[test]
    fn mwu_agrees_with_enumeration(
        a in prop::collection::vec(0u8..6, 3..=8),
        b in prop::collection::vec(0u8..6, 3..=8),
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = (a.into_iter().map(f64::from).collect(), b.into_iter().map(f64::from).collect());
        let r = mwu_test(&a, &b).unwrap();
        let (u, p, c) = common::oracle::mwu_enumerate(&a, &b);
        prop_assert_eq!(r.u, u);
        if a.iter().chain(&b).any(|&v| v != a[0]) {
            prop_assert!((r.p_value - p).abs() < 1e-12, "p {} vs {}", r.p_value, p);
            prop_assert_eq!(r.cles, c);
        }
    }

    #[test]
    fn anchors_keep_the_best(seed in any::<u64>(), n in 1usize..60, f in 0.05f32..1.0) {
        let mut rng = stream(seed, "acc");
        let acc: Vec<f32> = (0..n).map(|_| (rng.gen_range(0..20) as f32) / 20.0).collect();
        let emb: Vec<Vec<f32>> = (0..n).map(|i| vec![i as f32]).collect();
        let s = select_anchors(&emb, &acc, f).unwrap();
        prop_assert!(s.embeddings.len() >= ((f as f64 * n as f64) - 1e-6).ceil() as usize);
        let kept_min = s.accuracies.iter().cloned().fold(f32::INFINITY, f32::min);
        let dropped_max = (0..n).filter(|&i| !s.embeddings.contains(&emb[i])).map(|i| acc[i]).fold(f32::NEG_INFINITY, f32::max);
        prop_assert!(kept_min > dropped_max);
    }

    #[test]
    fn redistribution_conserves_reference_values(seed in any::<u64>()) {
        let src = table3();
        let v = random_vector(&src, seed);
        let sr = src.layer_ranges();
        // Skip variant: every source layer lands unchanged in its counterpart.
        let skip = ArchSpec { kind: ArchKind::ResSkip3, ..ArchSpec::table3(1, Activation::Tanh) }.build().unwrap();
        let w = redistribute_weights(&v, &src, &skip, InitScheme::Uniform, seed).unwrap();
        let dr = skip.layer_ranges();
        let reference: Vec<usize> = (0..skip.layers.len()).filter(|&i| !skip.layers[i].extra).collect();
        prop_assert_eq!(reference.len(), sr.len());
        for (s, &d) in reference.iter().enumerate() {
            prop_assert_eq!(&w[dr[d].0..dr[d].1], &v[sr[s].0..sr[s].1]);
        }
        // Four-conv variant: its conv region is a prefix of the source's.
        let c4 = ArchSpec { kind: ArchKind::Conv4, ..ArchSpec::table3(1, Activation::Tanh) }.build().unwrap();
        let w = redistribute_weights(&v, &src, &c4, InitScheme::Uniform, seed).unwrap();
        prop_assert_eq!(w.len(), c4.param_count());
        let cr = c4.layer_ranges();
        let conv_end = cr[3].1;
        prop_assert_eq!(&w[..conv_end], &v[..conv_end]);
    }

    #[test]
    fn wze_and_wts_round_trip(seed in any::<u64>(), n in 0usize..6, d in 1usize..9) {
        let r = rows(seed, n, d);
        let (dim, back) = read_wze(&write_wze(&r, d).unwrap()).unwrap();
        prop_assert_eq!(dim, d);
        prop_assert_eq!(back, r);
        let arch = table3();
        let v = random_vector(&arch, seed);
        let (_, got) = read_wts(&write_wts(&layers_of(&arch), &v).unwrap()).unwrap();
        prop_assert_eq!(bits(&got), bits(&v));
    }

    #[test]
    fn idx_round_trip(d0 in 1usize..5, d1 in 1usize..5, d2 in 1usize..5, seed in any::<u64>()) {
        let mut rng = stream(seed, "idx");
        let data: Vec<u8> = (0..d0 * d1 * d2).map(|_| rng.gen()).collect();
        let a = IdxArray::new(vec![d0, d1, d2], data).unwrap();
        let bytes = serialize_idx(&a);
        prop_assert_eq!(&parse_idx(&bytes).unwrap(), &a);
        prop_assert_eq!(serialize_idx(&parse_idx(&bytes).unwrap()), bytes);
    }

    #[test]
    fn histogram_counts_in_range(values in prop::collection::vec(-2.0f64..2.0, 0..200), bins in 1usize..30) {
        let h = Histogram::new(&values, -1.0, 1.0, bins);
        prop_assert_eq!(h.total(), values.iter().filter(|v| (-1.0..=1.0).contains(*v)).count());
        prop_assert_eq!(h.edges.len(), bins + 1);
    }

    #[test]
    fn embeddings_stay_in_open_box(seed in any::<u64>()) {
        let ae = tiny_ae();
        let arch = table3();
        let v: Vec<Vec<f32>> = (0..4).map(|i| random_vector(&arch, seed.wrapping_add(i)).iter().map(|x| x * 10.0).collect()).collect();
        let z = ae.encode(&v).unwrap();
        prop_assert!(z.iter().flatten().all(|x| x.abs() < 1.0));
    }
}

#[test]
fn mwu_exhaustive_over_small_sizes() {
    let mut rng = stream(3, "mwu-sizes");
    for n1 in 3..=8 {
        for n2 in 3..=8 {
            for _ in 0..3 {
                let a: Vec<f64> = (0..n1).map(|_| rng.gen_range(0..7) as f64).collect();
                let b: Vec<f64> = (0..n2).map(|_| rng.gen_range(0..7) as f64).collect();
                let r = mwu_test(&a, &b).unwrap();
                let (_, p, c) = common::oracle::mwu_enumerate(&a, &b);
                assert!(r.exact);
                assert!((r.p_value - p).abs() < 1e-12, "{n1}x{n2}: {} vs {p}", r.p_value);
                assert_eq!(r.cles, c);
            }
        }
    }
}

#[test]
fn bootstrap_interval_coverage() {
    // Median of a standard normal is 0; nominal coverage is 95%.
    let mut rng = stream(11, "coverage");
    let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
    let trials = 200;
    let mut hits = 0;
    for t in 0..trials {
        let x: Vec<f64> = (0..41).map(|_| rng.sample(normal)).collect();
        let (lo, hi) = bootstrap_median_ci(&x, 1000, t);
        assert!(lo <= median(&x) && median(&x) <= hi);
        if lo <= 0.0 && 0.0 <= hi {
            hits += 1;
        }
    }
    let rate = hits as f64 / trials as f64;
    assert!((0.88..=0.995).contains(&rate), "coverage {rate}");
}

#[test]
fn autoencoder_checkpoint_round_trip() {
    let ae = tiny_ae();
    let bytes = write_wza(ae).unwrap();
    let back = read_wza(&bytes).unwrap();
    assert_eq!(write_wza(&back).unwrap(), bytes);
    let z = rows(2, 3, ae.d_z());
    let (a, b) = (ae.decode(&z).unwrap(), back.decode(&z).unwrap());
    assert_eq!(a, b);
}

#[test]
fn layer_stats_of_constant_layers_hit_floor() {
    let arch = table3();
    let layout = LayerLayout::of(&arch);
    let v = vec![vec![0.5; arch.param_count()]; 3];
    let s = layer_stats(&v, &layout).unwrap();
    assert!(s.std.iter().all(|&x| x == weightgen::codec::SIGMA_FLOOR));
    assert!(s.mean.iter().all(|&m| (m - 0.5).abs() < 1e-12));
}

#[test]
fn autoencoder_learns_permutation_invariant_structure() {
    // Every layer holds one per-model constant, so permutation views agree
    // and five numbers describe a model.
    let arch = table3();
    let layout = LayerLayout::of(&arch);
    let mut rng = stream(1, "learn");
    let mut draw = || -> Vec<f32> {
        let mut v = vec![0.0; layout.total];
        for e in &layout.layers {
            let c: f32 = rng.gen_range(-0.5..0.5);
            v[e.offset..e.offset + e.extent].iter_mut().for_each(|x| *x = c);
        }
        v
    };
    let train: Vec<Vec<f32>> = (0..64).map(|_| draw()).collect();
    let val: Vec<Vec<f32>> = (0..16).map(|_| draw()).collect();
    let cfg = AeConfig { epochs: 15, ..AeConfig::default() };
    let ae = train_on(&cfg, &ArchSpec::table3(1, Activation::Tanh), &train, &val).unwrap();
    assert!(ae.log.best_val_r2 > 0.6, "val R2 {}", ae.log.best_val_r2);
}
