use loopgbs::cert::fixtures::jan_12;
use loopgbs::gaussian::{DetectorAssignment, InputKind, LossModel};
use loopgbs::hafnian::{enumerate_distribution, OutcomePattern};
use loopgbs::orbits::{feature_vectors, orbit_histogram, orbit_of, Orbit, OrbitCounts};
use loopgbs::pipeline::Device;
use loopgbs::sampling::{sample_classical, SampleSet, SamplerOptions};
use loopgbs::tdm::{CircuitProgram, LoopSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn opts() -> SamplerOptions {
    SamplerOptions { pnr_cutoff: 8, threads: 1 }
}

fn three_mode_device() -> Device {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let spec = LoopSpec::new(vec![1, 2], vec![0.4, -1.1]).unwrap();
    let program = CircuitProgram::random(spec, 3, 0, &mut rng).unwrap();
    let loss = LossModel {
        common_efficiency: 0.8,
        loop_efficiencies: vec![0.9, 0.85],
        channel_efficiencies: vec![1.0, 0.95, 0.9],
        detector_assignment: DetectorAssignment::Cyclic(3),
    };
    Device::new(program, loss).unwrap()
}

#[test]
fn thermal_orbit_frequencies_match_exact_conditionals() {
    let device = three_mode_device();
    let s = 0.8;
    let exact = enumerate_distribution(&device.output_state(InputKind::Thermal, s).unwrap(), 8).unwrap();
    let mut p_11 = 0.0;
    let mut p_2 = 0.0;
    for (pattern, p) in &exact.entries {
        if pattern.total() == 2 {
            if pattern.counts.contains(&2) {
                p_2 += p;
            } else {
                p_11 += p;
            }
        }
    }
    let cond = p_11 / (p_11 + p_2);

    let set = sample_classical(InputKind::Thermal, &device, s, 100_000, 77, opts()).unwrap();
    let h = orbit_histogram(&set, 2);
    let ones = Orbit::feature(1, 2).unwrap();
    let pair = Orbit::feature(2, 2).unwrap();
    assert_eq!(h.entries.iter().map(|(o, _)| o.clone()).collect::<Vec<_>>(), vec![ones.clone(), pair.clone()]);
    let sigma = (cond * (1.0 - cond) / h.support as f64).sqrt();
    assert!((h.frequency(&ones) - cond).abs() < 5.0 * sigma);
    assert!((h.frequency(&pair) - (1.0 - cond)).abs() < 5.0 * sigma);
}

#[test]
fn histogram_frequencies_sum_to_one() {
    let set = sample_classical(InputKind::Squashed, &three_mode_device(), 1.0, 20_000, 5, opts()).unwrap();
    for n in 1..8 {
        let h = orbit_histogram(&set, n);
        if h.support > 0 {
            let total: f64 = h.frequencies().iter().map(|(_, f)| f).sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(h.entries.windows(2).all(|w| w[0].0 < w[1].0));
            assert!(h.entries.iter().all(|(o, _)| o.total() == n));
        }
    }
}

fn small_loop_device(m: usize) -> Device {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let spec = LoopSpec::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
    let program = CircuitProgram::random(spec, m, 0, &mut rng).unwrap();
    Device::new(program, LossModel::lossless(2, 1)).unwrap()
}

#[test]
fn feature_errors_follow_the_multinomial_law() {
    let device = small_loop_device(12);
    let table = |shots| {
        let set = sample_classical(InputKind::Thermal, &device, 0.5, shots, 3, opts()).unwrap();
        feature_vectors(&set, 4, 4).unwrap().remove(0)
    };
    let small = table(10_000);
    let large = table(1_000_000);
    for k in 0..3 {
        let ratio = small.std_errors[k] / large.std_errors[k];
        assert!((ratio - 10.0).abs() < 1.0, "component {k}: {ratio}");
    }
    assert!((small.support as f64 / large.support as f64 - 0.01).abs() < 0.001);
}

#[test]
fn bootstrap_spread_matches_the_multinomial_errors() {
    let set = sample_classical(InputKind::Thermal, &small_loop_device(12), 0.5, 200_000, 9, opts()).unwrap();
    let table = OrbitCounts::from_samples(&set, 2, 5).unwrap();
    let base = table.features(&Default::default());
    let reps = table.bootstrap(&Default::default(), 400, 1);
    for (i, f) in base.iter().enumerate() {
        for k in 0..3 {
            if f.std_errors[k] == 0.0 {
                continue;
            }
            let xs: Vec<f64> = reps.iter().map(|r| r[i].point()[k]).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
            // sd of a 400-sample sd estimate is about 3.5%
            assert!((sd / f.std_errors[k] - 1.0).abs() < 0.15, "n {} component {k}: {sd} vs {}", f.n, f.std_errors[k]);
        }
    }
}

#[test]
fn full_scale_thermal_features() {
    let cert = jan_12();
    let mut rng = ChaCha8Rng::seed_from_u64(20230112);
    let program = CircuitProgram::reference_random(cert.loop_spec().unwrap(), &mut rng).unwrap();
    let device = Device::from_certificate(program, &cert).unwrap();
    let s = cert.squeezing("low").unwrap();
    let set = sample_classical(InputKind::Thermal, &device, s, 50_000, 1, SamplerOptions::default()).unwrap();
    let features = feature_vectors(&set, 18, 32).unwrap();
    assert_eq!(features.iter().map(|f| f.n).collect::<Vec<_>>(), (18..=32).collect::<Vec<_>>());
    for f in &features {
        assert!(f.o1 + f.o2 + f.o3 <= 1.0 + 1e-12);
    }
    // more photons, more collisions: points slide towards the origin
    let (first, last) = (&features[0], &features[14]);
    let gap = first.o1 - last.o1;
    assert!(gap > 10.0 * (first.std_errors[0].powi(2) + last.std_errors[0].powi(2)).sqrt(), "{gap}");

    // with few photons in 216 modes collisions are rare and O₁ dominates
    let dim = Device::from_certificate(device.program.clone(), &cert.with_common_efficiency(0.05).unwrap()).unwrap();
    let set = sample_classical(InputKind::Thermal, &dim, s, 50_000, 2, SamplerOptions::default()).unwrap();
    let features = feature_vectors(&set, 2, 5).unwrap();
    assert!(!features.is_empty());
    for f in &features {
        assert!(f.o1 > f.o2 && (f.n < 4 || f.o2 > f.o3), "{f:?}");
    }
}

fn from_rows(rows: &[Vec<u8>]) -> SampleSet {
    SampleSet::from_counts("rows", rows[0].len(), rows.concat()).unwrap()
}

proptest! {
    #[test]
    fn orbit_ignores_mode_order(counts in prop::collection::vec(0usize..5, 1..10), seed in any::<u64>()) {
        let mut shuffled = counts.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(&mut shuffled[..], &mut rng);
        prop_assert_eq!(orbit_of(&OutcomePattern::new(counts)), orbit_of(&OutcomePattern::new(shuffled)));
    }

    #[test]
    fn canonical_order_is_strict_and_total(n in 0usize..14) {
        let all = Orbit::all_of(n);
        for w in all.windows(2) {
            prop_assert!(w[0] < w[1]);
        }
        let text: Vec<String> = all.iter().map(|o| o.to_string()).collect();
        let back: Vec<Orbit> = text.iter().map(|t| t.parse().unwrap()).collect();
        prop_assert_eq!(back, all);
    }

    #[test]
    fn features_stay_in_the_simplex(rows in prop::collection::vec(prop::collection::vec(0u8..4, 5), 150..300)) {
        let set = from_rows(&rows);
        let opts = loopgbs::orbits::FeatureOptions { min_support: 1, pool_width: 0 };
        for f in loopgbs::orbits::feature_vectors_with(&set, 0, 20, &opts).unwrap() {
            prop_assert!(f.o1 + f.o2 + f.o3 <= 1.0 + 1e-12);
            prop_assert!([f.o1, f.o2, f.o3].iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }
}
