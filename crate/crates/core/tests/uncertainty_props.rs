use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use umtk::predictor::{train, PredictorConfig, TrainingPair};
use umtk::render::{sample_render_set, RenderSet};
use umtk::synth::{generate_material, make_dataset, MaterialFamily, DEFAULT_PPI};
use umtk::uncertainty::{mc_sample, per_map_std, sigma_brdf, SampleSet, DEFAULT_EPS, NEUTRAL_GREY};
use umtk::{ImageGrid, MapStack};

fn grey(m: &MapStack) -> ImageGrid {
    ImageGrid::constant(m.width(), m.height(), 1, NEUTRAL_GREY, m.ppi()).unwrap()
}

/// `n` copies of `m` with the roughness perturbed by `std` times fixed normal draws.
fn rough_noise(m: &MapStack, n: usize, std: f64, seed: u64) -> Vec<MapStack> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let rough: Vec<f64> = m
                .roughness
                .data()
                .iter()
                .map(|r| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (r + std * z).clamp(0.0, 1.0)
                })
                .collect();
            let rough = ImageGrid::new(m.width(), m.height(), 1, rough, m.ppi()).unwrap();
            MapStack::new(m.normals.clone(), m.specular.clone(), rough).unwrap()
        })
        .collect()
}

#[test]
fn sigma_ignores_sample_and_render_set_order() {
    let m = generate_material(MaterialFamily::Twill, 3, 64, DEFAULT_PPI).unwrap().gt;
    let samples = rough_noise(&m, 8, 0.08, 1);
    let s = sample_render_set(20, 4).unwrap();
    let k = grey(&m);
    let base = sigma_brdf(&SampleSet::new(samples.clone(), "a", 0.2).unwrap(), &s, &k, DEFAULT_EPS).unwrap().0;

    let mut shuffled = samples.clone();
    shuffled.reverse();
    shuffled.swap(1, 4);
    let by_samples = sigma_brdf(&SampleSet::new(shuffled, "a", 0.2).unwrap(), &s, &k, DEFAULT_EPS).unwrap().0;

    let mut pairs = s.pairs().to_vec();
    pairs.reverse();
    let t = RenderSet::new(pairs).unwrap();
    let by_set = sigma_brdf(&SampleSet::new(samples, "a", 0.2).unwrap(), &t, &k, DEFAULT_EPS).unwrap().0;

    assert!((base - by_samples).abs() < 1e-12, "{base} vs {by_samples}");
    assert!((base - by_set).abs() < 1e-12, "{base} vs {by_set}");
}

#[test]
fn more_roughness_noise_means_more_sigma() {
    let m = generate_material(MaterialFamily::Satin, 9, 64, DEFAULT_PPI).unwrap().gt;
    let s = sample_render_set(50, 7).unwrap();
    let k = grey(&m);
    for seed in 0..20 {
        let at = |std| {
            let u = SampleSet::new(rough_noise(&m, 16, std, seed), "n", 0.2).unwrap();
            sigma_brdf(&u, &s, &k, DEFAULT_EPS).unwrap().0
        };
        let (lo, hi) = (at(0.05), at(0.10));
        assert!(hi > lo, "seed {seed}: {lo} -> {hi}");
    }
}

#[test]
fn per_map_std_scales_with_the_deviations() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (w, h) = (7, 6);
    let base = MapStack::uniform(w, h, 0.5, 0.4, 100.0).unwrap();
    let devs: Vec<(Vec<f64>, Vec<f64>)> = (0..6)
        .map(|_| {
            let d = |rng: &mut ChaCha8Rng| (0..w * h).map(|_| rng.random_range(-0.1..0.1)).collect::<Vec<f64>>();
            (d(&mut rng), d(&mut rng))
        })
        .collect();
    // Center the deviations so the mean stays at the base stack for any scale.
    let n = devs.len() as f64;
    let mean = |k: usize, i: usize| devs.iter().map(|d| if k == 0 { d.0[i] } else { d.1[i] }).sum::<f64>() / n;
    let set = |c: f64| {
        let samples = devs
            .iter()
            .map(|(ds, dr)| {
                let g = |base: &ImageGrid, d: &[f64], k: usize| {
                    let v = (0..w * h).map(|i| base.data()[i] + c * (d[i] - mean(k, i))).collect();
                    ImageGrid::new(w, h, 1, v, 100.0).unwrap()
                };
                MapStack::new(base.normals.clone(), g(&base.specular, ds, 0), g(&base.roughness, dr, 1)).unwrap()
            })
            .collect();
        per_map_std(&SampleSet::new(samples, "s", 0.2).unwrap()).unwrap()
    };
    let one = set(1.0);
    for c in [0.25, 2.0, 3.5] {
        let scaled = set(c);
        for (a, b) in one.specular.data().iter().zip(scaled.specular.data()) {
            assert!((c * a - b).abs() < 1e-12);
        }
        for (a, b) in one.roughness.data().iter().zip(scaled.roughness.data()) {
            assert!((c * a - b).abs() < 1e-12);
        }
        assert!(scaled.normals.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn eight_samples_track_sixty_four() {
    let d = make_dataset(10, &MaterialFamily::ALL, 21, 64, DEFAULT_PPI).unwrap();
    let pairs: Vec<TrainingPair<'_>> = d.train_samples().map(|s| TrainingPair { input: &s.scan, target: &s.gt }).collect();
    let cfg = PredictorConfig { hidden_widths: vec![32, 32], epochs: 20, batches_per_epoch: 50, seed: 1, ..Default::default() };
    let (w, _) = train(&pairs, &cfg).unwrap();
    let s = sample_render_set(50, 7).unwrap();
    let median = |n: usize| {
        let mut v: Vec<f64> = d
            .test_samples()
            .map(|m| sigma_brdf(&mc_sample(&w, &m.scan, n, 3).unwrap(), &s, &grey(&m.gt), DEFAULT_EPS).unwrap().0)
            .collect();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let (m8, m64) = (median(8), median(64));
    let gap = (m8 - m64).abs() / m64.abs();
    println!("median sigma_brdf N=8 {m8:.4}, N=64 {m64:.4}, relative gap {gap:.4}");
    assert!(gap <= 0.25);
}
