use umtk::io::{read_normals_png, write_normals_png};
use umtk::material::validate_stack;
use umtk::metrics::angular_error;
use umtk::synth::{augment, generate_material, rotate_quarter, AugmentPolicy, MaterialFamily, DEFAULT_PPI};
use umtk::{MapStack, NormalMap, Vec3};

/// Quarter turns applied to positions and to the tangent-plane components.
fn rotate_oracle(n: &NormalMap, k: u8) -> NormalMap {
    let mut cur = n.clone();
    for _ in 0..k {
        let (w, h) = (cur.width(), cur.height());
        let (ow, oh) = (h, w);
        let mut out = Vec::with_capacity(w * h);
        for y in 0..oh {
            for x in 0..ow {
                let v = cur.get(y, h - 1 - x);
                out.push(Vec3::new(-v.y, v.x, v.z));
            }
        }
        cur = NormalMap::new(ow, oh, out).unwrap();
    }
    cur
}

#[test]
fn quarter_turns_agree_with_the_decoded_png_path() {
    let dir = tempfile::tempdir().unwrap();
    for (i, family) in MaterialFamily::ALL.into_iter().enumerate() {
        let s = generate_material(family, 40 + i as u64, 64, DEFAULT_PPI).unwrap();
        let path = dir.path().join(format!("{family}.png"));
        write_normals_png(&path, &s.gt.normals).unwrap();
        let mut decoded = s.clone();
        decoded.gt = MapStack::new(read_normals_png(&path).unwrap(), s.gt.specular.clone(), s.gt.roughness.clone()).unwrap();
        for k in 1..4 {
            let expected = rotate_oracle(&s.gt.normals, k);
            let exact = rotate_quarter(&s, k).unwrap();
            assert!(angular_error(&exact.gt.normals, &expected).unwrap() < 1e-9);
            let via_png = rotate_quarter(&decoded, k).unwrap();
            let err = angular_error(&via_png.gt.normals, &expected).unwrap();
            assert!(err <= 0.5, "{family} k={k}: {err} deg");
        }
    }
}

#[test]
fn training_augmentation_keeps_stacks_valid() {
    let policy = AugmentPolicy::training();
    for seed in 0..24u64 {
        let family = MaterialFamily::ALL[seed as usize % 6];
        let s = generate_material(family, seed, 96, DEFAULT_PPI).unwrap();
        let a = augment(&s, &policy, seed).unwrap();
        assert!(validate_stack(&a.gt).is_empty(), "{family} seed {seed}");
        assert!(a.scan.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a, augment(&s, &policy, seed).unwrap());
    }
}

#[test]
fn family_statistics_are_stable_across_seed_ranges() {
    for family in MaterialFamily::ALL {
        let mean_spec = |seeds: std::ops::Range<u64>| {
            let n = seeds.end - seeds.start;
            seeds.map(|s| generate_material(family, s, 64, DEFAULT_PPI).unwrap().gt.specular.mean()).sum::<f64>() / n as f64
        };
        let (a, b) = (mean_spec(0..100), mean_spec(100..200));
        let rel = (a - b).abs() / a.max(b);
        assert!(rel <= 0.10, "{family}: {a:.4} vs {b:.4}");
    }
}
