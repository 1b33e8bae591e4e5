use super::*;
use crate::density::{fit_density, DensityConfig};

fn tiny_config(seed: u64) -> SynthConfig {
    SynthConfig {
        height: 8,
        width: 8,
        frames: 4,
        bf_count: 10,
        species: vec![
            SpeciesSpec {
                name: "smooth".into(),
                region: Region { x: 1, y: 1, width: 6, height: 4 },
                kind: PerturbationKind::Smoothing,
                strength: 1.0,
                difficulty: 0.2,
                count: 4,
            },
            SpeciesSpec {
                name: "noisy".into(),
                region: Region { x: 0, y: 4, width: 8, height: 4 },
                kind: PerturbationKind::NoiseInjection,
                strength: 1.0,
                difficulty: 0.3,
                count: 4,
            },
        ],
        seed,
    }
}

fn file_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let mut entries: Vec<_> = fs::read_dir(&d).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

#[test]
fn generation_is_deterministic_per_seed() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    generate(&tiny_config(5), dir_a.path()).unwrap();
    generate(&tiny_config(5), dir_b.path()).unwrap();
    let a = file_bytes(dir_a.path());
    let b = file_bytes(dir_b.path());
    assert_eq!(a.len(), b.len());
    for ((pa, ba), (pb, bb)) in a.iter().zip(&b) {
        assert_eq!(pa, pb);
        assert_eq!(ba, bb, "file {pa} differs between identical seeds");
    }
}

#[test]
fn bf_videos_do_not_depend_on_species_roster() {
    let with = tempfile::tempdir().unwrap();
    let without = tempfile::tempdir().unwrap();
    generate(&tiny_config(9), with.path()).unwrap();
    let mut no_attacks = tiny_config(9);
    no_attacks.species.clear();
    generate(&no_attacks, without.path()).unwrap();

    for i in 0..10 {
        for t in 0..4 {
            let rel = format!("videos/bf_{i:03}/frame_{t}.png");
            let a = fs::read(with.path().join(&rel)).unwrap();
            let b = fs::read(without.path().join(&rel)).unwrap();
            assert_eq!(a, b, "bona-fide file {rel} changed with the roster");
        }
    }
}

#[test]
fn zero_strength_species_matches_bf_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny_config(11);
    config.species = vec![SpeciesSpec {
        name: "null".into(),
        region: Region { x: 0, y: 0, width: 8, height: 8 },
        kind: PerturbationKind::TextureSwap,
        strength: 0.0,
        difficulty: 1.0,
        count: 8,
    }];
    config.bf_count = 8;
    generate(&config, dir.path()).unwrap();
    let ds = load(dir.path()).unwrap();

    // one value per video: frames inside a video share a base pattern and
    // are not independent draws
    let mean_of = |ids: &[String]| -> (f64, f64) {
        let mut values = Vec::new();
        for id in ids {
            let mut acc = 0.0;
            let mut count = 0.0;
            for frame in ds.load_video(id).unwrap() {
                acc += frame.pixels.iter().map(|&v| f64::from(v)).sum::<f64>();
                count += frame.pixels.len() as f64;
            }
            values.push(acc / count);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, var / n)
    };
    let mut bf_ids = ds.bf_ids("train");
    bf_ids.extend(ds.bf_ids("dev"));
    bf_ids.extend(ds.bf_ids("test"));
    let (bf_mean, bf_se2) = mean_of(&bf_ids);
    let (at_mean, at_se2) = mean_of(&ds.attack_ids("null"));
    let z = (bf_mean - at_mean).abs() / (bf_se2 + at_se2).sqrt();
    assert!(z < 3.0, "two-sample mean test failed: z = {z}");
}

#[test]
fn smoothing_species_raises_region_likelihood() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(13);
    generate(&config, dir.path()).unwrap();
    let ds = load(dir.path()).unwrap();

    // fit the density model on training bona-fide frames
    let mut frames = Vec::new();
    for id in ds.bf_ids("train") {
        frames.extend(ds.load_video(&id).unwrap());
    }
    let model = fit_density(
        &frames,
        &DensityConfig {
            k: 2,
            epochs: 15,
            hidden: 8,
            seed: 13,
            ..DensityConfig::default()
        },
    )
    .unwrap();

    let region = config.species[0].region;
    let region_mean_loglik = |ids: &[String]| -> f64 {
        let mut acc = 0.0;
        let mut count = 0.0;
        for id in ids {
            for frame in ds.load_video(id).unwrap() {
                let t = model.per_pixel_loglik(&frame).unwrap();
                let (h, w, ck) = t.grid.dim();
                for i in 0..h {
                    for j in 0..w {
                        if region.contains(i, j) {
                            for c in 0..ck {
                                acc += t.grid[(i, j, c)];
                                count += 1.0;
                            }
                        }
                    }
                }
            }
        }
        acc / count
    };
    let bf = region_mean_loglik(&ds.bf_ids("test"));
    let smooth = region_mean_loglik(&ds.attack_ids("smooth"));
    assert!(
        smooth > bf,
        "smoothing should raise in-region log-likelihood: {smooth} vs bona-fide {bf}"
    );
}

#[test]
fn load_rejects_missing_files_and_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    generate(&tiny_config(17), dir.path()).unwrap();

    // remove one frame: load must fail naming the path
    let victim = dir.path().join("videos/bf_000/frame_0.png");
    fs::remove_file(&victim).unwrap();
    let err = load(dir.path()).unwrap_err();
    assert!(err.to_string().contains("bf_000"));
}

#[test]
fn manifest_splits_partition_and_ratios_hold() {
    let dir = tempfile::tempdir().unwrap();
    let config = SynthConfig {
        bf_count: 40,
        ..tiny_config(19)
    };
    generate(&config, dir.path()).unwrap();
    let ds = load(dir.path()).unwrap();
    let train = ds.bf_ids("train").len();
    let dev = ds.bf_ids("dev").len();
    let test = ds.bf_ids("test").len();
    assert_eq!(train + dev + test, 40);
    assert_eq!(dev, 4);
    assert_eq!(test, 4);
    assert_eq!(train, 32);

    // ids unique and splits exhaustive by construction of the manifest
    let all: BTreeSet<String> = ds.manifest.videos.iter().map(|v| v.id.clone()).collect();
    assert_eq!(all.len(), ds.manifest.videos.len());
}

#[test]
fn flip_is_an_involution_and_full_segment_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    generate(&tiny_config(23), dir.path()).unwrap();
    let ds = load(dir.path()).unwrap();
    let video = ds.load_video("bf_000").unwrap();

    let flipped_twice = horizontal_flip(&horizontal_flip(&video[0]));
    assert_eq!(flipped_twice.pixels, video[0].pixels);

    // drive the RNG until it yields a full-length unflipped segment
    for trial in 0..200 {
        let mut rng = crate::rng::stream(trial, "augment-identity");
        let out = augment(&video, &mut rng).unwrap();
        if out.len() == video.len() && out[0].pixels == video[0].pixels {
            for (a, b) in out.iter().zip(&video) {
                assert_eq!(a.pixels, b.pixels);
            }
            return;
        }
    }
    panic!("no identity augmentation found in 200 trials");
}

#[test]
fn augment_segments_stay_in_bounds() {
    let dir = tempfile::tempdir().unwrap();
    generate(&tiny_config(29), dir.path()).unwrap();
    let ds = load(dir.path()).unwrap();
    let video = ds.load_video("bf_001").unwrap();
    for seed in 0..100 {
        let mut rng = crate::rng::stream(seed, "augment-bounds");
        let out = augment(&video, &mut rng).unwrap();
        assert!(!out.is_empty());
        assert!(out.len() <= video.len());
        assert!(out.len() >= video.len() / 2);
    }
    assert!(augment(&[], &mut crate::rng::stream(0, "x")).is_err());
}

#[test]
fn generation_rejects_bad_configs() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny_config(31);
    c.species[0].region = Region { x: 5, y: 5, width: 10, height: 10 };
    assert!(generate(&c, dir.path()).is_err());

    let mut c2 = tiny_config(31);
    c2.species[0].count = 0;
    assert!(generate(&c2, dir.path()).is_err());

    let mut c3 = tiny_config(31);
    c3.bf_count = 0;
    assert!(generate(&c3, dir.path()).is_err());
}
