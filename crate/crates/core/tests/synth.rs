mod common;

use std::collections::HashSet;

use common::{capsule_spec, rng};
use proptest::prelude::*;
use srn::image::{BinaryMap, Image};
use srn::synth::pnm::{decode, decode_mask, encode, encode_mask, read_image, write_image};
use srn::synth::{
    gen_sample, generate_split, make_benchmark, random_scene, shape_mask, skeletonize, DataConfig,
    Difficulty, Geometry, Manifest, SceneSpec, SceneTraits, Shape, MIXED_MULTI_OBJECT,
};
use srn::SrnError;

fn near(m: &BinaryMap, x: usize, y: usize, r: isize) -> bool {
    (-r..=r).any(|dy| (-r..=r).any(|dx| m.get_signed(x as isize + dx, y as isize + dy)))
}

/// Brute-force Euclidean distance to the nearest pixel outside `inside`.
fn distance_transform(inside: &BinaryMap) -> Vec<f64> {
    let outside: Vec<(f64, f64)> = (0..inside.height)
        .flat_map(|y| (0..inside.width).map(move |x| (x, y)))
        .filter(|&(x, y)| !inside.get(x, y))
        .map(|(x, y)| (x as f64, y as f64))
        .collect();
    let mut dt = vec![0.0; inside.width * inside.height];
    for (x, y) in inside.positives() {
        dt[y * inside.width + x] = outside
            .iter()
            .map(|&(ox, oy)| (ox - x as f64).hypot(oy - y as f64))
            .fold(f64::INFINITY, f64::min);
    }
    dt
}

/// Interior pixels whose distance value peaks along at least one of the four line directions.
fn dt_ridge(inside: &BinaryMap) -> BinaryMap {
    let dt = distance_transform(inside);
    let (w, h) = (inside.width, inside.height);
    let at = |x: isize, y: isize| {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            dt[y as usize * w + x as usize]
        }
    };
    let mut out = BinaryMap::new(w, h);
    for (x, y) in inside.positives() {
        let (x, y) = (x as isize, y as isize);
        let v = at(x, y);
        let peak = [(1, 0), (0, 1), (1, 1), (1, -1)].iter().any(|&(dx, dy)| {
            let (p, q) = (at(x + dx, y + dy), at(x - dx, y - dy));
            v >= p && v >= q && v > p.min(q)
        });
        out.set(x as usize, y as usize, peak);
    }
    out
}

#[test]
fn centred_capsule_axis() {
    // length 20 between cap ends, radius 4, centred at (32, 32)
    let spec = capsule_spec((26.0, 32.0), (38.0, 32.0), 4.0);
    let s = gen_sample(&spec).unwrap();
    let px: Vec<(usize, usize)> = s.mask.positives().collect();
    assert_eq!(px.len(), 13);
    assert!(px.iter().all(|&(x, y)| y == 32 && (26..=38).contains(&x)));
    assert_eq!(s.meta.get("shape0.kind"), Some("capsule"));
    assert_eq!(
        s.image.get(0, 32, 32),
        srn::image::quantize_u8(s.image.get(0, 32, 32)) as f64 / 255.0
    );
}

#[test]
fn ground_truth_agrees_with_distance_ridge() {
    for (a, b, r) in [
        ((26.0, 32.0), (38.0, 32.0), 4.0),
        ((22.0, 30.0), (42.0, 36.0), 5.0),
        ((20.0, 20.0), (44.0, 44.0), 6.0),
        ((30.0, 14.0), (34.0, 50.0), 5.0),
    ] {
        let spec = capsule_spec(a, b, r);
        let gt = gen_sample(&spec).unwrap().mask;
        let ridge = dt_ridge(&shape_mask(&spec));
        let agree = gt
            .positives()
            .filter(|&(x, y)| near(&ridge, x, y, 1))
            .count();
        let frac = agree as f64 / gt.count() as f64;
        assert!(frac >= 0.95, "{a:?}-{b:?}: {frac}");
    }
}

#[test]
fn rectangle_and_ellipse_axes_lie_inside() {
    let spec = SceneSpec {
        shapes: vec![
            Shape {
                geometry: Geometry::Rectangle {
                    center: (20.0, 20.0),
                    angle: 0.3,
                    length: 22.0,
                    width: 8.0,
                },
                intensity: 0.9,
            },
            Shape {
                geometry: Geometry::Ellipse {
                    center: (44.0, 44.0),
                    angle: -0.5,
                    a: 12.0,
                    b: 5.0,
                },
                intensity: 0.7,
            },
        ],
        ..capsule_spec((0.0, 0.0), (0.0, 0.0), 1.0)
    };
    let s = gen_sample(&spec).unwrap();
    let inside = shape_mask(&spec);
    assert!(s.mask.positives().all(|(x, y)| inside.get(x, y)));
    assert!(s.mask.is_thin());
    let ridge = dt_ridge(&inside);
    let agree = s
        .mask
        .positives()
        .filter(|&(x, y)| near(&ridge, x, y, 1))
        .count();
    assert!(agree as f64 >= 0.9 * s.mask.count() as f64);
}

#[test]
fn two_capsules_give_the_union() {
    let one = capsule_spec((10.0, 12.0), (30.0, 12.0), 4.0);
    let two = capsule_spec((12.0, 44.0), (50.0, 50.0), 5.0);
    let both = SceneSpec {
        shapes: [one.shapes.clone(), two.shapes.clone()].concat(),
        ..one.clone()
    };
    let m1 = gen_sample(&one).unwrap().mask;
    let m2 = gen_sample(&two).unwrap().mask;
    assert_eq!(gen_sample(&both).unwrap().mask, m1.union(&m2));
}

#[test]
fn outside_canvas_rejected() {
    let spec = capsule_spec((2.0, 32.0), (30.0, 32.0), 4.0);
    assert!(matches!(gen_sample(&spec), Err(SrnError::Input(_))));
}

#[test]
fn skeleton_of_line_and_rectangle() {
    let mut line = BinaryMap::new(20, 9);
    for x in 2..18 {
        line.set(x, 4, true);
    }
    assert_eq!(skeletonize(&line), line);
    assert_eq!(skeletonize(&BinaryMap::new(5, 5)), BinaryMap::new(5, 5));

    let mut rect = BinaryMap::new(31, 15);
    for y in 5..10 {
        for x in 5..26 {
            rect.set(x, y, true);
        }
    }
    let sk = skeletonize(&rect);
    assert!(sk.count() > 0 && sk.is_thin());
    let mut centre = BinaryMap::new(31, 15);
    for x in 5..26 {
        centre.set(x, 7, true);
    }
    let covered = centre
        .positives()
        .filter(|&(x, y)| near(&sk, x, y, 1))
        .count();
    assert!(
        covered as f64 >= 0.9 * centre.count() as f64,
        "{covered}/{}",
        centre.count()
    );
    assert!(sk.positives().all(|(x, y)| near(&centre, x, y, 1)));
}

#[test]
fn pnm_round_trip_and_rejections() {
    let mut r = rng(3);
    let mut img = Image::new(
        1,
        7,
        5,
        (0..35)
            .map(|_| rand::Rng::gen_range(&mut r, 0.0..1.0))
            .collect(),
    )
    .unwrap();
    img.quantize();
    let bytes = encode(&img).unwrap();
    let back = decode(&bytes, "x.pgm".as_ref()).unwrap();
    assert_eq!(back, img);
    assert_eq!(encode(&back).unwrap(), bytes);

    let mask = common::random_mask(&mut r, 6, 4, 0.4);
    assert_eq!(
        decode_mask(&encode_mask(&mask), "m.pgm".as_ref()).unwrap(),
        mask
    );

    let bad = b"P5\n2 1\n65535\n\0\0\0\0";
    let err = decode(bad, "bad.pgm".as_ref()).unwrap_err();
    assert!(matches!(err, SrnError::Format { .. }), "{err:?}");
    assert!(decode(b"P5\n2 2\n255\n\x01", "t.pgm".as_ref()).is_err());
    assert!(decode(b"P2\n1 1\n255\n0", "a.pgm".as_ref()).is_err());
    assert!(decode_mask(b"P5\n1 1\n255\n\x07", "m.pgm".as_ref()).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.pgm");
    write_image(&path, &img).unwrap();
    assert_eq!(read_image(&path).unwrap(), img);
}

#[test]
fn benchmark_files_and_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = DataConfig {
        difficulty: Difficulty::Simple,
        seed: 5,
        ..DataConfig::default()
    };
    let paths = make_benchmark(&cfg, dir.path()).unwrap();
    let train = Manifest::read(&paths.train).unwrap();
    let test = Manifest::read(&paths.test).unwrap();
    assert_eq!((train.len(), test.len()), (64, 16));
    let samples = train.load_samples().unwrap();
    assert_eq!(samples, generate_split(&cfg, 0, 64).unwrap());
    assert!(samples
        .iter()
        .all(|s| s.mask.count() > 0 && s.mask.is_thin()));
    assert!(samples
        .iter()
        .all(|s| s.meta.get("difficulty") == Some("simple")));

    let again = tempfile::tempdir().unwrap();
    make_benchmark(&cfg, again.path()).unwrap();
    for (a, b) in test.entries.iter().zip(
        Manifest::read(&again.path().join("test.txt"))
            .unwrap()
            .entries,
    ) {
        assert_eq!(std::fs::read(&a.0).unwrap(), std::fs::read(&b.0).unwrap());
        assert_eq!(std::fs::read(&a.1).unwrap(), std::fs::read(&b.1).unwrap());
    }
}

#[test]
fn mixed_proportions() {
    let cfg = DataConfig {
        n_train: 200,
        seed: 11,
        ..DataConfig::default()
    };
    let samples = generate_split(&cfg, 0, 200).unwrap();
    let multi = samples
        .iter()
        .filter(|s| s.meta.get("multi_object") == Some("true"))
        .count();
    let frac = multi as f64 / 200.0;
    assert!((frac - MIXED_MULTI_OBJECT).abs() <= 0.05, "{frac}");
    let multi_shapes = samples
        .iter()
        .filter(|s| s.meta.get("shapes").map_or(false, |n| n != "1"))
        .count();
    assert_eq!(multi_shapes, multi);
    assert!(samples.iter().all(|s| s.mask.is_thin()));
}

#[test]
fn difficulty_names() {
    for d in [
        Difficulty::Simple,
        Difficulty::Cluttered,
        Difficulty::Occluded,
        Difficulty::Mixed,
    ] {
        assert_eq!(d.to_string().parse::<Difficulty>().unwrap(), d);
    }
    assert!("hard".parse::<Difficulty>().is_err());
    assert!(srn::RunConfig::parse("data.difficulty=cluttered").is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn random_scenes_have_thin_ground_truth_inside_shapes(seed in any::<u64>(), bits in 0u8..16) {
        use rand::SeedableRng;
        let traits = SceneTraits {
            multi_object: bits & 1 != 0,
            occluded: bits & 2 != 0,
            clutter: bits & 4 != 0,
            gradient: bits & 8 != 0,
        };
        let spec = random_scene(64, traits, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let s = gen_sample(&spec).unwrap();
        prop_assert!(s.mask.is_thin());
        prop_assert!(s.mask.count() > 0);
        let inside = shape_mask(&spec);
        prop_assert!(s.mask.positives().all(|(x, y)| inside.get(x, y)));
        let kinds: HashSet<&str> = (0..spec.shapes.len()).filter_map(|i| s.meta.get(&format!("shape{i}.kind"))).collect();
        prop_assert!(!kinds.is_empty());
    }
}
