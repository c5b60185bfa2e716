mod common;

use common::*;
use lgs_core::bench::{synth_scene, SynthSpec};
use lgs_core::image::Image;
use lgs_core::io::scene_file::{decode_scene, encode_scene};
use lgs_core::io::{load_dataset, load_scene, save_dataset, save_scene, size_breakdown};
use lgs_core::io::ppm::{decode_ppm, encode_ppm};
use lgs_core::{FormatKind, LgsError};
use proptest::prelude::*;
use tempfile::TempDir;

#[test]
fn scene_file_round_trip_is_bitwise() {
    let tmp = TempDir::new().unwrap();
    for seed in 0..8u64 {
        let mut r = rng(seed);
        let scene = random_scene(&mut r, seed as usize * 3, (seed % 4) as u8).quantized_f32();
        let path = tmp.path().join(format!("{seed}.lgs"));
        let written = save_scene(&scene, &path).unwrap();
        let loaded = load_scene(&path).unwrap();
        assert_eq!(loaded, scene);
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len() as u64, written);
        assert_eq!(written, size_breakdown(&scene).overall_bytes);
        assert_eq!(encode_scene(&loaded).unwrap(), bytes);
    }
}

#[test]
fn saving_rounds_to_binary32_once() {
    let mut r = rng(40);
    let scene = random_scene(&mut r, 4, 3);
    let decoded = decode_scene(&encode_scene(&scene).unwrap()).unwrap();
    assert_eq!(decoded, scene.quantized_f32());
}

#[test]
fn every_truncation_is_a_length_error() {
    let mut r = rng(41);
    let bytes = encode_scene(&random_scene(&mut r, 2, 1)).unwrap();
    for cut in 4..bytes.len() {
        match decode_scene(&bytes[..cut]) {
            Err(LgsError::Format { kind: FormatKind::Length, .. }) => {}
            other => panic!("cut {cut}: {other:?}"),
        }
    }
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(decode_scene(&long), Err(LgsError::Format { kind: FormatKind::Length, .. })));
}

#[test]
fn dataset_round_trip_quantizes_images_only() {
    let (_, ds) = synth_scene(&SynthSpec {
        gaussian_count: 40,
        field_resolution: [4, 4, 4, 5],
        frames: 5,
        width: 20,
        height: 12,
        ..SynthSpec::default()
    })
    .unwrap();
    let tmp = TempDir::new().unwrap();
    save_dataset(&ds, tmp.path()).unwrap();
    let loaded = load_dataset(tmp.path()).unwrap();
    assert_eq!(loaded.frames.len(), ds.frames.len());
    for (a, b) in ds.frames.iter().zip(&loaded.frames) {
        assert_eq!(a.camera, b.camera);
        assert_eq!(a.time.to_bits(), b.time.to_bits());
        assert_eq!(b.image, a.image.quantized_8bit());
    }
    // Saving again reproduces every file byte for byte.
    let again = TempDir::new().unwrap();
    save_dataset(&loaded, again.path()).unwrap();
    for entry in std::fs::read_dir(tmp.path()).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            std::fs::read(tmp.path().join(&name)).unwrap(),
            std::fs::read(again.path().join(&name)).unwrap()
        );
    }
}

proptest! {
    #[test]
    fn ppm_round_trip_is_within_one_level(w in 1usize..9, h in 1usize..9, seed in 0u64..1000) {
        let img = random_image(&mut rng(seed), w, h, 0.0, 1.0);
        let back = decode_ppm(&encode_ppm(&img)).unwrap();
        prop_assert_eq!((back.width, back.height), (w, h));
        for (a, b) in img.data.iter().zip(&back.data) {
            prop_assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        prop_assert_eq!(encode_ppm(&back), encode_ppm(&img));
    }

    #[test]
    fn out_of_range_values_clamp(v in -3.0f64..3.0) {
        let img = Image::filled(1, 1, [v; 3]);
        let back = decode_ppm(&encode_ppm(&img)).unwrap();
        prop_assert!((back.data[0] - v.clamp(0.0, 1.0)).abs() <= 0.5 / 255.0 + 1e-12);
    }
}
