//! Save/load round trips and manifest validation against hand-built
//! fixtures.

use layerflow_imaging::{
    load_stack, over_composite, quantize_unit, save_stack, synth_stack, BBox, ImagingError,
    SynthConfig,
};

#[test]
fn round_trip_preserves_quantized_channels() {
    let dir = tempfile::tempdir().unwrap();
    let stack = synth_stack(5, &SynthConfig::default()).unwrap();
    let manifest = save_stack(&stack, dir.path()).unwrap();
    let loaded = load_stack(&manifest).unwrap();

    assert_eq!(loaded.foregrounds.len(), stack.foregrounds.len());
    assert_eq!(loaded.global_prompt, stack.global_prompt);
    let tol = 0.5 / 255.0 + 1e-9;
    for (a, b) in stack.composite.data().iter().zip(loaded.composite.data()) {
        assert!((a - b).abs() <= tol, "composite drift {a} vs {b}");
    }
    for (orig, got) in stack.foregrounds.iter().zip(&loaded.foregrounds) {
        assert_eq!(orig.bbox, got.bbox);
        assert_eq!(orig.prompt, got.prompt);
        for (a, b) in orig.image.data().iter().zip(got.image.data()) {
            assert!((a - b).abs() <= tol, "layer drift {a} vs {b}");
        }
    }
}

#[test]
fn second_save_is_byte_identical() {
    let stack = synth_stack(11, &SynthConfig::default()).unwrap();
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    save_stack(&stack, dir_a.path()).unwrap();
    save_stack(&stack, dir_b.path()).unwrap();
    for entry in std::fs::read_dir(dir_a.path()).unwrap() {
        let name = entry.unwrap().file_name();
        let a = std::fs::read(dir_a.path().join(&name)).unwrap();
        let b = std::fs::read(dir_b.path().join(&name)).unwrap();
        assert_eq!(a, b, "{name:?} differs between saves");
    }
}

#[test]
fn degenerate_bbox_in_manifest_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let stack = synth_stack(3, &SynthConfig::default()).unwrap();
    let manifest = save_stack(&stack, dir.path()).unwrap();
    let text = std::fs::read_to_string(&manifest).unwrap();
    let mut parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
    parsed["layers"][0]["bbox"] = serde_json::json!([10, 10, 10, 20]);
    std::fs::write(&manifest, serde_json::to_string(&parsed).unwrap()).unwrap();
    let err = load_stack(&manifest).unwrap_err();
    assert!(matches!(err, ImagingError::InvalidBBox { .. }), "{err}");
}

#[test]
fn missing_layer_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let config = SynthConfig {
        n_layers: 2,
        ..Default::default()
    };
    let stack = synth_stack(9, &config).unwrap();
    let manifest = save_stack(&stack, dir.path()).unwrap();
    std::fs::remove_file(dir.path().join("layer_00.png")).unwrap();
    let err = load_stack(&manifest).unwrap_err();
    assert!(matches!(err, ImagingError::MissingFile { .. }), "{err}");
}

#[test]
fn malformed_manifest_json_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.json");
    std::fs::write(&manifest, "{ not json").unwrap();
    let err = load_stack(&manifest).unwrap_err();
    assert!(err.to_string().contains("malformed JSON"), "{err}");
}

#[test]
fn hand_built_two_layer_manifest_composites_correctly() {
    // fixture written directly with the png crate surface: gray background,
    // one opaque 8x8 red square at (16, 16)
    let dir = tempfile::tempdir().unwrap();
    let size = 32u32;

    let gray = image::RgbaImage::from_pixel(size, size, image::Rgba([128, 128, 128, 255]));
    gray.save(dir.path().join("background.png")).unwrap();

    let mut layer = image::RgbaImage::from_pixel(size, size, image::Rgba([0, 0, 0, 0]));
    for y in 16..24 {
        for x in 16..24 {
            layer.put_pixel(x, y, image::Rgba([255, 0, 0, 255]));
        }
    }
    layer.save(dir.path().join("layer_00.png")).unwrap();

    let mut composite = image::RgbImage::from_pixel(size, size, image::Rgb([128, 128, 128]));
    for y in 16..24 {
        for x in 16..24 {
            composite.put_pixel(x, y, image::Rgb([255, 0, 0]));
        }
    }
    composite.save(dir.path().join("composite.png")).unwrap();

    let manifest = serde_json::json!({
        "format_version": 1,
        "frame": [32, 32],
        "composite": "composite.png",
        "background": "background.png",
        "layers": [{"path": "layer_00.png", "bbox": [16, 16, 24, 24], "prompt": ["red", "rectangle"]}],
        "global_prompt": ["red", "rectangle"],
    });
    let path = dir.path().join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();

    let stack = load_stack(&path).unwrap();
    let recomposed = over_composite(&stack).unwrap();
    for (a, b) in stack.composite.data().iter().zip(recomposed.data()) {
        assert!((a - b).abs() < 1e-9);
    }
    assert_eq!(stack.foregrounds[0].bbox, BBox::new(16, 16, 24, 24));
}

#[test]
fn quantization_tolerance_is_half_a_code() {
    // the codec stores round(v * 255): worst-case error is half a code,
    // comfortably inside the 1/255 + eps budget
    for i in 0..=255u8 {
        let v = f64::from(i) / 255.0;
        assert_eq!(quantize_unit(v), i);
    }
    assert_eq!(quantize_unit(1.0 / 510.0 - 1e-9), 0);
    assert_eq!(quantize_unit(1.0 / 510.0 + 1e-9), 1);
}
