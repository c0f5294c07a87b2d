use rdepth::io::image_io::save_image16;
use rdepth::io::{
    load_depth, load_grid, load_image, load_mask, load_prompt, parse_config, read_raw_grid, save_depth, save_image,
    save_mask, write_raw_grid, RawDtype,
};
use rdepth::phantom;
use rdepth::refine::ParameterizationKind;
use rdepth::{Error, MaskGrid, ScalarGrid};

fn ramp(h: usize, w: usize) -> ScalarGrid {
    ScalarGrid::from_fn(h, w, |r, c| 0.5 + 0.37 * r as f64 - 0.011 * c as f64).unwrap()
}

#[test]
fn pfm_round_trip_is_f32_exact() {
    let dir = tempfile::tempdir().unwrap();
    let g = ramp(5, 7);
    let p = dir.path().join("d.pfm");
    save_depth(&g, &p, 1.0).unwrap();
    let back = load_grid(&p, 1.0).unwrap();
    for (a, b) in g.values().iter().zip(back.values()) {
        assert_eq!(*a as f32 as f64, *b);
    }
}

#[test]
fn raw_f64_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let g = ramp(4, 3);
    let p = dir.path().join("d.rdgr");
    write_raw_grid(&p, &g, RawDtype::F64).unwrap();
    assert_eq!(read_raw_grid(&p).unwrap(), g);
    assert_eq!(std::fs::metadata(&p).unwrap().len(), 16 + 8 * 12);
}

#[test]
fn png_depth_round_trip_within_quantum() {
    let dir = tempfile::tempdir().unwrap();
    let g = ramp(6, 6);
    let p = dir.path().join("d.png");
    let scale = 1.0 / 256.0;
    save_depth(&g, &p, scale).unwrap();
    let d = load_depth(&p, scale).unwrap();
    assert_eq!(d.valid.count(), 36);
    for (a, b) in g.values().iter().zip(d.depth.values()) {
        assert!((a - b).abs() <= 0.5 * scale + 1e-12);
    }
}

#[test]
fn zero_depth_pixels_are_invalid() {
    let dir = tempfile::tempdir().unwrap();
    let g = ScalarGrid::from_fn(3, 3, |r, c| if r == c { 0.0 } else { 2.0 }).unwrap();
    let p = dir.path().join("d.pfm");
    save_depth(&g, &p, 1.0).unwrap();
    let d = load_depth(&p, 1.0).unwrap();
    assert_eq!(d.valid.count(), 6);
    let zeros = dir.path().join("z.pfm");
    save_depth(&ScalarGrid::filled(3, 3, 0.0).unwrap(), &zeros, 1.0).unwrap();
    assert!(matches!(load_depth(&zeros, 1.0), Err(Error::Domain(_))));
}

#[test]
fn images_and_masks_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let img = phantom::albedo_image(9);
    for (name, tol) in [("a.png", 0.5 / 255.0), ("a.ppm", 0.5 / 255.0)] {
        let p = dir.path().join(name);
        save_image(&img, &p).unwrap();
        let back = load_image(&p).unwrap();
        assert!(back.max_abs_diff(&img) <= tol + 1e-12, "{name}");
    }
    let p16 = dir.path().join("b.png");
    save_image16(&img, &p16).unwrap();
    assert!(load_image(&p16).unwrap().max_abs_diff(&img) <= 0.5 / 65535.0 + 1e-12);

    let mask = MaskGrid::from_fn(4, 5, |r, c| (r + c) % 3 == 0).unwrap();
    let mp = dir.path().join("m.png");
    save_mask(&mask, &mp).unwrap();
    assert_eq!(load_mask(&mp).unwrap(), mask);
}

#[test]
fn prompt_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("scene.png");
    assert_eq!(load_prompt(&img).unwrap(), None);
    std::fs::write(dir.path().join("scene.prompt.txt"), "a red chair\nignored\n").unwrap();
    assert_eq!(load_prompt(&img).unwrap().as_deref(), Some("a red chair"));
}

#[test]
fn config_canonical_text_reparses() {
    let cfg = parse_config("# comment\niterations = 25\nparameterization = smoothed\nlr_disparity = 0.003\ncamera = perspective\n").unwrap();
    assert_eq!(cfg.refine.iterations, 25);
    assert_eq!(cfg.refine.parameterization, ParameterizationKind::Smoothed);
    let text = cfg.to_canonical_text();
    let again = parse_config(&text).unwrap();
    assert_eq!(again.to_canonical_text(), text);
    assert!(matches!(parse_config("bogus = 1"), Err(Error::Config(_))));
}
