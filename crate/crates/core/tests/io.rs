use gatedseg::io::{load_mask, load_rgb, load_weights, pair_dataset, save_mask, save_weights, WeightContainer};
use gatedseg::net::train_toy;
use gatedseg::{Error, GrayImage, ModelConfig, ModelParams, Preset};
use std::fs;

#[test]
fn ascii_pgm_mask() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.pgm");
    fs::write(&path, "P2\n2 2\n255\n0 255\n255 0\n").unwrap();
    let m = load_mask(&path).unwrap();
    assert_eq!((m.height(), m.width()), (2, 2));
    assert_eq!(m.data(), &[0.0, 1.0, 1.0, 0.0]);
}

#[test]
fn mask_round_trip_png_and_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let img = GrayImage::from_fn(7, 9, |y, x| ((y * 9 + x) as f64 * 0.0137).fract());
    for name in ["a.png", "a.pgm"] {
        let path = dir.path().join(name);
        save_mask(&img, &path).unwrap();
        let back = load_mask(&path).unwrap();
        assert!(back.same_dims(&img));
        let worst = img
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1.0 / 510.0 + 1e-12, "{name}: {worst}");
    }
    let rgb = load_rgb(dir.path().join("a.png")).unwrap();
    assert_eq!(rgb.shape().dims(), [1, 3, 7, 9]);
}

#[test]
fn missing_file_names_the_path() {
    let err = load_mask("/nonexistent/dir/mask.png").unwrap_err();
    assert!(err.to_string().contains("/nonexistent/dir/mask.png"), "{err}");
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.png");
    fs::write(&junk, b"not an image").unwrap();
    assert!(matches!(load_mask(&junk), Err(Error::Image { .. })));
}

#[test]
fn trained_weights_round_trip_byte_identical() {
    let report = train_toy(ModelConfig::preset(Preset::M5), 1, 3, 1e-4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.gnwt"), dir.path().join("b.gnwt"));
    save_weights(&report.params, &a).unwrap();
    let loaded = load_weights(&a).unwrap();
    assert_eq!(loaded, report.params);
    save_weights(&loaded, &b).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let c = WeightContainer::load(&a).unwrap();
    assert_eq!(c.entries[0].name, "config");
}

#[test]
fn weight_file_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = ModelParams::init(ModelConfig::preset(Preset::M1), 1).unwrap();
    let path = dir.path().join("w.gnwt");
    save_weights(&p, &path).unwrap();
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    let err = load_weights(&path).unwrap_err();
    assert!(
        err.to_string().contains("truncated") && err.to_string().contains("w.gnwt"),
        "{err}"
    );
    assert!(load_weights(dir.path().join("absent.gnwt")).is_err());
}

fn touch(dir: &std::path::Path, name: &str) {
    save_mask(&GrayImage::filled(2, 2, 0.5), dir.join(name)).unwrap();
}

#[test]
fn pairing_by_stem() {
    let pred = tempfile::tempdir().unwrap();
    let gt = tempfile::tempdir().unwrap();
    touch(pred.path(), "x.png");
    touch(gt.path(), "x.pgm");
    touch(pred.path(), "only_pred.png");
    touch(gt.path(), "only_gt.png");
    fs::write(pred.path().join("notes.txt"), "ignored").unwrap();
    let p = pair_dataset(pred.path(), gt.path()).unwrap();
    assert_eq!(p.pairs.len(), 1);
    assert_eq!(p.pairs[0].stem, "x");
    assert_eq!(p.unmatched, ["only_gt", "only_pred"]);

    touch(pred.path(), "x.pgm");
    let err = pair_dataset(pred.path(), gt.path()).unwrap_err();
    assert!(err.to_string().contains("`x`"), "{err}");

    let empty = tempfile::tempdir().unwrap();
    assert!(matches!(pair_dataset(empty.path(), gt.path()), Err(Error::Dataset(_))));
}
