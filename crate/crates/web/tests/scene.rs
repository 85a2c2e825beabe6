use bgseg::Tensor;
use bgseg_web::{to_rgba, DemoScene, Source};

#[test]
fn rgba_is_interleaved_and_opaque() {
    // Two pixels: red-ish and white, stored planar.
    let t = Tensor::new(vec![3, 1, 2], vec![1.0, 1.0, 0.0, 1.0, 0.5, 1.0]).unwrap();
    assert_eq!(to_rgba(&t), vec![255, 0, 128, 255, 255, 255, 255, 255]);
    let out_of_range = Tensor::new(vec![3, 1, 1], vec![-0.2, 1.7, 0.0]).unwrap();
    assert_eq!(to_rgba(&out_of_range), vec![0, 255, 0, 255]);
}

#[test]
fn buffers_match_the_canvas_size() {
    let scene = DemoScene::new("moving_square", 1).unwrap();
    let n = 4 * scene.width() * scene.height();
    assert_eq!(scene.frame_rgba(0).unwrap().len(), n);
    for s in [Source::Truth, Source::Pca, Source::Rpca] {
        assert_eq!(scene.background_rgba(5, s).unwrap().len(), n);
        assert_eq!(scene.overlay_rgba(5, s, 0.1).unwrap().len(), n);
    }
    assert!(scene.frame_rgba(scene.len()).is_err());
}

#[test]
fn clean_background_separates_the_square() {
    let scene = DemoScene::new("moving_square", 0).unwrap();
    // The red square differs from the background by well over 0.1 on the red
    // channel, and the pixel noise (sigma 0.01) stays far below it.
    for t in [3, 17, 30] {
        assert!(scene.frame_f_measure(t, Source::Truth, 0.1).unwrap() > 0.99, "frame {t}");
    }
    let curve = scene.sweep(Source::Truth).unwrap();
    assert_eq!(curve.len(), 51);
    let best = curve
        .iter()
        .enumerate()
        .fold(0, |b, (i, &f)| if f > curve[b] { i } else { b });
    assert!(best > 0 && best < 50, "best index {best}");
}

#[test]
fn overlay_colours_follow_the_labels() {
    let scene = DemoScene::new("moving_square", 0).unwrap();
    // θ = 0 flags every pixel with any noise, so nothing is missed.
    let rgba = scene.overlay_rgba(4, Source::Truth, 0.0).unwrap();
    let blue = rgba.chunks(4).filter(|p| p[..3] == [40, 90, 240]).count();
    assert_eq!(blue, 0);
    let green = rgba.chunks(4).filter(|p| p[..3] == [40, 220, 60]).count();
    assert_eq!(green, 12 * 12);
}

#[test]
fn names_are_checked() {
    assert!(Source::parse("median").is_err());
    assert!(DemoScene::new("forest", 0).is_err());
    assert_eq!(Source::parse("rpca").unwrap(), Source::Rpca);
}
