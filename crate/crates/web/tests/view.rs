use volperc_web::view;

#[test]
fn layers_are_rgba_of_the_right_size() {
    for layer in ["optical", "ndsm", "ndvi", "mask"] {
        let px = view::scene_layer(4, 32, layer).unwrap();
        assert_eq!(px.len(), 32 * 32 * 4, "{layer}");
        assert!(px.chunks(4).all(|p| p[3] == 255));
    }
    assert!(view::scene_layer(4, 32, "lidar").is_err());
    assert!(view::scene_layer(4, 1024, "mask").is_err());
}

#[test]
fn class_fractions_sum_to_one() {
    let f = view::scene_class_fractions(1, 64).unwrap();
    assert_eq!(f.len(), volperc::data::CLASS_NAMES.len());
    assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn positional_features_and_labels() {
    assert_eq!(view::positional_channels(8), 34);
    let px = view::positional_feature(16, 8, 32.0, 33).unwrap();
    assert_eq!(px.len(), 16 * 16 * 4);
    assert!(view::positional_feature(16, 8, 32.0, 34).is_err());
    assert!(view::positional_label(8, 32.0, 0).starts_with("row sin"));
    assert!(view::positional_label(8, 32.0, 17).starts_with("column sin"));
    assert_eq!(view::positional_label(8, 32.0, 16), "row coordinate");
    assert_eq!(view::positional_label(8, 32.0, 34), "");
}

#[test]
fn losses_match_closed_forms() {
    let v = view::losses_for(6, 1.0 / 6.0).unwrap();
    assert!((v[0] - 5.0 / 7.0).abs() < 1e-9, "dice {}", v[0]);
    assert!((v[1] - 6f64.ln()).abs() < 1e-9, "ce {}", v[1]);
    assert!((v[2] - v[0] - v[1]).abs() < 1e-9);
    let perfect = view::losses_for(4, 1.0).unwrap();
    assert!(perfect.iter().all(|x| x.abs() < 1e-6), "{perfect:?}");
    assert!(view::losses_for(1, 0.5).is_err());
    assert!(view::losses_for(3, 1.5).is_err());
}

#[test]
fn metrics_layout_and_nan() {
    // class 2 never occurs and is never predicted
    let m = view::metrics_for(3, &[3, 1, 0, 1, 3, 0, 0, 0, 0]).unwrap();
    assert_eq!(m.len(), 3 + 3 + 3);
    assert!((m[0] - 0.75).abs() < 1e-12);
    assert!((m[3] - 0.6).abs() < 1e-12);
    assert!(m[2].is_nan());
    assert!(view::metrics_for(3, &[1, 2]).is_err());
}
