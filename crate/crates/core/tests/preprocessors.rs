use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use volperc::layers::Conv3dLayer;
use volperc::model::{ModelConfig, Segmenter};
use volperc::perceiver::{fourier_pos_2d, PerceiverConfig};
use volperc::preprocess::{flatten_with_positions, EncoderConv, Preprocessor, PreprocessorKind, UNet2d};
use volperc::{Graph, ParamStore, Tensor};

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn run(pre: &Preprocessor, store: &ParamStore<f64>, tile: Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let x = g.constant(tile);
    let y = pre.forward(&mut g, &p, x).unwrap();
    g.value(y).clone()
}

const KINDS: [PreprocessorKind; 6] = [
    PreprocessorKind::Identity,
    PreprocessorKind::SingleConv2D { filters: 6 },
    PreprocessorKind::UNet2D { stages: 2, base_filters: 4 },
    PreprocessorKind::UNet2D { stages: 3, base_filters: 4 },
    PreprocessorKind::DualLocalBranch { base_filters: 4 },
    PreprocessorKind::UNet3D { base_filters: 2, head_channels: 7 },
];

#[test]
fn every_kind_preserves_spatial_extent() {
    for kind in KINDS {
        let mut store = ParamStore::<f64>::new(1);
        let pre = Preprocessor::new(&mut store, kind, 5).unwrap();
        let y = run(&pre, &store, random(&[5, 16, 12], 2));
        assert_eq!(y.shape(), &[kind.output_channels(5), 16, 12], "{kind}");

        let mut g = Graph::new();
        let f = g.constant(y);
        let pos = g.constant(fourier_pos_2d(16, 12, 2, 4.0).unwrap());
        let rows = flatten_with_positions(&mut g, f, pos).unwrap();
        assert_eq!(g.shape(rows), &[16 * 12, kind.output_channels(5) + 10]);
    }
}

#[test]
fn identity_rows_are_channels_then_encoding() {
    let mut store = ParamStore::<f64>::new(0);
    let pre = Preprocessor::new(&mut store, PreprocessorKind::Identity, 5).unwrap();
    assert_eq!(store.num_elements(), 0);
    for tile in [random(&[5, 4, 4], 3), Tensor::zeros(&[5, 4, 4]).unwrap()] {
        let pe = fourier_pos_2d::<f64>(4, 4, 3, 4.0).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.constant(tile.clone());
        let f = pre.forward(&mut g, &p, x).unwrap();
        let pos = g.constant(pe.clone());
        let rows = flatten_with_positions(&mut g, f, pos).unwrap();
        let v = g.value(rows).data();
        for i in 0..16 {
            let row = &v[i * 19..(i + 1) * 19];
            for c in 0..5 {
                assert_eq!(row[c], tile.data()[c * 16 + i]);
            }
            assert_eq!(&row[5..], &pe.data()[i * 14..(i + 1) * 14]);
        }
    }
}

#[test]
fn single_conv_with_zero_weights_emits_activated_bias() {
    let mut store = ParamStore::<f64>::new(4);
    let pre = Preprocessor::new(&mut store, PreprocessorKind::SingleConv2D { filters: 4 }, 5).unwrap();
    let Preprocessor::SingleConv(conv) = &pre else { panic!() };
    store.get_mut(conv.weight).data_mut().fill(0.0);
    let bias = [0.5, -0.25, 2.0, 0.0];
    store.get_mut(conv.bias).data_mut().copy_from_slice(&bias);
    let y = run(&pre, &store, random(&[5, 6, 6], 5));
    for (c, plane) in y.data().chunks(36).enumerate() {
        assert!(plane.iter().all(|&v| v == bias[c].max(0.0)));
    }
}

#[test]
fn unet2d_skip_concat_widths() {
    let mut store = ParamStore::<f64>::new(6);
    let u = UNet2d::new(&mut store, 5, 3, 4, false).unwrap();
    // Decoder convs see upsampled + skip channels: 2 * level width.
    let widths: Vec<usize> = u.decoder.iter().map(|(_, c)| c.in_channels).collect();
    assert_eq!(widths, vec![16, 8]);
    let outs: Vec<usize> = u.decoder.iter().map(|(_, c)| c.out_channels).collect();
    assert_eq!(outs, vec![8, 4]);
}

#[test]
fn dual_branch_without_spatial_path_is_pointwise() {
    let mut store = ParamStore::<f64>::new(7);
    let pre = Preprocessor::new(&mut store, PreprocessorKind::DualLocalBranch { base_filters: 3 }, 5).unwrap();
    let Preprocessor::UNet2D(u) = &pre else { panic!() };
    let [EncoderConv::Dual { pointwise, spatial }, _] = &u.encoder[0] else { panic!() };
    let (pw, sw, sb) = (pointwise.clone(), spatial.weight, spatial.bias);
    store.get_mut(sw).data_mut().fill(0.0);
    store.get_mut(sb).data_mut().fill(0.0);

    // The first encoder conv is now relu(1x1 conv): compare one pixel by hand.
    let tile = random(&[5, 4, 4], 8);
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let x = g.constant(tile.clone());
    let y = {
        let a = pointwise.forward(&mut g, &p, x).unwrap();
        let b = spatial.forward(&mut g, &p, x).unwrap();
        let s = g.add(a, b).unwrap();
        g.relu(s).unwrap()
    };
    let w = store.get(pw.weight).data();
    let b = store.get(pw.bias).data();
    for co in 0..3 {
        for i in 0..16 {
            let lin: f64 = b[co] + (0..5).map(|ci| w[co * 5 + ci] * tile.data()[ci * 16 + i]).sum::<f64>();
            assert!((g.value(y).data()[co * 16 + i] - lin.max(0.0)).abs() < 1e-12);
        }
    }
}

#[test]
fn unet3d_depends_on_modality_order() {
    let mut store = ParamStore::<f64>::new(9);
    let pre = Preprocessor::new(&mut store, PreprocessorKind::UNet3D { base_filters: 2, head_channels: 3 }, 5).unwrap();
    let tile = random(&[5, 8, 8], 10);
    let mut swapped = tile.clone();
    let (a, b) = swapped.data_mut().split_at_mut(64);
    a.swap_with_slice(&mut b[3 * 64..4 * 64]);
    let y0 = run(&pre, &store, tile);
    let y1 = run(&pre, &store, swapped);
    let diff = y0.data().iter().zip(y1.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    assert!(diff > 1e-6, "{diff}");
}

#[test]
fn one_3d_conv_mixes_three_modality_planes() {
    let mut store = ParamStore::<f64>::new(11);
    let conv = Conv3dLayer::same(&mut store, "c", 1, 2, 3).unwrap();
    let base = random(&[1, 5, 6, 6], 12);
    let out = |t: Tensor<f64>| {
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.constant(t);
        let y = conv.forward(&mut g, &p, x).unwrap();
        g.value(y).clone()
    };
    let y0 = out(base.clone());
    for plane in 0..5 {
        let mut t = base.clone();
        t.data_mut()[plane * 36 + 14] += 1.0;
        let y1 = out(t);
        let touched: Vec<usize> = (0..5)
            .filter(|&d| (0..2).any(|c| {
                let r = (c * 5 + d) * 36..(c * 5 + d + 1) * 36;
                y0.data()[r.clone()] != y1.data()[r]
            }))
            .collect();
        let expect: Vec<usize> = (plane.saturating_sub(1)..=(plane + 1).min(4)).collect();
        assert_eq!(touched, expect, "plane {plane}");
    }
}

#[test]
fn unet3d_output_sees_every_plane() {
    let mut store = ParamStore::<f64>::new(13);
    let pre = Preprocessor::new(&mut store, PreprocessorKind::UNet3D { base_filters: 2, head_channels: 3 }, 5).unwrap();
    let base = random(&[5, 8, 8], 14);
    let y0 = run(&pre, &store, base.clone());
    for plane in [0, 4] {
        let mut t = base.clone();
        for v in &mut t.data_mut()[plane * 64..(plane + 1) * 64] {
            *v += 0.5;
        }
        let y1 = run(&pre, &store, t);
        assert_ne!(y0, y1, "plane {plane}");
    }
}

#[test]
fn divisibility_is_enforced() {
    let cfg = |kind, tile| ModelConfig { in_channels: 5, tile_size: tile, preprocessor: kind, perceiver: PerceiverConfig::default() };
    let mut store = ParamStore::<f32>::new(0);
    assert!(Segmenter::new(&cfg(PreprocessorKind::UNet3D { base_filters: 2, head_channels: 3 }, 6), &mut store).is_err());
    assert!(Segmenter::new(&cfg(PreprocessorKind::UNet2D { stages: 3, base_filters: 2 }, 6), &mut store).is_err());
    assert!(Segmenter::new(&cfg(PreprocessorKind::UNet2D { stages: 2, base_filters: 2 }, 6), &mut store).is_ok());
}

#[test]
fn identity_has_no_parameters_and_others_do() {
    for kind in KINDS {
        let mut store = ParamStore::<f32>::new(0);
        Preprocessor::new(&mut store, kind, 5).unwrap();
        assert_eq!(store.num_elements() == 0, kind == PreprocessorKind::Identity, "{kind}");
    }
}
