use proptest::prelude::*;
use volperc::data::{
    mask_to_pgm, read_mmrt, read_pgm, split_by_ids, stack_modalities, synth_dataset, tile_scene, write_mmrt, MmrtTile,
    MultimodalScene, SplitSpec, StackRecipe, SynthParams,
};
use volperc::dataset::{read_tiles, tile_scenes, write_tiles};
use volperc::Tensor;

fn mmrt_tile() -> impl Strategy<Value = MmrtTile> {
    (1usize..6, 1usize..6, 1usize..4, 2usize..7, any::<bool>()).prop_flat_map(|(h, w, c, k, with_mask)| {
        (
            prop::collection::vec(any::<u32>(), h * w * c),
            prop::collection::vec(0..k as u8, h * w),
            prop::collection::vec("[A-Za-z0-9_]{1,6}", c),
        )
            .prop_map(move |(bits, mask, names)| MmrtTile {
                height: h,
                width: w,
                num_classes: k,
                band_names: names,
                // Arbitrary bit patterns, NaN payloads included.
                bands: bits.into_iter().map(f32::from_bits).collect(),
                mask: with_mask.then_some(mask),
            })
    })
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mmrt_round_trip_is_bit_exact(t in mmrt_tile()) {
        let bytes = t.to_bytes().unwrap();
        let back = MmrtTile::from_bytes(&bytes).unwrap();
        prop_assert_eq!(bits(&back.bands), bits(&t.bands));
        prop_assert_eq!(&back.band_names, &t.band_names);
        prop_assert_eq!(&back.mask, &t.mask);
        prop_assert_eq!((back.height, back.width, back.num_classes), (t.height, t.width, t.num_classes));
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn truncated_mmrt_is_rejected(t in mmrt_tile(), cut in 1usize..8) {
        let bytes = t.to_bytes().unwrap();
        let cut = cut.min(bytes.len());
        // Dropping exactly the mask plane yields a valid mask-less tile, anything else must fail.
        let plane = t.height * t.width;
        prop_assume!(!(t.mask.is_some() && cut == plane));
        prop_assert!(MmrtTile::from_bytes(&bytes[..bytes.len() - cut]).is_err());
    }

    #[test]
    fn splits_are_disjoint_and_cover_named_scenes(
        assign in prop::collection::vec(0u8..4, 1..30),
    ) {
        // 0/1/2 = train/val/test, 3 = not named by any list
        let ids: Vec<String> = (0..assign.len()).map(|i| format!("s{i}")).collect();
        let mut spec = SplitSpec::default();
        for (id, &a) in ids.iter().zip(&assign) {
            match a {
                0 => spec.train.push(id.clone()),
                1 => spec.val.push(id.clone()),
                2 => spec.test.push(id.clone()),
                _ => {}
            }
        }
        spec.test.push("absent".into());
        let r = split_by_ids(ids.clone(), &spec, |s| s.as_str()).unwrap();
        let mut seen: Vec<&String> = r.train.iter().chain(&r.val).chain(&r.test).collect();
        let named = seen.len();
        seen.sort();
        seen.dedup();
        prop_assert_eq!(seen.len(), named);
        prop_assert_eq!(named + r.unassigned.len(), ids.len());
        prop_assert_eq!(r.missing, vec!["absent".to_string()]);
        prop_assert_eq!(&r.train, &spec.train);
    }

    #[test]
    fn tiling_covers_every_pixel_in_place(h in 4usize..20, w in 4usize..20, tile in 2usize..5, stride_frac in 0.0f64..1.0) {
        let stride = 1 + (stride_frac * tile as f64) as usize;
        let data: Vec<f32> = (0..2 * h * w).map(|i| i as f32).collect();
        let stack = Tensor::from_vec(&[2, h, w], data.clone()).unwrap();
        let mask: Vec<u8> = (0..h * w).map(|i| (i % 3) as u8).collect();
        let tiles = tile_scene("s", &stack, Some(&mask), tile, stride).unwrap();
        let mut covered = vec![false; h * w];
        for t in &tiles {
            let (r0, c0) = (t.origin.row, t.origin.col);
            prop_assert_eq!(t.features.shape(), &[2, tile, tile]);
            prop_assert_eq!(t.padded, r0 + tile > h || c0 + tile > w);
            for r in 0..tile {
                for c in 0..tile {
                    let (y, x) = (r0 + r, c0 + c);
                    if y < h && x < w {
                        covered[y * w + x] = true;
                        for ch in 0..2 {
                            prop_assert_eq!(t.features.data()[(ch * tile + r) * tile + c], data[(ch * h + y) * w + x]);
                        }
                        prop_assert_eq!(t.mask[r * tile + c], mask[y * w + x]);
                    }
                }
            }
        }
        prop_assert!(covered.iter().all(|&c| c));
        let origins: Vec<_> = tiles.iter().map(|t| (t.origin.row, t.origin.col)).collect();
        let mut sorted = origins.clone();
        sorted.sort();
        prop_assert_eq!(origins, sorted);
    }

    #[test]
    fn stacked_channels_stay_in_range(
        raw in prop::collection::vec((0f32..255.0, 0f32..255.0, 0f32..255.0, -5f32..400.0), 16),
    ) {
        let mut s = MultimodalScene::new("x", 4, 4);
        s.add_band("R", raw.iter().map(|v| v.0).collect()).unwrap();
        s.add_band("G", raw.iter().map(|v| v.1).collect()).unwrap();
        s.add_band("IR", raw.iter().map(|v| v.2).collect()).unwrap();
        s.add_band("DSM", raw.iter().map(|v| v.3).collect()).unwrap();
        let t = stack_modalities(&s, &StackRecipe::Vaihingen).unwrap();
        let planes: Vec<&[f32]> = t.data().chunks(16).collect();
        for p in &planes[..4] {
            prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        prop_assert!(planes[4].iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn pgm_round_trip(h in 1usize..9, w in 1usize..9, seed in any::<u8>()) {
        let mask: Vec<u8> = (0..h * w).map(|i| (i as u8).wrapping_mul(seed) % 6).collect();
        let bytes = mask_to_pgm(&mask, h, w).unwrap();
        prop_assert_eq!(read_pgm(&bytes).unwrap(), (h, w, mask));
    }
}

#[test]
fn tiles_survive_disk_round_trip() {
    let scenes = synth_dataset(SynthParams { seed: 4, scenes: 2, size: 64 }).unwrap();
    let tiles = tile_scenes(&scenes, &StackRecipe::Vaihingen, 32, 32).unwrap();
    assert_eq!(tiles.len(), 8);
    let dir = tempfile::tempdir().unwrap();
    write_tiles(dir.path(), &tiles, &StackRecipe::Vaihingen.channels(), 4).unwrap();
    let back = read_tiles(dir.path()).unwrap();
    assert_eq!(back.len(), tiles.len());
    for t in &tiles {
        let b = back.iter().find(|b| b.origin == t.origin).unwrap();
        assert_eq!(bits(b.features.data()), bits(t.features.data()));
        assert_eq!(b.mask, t.mask);
    }

    let one = volperc::dataset::tile_to_mmrt(&tiles[0], &StackRecipe::Vaihingen.channels(), 4);
    let path = dir.path().join("x.mmrt");
    write_mmrt(&path, &one).unwrap();
    assert_eq!(read_mmrt(&path).unwrap(), one);
}

#[test]
fn synthetic_scenes_are_deterministic_and_in_range() {
    let p = SynthParams { seed: 9, scenes: 3, size: 48 };
    let a = synth_dataset(p.clone()).unwrap();
    let b = synth_dataset(p).unwrap();
    assert_eq!(a, b);
    for s in &a {
        let t = stack_modalities(s, &StackRecipe::Vaihingen).unwrap();
        assert!(t.all_finite());
        assert!(s.mask.as_ref().unwrap().iter().all(|&l| l < 4));
    }
}
