use super::*;
use crate::rng::rng_from_seed;

fn micro_cfg() -> IADCCNConfig {
    IADCCNConfig {
        in_channels: 1,
        block_channels: [2, 2, 2, 4, 4],
        block_depths: [1, 1, 1, 1, 1],
        dru_channels: 4,
        iab_enabled: true,
        iab_hidden: 2,
        seg_head_enabled: false,
        upsample_factor: 4,
    }
}

fn rand_input(rng: &mut rand_chacha::ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor<f64> {
    let data: Vec<f64> = (0..c * h * w).map(|_| crate::rng::uniform(rng)).collect();
    Tensor::leaf(&[1, c, h, w], data).unwrap()
}

#[test]
fn init_is_deterministic_with_zero_biases() {
    let cfg = IADCCNConfig::default();
    let a: ModelParams<f64> = ModelParams::init(&cfg, &mut rng_from_seed(7)).unwrap();
    let b: ModelParams<f64> = ModelParams::init(&cfg, &mut rng_from_seed(7)).unwrap();
    assert!(a.data_equals(&b));
    let c: ModelParams<f64> = ModelParams::init(&cfg, &mut rng_from_seed(8)).unwrap();
    assert!(!a.data_equals(&c));

    for (name, t) in a.iter() {
        if name.ends_with(".bias") {
            assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
        }
    }
}

#[test]
fn density_module_init_std_is_a_hundredth() {
    let cfg = IADCCNConfig::default();
    let p: ModelParams<f64> = ModelParams::init(&cfg, &mut rng_from_seed(9)).unwrap();
    let w = p.get("dm.conv1.weight").unwrap();
    assert!(w.numel() >= 10_000, "need a large sample, got {}", w.numel());
    let mean: f64 = w.data().iter().sum::<f64>() / w.numel() as f64;
    let var: f64 =
        w.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w.numel() as f64;
    let std = var.sqrt();
    assert!((0.008..=0.012).contains(&std), "std {std}");
}

#[test]
fn parameter_inventory_is_a_golden_function_of_config() {
    let inv = micro_cfg().parameter_inventory();
    let got: Vec<(String, Vec<usize>)> = inv;
    let expect: Vec<(&str, Vec<usize>)> = vec![
        ("backbone.block1.conv1.weight", vec![2, 1, 3, 3]),
        ("backbone.block1.conv1.bias", vec![2]),
        ("backbone.block2.conv1.weight", vec![2, 2, 3, 3]),
        ("backbone.block2.conv1.bias", vec![2]),
        ("backbone.block3.conv1.weight", vec![2, 2, 3, 3]),
        ("backbone.block3.conv1.bias", vec![2]),
        ("backbone.block4.conv1.weight", vec![4, 2, 3, 3]),
        ("backbone.block4.conv1.bias", vec![4]),
        ("backbone.block5.conv1.weight", vec![4, 4, 3, 3]),
        ("backbone.block5.conv1.bias", vec![4]),
        ("dru.conv.weight", vec![4, 4, 1, 1]),
        ("dru.conv.bias", vec![4]),
        ("iab.conv1.weight", vec![2, 4, 1, 1]),
        ("iab.conv1.bias", vec![2]),
        ("iab.conv2.weight", vec![2, 2, 3, 3]),
        ("iab.conv2.bias", vec![2]),
        ("iab.conv3.weight", vec![1, 2, 3, 3]),
        ("iab.conv3.bias", vec![1]),
        ("dm.conv1.weight", vec![4, 4, 3, 3]),
        ("dm.conv1.bias", vec![4]),
        ("dm.conv2.weight", vec![4, 4, 3, 3]),
        ("dm.conv2.bias", vec![4]),
        ("dm.conv3.weight", vec![1, 4, 3, 3]),
        ("dm.conv3.bias", vec![1]),
    ];
    assert_eq!(got.len(), expect.len());
    for ((gn, gs), (en, es)) in got.iter().zip(&expect) {
        assert_eq!(gn, en);
        assert_eq!(gs, es);
    }
}

#[test]
fn backbone_output_stride_and_channels() {
    let cfg = IADCCNConfig::default();
    let p: ModelParams<f64> = ModelParams::init(&cfg, &mut rng_from_seed(10)).unwrap();
    let mut rng = rng_from_seed(11);
    let x = rand_input(&mut rng, 1, 32, 48);
    let f5 = backbone_forward(&p, &x).unwrap();
    assert_eq!(f5.shape(), &[1, cfg.block_channels[4], 2, 3]);

    let bad = rand_input(&mut rng, 1, 24, 32);
    assert!(matches!(
        backbone_forward(&p, &bad),
        Err(Error::Config(_))
    ));
}

#[test]
fn backbone_224_input_gives_14x14_then_56x56_density() {
    let mut cfg = IADCCNConfig::default();
    cfg.in_channels = 3;
    let p: ModelParams<f64> = ModelParams::init(&cfg, &mut rng_from_seed(12)).unwrap();
    let mut rng = rng_from_seed(13);
    let x = rand_input(&mut rng, 3, 224, 224);
    let f5 = backbone_forward(&p, &x).unwrap();
    assert_eq!(&f5.shape()[2..], &[14, 14]);
    let out = forward(&p, &x).unwrap();
    assert_eq!(out.density.shape(), &[1, 1, 56, 56]);
    assert!(out.a_inv.is_some());
}

#[test]
fn dru_reduces_channels_and_upsamples() {
    let cfg = IADCCNConfig::default();
    let p: ModelParams<f64> = ModelParams::init(&cfg, &mut rng_from_seed(14)).unwrap();
    let mut rng = rng_from_seed(15);
    let f5 = rand_input(&mut rng, cfg.block_channels[4], 14, 14);
    let f = dru_forward(&p, &f5).unwrap();
    assert_eq!(f.shape(), &[1, cfg.dru_channels, 56, 56]);

    // constant feature map stays constant per channel through 1x1 conv,
    // relu and bilinear upsampling
    let c5 = Tensor::full(&[1, cfg.block_channels[4], 4, 4], 0.3);
    let f = dru_forward(&p, &c5).unwrap();
    let hw = 16 * 16;
    for ch in 0..cfg.dru_channels {
        let plane = &f.data()[ch * hw..(ch + 1) * hw];
        assert!(plane.iter().all(|&v| v == plane[0]), "channel {ch}");
    }
}

#[test]
fn iab_bypass_identities() {
    let cfg = micro_cfg();
    let p: ModelParams<f64> = ModelParams::init(&cfg, &mut rng_from_seed(16)).unwrap();
    let mut rng = rng_from_seed(17);
    let f = rand_input(&mut rng, cfg.dru_channels, 6, 6);

    let (refined, a_inv) = iab_forward_with(&p, &f, Some(0.0)).unwrap();
    assert_eq!(refined.data(), f.data(), "A_inv = 0 must keep F bitwise");
    assert!(a_inv.data().iter().all(|&v| v == 0.0));

    let (refined, _) = iab_forward_with(&p, &f, Some(1.0)).unwrap();
    assert!(refined.data().iter().all(|&v| v == 0.0));

    let two = Tensor::full(&[1, cfg.dru_channels, 6, 6], 2.0);
    let (refined, _) = iab_forward_with(&p, &two, Some(0.5)).unwrap();
    assert!(refined.data().iter().all(|&v| (v - 1.0).abs() <= 1e-12));

    let (_, a_inv) = iab_forward(&p, &f).unwrap();
    assert!(a_inv.data().iter().all(|&v| v > 0.0 && v < 1.0));
    assert_eq!(a_inv.shape(), &[1, 1, 6, 6]);

    let wrong = rand_input(&mut rng, cfg.dru_channels + 1, 6, 6);
    assert!(matches!(iab_forward(&p, &wrong), Err(Error::Dim(_))));
}

#[test]
fn density_module_shape_and_zero_weights() {
    let cfg = micro_cfg();
    let mut p: ModelParams<f64> = ModelParams::init(&cfg, &mut rng_from_seed(18)).unwrap();
    let mut rng = rng_from_seed(19);
    let f = rand_input(&mut rng, cfg.dru_channels, 6, 7);
    let d = density_module_forward(&p, &f).unwrap();
    assert_eq!(d.shape(), &[1, 1, 6, 7]);

    for name in ["dm.conv1", "dm.conv2", "dm.conv3"] {
        let w = p.get(&format!("{name}.weight")).unwrap();
        p.replace(&format!("{name}.weight"), Tensor::zeros(w.shape()))
            .unwrap();
    }
    let d = density_module_forward(&p, &f).unwrap();
    assert!(d.data().iter().all(|&v| v == 0.0));
}

#[test]
fn forward_contract_per_config() {
    let mut cfg = micro_cfg();
    cfg.iab_enabled = false;
    cfg.seg_head_enabled = true;
    let p: ModelParams<f64> = ModelParams::init(&cfg, &mut rng_from_seed(20)).unwrap();
    let mut rng = rng_from_seed(21);
    let x = rand_input(&mut rng, 1, 32, 32);
    let out = forward(&p, &x).unwrap();
    assert!(out.a_inv.is_none());
    assert_eq!(out.seg_logits.as_ref().unwrap().shape(), &[1, 1, 8, 8]);
    assert_eq!(out.density.shape(), &[1, 1, 8, 8]);
}

#[test]
fn forcing_attention_off_matches_base_network() {
    // identical seeds give identical shared weights, so the attention-off
    // model must match the base model through the same density path
    let iab_cfg = micro_cfg();
    let mut base_cfg = micro_cfg();
    base_cfg.iab_enabled = false;

    let p_iab: ModelParams<f64> = ModelParams::init(&iab_cfg, &mut rng_from_seed(22)).unwrap();
    let p_base: ModelParams<f64> = ModelParams::init(&base_cfg, &mut rng_from_seed(22)).unwrap();

    let mut rng = rng_from_seed(23);
    let x = rand_input(&mut rng, 1, 32, 32);
    let forced = forward_with_hooks(
        &p_iab,
        &x,
        &ForwardHooks {
            force_a_inv: Some(0.0),
        },
    )
    .unwrap();
    let base = forward(&p_base, &x).unwrap();
    for (a, b) in forced.density.data().iter().zip(base.density.data()) {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }

    // a large negative final bias saturates the sigmoid toward 0, which
    // approximates the bypass
    let mut p_sat: ModelParams<f64> = ModelParams::init(&iab_cfg, &mut rng_from_seed(22)).unwrap();
    p_sat
        .replace("iab.conv3.bias", Tensor::full(&[1], -50.0))
        .unwrap();
    let sat = forward(&p_sat, &x).unwrap();
    for (a, b) in sat.density.data().iter().zip(base.density.data()) {
        assert!((a - b).abs() <= 1e-4, "{a} vs {b}");
    }
}

#[test]
fn fully_convolutional_output_dims() {
    let cfg = micro_cfg();
    let p: ModelParams<f64> = ModelParams::init(&cfg, &mut rng_from_seed(24)).unwrap();
    let mut rng = rng_from_seed(25);
    for (h, w) in [(16, 16), (32, 48), (64, 32), (48, 80)] {
        let x = rand_input(&mut rng, 1, h, w);
        let out = forward(&p, &x).unwrap();
        assert_eq!(out.density.shape(), &[1, 1, h / 4, w / 4]);
    }
}

#[test]
fn infer_density_pads_and_crops_to_quarter_resolution() {
    let cfg = micro_cfg();
    let p: ModelParams<f64> = ModelParams::init(&cfg, &mut rng_from_seed(26)).unwrap();
    let img = crate::data::AnnotatedImage::new(
        "t".to_string(),
        37,
        23,
        1,
        vec![0.5; 37 * 23],
        vec![],
    )
    .unwrap();
    let d = infer_density(&p, &img).unwrap();
    assert_eq!((d.height, d.width), (23usize.div_ceil(4), 37usize.div_ceil(4)));
    assert_eq!(d.scale, 4);
}

#[test]
fn weight_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("weights.iawt");
    let cfg = micro_cfg();
    let p: ModelParams<f32> = ModelParams::init(&cfg, &mut rng_from_seed(27)).unwrap();
    save_params(&path, &p).unwrap();
    let first = std::fs::read(&path).unwrap();
    let loaded: ModelParams<f32> = load_params(&path, &cfg).unwrap();
    save_params(&path, &loaded).unwrap();
    let second = std::fs::read(&path).unwrap();
    assert_eq!(first, second, "save-load-save must be byte-identical");
    assert!(p.data_equals(&loaded));

    // forward of loaded params matches the original bitwise (f32 storage)
    let mut rng = rng_from_seed(28);
    let data: Vec<f32> = (0..32 * 32).map(|_| crate::rng::uniform(&mut rng) as f32).collect();
    let x = Tensor::leaf(&[1, 1, 32, 32], data).unwrap();
    let a = forward(&p, &x).unwrap();
    let b = forward(&loaded, &x).unwrap();
    assert_eq!(a.density.data(), b.density.data());
}

#[test]
fn weight_file_inventory_mismatch_names_missing_tensors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("base.iawt");
    let mut base_cfg = micro_cfg();
    base_cfg.iab_enabled = false;
    let p: ModelParams<f32> = ModelParams::init(&base_cfg, &mut rng_from_seed(29)).unwrap();
    save_params(&path, &p).unwrap();

    let iab_cfg = micro_cfg();
    match load_params::<f32>(&path, &iab_cfg) {
        Err(Error::Data(m)) => {
            assert!(m.contains("missing"), "{m}");
            assert!(m.contains("iab.conv1.weight"), "{m}");
        }
        other => panic!("expected inventory error, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn micro_model_end_to_end_gradcheck() {
    let mut cfg = micro_cfg();
    cfg.seg_head_enabled = true;
    let err = model_gradient_check(&cfg, 32, 32, 31).unwrap();
    assert!(err <= 1e-3, "end-to-end rel err {err}");
}
