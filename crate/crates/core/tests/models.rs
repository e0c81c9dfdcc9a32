use rand::Rng;
use stan::models::checkpoint::{load_discriminator, load_generator, save_discriminator, save_generator};
use stan::models::*;
use stan::rng::{stream_rng, Stream};
use stan::Tensor;

fn uniform(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut r = stream_rng(seed, Stream::Misc, 99);
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
}

fn desk_pair(seed: u64) -> (Generator<f32>, Discriminator<f32>) {
    let g = Generator::new(GeneratorConfig::scaled(64, 4), &mut stream_rng(seed, Stream::GeneratorInit, 0)).unwrap();
    let d = Discriminator::new(DiscriminatorConfig::scaled(64, 4), &mut stream_rng(seed, Stream::DiscriminatorInit, 0))
        .unwrap();
    (g, d)
}

#[test]
fn desk_shapes() {
    let (g, d) = desk_pair(1);
    let w = uniform(&[10, 64, 64, 1], 2);
    assert_eq!(g.forward(&w).unwrap().shape(), &[64, 64, 1]);
    let s = uniform(&[11, 64, 64, 1], 3);
    assert_eq!(d.forward(&s).unwrap().shape(), &[1, 2, 2, 1]);
    assert_eq!(d.config().patch_grid(), 2);
    let shapes: Vec<Vec<usize>> = d
        .forward_trace(&s)
        .unwrap()
        .layer_shapes()
        .into_iter()
        .map(|r| r.1)
        .collect();
    assert_eq!(
        shapes,
        vec![
            vec![7, 32, 32, 8],
            vec![5, 16, 16, 16],
            vec![3, 8, 8, 32],
            vec![1, 4, 4, 64],
            vec![1, 2, 2, 128],
            vec![1, 2, 2, 1],
        ]
    );
}

#[test]
fn zero_networks_give_tanh_and_sigmoid_of_zero() {
    let g = Generator::<f32>::zeros(GeneratorConfig::scaled(32, 2)).unwrap();
    let out = g.forward(&uniform(&[10, 32, 32, 1], 4)).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.0));
    let d = Discriminator::<f32>::zeros(DiscriminatorConfig::scaled(32, 2)).unwrap();
    let p = d.forward(&uniform(&[11, 32, 32, 1], 5)).unwrap();
    assert!(p.data().iter().all(|&v| v == 0.5));
}

#[test]
fn zero_decoder_output_layer_gives_zero_frame() {
    let (mut g, _) = desk_pair(6);
    g.decoder[3].weight.fill(0.0);
    g.decoder[3].bias.fill(0.0);
    let out = g.forward(&uniform(&[10, 64, 64, 1], 7)).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn zero_final_discriminator_layer_gives_half() {
    let (_, mut d) = desk_pair(8);
    d.layers[5].weight.fill(0.0);
    d.layers[5].bias.fill(0.0);
    let p = d.forward(&uniform(&[11, 64, 64, 1], 9)).unwrap();
    assert!(p.data().iter().all(|&v| v == 0.5));
}

#[test]
fn output_ranges_hold_for_extreme_inputs() {
    let (g, d) = desk_pair(10);
    for scale in [1.0f32, 50.0] {
        let w = uniform(&[2, 10, 64, 64, 1], 11).map(|v| v * scale);
        let out = g.forward(&w).unwrap();
        assert!(out.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let s = uniform(&[2, 11, 64, 64, 1], 12).map(|v| v * scale);
        let p = d.forward(&s).unwrap();
        assert!(p.data().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    }
}

#[test]
fn window_length_and_size_are_checked() {
    let (g, d) = desk_pair(13);
    assert!(g.forward(&uniform(&[9, 64, 64, 1], 14)).is_err());
    assert!(g.forward(&uniform(&[10, 32, 32, 1], 14)).is_err());
    assert!(d.forward(&uniform(&[10, 64, 64, 1], 15)).is_err());
    assert!(GeneratorConfig::scaled(60, 4).validate().is_err());
}

#[test]
fn fake_sequence_assembly() {
    let w = uniform(&[10, 8, 8, 1], 16);
    let center = uniform(&[8, 8, 1], 17);
    let s = assemble_fake_sequence(&w, &center).unwrap();
    assert_eq!(s.shape(), &[11, 8, 8, 1]);
    for i in 0..5 {
        assert_eq!(s.slice_axis0(i), w.slice_axis0(i));
        assert_eq!(s.slice_axis0(i + 6), w.slice_axis0(i + 5));
    }
    assert_eq!(s.slice_axis0(5), center.data());
    assert!(assemble_fake_sequence(&w, &uniform(&[4, 8, 1], 18)).is_err());
}

#[test]
fn assembling_the_true_center_reproduces_the_real_sequence() {
    let real = uniform(&[11, 8, 8, 1], 19);
    let mut window = Vec::new();
    for i in (0..11).filter(|&i| i != 5) {
        window.extend_from_slice(real.slice_axis0(i));
    }
    let window = Tensor::from_vec(&[10, 8, 8, 1], window).unwrap();
    let s = assemble_fake_sequence(&window, &real.index_axis0(5)).unwrap();
    assert_eq!(s, real);
}

#[test]
fn parameter_counts_are_a_function_of_config() {
    let (g1, d1) = desk_pair(20);
    let (g2, d2) = desk_pair(21);
    assert_eq!(g1.param_count(), g2.param_count());
    assert_eq!(d1.param_count(), d2.param_count());
    // ConvLSTM gate convolutions: 3*3*(in+hidden)*4*hidden + 4*hidden
    let lstm = |i: usize, h: usize| 9 * (i + h) * 4 * h + 4 * h;
    let enc = 25 * 4 + 4 + 25 * 4 * 8 + 8 + 9 * 8 * 16 + 16 + 9 * 16 * 32 + 32;
    let dec = 9 * 32 * 16 + 16 + 9 * 16 * 8 + 8 + 25 * 8 * 4 + 4 + 25 * 4 + 1;
    assert_eq!(g1.param_count(), enc + 2 * lstm(32, 16) + lstm(32, 32) + dec);
}

#[test]
fn checkpoints_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (g, d) = desk_pair(22);
    save_generator(dir.path(), &g).unwrap();
    save_discriminator(dir.path(), &d).unwrap();
    let g2: Generator<f32> = load_generator(dir.path()).unwrap();
    let d2: Discriminator<f32> = load_discriminator(dir.path()).unwrap();
    let bits = |v: Vec<f32>| v.into_iter().map(f32::to_bits).collect::<Vec<_>>();
    assert_eq!(bits(g.flat_params()), bits(g2.flat_params()));
    assert_eq!(bits(d.flat_params()), bits(d2.flat_params()));
    assert_eq!(g2.config(), g.config());

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("generator.json")).unwrap()).unwrap();
    assert_eq!(manifest["dtype"], "f32");
    assert_eq!(manifest["tensors"][0]["name"], "conv1.weight");
    assert_eq!(manifest["tensors"][0]["offset"], 0);
    let blob = std::fs::metadata(dir.path().join("generator.bin")).unwrap().len();
    assert_eq!(blob as usize, 4 * g.param_count());
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (g, _) = desk_pair(23);
    save_generator(dir.path(), &g).unwrap();
    let bin = dir.path().join("generator.bin");
    let bytes = std::fs::read(&bin).unwrap();
    std::fs::write(&bin, &bytes[..bytes.len() - 4]).unwrap();
    assert!(load_generator::<f32>(dir.path()).is_err());
    assert!(load_discriminator::<f32>(dir.path()).is_err());
}

#[test]
fn forward_is_deterministic() {
    let (g, d) = desk_pair(24);
    let w = uniform(&[10, 64, 64, 1], 25);
    let a = g.forward(&w).unwrap();
    let b = g.forward(&w).unwrap();
    assert_eq!(
        a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    let s = uniform(&[11, 64, 64, 1], 26);
    assert_eq!(d.forward(&s).unwrap(), d.forward(&s).unwrap());
}
