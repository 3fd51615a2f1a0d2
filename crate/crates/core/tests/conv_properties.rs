use gpr_anomaly::nn::{conv2d_forward, deconv2d_forward, Activation, ConvLayer, ConvMode, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pair(seed: u64) -> (ConvLayer<f64>, ConvLayer<f64>, Tensor<f64>, Tensor<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cin = rng.random_range(1..=4);
    let cout = rng.random_range(1..=4);
    let kh = rng.random_range(1..=6);
    let kw = rng.random_range(1..=6);
    let s = rng.random_range(1..=3);
    let hs = rng.random_range(1..=6);
    let ws = rng.random_range(1..=6);
    let kernel = Tensor::from_fn(&[cout, cin, kh, kw], |_| rng.random_range(-1.0..1.0));
    let conv = ConvLayer::from_parts(ConvMode::Conv, kernel.clone(), Tensor::zeros(&[cout]), (s, s), Activation::None).unwrap();
    let deconv = ConvLayer::from_parts(ConvMode::Transposed, kernel, Tensor::zeros(&[cin]), (s, s), Activation::None).unwrap();
    let x = Tensor::from_fn(&[cin, hs * s, ws * s], |_| rng.random_range(-1.0..1.0));
    let y = Tensor::from_fn(&[cout, hs, ws], |_| rng.random_range(-1.0..1.0));
    (conv, deconv, x, y)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transposed_is_adjoint(seed in any::<u64>()) {
        let (conv, deconv, x, y) = pair(seed);
        let lhs = conv2d_forward(&x, &conv).unwrap().dot(&y).unwrap();
        let rhs = x.dot(&deconv2d_forward(&y, &deconv).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn conv_is_linear_without_bias(seed in any::<u64>(), a in -3.0f64..3.0) {
        let (conv, _, x, _) = pair(seed);
        let mut ax = x.clone();
        ax.scale(a);
        let y = conv2d_forward(&x, &conv).unwrap();
        let ay = conv2d_forward(&ax, &conv).unwrap();
        for (p, q) in y.data().iter().zip(ay.data()) {
            prop_assert!((a * p - q).abs() < 1e-12 * (1.0 + p.abs()));
        }
    }

    #[test]
    fn output_sizes(h in 1usize..40, w in 1usize..40, s in 1usize..4, k in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = ConvLayer::<f32>::init(ConvMode::Conv, 2, 3, (k, k), (s, s), Activation::Leaky, &mut rng).unwrap();
        let x = Tensor::zeros(&[2, h, w]);
        prop_assert_eq!(conv2d_forward(&x, &conv).unwrap().shape().to_vec(), vec![3, h.div_ceil(s), w.div_ceil(s)]);
        let deconv = ConvLayer::<f32>::init(ConvMode::Transposed, 2, 3, (k, k), (s, s), Activation::Leaky, &mut rng).unwrap();
        prop_assert_eq!(deconv2d_forward(&x, &deconv).unwrap().shape().to_vec(), vec![3, h * s, w * s]);
    }
}
