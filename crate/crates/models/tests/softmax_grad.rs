use candle_core::{Device, Tensor, Var, D};
use nasp_models::nn::softmax_last;

#[test]
fn softmax_gradient_matches_the_composite_op() {
    let dev = Device::Cpu;
    let x = Var::from_tensor(&Tensor::randn(0f32, 2.0, (3, 4, 7), &dev).unwrap()).unwrap();
    let w = Tensor::randn(0f32, 1.0, (3, 4, 7), &dev).unwrap();

    let fast = softmax_last(x.as_tensor()).unwrap();
    let slow = candle_nn::ops::softmax(x.as_tensor(), D::Minus1).unwrap();
    let d = (&fast - &slow).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
    assert!(d < 1e-6);

    let g_fast = (fast * &w).unwrap().sum_all().unwrap().backward().unwrap();
    let g_slow = (slow * &w).unwrap().sum_all().unwrap().backward().unwrap();
    let a = g_fast.get(x.as_tensor()).unwrap();
    let b = g_slow.get(x.as_tensor()).unwrap();
    let d = (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
    assert!(d < 1e-6, "{d}");
}
