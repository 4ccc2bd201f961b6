use dualseg_tensor::Tensor;
use proptest::prelude::*;

fn shape_and_data() -> impl Strategy<Value = (Vec<usize>, Vec<f64>)> {
    prop::collection::vec(1usize..5, 1..4).prop_flat_map(|shape| {
        let n = shape.iter().product::<usize>();
        (Just(shape), prop::collection::vec(-50.0f64..50.0, n))
    })
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions((shape, data) in shape_and_data(), axis_pick in 0usize..4) {
        let axis = axis_pick % shape.len();
        let x = Tensor::<f64>::from_vec(&shape, data).unwrap();
        let y = x.softmax(axis).unwrap();
        prop_assert!(y.to_vec().iter().all(|&v| v >= 0.0));
        for s in y.sum_axes(&[axis], false).unwrap().to_vec() {
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn concat_split_round_trip_bit_exact((shape, data) in shape_and_data(), extra in 1usize..4) {
        let axis = shape.len() - 1;
        let a = Tensor::<f32>::from_vec(&shape, data.iter().map(|&v| v as f32).collect()).unwrap();
        let mut bshape = shape.clone();
        bshape[axis] = extra;
        let n: usize = bshape.iter().product();
        let b = Tensor::<f32>::from_vec(&bshape, (0..n).map(|i| i as f32 * 0.37 - 1.0).collect()).unwrap();
        let c = Tensor::concat(&[a.clone(), b.clone()], axis).unwrap();
        let parts = c.split(&[shape[axis], extra], axis).unwrap();
        prop_assert_eq!(parts[0].to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        a.to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(parts[1].to_vec(), b.to_vec());
    }

    #[test]
    fn upsampling_constant_is_constant(v in -10.0f64..10.0, h in 1usize..5, w in 1usize..5, oh in 1usize..9, ow in 1usize..9) {
        let x = Tensor::<f64>::full(&[1, 2, h, w], v);
        let y = x.bilinear_upsample(oh, ow).unwrap();
        prop_assert!(y.to_vec().iter().all(|&u| (u - v).abs() <= 1e-12 * v.abs().max(1.0)));
    }
}
