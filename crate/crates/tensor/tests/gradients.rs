use dualseg_tensor::gradcheck::{check_gradients, op_suite, GradCheckOptions};
use dualseg_tensor::{Conv2dSpec, SplitMix64, Tensor};

#[test]
fn every_op_matches_finite_differences() {
    let checks = op_suite(11, GradCheckOptions::default()).unwrap();
    let mut ops: Vec<&str> = checks.iter().map(|c| c.op).collect();
    ops.dedup();
    assert!(ops.len() >= 20, "only {} ops checked", ops.len());
    for c in &checks {
        assert!(
            c.report.passes(1e-4),
            "{} {}: worst {:?}",
            c.op,
            c.case,
            c.report.worst
        );
    }
    // at least three configurations for every op
    for op in ops {
        assert!(checks.iter().filter(|c| c.op == op).count() >= 3, "{op}");
    }
}

#[test]
fn composite_graph_matches_finite_differences() {
    let mut rng = SplitMix64::new(3);
    let mut p = |shape: &[usize]| {
        let n: usize = shape.iter().product();
        Tensor::<f64>::param(shape, (0..n).map(|_| rng.normal() * 0.5).collect()).unwrap()
    };
    let x = p(&[2, 3, 6, 6]);
    let w = p(&[4, 3, 3, 3]);
    let g = p(&[4]);
    let b = p(&[4]);
    let lin = p(&[4, 5]);
    let inputs = vec![x, w, g, b, lin];
    let loss = || {
        let y = inputs[0].conv2d(&inputs[1], None, Conv2dSpec { stride: 2, padding: 1, groups: 1 })?;
        let t = y.reshape(&[2, 4, 9])?.permute(&[0, 2, 1])?;
        let t = t.layer_norm(&inputs[2], &inputs[3], 1e-5)?.gelu();
        let z = t.matmul(&inputs[4])?.softmax(2)?;
        // reuse t a second time so gradients accumulate through two paths
        let extra = t.mul(&t)?.mean_all();
        z.mul(&z)?.sum_all().add(&extra)
    };
    let report = check_gradients(&inputs, loss, GradCheckOptions::default()).unwrap();
    assert!(report.passes(1e-4), "{:?}", report.worst);
}
