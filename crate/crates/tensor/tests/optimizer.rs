use dualseg_tensor::{cosine_lr, AdamW, AdamWConfig, Tensor};

/// Independent scalar AdamW reference.
fn reference_adamw(w0: f64, grad: impl Fn(f64) -> f64, lrs: &[f64], cfg: AdamWConfig) -> Vec<f64> {
    let (mut w, mut m, mut v) = (w0, 0.0f64, 0.0f64);
    let mut traj = Vec::new();
    for (t, &lr) in lrs.iter().enumerate() {
        let g = grad(w);
        let t = (t + 1) as i32;
        w *= 1.0 - lr * cfg.weight_decay;
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
        let mh = m / (1.0 - cfg.beta1.powi(t));
        let vh = v / (1.0 - cfg.beta2.powi(t));
        w -= lr * mh / (vh.sqrt() + cfg.eps);
        traj.push(w);
    }
    traj
}

#[test]
fn quadratic_trajectory_matches_reference() {
    // f(w) = 3 (w - 2)^2, f'(w) = 6 (w - 2)
    let cfg = AdamWConfig { lr: 0.05, weight_decay: 0.1, ..Default::default() };
    let lrs: Vec<f64> = (0..50).map(|s| cosine_lr(s, 50, cfg.lr)).collect();
    let expected = reference_adamw(-1.0, |w| 6.0 * (w - 2.0), &lrs, cfg);

    let w = Tensor::<f64>::param(&[1], vec![-1.0]).unwrap();
    let mut opt = AdamW::new(&[w.clone()], cfg).unwrap();
    for (s, &lr) in lrs.iter().enumerate() {
        w.zero_grad();
        let d = w.add_scalar(-2.0);
        d.mul(&d).unwrap().mul_scalar(3.0).sum_all().backward().unwrap();
        opt.step(&[w.clone()], lr).unwrap();
        assert!((w.item() - expected[s]).abs() < 1e-12, "step {s}");
    }
}

#[test]
fn decay_multiplies_parameter_not_gradient() {
    // with zero gradient only the decay acts: w <- w (1 - lr wd)
    let cfg = AdamWConfig { lr: 0.1, weight_decay: 0.5, ..Default::default() };
    let w = Tensor::<f64>::param(&[2], vec![2.0, -4.0]).unwrap();
    let mut opt = AdamW::new(&[w.clone()], cfg).unwrap();
    opt.step(&[w.clone()], 0.1).unwrap();
    assert_eq!(w.to_vec(), vec![2.0 * 0.95, -4.0 * 0.95]);
}

#[test]
fn training_is_bit_deterministic() {
    let run = || {
        let mut rng = dualseg_tensor::SplitMix64::new(99);
        let w = dualseg_tensor::rng::trunc_normal_param::<f32>(&mut rng, &[4, 3], 0.02).unwrap();
        let x = Tensor::<f32>::from_vec(&[2, 4], vec![0.5, -1.0, 2.0, 0.1, 1.0, 1.0, -0.3, 0.7]).unwrap();
        let mut opt = AdamW::new(&[w.clone()], AdamWConfig::default()).unwrap();
        for s in 0..10 {
            w.zero_grad();
            let y = x.matmul(&w).unwrap().gelu();
            y.mul(&y).unwrap().mean_all().backward().unwrap();
            opt.step(&[w.clone()], cosine_lr(s, 10, 1e-2)).unwrap();
        }
        w.to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}
