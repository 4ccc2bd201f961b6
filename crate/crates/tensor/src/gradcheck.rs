//! Central finite-difference comparison against reverse-mode gradients.

use crate::error::Result;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Coordinates probed per input; inputs at most this large are probed exhaustively.
    pub max_coords_per_input: usize,
    /// Denominator floor of the relative error, so that near-zero gradients
    /// are compared absolutely.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            max_coords_per_input: 64,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub input: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub probes: usize,
    pub worst: Option<Probe>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.worst.map_or(0.0, |p| p.rel_err)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err() < tol
    }
}

pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Checks d`loss`/d`inputs`. `loss` must rebuild the graph from the current
/// values of `inputs` on every call.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], loss: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn() -> Result<Tensor<f64>>,
{
    for x in inputs {
        x.zero_grad();
    }
    loss()?.backward()?;
    let analytic: Vec<Vec<f64>> = inputs
        .iter()
        .map(|x| x.grad().unwrap_or_else(|| vec![0.0; x.numel()]))
        .collect();

    let mut rng = SplitMix64::new(opts.seed);
    let mut report = GradCheckReport::default();
    for (i, x) in inputs.iter().enumerate() {
        let n = x.numel();
        let coords: Vec<usize> = if n <= opts.max_coords_per_input {
            (0..n).collect()
        } else {
            (0..opts.max_coords_per_input).map(|_| rng.below(n)).collect()
        };
        let base = x.to_vec();
        for c in coords {
            let mut probe = base.clone();
            probe[c] = base[c] + opts.step;
            x.set_data(probe.clone())?;
            let up = loss()?.item();
            probe[c] = base[c] - opts.step;
            x.set_data(probe)?;
            let down = loss()?.item();
            x.set_data(base.clone())?;
            let numeric = (up - down) / (2.0 * opts.step);
            let a = analytic[i][c];
            let e = rel_err(a, numeric, opts.floor);
            report.probes += 1;
            if report.worst.is_none_or(|w| e > w.rel_err) {
                report.worst = Some(Probe {
                    input: i,
                    coord: c,
                    analytic: a,
                    numeric,
                    rel_err: e,
                });
            }
        }
    }
    Ok(report)
}

/// Result of checking one op on one input configuration.
#[derive(Debug, Clone)]
pub struct OpCheck {
    pub op: &'static str,
    pub case: String,
    pub report: GradCheckReport,
}

fn rand_param(rng: &mut SplitMix64, shape: &[usize], lo: f64, hi: f64) -> Result<Tensor<f64>> {
    let n = shape.iter().product();
    Tensor::param(shape, (0..n).map(|_| lo + (hi - lo) * rng.uniform()).collect())
}

/// Contracts `y` with a fixed random weight so every output coordinate matters.
fn weighted_sum(y: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
    let mut rng = SplitMix64::derive(seed, 0xfeed);
    let w: Vec<f64> = (0..y.numel()).map(|_| rng.uniform() * 2.0 - 1.0).collect();
    let w = Tensor::from_vec(y.shape(), w)?;
    Ok(y.mul(&w)?.sum_all())
}

type Build = Box<dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>>;

/// Finite-difference checks of every differentiable op on three input
/// configurations each, in `f64`.
pub fn op_suite(seed: u64, opts: GradCheckOptions) -> Result<Vec<OpCheck>> {
    use crate::ops::Conv2dSpec;
    let mut rng = SplitMix64::derive(seed, 1);
    let mut out = Vec::new();
    let shapes3: [&[usize]; 3] = [&[5], &[3, 4], &[2, 3, 4]];

    let mut run = |op: &'static str, case: String, inputs: Vec<Tensor<f64>>, f: Build, rng: &mut SplitMix64| -> Result<()> {
        let wseed = rand_core::RngCore::next_u64(rng);
        let report = check_gradients(&inputs, || weighted_sum(&f(&inputs)?, wseed), opts)?;
        out.push(OpCheck { op, case, report });
        Ok(())
    };

    for s in shapes3 {
        let case = format!("{s:?}");
        for (op, f) in [
            ("add", Box::new(|x: &[Tensor<f64>]| x[0].add(&x[1])) as Build),
            ("sub", Box::new(|x: &[Tensor<f64>]| x[0].sub(&x[1]))),
            ("mul", Box::new(|x: &[Tensor<f64>]| x[0].mul(&x[1]))),
        ] {
            let a = rand_param(&mut rng, s, -2.0, 2.0)?;
            let b = rand_param(&mut rng, &s[s.len() - 1..], -2.0, 2.0)?;
            run(op, format!("{case} with broadcast rhs"), vec![a, b], f, &mut rng)?;
        }
        let a = rand_param(&mut rng, s, -2.0, 2.0)?;
        let b = rand_param(&mut rng, s, 0.5, 2.0)?;
        run("div", case.clone(), vec![a, b], Box::new(|x| x[0].div(&x[1])), &mut rng)?;

        let unaries: [(&'static str, f64, f64, Build); 9] = [
            ("add_scalar", -2.0, 2.0, Box::new(|x| Ok(x[0].add_scalar(0.7)))),
            ("mul_scalar", -2.0, 2.0, Box::new(|x| Ok(x[0].mul_scalar(-1.3)))),
            ("pow_scalar", 0.2, 2.0, Box::new(|x| Ok(x[0].pow_scalar(2.5)))),
            ("exp", -2.0, 2.0, Box::new(|x| Ok(x[0].exp()))),
            ("ln", 0.2, 3.0, Box::new(|x| Ok(x[0].ln()))),
            ("gelu", -3.0, 3.0, Box::new(|x| Ok(x[0].gelu()))),
            ("sigmoid", -4.0, 4.0, Box::new(|x| Ok(x[0].sigmoid()))),
            ("softplus", -4.0, 4.0, Box::new(|x| Ok(x[0].softplus()))),
            ("reshape", -1.0, 1.0, Box::new(|x| {
                let n = x[0].numel();
                x[0].reshape(&[n])
            })),
        ];
        for (op, lo, hi, f) in unaries {
            let a = rand_param(&mut rng, s, lo, hi)?;
            run(op, case.clone(), vec![a], f, &mut rng)?;
        }
        let last = s.len() - 1;
        let a = rand_param(&mut rng, s, -2.0, 2.0)?;
        run("softmax", case.clone(), vec![a], Box::new(move |x| x[0].softmax(last)), &mut rng)?;
        let a = rand_param(&mut rng, s, -2.0, 2.0)?;
        run("log_softmax", case.clone(), vec![a], Box::new(move |x| x[0].log_softmax(0)), &mut rng)?;
        let a = rand_param(&mut rng, s, -2.0, 2.0)?;
        run("sum", case.clone(), vec![a], Box::new(move |x| x[0].sum_axes(&[last], false)), &mut rng)?;
        let a = rand_param(&mut rng, s, -2.0, 2.0)?;
        run("mean", case.clone(), vec![a], Box::new(|x| x[0].mean_axes(&[0], true)), &mut rng)?;
        let d = s[last];
        let (a, g, b) = (
            rand_param(&mut rng, s, -2.0, 2.0)?,
            rand_param(&mut rng, &[d], 0.5, 1.5)?,
            rand_param(&mut rng, &[d], -0.5, 0.5)?,
        );
        run("layer_norm", case.clone(), vec![a, g, b], Box::new(|x| x[0].layer_norm(&x[1], &x[2], 1e-5)), &mut rng)?;
        let a = rand_param(&mut rng, s, -2.0, 2.0)?;
        let b = rand_param(&mut rng, s, -2.0, 2.0)?;
        run("concat", case.clone(), vec![a, b], Box::new(move |x| Tensor::concat(&[x[0].clone(), x[1].clone()], last)), &mut rng)?;
        if d >= 2 {
            let a = rand_param(&mut rng, s, -2.0, 2.0)?;
            run("split", case.clone(), vec![a], Box::new(move |x| {
                let parts = x[0].split(&[1, d - 1], last)?;
                parts[1].mul_scalar(2.0).sum_all().add(&parts[0].sum_all())
            }), &mut rng)?;
        }
    }

    for (a_shape, b_shape) in [
        (vec![3, 4], vec![4, 2]),
        (vec![2, 3, 4], vec![4, 5]),
        (vec![2, 2, 3, 2], vec![2, 1, 2, 3]),
    ] {
        let a = rand_param(&mut rng, &a_shape, -1.0, 1.0)?;
        let b = rand_param(&mut rng, &b_shape, -1.0, 1.0)?;
        run("matmul", format!("{a_shape:?} x {b_shape:?}"), vec![a, b], Box::new(|x| x[0].matmul(&x[1])), &mut rng)?;
    }

    for (xs, ws, spec) in [
        ([1, 2, 6, 6], [3, 2, 3, 3], Conv2dSpec { stride: 1, padding: 1, groups: 1 }),
        ([2, 3, 9, 9], [4, 3, 7, 7], Conv2dSpec { stride: 4, padding: 3, groups: 1 }),
        ([1, 4, 5, 5], [4, 1, 3, 3], Conv2dSpec { stride: 2, padding: 1, groups: 4 }),
    ] {
        let x = rand_param(&mut rng, &xs, -1.0, 1.0)?;
        let w = rand_param(&mut rng, &ws, -1.0, 1.0)?;
        let b = rand_param(&mut rng, &[ws[0]], -1.0, 1.0)?;
        run("conv2d", format!("{xs:?} * {ws:?} {spec:?}"), vec![x, w, b], Box::new(move |x| x[0].conv2d(&x[1], Some(&x[2]), spec)), &mut rng)?;
    }

    for (shape, axes) in [(vec![2, 3], vec![1, 0]), (vec![2, 3, 4], vec![2, 0, 1]), (vec![1, 2, 3, 2], vec![0, 2, 1, 3])] {
        let a = rand_param(&mut rng, &shape, -1.0, 1.0)?;
        run("permute", format!("{shape:?} -> {axes:?}"), vec![a], Box::new(move |x| x[0].permute(&axes)), &mut rng)?;
    }

    for (shape, idx) in [(vec![3, 4], vec![0, 3, 1]), (vec![5, 2], vec![1, 1, 0, 1, 0]), (vec![1, 9], vec![8])] {
        let a = rand_param(&mut rng, &shape, -1.0, 1.0)?;
        run("pick", format!("{shape:?}"), vec![a], Box::new(move |x| x[0].pick(&idx)), &mut rng)?;
    }

    for (shape, oh, ow) in [([1, 1, 2, 2], 4, 4), ([2, 3, 3, 2], 5, 7), ([1, 2, 1, 1], 4, 4)] {
        let a = rand_param(&mut rng, &shape, -1.0, 1.0)?;
        run("bilinear_upsample", format!("{shape:?} -> {oh}x{ow}"), vec![a], Box::new(move |x| x[0].bilinear_upsample(oh, ow)), &mut rng)?;
    }
    Ok(out)
}
