//! The seven commands. Each writes a line-oriented `key=value` report.

use std::io::Write;

use dualseg_core::ablation::run_ablation;
use dualseg_core::counter::{built_params, count};
use dualseg_core::data::{read_patch, synthesize, write_dataset, write_labels, Batch, Dataset, LabelFile, SynthConfig};
use dualseg_core::gradcheck::{module_suite, network_check};
use dualseg_core::train::{evaluate, load_net, predict, RunOutput, Trainer};
use dualseg_core::{DualSegNet, Error, Metrics, Result};
use dualseg_tensor::gradcheck::{op_suite, GradCheckOptions, GradCheckReport};

use crate::run_config::{ablation_flags, RunConfig};

fn emit(out: &mut dyn Write, line: std::fmt::Arguments<'_>) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => { emit($out, format_args!($($arg)*)) };
}

pub fn synth(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let outcome = synthesize(&SynthConfig {
        seed: cfg.seed,
        count: cfg.data.count,
        size: cfg.data.size,
        n_classes: cfg.data.n_classes,
        window_days: cfg.data.window_days,
    })?;
    let manifest = write_dataset(&cfg.data.dir, &outcome.samples)?;
    say!(out, "manifest={}", manifest.display())?;
    say!(out, "patches={}", outcome.samples.len())?;
    say!(out, "discarded_empty_window={}", outcome.discarded)?;
    let data = Dataset::new(outcome.samples)?;
    for (c, n) in data.class_histogram(cfg.data.n_classes).iter().enumerate() {
        say!(out, "pixels_c{c}={n}")?;
    }
    Ok(())
}

pub fn train(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let data = Dataset::load(&cfg.manifest())?;
    let mut trainer = Trainer::new(cfg.train.clone(), &data)?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let output = RunOutput {
        checkpoint: cfg.out.join("checkpoint.ssfw"),
        log: cfg.out.join("loss.log"),
    };
    trainer.run(&data, Some(&output))?;
    let first = trainer.history.first().map_or(f64::NAN, |r| r.loss);
    let last = trainer.history.last().map_or(f64::NAN, |r| r.loss);
    say!(out, "checkpoint={}", output.checkpoint.display())?;
    say!(out, "log={}", output.log.display())?;
    say!(out, "steps={}", trainer.history.len())?;
    say!(out, "params={}", trainer.net.param_count())?;
    say!(out, "initial_loss={first:.6e}")?;
    say!(out, "final_loss={last:.6e}")
}

/// `miou`, `oa`, `f1` and per-class IoU lines; absent classes print `nan`.
pub fn metrics_report(m: &Metrics, out: &mut dyn Write) -> Result<()> {
    say!(out, "miou={:.6}", m.miou)?;
    say!(out, "oa={:.6}", m.oa)?;
    say!(out, "f1={:.6}", m.f1)?;
    for (c, iou) in m.iou.iter().enumerate() {
        say!(out, "iou_c{c}={:.6}", iou.unwrap_or(f64::NAN))?;
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let net = load_net(cfg.net(), &cfg.checkpoint())?;
    let data = Dataset::load(&cfg.eval_manifest())?;
    let ev = evaluate(&net, &data)?;
    metrics_report(&ev.confusion.metrics(), out)?;
    let (h, w) = match data.patch_size() {
        Some(s) => (s, s),
        None => (0, 0),
    };
    say!(out, "patches={}", data.len())?;
    say!(out, "params={}", net.param_count())?;
    if h > 0 {
        say!(out, "flops={}", count(cfg.net(), h, w)?.total_flops())?;
    }
    say!(out, "fps={:.3}", ev.fps)
}

pub fn infer(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let path = cfg
        .infer_patch
        .as_ref()
        .ok_or_else(|| Error::Config("infer needs infer.patch".into()))?;
    let net = load_net(cfg.net(), &cfg.checkpoint())?;
    let sample = read_patch(path)?;
    let batch = Batch::stack(std::slice::from_ref(&sample))?;
    let labels = predict(&net, &batch)?;
    let file = LabelFile {
        size: sample.size,
        labels,
        patch_id: sample.patch_id,
    };
    write_labels(&file, &cfg.infer_out)?;
    say!(out, "labels={}", cfg.infer_out.display())?;
    say!(out, "pixels={}", file.labels.len())
}

pub fn count_cmd(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let (h, w) = cfg.count_input;
    let rep = count(cfg.net(), h, w)?;
    say!(out, "{rep}")?;
    // Cross-check against the parameters of an instantiated network.
    let net = DualSegNet::<f32>::new(cfg.net(), 0)?;
    let built = built_params(&net);
    let analytic = rep.entries.iter().filter(|(_, v)| v.0 > 0).map(|(k, v)| (k.clone(), v.0));
    let agree = analytic.eq(built) && rep.total_params() == net.param_count();
    say!(out, "built_params={}", net.param_count())?;
    say!(out, "cross_check={}", if agree { "ok" } else { "mismatch" })?;
    if !agree {
        return Err(Error::Numerical("analytic parameter count disagrees with the built network".into()));
    }
    Ok(())
}

fn check_line(out: &mut dyn Write, name: &str, r: &GradCheckReport, tol: f64) -> Result<bool> {
    let ok = r.passes(tol);
    say!(
        out,
        "{} {name} probes={} max_rel_err={:.3e}",
        if ok { "PASS" } else { "FAIL" },
        r.probes,
        r.max_rel_err()
    )?;
    Ok(ok)
}

pub fn gradcheck(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let g = &cfg.gradcheck;
    let opts = GradCheckOptions {
        seed: cfg.seed,
        ..GradCheckOptions::default()
    };
    let mut failed = 0;
    for c in op_suite(cfg.seed, opts)? {
        failed += usize::from(!check_line(out, &format!("{} {}", c.op, c.case), &c.report, g.tolerance)?);
    }
    for c in module_suite(cfg.seed, opts)? {
        failed += usize::from(!check_line(out, &c.name, &c.report, g.tolerance)?);
    }
    let net_opts = GradCheckOptions {
        max_coords_per_input: g.coords,
        step: g.network_step,
        ..opts
    };
    let c = network_check(cfg.net(), g.size, cfg.seed, net_opts)?;
    failed += usize::from(!check_line(out, &c.name, &c.report, g.tolerance)?);
    say!(out, "failed={failed}")?;
    if failed > 0 {
        return Err(Error::Numerical(format!("{failed} gradient checks failed")));
    }
    Ok(())
}

pub fn ablate(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let mut lines = Vec::new();
    let table = run_ablation(&cfg.ablate, |row| {
        lines.push(format!(
            "row {} split={} params={} miou={:.6} oa={:.6} f1={:.6}",
            ablation_flags(row.ablation),
            row.split,
            row.params,
            row.mean_miou(),
            row.mean_oa(),
            row.mean_f1()
        ));
    })?;
    for l in &lines {
        say!(out, "{l}")?;
    }
    say!(out, "{table}")
}

/// Writes `samples` as a dataset; used by tests and scripted setups.
pub fn write_samples(dir: &std::path::Path, samples: &[dualseg_core::data::PatchSample]) -> Result<std::path::PathBuf> {
    write_dataset(dir, samples)
}
