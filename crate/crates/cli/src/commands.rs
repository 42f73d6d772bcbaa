use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use proxyformer::data::{self, read_cloud, write_cloud};
use proxyformer::geometry::{extract_missing_part, ExtractOptions, PointCloud};
use proxyformer::metrics::{MetricOptions, MetricReport};
use proxyformer::model::{end_to_end_gradcheck, random_sample, ModelConfig, ProxyFormer, TrainingSample};
use proxyformer::nn::gradcheck::op_suite;
use proxyformer::nn::{AdamW, Graph};
use proxyformer::Real;
use rayon::prelude::*;
use serde_json::json;

use crate::{
    BenchArgs, CompleteArgs, EvalArgs, ExtractArgs, Fixture, GenDataArgs, GradcheckArgs, ModelArgs, Precision,
    TrainArgs,
};

fn configure_jobs(jobs: Option<usize>) -> Result<()> {
    if let Some(j) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .context("configuring worker threads")?;
    }
    Ok(())
}

/// Bad profile names and override keys; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn model_config(args: &ModelArgs) -> Result<ModelConfig> {
    let usage = |e: proxyformer::Error| UsageError(e.to_string());
    let mut cfg = ModelConfig::profile(&args.profile).map_err(usage)?;
    cfg.apply_overrides(&args.overrides).map_err(usage)?;
    cfg.validate()?;
    Ok(cfg)
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{}", serde_json::to_string_pretty(value)?) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read<T: Real>(path: &Path) -> Result<PointCloud<T>> {
    read_cloud(path).with_context(|| format!("reading {}", path.display()))
}

pub fn gen_data(a: GenDataArgs) -> Result<ExitCode> {
    configure_jobs(a.jobs)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    if let Some(Fixture::CubeMinusFace) = a.fixture {
        let fx = data::cube_minus_face::<f64>(a.fixture_points, a.seed)?;
        write_cloud(&fx.gt, a.out.join("gt.pcf"))?;
        write_cloud(&fx.partial, a.out.join("partial.pcf"))?;
        write_json(&a.out.join("missing_idx.json"), &json!(fx.missing_idx))?;
        print_json(&json!({
            "fixture": "cube-minus-face",
            "gt_points": fx.gt.len(),
            "partial_points": fx.partial.len(),
            "missing_points": fx.missing_idx.len(),
        }))?;
        return Ok(ExitCode::SUCCESS);
    }
    let cfg = model_config(&a.model)?;
    let samples: Vec<_> = (0..a.count)
        .into_par_iter()
        .map(|i| data::synthetic_sample::<f64>(&cfg, i, a.seed))
        .collect::<proxyformer::Result<_>>()?;
    let width = a.count.max(1).to_string().len().max(4);
    for (i, s) in samples.iter().enumerate() {
        data::save_sample(a.out.join(format!("{i:0width$}")), s)?;
    }
    write_json(&a.out.join("config.json"), &serde_json::to_value(&cfg)?)?;
    print_json(&json!({
        "profile": cfg.profile,
        "count": a.count,
        "seed": a.seed,
        "gt_points": cfg.gt_points,
        "partial_points": cfg.input_points,
        "missing_points": cfg.missing_points,
        "shapes": samples.iter().map(|s| s.shape.shape).collect::<Vec<_>>(),
    }))?;
    Ok(ExitCode::SUCCESS)
}

pub fn extract_missing(a: ExtractArgs) -> Result<ExitCode> {
    let gt = read::<f64>(&a.gt)?;
    let partial = read::<f64>(&a.partial)?;
    let opts = ExtractOptions {
        k_normal: a.k_normal,
        alpha: a.alpha,
        beta: a.beta,
        threshold: a.threshold,
        normal_eigen: a.normal_eigen.into(),
    };
    let parts = extract_missing_part(&gt, &partial, &opts)?;
    fs::create_dir_all(&a.out)?;
    write_cloud(&gt.select(&parts.existing_idx), a.out.join("existing.pcf"))?;
    write_cloud(&gt.select(&parts.missing_idx), a.out.join("missing.pcf"))?;
    let mut summary = json!({
        "gt_points": gt.len(),
        "partial_points": partial.len(),
        "existing_count": parts.existing_idx.len(),
        "missing_count": parts.missing_idx.len(),
        "degenerate_normals": parts.degenerate_normals,
        "options": serde_json::to_value(opts)?,
    });
    if let Some(path) = &a.expected_missing {
        let expected: Vec<usize> = serde_json::from_str(&fs::read_to_string(path)?)
            .with_context(|| format!("parsing {}", path.display()))?;
        let mut truth = vec![false; gt.len()];
        for &i in &expected {
            if i >= gt.len() {
                bail!("{}: index {i} out of range for {} GT points", path.display(), gt.len());
            }
            truth[i] = true;
        }
        let mut predicted = vec![false; gt.len()];
        for &i in &parts.missing_idx {
            predicted[i] = true;
        }
        let correct = truth.iter().zip(&predicted).filter(|(t, p)| t == p).count();
        summary["accuracy"] = json!(correct as f64 / gt.len() as f64);
    }
    write_json(&a.out.join("summary.json"), &summary)?;
    print_json(&summary)?;
    Ok(ExitCode::SUCCESS)
}

pub fn train(a: TrainArgs) -> Result<ExitCode> {
    let mut cfg = model_config(&a.model)?;
    if let Some(g) = a.gamma {
        cfg.gamma = g;
    }
    if let Some(cd) = a.cd {
        cfg.cd_variant = cd.into();
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    cfg.validate()?;
    match a.precision {
        Precision::F32 => train_as::<f32>(cfg, &a),
        Precision::F64 => train_as::<f64>(cfg, &a),
    }
}

fn train_as<T: Real>(cfg: ModelConfig, a: &TrainArgs) -> Result<ExitCode> {
    let data: Vec<TrainingSample<T>> =
        data::load_dataset(&a.data).with_context(|| format!("loading data from {}", a.data.display()))?;
    fs::create_dir_all(&a.out)?;
    let mut model = ProxyFormer::<T>::new(cfg, a.seed)?;
    let mut log = BufWriter::new(File::create(a.out.join("loss.jsonl"))?);
    let started = Instant::now();
    let optimizer = AdamW::new(model.config().lr, model.config().weight_decay);
    let batch_size = a.batch.unwrap_or(data.len()).clamp(1, data.len());
    let mut losses = Vec::with_capacity(a.steps);
    for step in 0..a.steps {
        // same cyclic batching as ProxyFormer::fit
        let batch: Vec<TrainingSample<T>> =
            (0..batch_size).map(|i| data[(step * batch_size + i) % data.len()].clone()).collect();
        let l = model.train_step(&batch, &optimizer, a.seed)?;
        let line = json!({"step": step + 1, "l_c1": l.l_c1, "l_c2": l.l_c2, "l_p": l.l_p, "total": l.total});
        writeln!(log, "{line}")?;
        if a.checkpoint_every > 0 && (step + 1) % a.checkpoint_every == 0 {
            model.save(a.out.join(format!("model_step{}.pxf1", step + 1)))?;
        }
        losses.push(l);
    }
    log.flush()?;
    model.save(a.out.join("model.pxf1"))?;
    let first = losses.first().map(|l| l.total);
    let last = losses.last().map(|l| l.total);
    print_json(&json!({
        "steps": a.steps,
        "samples": data.len(),
        "parameters": model.store.num_scalars(),
        "first_total": first,
        "final": losses.last(),
        "reduction": first.zip(last).map(|(f, l)| 1.0 - l / f),
        "seconds": started.elapsed().as_secs_f64(),
        "checkpoint": a.out.join("model.pxf1"),
    }))?;
    Ok(ExitCode::SUCCESS)
}

pub fn complete(a: CompleteArgs) -> Result<ExitCode> {
    let model = ProxyFormer::<f64>::load(&a.checkpoint)
        .with_context(|| format!("loading checkpoint {}", a.checkpoint.display()))?;
    let partial = read::<f64>(&a.partial)?;
    let out = model.complete(&partial, a.seed)?;
    fs::create_dir_all(&a.out)?;
    let ext = &a.format;
    write_cloud(&out.coarse, a.out.join(format!("coarse.{ext}")))?;
    write_cloud(&out.dense, a.out.join(format!("dense.{ext}")))?;
    write_cloud(&out.complete, a.out.join(format!("complete.{ext}")))?;
    print_json(&json!({
        "partial": partial.len(),
        "coarse": out.coarse.len(),
        "dense": out.dense.len(),
        "complete": out.complete.len(),
    }))?;
    Ok(ExitCode::SUCCESS)
}

fn is_cloud(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("pcf" | "xyz"))
}

/// Cloud files under `root`, as paths relative to it, sorted.
fn cloud_files(root: &Path) -> Result<Vec<PathBuf>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else if is_cloud(&path) {
                out.push(path.strip_prefix(root).expect("under root").to_path_buf());
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(root, root, &mut out)?;
    out.sort();
    Ok(out)
}

pub fn eval(a: EvalArgs) -> Result<ExitCode> {
    configure_jobs(a.jobs)?;
    let opts = MetricOptions { dcd_temperature: a.dcd_alpha, fscore_threshold: a.fscore_threshold };
    let candidates: Option<Vec<PointCloud<f64>>> = a
        .candidates
        .as_ref()
        .map(|dir| cloud_files(dir)?.iter().map(|f| read(&dir.join(f))).collect::<Result<Vec<_>>>())
        .transpose()?;
    let candidates = candidates.as_deref();

    let report = if a.pred.is_dir() {
        let files = cloud_files(&a.pred)?;
        if files.is_empty() {
            bail!("{}: no .pcf or .xyz files found", a.pred.display());
        }
        let results: Vec<(PathBuf, MetricReport)> = files
            .par_iter()
            .map(|rel| {
                let pred = read::<f64>(&a.pred.join(rel))?;
                let gt = read::<f64>(&a.gt.join(rel))?;
                let partial = a.partial.as_ref().map(|p| read::<f64>(&p.join(rel))).transpose()?;
                let r = MetricReport::evaluate(&pred, &gt, partial.as_ref(), candidates, &opts)?;
                Ok((rel.clone(), r))
            })
            .collect::<Result<_>>()?;
        let mut by_category: BTreeMap<String, Vec<MetricReport>> = BTreeMap::new();
        for (rel, r) in &results {
            let category = match rel.components().count() {
                1 => "all".to_string(),
                _ => rel.components().next().expect("non-empty").as_os_str().to_string_lossy().into_owned(),
            };
            by_category.entry(category).or_default().push(*r);
        }
        let all: Vec<MetricReport> = results.iter().map(|(_, r)| *r).collect();
        let categories: BTreeMap<&String, serde_json::Value> = by_category
            .iter()
            .map(|(k, v)| (k, json!({"count": v.len(), "mean": MetricReport::mean(v)})))
            .collect();
        json!({
            "count": all.len(),
            "mean": MetricReport::mean(&all),
            "categories": categories,
            "shapes": results.iter().map(|(p, r)| json!({"path": p, "metrics": r})).collect::<Vec<_>>(),
        })
    } else {
        let pred = read::<f64>(&a.pred)?;
        let gt = read::<f64>(&a.gt)?;
        let partial = a.partial.as_deref().map(read::<f64>).transpose()?;
        serde_json::to_value(MetricReport::evaluate(&pred, &gt, partial.as_ref(), candidates, &opts)?)?
    };
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    print_json(&report)?;
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let cfg = model_config(&a.model)?;
    let mut reports = op_suite(a.seed)?;
    reports.push(end_to_end_gradcheck(cfg, a.seed, a.samples)?);
    let failed: Vec<_> = reports.iter().filter(|r| !r.passed).collect();
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let mut summary = json!({
        "checks": reports.len(),
        "failed": failed.len(),
        "max_rel_error": worst,
        "failures": failed,
    });
    if a.verbose {
        summary["reports"] = serde_json::to_value(&reports)?;
    }
    print_json(&summary)?;
    Ok(if failed.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

pub fn bench(a: BenchArgs) -> Result<ExitCode> {
    let cfg = model_config(&a.model)?;
    match a.precision {
        Precision::F32 => bench_as::<f32>(cfg, &a),
        Precision::F64 => bench_as::<f64>(cfg, &a),
    }
}

fn bench_as<T: Real>(cfg: ModelConfig, a: &BenchArgs) -> Result<ExitCode> {
    let t = Instant::now();
    let model = ProxyFormer::<T>::new(cfg.clone(), a.seed)?;
    let build = t.elapsed().as_secs_f64();
    let sample = random_sample::<T>(&cfg, a.seed);
    let repeats = a.repeats.max(1);

    let t = Instant::now();
    for _ in 0..repeats {
        model.true_proxies(&sample.missing)?;
    }
    let true_branch = t.elapsed().as_secs_f64() / repeats as f64;
    let target = model.true_proxies(&sample.missing)?;

    let mut forward = 0.0;
    let mut backward = 0.0;
    let mut shapes = json!(null);
    for r in 0..repeats {
        let mut g = Graph::<T>::training(a.seed, r as u64);
        let p = model.store.bind(&mut g, true);
        let t = Instant::now();
        let (l, out) = model.loss(&mut g, &p, &sample, &target, a.seed)?;
        forward += t.elapsed().as_secs_f64();
        let t = Instant::now();
        g.backward(l.total)?;
        backward += t.elapsed().as_secs_f64();
        shapes = json!({
            "coarse": g.shape(out.coarse),
            "pre_mp": g.shape(out.pre_mp),
            "dense": g.shape(out.dense),
            "complete": g.shape(out.complete),
        });
    }
    let counted = model.store.num_scalars();
    let formula = cfg.parameter_count();
    print_json(&json!({
        "profile": cfg.profile,
        "parameters": counted,
        "parameters_formula": formula,
        "shapes": shapes,
        "seconds": {
            "build": build,
            "true_branch": true_branch,
            "forward": forward / repeats as f64,
            "backward": backward / repeats as f64,
        },
    }))?;
    if counted != formula {
        eprintln!("error: parameter count {counted} differs from the closed form {formula}");
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}
