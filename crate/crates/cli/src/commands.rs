use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use upcr::datagen::{build_dataset, format_sig9, load_cloud, make_sample, save_cloud, CloudFormat, DatasetSample, ShapeId};
use upcr::evalbench::{
    evaluate_icp, evaluate_model, outlier_sweep, reports_csv, reports_table, time_icp, time_model, IcpConfig, IcpInit,
};
use upcr::features::{FeatureKind, FeatureSpec};
use upcr::geom::{apply_transform, RigidTransform};
use upcr::separation::{register_pair, Model};
use upcr::training::{
    fine_tune, load_checkpoint, load_checkpoint_for, loss_curve_csv, save_checkpoint, train as train_model, Checkpoint,
};

use crate::config::RunConfig;
use crate::manifest::{default_path, Manifest};

fn finish(m: &Manifest, explicit: Option<PathBuf>, main_output: Option<&Path>, command: &str) -> Result<()> {
    let path = explicit.unwrap_or_else(|| default_path(main_output, command));
    m.write(&path)?;
    eprintln!("manifest: {}", path.display());
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Rows of a 3×4 transform, tiny values snapped to zero so that `-0` and
/// round-off never reach the output.
pub fn format_transform(t: &RigidTransform) -> String {
    let mut out = String::new();
    for row in t.to_rows() {
        let cells: Vec<String> = row
            .iter()
            .map(|&v| format_sig9(if v.abs() < 1e-12 { 0.0 } else { v }))
            .collect();
        let _ = writeln!(out, "{}", cells.join(" "));
    }
    out
}

fn pose_rows(samples: &[DatasetSample]) -> String {
    let mut out = String::from("index,category,shape,r00,r01,r02,t0,r10,r11,r12,t1,r20,r21,r22,t2\n");
    for (i, s) in samples.iter().enumerate() {
        let cells: Vec<String> = s.gt.to_rows().iter().flatten().map(|&v| format_sig9(v)).collect();
        let _ = writeln!(out, "{i},{},{},{}", s.shape.category, s.shape.index, cells.join(","));
    }
    out
}

pub fn gen(cfg: &RunConfig, out: &Path, manifest: Option<PathBuf>) -> Result<()> {
    let ds = build_dataset(&cfg.dataset_config()?)?;
    let mut m = Manifest::new(cfg);
    for (split, samples) in [("train", &ds.train), ("test", &ds.test)] {
        let dir = out.join(split);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        for (i, s) in samples.iter().enumerate() {
            for (role, cloud) in [("source", &s.source), ("target", &s.target)] {
                let path = dir.join(format!("{i:04}_{role}.xyz"));
                save_cloud(cloud, &path, CloudFormat::Xyz)?;
                m.output(&format!("{split}_{role}"), &path)?;
            }
        }
        let poses = dir.join("poses.csv");
        write_text(&poses, &pose_rows(samples))?;
        m.output(&format!("{split}_poses"), &poses)?;
        println!("{split}: {} pairs in {}", samples.len(), dir.display());
    }
    finish(&m, manifest, Some(out), "gen")
}

pub fn train(cfg: &RunConfig, out: &Path, loss_csv: Option<PathBuf>, manifest: Option<PathBuf>) -> Result<()> {
    let model_cfg = cfg.model_config()?;
    let train_cfg = cfg.train_config()?;
    let ds = build_dataset(&cfg.dataset_config()?)?;
    if ds.train.is_empty() {
        bail!("training split is empty");
    }
    let pairs: Vec<_> = ds.train.iter().map(|s| s.clouds()).collect();
    let outcome = train_model(&model_cfg, &pairs, &train_cfg)?;
    save_checkpoint(out, &outcome.checkpoint).with_context(|| format!("writing checkpoint {}", out.display()))?;
    let curve = loss_csv.unwrap_or_else(|| {
        let mut s = out.as_os_str().to_owned();
        s.push(".loss.csv");
        PathBuf::from(s)
    });
    write_text(&curve, &loss_curve_csv(&outcome.losses))?;
    for (e, l) in outcome.losses.iter().enumerate() {
        println!("epoch {} loss {}", e + 1, format_sig9(*l));
    }
    let mut m = Manifest::new(cfg);
    m.output("checkpoint", out)?;
    m.output("loss_curve", &curve)?;
    finish(&m, manifest, Some(out), "train")?;
    if let Some(epoch) = outcome.diverged_at {
        bail!(
            "loss diverged in epoch {epoch}; last good checkpoint written to {}",
            out.display()
        );
    }
    Ok(())
}

pub fn finetune(cfg: &RunConfig, model: &Path, out: &Path, manifest: Option<PathBuf>) -> Result<()> {
    let expected = cfg.model_config()?;
    let start = load_checkpoint(model).with_context(|| format!("loading checkpoint {}", model.display()))?;
    let ds = build_dataset(&cfg.dataset_config()?)?;
    let pairs: Vec<_> = ds.test.iter().map(|s| s.clouds()).collect();
    let outcome = fine_tune(&start, &expected, &pairs, &cfg.finetune_config()?)
        .with_context(|| format!("fine-tuning {}", model.display()))?;
    save_checkpoint(out, &outcome.checkpoint).with_context(|| format!("writing checkpoint {}", out.display()))?;
    for (e, l) in outcome.losses.iter().enumerate() {
        println!("epoch {} loss {}", e + 1, format_sig9(*l));
    }
    let mut m = Manifest::new(cfg);
    m.input("checkpoint", model)?;
    m.output("checkpoint", out)?;
    finish(&m, manifest, Some(out), "finetune")?;
    if let Some(epoch) = outcome.diverged_at {
        bail!("loss diverged in epoch {epoch}; last good checkpoint written to {}", out.display());
    }
    Ok(())
}

fn read_cloud(path: &Path) -> Result<upcr::geom::PointCloud> {
    let format = CloudFormat::from_path(path)?;
    load_cloud(path, format).with_context(|| format!("reading cloud {}", path.display()))
}

fn read_model(path: &Path) -> Result<Model> {
    Ok(load_checkpoint(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))?
        .model)
}

pub fn register(
    cfg: &RunConfig,
    source: &Path,
    target: &Path,
    model: &Path,
    output: Option<&Path>,
    manifest: Option<PathBuf>,
) -> Result<()> {
    let src = read_cloud(source)?;
    let tgt = read_cloud(target)?;
    let model_obj = read_model(model)?;
    let reg = register_pair(&src, &tgt, &model_obj)?;
    print!("{}", format_transform(&reg.transform));
    let mut m = Manifest::new(cfg);
    m.input("source", source)?;
    m.input("target", target)?;
    m.input("checkpoint", model)?;
    if let Some(path) = output {
        let moved = apply_transform(&reg.transform, &src);
        save_cloud(&moved, path, CloudFormat::from_path(path)?)
            .with_context(|| format!("writing cloud {}", path.display()))?;
        m.output("registered_source", path)?;
    }
    finish(&m, manifest, output, "register")
}

fn test_samples(cfg: &RunConfig) -> Result<Vec<DatasetSample>> {
    let mut data = cfg.dataset_config()?;
    data.n_train = 0;
    Ok(build_dataset(&data)?.test)
}

pub fn bench(
    cfg: &RunConfig,
    model: Option<&Path>,
    feature_icp: bool,
    csv: Option<&Path>,
    manifest: Option<PathBuf>,
) -> Result<()> {
    let samples = test_samples(cfg)?;
    if samples.is_empty() {
        bail!("no test pairs to evaluate");
    }
    let mut m = Manifest::new(cfg);
    let mut reports = Vec::new();
    if let Some(path) = model {
        reports.push(evaluate_model("upcr", &read_model(path)?, &samples)?);
        m.input("checkpoint", path)?;
    }
    let icp_cfg = IcpConfig::default();
    reports.push(evaluate_icp("icp", &samples, &IcpInit::Identity, &icp_cfg)?);
    if feature_icp {
        let spec = FeatureSpec::new(FeatureKind::Pfh);
        reports.push(evaluate_icp("icp+pfh", &samples, &IcpInit::Features(spec), &icp_cfg)?);
    }
    print!("{}", reports_table(&reports));
    if let Some(path) = csv {
        write_text(path, &reports_csv(&reports))?;
        m.output("metrics", path)?;
    }
    finish(&m, manifest, csv, "bench")
}

pub fn sweep(cfg: &RunConfig, model: &Path, ratios: &[f64], csv: Option<&Path>, manifest: Option<PathBuf>) -> Result<()> {
    if ratios.is_empty() {
        bail!("no outlier ratios given");
    }
    let samples = test_samples(cfg)?;
    if samples.is_empty() {
        bail!("no test pairs to evaluate");
    }
    let table = outlier_sweep(&read_model(model)?, &samples, ratios, cfg.seed)?;
    let text = table.csv();
    print!("{text}");
    for (name, ok) in table.monotone() {
        println!("# {name} non-decreasing: {ok}");
    }
    let mut m = Manifest::new(cfg);
    m.input("checkpoint", model)?;
    if let Some(path) = csv {
        write_text(path, &text)?;
        m.output("sweep", path)?;
    }
    finish(&m, manifest, csv, "sweep-outliers")
}

pub fn time(
    cfg: &RunConfig,
    model: Option<&Path>,
    points: usize,
    reps: usize,
    csv: Option<&Path>,
    manifest: Option<PathBuf>,
) -> Result<()> {
    let mut m = Manifest::new(cfg);
    let model_obj = match model {
        Some(path) => {
            m.input("checkpoint", path)?;
            load_checkpoint_for(path, &cfg.model_config()?)
                .map(|c: Checkpoint| c.model)
                .with_context(|| format!("loading checkpoint {}", path.display()))?
        }
        None => Model::init(cfg.model_config()?, cfg.seed)?,
    };
    let mut protocol = cfg.protocol()?;
    protocol.n_points = points;
    protocol.partial_keep = protocol.partial_keep.min(points);
    let pair = make_sample(&protocol, ShapeId { category: 0, index: 0 }, cfg.seed)?.clouds();
    let rows = [
        (format!("upcr-{}", cfg.model.features), time_model(&model_obj, &pair, reps)?),
        ("icp".to_string(), time_icp(&pair, reps)?),
    ];
    let mut text = String::from("method,points,mean_ms,std_ms,repetitions\n");
    for (name, t) in &rows {
        let _ = writeln!(text, "{name},{points},{:.3},{:.3},{}", t.mean_ms, t.std_ms, t.repetitions);
    }
    print!("{text}");
    if let Some(path) = csv {
        write_text(path, &text)?;
        m.output("timing", path)?;
    }
    finish(&m, manifest, csv, "time")
}
