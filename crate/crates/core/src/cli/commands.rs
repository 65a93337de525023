use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::config::{ModelKind, Settings};
use super::manifest::{files_under, Manifest};
use super::{AttackArgs, ImageChoice, MetricsArgs, ModelArg, ReportArgs, SettingsArgs, TrainArgs};
use crate::attack::{
    read_trace_csv, run_attack, run_detector_attack, verify_trace_prefix, write_trace_csv, AttackConfig, AttackError,
    AttackOutcome, AttackSummary,
};
use crate::data::shapes::{gen_background, DEFAULT_IMAGE_SIZE};
use crate::data::{gen_shapes_dataset, load_container, load_mnist_dir, read_ppm, save_container, write_ppm};
use crate::error::{Error, Result};
use crate::metrics::QualityReport;
use crate::models::{
    evaluate_accuracy, evaluate_detector, train_classifier_with, train_detector_with, EpochStats, Model,
};
use crate::tensor::Tensor;

/// Defaults, then the config file, then `--set`, then dedicated flags.
fn resolve(kind: ModelKind, args: &SettingsArgs, flags: &[(&str, Option<String>)]) -> Result<Settings> {
    let mut s = Settings::defaults(kind);
    if let Some(path) = &args.config {
        s.apply_file(path)?;
    }
    for pair in &args.overrides {
        s.apply_override(pair)?;
    }
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    for (key, value) in flags {
        if let Some(v) = value {
            s.set(key, v)?;
        }
    }
    Ok(s)
}

fn flag<T: ToString>(key: &'static str, v: &Option<T>) -> (&'static str, Option<String>) {
    (key, v.as_ref().map(ToString::to_string))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn manifest_path_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let started = Instant::now();
    let kind = match a.model {
        ModelArg::Classifier => ModelKind::Classifier,
        ModelArg::Detector => ModelKind::Detector,
    };
    let s = resolve(
        kind,
        &a.settings,
        &[
            flag("epochs", &a.epochs),
            flag("learning_rate", &a.learning_rate),
            flag("batch_size", &a.batch_size),
            flag("train_count", &a.train_count),
            flag("test_count", &a.test_count),
        ],
    )?;
    let cfg = s.train_config();
    cfg.validate()?;
    let mut manifest = Manifest::new("train", s.to_map());
    let epoch_line = |e: &EpochStats| println!("epoch {:>2}  mean loss {:.4}", e.epoch + 1, e.mean_loss);

    let (model, accuracy, held_out) = match kind {
        ModelKind::Classifier => {
            let dir = a
                .data
                .as_ref()
                .ok_or_else(|| Error::Usage("training a classifier needs --data <MNIST dir>".into()))?;
            let all = load_mnist_dir(dir)?;
            for f in files_under(dir)? {
                manifest.add_input(&f)?;
            }
            if s.train_count + s.test_count > all.len() {
                return Err(Error::Usage(format!(
                    "{}: {} images, but train_count + test_count = {}",
                    dir.display(),
                    all.len(),
                    s.train_count + s.test_count
                )));
            }
            let (train, test) = (all.slice(0, s.train_count), all.slice(s.train_count, s.test_count));
            println!("training classifier on {} images", train.len());
            let m = train_classifier_with(&train, &cfg, epoch_line)?;
            let acc = (!test.is_empty()).then(|| evaluate_accuracy(&m, &test)).transpose()?;
            (Model::Classifier(m), acc, test.len())
        }
        ModelKind::Detector => {
            let set = gen_shapes_dataset(s.train_count + s.test_count, s.seed, DEFAULT_IMAGE_SIZE)?;
            let (train, test) = set.split_at(s.train_count);
            println!("training detector on {} generated scenes", train.len());
            let m = train_detector_with(&train, &cfg, epoch_line)?;
            let acc = (!test.is_empty()).then(|| evaluate_detector(&m, &test)).transpose()?;
            (Model::Detector(m), acc, test.len())
        }
    };
    if let Some(acc) = accuracy {
        println!("held-out accuracy {acc:.4} on {held_out} images");
        manifest.record("held_out_accuracy", acc);
        manifest.record("held_out_count", held_out);
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    model.save(&a.out)?;
    manifest.add_output(&a.out, None)?;
    manifest.finish(started.elapsed(), &manifest_path_for(&a.out))?;
    println!("wrote {}", a.out.display());
    Ok(())
}

struct Job {
    name: String,
    image: Tensor,
    label: Option<usize>,
}

pub fn attack(a: &AttackArgs) -> Result<()> {
    let started = Instant::now();
    let model = Model::load(&a.model)?;
    let kind = match model {
        Model::Classifier(_) => ModelKind::Classifier,
        Model::Detector(_) => ModelKind::Detector,
    };
    let mut s = resolve(
        kind,
        &a.settings,
        &[
            flag("alpha", &a.alpha),
            flag("lambda_l2", &a.lambda_l2),
            flag("w_br", &a.w_br),
            flag("w_tv", &a.w_tv),
            flag("max_iters", &a.max_iters),
            flag("record_stride", &a.record_stride),
            flag("mode", &a.mode),
            flag("target_class", &a.target_class),
            flag("target_box", &a.target_box),
        ],
    )?;
    if a.no_reg {
        (s.lambda_l2, s.w_br, s.w_tv) = (0.0, 0.0, 0.0);
    }
    let mut config = s.attack_config();
    config.stop_at_success = a.stop_at_success;
    config.keep_iterates = a.verify;
    config.validate()?;
    if a.verify && kind == ModelKind::Detector {
        return Err(Error::Usage("--verify applies to classifier attacks".into()));
    }

    let mut manifest = Manifest::new("attack", s.to_map());
    manifest.add_input(&a.model)?;
    let jobs = collect_jobs(a, &model, &s, &mut manifest)?;
    create_dir(&a.out)?;

    let (mut attacked, mut succeeded) = (0usize, 0usize);
    for job in jobs {
        let result = match &model {
            Model::Classifier(m) => {
                let label = job.label.unwrap_or(m.predict(&job.image)?.label);
                run_attack(m, &job.image, label, &config)
            }
            Model::Detector(d) => run_detector_attack(d, &job.image, &config),
        };
        let outcome = match result {
            Ok(o) => o,
            Err(AttackError {
                source: Error::NotInitiallyCorrect { predicted, expected },
                ..
            }) => {
                println!("skipping {}: model predicts {predicted}, label is {expected}", job.name);
                continue;
            }
            Err(AttackError { source, partial }) => {
                if let Some(p) = partial {
                    write_outcome(&a.out.join(&job.name), &job.name, &p, &config, None)?;
                    eprintln!("partial output for {} kept in {}", job.name, a.out.join(&job.name).display());
                }
                return Err(source);
            }
        };
        let prefix = match (&model, a.verify) {
            (Model::Classifier(m), true) if outcome.first_success_iteration.is_some() => {
                let check = verify_trace_prefix(m, &outcome)?;
                if let Some(detail) = &check.detail {
                    eprintln!("{}: prefix check failed: {detail}", job.name);
                }
                Some(check.verified)
            }
            _ => None,
        };
        write_outcome(&a.out.join(&job.name), &job.name, &outcome, &config, prefix)?;
        attacked += 1;
        let verdict = match (outcome.first_success_iteration, outcome.jnd_value) {
            (Some(k), Some(j)) => {
                succeeded += 1;
                let label = outcome.trace.iter().find(|r| r.k == k).map_or(0, |r| r.predicted_label);
                format!("K = {k}, JND = {j:.5}, label {} -> {label}", outcome.original_label)
            }
            _ => format!("no success within {} iterations", config.max_iterations),
        };
        println!("{}: {verdict}", job.name);
    }
    if attacked == 0 {
        return Err(Error::NoCandidates("every candidate was misclassified by the model".into()));
    }
    println!("{succeeded}/{attacked} attacks succeeded");

    let resolved = a.out.join("resolved.conf");
    fs::write(&resolved, s.to_text()).map_err(|e| Error::io(&resolved, e))?;
    manifest.record("attacked", attacked);
    manifest.record("succeeded", succeeded);
    let manifest_path = a.out.join("manifest.json");
    for f in files_under(&a.out)? {
        if f != manifest_path {
            manifest.add_output(&f, Some(&a.out))?;
        }
    }
    manifest.finish(started.elapsed(), &manifest_path)
}

fn collect_jobs(a: &AttackArgs, model: &Model, s: &Settings, manifest: &mut Manifest) -> Result<Vec<Job>> {
    let input_shape = match model {
        Model::Classifier(m) => m.input_shape().to_vec(),
        Model::Detector(d) => d.input_shape().to_vec(),
    };
    if let Some(path) = &a.image {
        manifest.add_input(path)?;
        let image = load_image(path, Some(input_shape[0]))?;
        if image.shape() != input_shape.as_slice() {
            return Err(Error::shape("attack image", &input_shape, image.shape()));
        }
        let name = path.file_stem().map_or("image".into(), |s| s.to_string_lossy().into_owned());
        return Ok(vec![Job {
            name,
            image,
            label: a.label,
        }]);
    }
    match model {
        Model::Classifier(_) => {
            let dir = a
                .data
                .as_ref()
                .ok_or_else(|| Error::Usage("attacking a classifier needs --data or --image".into()))?;
            let all = load_mnist_dir(dir)?;
            for f in files_under(dir)? {
                manifest.add_input(&f)?;
            }
            let start = a.start.unwrap_or(s.train_count);
            if start >= all.len() {
                return Err(Error::Usage(format!("--start {start} is past the {} images in {}", all.len(), dir.display())));
            }
            let set = all.slice(start, a.count);
            Ok(set
                .iter()
                .enumerate()
                .map(|(i, (img, label))| Job {
                    name: format!("img_{:05}", start + i),
                    image: img.clone(),
                    label: Some(label),
                })
                .collect())
        }
        Model::Detector(_) => {
            let size: [usize; 3] = input_shape
                .as_slice()
                .try_into()
                .map_err(|_| Error::shape("detector input", "C×H×W", &input_shape))?;
            let start = a.start.unwrap_or(0);
            Ok((start..start + a.count)
                .map(|i| {
                    let seed = s.seed + i as u64;
                    Job {
                        name: format!("bg_{seed:05}"),
                        image: gen_background(seed, size),
                        label: None,
                    }
                })
                .collect())
        }
    }
}

fn save_image_pair(dir: &Path, stem: &str, image: &Tensor) -> Result<()> {
    write_ppm(dir.join(format!("{stem}.ppm")), image)?;
    save_container(dir.join(format!("{stem}.tc")), &[("image".to_string(), image.clone())])
}

fn write_outcome(dir: &Path, name: &str, o: &AttackOutcome, config: &AttackConfig, prefix: Option<bool>) -> Result<()> {
    create_dir(dir)?;
    save_image_pair(dir, "original", &o.original_image)?;
    save_image_pair(dir, "final", &o.final_image)?;
    if let Some(jnd) = &o.jnd_image {
        save_image_pair(dir, "jnd", jnd)?;
    }
    write_trace_csv(dir.join("trace.csv"), &o.trace)?;
    let mut summary = AttackSummary::new(name, o, config);
    summary.prefix_verified = prefix;
    summary.save(dir.join("summary.json"))
}

/// Reads a `.tc` container (first entry) or a PPM. A PPM is reduced to
/// `channels` when given.
pub fn load_image(path: &Path, channels: Option<usize>) -> Result<Tensor> {
    let is_container = path.extension().is_some_and(|e| e == "tc");
    let image = if is_container {
        load_container(path)?
            .into_iter()
            .next()
            .map(|(_, t)| t)
            .ok_or_else(|| Error::CorruptHeader(format!("{}: container is empty", path.display())))?
    } else {
        read_ppm(path)?
    };
    match channels {
        Some(c) => crate::data::ppm::to_channels(image, c),
        None => Ok(image),
    }
}

/// Loads a pair, bringing a grey image and an RGB copy of it to one channel.
fn load_pair(original: &Path, adversarial: &Path) -> Result<(Tensor, Tensor)> {
    let (r, d) = (load_image(original, None)?, load_image(adversarial, None)?);
    let (rc, dc) = (r.chw()?.0, d.chw()?.0);
    let c = rc.min(dc);
    Ok((crate::data::ppm::to_channels(r, c)?, crate::data::ppm::to_channels(d, c)?))
}

struct MetricRow {
    run: String,
    pair: String,
    report: QualityReport,
}

/// Subdirectories of an attack run that hold a trace, sorted by name.
fn attack_dirs(run: &Path) -> Result<Vec<PathBuf>> {
    if !run.is_dir() {
        return Err(Error::io(
            run,
            std::io::Error::new(std::io::ErrorKind::NotFound, "run directory not found"),
        ));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(run)
        .map_err(|e| Error::io(run, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("trace.csv").is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn dir_name(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

pub fn metrics(a: &MetricsArgs) -> Result<()> {
    let s = resolve(ModelKind::Classifier, &a.settings, &[])?;
    let mc = s.metric_config();
    let mut rows = Vec::new();
    if !a.run.is_empty() {
        let stem = match a.which {
            ImageChoice::Jnd => "jnd",
            ImageChoice::Final => "final",
        };
        for run in &a.run {
            let mut found = 0;
            for dir in attack_dirs(run)? {
                let adv = dir.join(format!("{stem}.tc"));
                if !adv.is_file() {
                    println!("skipping {}: no {stem} image", dir.display());
                    continue;
                }
                let (r, d) = load_pair(&dir.join("original.tc"), &adv)?;
                rows.push(MetricRow {
                    run: run.display().to_string(),
                    pair: dir_name(&dir),
                    report: QualityReport::compute(&r, &d, &mc)?,
                });
                found += 1;
            }
            if found == 0 {
                return Err(Error::NoTraces(run.clone()));
            }
        }
    } else {
        let pairs: Vec<(&PathBuf, &PathBuf)> = match (a.original.len(), a.adversarial.len()) {
            (0, _) | (_, 0) => {
                return Err(Error::Usage("give --original and --adversarial images, or --run directories".into()))
            }
            (1, _) => a.adversarial.iter().map(|d| (&a.original[0], d)).collect(),
            (n, m) if n == m => a.original.iter().zip(&a.adversarial).collect(),
            (n, m) => {
                return Err(Error::Usage(format!(
                    "{n} originals and {m} adversarial images: give one original, or one per adversarial image"
                )))
            }
        };
        for (o, d) in pairs {
            let (r, x) = load_pair(o, d)?;
            rows.push(MetricRow {
                run: o.display().to_string(),
                pair: d.display().to_string(),
                report: QualityReport::compute(&r, &x, &mc)?,
            });
        }
    }

    let averages = run_averages(&rows);
    print!("{}", metrics_table(&rows, &averages));
    if let Some(out) = &a.out {
        write_metrics_csv(out, &rows, &averages)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn run_averages(rows: &[MetricRow]) -> Vec<(String, QualityReport)> {
    let mut runs: Vec<&str> = Vec::new();
    for r in rows {
        if !runs.contains(&r.run.as_str()) {
            runs.push(&r.run);
        }
    }
    runs.into_iter()
        .filter_map(|run| {
            let reports: Vec<QualityReport> = rows.iter().filter(|r| r.run == run).map(|r| r.report).collect();
            QualityReport::mean(&reports).map(|m| (run.to_string(), m))
        })
        .collect()
}

fn fmt_vif(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
}

fn metrics_table(rows: &[MetricRow], averages: &[(String, QualityReport)]) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "{:<32} {:>10} {:>8} {:>8} {:>8}", "pair", "PSNR (dB)", "UIQI", "SCC", "VIF");
    for (run, avg) in averages {
        for r in rows.iter().filter(|r| &r.run == run) {
            let q = &r.report;
            let _ = writeln!(
                t,
                "{:<32} {:>10.3} {:>8.4} {:>8.4} {:>8}",
                r.pair,
                q.psnr,
                q.uiqi,
                q.scc,
                fmt_vif(q.vif)
            );
        }
        let _ = writeln!(
            t,
            "{:<32} {:>10.3} {:>8.4} {:>8.4} {:>8}",
            format!("average ({run})"),
            avg.psnr,
            avg.uiqi,
            avg.scc,
            fmt_vif(avg.vif)
        );
    }
    t
}

fn write_metrics_csv(path: &Path, rows: &[MetricRow], averages: &[(String, QualityReport)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?;
    w.write_record(["run", "pair", "psnr", "uiqi", "scc", "vif"])?;
    let mut record = |run: &str, pair: &str, q: &QualityReport| {
        w.write_record([
            run.to_string(),
            pair.to_string(),
            q.psnr.to_string(),
            q.uiqi.to_string(),
            q.scc.to_string(),
            q.vif.map_or(String::new(), |v| v.to_string()),
        ])
    };
    for (run, avg) in averages {
        for r in rows.iter().filter(|r| &r.run == run) {
            record(&r.run, &r.pair, &r.report)?;
        }
        record(run, "average", avg)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn report(a: &ReportArgs) -> Result<()> {
    let s = resolve(ModelKind::Classifier, &a.settings, &[])?;
    let mc = s.metric_config();
    let dirs = attack_dirs(&a.run)?;
    if dirs.is_empty() {
        return Err(Error::NoTraces(a.run.clone()));
    }
    let out = a.out.clone().unwrap_or_else(|| a.run.join("report"));
    let curves = out.join("curves");
    create_dir(&curves)?;

    let mut md = String::from("| image | y | K | adversarial label | JND | PSNR (dB) | UIQI | SCC | VIF |\n");
    md.push_str("|---|---|---|---|---|---|---|---|---|\n");
    let (mut jnds, mut reports, mut successes) = (Vec::new(), Vec::new(), 0);
    for dir in &dirs {
        let name = dir_name(dir);
        let trace = read_trace_csv(dir.join("trace.csv"))?;
        let curve = curves.join(format!("{name}.csv"));
        let mut w = csv::Writer::from_path(&curve).map_err(|e| Error::Usage(format!("{}: {e}", curve.display())))?;
        w.write_record(["k", "true_label_confidence", "adversarial_label_confidence"])?;
        for r in &trace {
            w.write_record([r.k.to_string(), r.true_label_confidence.to_string(), r.adversarial_confidence.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(&curve, e))?;

        let summary_path = dir.join("summary.json");
        let summary = summary_path.is_file().then(|| AttackSummary::load(&summary_path)).transpose()?;
        let (y, k, adv, jnd) = match &summary {
            Some(s) => (
                s.original_label.to_string(),
                s.first_success_iteration.map_or("-".into(), |k| k.to_string()),
                s.adversarial_label.map_or("-".into(), |l| l.to_string()),
                s.jnd_value,
            ),
            None => ("?".into(), "?".into(), "?".into(), None),
        };
        let quality = if dir.join("jnd.tc").is_file() && dir.join("original.tc").is_file() {
            let (r, d) = load_pair(&dir.join("original.tc"), &dir.join("jnd.tc"))?;
            Some(QualityReport::compute(&r, &d, &mc)?)
        } else {
            None
        };
        if let Some(j) = jnd {
            successes += 1;
            jnds.push(j);
        }
        let cells = match &quality {
            Some(q) => {
                reports.push(*q);
                format!("{:.3} | {:.4} | {:.4} | {}", q.psnr, q.uiqi, q.scc, fmt_vif(q.vif))
            }
            None => "- | - | - | -".into(),
        };
        let jnd_cell = jnd.map_or("-".into(), |j| format!("{j:.5}"));
        let _ = writeln!(md, "| {name} | {y} | {k} | {adv} | {jnd_cell} | {cells} |");
    }
    let mean_jnd = (!jnds.is_empty()).then(|| jnds.iter().sum::<f64>() / jnds.len() as f64);
    let avg_cells = QualityReport::mean(&reports).map_or("- | - | - | -".into(), |q| {
        format!("{:.3} | {:.4} | {:.4} | {}", q.psnr, q.uiqi, q.scc, fmt_vif(q.vif))
    });
    let _ = writeln!(
        md,
        "| **average** | | | | {} | {avg_cells} |",
        mean_jnd.map_or("-".into(), |j| format!("{j:.5}"))
    );
    let _ = writeln!(md, "\n{successes}/{} attacks succeeded.", dirs.len());
    let summary_md = out.join("summary.md");
    fs::write(&summary_md, &md).map_err(|e| Error::io(&summary_md, e))?;
    print!("{md}");
    println!("wrote {} and {} curves under {}", summary_md.display(), dirs.len(), curves.display());
    Ok(())
}
