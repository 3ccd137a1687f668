use std::path::{Path, PathBuf};

use percept::fusion::Stream;
use percept::head::quartile_quantize;
use percept::labels::parse_trait_csv;
use percept::pct::PctTensor;
use percept::pipeline::{
    combo_name, evaluate, extract as extract_samples, nonsocial_ablation, prepare_clips, read_archive, scene_kind_of,
    social_ablation, trace_csv, train_model, trait_labels, type_labels, with_pool, write_archive, EvalConfig, Labels,
    Sample, TrainedModel,
};
use percept::pose_io::{parse_groups, parse_pose_stream, validate_groups, PoseFrame, SceneKind};
use percept::scene_regions::{discover_regions, SceneRegions};
use percept::synth::{generate_scene, Profiles};

use crate::config::{LabelKind, RunConfig};
use crate::output::Outputs;
use crate::CliError;

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    String::from_utf8(read(path)?).map_err(|e| CliError::Data(format!("{} is not UTF-8: {e}", path.display())))
}

/// Attach the file name to data errors raised while parsing it.
fn in_file<T>(path: &Path, r: percept::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| match CliError::from(e) {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Archive base path with both of its files present.
fn archive_paths(cfg: &RunConfig) -> Result<(PathBuf, PathBuf), CliError> {
    let base = cfg.path("archive")?;
    let (pct, csv) = (with_suffix(&base, ".pct"), with_suffix(&base, ".csv"));
    for p in [&pct, &csv] {
        if !p.is_file() {
            return Err(CliError::Config(format!("archive: {} does not exist (run `extract` first)", p.display())));
        }
    }
    Ok((pct, csv))
}

fn load_archive(pct: &Path, csv: &Path) -> Result<Vec<Sample>, CliError> {
    let samples = in_file(csv, read_archive(&read(pct)?, &read_text(csv)?))?;
    if samples.is_empty() {
        return Err(CliError::Data(format!("{} holds no samples", csv.display())));
    }
    Ok(samples)
}

fn load_labels(path: &Path, kind: LabelKind) -> Result<Labels, CliError> {
    let raw = in_file(path, parse_trait_csv(&read_text(path)?))?;
    let labels = match kind {
        LabelKind::Types => in_file(path, type_labels(&raw))?.0,
        LabelKind::Trait(t) => in_file(path, trait_labels(&raw, t))?,
    };
    Ok(labels)
}

fn load_pose(cfg: &RunConfig, path: &Path) -> Result<Vec<PoseFrame>, CliError> {
    let joints: usize = cfg.get("joints")?;
    in_file(path, parse_pose_stream(&read(path)?, joints))
}

fn output_base(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    cfg.path("out")
}

pub fn extract(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let ecfg = cfg.extract_config()?;
    let streams = cfg.streams()?;
    let pose_path = cfg.input("pose")?;
    let groups_path = cfg.opt_input("groups")?;
    let regions_path = cfg.opt_input("regions")?;
    let base = output_base(cfg)?;
    let workers: usize = cfg.get("workers")?;

    let frames = load_pose(cfg, &pose_path)?;
    let kind = in_file(&pose_path, scene_kind_of(&frames))?;
    if streams.contains(&Stream::Group) && kind == SceneKind::Social && groups_path.is_none() {
        return Err(CliError::Config("groups: the group stream needs a group file".into()));
    }
    if streams.contains(&Stream::Prox) && kind == SceneKind::Nonsocial && regions_path.is_none() {
        return Err(CliError::Config("regions: nonsocial prox needs a region file (run `regions` first)".into()));
    }
    let groups = match &groups_path {
        Some(p) => {
            let g = in_file(p, parse_groups(&read(p)?))?;
            in_file(p, validate_groups(&g, &frames))?;
            Some(g)
        }
        None => None,
    };
    let regions = match &regions_path {
        Some(p) => Some(in_file(p, SceneRegions::from_records(&read(p)?))?),
        None => None,
    };

    let samples =
        with_pool(workers, || extract_samples(&frames, groups.as_deref(), regions.as_ref(), &streams, &ecfg))??;
    let (pct, manifest) = write_archive(&samples)?;
    let mut out = Outputs::begin(base)?;
    out.write(".pct", pct)?;
    out.write(".csv", manifest)?;
    Ok(out)
}

pub fn regions(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let ecfg = cfg.extract_config()?;
    let grid = cfg.grid()?;
    let gmm = cfg.gmm()?;
    let pose_path = cfg.input("pose")?;
    let base = output_base(cfg)?;

    let frames = load_pose(cfg, &pose_path)?;
    if in_file(&pose_path, scene_kind_of(&frames))? != SceneKind::Nonsocial {
        return Err(CliError::Data(format!("{}: regions are discovered on nonsocial scenes", pose_path.display())));
    }
    let clips = in_file(&pose_path, prepare_clips(&frames, &ecfg))?;
    let (regions, fit) = discover_regions(&clips, &ecfg.layout, &grid, &cfg.tracklets(), &gmm)?;
    let mut out = Outputs::begin(base)?;
    out.write("", regions.to_records())?;
    let log: String = fit.model.log_likelihood.iter().enumerate().map(|(i, ll)| format!("{i},{ll}\n")).collect();
    out.write(".loglik.csv", format!("iteration,log_likelihood\n{log}"))?;
    Ok(out)
}

pub fn train(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let streams = cfg.streams()?;
    let linear = cfg.linear_head()?;
    let backbone = cfg.backbone()?;
    let spec = cfg.head_spec()?;
    let kind = cfg.label_kind()?;
    let (pct, csv) = archive_paths(cfg)?;
    let traits = cfg.input("traits")?;
    let base = output_base(cfg)?;

    let samples = load_archive(&pct, &csv)?;
    let labels = load_labels(&traits, kind)?;
    let model = train_model(&samples, &labels, &streams, linear, backbone, &spec)?;
    let mut out = Outputs::begin(base)?;
    out.write("", model.to_bytes()?)?;
    Ok(out)
}

pub fn eval(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let kind = cfg.label_kind()?;
    let explicit = cfg.combos()?;
    let mut ecfg = EvalConfig {
        backbone: cfg.backbone()?,
        head: cfg.head_spec()?,
        fusion: cfg.fusion()?,
        pca_target: cfg.get("pca_target")?,
        protocol: cfg.protocol()?,
        seed: cfg.get("seed")?,
        combos: Vec::new(),
        workers: cfg.get("workers")?,
    };
    let (pct, csv) = archive_paths(cfg)?;
    let traits = cfg.input("traits")?;
    let base = output_base(cfg)?;

    let samples = load_archive(&pct, &csv)?;
    let labels = load_labels(&traits, kind)?;
    let social = samples.iter().all(|s| s.get(Stream::Group).is_some());
    ecfg.combos = explicit.unwrap_or_else(|| if social { social_ablation() } else { nonsocial_ablation() });
    let report = evaluate(&samples, &labels, &ecfg)?;

    let mut out = Outputs::begin(base)?;
    out.write(".csv", report.to_csv())?;
    out.write(".txt", report.to_table())?;
    for row in &report.rows {
        out.write(&format!(".pred.{}.csv", combo_name(&row.streams)), report.predictions_csv(row))?;
    }
    Ok(out)
}

pub fn trace(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let clip: usize = cfg.get("clip")?;
    let subject: i64 = cfg.get("subject")?;
    let (pct, csv) = archive_paths(cfg)?;
    let base = output_base(cfg)?;

    let samples = load_archive(&pct, &csv)?;
    let sample = samples
        .iter()
        .find(|s| s.clip_id == clip && s.subject_id == subject)
        .ok_or_else(|| CliError::Data(format!("no clip {clip} for subject {subject} in {}", csv.display())))?;
    let mut out = Outputs::begin(base)?;
    out.write("", trace_csv(sample))?;
    Ok(out)
}

pub fn cam(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let class = cfg.raw("class").ok_or_else(|| CliError::Config("class: not set".into()))?.to_string();
    let model_path = cfg.input("model")?;
    let (pct, csv) = archive_paths(cfg)?;
    let base = output_base(cfg)?;

    let model = TrainedModel::from_bytes(&read(&model_path)?)
        .map_err(|e| CliError::Model(format!("{}: {e}", model_path.display())))?;
    let class_index = model.class_index(&class)?;
    let samples = load_archive(&pct, &csv)?;

    let mut acts = Vec::new();
    let mut text = String::new();
    for s in &samples {
        let act = model.cam(s, class_index)?;
        let levels = quartile_quantize(&act)?;
        text.push_str(&format!("clip {} subject {}\n", s.clip_id, s.subject_id));
        for row in levels.rows() {
            let words: Vec<&str> = row.iter().map(|a| a.name()).collect();
            text.push_str(&words.join(" "));
            text.push('\n');
        }
        acts.extend(act.iter().copied());
    }
    let (h, w) = (4, acts.len() / (4 * samples.len()));
    let tensor = PctTensor::f32(&[samples.len(), h, w], acts)?;
    let index: String =
        samples.iter().enumerate().map(|(i, s)| format!("{i},{},{}\n", s.clip_id, s.subject_id)).collect();

    let mut out = Outputs::begin(base)?;
    out.write(".pct", tensor.to_bytes())?;
    out.write(".csv", format!("index,clip_id,subject_id\n{index}"))?;
    out.write(".txt", text)?;
    Ok(out)
}

pub fn synth(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let spec = cfg.scene_spec()?;
    let profiles = match cfg.opt_input("profiles")? {
        Some(p) => Profiles::parse(&read_text(&p)?).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
        None => Profiles::default_v1(),
    };
    let base = output_base(cfg)?;

    let scene = generate_scene(&spec, &profiles)?;
    let mut out = Outputs::begin(base)?;
    out.write(".pose.jsonl", scene.pose_text())?;
    if spec.kind == SceneKind::Social {
        out.write(".groups.jsonl", scene.groups_text())?;
    }
    out.write(".traits.csv", scene.traits_text())?;
    out.write(".planted.csv", scene.planted_text())?;
    Ok(out)
}
