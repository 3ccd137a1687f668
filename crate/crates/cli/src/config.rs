//! Run configuration: defaults, then a `key = value` file, then `--key value`
//! flags. `PERCEPT_SEED` replaces every seed after that.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use percept::backbone::BackboneConfig;
use percept::fusion::{FusionMode, Stream};
use percept::head::HeadSpec;
use percept::kv::KvMap;
use percept::labels::Trait;
use percept::pipeline::{parse_combo, ExtractConfig, Pool, Protocol};
use percept::pose_io::{SceneKind, SkeletonLayout};
use percept::scene_regions::{GmmConfig, PatchGrid, TrackletConfig};
use percept::synth::SceneSpec;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SEED_ENV: &str = "PERCEPT_SEED";

/// Keys that hold seeds.
pub const SEED_KEYS: [&str; 5] = ["seed", "backbone_seed", "head_seed", "gmm_seed", "synth_seed"];

/// Every accepted key with its default ("" = unset).
const KEYS: &[(&str, &str)] = &[
    // inputs and outputs
    ("pose", ""),
    ("groups", ""),
    ("traits", ""),
    ("regions", ""),
    ("archive", ""),
    ("model", ""),
    ("profiles", ""),
    ("out", ""),
    // skeleton and windowing
    ("joints", "18"),
    ("ref_joints", "5,2,11,8"),
    ("t", "15"),
    ("stride", "15"),
    ("n_max", "10"),
    ("width", "640"),
    ("height", "480"),
    ("pool", "avg"),
    ("track_max_jump", ""),
    ("streams", "pers+group+prox"),
    // region discovery
    ("grid_rows", "12"),
    ("grid_cols", "16"),
    ("regions_k", "6"),
    ("gmm_seed", "0"),
    // backbone and head
    ("backbone_maps", "64"),
    ("backbone_seed", "0"),
    ("head", "mlp"),
    ("head_hidden", "32"),
    ("head_epochs", "60"),
    ("head_lr", "0.01"),
    ("head_batch", "32"),
    ("head_seed", "0"),
    // evaluation
    ("labels", "types"),
    ("fusion", "concat"),
    ("pca_target", "0.98"),
    ("protocol", "cv10"),
    ("combos", ""),
    ("seed", "0"),
    ("workers", "0"),
    // trace and cam
    ("clip", ""),
    ("subject", ""),
    ("class", ""),
    // synth
    ("kind", "social"),
    ("n_subjects", "10"),
    ("n_frames", "150"),
    ("mix", "0.3333333333333333,0.3333333333333333,0.3333333333333334"),
    ("first_id", "0"),
    ("synth_seed", "0"),
];

/// What a set of labels is derived from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    Types,
    Trait(Trait),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn bad(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {msg}"))
}

fn inner(e: percept::Error) -> String {
    match e {
        percept::Error::Config(m) => m,
        other => other.to_string(),
    }
}

impl RunConfig {
    /// Resolve defaults < file < flags < `PERCEPT_SEED`.
    pub fn load(file: Option<&Path>, overrides: &[String], env_seed: Option<&str>) -> Result<Self, CliError> {
        let mut values: BTreeMap<String, String> = KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
            let kv = KvMap::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            for (k, v) in kv.iter() {
                Self::set(&mut values, k, v)?;
            }
        }
        for (k, v) in parse_overrides(overrides)? {
            Self::set(&mut values, &k, &v)?;
        }
        if let Some(seed) = env_seed {
            seed.trim().parse::<u64>().map_err(|e| CliError::Config(format!("{SEED_ENV}={seed:?}: {e}")))?;
            for k in SEED_KEYS {
                values.insert(k.to_string(), seed.trim().to_string());
            }
        }
        let cfg = Self { values };
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(values: &mut BTreeMap<String, String>, key: &str, value: &str) -> Result<(), CliError> {
        let key = key.replace('-', "_");
        if !values.contains_key(&key) {
            return Err(CliError::Config(format!("unknown config key {key:?}")));
        }
        values.insert(key, value.trim().to_string());
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(key).ok_or_else(|| bad(key, "not set"))?;
        v.parse().map_err(|e| bad(key, format!("{v:?}: {e}")))
    }

    pub fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key).map(|_| self.get(key)).transpose()
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .unwrap_or("")
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| p.trim().parse().map_err(|e| bad(key, format!("item {p:?}: {e}"))))
            .collect()
    }

    pub fn path(&self, key: &str) -> Result<PathBuf, CliError> {
        self.raw(key).map(PathBuf::from).ok_or_else(|| bad(key, "required path not set"))
    }

    /// A required input that must already exist.
    pub fn input(&self, key: &str) -> Result<PathBuf, CliError> {
        let p = self.path(key)?;
        if !p.is_file() {
            return Err(bad(key, format!("input file {} does not exist", p.display())));
        }
        Ok(p)
    }

    /// An optional input; when set it must exist.
    pub fn opt_input(&self, key: &str) -> Result<Option<PathBuf>, CliError> {
        self.raw(key).map(|_| self.input(key)).transpose()
    }

    /// Parse every typed value so errors surface before any work starts.
    fn validate(&self) -> Result<(), CliError> {
        self.extract_config()?;
        self.streams()?;
        self.grid()?;
        self.gmm()?;
        self.backbone()?;
        self.head_spec()?;
        self.linear_head()?;
        self.label_kind()?;
        self.fusion()?;
        self.protocol()?;
        self.combos()?;
        self.get::<f64>("pca_target").and_then(|p| {
            if p > 0.0 && p <= 1.0 {
                Ok(())
            } else {
                Err(bad("pca_target", "must be in (0, 1]"))
            }
        })?;
        self.get::<u64>("seed")?;
        self.get::<usize>("workers")?;
        self.opt::<usize>("clip")?;
        self.opt::<i64>("subject")?;
        self.scene_spec()?;
        Ok(())
    }

    pub fn extract_config(&self) -> Result<ExtractConfig, CliError> {
        let mut layout = SkeletonLayout::coco18();
        let joints: usize = self.get("joints")?;
        if joints != layout.joints() {
            return Err(bad("joints", format!("only the {}-joint layout is supported", layout.joints())));
        }
        layout.reference_joints = self.list("ref_joints")?;
        layout.validate().map_err(|e| bad("ref_joints", inner(e)))?;
        let t: usize = self.get("t")?;
        let stride: usize = self.get("stride")?;
        if t == 0 || stride == 0 {
            return Err(bad("t", "window length and stride must be positive"));
        }
        let n_max: usize = self.get("n_max")?;
        if n_max < 2 {
            return Err(bad("n_max", "must be at least 2"));
        }
        let (width, height): (f64, f64) = (self.get("width")?, self.get("height")?);
        if !(width > 0.0 && height > 0.0) {
            return Err(bad("width", "scene size must be positive"));
        }
        let pool = self.raw("pool").and_then(Pool::parse).ok_or_else(|| bad("pool", "expected avg or max"))?;
        Ok(ExtractConfig { layout, t, stride, n_max, width, height, pool, track_max_jump: self.opt("track_max_jump")? })
    }

    pub fn streams(&self) -> Result<Vec<Stream>, CliError> {
        let streams = parse_combo(self.raw("streams").unwrap_or("")).map_err(|e| bad("streams", inner(e)))?;
        if streams.is_empty() {
            return Err(bad("streams", "no streams selected"));
        }
        Ok(streams)
    }

    pub fn grid(&self) -> Result<PatchGrid, CliError> {
        PatchGrid::new(self.get("width")?, self.get("height")?, self.get("grid_rows")?, self.get("grid_cols")?)
            .map_err(|e| bad("grid_rows", inner(e)))
    }

    pub fn tracklets(&self) -> TrackletConfig {
        TrackletConfig::default()
    }

    pub fn gmm(&self) -> Result<GmmConfig, CliError> {
        let components: usize = self.get("regions_k")?;
        if components == 0 {
            return Err(bad("regions_k", "must be positive"));
        }
        Ok(GmmConfig { components, seed: self.get("gmm_seed")?, ..Default::default() })
    }

    pub fn backbone(&self) -> Result<BackboneConfig, CliError> {
        let maps: usize = self.get("backbone_maps")?;
        if maps == 0 {
            return Err(bad("backbone_maps", "must be positive"));
        }
        Ok(BackboneConfig { maps, seed: self.get("backbone_seed")?, ..Default::default() })
    }

    pub fn head_spec(&self) -> Result<HeadSpec, CliError> {
        let spec = HeadSpec {
            hidden: self.get("head_hidden")?,
            epochs: self.get("head_epochs")?,
            learning_rate: self.get("head_lr")?,
            batch_size: self.get("head_batch")?,
            seed: self.get("head_seed")?,
        };
        if spec.hidden == 0 || spec.batch_size == 0 || !(spec.learning_rate > 0.0) {
            return Err(bad("head_hidden", "hidden width, batch size and learning rate must be positive"));
        }
        Ok(spec)
    }

    /// `head = linear` selects the GAP-linear head that supports activation maps.
    pub fn linear_head(&self) -> Result<bool, CliError> {
        match self.raw("head") {
            Some("mlp") => Ok(false),
            Some("linear") => Ok(true),
            other => Err(bad("head", format!("expected mlp or linear, got {other:?}"))),
        }
    }

    pub fn label_kind(&self) -> Result<LabelKind, CliError> {
        let v = self.raw("labels").unwrap_or("");
        if v == "types" {
            return Ok(LabelKind::Types);
        }
        v.strip_prefix("trait:")
            .and_then(Trait::parse)
            .map(LabelKind::Trait)
            .ok_or_else(|| bad("labels", format!("expected types or trait:<E|A|C|N|OE>, got {v:?}")))
    }

    pub fn fusion(&self) -> Result<FusionMode, CliError> {
        self.raw("fusion")
            .and_then(FusionMode::parse)
            .ok_or_else(|| bad("fusion", "expected concat, pca_stream, pca_concat or decision_sum"))
    }

    pub fn protocol(&self) -> Result<Protocol, CliError> {
        match self.raw("protocol").and_then(Protocol::parse) {
            Some(Protocol::KFold(k)) if k < 2 => Err(bad("protocol", "k-fold needs k >= 2")),
            Some(p) => Ok(p),
            None => Err(bad("protocol", "expected cv10, cv<k> or loso")),
        }
    }

    /// Explicit combos, `;`-separated (`pers;pers+prox`); empty means the ablation set.
    pub fn combos(&self) -> Result<Option<Vec<Vec<Stream>>>, CliError> {
        let Some(v) = self.raw("combos") else { return Ok(None) };
        v.split(';')
            .map(|c| match parse_combo(c) {
                Ok(s) if s.is_empty() => Err(bad("combos", "empty combination")),
                r => r.map_err(|e| bad("combos", inner(e))),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    pub fn scene_spec(&self) -> Result<SceneSpec, CliError> {
        let kind = match self.raw("kind") {
            Some("social") => SceneKind::Social,
            Some("nonsocial") => SceneKind::Nonsocial,
            other => return Err(bad("kind", format!("expected social or nonsocial, got {other:?}"))),
        };
        let mix: Vec<f64> = self.list("mix")?;
        let mix: [f64; 3] = mix.try_into().map_err(|_| bad("mix", "expected three proportions"))?;
        Ok(SceneSpec {
            n_subjects: self.get("n_subjects")?,
            n_frames: self.get("n_frames")?,
            kind,
            mix,
            seed: self.get("synth_seed")?,
            first_id: self.get("first_id")?,
            width: self.get("width")?,
            height: self.get("height")?,
        })
    }

    /// Resolved configuration as sorted `key = value` lines.
    pub fn canonical(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn seeds(&self) -> Vec<(&'static str, &str)> {
        SEED_KEYS.iter().map(|&k| (k, self.values[k].as_str())).collect()
    }
}

/// `--key value` and `--key=value` pairs.
fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let key = a.strip_prefix("--").ok_or_else(|| CliError::Config(format!("expected --key value, got {a:?}")))?;
        match key.split_once('=') {
            Some((k, v)) => out.push((k.to_string(), v.to_string())),
            None => {
                let v = it.next().ok_or_else(|| CliError::Config(format!("--{key} needs a value")))?;
                out.push((key.to_string(), v.clone()));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn defaults_parse() {
        let c = RunConfig::load(None, &[], None).unwrap();
        assert_eq!(c.extract_config().unwrap(), ExtractConfig::default());
        assert_eq!(c.protocol().unwrap(), Protocol::KFold(10));
    }

    #[test]
    fn flags_beat_file() {
        let dir = std::env::temp_dir().join(format!("percept-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let file = dir.join("run.cfg");
        std::fs::write(&file, "t = 20\nstride = 10 # overlap\n").unwrap();
        let c = RunConfig::load(Some(&file), &args(&["--t", "30"]), None).unwrap();
        assert_eq!(c.get::<usize>("t").unwrap(), 30);
        assert_eq!(c.get::<usize>("stride").unwrap(), 10);
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn env_seed_wins_everywhere() {
        let c = RunConfig::load(None, &args(&["--seed", "3", "--head-seed=4"]), Some("42")).unwrap();
        assert!(c.seeds().iter().all(|(_, v)| *v == "42"));
    }

    #[test]
    fn unknown_and_malformed_keys_rejected() {
        assert!(matches!(RunConfig::load(None, &args(&["--nope", "1"]), None), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::load(None, &args(&["--t", "x"]), None), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::load(None, &args(&["--protocol", "cv1"]), None), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::load(None, &args(&["--t"]), None), Err(CliError::Config(_))));
    }

    #[test]
    fn hash_tracks_values() {
        let a = RunConfig::load(None, &[], None).unwrap();
        let b = RunConfig::load(None, &args(&["--seed", "1"]), None).unwrap();
        assert_eq!(a.hash(), RunConfig::load(None, &[], None).unwrap().hash());
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn combos_and_labels() {
        let c = RunConfig::load(None, &args(&["--combos", "pers;prox+pers", "--labels", "trait:N"]), None).unwrap();
        assert_eq!(c.combos().unwrap().unwrap(), vec![vec![Stream::Pers], vec![Stream::Pers, Stream::Prox]]);
        assert_eq!(c.label_kind().unwrap(), LabelKind::Trait(Trait::N));
    }
}
