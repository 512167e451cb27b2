//! Run configuration: a small INI dialect (sections, key = value, # or ;
//! comments) with typed getters, CLI overrides, and builders for the
//! pipeline, domain, and training configs.

use std::path::Path;

use crate::synthlidar::{default_source_spec, default_target_spec, DomainSpec, GenConfig};
use crate::{HyldaError, Result};

#[derive(Debug, Clone, Default)]
pub struct Config {
    sections: Vec<(String, Vec<(String, String)>)>,
}

impl Config {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut section: Option<String> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = Some(name.trim().to_string());
                cfg.sections.push((name.trim().to_string(), Vec::new()));
                continue;
            }
            let Some(eq) = line.find('=') else {
                return Err(HyldaError::Config(format!("line {}: expected key = value", lineno + 1)));
            };
            let key = line[..eq].trim().to_string();
            let value = line[eq + 1..].trim().to_string();
            if key.is_empty() {
                return Err(HyldaError::Config(format!("line {}: empty key", lineno + 1)));
            }
            let Some(sec) = &section else {
                return Err(HyldaError::Config(format!(
                    "line {}: key '{key}' outside any [section]",
                    lineno + 1
                )));
            };
            let entries = &mut cfg.sections.iter_mut().find(|(n, _)| n == sec).unwrap().1;
            match entries.iter_mut().find(|(k, _)| k == &key) {
                Some(e) => e.1 = value,
                None => entries.push((key, value)),
            }
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HyldaError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .iter()
            .find(|(n, _)| n == section)?
            .1
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) {
        if !self.sections.iter().any(|(n, _)| n == section) {
            self.sections.push((section.to_string(), Vec::new()));
        }
        let entries = &mut self.sections.iter_mut().find(|(n, _)| n == section).unwrap().1;
        match entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value.to_string(),
            None => entries.push((key.to_string(), value.to_string())),
        }
    }

    /// Applies a `section.key=value` command-line override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let Some(eq) = spec.find('=') else {
            return Err(HyldaError::Config(format!("override '{spec}' must be section.key=value")));
        };
        let (path, value) = (spec[..eq].trim(), spec[eq + 1..].trim());
        let Some(dot) = path.find('.') else {
            return Err(HyldaError::Config(format!("override '{spec}' must be section.key=value")));
        };
        let (section, key) = (&path[..dot], &path[dot + 1..]);
        if section.is_empty() || key.is_empty() {
            return Err(HyldaError::Config(format!("override '{spec}' must be section.key=value")));
        }
        self.set(section, key, value);
        Ok(())
    }

    /// Serializes the resolved configuration in insertion order.
    pub fn to_ini(&self) -> String {
        let mut out = String::new();
        for (name, entries) in &self.sections {
            out.push_str(&format!("[{name}]\n"));
            for (k, v) in entries {
                out.push_str(&format!("{k} = {v}\n"));
            }
            out.push('\n');
        }
        out
    }

    fn typed<T: std::str::FromStr>(&self, section: &str, key: &str, default: T) -> Result<T> {
        match self.get(section, key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                HyldaError::Config(format!("[{section}] {key} = {v}: cannot parse"))
            }),
        }
    }

    pub fn f64_or(&self, section: &str, key: &str, default: f64) -> Result<f64> {
        self.typed(section, key, default)
    }

    pub fn usize_or(&self, section: &str, key: &str, default: usize) -> Result<usize> {
        self.typed(section, key, default)
    }

    pub fn u64_or(&self, section: &str, key: &str, default: u64) -> Result<u64> {
        self.typed(section, key, default)
    }

    pub fn bool_or(&self, section: &str, key: &str, default: bool) -> Result<bool> {
        match self.get(section, key) {
            None => Ok(default),
            Some(v) => match v.to_ascii_lowercase().as_str() {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(HyldaError::Config(format!("[{section}] {key} = {v}: expected bool"))),
            },
        }
    }

    pub fn usize_list_or(&self, section: &str, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.get(section, key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim().parse().map_err(|_| {
                        HyldaError::Config(format!("[{section}] {key} = {v}: bad integer list"))
                    })
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Naive,
    Finetune,
    Oracle,
    Hylda,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Naive => "naive",
            Mode::Finetune => "finetune",
            Mode::Oracle => "oracle",
            Mode::Hylda => "hylda",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = HyldaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Mode::Naive),
            "finetune" => Ok(Mode::Finetune),
            "oracle" => Ok(Mode::Oracle),
            "hylda" => Ok(Mode::Hylda),
            _ => Err(HyldaError::Config(format!(
                "unknown mode '{s}', expected naive|finetune|oracle|hylda"
            ))),
        }
    }
}

/// Everything the training loops need.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub mode: Mode,
    pub beta: f64,
    pub gamma: f64,
    pub lr_seg: f64,
    pub lr_i2i: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub labeled_subset_size: usize,
    pub widths: [usize; 3],
    pub n_classes: usize,
    pub use_hylda_i2i: bool,
    pub use_aux_selfsup: bool,
    pub use_unsup_step: bool,
    pub use_stats_loss: bool,
    pub dual_head_disc: bool,
    pub update_disc_in_step6: bool,
    pub augment: bool,
    pub check_isolation: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta < 0.0 || self.gamma < 0.0 {
            return Err(HyldaError::Config("loss weights must be non-negative".into()));
        }
        if self.lr_seg <= 0.0 || self.lr_i2i <= 0.0 {
            return Err(HyldaError::Config("learning rates must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(HyldaError::Config("epochs and batch size must be positive".into()));
        }
        if self.n_classes == 0 || self.n_classes > 254 {
            return Err(HyldaError::Config(format!("class count {} out of range", self.n_classes)));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(HyldaError::Config("network widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub grid_h: usize,
    pub grid_w: usize,
    pub classes: usize,
    pub seed: u64,
    pub subset_sizes: Vec<usize>,
    pub source: DomainSpec,
    pub target: DomainSpec,
    pub train: TrainConfig,
}

impl PipelineConfig {
    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            grid_h: self.grid_h,
            grid_w: self.grid_w,
            seed: self.seed,
            subset_sizes: self.subset_sizes.clone(),
        }
    }
}

fn domain_from_section(cfg: &Config, section: &str, base: DomainSpec) -> Result<DomainSpec> {
    let mut d = base;
    d.sensor.beams = cfg.usize_or(section, "beams", d.sensor.beams)?;
    d.sensor.width = cfg.usize_or(section, "width", d.sensor.width)?;
    d.sensor.fov_up_deg = cfg.f64_or(section, "fov_up", d.sensor.fov_up_deg)?;
    d.sensor.fov_down_deg = cfg.f64_or(section, "fov_down", d.sensor.fov_down_deg)?;
    d.sensor.max_range = cfg.f64_or(section, "max_range", d.sensor.max_range)?;
    d.sensor.noise_sigma = cfg.f64_or(section, "noise_sigma", d.sensor.noise_sigma)?;
    d.sensor.dropout_prob = cfg.f64_or(section, "dropout_prob", d.sensor.dropout_prob)?;
    d.remission_gain = cfg.f64_or(section, "remission_gain", d.remission_gain)?;
    d.scene.extent = cfg.f64_or(section, "extent", d.scene.extent)?;
    d.scene.n_ground = cfg.usize_or(section, "ground", d.scene.n_ground)?;
    d.scene.n_vehicles = cfg.usize_or(section, "vehicles", d.scene.n_vehicles)?;
    d.scene.n_pedestrians = cfg.usize_or(section, "pedestrians", d.scene.n_pedestrians)?;
    d.scene.n_buildings = cfg.usize_or(section, "buildings", d.scene.n_buildings)?;
    d.scene.n_poles = cfg.usize_or(section, "poles", d.scene.n_poles)?;
    d.scene.n_vegetation = cfg.usize_or(section, "vegetation", d.scene.n_vegetation)?;
    d.scene.seed = cfg.u64_or(section, "scene_seed", d.scene.seed)?;
    d.n_train = cfg.usize_or(section, "n_train", d.n_train)?;
    d.n_val = cfg.usize_or(section, "n_val", d.n_val)?;
    d.validate()?;
    Ok(d)
}

/// Builds the full pipeline configuration, falling back to the shipped
/// defaults for anything the file leaves out.
pub fn load_pipeline(cfg: &Config) -> Result<PipelineConfig> {
    let grid_h = cfg.usize_or("pipeline", "grid_h", 16)?;
    let grid_w = cfg.usize_or("pipeline", "grid_w", 128)?;
    if grid_h % 8 != 0 || grid_w % 8 != 0 {
        return Err(HyldaError::Config(format!(
            "grid {grid_h}x{grid_w} must be divisible by 8 for the three-level networks"
        )));
    }
    let classes = cfg.usize_or("pipeline", "classes", 6)?;
    let seed = cfg.u64_or("pipeline", "seed", 7)?;
    let subset_sizes = cfg.usize_list_or("pipeline", "subset_sizes", &[5, 10, 20])?;

    let source = domain_from_section(cfg, "source", default_source_spec())?;
    let target = domain_from_section(cfg, "target", default_target_spec())?;

    let widths_list = cfg.usize_list_or("train", "widths", &[8, 16, 32])?;
    if widths_list.len() != 3 {
        return Err(HyldaError::Config(format!(
            "widths needs exactly 3 entries, got {}",
            widths_list.len()
        )));
    }
    let mode: Mode = cfg.get("train", "mode").unwrap_or("hylda").parse()?;
    let train = TrainConfig {
        mode,
        beta: cfg.f64_or("train", "beta", 0.1)?,
        gamma: cfg.f64_or("train", "gamma", 1.0)?,
        lr_seg: cfg.f64_or("train", "lr_seg", 0.01)?,
        lr_i2i: cfg.f64_or("train", "lr_i2i", 0.002)?,
        epochs: cfg.usize_or("train", "epochs", 20)?,
        batch_size: cfg.usize_or("train", "batch_size", 2)?,
        seed,
        labeled_subset_size: cfg.usize_or("train", "labeled_subset_size", 10)?,
        widths: [widths_list[0], widths_list[1], widths_list[2]],
        n_classes: classes,
        use_hylda_i2i: cfg.bool_or("train", "use_hylda_i2i", true)?,
        use_aux_selfsup: cfg.bool_or("train", "use_aux_selfsup", true)?,
        use_unsup_step: cfg.bool_or("train", "use_unsup_step", true)?,
        use_stats_loss: cfg.bool_or("train", "use_stats_loss", true)?,
        dual_head_disc: cfg.bool_or("train", "dual_head_disc", true)?,
        update_disc_in_step6: cfg.bool_or("train", "update_disc_in_step6", false)?,
        augment: cfg.bool_or("train", "augment", true)?,
        check_isolation: false,
    };
    train.validate()?;

    Ok(PipelineConfig { grid_h, grid_w, classes, seed, subset_sizes, source, target, train })
}

/// Seed override from the environment; `value` is the raw HYLDA_SEED string.
pub fn apply_seed_override(cfg: &mut Config, value: Option<&str>) -> Result<()> {
    if let Some(v) = value {
        let seed: u64 = v
            .trim()
            .parse()
            .map_err(|_| HyldaError::Config(format!("HYLDA_SEED '{v}' is not a u64")))?;
        cfg.set("pipeline", "seed", &seed.to_string());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_comments_and_duplicate_keys() {
        let cfg = Config::parse(
            "# comment\n[pipeline]\nseed = 9\nseed = 10\n; more\n[train]\nmode = oracle\n",
        )
        .unwrap();
        assert_eq!(cfg.get("pipeline", "seed"), Some("10"));
        assert_eq!(cfg.get("train", "mode"), Some("oracle"));
        assert_eq!(cfg.get("train", "missing"), None);
        assert!(Config::parse("key = 1\n").is_err());
        assert!(Config::parse("[a]\nnotakv\n").is_err());
    }

    #[test]
    fn overrides_win_and_malformed_ones_fail() {
        let mut cfg = Config::parse("[pipeline]\nseed = 1\n").unwrap();
        cfg.apply_override("pipeline.seed=55").unwrap();
        cfg.apply_override("train.mode=naive").unwrap();
        assert_eq!(cfg.get("pipeline", "seed"), Some("55"));
        assert_eq!(cfg.get("train", "mode"), Some("naive"));
        assert!(cfg.apply_override("noequals").is_err());
        assert!(cfg.apply_override("nodot=3").is_err());
    }

    #[test]
    fn defaults_fill_everything_from_an_empty_config() {
        let p = load_pipeline(&Config::empty()).unwrap();
        assert_eq!((p.grid_h, p.grid_w), (16, 128));
        assert_eq!(p.classes, 6);
        assert_eq!(p.subset_sizes, vec![5, 10, 20]);
        assert_eq!(p.source, default_source_spec());
        assert_eq!(p.target, default_target_spec());
        assert_eq!(p.train.mode, Mode::Hylda);
        assert_eq!(p.train.widths, [8, 16, 32]);
        assert!((p.train.beta - 0.1).abs() < 1e-12);
    }

    #[test]
    fn sections_override_domain_fields() {
        let cfg = Config::parse("[target]\nbeams = 4\nremission_gain = 0.5\npedestrians = 9\n")
            .unwrap();
        let p = load_pipeline(&cfg).unwrap();
        assert_eq!(p.target.sensor.beams, 4);
        assert!((p.target.remission_gain - 0.5).abs() < 1e-12);
        assert_eq!(p.target.scene.n_pedestrians, 9);
        assert_eq!(p.source, default_source_spec());
    }

    #[test]
    fn bad_values_are_config_errors() {
        let cfg = Config::parse("[pipeline]\ngrid_h = 12\n").unwrap();
        assert!(load_pipeline(&cfg).unwrap_err().is_config());
        let cfg = Config::parse("[train]\nmode = wild\n").unwrap();
        assert!(load_pipeline(&cfg).unwrap_err().is_config());
        let cfg = Config::parse("[train]\nuse_stats_loss = maybe\n").unwrap();
        assert!(load_pipeline(&cfg).unwrap_err().is_config());
        let cfg = Config::parse("[train]\nwidths = 8,16\n").unwrap();
        assert!(load_pipeline(&cfg).unwrap_err().is_config());
    }

    #[test]
    fn env_seed_overrides_config_seed() {
        let mut cfg = Config::parse("[pipeline]\nseed = 3\n").unwrap();
        apply_seed_override(&mut cfg, None).unwrap();
        assert_eq!(load_pipeline(&cfg).unwrap().seed, 3);
        apply_seed_override(&mut cfg, Some("99")).unwrap();
        assert_eq!(load_pipeline(&cfg).unwrap().seed, 99);
        assert!(apply_seed_override(&mut cfg, Some("x")).is_err());
    }

    #[test]
    fn resolved_dump_round_trips() {
        let cfg = Config::parse("[pipeline]\nseed = 4\n[train]\nmode = finetune\n").unwrap();
        let text = cfg.to_ini();
        let back = Config::parse(&text).unwrap();
        assert_eq!(back.get("pipeline", "seed"), Some("4"));
        assert_eq!(back.get("train", "mode"), Some("finetune"));
    }
}
