//! Run configuration: a plain `key = value` file plus command-line overrides.
//!
//! Lines are `key = value`; `#` starts a comment and blank lines are skipped.
//! A key may appear once per file. `profile` (`desk` or `paper`) is applied
//! first, wherever it appears, and every other key then overrides the profile
//! value. Overrides from the command line are applied after the file.
//!
//! | key | meaning |
//! |-----|---------|
//! | `profile` | `desk` (default) or `paper` |
//! | `n_classes` `per_class` `query_per_class` | synthetic class layout |
//! | `feature_channels` `height` `width` | base feature shape |
//! | `n_attributes` `subtlety` `noise_sigma` `data_seed` | synthetic generator |
//! | `descriptors` `descriptor_channels` `memory_units` `memory_slots` | head shape |
//! | `bits` | comma-separated code lengths |
//! | `alpha` `beta` | quantization and dispersion weights |
//! | `outer_iterations` `epochs_per_iteration` `batch_size` `query_sample_size` | schedule |
//! | `lr` | learning rate, or `auto` for the profile rule |
//! | `lr_drop_at` `lr_drop_factor` | step decay (0 disables) |
//! | `seed` | training seed |
//! | `adl` `siea` | `on` or `off` |
//! | `adl_denominator` | `paper` or `pairs` |
//! | `variants` | `auto` or a comma list of `base`, `adl`, `adl_siea` |
//! | `features` `out_dir` | file locations |
//! | `top_k` `item` `repeats` | query, export and bench options |

use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use agmh_core::rng::ALGORITHM;
use agmh_core::train::DESK_LR_BITS;
use agmh_core::{AdlDenominator, SyntheticSpec, TrainConfig};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Desk,
    Paper,
}

impl Profile {
    fn train_config(self, bits: usize) -> TrainConfig {
        match self {
            Self::Desk => TrainConfig::desk(bits),
            Self::Paper => TrainConfig::paper(bits),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::Desk => "desk",
            Self::Paper => "paper",
        }
    }
}

/// Which loss terms a training run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Hash loss only.
    Base,
    /// Dispersion loss on the descriptors directly.
    Adl,
    /// Dispersion loss through the attention branch.
    AdlSiea,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Self::Base => "base",
            Self::Adl => "adl",
            Self::AdlSiea => "adl_siea",
        }
    }

    pub fn switches(self) -> (bool, bool) {
        match self {
            Self::Base => (false, false),
            Self::Adl => (true, false),
            Self::AdlSiea => (true, true),
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "base" => Some(Self::Base),
            "adl" => Some(Self::Adl),
            "adl_siea" | "siea" => Some(Self::AdlSiea),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub profile: Profile,
    pub data: SyntheticSpec,
    /// Profile defaults with file and flag overrides; `bits`, `lr`, `adl` and
    /// `siea` are settled per run by [`RunConfig::train_config`].
    pub train: TrainConfig,
    /// `None` means the profile's rule for the code length.
    pub lr: Option<f64>,
    pub bits: Vec<usize>,
    /// `None` means the single variant picked by the `adl` and `siea` switches.
    pub variants: Option<Vec<Variant>>,
    pub features: PathBuf,
    pub out_dir: PathBuf,
    pub top_k: usize,
    pub item: Option<u64>,
    pub repeats: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_profile(Profile::Desk)
    }
}

/// One `key = value` entry with the line it came from (0 for overrides).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Splits config text into entries, rejecting malformed lines and repeated
/// keys.
pub fn parse_entries(text: &str) -> Result<Vec<Entry>> {
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected key = value, found {line:?}", i + 1)));
        };
        let (key, value) = (key.trim(), value.trim());
        if let Some(prev) = out.iter().find(|e| e.key == key) {
            return Err(Error::Config(format!(
                "line {}: key `{key}` already set on line {}",
                i + 1,
                prev.line
            )));
        }
        out.push(Entry {
            key: key.to_string(),
            value: value.to_string(),
            line: i + 1,
        });
    }
    Ok(out)
}

/// Parses a `key=value` override.
pub fn parse_override(s: &str) -> Result<Entry> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok(Entry {
            key: k.trim().to_string(),
            value: v.trim().to_string(),
            line: 0,
        }),
        _ => Err(Error::Config(format!("override {s:?} is not key=value"))),
    }
}

fn number<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("key `{key}`: cannot parse {value:?}")))
}

fn switch(key: &str, value: &str) -> Result<bool> {
    match value {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        _ => Err(Error::Config(format!("key `{key}`: expected on or off, found {value:?}"))),
    }
}

fn list<T>(key: &str, value: &str, item: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    let items: Vec<T> = value.split(',').map(|s| item(s.trim())).collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("key `{key}`: empty list")));
    }
    Ok(items)
}

fn joined<T: Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        Self {
            profile,
            data: SyntheticSpec::standard_benchmark(0),
            train: profile.train_config(12),
            lr: None,
            bits: vec![12, 24, 32, 48],
            variants: None,
            features: PathBuf::from("features.agmh"),
            out_dir: PathBuf::from("runs"),
            top_k: 10,
            item: None,
            repeats: 3,
        }
    }

    /// Resolves file entries and then overrides on top of the selected
    /// profile.
    pub fn resolve(file: &[Entry], overrides: &[Entry]) -> Result<Self> {
        let all = || file.iter().chain(overrides);
        let profile = match all().rfind(|e| e.key == "profile") {
            None => Profile::Desk,
            Some(e) => match e.value.as_str() {
                "desk" => Profile::Desk,
                "paper" => Profile::Paper,
                v => return Err(Error::Config(format!("key `profile`: expected desk or paper, found {v:?}"))),
            },
        };
        let mut cfg = Self::for_profile(profile);
        for e in all().filter(|e| e.key != "profile") {
            cfg.set(&e.key, &e.value).map_err(|err| match (err, e.line) {
                (Error::Config(m), line) if line > 0 => Error::Config(format!("line {line}: {m}")),
                (err, _) => err,
            })?;
        }
        Ok(cfg)
    }

    pub fn from_text(text: &str, overrides: &[Entry]) -> Result<Self> {
        Self::resolve(&parse_entries(text)?, overrides)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let (d, t) = (&mut self.data, &mut self.train);
        match key {
            "n_classes" => d.n_classes = number(key, v)?,
            "per_class" => d.per_class = number(key, v)?,
            "query_per_class" => d.query_per_class = number(key, v)?,
            "feature_channels" => d.channels = number(key, v)?,
            "height" => d.height = number(key, v)?,
            "width" => d.width = number(key, v)?,
            "n_attributes" => d.n_attributes = number(key, v)?,
            "subtlety" => d.subtlety = number(key, v)?,
            "noise_sigma" => d.noise_sigma = number(key, v)?,
            "data_seed" => d.seed = number(key, v)?,
            "descriptors" => t.descriptors = number(key, v)?,
            "descriptor_channels" => t.channels = number(key, v)?,
            "memory_units" => t.memory_units = number(key, v)?,
            "memory_slots" => t.memory_slots = number(key, v)?,
            "alpha" => t.alpha = number(key, v)?,
            "beta" => t.beta = number(key, v)?,
            "outer_iterations" => t.outer_iterations = number(key, v)?,
            "epochs_per_iteration" => t.epochs_per_iteration = number(key, v)?,
            "batch_size" => t.batch_size = number(key, v)?,
            "query_sample_size" => t.query_sample_size = number(key, v)?,
            "lr_drop_at" => t.lr_drop_at = number(key, v)?,
            "lr_drop_factor" => t.lr_drop_factor = number(key, v)?,
            "seed" => t.seed = number(key, v)?,
            "adl" => t.adl = switch(key, v)?,
            "siea" => t.siea = switch(key, v)?,
            "adl_denominator" => {
                t.adl_denominator = match v {
                    "paper" => AdlDenominator::Paper,
                    "pairs" => AdlDenominator::Pairs,
                    _ => return Err(Error::Config(format!("key `{key}`: expected paper or pairs, found {v:?}"))),
                }
            }
            "lr" => self.lr = if v == "auto" { None } else { Some(number(key, v)?) },
            "bits" => {
                let bits = list(key, v, |s| number::<usize>(key, s))?;
                if bits.contains(&0) {
                    return Err(Error::Config(format!("key `{key}`: code lengths must be positive")));
                }
                self.bits = bits;
            }
            "variants" => {
                self.variants = if v == "auto" {
                    None
                } else {
                    Some(list(key, v, |s| {
                        Variant::parse(s).ok_or_else(|| {
                            Error::Config(format!("key `{key}`: unknown variant {s:?} (base, adl, adl_siea)"))
                        })
                    })?)
                }
            }
            "features" => self.features = PathBuf::from(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "top_k" => self.top_k = number(key, v)?,
            "item" => self.item = Some(number(key, v)?),
            "repeats" => self.repeats = number(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn variants(&self) -> Vec<Variant> {
        match &self.variants {
            Some(v) => v.clone(),
            None => vec![match (self.train.adl, self.train.siea) {
                (false, _) => Variant::Base,
                (true, false) => Variant::Adl,
                (true, true) => Variant::AdlSiea,
            }],
        }
    }

    pub fn lr_for(&self, bits: usize) -> f64 {
        match (self.lr, self.profile) {
            (Some(lr), _) => lr,
            (None, Profile::Desk) => DESK_LR_BITS / bits as f64,
            (None, Profile::Paper) => TrainConfig::paper(bits).lr,
        }
    }

    /// The training configuration of one (variant, code length) run.
    pub fn train_config(&self, bits: usize, variant: Variant) -> TrainConfig {
        let (adl, siea) = variant.switches();
        TrainConfig {
            bits,
            lr: self.lr_for(bits),
            adl,
            siea,
            ..self.train
        }
    }

    /// Every resolved setting except file locations, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (d, t) = (&self.data, &self.train);
        let on = |b: bool| if b { "on" } else { "off" }.to_string();
        vec![
            ("profile", self.profile.name().to_string()),
            ("n_classes", d.n_classes.to_string()),
            ("per_class", d.per_class.to_string()),
            ("query_per_class", d.query_per_class.to_string()),
            ("feature_channels", d.channels.to_string()),
            ("height", d.height.to_string()),
            ("width", d.width.to_string()),
            ("n_attributes", d.n_attributes.to_string()),
            ("subtlety", d.subtlety.to_string()),
            ("noise_sigma", d.noise_sigma.to_string()),
            ("data_seed", d.seed.to_string()),
            ("descriptors", t.descriptors.to_string()),
            ("descriptor_channels", t.channels.to_string()),
            ("memory_units", t.memory_units.to_string()),
            ("memory_slots", t.memory_slots.to_string()),
            ("bits", joined(&self.bits)),
            ("alpha", t.alpha.to_string()),
            ("beta", t.beta.to_string()),
            ("outer_iterations", t.outer_iterations.to_string()),
            ("epochs_per_iteration", t.epochs_per_iteration.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("query_sample_size", t.query_sample_size.to_string()),
            ("lr", self.lr.map_or("auto".to_string(), |lr| lr.to_string())),
            ("lr_drop_at", t.lr_drop_at.to_string()),
            ("lr_drop_factor", t.lr_drop_factor.to_string()),
            ("seed", t.seed.to_string()),
            ("adl", on(t.adl)),
            ("siea", on(t.siea)),
            (
                "adl_denominator",
                match t.adl_denominator {
                    AdlDenominator::Paper => "paper",
                    AdlDenominator::Pairs => "pairs",
                }
                .to_string(),
            ),
            (
                "variants",
                joined(&self.variants().iter().map(|v| v.name()).collect::<Vec<_>>()),
            ),
            ("top_k", self.top_k.to_string()),
            ("item", self.item.map_or("none".to_string(), |i| i.to_string())),
            ("repeats", self.repeats.to_string()),
            ("rng", ALGORITHM.to_string()),
        ]
    }

    /// The `# config:` line echoed into reports and logs.
    pub fn header(&self) -> String {
        let body: Vec<String> = self.entries().into_iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("# config: {}", body.join(" "))
    }
}
