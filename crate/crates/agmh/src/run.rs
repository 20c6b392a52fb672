//! The subcommands, as functions of a resolved [`RunConfig`].
//!
//! Each one writes the `# config:` header to `log` first. Files land in
//! `out_dir` under fixed names:
//!
//! - `<variant>_l<bits>.model`, `.codes` and `_loss.csv` from `train`
//! - `eval.csv`, `bench.csv`
//! - `attn_<item>_<i>.pgm` from `export-attn`

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use agmh_core::retrieval::{self, Query};
use agmh_core::{synth, train, AgmhModel, CodeDatabase, FeatureSet, PackedCode, Rng, Split};

use crate::config::{RunConfig, Variant};
use crate::error::{Error, Result};
use crate::format::{self, Checkpoint};
use crate::pgm;
use crate::report::Table;

/// RNG stream of the untrained baseline model, apart from the training
/// streams of the same seed.
pub const BASELINE_STREAM: u64 = 2;

pub const BENCH_BATCH_SIZES: [usize; 4] = [1, 4, 16, 64];

pub fn stem(variant: Variant, bits: usize) -> String {
    format!("{}_l{bits}", variant.name())
}

pub fn model_path(cfg: &RunConfig, variant: Variant, bits: usize) -> PathBuf {
    cfg.out_dir.join(format!("{}.model", stem(variant, bits)))
}

pub fn codes_path(cfg: &RunConfig, variant: Variant, bits: usize) -> PathBuf {
    cfg.out_dir.join(format!("{}.codes", stem(variant, bits)))
}

pub fn loss_path(cfg: &RunConfig, variant: Variant, bits: usize) -> PathBuf {
    cfg.out_dir.join(format!("{}_loss.csv", stem(variant, bits)))
}

pub fn eval_path(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("eval.csv")
}

pub fn bench_path(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("bench.csv")
}

fn say(log: &mut dyn Write, line: &str) -> Result<()> {
    writeln!(log, "{line}").map_err(|e| Error::io("<output>", e))
}

fn database(set: &FeatureSet, codes: impl IntoIterator<Item = Vec<i8>>, bits: usize) -> Result<CodeDatabase> {
    let mut db = CodeDatabase::new(bits as u32);
    for ((code, &id), &label) in codes.into_iter().zip(&set.ids).zip(&set.labels) {
        db.push(id, label, PackedCode::pack(&code)?)?;
    }
    Ok(db)
}

fn encode_set(model: &AgmhModel, set: &FeatureSet) -> Result<Vec<Vec<i8>>> {
    set.features.iter().map(|f| Ok(model.encode(f)?)).collect()
}

fn queries(model: &AgmhModel, set: &FeatureSet) -> Result<Vec<Query>> {
    let codes = encode_set(model, set)?;
    codes
        .into_iter()
        .zip(set.ids.iter().zip(&set.labels))
        .map(|(code, (&id, &label))| {
            Ok(Query {
                id,
                label,
                code: PackedCode::pack(&code)?,
            })
        })
        .collect()
}

fn split_or_fail(set: &FeatureSet, split: Split, path: &Path) -> Result<FeatureSet> {
    let part = set.subset(split);
    if part.is_empty() {
        let name = match split {
            Split::Query => "query",
            Split::Retrieval => "retrieval",
        };
        return Err(Error::Usage(format!("{} has no {name} items", path.display())));
    }
    Ok(part)
}

/// First configured (variant, code length): the model used by `query`,
/// `export-attn` and `bench`.
fn primary(cfg: &RunConfig) -> Result<(Variant, usize)> {
    let variant = cfg.variants()[0];
    let bits = *cfg.bits.first().ok_or_else(|| Error::Config("no code lengths".into()))?;
    Ok((variant, bits))
}

fn load_item(cfg: &RunConfig) -> Result<(FeatureSet, usize)> {
    let item = cfg.item.ok_or_else(|| Error::Config("this command needs `item` (--item)".into()))?;
    let set = format::load_features(&cfg.features)?;
    let pos = set
        .position_of(item)
        .ok_or_else(|| Error::Usage(format!("item id {item} not found in {}", cfg.features.display())))?;
    Ok((set, pos))
}

pub fn synth(cfg: &RunConfig, log: &mut dyn Write) -> Result<()> {
    say(log, &cfg.header())?;
    cfg.data.validate().map_err(|e| Error::Config(e.to_string()))?;
    let set = synth::generate(&cfg.data)?;
    format::save_features(&cfg.features, &set)?;
    let q = set.splits.iter().filter(|&&s| s == Split::Query).count();
    say(
        log,
        &format!(
            "wrote {}: {} items ({q} query, {} retrieval), {}x{}x{} features",
            cfg.features.display(),
            set.len(),
            set.len() - q,
            set.channels,
            set.height,
            set.width
        ),
    )
}

pub fn train(cfg: &RunConfig, log: &mut dyn Write) -> Result<()> {
    say(log, &cfg.header())?;
    let set = format::load_features(&cfg.features)?;
    let db_set = split_or_fail(&set, Split::Retrieval, &cfg.features)?;
    for variant in cfg.variants() {
        for &bits in &cfg.bits {
            let config = cfg.train_config(bits, variant);
            config.validate(db_set.len()).map_err(|e| Error::Config(e.to_string()))?;
            let out = train::train(&db_set, &config)?;

            let mut trace = Table::new(&["iteration", "epoch", "mean_loss"]);
            for r in &out.loss_trace {
                trace.push(vec![r.iteration.to_string(), r.epoch.to_string(), r.mean_loss.to_string()]);
            }
            let name = stem(variant, bits);
            let header = format!("{} run={name}", cfg.header());
            trace.save(&loss_path(cfg, variant, bits), &header)?;
            format::save_codes(&codes_path(cfg, variant, bits), &database(&db_set, out.codes, bits)?)?;
            format::save_checkpoint(
                &model_path(cfg, variant, bits),
                &Checkpoint {
                    config,
                    model: out.model,
                },
            )?;
            let last = out.loss_trace.last().map_or(f64::NAN, |r| r.mean_loss);
            say(log, &format!("{name}: final mean loss {last}"))?;
        }
    }
    Ok(())
}

/// mAP and precision@k of `model` for the query split against `db`.
fn score(model: &AgmhModel, query_set: &FeatureSet, db: &CodeDatabase, k: usize) -> Result<(f64, f64)> {
    let qs = queries(model, query_set)?;
    Ok((
        retrieval::mean_average_precision(&qs, db)?,
        retrieval::precision_at_k(&qs, db, k.min(db.len()))?,
    ))
}

/// An untrained model of the configured shape, centered on the database.
pub fn baseline_model(cfg: &RunConfig, db_set: &FeatureSet, bits: usize) -> Result<AgmhModel> {
    let config = cfg.train_config(bits, cfg.variants()[0]);
    let mut model = AgmhModel::init(
        config.head_shape(db_set.channels),
        bits,
        &mut Rng::fork(config.seed, BASELINE_STREAM),
    )?;
    model.recenter(&db_set.features)?;
    Ok(model)
}

pub fn eval(cfg: &RunConfig, log: &mut dyn Write) -> Result<Table> {
    say(log, &cfg.header())?;
    if cfg.top_k == 0 {
        return Err(Error::Config("key `top_k`: must be positive".into()));
    }
    let set = format::load_features(&cfg.features)?;
    let query_set = split_or_fail(&set, Split::Query, &cfg.features)?;
    let db_set = split_or_fail(&set, Split::Retrieval, &cfg.features)?;

    let mut table = Table::new(&["variant", "bits", "map", "precision_at_k"]);
    for &bits in &cfg.bits {
        let model = baseline_model(cfg, &db_set, bits)?;
        let db = database(&db_set, encode_set(&model, &db_set)?, bits)?;
        let (map, p) = score(&model, &query_set, &db, cfg.top_k)?;
        table.push(vec!["random".into(), bits.to_string(), map.to_string(), p.to_string()]);
    }
    for variant in cfg.variants() {
        for &bits in &cfg.bits {
            let ckpt = format::load_checkpoint(&model_path(cfg, variant, bits))?;
            let db = format::load_codes(&codes_path(cfg, variant, bits))?;
            let (map, p) = score(&ckpt.model, &query_set, &db, cfg.top_k)?;
            table.push(vec![variant.name().into(), bits.to_string(), map.to_string(), p.to_string()]);
        }
    }
    let text = table.save(&eval_path(cfg), &cfg.header())?;
    write!(log, "{text}").map_err(|e| Error::io("<output>", e))?;
    Ok(table)
}

pub fn query(cfg: &RunConfig, log: &mut dyn Write) -> Result<Table> {
    say(log, &cfg.header())?;
    let (set, pos) = load_item(cfg)?;
    let (variant, bits) = primary(cfg)?;
    let ckpt = format::load_checkpoint(&model_path(cfg, variant, bits))?;
    let db = format::load_codes(&codes_path(cfg, variant, bits))?;
    let code = PackedCode::pack(&ckpt.model.encode(&set.features[pos])?)?;
    let id = set.ids[pos];

    let mut table = Table::new(&["rank", "id", "label", "distance"]);
    let hits = retrieval::rank(&code, &db)?;
    for (r, hit) in hits.iter().filter(|h| db.ids()[h.index] != id).take(cfg.top_k).enumerate() {
        table.push(vec![
            (r + 1).to_string(),
            db.ids()[hit.index].to_string(),
            db.labels()[hit.index].to_string(),
            hit.distance.to_string(),
        ]);
    }
    write!(log, "{}", table.render(&cfg.header())?).map_err(|e| Error::io("<output>", e))?;
    Ok(table)
}

/// Writes the aggregation distribution of every descriptor of `item` and
/// returns the paths.
pub fn export_attn(cfg: &RunConfig, log: &mut dyn Write) -> Result<Vec<PathBuf>> {
    say(log, &cfg.header())?;
    let (set, pos) = load_item(cfg)?;
    let (variant, bits) = primary(cfg)?;
    let ckpt = format::load_checkpoint(&model_path(cfg, variant, bits))?;
    let out = ckpt.model.head.forward(&set.features[pos], ckpt.config.siea)?;
    let mut paths = Vec::new();
    for (i, map) in out.aggregation_dists.iter().enumerate() {
        let path = cfg.out_dir.join(pgm::file_name(set.ids[pos], i + 1));
        format::write_file(&path, &pgm::encode(map)?)?;
        say(log, &format!("wrote {}", path.display()))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Encode-and-rank wall time at each batch size that fits the query split.
/// Timings depend on the machine and are informational.
pub fn bench(cfg: &RunConfig, log: &mut dyn Write) -> Result<Table> {
    say(log, &cfg.header())?;
    if cfg.repeats == 0 {
        return Err(Error::Config("key `repeats`: must be positive".into()));
    }
    let set = format::load_features(&cfg.features)?;
    let query_set = split_or_fail(&set, Split::Query, &cfg.features)?;
    let (variant, bits) = primary(cfg)?;
    let ckpt = format::load_checkpoint(&model_path(cfg, variant, bits))?;
    let db = format::load_codes(&codes_path(cfg, variant, bits))?;

    let mut table = Table::new(&["batch_size", "queries", "repeats", "total_ms", "ms_per_query"]);
    for b in BENCH_BATCH_SIZES.into_iter().filter(|&b| b <= query_set.len()) {
        let start = Instant::now();
        for _ in 0..cfg.repeats {
            for f in &query_set.features[..b] {
                let code = PackedCode::pack(&ckpt.model.encode(f)?)?;
                std::hint::black_box(retrieval::rank(&code, &db)?);
            }
        }
        let total_ms = start.elapsed().as_secs_f64() * 1e3;
        let n = b * cfg.repeats;
        table.push(vec![
            b.to_string(),
            n.to_string(),
            cfg.repeats.to_string(),
            format!("{total_ms:.4}"),
            format!("{:.6}", total_ms / n as f64),
        ]);
    }
    let text = table.save(&bench_path(cfg), &cfg.header())?;
    write!(log, "{text}").map_err(|e| Error::io("<output>", e))?;
    Ok(table)
}
