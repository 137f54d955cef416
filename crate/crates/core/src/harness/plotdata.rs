//! Tidy per-figure CSVs derived from a finished run directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::Value;

use super::run::{
    seed_dir_name, EVAL_FILE, PLASTICITY_LAYERS_FILE, RESETS_FILE, SEED_FILES, SNAPSHOT_FILE, SUMMARY_FILE,
    TRAINING_FILE,
};
use crate::plasticity::NA;
use crate::{Error, Result};

pub const PLOTDATA_DIR: &str = "plotdata";

pub const LEARNING_CURVE_FILE: &str = "learning_curve.csv";
pub const EVAL_CURVE_FILE: &str = "eval_curve.csv";
pub const IQM_CURVE_FILE: &str = "iqm_curve.csv";
pub const PLASTICITY_RATIOS_FILE: &str = "plasticity_ratios.csv";
pub const QOE_COMPONENTS_FILE: &str = "qoe_components.csv";
pub const RESET_TIMELINE_FILE: &str = "reset_timeline.csv";

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Data rows (header skipped) split on commas.
fn rows(text: &str) -> impl Iterator<Item = Vec<&str>> {
    text.lines().skip(1).filter(|l| !l.is_empty()).map(|l| l.split(',').collect())
}

fn json_f64(v: &Value, key: &str) -> String {
    v.get(key).and_then(Value::as_f64).map_or_else(|| NA.to_string(), |x| x.to_string())
}

/// Writes every plot-data file into `run_dir/plotdata` and returns their paths.
pub fn emit_plot_data(run_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = run_dir.as_ref();
    let mut missing: Vec<PathBuf> = [SUMMARY_FILE, SNAPSHOT_FILE]
        .iter()
        .map(|f| dir.join(f))
        .filter(|p| !p.is_file())
        .collect();
    if missing.iter().any(|p| p.ends_with(SUMMARY_FILE)) {
        return Err(missing_error(dir, &missing));
    }
    let summary_path = dir.join(SUMMARY_FILE);
    let summary: Value = serde_json::from_str(&read(&summary_path)?)
        .map_err(|e| Error::Validation(format!("{}: {e}", summary_path.display())))?;
    let scenario = summary
        .get("scenario")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Validation(format!("{}: missing scenario", summary_path.display())))?
        .to_string();
    let seeds: Vec<&Value> = summary
        .get("seeds")
        .and_then(Value::as_array)
        .map(|a| a.iter().collect())
        .unwrap_or_default();
    let mut seed_ids = Vec::with_capacity(seeds.len());
    for s in &seeds {
        let id = s
            .get("seed")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::Validation(format!("{}: seed entry without id", summary_path.display())))?;
        seed_ids.push(id);
        for f in SEED_FILES {
            let p = dir.join(seed_dir_name(id)).join(f);
            if !p.is_file() {
                missing.push(p);
            }
        }
    }
    if !missing.is_empty() {
        return Err(missing_error(dir, &missing));
    }

    let mut learning = String::from("scenario,seed,update,step,mean_reward,mean_qoe\n");
    let mut ratios = String::from("scenario,seed,step,role,layer,LD,LDO,LZG,LZGO,LS,LSO\n");
    let mut timeline = String::from("scenario,seed,step,role,layer,resets\n");
    let mut eval_curve = String::from("scenario,seed,update,trace,episode,qoe\n");
    let mut components = String::from(
        "scenario,seed,update,qoe,quality,switch_penalty,rebuffer_penalty,rebuffer_s,bitrate_mbps\n",
    );
    for (s, &id) in seeds.iter().zip(&seed_ids) {
        let sd = dir.join(seed_dir_name(id));
        for r in rows(&read(&sd.join(TRAINING_FILE))?) {
            let _ = writeln!(learning, "{scenario},{id},{},{},{},{}", r[0], r[1], r[2], r[3]);
        }
        for r in rows(&read(&sd.join(PLASTICITY_LAYERS_FILE))?) {
            let _ = writeln!(ratios, "{scenario},{id},{}", r.join(","));
        }
        let mut counts: BTreeMap<(u64, String, usize), u64> = BTreeMap::new();
        for r in rows(&read(&sd.join(RESETS_FILE))?) {
            let step = r[0].parse().unwrap_or(0);
            let layer = r[2].parse().unwrap_or(0);
            *counts.entry((step, r[1].to_string(), layer)).or_default() += 1;
        }
        for ((step, role, layer), n) in counts {
            let _ = writeln!(timeline, "{scenario},{id},{step},{role},{layer},{n}");
        }
        for r in rows(&read(&sd.join(EVAL_FILE))?) {
            let _ = writeln!(eval_curve, "{scenario},{id},{},{},{},{}", r[0], r[1], r[2], r[3]);
        }
        for p in s.get("eval_curve").and_then(Value::as_array).into_iter().flatten() {
            let _ = writeln!(
                components,
                "{scenario},{id},{},{},{},{},{},{},{}",
                p.get("update").and_then(Value::as_u64).unwrap_or(0),
                json_f64(p, "qoe"),
                json_f64(p, "quality"),
                json_f64(p, "switch_penalty"),
                json_f64(p, "rebuffer_penalty"),
                json_f64(p, "rebuffer_s"),
                json_f64(p, "bitrate_mbps"),
            );
        }
    }
    let mut iqm = String::from("scenario,update,iqm_qoe,seeds\n");
    for p in summary.get("iqm_curve").and_then(Value::as_array).into_iter().flatten() {
        let _ = writeln!(
            iqm,
            "{scenario},{},{},{}",
            p.get("update").and_then(Value::as_u64).unwrap_or(0),
            json_f64(p, "iqm_qoe"),
            p.get("seeds").and_then(Value::as_u64).unwrap_or(0),
        );
    }

    let out = dir.join(PLOTDATA_DIR);
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let files = [
        (LEARNING_CURVE_FILE, learning),
        (EVAL_CURVE_FILE, eval_curve),
        (IQM_CURVE_FILE, iqm),
        (PLASTICITY_RATIOS_FILE, ratios),
        (QOE_COMPONENTS_FILE, components),
        (RESET_TIMELINE_FILE, timeline),
    ];
    let mut written = Vec::with_capacity(files.len());
    for (name, body) in files {
        let p = out.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        written.push(p);
    }
    Ok(written)
}

fn missing_error(dir: &Path, missing: &[PathBuf]) -> Error {
    let list: Vec<String> = missing.iter().map(|p| p.display().to_string()).collect();
    Error::Validation(format!(
        "{} is not a completed run directory; missing: {}",
        dir.display(),
        list.join(", ")
    ))
}
