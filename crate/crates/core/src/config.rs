//! `key=value` engine configuration.
//!
//! Analyzer keys accept either their long name or the short symbol
//! (`window`/`N`, `epochs_per_iter`/`E`, `threshold`/`t`, `loss_epochs`/`L`).
//! `loss_check` is `true`, `false` or `auto` (on for unbalanced profiles).
//! Box keys take `lo,hi` pairs; `init` takes `a,b,c`. Profile keys match the
//! corpus profile sidecar.

use crate::analyzer::DatasetProfile;
use crate::engine::EngineConfig;
use crate::error::{Error, Result};
use crate::kv::{self, KvDoc};

pub const ENGINE_KEYS: &[&str] = &[
    "window", "N", "epochs_per_iter", "E", "e_max", "threshold", "t", "loss_check", "loss_epochs", "L",
    "never_learn_margin", "c_min", "max_iterations", "gradient_tolerance", "step_tolerance", "cost_tolerance",
    "multi_start", "a_bounds", "b_bounds", "c_bounds", "init",
];

pub const PROFILE_KEYS: &[&str] = &["name", "num_classes", "class_fractions", "balanced"];

/// Fitting-box keys, the subset accepted by one-shot fits.
pub const BOX_KEYS: &[&str] = &["a_bounds", "b_bounds", "c_bounds", "init"];

fn either<T: std::str::FromStr>(doc: &KvDoc, long: &str, short: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    if doc.contains(long) && doc.contains(short) {
        return Err(Error::InvalidConfig(format!("both {long} and {short} are set")));
    }
    match doc.parse_value(long)? {
        Some(v) => Ok(Some(v)),
        None => doc.parse_value(short),
    }
}

/// Reads a dataset profile from inline keys, if `num_classes` is present.
pub fn profile_from_kv(doc: &KvDoc) -> Result<Option<DatasetProfile>> {
    let Some(num_classes) = doc.parse_value::<usize>("num_classes")? else {
        if let Some(k) = PROFILE_KEYS.iter().find(|k| doc.contains(k)) {
            return Err(Error::InvalidConfig(format!("{k} needs num_classes")));
        }
        return Ok(None);
    };
    let name = doc.get("name").unwrap_or("inline").to_string();
    let profile = match doc.parse_list::<f64>("class_fractions")? {
        Some(f) => {
            let mut p = DatasetProfile::with_fractions(name, f)?;
            if p.num_classes != num_classes {
                return Err(Error::InvalidConfig(format!(
                    "num_classes is {num_classes} but {} class fractions are given",
                    p.num_classes
                )));
            }
            if let Some(b) = doc.parse_value("balanced")? {
                p.balanced = b;
            }
            p
        }
        None => DatasetProfile::balanced(name, num_classes),
    };
    profile.validate()?;
    Ok(Some(profile))
}

fn pair(doc: &KvDoc, key: &str) -> Result<Option<[f64; 2]>> {
    match doc.parse_list::<f64>(key)?.as_deref() {
        None => Ok(None),
        Some(&[lo, hi]) => Ok(Some([lo, hi])),
        Some(_) => Err(Error::InvalidConfig(format!("{key} expects lo,hi"))),
    }
}

/// Applies the box keys in `doc` to `cfg.param_box`.
pub fn apply_box(cfg: &mut EngineConfig, doc: &KvDoc) -> Result<()> {
    for (i, key) in ["a_bounds", "b_bounds", "c_bounds"].iter().enumerate() {
        if let Some([lo, hi]) = pair(doc, key)? {
            cfg.param_box.lower[i] = lo;
            cfg.param_box.upper[i] = hi;
        }
    }
    match doc.parse_list::<f64>("init")?.as_deref() {
        None => {}
        Some(&[a, b, c]) => cfg.param_box.init = [a, b, c],
        Some(_) => return Err(Error::InvalidConfig("init expects a,b,c".into())),
    }
    Ok(())
}

/// Builds an engine config from `doc`. The profile comes from inline keys,
/// else `fallback`, else a balanced 10-class profile. Keys outside the engine
/// and profile sets are errors unless listed in `extra`.
pub fn engine_config_from_kv(doc: &KvDoc, fallback: Option<DatasetProfile>, extra: &[&str]) -> Result<EngineConfig> {
    let mut allowed: Vec<&str> = ENGINE_KEYS.iter().chain(PROFILE_KEYS).copied().collect();
    allowed.extend_from_slice(extra);
    doc.reject_unknown(&allowed)?;

    let profile = match profile_from_kv(doc)? {
        Some(p) => p,
        None => fallback.unwrap_or_else(|| DatasetProfile::balanced("default", 10)),
    };
    let mut cfg = EngineConfig::for_profile(profile);
    let a = &mut cfg.analyzer;
    if let Some(v) = either(doc, "window", "N")? {
        a.window = v;
    }
    if let Some(v) = either(doc, "epochs_per_iter", "E")? {
        a.epochs_per_iter = v;
    }
    if let Some(v) = doc.parse_value("e_max")? {
        a.e_max = v;
    }
    if let Some(v) = either(doc, "threshold", "t")? {
        a.threshold = v;
    }
    if let Some(v) = either(doc, "loss_epochs", "L")? {
        a.loss_epochs = v;
    }
    if let Some(v) = doc.parse_value("never_learn_margin")? {
        a.never_learn_margin = v;
    }
    match doc.get("loss_check") {
        None | Some("auto") => {}
        Some(_) => a.loss_check = doc.require("loss_check")?,
    }
    let f = &mut cfg.fit;
    if let Some(v) = doc.parse_value("c_min")? {
        f.c_min = v;
    }
    if let Some(v) = doc.parse_value("max_iterations")? {
        f.max_iterations = v;
    }
    if let Some(v) = doc.parse_value("gradient_tolerance")? {
        f.gradient_tolerance = v;
    }
    if let Some(v) = doc.parse_value("step_tolerance")? {
        f.step_tolerance = v;
    }
    if let Some(v) = doc.parse_value("cost_tolerance")? {
        f.cost_tolerance = v;
    }
    if let Some(v) = doc.parse_value("multi_start")? {
        f.multi_start = v;
    }
    apply_box(&mut cfg, doc)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Renders every engine and profile key, readable by [`engine_config_from_kv`].
pub fn render_engine_config(cfg: &EngineConfig) -> String {
    let mut doc = KvDoc::default();
    let a = &cfg.analyzer;
    doc.push("N", a.window);
    doc.push("E", a.epochs_per_iter);
    doc.push("e_max", a.e_max);
    doc.push("t", a.threshold);
    doc.push("loss_check", a.loss_check);
    doc.push("L", a.loss_epochs);
    doc.push("never_learn_margin", a.never_learn_margin);
    let f = &cfg.fit;
    doc.push("c_min", f.c_min);
    doc.push("max_iterations", f.max_iterations);
    doc.push("gradient_tolerance", f.gradient_tolerance);
    doc.push("step_tolerance", f.step_tolerance);
    doc.push("cost_tolerance", f.cost_tolerance);
    doc.push("multi_start", f.multi_start);
    let b = &cfg.param_box;
    for (i, key) in ["a_bounds", "b_bounds", "c_bounds"].iter().enumerate() {
        doc.push(*key, kv::join(&[b.lower[i], b.upper[i]]));
    }
    doc.push("init", kv::join(&b.init));
    let p = &cfg.profile;
    doc.push("name", &p.name);
    doc.push("num_classes", p.num_classes);
    doc.push("class_fractions", kv::join(&p.class_fractions));
    doc.push("balanced", p.balanced);
    doc.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_round_trip() {
        let cfg = engine_config_from_kv(&KvDoc::default(), None, &[]).unwrap();
        assert_eq!(cfg, EngineConfig::default());
        let text = render_engine_config(&cfg);
        let back = engine_config_from_kv(&KvDoc::parse(&text).unwrap(), None, &[]).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn short_and_long_names() {
        let doc = KvDoc::parse("N=4\nthreshold=0.25\nE=1\nL=3\ne_max=10\n").unwrap();
        let cfg = engine_config_from_kv(&doc, None, &[]).unwrap();
        assert_eq!((cfg.analyzer.window, cfg.analyzer.threshold, cfg.analyzer.epochs_per_iter), (4, 0.25, 1.0));
        assert!(engine_config_from_kv(&KvDoc::parse("N=4\nwindow=3\n").unwrap(), None, &[]).is_err());
    }

    #[test]
    fn loss_check_follows_profile_unless_set() {
        let skewed = "num_classes=2\nclass_fractions=0.3,0.7\n";
        let cfg = engine_config_from_kv(&KvDoc::parse(skewed).unwrap(), None, &[]).unwrap();
        assert!(cfg.analyzer.loss_check);
        let cfg = engine_config_from_kv(&KvDoc::parse(&format!("{skewed}loss_check=false\n")).unwrap(), None, &[]).unwrap();
        assert!(!cfg.analyzer.loss_check);
        let cfg = engine_config_from_kv(&KvDoc::parse("loss_check=auto\n").unwrap(), None, &[]).unwrap();
        assert!(!cfg.analyzer.loss_check);
    }

    #[test]
    fn box_overrides_and_errors() {
        let doc = KvDoc::parse("a_bounds=0.5,100\ninit=20,1.5,10\n").unwrap();
        let cfg = engine_config_from_kv(&doc, None, &[]).unwrap();
        assert_eq!(cfg.param_box.upper[0], 100.0);
        assert_eq!(cfg.param_box.init, [20.0, 1.5, 10.0]);
        assert!(engine_config_from_kv(&KvDoc::parse("init=1,2\n").unwrap(), None, &[]).is_err());
        assert!(engine_config_from_kv(&KvDoc::parse("init=200,1.5,10\n").unwrap(), None, &[]).is_err());
        assert!(engine_config_from_kv(&KvDoc::parse("bogus=1\n").unwrap(), None, &[]).is_err());
        assert!(engine_config_from_kv(&KvDoc::parse("addr=x\n").unwrap(), None, &["addr"]).is_ok());
        assert!(engine_config_from_kv(&KvDoc::parse("e_max=20.3\n").unwrap(), None, &[]).is_err());
    }
}
