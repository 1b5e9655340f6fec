use std::path::{Path, PathBuf};

use csg_core::defaults;
use csg_core::generator::{load_corpus, Manifest, Split};
use csg_core::knowledge::{Backend, Lexicon, Provider, ProviderConfig};
use csg_core::model::{load_model, CheckpointMeta, CsgTl};
use csg_core::planner::PlannerConfig;
use csg_core::scene::Scene;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::{BackendArg, PlannerArgs, PresetArg, Runtime, SplitArg};

pub fn apply_jobs(jobs: Option<usize>) -> CliResult<()> {
    match jobs {
        Some(0) => Err(CliError::usage("--jobs must be at least 1")),
        Some(n) => {
            csg_core::exec::set_threads(n);
            Ok(())
        }
        None => Ok(()),
    }
}

pub fn provider(rt: &Runtime, d_feat: usize) -> CliResult<Provider> {
    apply_jobs(rt.jobs)?;
    let cfg = match rt.backend {
        BackendArg::Offline => ProviderConfig {
            d_feat,
            ..ProviderConfig::default()
        },
        BackendArg::External => {
            let cfg = ProviderConfig {
                d_feat,
                ..ProviderConfig::external_from_env(&rt.cache_dir)
            };
            debug_assert_eq!(cfg.backend, Backend::External);
            cfg
        }
    };
    Ok(Provider::new(cfg, Lexicon::bundled()))
}

pub fn load_manifest(corpus: &Path) -> CliResult<Manifest> {
    Ok(Manifest::load(&corpus.join("manifest.json"))?)
}

/// `(manifest path, scene)` pairs of one split, in manifest order.
pub fn corpus_scenes(corpus: &Path, manifest: &Manifest, split: SplitArg) -> CliResult<Vec<(String, Scene)>> {
    let want = |s: Split| match split {
        SplitArg::Train => s == Split::Train,
        SplitArg::Test => s == Split::Test,
        SplitArg::All => true,
    };
    let scenes: Vec<(String, Scene)> = load_corpus(corpus, manifest)?
        .into_iter()
        .filter(|(e, _)| want(e.split))
        .map(|(e, s)| (e.path, s))
        .collect();
    if scenes.is_empty() {
        return Err(CliError::data(format!("{}: the requested split has no scenes", corpus.display())));
    }
    Ok(scenes)
}

/// An explicit checkpoint, or the one shipped with the library.
pub fn checkpoint(path: Option<&Path>) -> CliResult<(CsgTl, CheckpointMeta, String)> {
    match path {
        Some(p) => {
            let (m, meta) = load_model(p)?;
            Ok((m, meta, p.display().to_string()))
        }
        None => {
            let (m, meta) = csg_core::model::bundled_model()?;
            Ok((m, meta, "bundled".to_string()))
        }
    }
}

pub fn planner_config(a: &PlannerArgs) -> CliResult<PlannerConfig> {
    let preset = match a.preset {
        PresetArg::SingleRoom => defaults::SINGLE_ROOM,
        PresetArg::MultiRoom => defaults::MULTI_ROOM,
        PresetArg::RealWorld => defaults::REAL_WORLD,
    };
    let mut cfg = PlannerConfig::from_preset(preset);
    cfg.r = a.r;
    cfg.link_threshold = a.threshold;
    if let Some(w) = a.w {
        cfg.w = w;
    }
    match (a.alpha, a.beta) {
        (Some(al), Some(be)) => (cfg.alpha, cfg.beta) = (al, be),
        (Some(al), None) => (cfg.alpha, cfg.beta) = (al, 1.0 - al),
        (None, Some(be)) => (cfg.alpha, cfg.beta) = (1.0 - be, be),
        (None, None) => {}
    }
    cfg.validate()?;
    if !(a.threshold > 0.0 && a.threshold < 1.0) {
        return Err(CliError::usage(format!("--threshold {} outside (0, 1)", a.threshold)));
    }
    check_d_thre(a.d_thre)?;
    Ok(cfg)
}

pub fn check_d_thre(d: f64) -> CliResult<()> {
    if d > 0.0 && d.is_finite() {
        Ok(())
    } else {
        Err(CliError::usage(format!("--d-thre {d} must be positive")))
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    csg_core::io::write_atomic(path, bytes).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes") + "\n";
    write_file(path, text.as_bytes())
}

pub fn default_log(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".log.jsonl");
    PathBuf::from(s)
}
