use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use csg_core::csg::{attach_target, build_csg};
use csg_core::defaults;
use csg_core::generator::{generate_corpus, GeneratorConfig, Split};
use csg_core::model::{
    accuracy, build_samples, label_rate, load_model, save_model, train as train_model, CheckpointMeta, GraphSample,
    StatisticalBaseline, TrainConfig,
};
use csg_core::planner::{astar_distance, rank_candidates, Candidate, PlannerConfig};
use csg_core::scene::{load_scene, pgm, rasterize_occupancy, Cell, OccupancyGrid, Scene};
use csg_core::sim::{localize, metrics, per_scene_metrics, plan_episodes, run_episodes, EpisodeConfig, Metrics, Policy};
use csg_core::Exec;
use serde::Serialize;

use crate::common::{
    apply_jobs, check_d_thre, checkpoint, corpus_scenes, default_log, load_manifest, planner_config, provider, write_file,
    write_json,
};
use crate::error::{CliError, CliResult};
use crate::{DefaultsArgs, EvalArgs, GenerateArgs, PlotArgs, PolicyArg, SearchArgs, SplitArg, TrainArgs};

pub fn generate(a: GenerateArgs) -> CliResult<()> {
    apply_jobs(a.jobs)?;
    let mut cfg = match &a.config {
        Some(p) => GeneratorConfig::load(p)?,
        None => GeneratorConfig::bundled(),
    };
    if a.single_room {
        cfg = cfg.single_room_only();
    }
    cfg.seed = a.seed;
    let manifest = generate_corpus(&cfg, a.n, a.split, &a.out, Exec::default())?;
    let train = manifest.split(Split::Train).count();
    println!(
        "wrote {} scenes ({train} train, {} test) to {}",
        manifest.scenes.len(),
        manifest.scenes.len() - train,
        a.out.display()
    );
    Ok(())
}

fn held_filter(held: &[String]) -> impl Fn(&str) -> bool + Sync + '_ {
    move |c: &str| !held.iter().any(|h| h == c)
}

pub fn train(a: TrainArgs) -> CliResult<()> {
    check_d_thre(a.link.d_thre)?;
    let mut cfg = TrainConfig {
        batch_graphs: a.batch,
        epochs: a.epochs,
        learning_rate: a.lr,
        seed: a.seed,
        link_threshold: a.link.threshold,
        ..TrainConfig::default()
    };
    let (init, first_epoch) = match &a.resume {
        Some(p) => {
            let (m, meta) = load_model(p)?;
            cfg.d_feat = meta.config.d_feat;
            cfg.d_hid = meta.config.d_hid;
            cfg.d_k = meta.config.d_k;
            cfg.d_mlp = meta.config.d_mlp;
            (Some(m), meta.epochs_completed)
        }
        None => (None, 0),
    };
    cfg.validate()?;
    let provider = provider(&a.runtime, cfg.d_feat)?;
    let manifest = load_manifest(&a.corpus)?;
    let scenes = corpus_scenes(&a.corpus, &manifest, SplitArg::Train)?;
    let samples = build_samples(&scenes, &provider, a.link.d_thre, &held_filter(&a.link.held_out), Exec::default())?;

    let log_path = a.log.clone().unwrap_or_else(|| default_log(&a.out));
    let mut log = match (&a.resume, std::fs::read_to_string(&log_path)) {
        (Some(_), Ok(text)) => text,
        _ => String::new(),
    };
    let mut write_err = None;
    let (model, _) = train_model(&samples, &cfg, init, first_epoch, Exec::default(), |e| {
        eprintln!("epoch {:>3}  loss {:.5}  train acc {:.4}", e.epoch, e.mean_loss, e.train_acc);
        log.push_str(&serde_json::to_string(e).expect("log serializes"));
        log.push('\n');
        if let Err(err) = write_file(&log_path, log.as_bytes()) {
            write_err.get_or_insert(err);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    save_model(&a.out, &model, &CheckpointMeta::new(cfg.clone(), first_epoch + cfg.epochs))?;
    println!("wrote {} after epoch {}", a.out.display(), first_epoch + cfg.epochs);
    Ok(())
}

#[derive(Serialize)]
struct LinkReport {
    csgtl_acc: f64,
    statistical_acc: f64,
    /// Accuracy of always answering "linked".
    all_positive_acc: f64,
    threshold: f64,
    d_thre: f64,
    split: String,
    held_out: Vec<String>,
    scenes: usize,
    samples: usize,
    pairs: usize,
    checkpoint: String,
}

fn scene_count(samples: &[GraphSample]) -> usize {
    samples.iter().map(|s| s.scene_id.as_str()).collect::<HashSet<_>>().len()
}

pub fn eval_link(a: EvalArgs) -> CliResult<()> {
    check_d_thre(a.link.d_thre)?;
    if !(a.link.threshold > 0.0 && a.link.threshold < 1.0) {
        return Err(CliError::usage(format!("--threshold {} outside (0, 1)", a.link.threshold)));
    }
    let (model, meta, source) = checkpoint(a.checkpoint.as_deref())?;
    let provider = provider(&a.runtime, meta.config.d_feat)?;
    let manifest = load_manifest(&a.corpus)?;
    let held = &a.link.held_out;
    let train_scenes = corpus_scenes(&a.corpus, &manifest, SplitArg::Train)?;
    let train = build_samples(&train_scenes, &provider, a.link.d_thre, &held_filter(held), Exec::default())?;
    let baseline = StatisticalBaseline::fit(&train);

    let eval_scenes = corpus_scenes(&a.corpus, &manifest, a.split)?;
    let only_held = |c: &str| held.is_empty() || held.iter().any(|h| h == c);
    let eval = build_samples(&eval_scenes, &provider, a.link.d_thre, &only_held, Exec::default())?;
    if eval.is_empty() {
        return Err(CliError::data("no evaluation samples in the requested split"));
    }
    let preds = Exec::default()
        .map(&eval, |s| model.predict(&s.input))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let base: Vec<Vec<f64>> = eval.iter().map(|s| baseline.predict(s)).collect();
    let report = LinkReport {
        csgtl_acc: accuracy(&eval, &preds, a.link.threshold)?,
        statistical_acc: accuracy(&eval, &base, 0.5)?,
        all_positive_acc: label_rate(&eval)?,
        threshold: a.link.threshold,
        d_thre: a.link.d_thre,
        split: format!("{:?}", a.split).to_lowercase(),
        held_out: held.clone(),
        scenes: scene_count(&eval),
        samples: eval.len(),
        pairs: eval.iter().map(GraphSample::pairs).sum(),
        checkpoint: source,
    };
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EpisodeRow {
    episode: usize,
    scene: String,
    target: String,
    success: bool,
    actions_taken: usize,
    path_length: f64,
    shortest_length: f64,
    termination: csg_core::sim::Termination,
}

#[derive(Serialize)]
struct SceneRow {
    scene: String,
    #[serde(flatten)]
    metrics: Metrics,
}

#[derive(Serialize)]
struct SearchReport {
    policy: String,
    #[serde(flatten)]
    metrics: Metrics,
    max_steps: usize,
    seed: u64,
    d_thre: f64,
    planner: PlannerConfig,
    checkpoint: Option<String>,
    per_scene: Vec<SceneRow>,
    results: Vec<EpisodeRow>,
}

pub fn search(a: SearchArgs) -> CliResult<()> {
    let pcfg = planner_config(&a.planner)?;
    if a.max_steps == 0 || a.episodes == 0 {
        return Err(CliError::usage("--episodes and --max-steps must be at least 1"));
    }
    let scenes: Vec<(String, Scene)> = match (&a.scene, &a.corpus) {
        (Some(p), _) => vec![(file_label(p), load_scene(p)?)],
        (None, Some(c)) => corpus_scenes(c, &load_manifest(c)?, a.split)?,
        (None, None) => return Err(CliError::usage("one of --scene or --corpus is required")),
    };
    let policy = match a.policy {
        PolicyArg::CsgOs => Policy::CsgOs,
        PolicyArg::Random => Policy::Random,
    };
    let model = match policy {
        Policy::CsgOs => Some(checkpoint(a.checkpoint.as_deref())?),
        Policy::Random => None,
    };
    let d_feat = model.as_ref().map_or(defaults::D_FEAT, |m| m.1.config.d_feat);
    let provider = provider(&a.runtime, d_feat)?;
    let base = EpisodeConfig {
        max_steps: a.max_steps,
        planner: pcfg,
        d_thre: a.planner.d_thre,
        policy,
        ..EpisodeConfig::default()
    };
    base.validate()?;

    let only: Vec<Scene> = scenes.iter().map(|(_, s)| s.clone()).collect();
    let plan = plan_episodes(&only, a.episodes, a.seed, base.resolution, &base.detector, a.min_start)?;
    let jobs: Vec<_> = plan
        .iter()
        .map(|p| (&only[p.scene], p.spec.clone(), EpisodeConfig { seed: p.seed, ..base.clone() }))
        .collect();
    let episodes = run_episodes(&jobs, model.as_ref().map(|m| &m.0), &provider, Exec::default())
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::with_capacity(episodes.len());
    let mut labelled = Vec::with_capacity(episodes.len());
    for (i, (p, ep)) in plan.iter().zip(&episodes).enumerate() {
        write_file(&a.out.join(format!("traces/episode_{i:04}.jsonl")), ep.trace_jsonl().as_bytes())?;
        let scene = scenes[p.scene].0.clone();
        labelled.push((scene.clone(), ep.result.clone()));
        rows.push(EpisodeRow {
            episode: i,
            scene,
            target: p.spec.target_id.clone(),
            success: ep.result.success,
            actions_taken: ep.result.actions_taken,
            path_length: ep.result.path_length,
            shortest_length: ep.result.shortest_length,
            termination: ep.result.termination,
        });
    }
    let results: Vec<_> = episodes.iter().map(|e| e.result.clone()).collect();
    let overall = metrics(&results)?;
    let report = SearchReport {
        policy: format!("{policy:?}"),
        metrics: overall,
        max_steps: a.max_steps,
        seed: a.seed,
        d_thre: a.planner.d_thre,
        planner: pcfg,
        checkpoint: model.map(|m| m.2),
        per_scene: per_scene_metrics(&labelled)?
            .into_iter()
            .map(|(scene, metrics)| SceneRow { scene, metrics })
            .collect(),
        results: rows,
    };
    write_json(&a.out.join("metrics.json"), &report)?;
    println!(
        "{} episodes  SR {:.3}  SPL {:.3}  -> {}",
        overall.episodes,
        overall.sr,
        overall.spl,
        a.out.display()
    );
    Ok(())
}

fn file_label(p: &Path) -> String {
    p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned())
}

/// Grey levels of the overlay image.
pub mod overlay {
    pub const BLOCKED: u8 = 0;
    pub const ROBOT: u8 = 100;
    pub const PATH: u8 = 128;
    /// Free cells go from 255 (no likelihood) down to 160 (likelihood 1).
    pub const FREE_SPAN: f64 = 95.0;
    /// Candidate `k` (1-based) is drawn at `16·k`.
    pub const fn candidate(rank: usize) -> u8 {
        (16 * rank) as u8
    }
}

fn start_cell(grid: &OccupancyGrid, start: Option<&[f64]>, scene: &Scene) -> CliResult<Cell> {
    match start {
        Some(&[x, y]) => {
            let c = grid
                .cell_of(x, y)
                .ok_or_else(|| CliError::usage(format!("--start {x},{y} is outside the map")))?;
            if grid.is_blocked(c) {
                return Err(CliError::usage(format!("--start {x},{y} is on a blocked cell")));
            }
            Ok(c)
        }
        Some(_) => Err(CliError::usage("--start takes two numbers: x,y")),
        None => {
            let (cx, cy) = scene.extent.center();
            grid.nearest_free(cx, cy, |_| true)
                .ok_or_else(|| CliError::data("the scene has no free cell"))
        }
    }
}

fn overlay_image(grid: &OccupancyGrid, likelihood: &[f64], ranked: &[Candidate], path: &[Cell], robot: Cell) -> String {
    let mut px: Vec<u8> = grid
        .cells()
        .zip(likelihood)
        .map(|(c, &v)| {
            if grid.is_blocked(c) {
                overlay::BLOCKED
            } else {
                (255.0 - (v.clamp(0.0, 1.0) * overlay::FREE_SPAN).round()) as u8
            }
        })
        .collect();
    for &c in path {
        px[grid.index(c)] = overlay::PATH;
    }
    // Lower ranks are drawn last so they win where markers coincide.
    for (k, cand) in ranked.iter().enumerate().take(3).rev() {
        px[grid.index(cand.center)] = overlay::candidate(k + 1);
    }
    px[grid.index(robot)] = overlay::ROBOT;
    pgm(grid.width, grid.height, &px)
}

pub fn plot(a: PlotArgs) -> CliResult<()> {
    let pcfg = planner_config(&a.planner)?;
    let scene = load_scene(&a.scene)?;
    let (model, meta, _) = checkpoint(a.checkpoint.as_deref())?;
    let provider = provider(&a.runtime, meta.config.d_feat)?;
    let query = provider.parse_target_query(&a.target)?;
    let grid = rasterize_occupancy(&scene, defaults::GRID_RESOLUTION)?;
    let robot = start_cell(&grid, a.start.as_deref(), &scene)?;

    let graph = attach_target(&build_csg(&scene, a.planner.d_thre, &provider)?, &query, &provider)?;
    let loc = localize(&graph, &model, &grid, &pcfg)?;
    let ranked = match rank_candidates(&loc.regions, robot, &grid, &pcfg, &HashSet::new()) {
        Ok(r) => r,
        Err(csg_core::planner::PlannerError::NoCandidates) => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    let path = match ranked.first() {
        Some(top) => astar_distance(&grid, robot, top.center)?.1,
        None => Vec::new(),
    };

    let mut cands = String::from("rank,region,x,y,weight,distance,cost\n");
    for (k, c) in ranked.iter().enumerate() {
        let _ = writeln!(
            cands,
            "{},{},{},{},{},{},{}",
            k + 1,
            c.region,
            c.center_xy.0,
            c.center_xy.1,
            c.weight,
            c.distance,
            c.cost
        );
    }
    let mut scores = String::from("x,y,probability\n");
    for ((x, y), p) in &loc.scored {
        let _ = writeln!(scores, "{x},{y},{p}");
    }
    write_file(&a.out.join("likelihood.pgm"), loc.map.to_pgm().as_bytes())?;
    write_file(&a.out.join("likelihood.csv"), loc.map.to_csv().as_bytes())?;
    write_file(&a.out.join("occupancy.pgm"), grid.to_pgm().as_bytes())?;
    write_file(&a.out.join("candidates.csv"), cands.as_bytes())?;
    write_file(&a.out.join("link_scores.csv"), scores.as_bytes())?;
    let over = overlay_image(&grid, &loc.map.values, &ranked, &path, robot);
    write_file(&a.out.join("overlay.pgm"), over.as_bytes())?;
    println!(
        "target {:?}: {} correlated objects, {} candidate regions -> {}",
        query.category,
        loc.scored.iter().filter(|s| s.1 > pcfg.link_threshold).count(),
        ranked.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct DefaultEntry {
    name: &'static str,
    value: serde_json::Value,
    unit: &'static str,
    paper: bool,
}

fn entry(name: &'static str, value: impl Into<serde_json::Value>, unit: &'static str, paper: bool) -> DefaultEntry {
    DefaultEntry {
        name,
        value: value.into(),
        unit,
        paper,
    }
}

fn default_entries() -> Vec<DefaultEntry> {
    use defaults::*;
    vec![
        entry("d_thre", D_THRE, "m", true),
        entry("link_threshold", LINK_THRESHOLD, "", true),
        entry("batch", BATCH_GRAPHS, "graphs", true),
        entry("step", STEP_METERS, "m", true),
        entry("turn", TURN_DEGREES, "deg", true),
        entry("success_radius", SUCCESS_RADIUS, "m", true),
        entry("single_room.w", SINGLE_ROOM.w, "", true),
        entry("single_room.alpha", SINGLE_ROOM.alpha, "", true),
        entry("single_room.beta", SINGLE_ROOM.beta, "", true),
        entry("multi_room.w", MULTI_ROOM.w, "", true),
        entry("multi_room.alpha", MULTI_ROOM.alpha, "", true),
        entry("multi_room.beta", MULTI_ROOM.beta, "", true),
        entry("real_world.w", REAL_WORLD.w, "", true),
        entry("real_world.alpha", REAL_WORLD.alpha, "", true),
        entry("real_world.beta", REAL_WORLD.beta, "", true),
        entry("r", SPREAD_RADIUS, "m", false),
        entry("resolution", GRID_RESOLUTION, "m", false),
        entry("lr", LEARNING_RATE, "", false),
        entry("epochs", EPOCHS, "", false),
        entry("d_feat", D_FEAT, "", false),
        entry("d_hid", D_HID, "", false),
        entry("d_k", D_K, "", false),
        entry("d_mlp", D_MLP, "", false),
        entry("max_steps", MAX_STEPS, "actions", false),
        entry("fov", FOV_DEGREES, "deg", false),
        entry("detect_range", DETECT_RANGE, "m", false),
        entry("seed", SEED, "", false),
    ]
}

pub fn print_defaults(a: DefaultsArgs) -> CliResult<()> {
    let entries = default_entries();
    if a.json {
        println!("{}", serde_json::to_string_pretty(&entries).expect("defaults serialize"));
        return Ok(());
    }
    for e in entries {
        let value = format!("{}{}", e.value, if e.unit.is_empty() { String::new() } else { format!(" {}", e.unit) });
        let mark = if e.paper { "[paper-default]" } else { "" };
        println!("{:<20} {:<12} {mark}", e.name, value);
    }
    Ok(())
}
