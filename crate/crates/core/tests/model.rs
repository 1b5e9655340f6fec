use csg_core::csg::{attach_target, build_csg};
use csg_core::generator::{generate_split, GeneratorConfig};
use csg_core::knowledge::{Provider, TargetQuery};
use csg_core::model::{
    accuracy, bce_value, build_samples, evaluate_accuracy, graph_input, label_rate, load_model, save_model, train, CheckpointMeta,
    CsgTl, GraphInput, GraphSample, ModelConfig, StatisticalBaseline, TrainConfig,
};
use csg_core::scene::{Extent, Mobility, Pose2H, Scene, SceneObject};
use csg_core::Exec;
use csg_tensor::{finite_difference_check, GradBuffer, Optimizer, Tape, Tensor};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_cfg() -> ModelConfig {
    ModelConfig {
        d_feat: 8,
        d_hid: 6,
        d_k: 4,
        d_mlp: 5,
    }
}

fn provider(d: usize) -> Provider {
    Provider::new(
        csg_core::knowledge::ProviderConfig {
            d_feat: d,
            ..Default::default()
        },
        csg_core::knowledge::Lexicon::bundled(),
    )
}

fn stationary(id: &str, cat: &str, x: f64, y: f64) -> SceneObject {
    SceneObject {
        id: id.into(),
        category: cat.into(),
        mobility: Mobility::Stationary,
        pose: Pose2H::new(x, y, 0.4),
        footprint_radius: 0.3,
    }
}

fn four_objects() -> Vec<SceneObject> {
    vec![
        stationary("t", "table", 2.0, 2.0),
        stationary("c1", "chair", 2.7, 2.0),
        stationary("d", "desk", 5.0, 5.0),
        stationary("s", "sofa", 8.0, 2.0),
    ]
}

fn scene_of(objects: Vec<SceneObject>) -> Scene {
    Scene {
        objects,
        receptacles: vec![],
        extent: Extent::new(0.0, 0.0, 10.0, 10.0),
        walls: vec![],
        resolution_hint: 0.25,
    }
}

fn five_node_input(objects: Vec<SceneObject>, p: &Provider) -> GraphInput {
    let g = build_csg(&scene_of(objects), 1.0, p).unwrap();
    graph_input(&attach_target(&g, &TargetQuery::category("cup"), p).unwrap()).unwrap()
}

// Straight-line re-implementation over nested vectors.

type M = Vec<Vec<f64>>;

fn param(m: &CsgTl, name: &str) -> M {
    let t = m.params.get(m.params.find(name).unwrap());
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn mm(a: &M, b: &M) -> M {
    a.iter()
        .map(|row| (0..b[0].len()).map(|c| row.iter().zip(b).map(|(x, br)| x * br[c]).sum()).collect())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gat(x: &M, w: &M, a: &M, nbrs: &[Vec<usize>]) -> M {
    let h = mm(x, w);
    let d = h[0].len();
    let a: Vec<f64> = a.iter().map(|r| r[0]).collect();
    (0..h.len())
        .map(|i| {
            let scores: Vec<f64> = nbrs[i]
                .iter()
                .map(|&j| {
                    let s = dot(&a[..d], &h[i]) + dot(&a[d..], &h[j]);
                    if s > 0.0 {
                        s
                    } else {
                        0.2 * s
                    }
                })
                .collect();
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let ex: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
            let z: f64 = ex.iter().sum();
            let mut out = vec![0.0; d];
            for (&j, e) in nbrs[i].iter().zip(&ex) {
                for c in 0..d {
                    out[c] += e / z * h[j][c];
                }
            }
            out
        })
        .collect()
}

fn oracle_forward(m: &CsgTl, input: &GraphInput) -> Vec<f64> {
    let n = input.n;
    let x: M = (0..n).map(|r| input.features.row(r).to_vec()).collect();
    let mut with_self: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut out_edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (row, &(i, j)) in input.directed.iter().enumerate() {
        with_self[i].push(j);
        out_edges[i].push((j, row));
    }
    let h1: M = gat(&x, &param(m, "gat1.w"), &param(m, "gat1.a"), &with_self)
        .into_iter()
        .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
        .collect();
    let v2 = gat(&h1, &param(m, "gat2.w"), &param(m, "gat2.a"), &with_self);
    let (q, k, val) = (mm(&v2, &param(m, "attn.w_q")), mm(&v2, &param(m, "attn.w_k")), mm(&v2, &param(m, "attn.w_v")));
    let dk = q[0].len();
    let we = param(m, "attn.w_e");
    let fused: M = (0..n)
        .map(|i| {
            let mut vstar = vec![0.0; dk];
            if !out_edges[i].is_empty() {
                let alphas: Vec<f64> = out_edges[i]
                    .iter()
                    .map(|&(j, row)| {
                        let e = input.edge_features.as_ref().unwrap().row(row).to_vec();
                        let ep = &mm(&vec![e], &we)[0];
                        let key: Vec<f64> = k[j].iter().zip(ep).map(|(a, b)| a + b).collect();
                        (dot(&q[i], &key) / (dk as f64).sqrt()).max(0.0)
                    })
                    .collect();
                let total: f64 = alphas.iter().sum();
                for (&(j, _), a) in out_edges[i].iter().zip(&alphas) {
                    let w = if total > 1e-8 { a / total } else { 1.0 / alphas.len() as f64 };
                    for c in 0..dk {
                        vstar[c] += w * val[j][c];
                    }
                }
            }
            vstar.extend_from_slice(&x[i]);
            vstar
        })
        .collect();
    let (w1, b1, w2, b2) = (param(m, "head.w1"), param(m, "head.b1"), param(m, "head.w2"), param(m, "head.b2"));
    input
        .predict
        .iter()
        .map(|&i| {
            let mut z = fused[input.target].clone();
            z.extend_from_slice(&fused[i]);
            let hidden: Vec<f64> = mm(&vec![z], &w1)[0].iter().zip(&b1[0]).map(|(a, b)| (a + b).max(0.0)).collect();
            let logit = dot(&hidden, &w2.iter().map(|r| r[0]).collect::<Vec<_>>()) + b2[0][0];
            1.0 / (1.0 + (-logit).exp())
        })
        .collect()
}

#[test]
fn forward_matches_straight_line_oracle() {
    let p = provider(8);
    let input = five_node_input(four_objects(), &p);
    assert_eq!(input.n, 5);
    let m = CsgTl::init(small_cfg(), 0).unwrap();
    let got = m.predict(&input).unwrap();
    let want = oracle_forward(&m, &input);
    assert_eq!(got.len(), 4);
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12, "{got:?} vs {want:?}");
    }
}

#[test]
fn forward_matches_oracle_at_default_width() {
    let p = Provider::offline();
    let input = five_node_input(four_objects(), &p);
    let m = CsgTl::init(ModelConfig::default(), 3).unwrap();
    for (a, b) in m.predict(&input).unwrap().iter().zip(&oracle_forward(&m, &input)) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn zero_head_gives_one_half() {
    let p = provider(8);
    let input = five_node_input(four_objects(), &p);
    let mut m = CsgTl::init(small_cfg(), 0).unwrap();
    for name in ["head.w1", "head.b1", "head.w2", "head.b2"] {
        let id = m.params.find(name).unwrap();
        m.params.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    assert!(m.predict(&input).unwrap().iter().all(|&v| v == 0.5));
    assert!((bce_value(&[0.5, 0.5, 0.5], &[1.0, 0.0, 1.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn bce_examples() {
    let want = -(0.9f64.ln() + 0.8f64.ln()) / 2.0;
    assert!((bce_value(&[0.9, 0.2], &[1.0, 0.0]).unwrap() - want).abs() < 1e-12);
    assert!((want - 0.1643).abs() < 1e-4);
    assert!(bce_value(&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0]).unwrap() <= 3e-6);
    assert!(bce_value(&[0.5], &[1.0, 0.0]).is_err());
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let p = provider(8);
    let input = five_node_input(four_objects(), &p);
    let labels = [1.0, 1.0, 0.0, 0.0];
    let m = CsgTl::init(small_cfg(), 0).unwrap();
    let report = finite_difference_check(&m.params, 1e-5, None, |tape: &mut Tape, vars| {
        let pr = m.forward_on_tape(tape, vars, &input).map_err(|e| match e {
            csg_core::model::ModelError::Tensor(t) => t,
            other => panic!("{other}"),
        })?;
        let loss = csg_core::model::bce_loss(tape, pr, &labels).unwrap();
        Ok(loss)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
    assert_eq!(report.checked, m.num_parameters());
}

#[test]
fn relabeling_nodes_permutes_predictions() {
    let p = provider(8);
    let m = CsgTl::init(small_cfg(), 5).unwrap();
    let objs = four_objects();
    let mut rev = objs.clone();
    rev.reverse();
    let a = m.predict(&five_node_input(objs.clone(), &p)).unwrap();
    let b = m.predict(&five_node_input(rev, &p)).unwrap();
    for (i, pa) in a.iter().enumerate() {
        let pb = b[objs.len() - 1 - i];
        assert!((pa - pb).abs() < 1e-12);
    }
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let p = Provider::offline();
    let input = five_node_input(four_objects(), &p);
    let m = CsgTl::init(ModelConfig::default(), 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_model(&path, &m, &CheckpointMeta::new(TrainConfig::default(), 3)).unwrap();
    let (back, meta) = load_model(&path).unwrap();
    assert_eq!(meta.epochs_completed, 3);
    assert_eq!(back.predict(&input).unwrap(), m.predict(&input).unwrap());
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let m = CsgTl::init(small_cfg(), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut cfg = TrainConfig::default();
    cfg.d_feat = 8;
    cfg.d_hid = 6;
    cfg.d_k = 4;
    cfg.d_mlp = 5;
    save_model(&path, &m, &CheckpointMeta::new(cfg, 1)).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 5);
    std::fs::write(&path, bytes).unwrap();
    assert!(load_model(&path).is_err());
}

fn tiny_corpus(n: usize, d: usize) -> Vec<GraphSample> {
    let mut cfg = GeneratorConfig::default();
    cfg.seed = 99;
    let (scenes, manifest) = generate_split(&cfg, n, 0.5, Exec::Sequential).unwrap();
    let named: Vec<(String, Scene)> = scenes
        .into_iter()
        .zip(&manifest.scenes)
        .map(|((s, _), e)| (e.path.clone(), s))
        .collect();
    build_samples(&named, &provider(d), 1.0, &|_: &str| true, Exec::Sequential).unwrap()
}

fn small_train_cfg() -> TrainConfig {
    TrainConfig {
        d_feat: 8,
        d_hid: 6,
        d_k: 4,
        d_mlp: 5,
        epochs: 1,
        ..TrainConfig::default()
    }
}

/// Replays the trainer by hand: same init, same shuffle, one optimizer step
/// per batch.
fn manual_epoch(samples: &[GraphSample], cfg: &TrainConfig) -> (CsgTl, u64) {
    let mut m = CsgTl::init(cfg.model_config(), cfg.seed).unwrap();
    let mut opt = Optimizer::adam(cfg.learning_rate);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    for batch in order.chunks(cfg.batch_graphs) {
        let mut buf = GradBuffer::zeros_like(&m.params);
        for &i in batch {
            let (_, _, g) = m.loss_and_grads(&samples[i].input, &samples[i].labels).unwrap();
            buf.add(&g);
        }
        opt.step(&mut m.params, &buf.mean()).unwrap();
    }
    (m, opt.steps())
}

#[test]
fn one_graph_one_epoch_is_one_step() {
    let samples = tiny_corpus(4, 8);
    let one = &samples[..1];
    let cfg = small_train_cfg();
    let (trained, logs) = train(one, &cfg, None, 0, Exec::Sequential, |_| {}).unwrap();
    let (manual, steps) = manual_epoch(one, &cfg);
    assert_eq!(steps, 1);
    assert_eq!(logs.len(), 1);
    assert_eq!(trained.params, manual.params);
}

#[test]
fn sixty_four_graphs_batch_32_is_two_steps() {
    let mut samples = tiny_corpus(40, 8);
    assert!(samples.len() >= 64, "corpus too small: {}", samples.len());
    samples.truncate(64);
    let cfg = small_train_cfg();
    let (trained, _) = train(&samples, &cfg, None, 0, Exec::Sequential, |_| {}).unwrap();
    let (manual, steps) = manual_epoch(&samples, &cfg);
    assert_eq!(steps, 2);
    assert_eq!(trained.params, manual.params);
}

#[test]
fn training_is_independent_of_executor_and_resumable() {
    let samples = tiny_corpus(30, 8);
    let mut cfg = small_train_cfg();
    cfg.epochs = 3;
    let (seq, seq_logs) = train(&samples, &cfg, None, 0, Exec::Sequential, |_| {}).unwrap();
    let (par, par_logs) = train(&samples, &cfg, None, 0, Exec::default(), |_| {}).unwrap();
    assert_eq!(seq.params, par.params);
    assert_eq!(seq_logs, par_logs);
    assert!(seq_logs.last().unwrap().mean_loss < seq_logs[0].mean_loss);

    cfg.epochs = 1;
    let (first, _) = train(&samples, &cfg, None, 0, Exec::Sequential, |_| {}).unwrap();
    cfg.epochs = 2;
    let (_, resumed) = train(&samples, &cfg, Some(first), 1, Exec::Sequential, |_| {}).unwrap();
    assert_eq!(resumed.iter().map(|l| l.epoch).collect::<Vec<_>>(), vec![2, 3]);
}

#[test]
fn empty_corpus_is_an_error() {
    assert!(train(&[], &small_train_cfg(), None, 0, Exec::Sequential, |_| {}).is_err());
}

#[test]
fn accuracy_examples() {
    let mut samples = tiny_corpus(6, 8);
    samples.truncate(2);
    samples[1].scene_id = "other".into();
    samples[0].scene_id = "first".into();
    // First scene fully right, second half right.
    let mut preds: Vec<Vec<f64>> = samples.iter().map(|s| s.labels.clone()).collect();
    let n = preds[1].len();
    let flip = n / 2;
    for v in preds[1].iter_mut().take(flip) {
        *v = 1.0 - *v;
    }
    let want = (1.0 + (n - flip) as f64 / n as f64) / 2.0;
    assert!((accuracy(&samples, &preds, 0.5).unwrap() - want).abs() < 1e-12);

    let all = tiny_corpus(10, 8);
    let half: Vec<Vec<f64>> = all.iter().map(|s| vec![0.5; s.labels.len()]).collect();
    assert!((accuracy(&all, &half, 0.5).unwrap() - label_rate(&all).unwrap()).abs() < 1e-12);
}

#[test]
fn baseline_examples() {
    let mut samples = tiny_corpus(4, 8);
    samples.truncate(1);
    let s = samples[0].clone();
    let mut four = Vec::new();
    for k in 0..4 {
        let mut c = s.clone();
        c.node_categories = vec!["table".into(); c.labels.len()];
        c.target_category = "cup".into();
        c.labels = vec![if k < 3 { 1.0 } else { 0.0 }; c.labels.len()];
        four.push(c);
    }
    let b = StatisticalBaseline::fit(&four);
    assert!(b.predicts_link("cup", "table"));
    assert!((b.frequency("cup", "table").unwrap() - 0.75).abs() < 1e-12);
    assert!(!b.predicts_link("cup", "sofa"));
    assert_eq!(b.frequency("cup", "sofa"), None);
}

#[test]
fn model_trains_on_generated_data_and_output_stays_in_range() {
    let samples = tiny_corpus(40, 8);
    let (train_s, test_s) = samples.split_at(samples.len() * 3 / 4);
    let mut cfg = small_train_cfg();
    cfg.epochs = 5;
    cfg.learning_rate = 1e-2;
    let (m, logs) = train(train_s, &cfg, None, 0, Exec::default(), |_| {}).unwrap();
    assert!(logs.last().unwrap().mean_loss < logs[0].mean_loss);
    let acc = evaluate_accuracy(test_s, &m, 0.5, Exec::default()).unwrap();
    assert!((0.0..=1.0).contains(&acc));
    for s in test_s {
        for p in m.predict(&s.input).unwrap() {
            assert!(p > 0.0 && p < 1.0);
        }
    }
}

#[test]
fn baseline_table_tracks_generator_priors() {
    let cfg = GeneratorConfig::default();
    let (scenes, manifest) = generate_split(&cfg, 500, 0.8, Exec::default()).unwrap();
    let all: Vec<(String, Scene)> = scenes
        .into_iter()
        .zip(&manifest.scenes)
        .map(|((s, _), e)| (e.path.clone(), s))
        .collect();
    let samples = build_samples(&all, &Provider::offline(), 1.0, &|_: &str| true, Exec::default()).unwrap();
    let b = StatisticalBaseline::fit(&samples);
    let oracle = csg_core::generator::oracle_cooccurrence(&cfg, 20_000, Exec::default()).unwrap();
    let mut compared = 0;
    for o in &oracle {
        // Rare pairs carry a sampling error well above the tolerance.
        if b.observations(&o.movable, &o.stationary) < 150 {
            continue;
        }
        let f = b.frequency(&o.movable, &o.stationary).unwrap();
        assert!((f - o.probability).abs() <= 0.05, "{} / {}: {f} vs {}", o.movable, o.stationary, o.probability);
        compared += 1;
    }
    assert!(compared >= 15, "only {compared} pairs compared");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn raising_the_threshold_never_adds_positives(seed in 0u64..1000, lo in 0.05f64..0.95, bump in 0.0f64..0.5) {
        let p = provider(8);
        let input = five_node_input(four_objects(), &p);
        let m = CsgTl::init(small_cfg(), seed).unwrap();
        let pr = m.predict(&input).unwrap();
        let hi = (lo + bump).min(0.99);
        let count = |t: f64| pr.iter().filter(|&&v| v >= t).count();
        prop_assert!(count(hi) <= count(lo));
        prop_assert!(pr.iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn tensor_scalar_sanity() {
    let t = Tensor::scalar(2.0);
    assert_eq!(t.item(), Some(2.0));
}
