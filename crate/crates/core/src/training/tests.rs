use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::extraction::KnowledgeBase;
use crate::kg::KnowledgeGraph;
use crate::numerics::{gradcheck, Tape, Tensor};
use crate::params::ParamStore;
use crate::sample::MrsSample;
use crate::text::ScorerSnapshot;

const TOY_KG: &str = "Paraphrase\tdog\tpuppy\nParaphrase\tcar\tautomobile\nRelatedTo\tdog\tbone\nRelatedTo\tcar\troad\nParaphrase\ttea\tchai\n";

fn toy_kg() -> KnowledgeGraph {
    KnowledgeGraph::parse_edge_list(TOY_KG, "toy").unwrap().0
}

/// Eight samples, four candidates each; the true response mentions the
/// persona's concept.
pub(crate) fn toy_samples() -> Vec<MrsSample> {
    let topics = ["dog", "car", "tea", "bone", "road", "puppy", "chai", "automobile"];
    (0..8)
        .map(|i| {
            let t = topics[i];
            let mut candidates = vec![format!("my {t} is nice")];
            for k in 1..4 {
                candidates.push(format!("my {} is nice", topics[(i + k * 3) % 8]));
            }
            let mut labels = vec![1, 0, 0, 0];
            // put the true response at varying positions
            candidates.rotate_left(i % 4);
            labels.rotate_left(i % 4);
            MrsSample {
                persona: vec![format!("i love {t}")],
                context: vec!["hello".into(), "tell me about yourself".into()],
                candidates,
                labels,
            }
        })
        .collect()
}

fn small_config(variant: Variant) -> TrainConfig {
    let mut c = TrainConfig {
        variant,
        batch_size: 8,
        epochs: 1,
        seed: 3,
        ..TrainConfig::default()
    };
    c.encoder.dim = 8;
    c.encoder.heads = 2;
    c.encoder.layers = 1;
    c.encoder.ffn_dim = 16;
    c.extraction.max_seq_len = 48;
    c.extraction.max_nodes = 6;
    c.extraction.hops = 1;
    c.gnn.layers = 2;
    c.gnn.hidden = 6;
    c.gnn.relation_dim = 3;
    c.gnn.attention_dim = 4;
    c
}

fn tape_scalar(f: impl FnOnce(&mut Tape) -> crate::Result<crate::numerics::Var>) -> f64 {
    let mut t = Tape::new();
    let v = f(&mut t).unwrap();
    t.scalar(v)
}

#[test]
fn cosine_loss_cases() {
    let h = vec![0.3, -1.2, 2.0];
    let neg: Vec<f64> = h.iter().map(|v| -v).collect();
    let run = |a: Vec<f64>, b: Vec<f64>| {
        tape_scalar(|t| {
            let u = t.constant_matrix(1, 3, a)?;
            let v = t.constant_matrix(1, 3, b)?;
            cosine_loss(t, u, v, 1e-8)
        })
    };
    assert!((run(h.clone(), h.clone()) + 1.0).abs() < 1e-15);
    assert!((run(h.clone(), neg) - 1.0).abs() < 1e-15);
    assert_eq!(run(vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0]), 0.0);
    // zero vector stays finite thanks to the epsilon floor
    assert_eq!(run(vec![0.0; 3], h), 0.0);
}

#[test]
fn bce_cases() {
    let run = |y: u8, p: f64| {
        tape_scalar(|t| {
            let v = t.constant_matrix(1, 1, vec![p])?;
            bce_loss(t, y, v)
        })
    };
    assert!((run(0, 0.5) - std::f64::consts::LN_2).abs() < 1e-12);
    assert!((run(1, 0.25) - 4f64.ln()).abs() < 1e-12);
    assert!(run(1, 1.0 - 1e-7) < 2e-7);
    assert!(run(1, 0.0).is_finite() && run(0, 1.0).is_finite());
    assert_eq!(bce(0, 0.5), run(0, 0.5));
}

#[test]
fn combined_loss_cases() {
    let run = |alpha: f64, b: f64, c: f64| {
        tape_scalar(|t| {
            let lb = t.constant_matrix(1, 1, vec![b])?;
            let lc = t.constant_matrix(1, 1, vec![c])?;
            combined_loss(t, &LossWeights { alpha, epsilon: 1e-8 }, lb, lc)
        })
    };
    assert_eq!(run(1.0, 0.8, -0.6), 0.8);
    assert_eq!(run(0.0, 0.8, -0.6), -0.6);
    assert!((run(0.5, 0.8, -0.6) - 0.1).abs() < 1e-15);
}

#[test]
fn loss_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let u = Tensor::uniform(&[1, 5], 1.0, &mut rng);
        let v = Tensor::uniform(&[1, 5], 1.0, &mut rng);
        let p = Tensor::matrix(1, 1, vec![rng.gen_range(0.05..0.95)]).unwrap();
        let alpha = rng.gen_range(0.0..1.0);
        let y = rng.gen_range(0..2u8);
        let r = gradcheck::check(&[u, v, p], 1e-6, 1e-4, 1e-6, |t, x| {
            let c = cosine_loss(t, x[0], x[1], 1e-8)?;
            let b = bce_loss(t, y, x[2])?;
            combined_loss(t, &LossWeights { alpha, epsilon: 1e-8 }, b, c)
        })
        .unwrap();
        assert!(r.passed(), "{r:?}");
    }
}

#[test]
fn adamw_step_one_closed_form() {
    let x0 = vec![0.5, -2.0, 3.0];
    for wd in [0.0, 0.1] {
        let mut store = ParamStore::new(9);
        let id = store.add("x", Tensor::matrix(1, 3, x0.clone()).unwrap());
        // f(x) = 0.5 |x|^2, so the gradient is x
        store.get_mut(id).accumulate_grad(&x0).unwrap();
        let opt = AdamW::new(0.01, wd);
        let mut st = AdamState::default();
        opt.step(&mut store, &mut st).unwrap();
        for (j, &x) in x0.iter().enumerate() {
            let want = x - 0.01 * (x / (x.abs() + 1e-8) + wd * x);
            assert!((store.get(id).data()[j] - want).abs() < 1e-15);
        }
        assert_eq!(st.step, 1);
    }
}

fn params_of(m: &SelectionModel) -> Vec<f64> {
    let mut out: Vec<f64> = m.encoder.params().iter().flat_map(|(_, t)| t.data().to_vec()).collect();
    if let Some(g) = &m.gnn {
        out.extend(g.params().iter().flat_map(|(_, t)| t.data().to_vec()));
    }
    out
}

fn data(samples: &[MrsSample], kg: &KnowledgeGraph) -> TrainData<'static> {
    // leak is fine in tests and keeps the helper signature simple
    TrainData {
        train: Box::leak(samples.to_vec().into_boxed_slice()),
        dev: None,
        kg: Some(Box::leak(Box::new(kg.clone()))),
    }
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let kg = toy_kg();
    let samples = toy_samples();
    for variant in [Variant::PlmOnly, Variant::Sinlg, Variant::S3] {
        let mut cfg = small_config(variant);
        cfg.learning_rate = 0.0;
        let out = train(&cfg, data(&samples, &kg)).unwrap();
        let mut zero = cfg.clone();
        zero.epochs = 0;
        let init = train(&zero, data(&samples, &kg)).unwrap();
        assert_eq!(params_of(&out.model), params_of(&init.model), "{variant}");
        assert!(out.checkpoint.step > 0);
    }
}

#[test]
fn zero_epochs_checkpoint_is_initialization() {
    let kg = toy_kg();
    let samples = toy_samples();
    let mut cfg = small_config(Variant::Sinlg);
    cfg.epochs = 0;
    let out = train(&cfg, data(&samples, &kg)).unwrap();
    let vocab = build_vocab(&samples, Some(&kg), 1);
    let fresh = SelectionModel::new(&cfg, vocab, kg.num_relations()).unwrap();
    assert_eq!(params_of(&out.model), params_of(&fresh));
    assert_eq!(out.checkpoint.step, 0);
    assert!(out.log.is_empty());
}

fn specs_for(cfg: &TrainConfig, model: &SelectionModel, samples: &[MrsSample], kg: &KnowledgeGraph) -> Vec<Vec<crate::extraction::SubgraphSpec>> {
    let snap = ScorerSnapshot::capture(&model.encoder);
    let kb = KnowledgeBase::new(kg.clone(), &snap).unwrap();
    kb.extract_all(&snap, samples, &cfg.extraction).unwrap()
}

#[test]
fn alpha_one_leaves_gnn_without_gradient() {
    let kg = toy_kg();
    let samples = toy_samples();
    let mut cfg = small_config(Variant::Sinlg);
    cfg.loss.alpha = 1.0;
    let vocab = build_vocab(&samples, Some(&kg), 1);
    let mut model = SelectionModel::new(&cfg, vocab, kg.num_relations()).unwrap();
    let specs = specs_for(&cfg, &model, &samples, &kg);
    let mut tape = Tape::new();
    let f = model.loss_on(&mut tape, &samples[0], 0, 0, Some(&specs[0][0])).unwrap();
    tape.backward(f.loss).unwrap();
    model.zero_grad();
    model.accumulate(&tape).unwrap();
    let gnn = model.gnn.as_ref().unwrap();
    assert!(gnn.params().iter().all(|(_, t)| t.grad().map_or(true, |g| g.iter().all(|&v| v == 0.0))));
    assert!(model.encoder.params().iter().any(|(_, t)| t.grad().is_some_and(|g| g.iter().any(|&v| v != 0.0))));
}

#[test]
fn sinlg_prediction_ignores_gnn() {
    let kg = toy_kg();
    let samples = toy_samples();
    let cfg = small_config(Variant::Sinlg);
    let vocab = build_vocab(&samples, Some(&kg), 1);
    let model = SelectionModel::new(&cfg, vocab, kg.num_relations()).unwrap();
    let mut perturbed = model.clone();
    for t in perturbed.gnn.as_mut().unwrap().params_mut().tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += 0.5);
    }
    for c in 0..4 {
        assert_eq!(model.score(&samples[1], c).unwrap(), perturbed.score(&samples[1], c).unwrap());
    }
    let before = crate::extraction::access_counts();
    model.score(&samples[2], 0).unwrap();
    assert_eq!(crate::extraction::access_counts(), before);
}

#[test]
fn knowledge_variants_require_subgraphs() {
    let kg = toy_kg();
    let samples = toy_samples();
    for variant in [Variant::S0, Variant::S1, Variant::S2, Variant::S3, Variant::Sinlg] {
        let cfg = small_config(variant);
        let vocab = build_vocab(&samples, Some(&kg), 1);
        let model = SelectionModel::new(&cfg, vocab, kg.num_relations()).unwrap();
        let mut tape = Tape::new();
        let err = model.loss_on(&mut tape, &samples[0], 0, 0, None);
        assert!(matches!(err, Err(crate::Error::MissingSubgraph { .. })), "{variant}");
    }
    let cfg = small_config(Variant::S1);
    assert!(train(&cfg, TrainData { train: &samples, dev: None, kg: None }).is_err());
}

#[test]
fn toy_batch_loss_decreases() {
    let kg = toy_kg();
    let samples = toy_samples();
    for variant in Variant::ALL {
        let mut cfg = small_config(variant);
        cfg.batch_size = 32;
        cfg.epochs = 50;
        cfg.learning_rate = 3e-3;
        let out = train(&cfg, data(&samples, &kg)).unwrap();
        let first = out.log.first().unwrap().loss;
        let last = out.log.last().unwrap().loss;
        assert!(last < first, "{variant}: {first} -> {last}");
    }
}

#[test]
fn identical_seeds_identical_logs() {
    let kg = toy_kg();
    let samples = toy_samples();
    let mut cfg = small_config(Variant::Sinlg);
    cfg.epochs = 3;
    let dev = toy_samples();
    let run = || {
        let d = TrainData {
            train: &samples,
            dev: Some(&dev),
            kg: Some(&kg),
        };
        let out = train(&cfg, d).unwrap();
        serde_json::to_string(&out.log).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn checkpoint_round_trip_reproduces_scores() {
    let kg = toy_kg();
    let samples = toy_samples();
    for variant in Variant::ALL {
        let cfg = small_config(variant);
        let out = train(&cfg, data(&samples, &kg)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        out.checkpoint.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, out.checkpoint);
        let model = back.model().unwrap();
        let snap = back.snapshot().unwrap();
        assert_eq!(snap.fingerprint(), out.snapshot.fingerprint());
        let kb = KnowledgeBase::new(kg.clone(), &snap).unwrap();
        for c in 0..4 {
            let spec = kb.build_subgraph(&snap, &samples[5], 5, c, &cfg.extraction).unwrap();
            let a = out.model.score_with(&samples[5], 5, c, Some(&spec)).unwrap();
            let b = model.score_with(&samples[5], 5, c, Some(&spec)).unwrap();
            assert_eq!(a.to_bits(), b.to_bits(), "{variant}");
        }
    }
}

#[test]
fn tampered_config_is_rejected() {
    let kg = toy_kg();
    let samples = toy_samples();
    let out = train(&small_config(Variant::PlmOnly), data(&samples, &kg)).unwrap();
    let mut ck = out.checkpoint.clone();
    ck.config.learning_rate = 0.5;
    assert!(ck.model().is_err());
}

#[test]
fn variant_names_parse() {
    for v in Variant::ALL {
        assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.name()));
    }
    assert!("roberta".parse::<Variant>().is_err());
}

#[test]
fn stop_grad_flag_freezes_the_cosine_target() {
    let kg = toy_kg();
    let samples = toy_samples();
    let cfg = small_config(Variant::Sinlg);
    let vocab = build_vocab(&samples, Some(&kg), 1);
    let mut a = SelectionModel::new(&cfg, vocab, kg.num_relations()).unwrap();
    let specs = specs_for(&cfg, &a, &samples, &kg);
    let mut b = a.clone();
    b.stop_grad_gnn_target = true;
    let grads = |m: &mut SelectionModel| {
        let mut tape = Tape::new();
        let f = m.loss_on(&mut tape, &samples[3], 3, 1, Some(&specs[3][1])).unwrap();
        let loss = tape.scalar(f.loss);
        tape.backward(f.loss).unwrap();
        m.zero_grad();
        m.accumulate(&tape).unwrap();
        let g: Vec<f64> = m.encoder.params().iter().flat_map(|(_, t)| t.grad().unwrap_or(&[]).to_vec()).collect();
        let gnn_norm: f64 = m
            .gnn
            .as_ref()
            .unwrap()
            .params()
            .iter()
            .flat_map(|(_, t)| t.grad().unwrap_or(&[]).to_vec())
            .map(|x| x * x)
            .sum();
        (loss, g, gnn_norm)
    };
    let (la, ga, na) = grads(&mut a);
    let (lb, gb, nb) = grads(&mut b);
    assert_eq!(la, lb);
    assert_ne!(ga, gb);
    assert!(na > 0.0);
    assert_eq!(nb, 0.0);
}
