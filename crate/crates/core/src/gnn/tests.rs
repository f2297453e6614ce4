use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::extraction::{ScoredConcept, SuperEdge};
use crate::kg::{ConceptId, Edge, RelationId};
use crate::numerics::gradcheck;
use crate::numerics::kernels;

const D: usize = 6;

fn small_config(layers: usize, hidden: usize) -> GnnConfig {
    GnnConfig {
        layers,
        hidden,
        relation_dim: 3,
        attention_dim: 4,
        ..GnnConfig::default()
    }
}

fn random_spec(rng: &mut ChaCha8Rng, n: usize, n_edges: usize, relations: u32) -> SubgraphSpec {
    let concepts: Vec<ScoredConcept> = (0..n)
        .map(|i| ScoredConcept {
            concept: ConceptId(10 + i as u32 * 3),
            origin: if i % 3 == 0 { Origin::Linked } else { Origin::Expanded },
            score: rng.gen_range(-2.0..2.0),
        })
        .collect();
    let kg_edges = (0..n_edges)
        .map(|_| Edge {
            head: concepts[rng.gen_range(0..n)].concept,
            relation: RelationId(rng.gen_range(0..relations)),
            tail: concepts[rng.gen_range(0..n)].concept,
            weight: rng.gen_range(0.1..2.0),
        })
        .collect();
    SubgraphSpec {
        sample: 0,
        candidate: 0,
        super_edges: concepts
            .iter()
            .map(|c| SuperEdge {
                concept: c.concept,
                weight: c.score,
            })
            .collect(),
        concept_names: (0..n).map(|i| format!("c{i}")).collect(),
        concept_embeddings: (0..n).map(|_| (0..D).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
        concepts,
        kg_edges,
        super_relation: RelationId(relations),
        super_init: vec![0.0; D],
        pruned_linked: 0,
        pruned_expanded: 0,
    }
}

fn random_h(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..D).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn attention_sums_to_one_per_node() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let spec = random_spec(&mut rng, 6, 8, 2);
    let m = GnnModel::new(small_config(2, 5), D, 2).unwrap();
    let g = MessageGraph::from_spec(&spec).unwrap();
    let mut tape = Tape::no_grad();
    let h0 = tape.constant_matrix(1, D, random_h(&mut rng)).unwrap();
    let x = m.initial_features(&mut tape, h0, &spec).unwrap();
    let x = m.bridge(&mut tape, x, m.ids.bridge_in).unwrap();
    let ef = m.edge_features(&mut tape, &g).unwrap();
    let (_, alpha) = m.gat_layer_on(&mut tape, x, &g, Some(ef), 0, g.nodes).unwrap();
    let alpha = tape.value(alpha.unwrap()).to_vec();
    for node in 0..g.nodes {
        let inc = g.incoming(node);
        assert!(!inc.is_empty());
        let s: f64 = inc.iter().map(|&e| alpha[e]).sum();
        assert!((s - 1.0).abs() < 1e-12, "node {node}: {s}");
    }
}

#[test]
fn single_neighbor_layer_matches_hand_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let spec = random_spec(&mut rng, 1, 0, 1);
    let hid = 4;
    let m = GnnModel::new(small_config(1, hid), hid, 1).unwrap();
    let mut e = spec;
    e.concept_embeddings = vec![vec![0.3, -0.2, 0.5, 0.1]];
    let h = vec![0.4, 0.7, -0.6, 0.2];
    let out = m.propagate(&e, &h).unwrap();

    // one incoming edge: the super node aggregates exactly W_msg h_1
    let p = |n: &str| m.params().get(m.params().id_of(n).unwrap()).data().to_vec();
    let msg = p("layer0.msg.w");
    let mut agg = vec![0.0; hid];
    kernels::gemm_acc(&e.concept_embeddings[0], &msg, &mut agg, 1, hid, hid);
    let mut cat = h.clone();
    cat.extend(agg);
    let mut z = p("layer0.upd.b");
    kernels::gemm_acc(&cat, &p("layer0.upd.w"), &mut z, 1, 2 * hid, hid);
    let want: Vec<f64> = z.iter().map(|v| v.tanh()).collect();
    for (a, b) in out.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn permutation_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = GnnModel::new(small_config(3, 5), D, 3).unwrap();
    for _ in 0..10 {
        let spec = random_spec(&mut rng, 7, 10, 3);
        let h = random_h(&mut rng);
        let base = m.propagate(&spec, &h).unwrap();
        let mut shuffled = spec.clone();
        let mut order: Vec<usize> = (0..spec.concepts.len()).collect();
        order.shuffle(&mut rng);
        shuffled.concepts = order.iter().map(|&i| spec.concepts[i]).collect();
        shuffled.super_edges = order.iter().map(|&i| spec.super_edges[i]).collect();
        shuffled.concept_names = order.iter().map(|&i| spec.concept_names[i].clone()).collect();
        shuffled.concept_embeddings = order.iter().map(|&i| spec.concept_embeddings[i].clone()).collect();
        shuffled.kg_edges.shuffle(&mut rng);
        let other = m.propagate(&shuffled, &h).unwrap();
        for (a, b) in base.iter().zip(&other) {
            assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
        }
    }
}

#[test]
fn zero_layers_returns_projected_seed() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let spec = random_spec(&mut rng, 4, 3, 2);
    let h = random_h(&mut rng);
    let same = GnnModel::new(small_config(0, D), D, 2).unwrap();
    assert_eq!(same.propagate(&spec, &h).unwrap(), h);

    let bridged = GnnModel::new(small_config(0, 4), D, 2).unwrap();
    let p = |n: &str| bridged.params().get(bridged.params().id_of(n).unwrap()).data().to_vec();
    let mut mid = vec![0.0; 4];
    kernels::gemm_acc(&h, &p("bridge_in.w"), &mut mid, 1, D, 4);
    let mut want = vec![0.0; D];
    kernels::gemm_acc(&mid, &p("bridge_out.w"), &mut want, 1, 4, D);
    let got = bridged.propagate(&spec, &h).unwrap();
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn lone_super_node_is_finite() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let spec = random_spec(&mut rng, 0, 0, 1);
    let m = GnnModel::new(small_config(3, 5), D, 1).unwrap();
    let out = m.propagate(&spec, &random_h(&mut rng)).unwrap();
    assert_eq!(out.len(), D);
    assert!(out.iter().all(|v| v.is_finite()));
}

#[test]
fn default_hidden_width() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let spec = random_spec(&mut rng, 3, 2, 2);
    let cfg = GnnConfig::default();
    assert_eq!((cfg.layers, cfg.hidden), (5, 200));
    let m = GnnModel::new(cfg, D, 2).unwrap();
    let mut tape = Tape::no_grad();
    let h = tape.constant_matrix(1, D, random_h(&mut rng)).unwrap();
    let nodes = m.node_features_on(&mut tape, h, &spec).unwrap();
    assert_eq!(tape.dims(nodes), (4, 200));
}

#[test]
fn super_only_last_layer_matches_full_pass() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let spec = random_spec(&mut rng, 6, 9, 2);
    let h = random_h(&mut rng);
    let m = GnnModel::new(small_config(3, 5), D, 2).unwrap();
    let mut tape = Tape::no_grad();
    let hv = tape.constant_matrix(1, D, h.clone()).unwrap();
    let all = m.node_features_on(&mut tape, hv, &spec).unwrap();
    let sup = tape.slice_rows(all, 0, 1).unwrap();
    let full = m.bridge(&mut tape, sup, m.ids.bridge_out).unwrap();
    let fast = m.propagate(&spec, &h).unwrap();
    for (a, b) in tape.value(full).iter().zip(&fast) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn super_edge_scores_matter() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let spec = random_spec(&mut rng, 5, 4, 2);
    let h = random_h(&mut rng);
    let m = GnnModel::new(small_config(2, 5), D, 2).unwrap();
    let mut zeroed = spec.clone();
    zeroed.super_edges.iter_mut().for_each(|e| e.weight = 0.0);
    let a = m.propagate(&spec, &h).unwrap();
    let b = m.propagate(&zeroed, &h).unwrap();
    assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-9));
}

#[test]
fn rejects_shape_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let spec = random_spec(&mut rng, 3, 2, 2);
    let m = GnnModel::new(small_config(1, 5), D, 2).unwrap();
    assert!(m.propagate(&spec, &[1.0; D + 1]).is_err());
    // relation id beyond the model's table
    let mut bad = spec.clone();
    bad.super_relation = RelationId(9);
    assert!(m.propagate(&bad, &[0.5; D]).is_err());
}

fn objective(m: &GnnModel, spec: &SubgraphSpec, h: &[f64], r: &[f64]) -> Result<f64> {
    Ok(kernels::dot(&m.propagate(spec, h)?, r))
}

#[test]
fn parameter_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let spec = random_spec(&mut rng, 5, 6, 2);
    let h = random_h(&mut rng);
    let r = random_h(&mut rng);
    for hidden in [D, 4] {
        let mut m = GnnModel::new(small_config(2, hidden), D, 2).unwrap();
        let mut tape = Tape::new();
        let hv = tape.constant_matrix(1, D, h.clone()).unwrap();
        let out = m.propagate_on(&mut tape, hv, &spec).unwrap();
        let rv = tape.constant_matrix(D, 1, r.clone()).unwrap();
        let loss = tape.matmul(out, rv).unwrap();
        tape.backward(loss).unwrap();
        m.params_mut().zero_grad();
        m.params_mut().accumulate(&tape).unwrap();
        let report = gradcheck::check_model(&m, GnnModel::params_mut, |m| objective(m, &spec, &h, &r), 6, 1e-5, 1e-5, 1e-8).unwrap();
        assert!(report.passed(), "hidden {hidden}: {report:?}");
        assert!(report.checked > 50);
    }
}

#[test]
fn seed_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let spec = random_spec(&mut rng, 4, 5, 2);
    let r = random_h(&mut rng);
    let m = GnnModel::new(small_config(2, 4), D, 2).unwrap();
    let h = Tensor::matrix(1, D, random_h(&mut rng)).unwrap();
    let report = gradcheck::check(&[h], 1e-5, 1e-5, 1e-8, |tape, v| {
        let out = m.propagate_on(tape, v[0], &spec)?;
        let rv = tape.constant_matrix(D, 1, r.clone())?;
        tape.matmul(out, rv)
    })
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn state_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let spec = random_spec(&mut rng, 4, 3, 2);
    let h = random_h(&mut rng);
    let m = GnnModel::new(small_config(2, 4), D, 2).unwrap();
    let json = serde_json::to_string(&m.to_state()).unwrap();
    let back = GnnModel::from_state(serde_json::from_str(&json).unwrap()).unwrap();
    assert_eq!(m.propagate(&spec, &h).unwrap(), back.propagate(&spec, &h).unwrap());
}
