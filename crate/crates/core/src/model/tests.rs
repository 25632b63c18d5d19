use super::*;
use crate::interval::{sinusoidal_embedding, Interval};
use rand::Rng;

fn config(decoder_layers: usize) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        heads: 2,
        ffn_dim: 12,
        video_layers: 1,
        query_layers: 1,
        decoder_layers,
        gru_hidden: 4,
        dropout: 0.0,
        feature_dim: 5,
        word_dim: 6,
        init_seed: 3,
    }
}

fn table() -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let vectors = (0..12).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    EmbeddingTable::new(6, vectors).unwrap()
}

fn features(len: usize, seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Mat::from_vec(len, 5, (0..len * 5).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn sentences(tokens: &[&[u32]]) -> Vec<Sentence> {
    tokens.iter().map(|t| Sentence::new(t.to_vec()).unwrap()).collect()
}

/// Adds noise to every parameter, including the zero-initialized heads.
fn randomize(model: &mut GroundingModel, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for m in model.store_mut().values_mut() {
        for x in m.data_mut() {
            *x += rng.random_range(-scale..scale);
        }
    }
}

fn zero(model: &mut GroundingModel, ids: &[ParamId]) {
    for &id in ids {
        let m = model.store_mut().value_mut(id);
        *m = Mat::zeros(m.rows(), m.cols());
    }
}

fn text_rows(model: &GroundingModel, s: &[Sentence]) -> Mat {
    let mut fw = Forward::eval(model.store());
    let p = model.params();
    let v = encode_sentences(&mut fw, &p.gru_forward, &p.gru_backward, &p.sentence_proj, s, &table());
    fw.graph.value(v).clone()
}

#[test]
fn sentence_encoder_is_directional_and_deterministic() {
    let model = GroundingModel::new(config(1)).unwrap();
    let a = text_rows(&model, &sentences(&[&[1, 2, 3, 4], &[4, 3, 2, 1], &[1, 2, 3, 4], &[5]]));
    assert_eq!(a.shape(), (4, 8));
    assert_eq!(a.row(0), a.row(2));
    assert!(a.row(0).iter().zip(a.row(1)).any(|(x, y)| (x - y).abs() > 1e-6));
    let single = text_rows(&model, &sentences(&[&[5]]));
    assert_eq!(single.row(0), a.row(3));
}

#[test]
fn query_encoder_breaks_permutation_symmetry() {
    let model = GroundingModel::new(config(1)).unwrap();
    let t = table();
    let encode = |s: &[Sentence]| {
        let mut fw = Forward::eval(model.store());
        let q = model.encode_text(&mut fw, s, &t);
        fw.graph.value(q).clone()
    };
    let a = encode(&sentences(&[&[1, 2], &[3, 4], &[5, 6]]));
    let b = encode(&sentences(&[&[3, 4], &[1, 2], &[5, 6]]));
    assert_eq!(a.shape(), (4, 8));
    assert!(a.is_finite());
    // Row 1 of `a` and row 2 of `b` encode the same sentence at different positions.
    assert!(a.row(1).iter().zip(b.row(2)).any(|(x, y)| (x - y).abs() > 1e-6));
}

#[test]
fn paragraph_row_depends_on_every_sentence() {
    let mut model = GroundingModel::new(config(1)).unwrap();
    randomize(&mut model, 5, 0.2);
    let mut fw = Forward::eval(model.store());
    let feats = fw.graph.variable(features(3, 9).slice_cols(0, 5).matmul(&Mat::filled(5, 8, 0.3)));
    let q = model.params().query.forward(&mut fw, feats, 2);
    let row0 = fw.graph.row(q, 0);
    let probe = fw.graph.constant(features(1, 4).matmul(&Mat::filled(5, 8, 0.7)));
    let probe = fw.graph.transpose(probe);
    let loss = fw.graph.matmul(row0, probe);
    let grads = fw.graph.backward(loss);
    let g = grads.wrt(feats).unwrap();
    for r in 0..3 {
        assert!(g.row(r).iter().any(|x| x.abs() > 1e-8), "sentence {r} has no influence");
    }
}

fn gate_output(model: &GroundingModel, x: &Mat, pe: &Mat) -> Mat {
    let gate = model.params().video.layers[0].gate.unwrap();
    let mut fw = Forward::eval(model.store());
    let x = fw.constant(x.clone());
    let pe = fw.constant(pe.clone());
    let out = modulated_positional_encoding(&mut fw, &gate, x, pe);
    fw.graph.value(out).clone()
}

#[test]
fn modulated_encoding_gates_the_table() {
    let mut model = GroundingModel::new(config(1)).unwrap();
    let gate = model.params().video.layers[0].gate.unwrap();
    let x = features(6, 2).matmul(&Mat::filled(5, 8, 0.5));
    let pe = sinusoidal_embedding(&crate::interval::clip_centers(6), 8).unwrap();

    let bounded = gate_output(&model, &x, &pe);
    for (a, b) in bounded.data().iter().zip(pe.data()) {
        assert!(a.abs() <= b.abs() + 1e-15);
    }

    zero(&mut model, &gate.out.ids());
    let bias = gate.out.bias.unwrap();
    *model.store_mut().value_mut(bias) = Mat::filled(1, 8, 60.0);
    assert!(gate_output(&model, &x, &pe).max_abs_diff(&pe) < 1e-15);
    *model.store_mut().value_mut(bias) = Mat::filled(1, 8, -800.0);
    assert!(gate_output(&model, &x, &pe).max_abs_diff(&Mat::zeros(6, 8)) < 1e-15);
}

fn memory(model: &GroundingModel, feats: &Mat, uniform: bool) -> Mat {
    let mut fw = Forward::eval(model.store());
    fw.probe.uniform_encoder_attention = uniform;
    let m = model.encode_video(&mut fw, feats);
    fw.graph.value(m).clone()
}

#[test]
fn values_never_see_positions() {
    let model = GroundingModel::new(config(1)).unwrap();
    let feats = features(7, 1);
    let mut shuffled_gate = model.clone();
    let gate = model.params().video.layers[0].gate.unwrap();
    for id in gate.ids() {
        let m = shuffled_gate.store_mut().value_mut(id);
        *m = m.map(|x| 3.0 * x + 0.5);
    }
    let base = memory(&model, &feats, true);
    assert_eq!(base.shape(), (7, 8));
    assert!(base.max_abs_diff(&memory(&shuffled_gate, &feats, true)) < 1e-12);
    // With real attention, the positional gate does matter.
    assert!(memory(&model, &feats, false).max_abs_diff(&memory(&shuffled_gate, &feats, false)) > 1e-6);
}

#[test]
fn video_encoder_is_position_sensitive() {
    let model = GroundingModel::new(config(1)).unwrap();
    let feats = features(6, 5);
    // Rotate the clips by two: without positions the memory would rotate too.
    let order: Vec<usize> = (0..6).map(|i| (i + 2) % 6).collect();
    let rotate = |m: &Mat| Mat::concat_rows(&order.iter().map(|&i| m.slice_rows(i, 1)).collect::<Vec<_>>().iter().collect::<Vec<_>>());
    let base = memory(&model, &feats, false);
    let shifted = memory(&model, &rotate(&feats), false);
    assert!(base.is_finite());
    assert!(rotate(&base).max_abs_diff(&shifted) > 1e-6);
    // Sanity: with uniform attention the encoder is permutation-equivariant.
    let u = memory(&model, &feats, true);
    assert!(rotate(&u).max_abs_diff(&memory(&model, &rotate(&feats), true)) < 1e-12);
}

fn run(model: &GroundingModel, feats: &Mat, s: &[Sentence]) -> DecoderTrace {
    let mut fw = Forward::eval(model.store());
    let q = model.encode_text(&mut fw, s, &table());
    let out = model.branch(&mut fw, feats, q);
    out.state.trace(&fw.graph)
}

#[test]
fn zero_offset_heads_freeze_anchors_after_seed() {
    let mut model = GroundingModel::new(config(3)).unwrap();
    randomize(&mut model, 8, 0.3);
    let heads: Vec<ParamId> =
        model.params().decoder.layers[1..].iter().flat_map(|l| l.anchor_head.out.ids()).collect();
    zero(&mut model, &heads);
    let t = run(&model, &features(9, 3), &sentences(&[&[1, 2], &[3]]));
    assert!(t.layers[0].anchors.max_abs() > 1e-6);
    assert_eq!(t.layers[0].anchors, t.layers[1].anchors);
    assert_eq!(t.layers[1].anchors, t.layers[2].anchors);
}

#[test]
fn attention_rows_are_distributions_at_every_layer() {
    let mut model = GroundingModel::new(config(3)).unwrap();
    randomize(&mut model, 9, 0.5);
    let t = run(&model, &features(11, 3), &sentences(&[&[1, 2], &[3], &[7, 8, 9]]));
    for layer in &t.layers {
        assert_eq!(layer.attention.shape(), (4, 11));
        for r in 0..4 {
            assert!((layer.attention.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-5);
        }
        assert!(layer.anchors.is_finite());
    }
}

#[test]
fn zeroed_content_keys_leave_position_only_attention() {
    let mut model = GroundingModel::new(config(2)).unwrap();
    randomize(&mut model, 10, 0.3);
    let key = model.params().decoder.layers[0].cross_key;
    zero(&mut model, &key.ids());
    let s = sentences(&[&[1, 2], &[3, 4]]);
    let a = run(&model, &features(8, 1), &s);
    let b = run(&model, &features(8, 2), &s);
    assert!(a.layers[0].attention.max_abs_diff(&b.layers[0].attention) < 1e-12);
    assert!(a.layers[0].query.max_abs_diff(&b.layers[0].query) > 1e-6);
}

#[test]
fn zero_refinement_passes_final_anchors_through() {
    let mut model = GroundingModel::new(config(2)).unwrap();
    randomize(&mut model, 12, 0.3);
    let ids = model.params().decoder.refine_head.out.ids();
    zero(&mut model, &ids);
    let t = run(&model, &features(8, 1), &sentences(&[&[1, 2], &[3, 4]]));
    let expect = box_rows_to_intervals(&t.layers[1].anchors);
    let pred = t.prediction();
    assert_eq!(pred.paragraph, expect[0]);
    assert_eq!(pred.sentences, expect[1..].to_vec());
}

#[test]
fn one_refinement_head_serves_paragraph_and_sentences() {
    let model = GroundingModel::new(config(2)).unwrap();
    let mut fw = Forward::eval(model.store());
    let q = model.encode_text(&mut fw, &sentences(&[&[1], &[2]]), &table());
    let _ = model.branch(&mut fw, &features(6, 1), q);
    let head = model.params().decoder.refine_head.out.weight;
    let node = fw.graph.param_node(head).unwrap();
    // One leaf for the head; the prediction rows all derive from it.
    assert_eq!(fw.graph.param_node(head), Some(node));
    assert_eq!(model.store().ids().filter(|&id| model.store().name(id).starts_with("decoder.refine_head")).count(), 4);
}

#[test]
fn predictions_are_valid_for_arbitrary_parameters() {
    for seed in 0..20 {
        let mut model = GroundingModel::new(config(2)).unwrap();
        randomize(&mut model, 100 + seed, 3.0);
        let t = run(&model, &features(5 + seed as usize % 7, seed), &sentences(&[&[1, 2], &[3], &[4]]));
        let p = t.prediction();
        for iv in std::iter::once(&p.paragraph).chain(&p.sentences) {
            assert!(Interval::new(iv.start(), iv.end()).is_ok());
        }
    }
}

#[test]
fn branches_share_one_parameter_leaf() {
    let model = GroundingModel::new(config(2)).unwrap();
    let mut fw = Forward::eval(model.store());
    let q = model.encode_text(&mut fw, &sentences(&[&[1], &[2]]), &table());
    let _aug = model.branch(&mut fw, &features(8, 1), q);
    let leaves = fw.graph.param_leaf_count();
    let _inf = model.branch(&mut fw, &features(5, 2), q);
    assert_eq!(fw.graph.param_leaf_count(), leaves);
    // The concept head was never requested.
    assert!(model.concept_param_ids().iter().all(|&id| fw.graph.param_node(id).is_none()));
}

#[test]
fn gradient_reaches_memory_queries_and_every_anchor_head() {
    let mut model = GroundingModel::new(config(3)).unwrap();
    randomize(&mut model, 21, 0.3);
    let mut fw = Forward::eval(model.store());
    let q = model.encode_text(&mut fw, &sentences(&[&[1, 2], &[3]]), &table());
    let memory = model.encode_video(&mut fw, &features(9, 4));
    let state = model.decode(&mut fw, memory, q);
    let probe = fw.graph.constant(Mat::from_vec(3, 2, vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.8]));
    let prod = fw.graph.mul(state.intervals, probe);
    let loss = fw.graph.sum(prod);
    let grads = fw.graph.backward(loss);
    assert!(grads.wrt(memory).unwrap().max_abs() > 0.0);
    assert!(grads.wrt(q).unwrap().max_abs() > 0.0);
    for layer in &model.params().decoder.layers {
        for id in layer.anchor_head.ids() {
            assert!(grads.param(id).unwrap().max_abs() > 0.0, "{}", model.store().name(id));
        }
    }
}

#[test]
fn identical_inputs_decode_identically() {
    let model = GroundingModel::new(config(2)).unwrap();
    let s = sentences(&[&[1, 2], &[3, 4]]);
    assert_eq!(run(&model, &features(8, 1), &s), run(&model, &features(8, 1), &s));
}
