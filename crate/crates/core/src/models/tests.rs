use super::*;
use crate::autodiff::{finite_difference_check, Graph, LAYER_NORM_EPS};
use crate::features::SourceTag;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_seq(frames: usize, dim: usize, seed: u64, amp: f32) -> EmbeddingSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..frames * dim).map(|_| rng.gen_range(-amp..amp)).collect();
    EmbeddingSequence::new(frames, dim, data, 160.0, SourceTag::Other).unwrap()
}

fn tiny_transformer(dim: usize, tasks: Vec<Task>) -> ModelConfig {
    let mut c = ModelConfig::transformer(dim, tasks);
    c.hidden_dim = 4;
    c.ff_dim = 6;
    c
}

fn tiny_bilstm(dim: usize, tasks: Vec<Task>) -> ModelConfig {
    let mut c = ModelConfig::bilstm(dim, tasks);
    c.bilstm_units_per_dir = 3;
    c
}

// Straight-line matrix helpers for the oracles.
fn mm(a: &[f64], rows: usize, inner: usize, b: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[i * cols + j] = (0..inner).map(|k| a[i * inner + k] * b[k * cols + j]).sum();
        }
    }
    out
}

fn add_bias(x: &mut [f64], b: &[f64]) {
    for row in x.chunks_mut(b.len()) {
        row.iter_mut().zip(b).for_each(|(v, b)| *v += b);
    }
}

fn dense(model: &DownstreamModel, name: &str, x: &[f64], rows: usize) -> Vec<f64> {
    let w = model.parameter(&format!("{name}.w")).unwrap();
    let (inner, cols) = (w.shape()[0], w.shape()[1]);
    let mut y = mm(x, rows, inner, w.values(), cols);
    add_bias(&mut y, model.parameter(&format!("{name}.b")).unwrap().values());
    y
}

fn p<'a>(model: &'a DownstreamModel, name: &str) -> &'a [f64] {
    model.parameter(name).unwrap().values()
}

fn oracle_layer_norm(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let d = g.len();
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        out.extend(row.iter().enumerate().map(|(j, v)| (v - mean) * inv * g[j] + b[j]));
    }
    out
}

fn oracle_softmax_rows(x: &mut [f64], cols: usize) {
    for row in x.chunks_mut(cols) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|v| *v = (*v - m).exp());
        let z: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= z);
    }
}

fn oracle_pool_and_heads(model: &DownstreamModel, hidden: &[f64], frames: usize) -> Vec<f64> {
    let d = hidden.len() / frames;
    let mut s = mm(hidden, frames, d, p(model, "pool.v"), 1);
    s.iter_mut().for_each(|v| *v += p(model, "pool.b")[0]);
    oracle_softmax_rows(&mut s, frames);
    let pooled = mm(&s, 1, frames, hidden, d);
    model
        .tasks()
        .iter()
        .map(|t| {
            let raw = dense(model, &format!("head.{}", t.name()), &pooled, 1)[0];
            model.config().target_scaling.get(*t).to_natural(raw)
        })
        .collect()
}

fn oracle_transformer(model: &DownstreamModel, seq: &EmbeddingSequence) -> (Vec<f64>, Vec<f64>) {
    let c = model.config();
    let (t, hd) = (seq.frames(), c.hidden_dim);
    let x: Vec<f64> = seq.data().iter().map(|&v| v as f64).collect();
    let mut h = dense(model, "proj", &x, t);
    if c.positional_encoding {
        for i in 0..t {
            for j in 0..hd {
                let angle = i as f64 / 10000f64.powf((2 * (j / 2)) as f64 / hd as f64);
                h[i * hd + j] += if j % 2 == 0 { angle.sin() } else { angle.cos() };
            }
        }
    }
    for l in 0..c.n_transformer_layers {
        let n = |s: &str| format!("enc.{l}.{s}");
        let a = oracle_layer_norm(&h, p(model, &n("ln1.g")), p(model, &n("ln1.b")));
        let q = dense(model, &n("attn.q"), &a, t);
        let k = dense(model, &n("attn.k"), &a, t);
        let v = dense(model, &n("attn.v"), &a, t);
        let mut scores = vec![0.0; t * t];
        for i in 0..t {
            for j in 0..t {
                let dot: f64 = (0..hd).map(|e| q[i * hd + e] * k[j * hd + e]).sum();
                scores[i * t + j] = dot / (hd as f64).sqrt();
            }
        }
        oracle_softmax_rows(&mut scores, t);
        let ctx = mm(&scores, t, t, &v, hd);
        let o = dense(model, &n("attn.o"), &ctx, t);
        h.iter_mut().zip(&o).for_each(|(a, b)| *a += b);
        let f = oracle_layer_norm(&h, p(model, &n("ln2.g")), p(model, &n("ln2.b")));
        let mut f = dense(model, &n("ff.0"), &f, t);
        f.iter_mut().for_each(|v| *v = v.max(0.0));
        let f = dense(model, &n("ff.1"), &f, t);
        h.iter_mut().zip(&f).for_each(|(a, b)| *a += b);
    }
    let preds = oracle_pool_and_heads(model, &h, t);
    (h, preds)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn pred_values(p: &PredictionSet) -> Vec<f64> {
    p.iter().map(|(_, v)| v).collect()
}

#[test]
fn init_is_deterministic_and_follows_bias_rules() {
    let c = ModelConfig::bilstm(6, vec![Task::Mos, Task::T60]);
    let a = init_model(c.clone(), 42).unwrap();
    assert_eq!(a, init_model(c.clone(), 42).unwrap());
    assert_ne!(a, init_model(c, 43).unwrap());
    for (name, t) in a.parameters() {
        if name.ends_with(".b") && name.starts_with("enc.") {
            let u = 32;
            for (i, v) in t.values().iter().enumerate() {
                let want = if (u..2 * u).contains(&i) { 1.0 } else { 0.0 };
                assert_eq!(*v, want, "{name}[{i}]");
            }
        } else if name.ends_with(".b") {
            assert!(t.values().iter().all(|&v| v == 0.0), "{name}");
        }
    }
    let t = init_model(ModelConfig::transformer(16, vec![Task::Mos]), 1).unwrap();
    assert!(t.parameter("enc.0.ln1.g").unwrap().values().iter().all(|&v| v == 1.0));
    let w = t.parameter("enc.1.attn.q.w").unwrap();
    let bound = (6.0f64 / 128.0).sqrt();
    assert!(w.values().iter().all(|v| v.abs() <= bound));
    assert!(w.values().iter().all(|&v| v == v as f32 as f64));
}

#[test]
fn reference_transformer_size() {
    let c = ModelConfig::transformer(2048, vec![Task::Mos]);
    let table = describe_parameters(&c);
    assert_eq!(table.get("proj.w").unwrap().shape, vec![2048, 64]);
    assert_eq!(table.prefix_total("proj."), 131_136);
    assert_eq!(table.prefix_total("enc.0."), 25_216);
    assert_eq!(table.total, 181_698);
    let model = init_model(c, 0).unwrap();
    assert_eq!(model.parameter_count(), table.total);
    let total_m = (table.total as f64 + 5.0e6) / 1e6;
    assert!((total_m - 5.20).abs() / 5.20 < 0.05, "{total_m}");
}

#[test]
fn mlp_widths() {
    let table = describe_parameters(&ModelConfig::mlp(1024, vec![Task::Mos]));
    assert_eq!(table.get("mlp.0.w").unwrap().shape, vec![2048, 1024]);
    assert_eq!(table.get("mlp.1.w").unwrap().shape, vec![1024, 1024]);
    assert_eq!(table.get("head.MOS.w").unwrap().shape, vec![1024, 1]);
}

#[test]
fn transformer_matches_hand_oracle() {
    for pe in [true, false] {
        let mut c = ModelConfig::transformer(8, vec![Task::Mos, Task::Snr]);
        c.positional_encoding = pe;
        let model = init_model(c, 7).unwrap();
        let seq = random_seq(4, 8, 11, 2.0);
        let (hidden, preds) = model.forward_framewise_transformer(&seq).unwrap();
        assert_eq!(hidden.shape(), &[4, 64]);
        let (oh, op) = oracle_transformer(&model, &seq);
        assert!(close(hidden.values(), &oh, 1e-6));
        assert!(close(&pred_values(&preds), &op, 1e-6), "{preds:?} vs {op:?}");
    }
}

#[test]
fn dimension_mismatch_names_both_sizes() {
    let model = init_model(ModelConfig::transformer(8, vec![Task::Mos]), 0).unwrap();
    match model.forward_framewise_transformer(&random_seq(3, 5, 0, 1.0)) {
        Err(Error::Shape { left, right, .. }) => assert_eq!((left, right), (vec![8], vec![5])),
        other => panic!("{other:?}"),
    }
    let mlp = init_model(ModelConfig::mlp(4, vec![Task::Mos]), 0).unwrap();
    let emb = UtteranceEmbedding::from_vector(vec![0.0; 6], SourceTag::Other);
    assert!(matches!(mlp.forward_utterance_mlp(&emb), Err(Error::Shape { .. })));
}

#[test]
fn frame_order_matters_only_with_positional_encoding() {
    let seq = random_seq(6, 8, 5, 1.0);
    let order = [3, 0, 5, 1, 4, 2];
    let perm = seq.permuted(&order).unwrap();

    let mut c = ModelConfig::transformer(8, vec![Task::Mos]);
    c.positional_encoding = false;
    let m = init_model(c.clone(), 9).unwrap();
    let (h0, p0) = m.forward(&ModelInput::Frames(seq.clone())).unwrap();
    let (h1, p1) = m.forward(&ModelInput::Frames(perm.clone())).unwrap();
    for (i, &src) in order.iter().enumerate() {
        assert!(close(&h1.values()[i * 64..(i + 1) * 64], &h0.values()[src * 64..(src + 1) * 64], 1e-12));
    }
    assert!((p0.get(Task::Mos).unwrap() - p1.get(Task::Mos).unwrap()).abs() < 1e-12);

    c.positional_encoding = true;
    let m = init_model(c, 9).unwrap();
    let a = m.forward(&ModelInput::Frames(seq)).unwrap().1.get(Task::Mos).unwrap();
    let b = m.forward(&ModelInput::Frames(perm)).unwrap().1.get(Task::Mos).unwrap();
    assert!((a - b).abs() > 1e-9);
}

#[test]
fn zero_lstm_gives_zero_hidden() {
    let mut model = init_model(tiny_bilstm(4, vec![Task::Mos]), 3).unwrap();
    for (name, t) in model.parameters_mut() {
        if name.starts_with("enc.") {
            t.values_mut().fill(0.0);
        }
    }
    let (h, _) = model.forward_framewise_bilstm(&random_seq(5, 4, 1, 3.0)).unwrap();
    assert_eq!(h.shape(), &[5, 6]);
    assert!(h.values().iter().all(|&v| v == 0.0));
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn oracle_lstm_cell(x: &[f64], w: &[f64], b: &[f64], units: usize) -> Vec<f64> {
    // Single step from zero state: the recurrent half of the input is zero.
    let mut z = x.to_vec();
    z.extend(std::iter::repeat(0.0).take(units));
    let mut gates = mm(&z, 1, z.len(), w, 4 * units);
    add_bias(&mut gates, b);
    (0..units)
        .map(|j| {
            let i = sigmoid(gates[j]);
            let f = sigmoid(gates[units + j]);
            let g = gates[2 * units + j].tanh();
            let o = sigmoid(gates[3 * units + j]);
            let c = f * 0.0 + i * g;
            o * c.tanh()
        })
        .collect()
}

#[test]
fn single_step_bilstm_matches_cell_equations() {
    let model = init_model(tiny_bilstm(4, vec![Task::Mos, Task::Snr]), 21).unwrap();
    let seq = random_seq(1, 4, 2, 1.5);
    let (h, preds) = model.forward_framewise_bilstm(&seq).unwrap();
    let mut x: Vec<f64> = seq.data().iter().map(|&v| v as f64).collect();
    for l in 0..2 {
        let mut next = Vec::new();
        for dir in ["fwd", "bwd"] {
            let w = p(&model, &format!("enc.{l}.{dir}.w"));
            let b = p(&model, &format!("enc.{l}.{dir}.b"));
            next.extend(oracle_lstm_cell(&x, w, b, 3));
        }
        x = next;
    }
    assert!(close(h.values(), &x, 1e-6));
    assert!(close(&pred_values(&preds), &oracle_pool_and_heads(&model, &x, 1), 1e-6));
}

#[test]
fn zero_mlp_predicts_zero() {
    let mut model = init_model(ModelConfig::mlp(5, vec![Task::Mos, Task::Sti]), 0).unwrap();
    let mut scaling = TargetScaling::default();
    scaling.0.clear();
    model.set_target_scaling(scaling);
    for (_, t) in model.parameters_mut() {
        t.values_mut().fill(0.0);
    }
    let emb = UtteranceEmbedding::from_vector(vec![1.0; 10], SourceTag::Other);
    let preds = model.forward_utterance_mlp(&emb).unwrap();
    assert_eq!(pred_values(&preds), vec![0.0, 0.0]);
}

#[test]
fn mlp_matches_scripted_arithmetic() {
    let model = init_model(ModelConfig::mlp(3, vec![Task::Mos, Task::C50]), 4).unwrap();
    let seq = random_seq(5, 3, 8, 1.0);
    let ModelInput::Utterance(emb) = model.prepare(&seq).unwrap() else {
        panic!("mlp input should be pooled");
    };
    let preds = model.forward_utterance_mlp(&emb).unwrap();
    let mut h = emb.vector().to_vec();
    for l in 0..2 {
        h = dense(&model, &format!("mlp.{l}"), &h, 1);
        h.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    let want: Vec<f64> = model
        .tasks()
        .iter()
        .map(|t| model.config().target_scaling.get(*t).to_natural(dense(&model, &format!("head.{}", t.name()), &h, 1)[0]))
        .collect();
    assert!(close(&pred_values(&preds), &want, 1e-6));
}

fn check_gradients(model: &DownstreamModel, input: &ModelInput) -> f64 {
    let targets = [0.3, -1.2, 2.0, 0.5, -0.7, 1.1];
    let f = |g: &mut Graph, vars: &[Var]| {
        let bound = model.bind_vars(vars)?;
        let out = model.forward_graph(g, &bound, input, None)?;
        let mut terms = Vec::new();
        for (i, (_, v)) in out.heads.iter().enumerate() {
            let t = g.constant(vec![1, 1], vec![targets[i]])?;
            let d = g.sub(*v, t)?;
            terms.push(g.mul(d, d)?);
        }
        let all = g.concat(&terms, 1)?;
        Ok(g.sum(all))
    };
    let r = finite_difference_check(f, &model.parameter_tensors(), 1e-4).unwrap();
    assert_eq!(r.coordinates_checked, model.parameter_count());
    r.max_rel_error
}

#[test]
fn gradients_pass_finite_differences_for_every_variant() {
    let seq = random_seq(4, 5, 31, 1.0);
    let tasks = vec![Task::Mos, Task::Snr, Task::T60];
    for config in [
        tiny_transformer(5, tasks.clone()),
        tiny_bilstm(5, tasks.clone()),
        ModelConfig::mlp(5, tasks.clone()),
    ] {
        let model = init_model(config, 77).unwrap();
        let input = model.prepare(&seq).unwrap();
        let err = check_gradients(&model, &input);
        assert!(err < 1e-4, "{}: {err}", model.config().variant);
    }
}

#[test]
fn forward_flops_follow_closed_form_for_transformer() {
    let model = init_model(tiny_transformer(5, vec![Task::Mos]), 0).unwrap();
    let input = model.prepare(&random_seq(3, 5, 0, 1.0)).unwrap();
    let (t, d, h, f) = (3u64, 5u64, 4u64, 6u64);
    let lin = |i: u64, o: u64| t * (2 * i * o + o);
    let layer = 7 * t * h * 2 + 4 * lin(h, h) + 4 * t * t * h + t * t + 4 * t * t + t * h * 2 + lin(h, f) + t * f + lin(f, h);
    let pool = 2 * t * h + t + 4 * t + 2 * t * h;
    let want = lin(d, h) + t * h + 2 * layer + pool + (2 * h + 1);
    assert_eq!(model.forward_flops(&input).unwrap(), want);
}

fn random_config() -> impl Strategy<Value = ModelConfig> {
    (0usize..3, 1usize..12, 1usize..6, 1usize..6, 1usize..4, 1u8..64, any::<bool>()).prop_map(
        |(v, d, h, f, layers, mask, pe)| {
            let tasks: Vec<Task> = Task::ALL.iter().copied().filter(|t| mask & (1 << t.index()) != 0).collect();
            let mut c = ModelConfig::new(Variant::ALL[v], d, tasks);
            c.hidden_dim = h;
            c.ff_dim = f;
            c.n_transformer_layers = layers;
            c.n_bilstm_layers = layers;
            c.bilstm_units_per_dir = h;
            c.positional_encoding = pe;
            c
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn table_matches_instantiated_parameters(c in random_config(), seed in any::<u64>()) {
        let table = describe_parameters(&c);
        let model = init_model(c, seed).unwrap();
        prop_assert_eq!(table.total, model.parameter_count());
        prop_assert_eq!(table.rows.len(), model.parameters().len());
        for row in &table.rows {
            let t = model.parameter(&row.name).unwrap();
            prop_assert_eq!(t.shape(), row.shape.as_slice());
        }
    }

    #[test]
    fn forward_is_finite_for_extreme_inputs(c in random_config(), frames in 1usize..5, seed in any::<u64>()) {
        let model = init_model(c.clone(), seed).unwrap();
        let seq = random_seq(frames, c.input_dim, seed, 1e3);
        let (hidden, preds) = model.forward(&model.prepare(&seq).unwrap()).unwrap();
        prop_assert!(hidden.values().iter().all(|v| v.is_finite()));
        prop_assert_eq!(preds.len(), c.tasks.len());
        prop_assert!(preds.iter().all(|(_, v)| v.is_finite()));
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact(mut c in random_config(), seed in any::<u64>(), p in 0.0f64..0.9) {
        // Arbitrary f64 config fields must survive the JSON header exactly.
        c.dropout_p = p;
        let model = init_model(c, seed).unwrap();
        let back = decode_checkpoint(&encode_checkpoint(&model).unwrap()).unwrap();
        prop_assert_eq!(back, model);
    }
}

#[test]
fn checkpoint_errors() {
    let model = init_model(tiny_transformer(3, vec![Task::Mos]), 5).unwrap();
    let bytes = encode_checkpoint(&model).unwrap();

    let mut v = bytes.clone();
    v[4] = 9;
    assert!(matches!(decode_checkpoint(&v), Err(Error::Version { found: 9, expected: 1 })));

    let mut v = bytes.clone();
    v[0] = b'X';
    assert!(matches!(decode_checkpoint(&v), Err(Error::Format(_))));

    assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 3]), Err(Error::Integrity(_))));

    // Grow the first dim of the first tensor ("enc.0.attn.k.b", rank 1).
    let cfg_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let first = 12 + cfg_len + 4;
    let name_len = u32::from_le_bytes(bytes[first..first + 4].try_into().unwrap()) as usize;
    let dim_at = first + 4 + name_len + 4;
    let mut v = bytes.clone();
    v[dim_at] += 1;
    v.extend_from_slice(&[0; 4]);
    assert!(matches!(decode_checkpoint(&v), Err(Error::Integrity(_))));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.sqm");
    save_checkpoint(&model, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, model);
    assert!(matches!(loaded.check_tasks(&Task::ALL), Err(Error::TaskMismatch { .. })));
    loaded.check_tasks(&[Task::Mos]).unwrap();
}
