use super::*;
use crate::cells::CellKind;
use crate::tasks::TaskKind;

fn small(task: TaskKind, model: CellKind) -> RunConfig {
    let mut c = RunConfig::new(task, model);
    c.n_h = 8;
    c.eval_size = Some(if task.is_episodic() { 6 } else { 300 });
    c.seed = 5;
    c
}

fn trainer(task: TaskKind, model: CellKind) -> Trainer {
    Trainer::new(small(task, model)).unwrap()
}

fn max_diff(a: &[Tensor], b: &[Tensor]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.data().iter().zip(y.data()).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

/// Straight-line Adam used to check that nothing else touches gradients.
fn reference_adam(params: &mut [Tensor], grads: &[Tensor], m: &mut [Vec<f64>], v: &mut [Vec<f64>], t: i32) {
    let (lr, b1, b2, eps) = (1e-3, 0.9, 0.999, 1e-8);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        for (k, (p, &g)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[i][k] = b1 * m[i][k] + (1.0 - b1) * g;
            v[i][k] = b2 * v[i][k] + (1.0 - b2) * g * g;
            let mh = m[i][k] / (1.0 - f64::powi(b1, t));
            let vh = v[i][k] / (1.0 - f64::powi(b2, t));
            *p -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

#[test]
fn train_step_is_plain_adam_on_raw_gradients() {
    for (task, model) in [(TaskKind::Copy, CellKind::Alstm), (TaskKind::Arith, CellKind::Lstm)] {
        let mut probe = trainer(task, model);
        let mut real = trainer(task, model);
        let mut params = probe.model().params().tensors().to_vec();
        let mut m: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
        let mut v = m.clone();
        for t in 1..=4 {
            // The probe sees the same data and parameters as the real trainer.
            probe.model_mut().params_mut().tensors_mut().clone_from_slice(&params);
            let g = probe.compute_gradients().unwrap();
            reference_adam(&mut params, &g.grads, &mut m, &mut v, t);
            // Advances the probe's data position; its parameters are reset above.
            probe.apply(&g).unwrap();
            let cost = real.train_step().unwrap();
            assert_eq!(cost, g.cost);
            assert!(max_diff(real.model().params().tensors(), &params) < 1e-15, "{task} step {t}");
        }
        assert_eq!(real.step(), 4);
        assert_eq!(real.examples_seen(), 8);
    }
}

#[test]
fn long_window_equals_full_bptt() {
    for kind in [CellKind::Lstm, CellKind::Alstm, CellKind::Urnn] {
        let t = trainer(TaskKind::Copyvar, kind);
        let model = t.model();
        let ep = copy_episode(&t.config().copy_task(), 1, 0);
        let init = model.zero_state(1);
        let full = run_sequence(model, &ep, &init, true).unwrap();
        let (loss, grads) = tbptt_gradients(model, &ep, &init, ep.len() + 7).unwrap();
        assert!((loss - full.loss).abs() < 1e-12);
        assert!(max_diff(&grads, full.grads.as_ref().unwrap()) < 1e-12, "{kind}");

        // Shorter windows keep the forward pass, so the loss is unchanged,
        // but truncation changes the gradient.
        let (l30, g30) = tbptt_gradients(model, &ep, &init, 30).unwrap();
        assert!((l30 - full.loss).abs() < 1e-9);
        assert!(max_diff(&g30, full.grads.as_ref().unwrap()) > 1e-9);
    }
}

fn log_softmax_at(row: &[f64], k: usize) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
    row[k] - m - z.ln()
}

/// Loss recomputed position by position from full logits.
fn per_position_loss(model: &Model, ep: &Episode, init: &[Vec<Tensor>]) -> (f64, Vec<f64>) {
    let mut tape = Tape::new();
    let p = model.on_tape_frozen(&mut tape);
    let mut state = Model::state_on_tape(&mut tape, init);
    let mut total = 0.0;
    let mut each = Vec::new();
    for t in 0..ep.len() {
        let x = tape.constant(Tensor::one_hot(&ep.inputs[t..=t], model.spec().n_in));
        let (s, logits) = model.step(&mut tape, &p, &state, x).unwrap();
        state = s;
        let nll = -log_softmax_at(tape.value(logits).row_slice(0), ep.targets[t]);
        each.push(nll);
        if ep.mask[t] {
            total += nll;
        }
    }
    (total, each)
}

#[test]
fn masked_loss_matches_per_position_oracle() {
    let t = trainer(TaskKind::Copy, CellKind::Alstm);
    let ep = copy_episode(&t.config().copy_task(), 9, 3);
    let init = t.model().zero_state(1);
    let (expected, each) = per_position_loss(t.model(), &ep, &init);
    let got = run_sequence(t.model(), &ep, &init, false).unwrap();
    assert!((got.loss - expected).abs() < 1e-12);
    assert_eq!(got.n_masked, ep.n_masked());
    // Unmasked steps carry a nonzero loss that must not be counted.
    assert!(each.iter().zip(&ep.mask).any(|(l, m)| !m && *l > 0.1));

    let mut s = Stream::new(TaskKind::Arith, 2, 0).unwrap();
    let t = trainer(TaskKind::Arith, CellKind::Lstm);
    let init = t.model().zero_state(1);
    for _ in 0..3 {
        let w = s.next_window(100).unwrap();
        let (expected, _) = per_position_loss(t.model(), &w, &init);
        let got = run_sequence(t.model(), &w, &init, false).unwrap();
        assert!((got.loss - expected).abs() < 1e-12);
    }
}

fn zero_head(model: &mut Model) {
    for name in ["out.w", "out.b"] {
        let id = model.params().id(name).unwrap();
        let t = model.params_mut().get_mut(id);
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
}

#[test]
fn uniform_predictor_costs_log_vocab() {
    let mut t = trainer(TaskKind::Copy, CellKind::Lstm);
    zero_head(t.model_mut());
    let m = t.evaluate().unwrap();
    let v = t.data().vocab().len() as f64;
    assert!((m.cost - 10.0 * v.ln()).abs() < 1e-9, "{}", m.cost);
    assert_eq!(m.cost_unit, "nats/sequence");

    let mut t = trainer(TaskKind::Arith, CellKind::Alstm);
    zero_head(t.model_mut());
    let m = t.evaluate().unwrap();
    assert!((m.cost - 14f64.ln()).abs() < 1e-9);
    assert_eq!(m.cost_unit, "nats/symbol");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.bin");
    std::fs::write(&path, (0..4000u32).map(|i| (i * 7 % 251) as u8).collect::<Vec<_>>()).unwrap();
    let mut c = small(TaskKind::Bytes, CellKind::Lstm);
    c.data = Some(path);
    c.eval_size = None;
    let mut t = Trainer::new(c).unwrap();
    zero_head(t.model_mut());
    let m = t.evaluate().unwrap();
    assert!((m.cost - 256f64.ln()).abs() < 1e-9);
    // 10% of 4000 bytes predicts 399 next symbols.
    assert_eq!(m.masked_symbols, 399);
}

#[test]
fn untrained_copy_cost_is_near_uniform() {
    let t = trainer(TaskKind::Copy, CellKind::Alstm);
    let m = t.evaluate().unwrap();
    let v = t.data().vocab().len() as f64;
    assert!((m.cost - 10.0 * v.ln()).abs() < 1.5, "{}", m.cost);
}

#[test]
fn run_tracker_counts_segments() {
    let out = |mask: Vec<bool>, hits: Vec<bool>| SequenceOutcome {
        loss: 0.0,
        n_masked: hits.len(),
        n_correct: hits.iter().filter(|&&h| h).count(),
        hits,
        mask,
        final_state: Vec::new(),
        grads: None,
    };
    let mut tr = RunTracker::default();
    tr.feed(&out(vec![false, true, true, false, true], vec![true, true, false]));
    // The last run continues into the next window.
    tr.feed(&out(vec![true, false, true], vec![true, true]));
    tr.close();
    assert_eq!((tr.runs, tr.exact), (3, 2));

    let mut perfect = RunTracker::default();
    perfect.feed(&out(vec![true; 4], vec![true; 4]));
    perfect.close();
    assert_eq!(ratio(perfect.exact, perfect.runs), 1.0);
}

#[test]
fn evaluation_is_deterministic_and_pure() {
    for task in [TaskKind::Copy, TaskKind::Xml, TaskKind::Assign] {
        let t = trainer(task, CellKind::Alstm);
        let before = t.model().params().tensors().to_vec();
        let a = t.evaluate().unwrap();
        let b = t.evaluate().unwrap();
        assert_eq!(a, b);
        assert_eq!(t.model().params().tensors(), &before[..]);
        let c = evaluate(t.model(), t.data(), t.config().eval_size(), 12345).unwrap();
        assert_ne!(a.cost, c.cost);
    }
}

#[test]
fn gradients_do_not_depend_on_thread_count() {
    let grads = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut c = small(TaskKind::Assign, CellKind::Alstm);
            c.minibatch = 5;
            c.n_copies = 2;
            let mut t = Trainer::new(c).unwrap();
            t.train_step().unwrap();
            t.compute_gradients().unwrap().grads
        })
    };
    assert_eq!(grads(1), grads(4));
}

#[test]
fn non_finite_parameters_abort() {
    let mut t = trainer(TaskKind::Copy, CellKind::Lstm);
    let id = t.model().params().id("out.b").unwrap();
    t.model_mut().params_mut().get_mut(id).data_mut()[0] = f64::NAN;
    assert!(matches!(t.train_step(), Err(Error::NonFinite(_))));
    assert_eq!(t.step(), 0);
}

#[test]
fn online_state_carries_across_windows() {
    let mut t = trainer(TaskKind::Xml, CellKind::Lstm);
    let zero = t.model().zero_state(1);
    t.compute_gradients().unwrap();
    let Feed::Streams { states, .. } = &t.feed else {
        panic!("online feed expected");
    };
    assert_eq!(states.len(), 2);
    assert_ne!(states[0], zero);
}

#[test]
fn training_reduces_copy_cost() {
    let mut c = small(TaskKind::Copy, CellKind::Lstm);
    c.n_h = 16;
    c.learning_rate = 1e-2;
    let mut t = Trainer::new(c).unwrap();
    let first: f64 = (0..5).map(|_| t.train_step().unwrap()).sum::<f64>() / 5.0;
    for _ in 0..150 {
        t.train_step().unwrap();
    }
    let last: f64 = (0..5).map(|_| t.train_step().unwrap()).sum::<f64>() / 5.0;
    assert!(last < first - 1.0, "{first} -> {last}");
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for kind in CellKind::ALL {
        let mut c = small(TaskKind::Copy, kind);
        if kind == CellKind::Alstm {
            c.n_copies = 3;
            c.n_heads = 2;
            c.layers = 2;
        }
        let mut t = Trainer::new(c).unwrap();
        t.train_step().unwrap();
        let path = save_checkpoint(dir.path(), kind.name(), t.model(), t.config(), t.step()).unwrap();
        let (loaded, manifest) = load_checkpoint(&path).unwrap();
        assert_eq!(manifest.step, 1);
        assert_eq!(manifest.config, *t.config());
        assert_eq!(loaded.params().tensors(), t.model().params().tensors());
        assert_eq!(loaded.permutations(), t.model().permutations());
        let a = t.evaluate().unwrap();
        let b = evaluate(&loaded, t.data(), t.config().eval_size(), manifest.eval_seed).unwrap();
        assert_eq!(a, b, "{kind}");
    }
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let t = trainer(TaskKind::Copy, CellKind::Alstm);
    let path = save_checkpoint(dir.path(), "c", t.model(), t.config(), 0).unwrap();
    let bin = dir.path().join("c.bin");
    let mut bytes = std::fs::read(&bin).unwrap();
    bytes[17] ^= 1;
    std::fs::write(&bin, &bytes).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    bytes.truncate(40);
    std::fs::write(&bin, &bytes).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    std::fs::write(&path, "{\"format\":").unwrap();
    assert!(load_checkpoint(&path).is_err());
    assert!(matches!(
        load_checkpoint(&dir.path().join("missing.json")),
        Err(Error::Io { .. })
    ));
}

fn strip_wall(csv: &str) -> Vec<String> {
    csv.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
        .collect()
}

#[test]
fn run_directory_is_deterministic() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small(TaskKind::Assign, CellKind::Alstm);
        c.max_steps = 7;
        c.eval_every = 3;
        c.log_every = 2;
        c.checkpoint_every = 3;
        let out = train_to_dir(c, dir.path()).unwrap();
        let csv = std::fs::read_to_string(&out.curve).unwrap();
        let manifest = std::fs::read_to_string(&out.manifest).unwrap();
        let ckpt = std::fs::read(dir.path().join("checkpoints/final.bin")).unwrap();
        assert!(dir.path().join("checkpoints/step-6.json").exists());
        assert!(!dir.path().join("checkpoints/step-7.json").exists());
        (csv, manifest, ckpt, out.records)
    };
    let (csv, manifest, ckpt, records) = run();
    let again = run();
    assert_eq!(strip_wall(&csv), strip_wall(&again.0));
    assert_eq!(manifest, again.1);
    assert_eq!(ckpt, again.2);

    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], CURVE_CSV_HEADER);
    let steps: Vec<u64> = records.iter().map(|r| r.step).collect();
    assert_eq!(steps, [2, 3, 4, 6, 7]);
    assert_eq!(lines.len(), 1 + steps.len());
    assert!(records.iter().filter(|r| r.eval.is_some()).map(|r| r.step).eq([3, 6, 7]));
    assert!(lines[1].split(',').nth(3) == Some(""));
}

#[test]
fn drivers_reject_the_wrong_task_kind() {
    assert!(train_episodic(small(TaskKind::Xml, CellKind::Lstm)).is_err());
    assert!(train_online(small(TaskKind::Copy, CellKind::Lstm)).is_err());
    let mut c = small(TaskKind::Copy, CellKind::Lstm);
    c.max_steps = 2;
    c.eval_every = 0;
    let records = train_episodic(c).unwrap();
    assert_eq!(records.len(), 1);
    assert!(records[0].eval.is_some());
}

#[test]
fn config_validation() {
    let mut c = small(TaskKind::Copy, CellKind::Lstm);
    c.minibatch = 0;
    assert!(Trainer::new(c).is_err());
    let mut c = small(TaskKind::Copy, CellKind::Lstm);
    c.n_heads = 3;
    assert!(Trainer::new(c).is_err());
    let mut c = small(TaskKind::Copy, CellKind::Alstm);
    c.n_copies = 0;
    assert!(Trainer::new(c).is_err());
    assert!(Trainer::new(small(TaskKind::Bytes, CellKind::Lstm)).is_err());
    let c = RunConfig::new(TaskKind::Arith, CellKind::Alstm);
    assert!(c.use_h_for_update);
    assert_eq!(RunConfig::new(TaskKind::Bytes, CellKind::Lstm).minibatch, 10);
    let json = serde_json::to_string(&c).unwrap();
    assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), c);
}
