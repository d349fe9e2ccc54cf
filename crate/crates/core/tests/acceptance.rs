//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Run with
//! `cargo test -p trustauc --test acceptance`.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::RngCore;
use trustauc::data::{gen_gaussian_mixture, load_checkpoint, load_csv, save_checkpoint, write_csv};
use trustauc::harness::{self, AccessLog, DataSource, ExperimentConfig, LossKind, Phase};
use trustauc::losses::{auc_margin_batch, auc_margin_logits, bce_with_logits, inner_optima, AucState};
use trustauc::metrics::{best_f1_threshold, confusion_at, roc_auc, stratified_kfold};
use trustauc::model::{init_encoder, init_params, ModelParams};
use trustauc::moco::{info_nce, momentum_update, normalize_rows, KeyQueue, MocoState};
use trustauc::optim::{pesg_step, PesgState, SgdState};
use trustauc::trust::{class_trust, qa_trust, TrustConfig, TrustReport};
use trustauc::{Activation, Error, MocoConfig, ModelSpec, SplitMix64, SyntheticSpec};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn config(pairs: &[(&str, &str)]) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    for (k, v) in pairs {
        cfg.set(k, v).unwrap_or_else(|e| panic!("config {k} = {v}: {e}"));
    }
    cfg
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn central<F: FnMut(f64) -> f64>(mut f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn random_labels(rng: &mut SplitMix64, n: usize, p: f64) -> Vec<bool> {
    loop {
        let y: Vec<bool> = (0..n).map(|_| rng.bernoulli(p)).collect();
        if y.iter().any(|&v| v) && y.iter().any(|&v| !v) {
            return y;
        }
    }
}

const H: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-5;
const INSTANCES: usize = 100;

// 1. Gradient integrity --------------------------------------------------

fn grad_bce(rng: &mut SplitMix64) -> f64 {
    let n = 1 + (rng.next_f64() * 40.0) as usize;
    let z: Vec<f64> = (0..n).map(|_| rng.uniform(-6.0, 6.0)).collect();
    let y: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.3)).collect();
    let analytic = bce_with_logits(&z, &y).unwrap().d_scores;
    let numeric: Vec<f64> = (0..n)
        .map(|i| {
            central(
                |t| {
                    let mut zz = z.clone();
                    zz[i] = t;
                    bce_with_logits(&zz, &y).unwrap().value
                },
                z[i],
                H,
            )
        })
        .collect();
    rel_err(&analytic, &numeric)
}

/// Relative errors for the score, logit, a, b and alpha blocks.
fn grad_auc(rng: &mut SplitMix64) -> [f64; 5] {
    let n = 2 + (rng.next_f64() * 40.0) as usize;
    let y = random_labels(rng, n, 0.3);
    let h: Vec<f64> = (0..n).map(|_| rng.uniform(0.02, 0.98)).collect();
    let z: Vec<f64> = (0..n).map(|_| rng.uniform(-4.0, 4.0)).collect();
    let st = AucState {
        a: rng.uniform(-0.5, 1.5),
        b: rng.uniform(-0.5, 1.5),
        alpha: rng.uniform(0.0, 2.0),
        margin: rng.uniform(0.5, 1.5),
        prior: rng.uniform(0.05, 0.95),
    };
    let lg = auc_margin_batch(&h, &y, &st).unwrap();
    let value = |hh: &[f64], s: &AucState<f64>| auc_margin_batch(hh, &y, s).unwrap().value;

    let d_h: Vec<f64> = (0..n)
        .map(|i| {
            central(
                |t| {
                    let mut hh = h.clone();
                    hh[i] = t;
                    value(&hh, &st)
                },
                h[i],
                H,
            )
        })
        .collect();
    let lz = auc_margin_logits(&z, &y, &st).unwrap();
    let d_z: Vec<f64> = (0..n)
        .map(|i| {
            central(
                |t| {
                    let mut zz = z.clone();
                    zz[i] = t;
                    auc_margin_logits(&zz, &y, &st).unwrap().value
                },
                z[i],
                H,
            )
        })
        .collect();
    let d_a = central(|t| value(&h, &AucState { a: t, ..st }), st.a, H);
    let d_b = central(|t| value(&h, &AucState { b: t, ..st }), st.b, H);
    // Stay inside alpha >= 0 for the two-sided difference.
    let d_alpha = central(|t| value(&h, &AucState { alpha: t, ..st }), st.alpha.max(2.0 * H), H);
    let lg_alpha = if st.alpha < 2.0 * H {
        auc_margin_batch(&h, &y, &AucState { alpha: 2.0 * H, ..st }).unwrap().d_alpha
    } else {
        lg.d_alpha
    };
    [
        rel_err(&lg.d_scores, &d_h),
        rel_err(&lz.d_scores, &d_z),
        rel_err(&[lg.d_a], &[d_a]),
        rel_err(&[lg.d_b], &[d_b]),
        rel_err(&[lg_alpha], &[d_alpha]),
    ]
}

fn unit(v: &Array1<f64>) -> Array1<f64> {
    v / v.dot(v).sqrt()
}

/// InfoNCE w.r.t. the query, checked along directions tangent to the unit
/// sphere (the loss is only defined for unit queries).
fn grad_info_nce(rng: &mut SplitMix64) -> f64 {
    let dim = 2 + (rng.next_f64() * 14.0) as usize;
    let k = 4 * (1 + (rng.next_f64() * 8.0) as usize);
    let queue = KeyQueue::random(k, dim, rng.next_u64()).unwrap();
    let gauss = |rng: &mut SplitMix64| Array1::from_shape_fn(dim, |_| rng.gaussian());
    let q = unit(&gauss(rng));
    let kp = unit(&gauss(rng));
    let tau = rng.uniform(0.05, 1.0);
    let (_, g) = info_nce(q.view(), kp.view(), &queue, tau).unwrap();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for _ in 0..dim.min(6) {
        let mut v = gauss(rng);
        v = &v - &(&q * q.dot(&v));
        v = unit(&v);
        analytic.push(g.dot(&v));
        numeric.push(central(
            |t| {
                let qt = unit(&(&q + &(&v * t)));
                info_nce(qt.view(), kp.view(), &queue, tau).unwrap().0
            },
            0.0,
            H,
        ));
    }
    rel_err(&analytic, &numeric)
}

/// Backprop through a random MLP for `sum_ij G_ij * out_ij`. Instances with
/// a ReLU pre-activation near the kink are redrawn.
fn grad_mlp(rng: &mut SplitMix64) -> f64 {
    loop {
        let depth = 1 + (rng.next_f64() * 3.0) as usize;
        let mut dims = vec![1 + (rng.next_f64() * 6.0) as usize];
        for _ in 0..depth {
            dims.push(1 + (rng.next_f64() * 6.0) as usize);
        }
        let act = if rng.bernoulli(0.5) { Activation::Relu } else { Activation::Tanh };
        let spec = ModelSpec::encoder(dims.clone(), act).unwrap();
        let mut params: ModelParams<f64> = init_encoder(&spec, rng.next_u64());
        for w in params.iter_mut() {
            *w += rng.uniform(-0.3, 0.3);
        }
        let n = 1 + (rng.next_f64() * 8.0) as usize;
        let x = Array2::from_shape_fn((n, dims[0]), |_| rng.gaussian());
        let (out, trace) = params.forward_outputs(&x).unwrap();
        let near_kink = act == Activation::Relu
            && trace.pre[..trace.pre.len() - 1]
                .iter()
                .any(|z| z.iter().any(|v| v.abs() < 1e-3));
        if near_kink {
            continue;
        }
        let g = Array2::from_shape_fn(out.dim(), |_| rng.gaussian());
        let grads = params.backward_outputs(&trace, &g).unwrap();
        let analytic: Vec<f64> = grads.iter().copied().collect();
        let objective = |p: &ModelParams<f64>| (&p.forward_outputs(&x).unwrap().0 * &g).sum();
        let mut numeric = Vec::with_capacity(analytic.len());
        for idx in 0..analytic.len() {
            numeric.push(central(
                |t| {
                    let mut p = params.clone();
                    *p.iter_mut().nth(idx).unwrap() = t;
                    objective(&p)
                },
                *params.iter().nth(idx).unwrap(),
                H,
            ));
        }
        return rel_err(&analytic, &numeric);
    }
}

fn criterion_1() -> Outcome {
    let mut rng = SplitMix64::new(101);
    let mut worst = [0.0f64; 8];
    for _ in 0..INSTANCES {
        worst[0] = worst[0].max(grad_bce(&mut rng));
        for (w, e) in worst[1..6].iter_mut().zip(grad_auc(&mut rng)) {
            *w = w.max(e);
        }
        worst[6] = worst[6].max(grad_info_nce(&mut rng));
        worst[7] = worst[7].max(grad_mlp(&mut rng));
    }
    let names = ["bce", "auc/h", "auc/logit", "auc/a", "auc/b", "auc/alpha", "infonce/q", "mlp"];
    let detail = names
        .iter()
        .zip(worst)
        .map(|(n, w)| format!("{n} {w:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(worst.iter().all(|&w| w < GRAD_TOL), || format!("max rel err over {INSTANCES}: {detail}"))?;
    Ok(format!("max rel err over {INSTANCES} instances each: {detail}"))
}

// 2. AUC oracle ---------------------------------------------------------

fn pair_count_auc(s: &[f64], y: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for i in (0..s.len()).filter(|&i| y[i]) {
        for j in (0..s.len()).filter(|&j| !y[j]) {
            pairs += 1.0;
            if s[i] > s[j] {
                wins += 1.0;
            } else if s[i] == s[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn criterion_2() -> Outcome {
    let mut rng = SplitMix64::new(202);
    let mut worst = 0.0f64;
    let mut tied = 0;
    for _ in 0..1000 {
        let n = 2 + (rng.next_f64() * 199.0) as usize;
        let p = rng.uniform(0.05, 0.95);
        let y = random_labels(&mut rng, n, p);
        let levels = 1 + (rng.next_f64() * 20.0) as usize;
        let s: Vec<f64> = (0..n)
            .map(|_| (rng.next_f64() * levels as f64).floor() / levels as f64)
            .collect();
        let distinct: BTreeSet<u64> = s.iter().map(|v| v.to_bits()).collect();
        if distinct.len() < n {
            tied += 1;
        }
        worst = worst.max((roc_auc(&s, &y).unwrap() - pair_count_auc(&s, &y)).abs());
    }
    ensure(worst <= 1e-12, || format!("max |rank - pairs| = {worst:e}"))?;
    Ok(format!("1000 instances ({tied} with ties), max |diff| = {worst:.1e}"))
}

// 3. Saddle point -------------------------------------------------------

fn criterion_3() -> Outcome {
    let mut rng = SplitMix64::new(303);
    let spec = ModelSpec::new(vec![1, 1], Activation::Relu).unwrap();
    let mut worst_dist = 0.0f64;
    let mut worst_grad = 0.0f64;
    let mut worst_iters = 0;
    for _ in 0..100 {
        let n = 10 + (rng.next_f64() * 190.0) as usize;
        let n_pos = 1 + (rng.next_f64() * (n - 2) as f64) as usize;
        let y: Vec<bool> = (0..n).map(|i| i < n_pos).collect();
        let s: Vec<f64> = (0..n).map(|_| rng.uniform(0.01, 0.99)).collect();
        let prior = n_pos as f64 / n as f64;
        let margin = 1.0;
        let (a_star, b_star, alpha_star) = inner_optima(&s, &y, margin).unwrap();

        let mut aux = AucState::new(prior, margin).unwrap();
        let opt = PesgState::new(1.0, 1.0, 0.0).unwrap();
        let mut params: ModelParams<f64> = ModelParams::zeros(&spec);
        let zero = params.zeros_like();
        let mut iters = 0;
        loop {
            let lg = auc_margin_batch(&s, &y, &aux).unwrap();
            pesg_step(&mut params, &zero, &mut aux, &lg, &opt).unwrap();
            iters += 1;
            let dist = (aux.a - a_star).abs().max((aux.b - b_star).abs()).max((aux.alpha - alpha_star).abs());
            if dist < 1e-6 || iters == 1_000_000 {
                worst_dist = worst_dist.max(dist);
                break;
            }
        }
        worst_iters = worst_iters.max(iters);
        let at = AucState { a: a_star, b: b_star, alpha: alpha_star, margin, prior };
        let lg = auc_margin_batch(&s, &y, &at).unwrap();
        worst_grad = worst_grad.max(lg.d_a.abs()).max(lg.d_b.abs()).max(lg.d_alpha.abs());
    }
    ensure(worst_dist < 1e-3, || format!("PESG distance to optimum {worst_dist:e}"))?;
    ensure(worst_grad < 1e-12, || format!("gradient at optimum {worst_grad:e}"))?;
    Ok(format!(
        "100 vectors: max distance {worst_dist:.1e} (<= {worst_iters} iterations), max |grad| at optimum {worst_grad:.1e}"
    ))
}

// 4. Separable data -----------------------------------------------------

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let cfg = config(&[("hidden", "none"), ("dim", "2"), ("separation", "6"), ("noise_std", "1"), ("loss", "auc_max")]);
    ensure(cfg.auc_lr == 0.1 && cfg.auc_milestones == vec![15] && cfg.auc_decay == 0.1 && cfg.epochs == 30, || {
        "AUC path defaults changed".into()
    })?;
    let out = harness::finetune(&cfg, &AccessLog::new()).map_err(|e| e.to_string())?;
    let aucs: Vec<f64> = out.report.folds.iter().map(|f| f.auc).collect();
    let elapsed = start.elapsed();
    ensure(aucs.iter().all(|&a| a >= 0.999), || format!("fold AUCs {aucs:?}"))?;
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("fold test AUCs {aucs:?} in {elapsed:.1?}"))
}

// 5. Protocol fidelity --------------------------------------------------

fn exhaustive_best_f1(s: &[f64], y: &[bool]) -> (usize, usize) {
    // Every distinct score as a threshold, plus one above all scores.
    let mut cands: Vec<f64> = s.to_vec();
    cands.push(f64::INFINITY);
    let n_pos = y.iter().filter(|&&v| v).count();
    let mut best = (0usize, n_pos); // F1 = 2tp / (pred_pos + P), as (tp, denominator)
    for &t in &cands {
        let tp = s.iter().zip(y).filter(|(&v, &l)| l && v >= t).count();
        let pp = s.iter().filter(|&&v| v >= t).count();
        let (btp, bden) = best;
        if (tp as u128) * (bden as u128) > (btp as u128) * ((pp + n_pos) as u128) {
            best = (tp, pp + n_pos);
        }
    }
    best
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    // Fold counts on the reference label shape.
    let labels: Vec<bool> = (0..13_794 + 2_158).map(|i| i >= 13_794).collect();
    let folds = stratified_kfold(&labels, 5, 7).map_err(|e| e.to_string())?;
    let counts = folds.class_counts(&labels);
    ensure(counts.iter().all(|&(p, _)| p == 431 || p == 432), || format!("fold counts {counts:?}"))?;

    // Threshold search against exhaustive enumeration.
    let mut rng = SplitMix64::new(505);
    for _ in 0..500 {
        let n = 2 + (rng.next_f64() * 100.0) as usize;
        let y = random_labels(&mut rng, n, 0.3);
        let levels = 2 + (rng.next_f64() * 30.0) as usize;
        let s: Vec<f64> = (0..n)
            .map(|_| (rng.next_f64() * levels as f64).floor() / levels as f64)
            .collect();
        let (t, f1) = best_f1_threshold(&s, &y).map_err(|e| e.to_string())?;
        let (tp, den) = exhaustive_best_f1(&s, &y);
        let cm = confusion_at(&s, &y, t).unwrap();
        let (got_tp, got_den) = (cm.tp, cm.tp + cm.fp + positives(&y));
        ensure((got_tp as u128) * (den as u128) == (tp as u128) * (got_den as u128), || {
            format!("threshold {t} gives F1 {got_tp}/{got_den}, exhaustive best {tp}/{den}")
        })?;
        ensure((f1 - 2.0 * tp as f64 / den as f64).abs() < 1e-15, || "reported F1 mismatch".into())?;
    }

    // Saved models, their thresholds and the access log.
    let cfg = config(&[]);
    let log = AccessLog::new();
    let out = harness::finetune(&cfg, &log).map_err(|e| e.to_string())?;
    let data = harness::prepare_data(&cfg).map_err(|e| e.to_string())?;
    for run in &out.runs {
        let m = &run.metrics;
        let best = m.val_accuracy_by_epoch.iter().cloned().fold(f64::MIN, f64::max);
        let first_best = m.val_accuracy_by_epoch.iter().position(|&a| a == best).unwrap();
        ensure(m.selected_epoch == first_best, || format!("fold {} selected epoch {} vs best {first_best}", m.fold, m.selected_epoch))?;
        let val: Vec<usize> = out.folds.validation_indices(m.fold).into_iter().map(|i| out.pool[i]).collect();
        let probs = run.checkpoint.params.predict_proba(&data.table.rows(&val)).unwrap().to_vec();
        let yv = data.table.labels_at(&val);
        let (t, _) = best_f1_threshold(&probs, &yv).unwrap();
        let acc = confusion_at(&probs, &yv, t).unwrap().accuracy();
        ensure(Some(t) == run.checkpoint.threshold && acc == best, || {
            format!("fold {}: saved model reaches val accuracy {acc}, best epoch had {best}", m.fold)
        })?;
    }
    let test: BTreeSet<usize> = out.test.iter().copied().collect();
    ensure(log.indices(Phase::Test) == test, || "test phase read rows outside the test split".into())?;
    for phase in [Phase::Pretrain, Phase::Train, Phase::Validation] {
        ensure(log.overlap(Phase::Test, phase).is_empty(), || format!("test rows read during {phase:?}"))?;
    }

    // Rewriting every test row's features leaves every trained model unchanged.
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean.csv");
    let dirty = dir.path().join("dirty.csv");
    let table = gen_gaussian_mixture(&SyntheticSpec::default()).unwrap();
    write_csv(&table, &clean, "label").unwrap();
    let mut altered = table.clone();
    for &i in &out.test {
        for v in altered.features.row_mut(i) {
            *v = rng.uniform(-5.0, 5.0);
        }
    }
    write_csv(&altered, &dirty, "label").unwrap();
    let run_on = |path: &Path| {
        let mut c = cfg.clone();
        c.data = DataSource::Csv { path: path.to_path_buf(), label_column: "label".into() };
        harness::finetune(&c, &AccessLog::new()).unwrap()
    };
    let (a, b) = (run_on(&clean), run_on(&dirty));
    ensure(a.test == out.test && b.test == out.test, || "test split moved".into())?;
    for (ra, rb) in a.runs.iter().zip(&b.runs) {
        ensure(ra.checkpoint == rb.checkpoint, || format!("fold {} model depends on test rows", ra.metrics.fold))?;
    }
    ensure(a.report.folds != b.report.folds, || "altered test rows did not reach evaluation".into())?;
    Ok(format!(
        "fold positives {:?}; 500 F1 searches match enumeration; 5 saved models re-verified; {} test rows read only at test time and irrelevant to training ({:.1?})",
        counts.iter().map(|c| c.0).collect::<Vec<_>>(),
        test.len(),
        start.elapsed()
    ))
}

fn positives(y: &[bool]) -> usize {
    y.iter().filter(|&&v| v).count()
}

// 6. Trust --------------------------------------------------------------

fn criterion_6() -> Outcome {
    let unit_cfg = TrustConfig::default();
    ensure(qa_trust(1.0, true, &unit_cfg).unwrap() == 1.0, || "prob 1, correct".into())?;
    ensure(qa_trust(1.0, false, &unit_cfg).unwrap() == 0.0, || "prob 1, wrong".into())?;
    ensure(qa_trust(0.0, false, &unit_cfg).unwrap() == 1.0, || "prob 0, correct negative".into())?;
    ensure((qa_trust(0.9f64, false, &unit_cfg).unwrap() - 0.1).abs() < 1e-15, || "0.9 wrong".into())?;
    let shaped = TrustConfig { reward_exponent: 2.0, penalty_exponent: 1.0, threshold: 0.5 };
    ensure((qa_trust(0.7f64, true, &shaped).unwrap() - 0.49).abs() < 1e-15, || "0.7^2".into())?;
    ensure(matches!(qa_trust(1.5, true, &unit_cfg), Err(Error::Domain(_))), || "range check".into())?;

    let mut rng = SplitMix64::new(606);
    for _ in 0..1000 {
        let cfg = TrustConfig {
            reward_exponent: rng.uniform(0.2, 4.0),
            penalty_exponent: rng.uniform(0.2, 4.0),
            threshold: rng.uniform(0.05, 0.95),
        };
        let p = rng.next_f64();
        let y = rng.bernoulli(0.4);
        let c_true = if y { p } else { 1.0 - p };
        let exp = if (p >= cfg.threshold) == y { cfg.reward_exponent } else { cfg.penalty_exponent };
        let t = qa_trust(p, y, &cfg).unwrap();
        ensure(t == c_true.powf(exp), || format!("qa_trust({p}, {y}) = {t}, expected c^exp"))?;
        ensure((0.0..=1.0).contains(&t), || "trust out of range".into())?;

        // Both predicted positive: non-decreasing in p for y = 1,
        // non-increasing for y = 0.
        let (lo, hi) = {
            let u = rng.uniform(cfg.threshold, 1.0);
            let v = rng.uniform(cfg.threshold, 1.0);
            (u.min(v), u.max(v))
        };
        ensure(qa_trust(lo, true, &cfg).unwrap() <= qa_trust(hi, true, &cfg).unwrap(), || "monotone (y=1)".into())?;
        ensure(qa_trust(lo, false, &cfg).unwrap() >= qa_trust(hi, false, &cfg).unwrap(), || "monotone (y=0)".into())?;
        // Overcautious: less confidence on a correct answer strictly lowers trust.
        if lo < hi {
            ensure(qa_trust(lo, true, &cfg).unwrap() < qa_trust(hi, true, &cfg).unwrap(), || "overcautious".into())?;
        }
    }

    // Restricted means.
    for _ in 0..100 {
        let n = 2 + (rng.next_f64() * 200.0) as usize;
        let y = random_labels(&mut rng, n, 0.2);
        let probs: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
        let cfg = TrustConfig::with_threshold(rng.next_f64());
        let report = TrustReport::compute(&probs, &y, &cfg).unwrap();
        for class in [true, false] {
            let mut sum = 0.0;
            let mut count = 0.0;
            for (&p, &l) in probs.iter().zip(&y) {
                if l == class {
                    sum += qa_trust(p, l, &cfg).unwrap();
                    count += 1.0;
                }
            }
            let got = class_trust(&probs, &y, &cfg, class).unwrap();
            let want = sum / count;
            let from_report = if class { report.trust_pos } else { report.trust_neg };
            ensure(got == want && from_report == want, || format!("class {class}: {got} / {from_report} vs {want}"))?;
        }
    }
    let oracle: Vec<f64> = [true, false, true].iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
    let r = TrustReport::compute(&oracle, &[true, false, true], &unit_cfg).unwrap();
    ensure(r.trust_pos == 1.0 && r.trust_neg == 1.0, || "oracle classifier".into())?;
    Ok("fixed values, c^exp on 1000 draws, monotone and overcautious properties, exact restricted means".into())
}

// 7. Trust direction ----------------------------------------------------

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let spec = SyntheticSpec::default();
    let ratio = spec.n_neg as f64 / spec.n_pos as f64;
    ensure((ratio - 6.4).abs() < 0.1 && spec.mean_separation == 2.0 && spec.noise_std == 1.0, || {
        "default synthetic spec changed".into()
    })?;
    let mut wins = 0;
    let mut margins = Vec::new();
    for seed in 0..20u64 {
        let mut cfg = config(&[("seed", &seed.to_string())]);
        cfg.loss = LossKind::AucMax;
        let auc = harness::finetune(&cfg, &AccessLog::new()).map_err(|e| e.to_string())?.report;
        cfg.loss = LossKind::Ce;
        let ce = harness::finetune(&cfg, &AccessLog::new()).map_err(|e| e.to_string())?.report;
        let (ta, tc) = (auc.mean("trust_pos"), ce.mean("trust_pos"));
        if ta > tc {
            wins += 1;
        }
        margins.push(ta - tc);
    }
    let elapsed = start.elapsed();
    let mean_gap = margins.iter().sum::<f64>() / margins.len() as f64;
    ensure(wins >= 15, || format!("AUC-max ahead in {wins}/20 seeds"))?;
    ensure(elapsed < Duration::from_secs(600), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "ratio {ratio:.2}: AUC-max positive trust ahead in {wins}/20 seeds, mean gap {mean_gap:+.3} ({elapsed:.1?})"
    ))
}

// 8. Pretraining benefit ------------------------------------------------

/// Reference-size data (13,794 / 2,158) in 64 dimensions, so that 5% of the
/// training pool is a few hundred labels, while pretraining sees the whole
/// pool without labels.
fn low_label_config(seed: u64) -> ExperimentConfig {
    config(&[
        ("seed", &seed.to_string()),
        ("scale", "1"),
        ("dim", "64"),
        ("separation", "3"),
        ("label_fraction", "0.05"),
        ("loss", "auc_max"),
        ("key_momentum", "0.99"),
        ("aug_noise_std", "2.0"),
    ])
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let mut wins = 0;
    let (mut sum_pre, mut sum_scratch) = (0.0, 0.0);
    for seed in 0..20u64 {
        let cfg = low_label_config(seed);
        let encoder = harness::pretrain(&cfg, &AccessLog::new()).map_err(|e| e.to_string())?;
        let scratch = harness::finetune_with(&cfg, None, &AccessLog::new()).map_err(|e| e.to_string())?;
        let pre = harness::finetune_with(&cfg, Some(&encoder.checkpoint.params), &AccessLog::new())
            .map_err(|e| e.to_string())?;
        let (a, b) = (pre.report.mean("auc"), scratch.report.mean("auc"));
        if a > b {
            wins += 1;
        }
        sum_pre += a;
        sum_scratch += b;
    }
    let elapsed = start.elapsed();
    ensure(wins >= 15, || format!("pretrained ahead in {wins}/20 seeds (mean {:.4} vs {:.4})", sum_pre / 20.0, sum_scratch / 20.0))?;
    ensure(elapsed < Duration::from_secs(600), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "5% labels: pretrained ahead in {wins}/20 seeds, mean test AUC {:.4} vs {:.4} ({elapsed:.1?})",
        sum_pre / 20.0,
        sum_scratch / 20.0
    ))
}

// 9. MoCo mechanics -----------------------------------------------------

fn log_add_exp(a: f64, b: f64) -> f64 {
    a.max(b) + (-(a - b).abs()).exp().ln_1p()
}

/// Softmax cross-entropy with target 0, via a pairwise log-add-exp fold.
fn cross_entropy_target0(logits: &[f64]) -> f64 {
    logits[1..].iter().fold(logits[0], |acc, &l| log_add_exp(acc, l)) - logits[0]
}

fn criterion_9() -> Outcome {
    let mut rng = SplitMix64::new(909);

    // Queue cardinality across enqueues of every admissible batch size.
    let mut queue = KeyQueue::random(24, 5, 3).unwrap();
    for step in 0..200 {
        let b = [1, 2, 3, 4, 6, 8, 12, 24][step % 8];
        let raw = Array2::from_shape_fn((b, 5), |_| rng.gaussian());
        queue.enqueue(&normalize_rows(&raw).unwrap().0).unwrap();
        ensure(queue.len() == 24, || format!("queue size {} after step {step}", queue.len()))?;
    }
    ensure(queue.enqueue(&Array2::zeros((5, 5))).is_err() && queue.len() == 24, || "rejected batch changed the queue".into())?;

    // Momentum update fixed point and copy.
    let spec = ModelSpec::encoder(vec![4, 6, 3], Activation::Relu).unwrap();
    let q: ModelParams<f64> = init_encoder(&spec, 1);
    let k0: ModelParams<f64> = init_encoder(&spec, 2);
    let mut k = k0.clone();
    momentum_update(&mut k, &q, 1.0).unwrap();
    ensure(k == k0, || "m = 1 moved the key encoder".into())?;
    momentum_update(&mut k, &q, 0.0).unwrap();
    ensure(k == q, || "m = 0 did not copy the query encoder".into())?;

    // InfoNCE against an independent cross-entropy.
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let dim = 2 + (rng.next_f64() * 30.0) as usize;
        let size = 1 + (rng.next_f64() * 64.0) as usize;
        let queue = KeyQueue::random(size, dim, rng.next_u64()).unwrap();
        let q = unit(&Array1::from_shape_fn(dim, |_| rng.gaussian()));
        let kp = unit(&Array1::from_shape_fn(dim, |_| rng.gaussian()));
        let tau = rng.uniform(0.03, 1.0);
        let (loss, _) = info_nce(q.view(), kp.view(), &queue, tau).unwrap();
        let mut logits = vec![q.dot(&kp) / tau];
        logits.extend(queue.entries().rows().into_iter().map(|r| r.dot(&q) / tau));
        worst = worst.max((loss - cross_entropy_target0(&logits)).abs());
    }
    ensure(worst <= 1e-12, || format!("InfoNCE differs from cross-entropy by {worst:e}"))?;

    // Training-step cardinality and loss decrease on two-cluster data.
    let mut decreases = Vec::new();
    for seed in 0..5u64 {
        let cfg = config(&[("seed", &seed.to_string()), ("separation", "4"), ("key_momentum", "0.99")]);
        let out = harness::pretrain(&cfg, &AccessLog::new()).map_err(|e| e.to_string())?;
        let l = &out.losses;
        ensure(l.len() == 200, || "expected 200 steps".into())?;
        let lead = l[..20].iter().sum::<f64>() / 20.0;
        let trail = l[l.len() - 20..].iter().sum::<f64>() / 20.0;
        ensure(trail < lead, || format!("seed {seed}: trailing {trail:.4} >= leading {lead:.4}"))?;
        decreases.push(format!("{lead:.2}->{trail:.2}"));
    }
    let moco_cfg = MocoConfig { embed_dim: 4, queue_size: 16, batch_size: 8, ..MocoConfig::default() };
    let mut state = MocoState::<f64>::new(&ModelSpec::encoder(vec![3, 5, 4], Activation::Relu).unwrap(), moco_cfg, 4)
        .map_err(|e| e.to_string())?;
    let mut opt = SgdState::new(&state.query, 0.05, 0.9, 0.0).unwrap();
    for _ in 0..30 {
        let x = Array2::from_shape_fn((8, 3), |_| rng.gaussian());
        state.train_step(&x, &mut opt, &mut rng).map_err(|e| e.to_string())?;
        ensure(state.queue.len() == 16, || "train_step changed queue size".into())?;
    }
    Ok(format!(
        "queue size constant, m=1/m=0 exact, InfoNCE vs log-add-exp max diff {worst:.1e}, loss lead->trail {}",
        decreases.join(" ")
    ))
}

// 10. Determinism and persistence --------------------------------------

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn criterion_10() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(&[("seed", "11"), ("epochs", "8")]);
    cfg.output_dir = tmp.path().join("a");
    harness::run_finetune(&cfg).map_err(|e| e.to_string())?;
    cfg.output_dir = tmp.path().join("b");
    harness::run_finetune(&cfg).map_err(|e| e.to_string())?;
    let (a, b) = (dir_bytes(&tmp.path().join("a")), dir_bytes(&tmp.path().join("b")));
    ensure(a == b, || "run outputs differ between identical runs".into())?;
    ensure(a.iter().any(|(n, _)| n == "report.json"), || "no report.json".into())?;

    // Checkpoints.
    let spec = ModelSpec::new(vec![5, 7, 3, 1], Activation::Tanh).unwrap();
    let mut rng = SplitMix64::new(1010);
    let mut params: ModelParams<f64> = init_params(&spec, 5).unwrap();
    for w in params.iter_mut() {
        *w = rng.gaussian() * 10f64.powi((rng.next_f64() * 20.0) as i32 - 10);
    }
    let mut ckpt = trustauc::Checkpoint::new(params, "acceptance", 5);
    ckpt.threshold = Some(1.0 / 3.0);
    ckpt.aux = Some(AucState { a: 0.1, b: std::f64::consts::PI, alpha: 1e-300, margin: 1.0, prior: 0.135 });
    let path = tmp.path().join("m.ckpt");
    save_checkpoint(&ckpt, &path).unwrap();
    let back = load_checkpoint(&path).map_err(|e| e.to_string())?;
    let bits = |c: &trustauc::Checkpoint| c.params.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    ensure(bits(&back) == bits(&ckpt) && back == ckpt, || "checkpoint round trip not bitwise".into())?;

    // Malformed CSV fixtures: (contents, expected row, expected column).
    let fixtures: [(&str, &str, Option<(usize, usize)>); 9] = [
        ("non-numeric", "x0,x1,label\n1,2,0\n3,abc,1\n", Some((3, 2))),
        ("nan", "x0,x1,label\n1,NaN,0\n3,4,1\n", Some((2, 2))),
        ("inf", "x0,x1,label\n1,2,0\ninf,4,1\n", Some((3, 1))),
        ("empty cell", "x0,x1,label\n1,,0\n3,4,1\n", Some((2, 2))),
        ("short row", "x0,x1,label\n1,2,0\n3,1\n", Some((3, 3))),
        ("long row", "x0,x1,label\n1,2,0,9\n3,4,1\n", Some((2, 4))),
        ("bad label", "x0,x1,label\n1,2,0\n3,4,2\n", Some((3, 3))),
        ("missing label column", "x0,x1,y\n1,2,0\n3,4,1\n", None),
        ("single class", "x0,x1,label\n1,2,0\n3,4,0\n", None),
    ];
    for (name, text, expect) in fixtures {
        let p = tmp.path().join("bad.csv");
        std::fs::write(&p, text).unwrap();
        match (load_csv(&p, "label"), expect) {
            (Err(Error::Ingest { row, column, .. }), Some(rc)) => {
                ensure((row, column) == rc, || format!("{name}: reported ({row}, {column}), expected {rc:?}"))?
            }
            (Err(Error::Dataset(msg)), None) => {
                ensure(!msg.is_empty(), || format!("{name}: empty diagnostic"))?
            }
            (other, _) => return Err(format!("{name}: unexpected result {other:?}")),
        }
    }
    Ok(format!("{} output files byte-identical; checkpoint bitwise; 9 malformed CSVs rejected with positions", a.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient integrity", criterion_1),
        ("AUC oracle equivalence", criterion_2),
        ("saddle-point correctness", criterion_3),
        ("separable-data optimality", criterion_4),
        ("protocol fidelity", criterion_5),
        ("trust unit suite", criterion_6),
        ("positive-class trust direction", criterion_7),
        ("pretraining benefit", criterion_8),
        ("MoCo mechanics", criterion_9),
        ("determinism and persistence", criterion_10),
    ];
    let filter: Vec<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {id:>2} {name} [{secs:.1}s]: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {id:>2} {name} [{secs:.1}s]: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
