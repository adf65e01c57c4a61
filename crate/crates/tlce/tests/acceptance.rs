//! Acceptance suite: one test per release criterion, each printing a PASS
//! line with its measured numbers.
//!
//! Run with `cargo test -p tlce --test acceptance -- --nocapture`.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use std::time::Instant;
use tlce::data::{generate_synth, split_sessions, ClassData, LabeledDataset, SessionDataset};
use tlce::ensemble::{classify, EnsembleConfig};
use tlce::harness::{run_protocol, ProtocolRun, ProtocolSpec};
use tlce::io;
use tlce::memory::{compute_prototype, ExplicitMemory, MemoryEntry, NetSelector};
use tlce::model::{init_params, ArchitectureSpec, HeadSpec, NetworkParams};
use tlce::seeds;
use tlce::tensor::{cosine, log_softmax_ce, Tensor};
use tlce::training::{
    batch_loss_and_grads, meta_train_rhd, pretrain_ce, sharpening, softabs_attention, train_tkn,
    LossKind, SharpeningConfig, TrainConfig, TrainLogger,
};

// ── Criterion: gradient oracle ────────────────────────────────────────
// Analytic gradients of both training losses match central finite
// differences (h = 1e-5) with max relative error < 1e-4 on every
// coordinate with |g| > 1e-6, over 20 random small networks and batches.

fn flatten(params: &NetworkParams) -> Vec<f64> {
    params
        .param_tensors()
        .iter()
        .flat_map(|t| t.data().to_vec())
        .collect()
}

fn write_flat(params: &mut NetworkParams, flat: &[f64]) {
    let mut off = 0;
    for t in params.param_tensors_mut() {
        let n = t.numel();
        *t = Tensor::new(t.shape().to_vec(), flat[off..off + n].to_vec()).unwrap();
        off += n;
    }
    assert_eq!(off, flat.len());
}

/// Independent loss route for the oracle: pure forward passes composed with
/// the per-sample cross-entropy, no tape involved.
fn loss_pure(params: &NetworkParams, x: &Tensor, targets: &[usize], kind: LossKind) -> f64 {
    let logits = match kind {
        LossKind::PlainCe => params.forward_logits_ce(x).unwrap(),
        LossKind::CosineCe => params.forward_logits_cosine(x).unwrap(),
    };
    let total: f64 = targets
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            log_softmax_ce(&Tensor::from_vec(logits.row(i).to_vec()), t).unwrap()
        })
        .sum();
    total / targets.len() as f64
}

#[test]
fn gradient_oracle() {
    let start = Instant::now();
    let h = 1e-5;
    let mut worst_rel = 0.0f64;
    let mut checked = 0usize;

    for net_idx in 0..20u64 {
        let mut rng = ChaCha20Rng::seed_from_u64(seeds::derive(net_idx, "grad-oracle"));
        let normal = Normal::new(0.0, 1.0).unwrap();
        let input = 3 + (net_idx as usize % 4);
        let hidden = match net_idx % 3 {
            0 => vec![],
            1 => vec![4 + (net_idx as usize % 5)],
            _ => vec![5, 6],
        };
        let feature = 4 + (net_idx as usize % 5);
        let embed = 3 + (net_idx as usize % 4);
        let classes = 2 + (net_idx as usize % 4);
        let batch = 2 + (net_idx as usize % 4);
        let arch = ArchitectureSpec::new(input, hidden, feature, embed).unwrap();

        for kind in [LossKind::PlainCe, LossKind::CosineCe] {
            let head = match kind {
                LossKind::PlainCe => HeadSpec::PlainCe { classes },
                LossKind::CosineCe => HeadSpec::Cosine { classes },
            };
            let params = init_params(&arch, head, net_idx.wrapping_add(1000)).unwrap();
            let x_data: Vec<f64> = (0..batch * input).map(|_| normal.sample(&mut rng)).collect();
            let x = Tensor::new(vec![batch, input], x_data).unwrap();
            let targets: Vec<usize> = (0..batch).map(|i| (i * 7 + net_idx as usize) % classes).collect();

            let (_, grads) = batch_loss_and_grads(&params, &x, &targets, kind).unwrap();
            let analytic: Vec<f64> = grads.into_iter().flatten().collect();

            let flat = flatten(&params);
            let mut probe = params.clone();
            for (i, &a) in analytic.iter().enumerate() {
                let mut up = flat.clone();
                up[i] += h;
                write_flat(&mut probe, &up);
                let lu = loss_pure(&probe, &x, &targets, kind);
                let mut down = flat.clone();
                down[i] -= h;
                write_flat(&mut probe, &down);
                let ld = loss_pure(&probe, &x, &targets, kind);
                let numeric = (lu - ld) / (2.0 * h);

                let denom = a.abs().max(numeric.abs());
                if denom <= 1e-6 {
                    continue;
                }
                let rel = (a - numeric).abs() / denom;
                worst_rel = worst_rel.max(rel);
                checked += 1;
                assert!(
                    rel < 1e-4,
                    "net {net_idx} {kind:?} coord {i}: analytic={a} numeric={numeric} rel={rel}"
                );
            }
        }
    }

    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 30.0, "gradient oracle took {secs:.1}s");
    println!(
        "PASS gradient_oracle: {checked} coordinates over 20 nets × 2 losses, \
         max rel err {worst_rel:.2e} (< 1e-4), {secs:.1}s (< 30s)"
    );
}

// ── Criterion: sharpening and softabs numerics ────────────────────────

#[test]
fn sharpening_and_softabs_numerics() {
    let beta = 10.0;
    let refs = [(0.5, 0.5000454), (0.0, 0.0133857), (1.0, 0.9933072)];
    for (c, want) in refs {
        let got = sharpening(c, beta);
        assert!(
            (got - want).abs() < 1e-6,
            "epsilon({c}) = {got}, reference {want}"
        );
    }

    let cfg = SharpeningConfig { beta };
    let mut rng = ChaCha20Rng::seed_from_u64(seeds::derive(2, "softabs-sum"));
    let mut worst = 0.0f64;
    for i in 0..10_000usize {
        let len = 1 + i % 16;
        let scores: Vec<f64> = (0..len)
            .map(|_| rand::Rng::random_range(&mut rng, -1.0..=1.0))
            .collect();
        let h = softabs_attention(&scores, &cfg);
        let sum: f64 = h.iter().sum();
        worst = worst.max((sum - 1.0).abs());
        assert!((sum - 1.0).abs() < 1e-9, "vector {i}: sum {sum}");
        assert!(h.iter().all(|&v| v > 0.0));
    }
    println!(
        "PASS sharpening_and_softabs_numerics: 3 reference values within 1e-6, \
         10^4 attention vectors sum to 1 within {worst:.2e} (< 1e-9)"
    );
}

// ── Criterion: endpoint identities ────────────────────────────────────
// λ=1 classification agrees with RHD-only and λ=0 with TKN-only on every
// query of a 1000-query random instance — exact, zero tolerance.

/// Independent nearest-prototype argmax: max score, ties to smallest id.
fn solo_argmax(em: &ExplicitMemory, which: NetSelector, net: &NetworkParams, q: &[f64]) -> u32 {
    let scores = em.score(which, net, q).unwrap();
    let ids = em.class_ids();
    let mut best = 0usize;
    for i in 1..ids.len() {
        let (s, b) = (scores.data()[i], scores.data()[best]);
        if s > b || (s == b && ids[i] < ids[best]) {
            best = i;
        }
    }
    ids[best]
}

#[test]
fn endpoint_identities() {
    let dim = 8;
    let data = generate_synth(&tlce::data::SynthSpec {
        num_classes: 20,
        feature_dim: dim,
        train_per_class: 3,
        test_per_class: 1,
        cluster_std: 1.0,
        min_center_separation: 2.0,
        seed: seeds::derive(3, "endpoint-data"),
    })
    .unwrap();
    let session = SessionDataset {
        session_id: 1,
        feature_dim: dim,
        classes: data.classes,
    };
    // Linear backbones: a rectifier dead zone could embed a query to exactly
    // zero, which scoring rejects as degenerate rather than classifying.
    let arch = ArchitectureSpec::new(dim, vec![], 10, 12).unwrap();
    let rhd = init_params(&arch, HeadSpec::None, 100).unwrap();
    let tkn = init_params(&arch, HeadSpec::None, 101).unwrap();
    let mut em = ExplicitMemory::new();
    em.update(&session, &rhd, &tkn).unwrap();

    let mut rng = ChaCha20Rng::seed_from_u64(seeds::derive(3, "endpoint-queries"));
    let normal = Normal::new(0.0, 3.0).unwrap();
    for _ in 0..1000 {
        let q: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
        let (at_one, _) = classify(&em, &rhd, &tkn, &EnsembleConfig { lambda: 1.0 }, &q).unwrap();
        assert_eq!(at_one, solo_argmax(&em, NetSelector::Rhd, &rhd, &q));
        let (at_zero, _) = classify(&em, &rhd, &tkn, &EnsembleConfig { lambda: 0.0 }, &q).unwrap();
        assert_eq!(at_zero, solo_argmax(&em, NetSelector::Tkn, &tkn, &q));
    }
    println!("PASS endpoint_identities: 1000 queries, exact agreement at both endpoints");
}

// ── Criterion: frozen-memory invariant ────────────────────────────────
// Across a 1-base + 4-incremental run, both parameter checkpoints and the
// byte serialization of every previously inserted memory entry are
// unchanged after every session.

#[test]
fn frozen_memory_invariant() {
    let spec = ProtocolSpec {
        num_base_classes: 8,
        num_novel_classes: 8,
        way: 2,
        shot: 3,
        num_sessions: 5,
        seed: 44,
    };
    let data = generate_synth(&tlce::data::SynthSpec {
        num_classes: 16,
        feature_dim: 6,
        train_per_class: 6,
        test_per_class: 4,
        cluster_std: 1.0,
        min_center_separation: 4.0,
        seed: 45,
    })
    .unwrap();
    let sessions = split_sessions(&data, &spec).unwrap();
    let arch = ArchitectureSpec::new(6, vec![8], 8, 10).unwrap();
    let rhd = init_params(&arch, HeadSpec::None, 46).unwrap();
    let tkn = init_params(&arch, HeadSpec::None, 47).unwrap();

    let rhd_bytes = io::params_to_bytes(&rhd);
    let tkn_bytes = io::params_to_bytes(&tkn);

    let mut run = ProtocolRun::new(&sessions, &rhd, &tkn, &EnsembleConfig::default(), &spec).unwrap();
    let mut snapshots: Vec<Vec<u8>> = Vec::new();
    while !run.is_finished() {
        run.advance().unwrap();
        assert_eq!(io::params_to_bytes(&rhd), rhd_bytes, "rhd checkpoint changed");
        assert_eq!(io::params_to_bytes(&tkn), tkn_bytes, "tkn checkpoint changed");
        for (entry, old) in run.memory().entries().iter().zip(&snapshots) {
            assert_eq!(&entry.to_bytes(), old, "an earlier memory entry changed");
        }
        snapshots = run.memory().entries().iter().map(MemoryEntry::to_bytes).collect();
    }
    assert_eq!(run.memory().len(), 16);
    println!(
        "PASS frozen_memory_invariant: checkpoints and {} memory entries byte-stable \
         across 5 sessions",
        snapshots.len()
    );
}

// ── Criterion: end-to-end synthetic protocol ──────────────────────────
// 10 base classes + 2 incremental 2-way 5-shot sessions on 64-dim Gaussian
// clusters (center separation ≥ 8σ), full pipeline, weighted accuracy
// ≥ 0.90 at every session, runtime < 5 min.

#[test]
fn end_to_end_synthetic_protocol() {
    let start = Instant::now();
    let master = 7u64;
    let dim = 64;
    let spec = ProtocolSpec {
        num_base_classes: 10,
        num_novel_classes: 4,
        way: 2,
        shot: 5,
        num_sessions: 3,
        seed: seeds::derive(master, "protocol"),
    };
    let data = generate_synth(&tlce::data::SynthSpec {
        num_classes: 14,
        feature_dim: dim,
        train_per_class: 40,
        test_per_class: 25,
        cluster_std: 1.0,
        min_center_separation: 8.0,
        seed: seeds::derive(master, "synth"),
    })
    .unwrap();
    let sessions = split_sessions(&data, &spec).unwrap();
    let base = &sessions[0];

    let arch = ArchitectureSpec::new(dim, vec![64], 64, 64).unwrap();
    let mut log = TrainLogger::disabled();

    // Stage 1: supervised pretraining of the RHD embedding.
    let rhd0 = init_params(
        &arch,
        HeadSpec::PlainCe { classes: 10 },
        seeds::derive(master, "init-rhd"),
    )
    .unwrap();
    let pre_cfg = TrainConfig {
        learning_rate: 0.01,
        batch_size: 64,
        epochs: 30,
        seed: seeds::derive(master, "train-rhd-pretrain"),
        momentum: None,
    };
    let rhd1 = pretrain_ce(rhd0, base, &pre_cfg, &mut log).unwrap();

    // Stage 2: episodic meta-training.
    let meta_cfg = TrainConfig {
        learning_rate: 0.05,
        batch_size: 64,
        epochs: 1,
        seed: seeds::derive(master, "train-rhd-meta"),
        momentum: None,
    };
    let rhd = meta_train_rhd(
        rhd1,
        base,
        &meta_cfg,
        &SharpeningConfig::default(),
        spec.shot,
        200,
        &mut log,
    )
    .unwrap();

    // Transferable network: cosine cross-entropy.
    let tkn0 = init_params(
        &arch,
        HeadSpec::Cosine { classes: 10 },
        seeds::derive(master, "init-tkn"),
    )
    .unwrap();
    let tkn_cfg = TrainConfig {
        learning_rate: 0.05,
        batch_size: 64,
        epochs: 40,
        seed: seeds::derive(master, "train-tkn"),
        momentum: None,
    };
    let tkn = train_tkn(tkn0, base, &tkn_cfg, &mut log).unwrap();

    let artifacts = run_protocol(&sessions, &rhd, &tkn, &EnsembleConfig::default(), &spec).unwrap();
    for report in &artifacts.summary.reports {
        assert!(
            report.weighted_acc >= 0.90,
            "session {} weighted accuracy {:.3} < 0.90",
            report.session_id,
            report.weighted_acc
        );
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 300.0, "pipeline took {secs:.1}s");
    let accs: Vec<String> = artifacts
        .summary
        .reports
        .iter()
        .map(|r| format!("{:.3}", r.weighted_acc))
        .collect();
    println!(
        "PASS end_to_end_synthetic_protocol: weighted accs [{}] all ≥ 0.90, {secs:.1}s (< 300s)",
        accs.join(", ")
    );
}

// ── Criterion: quasi-orthogonality trend ──────────────────────────────
// Mean pairwise |cos| between base-class RHD prototypes on held-out data
// strictly decreases from post-pretraining to post-meta-training
// (8 classes, embedding dim 64, 200 episodes).

fn held_out_mean_abs_cos(net: &NetworkParams, session: &SessionDataset) -> f64 {
    let protos: Vec<Tensor> = session
        .classes
        .iter()
        .map(|c| compute_prototype(net, &c.test).unwrap())
        .collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..protos.len() {
        for j in i + 1..protos.len() {
            total += cosine(&protos[i], &protos[j]).unwrap().abs();
            pairs += 1;
        }
    }
    total / pairs as f64
}

#[test]
fn quasi_orthogonality_trend() {
    let master = 11u64;
    let data = generate_synth(&tlce::data::SynthSpec {
        num_classes: 8,
        feature_dim: 16,
        train_per_class: 30,
        test_per_class: 12,
        cluster_std: 1.0,
        min_center_separation: 8.0,
        seed: seeds::derive(master, "synth"),
    })
    .unwrap();
    let base = SessionDataset {
        session_id: 1,
        feature_dim: 16,
        classes: data.classes,
    };
    let arch = ArchitectureSpec::new(16, vec![32], 32, 64).unwrap();
    let params = init_params(
        &arch,
        HeadSpec::PlainCe { classes: 8 },
        seeds::derive(master, "init"),
    )
    .unwrap();
    let mut log = TrainLogger::disabled();
    let pre_cfg = TrainConfig {
        learning_rate: 0.01,
        batch_size: 32,
        epochs: 40,
        seed: seeds::derive(master, "pretrain"),
        momentum: None,
    };
    let pretrained = pretrain_ce(params, &base, &pre_cfg, &mut log).unwrap();
    let before = held_out_mean_abs_cos(&pretrained, &base);

    let meta_cfg = TrainConfig {
        learning_rate: 0.05,
        batch_size: 32,
        epochs: 1,
        seed: seeds::derive(master, "meta"),
        momentum: None,
    };
    let meta = meta_train_rhd(
        pretrained,
        &base,
        &meta_cfg,
        &SharpeningConfig::default(),
        5,
        200,
        &mut log,
    )
    .unwrap();
    let after = held_out_mean_abs_cos(&meta, &base);

    assert!(
        after < before,
        "mean pairwise |cos| did not decrease: {before:.4} → {after:.4}"
    );
    println!(
        "PASS quasi_orthogonality_trend: held-out prototype mean |cos| {before:.4} → {after:.4}"
    );
}

// ── Criterion: interior-λ superiority ─────────────────────────────────
// A constructed scenario where the RHD map collapses the novel class
// directions and the TKN map collapses the base class directions: each
// endpoint misclassifies ≥ 30% of its weak group, and some interior λ beats
// both endpoints on weighted accuracy.

/// Linear network y = M·x (backbone M, identity projection).
fn linear_net(matrix: &[Vec<f64>]) -> NetworkParams {
    let d = matrix.len();
    let arch = ArchitectureSpec::new(d, vec![], d, d).unwrap();
    let mut p = init_params(&arch, HeadSpec::None, 0).unwrap();
    let mut w = vec![0.0; d * d];
    let mut eye = vec![0.0; d * d];
    for r in 0..d {
        for c in 0..d {
            w[r * d + c] = matrix[r][c];
        }
        eye[r * d + r] = 1.0;
    }
    p.backbone[0].weight = Tensor::new(vec![d, d], w).unwrap();
    p.backbone[0].bias = Tensor::zeros(vec![d]).unwrap();
    p.projection.weight = Tensor::new(vec![d, d], eye).unwrap();
    p.projection.bias = Tensor::zeros(vec![d]).unwrap();
    p
}

/// Map sending basis direction i to `columns[i]`.
fn from_columns(columns: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = columns.len();
    (0..d)
        .map(|r| (0..d).map(|c| columns[c][r]).collect())
        .collect()
}

#[test]
fn interior_lambda_superiority() {
    let d = 4;
    let spec = ProtocolSpec {
        num_base_classes: 2,
        num_novel_classes: 2,
        way: 2,
        shot: 5,
        num_sessions: 2,
        seed: 71,
    };
    // Class i sits at 8·e_i with unit noise.
    let mut rng = ChaCha20Rng::seed_from_u64(seeds::derive(71, "scenario"));
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut sample = |center: usize| -> Vec<f64> {
        (0..d)
            .map(|j| if j == center { 8.0 } else { 0.0 } + noise.sample(&mut rng))
            .collect()
    };
    let classes: Vec<ClassData> = (0..d)
        .map(|i| ClassData {
            class_id: i as u32,
            train: (0..10).map(|_| sample(i)).collect(),
            test: (0..150).map(|_| sample(i)).collect(),
        })
        .collect();
    let data = LabeledDataset {
        feature_dim: d,
        classes,
    };
    let sessions = split_sessions(&data, &spec).unwrap();
    let base_ids = sessions[0].class_ids();
    let novel_ids = sessions[1].class_ids();

    // RHD collapses both novel directions onto their common bisector and
    // keeps base directions intact; TKN does the opposite.
    let unit = |i: u32| -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i as usize] = 1.0;
        v
    };
    let bisector = |a: u32, b: u32| -> Vec<f64> {
        let (ua, ub) = (unit(a), unit(b));
        ua.iter()
            .zip(&ub)
            .map(|(x, y)| (x + y) / 2f64.sqrt())
            .collect()
    };
    let mut rhd_cols = vec![vec![]; d];
    let mut tkn_cols = vec![vec![]; d];
    let novel_bisector = bisector(novel_ids[0], novel_ids[1]);
    let base_bisector = bisector(base_ids[0], base_ids[1]);
    for &b in &base_ids {
        rhd_cols[b as usize] = unit(b);
        tkn_cols[b as usize] = base_bisector.clone();
    }
    for &n in &novel_ids {
        rhd_cols[n as usize] = novel_bisector.clone();
        tkn_cols[n as usize] = unit(n);
    }
    let rhd = linear_net(&from_columns(&rhd_cols));
    let tkn = linear_net(&from_columns(&tkn_cols));

    let run_at = |lambda: f64| {
        run_protocol(&sessions, &rhd, &tkn, &EnsembleConfig { lambda }, &spec)
            .unwrap()
            .summary
    };
    let rhd_only = run_at(1.0);
    let tkn_only = run_at(0.0);
    let rhd_final = rhd_only.reports.last().unwrap();
    let tkn_final = tkn_only.reports.last().unwrap();

    let novel_err = 1.0 - rhd_final.novel_acc.unwrap();
    let base_err = 1.0 - tkn_final.base_acc;
    assert!(novel_err >= 0.30, "RHD-only novel error {novel_err:.3} < 0.30");
    assert!(base_err >= 0.30, "TKN-only base error {base_err:.3} < 0.30");

    let mut best_interior = f64::NEG_INFINITY;
    let mut best_lambda = 0.0;
    for i in 1..=9 {
        let lambda = i as f64 / 10.0;
        let acc = run_at(lambda).final_session_acc;
        if acc > best_interior {
            best_interior = acc;
            best_lambda = lambda;
        }
    }
    let endpoints = rhd_final.weighted_acc.max(tkn_final.weighted_acc);
    assert!(
        best_interior > endpoints,
        "no interior λ beats the endpoints: best {best_interior:.3} vs {endpoints:.3}"
    );
    println!(
        "PASS interior_lambda_superiority: RHD-only novel err {novel_err:.2}, TKN-only base err \
         {base_err:.2}, λ={best_lambda:.1} weighted {best_interior:.3} > endpoints {endpoints:.3}"
    );
}

// ── Criterion: accounting identities ──────────────────────────────────
// |EM| = 60 + 5(t−1) under the benchmark protocol on 100-class synthetic
// data; Average Acc. equals the arithmetic mean of per-session weighted
// accuracies, re-verified by an independent recount over the per-sample
// prediction log — exact.

#[test]
fn accounting_identities() {
    let spec = ProtocolSpec::benchmark_default(5);
    let data = generate_synth(&tlce::data::SynthSpec {
        num_classes: 100,
        feature_dim: 8,
        train_per_class: 6,
        test_per_class: 3,
        cluster_std: 1.0,
        min_center_separation: 3.0,
        seed: 55,
    })
    .unwrap();
    let sessions = split_sessions(&data, &spec).unwrap();
    let arch = ArchitectureSpec::new(8, vec![], 8, 8).unwrap();
    let rhd = init_params(&arch, HeadSpec::None, 56).unwrap();
    let tkn = init_params(&arch, HeadSpec::None, 57).unwrap();

    let mut run = ProtocolRun::new(&sessions, &rhd, &tkn, &EnsembleConfig::default(), &spec).unwrap();
    let mut t = 0usize;
    while !run.is_finished() {
        run.advance().unwrap();
        t += 1;
        assert_eq!(run.memory().len(), 60 + 5 * (t - 1), "memory size at session {t}");
    }
    let artifacts = run.finish().unwrap();

    // Independent recount over the emitted prediction log.
    let mut csv = Vec::new();
    tlce::harness::write_predictions_csv(&artifacts.predictions, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let mut per_session: Vec<(u32, usize, usize)> = Vec::new();
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let session: u32 = fields[0].parse().unwrap();
        let true_class: u32 = fields[2].parse().unwrap();
        let predicted: u32 = fields[3].parse().unwrap();
        match per_session.iter_mut().find(|(s, _, _)| *s == session) {
            Some((_, correct, total)) => {
                *correct += usize::from(true_class == predicted);
                *total += 1;
            }
            None => per_session.push((session, usize::from(true_class == predicted), 1)),
        }
    }
    assert_eq!(per_session.len(), 9);
    let mut recount_sum = 0.0;
    for (report, (session, correct, total)) in
        artifacts.summary.reports.iter().zip(&per_session)
    {
        assert_eq!(report.session_id, *session);
        let recount = *correct as f64 / *total as f64;
        assert_eq!(report.weighted_acc, recount, "session {session} recount differs");
        recount_sum += recount;
    }
    assert_eq!(artifacts.summary.average_acc, recount_sum / 9.0);
    println!(
        "PASS accounting_identities: |EM| = 60 + 5(t−1) for t = 1..9, average acc {:.4} \
         matches the prediction-log recount exactly",
        artifacts.summary.average_acc
    );
}

// ── Criterion: format round-trips ─────────────────────────────────────
// Dataset, parameter, and memory checkpoints round-trip bit-exactly on 100
// randomized instances each.

#[test]
fn format_round_trips() {
    for seed in 0..100u64 {
        // Dataset.
        let data = generate_synth(&tlce::data::SynthSpec {
            num_classes: 1 + (seed as usize % 6),
            feature_dim: 1 + (seed as usize % 9),
            train_per_class: 1 + (seed as usize % 7),
            test_per_class: 1 + (seed as usize % 4),
            cluster_std: 0.5 + (seed as f64 % 3.0),
            min_center_separation: 1.0,
            seed,
        })
        .unwrap();
        let bytes = io::dataset_to_bytes(&data);
        let loaded = io::dataset_from_bytes(&bytes).unwrap();
        assert_eq!(loaded, data, "dataset mismatch at seed {seed}");
        assert_eq!(io::dataset_to_bytes(&loaded), bytes);

        // Parameters.
        let hidden = match seed % 3 {
            0 => vec![],
            1 => vec![2 + (seed as usize % 6)],
            _ => vec![3, 4],
        };
        let arch = ArchitectureSpec::new(
            1 + (seed as usize % 8),
            hidden,
            1 + (seed as usize % 7),
            1 + (seed as usize % 6),
        )
        .unwrap();
        let head = match seed % 3 {
            0 => HeadSpec::None,
            1 => HeadSpec::PlainCe {
                classes: 1 + (seed as usize % 5),
            },
            _ => HeadSpec::Cosine {
                classes: 1 + (seed as usize % 5),
            },
        };
        let params = init_params(&arch, head, seed).unwrap();
        let bytes = io::params_to_bytes(&params);
        let loaded = io::params_from_bytes(&bytes).unwrap();
        assert_eq!(loaded, params, "params mismatch at seed {seed}");
        assert_eq!(io::params_to_bytes(&loaded), bytes);

        // Memory.
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 2.0).unwrap();
        let dim = 1 + (seed as usize % 12);
        let entries: Vec<MemoryEntry> = (0..1 + seed % 20)
            .map(|i| MemoryEntry {
                class_id: i as u32,
                session_introduced: 1 + (i as u32 / 5),
                proto_rhd: Tensor::from_vec((0..dim).map(|_| normal.sample(&mut rng)).collect()),
                proto_tkn: Tensor::from_vec((0..dim).map(|_| normal.sample(&mut rng)).collect()),
            })
            .collect();
        let em = ExplicitMemory::from_entries(entries).unwrap();
        let bytes = io::memory_to_bytes(&em);
        let loaded = io::memory_from_bytes(&bytes).unwrap();
        assert_eq!(loaded, em, "memory mismatch at seed {seed}");
        assert_eq!(io::memory_to_bytes(&loaded), bytes);
    }
    println!("PASS format_round_trips: 100 randomized instances each of dataset, params, memory");
}
