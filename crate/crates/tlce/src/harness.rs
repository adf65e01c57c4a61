//! The incremental-session protocol: base-session memory population,
//! N-way K-shot incremental sessions, per-session evaluation over all seen
//! classes, λ sweeps, and classifier ablations.
//!
//! Networks are frozen before the protocol starts; every session only
//! appends prototypes to the explicit memory and re-evaluates.

use crate::data::SessionDataset;
use crate::ensemble::{classify_embedded, EnsembleConfig};
use crate::error::{Error, Result};
use crate::memory::ExplicitMemory;
use crate::model::NetworkParams;
use crate::tensor::Tensor;
use std::io::Write;

/// Shape of the class-incremental protocol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolSpec {
    pub num_base_classes: usize,
    pub num_novel_classes: usize,
    /// N: novel classes per incremental session.
    pub way: usize,
    /// K: training samples per novel class.
    pub shot: usize,
    /// Total sessions T, the base session included.
    pub num_sessions: usize,
    pub seed: u64,
}

impl ProtocolSpec {
    /// The standard benchmark configuration: 60 base classes, 40 novel
    /// classes over eight 5-way 5-shot sessions.
    pub fn benchmark_default(seed: u64) -> Self {
        ProtocolSpec {
            num_base_classes: 60,
            num_novel_classes: 40,
            way: 5,
            shot: 5,
            num_sessions: 9,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_base_classes == 0 {
            return Err(Error::Config("need at least one base class".into()));
        }
        if self.num_sessions == 0 {
            return Err(Error::Config("need at least one session".into()));
        }
        if self.num_sessions > 1 && (self.way == 0 || self.shot == 0) {
            return Err(Error::Config(
                "incremental sessions need positive way and shot".into(),
            ));
        }
        if self.num_novel_classes != self.way * (self.num_sessions - 1) {
            return Err(Error::Config(format!(
                "num_novel_classes {} != way {} × (sessions {} − 1)",
                self.num_novel_classes, self.way, self.num_sessions
            )));
        }
        Ok(())
    }
}

/// Accuracy breakdown of one session's evaluation over all seen classes.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionReport {
    pub session_id: u32,
    /// Correct / total over every seen class's test split.
    pub weighted_acc: f64,
    /// Accuracy over base-session classes only.
    pub base_acc: f64,
    /// Accuracy over classes introduced after the base session; absent
    /// until novel test samples exist.
    pub novel_acc: Option<f64>,
    /// Per-class accuracy in seen order.
    pub per_class_acc: Vec<(u32, f64)>,
    pub num_classes_seen: usize,
    pub num_test_samples: usize,
}

/// Whole-run aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub reports: Vec<SessionReport>,
    /// Arithmetic mean of the per-session weighted accuracies.
    pub average_acc: f64,
    pub final_session_acc: f64,
}

impl RunSummary {
    fn from_reports(reports: Vec<SessionReport>) -> Self {
        let average_acc =
            reports.iter().map(|r| r.weighted_acc).sum::<f64>() / reports.len() as f64;
        let final_session_acc = reports.last().map(|r| r.weighted_acc).unwrap_or(0.0);
        RunSummary {
            reports,
            average_acc,
            final_session_acc,
        }
    }
}

/// One classified test sample, for oracle recounting.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub session_id: u32,
    pub true_class: u32,
    /// Index of the sample within its class's test split.
    pub sample_index: usize,
    pub predicted_class: u32,
    pub top_score: f64,
}

/// Summary plus the full per-sample prediction log.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub summary: RunSummary,
    pub predictions: Vec<PredictionRecord>,
}

/// Test-split embeddings of one seen class under both frozen networks,
/// computed once when the class first appears.
struct SeenClass {
    class_id: u32,
    introduced_session: u32,
    emb_rhd: Vec<Vec<f64>>,
    emb_tkn: Vec<Vec<f64>>,
}

/// Stepwise protocol driver; [`run_protocol`] wraps it. Exposing sessions
/// one at a time lets callers check frozen-state invariants between steps.
pub struct ProtocolRun<'a> {
    datasets: &'a [SessionDataset],
    rhd: &'a NetworkParams,
    tkn: &'a NetworkParams,
    lambda: f64,
    em: ExplicitMemory,
    seen: Vec<SeenClass>,
    reports: Vec<SessionReport>,
    predictions: Vec<PredictionRecord>,
    next: usize,
}

impl<'a> ProtocolRun<'a> {
    pub fn new(
        datasets: &'a [SessionDataset],
        rhd: &'a NetworkParams,
        tkn: &'a NetworkParams,
        cfg: &EnsembleConfig,
        spec: &ProtocolSpec,
    ) -> Result<Self> {
        spec.validate()?;
        cfg.validate()?;
        if datasets.len() != spec.num_sessions {
            return Err(Error::Protocol(format!(
                "{} session datasets for a {}-session protocol",
                datasets.len(),
                spec.num_sessions
            )));
        }
        if datasets[0].classes.len() != spec.num_base_classes {
            return Err(Error::Protocol(format!(
                "base session has {} classes, protocol wants {}",
                datasets[0].classes.len(),
                spec.num_base_classes
            )));
        }
        for s in &datasets[1..] {
            if s.classes.len() != spec.way {
                return Err(Error::Protocol(format!(
                    "session {} has {} classes, protocol wants {}",
                    s.session_id,
                    s.classes.len(),
                    spec.way
                )));
            }
            if s.num_train_samples() != spec.way * spec.shot {
                return Err(Error::Protocol(format!(
                    "session {} has {} training samples, protocol wants {}",
                    s.session_id,
                    s.num_train_samples(),
                    spec.way * spec.shot
                )));
            }
        }
        // Class-disjointness across the stream.
        for i in 0..datasets.len() {
            for j in i + 1..datasets.len() {
                for id in datasets[i].class_ids() {
                    if datasets[j].class_ids().contains(&id) {
                        return Err(Error::Protocol(format!(
                            "class {id} appears in more than one session"
                        )));
                    }
                }
            }
        }
        if datasets[0].classes.iter().all(|c| c.test.is_empty()) {
            return Err(Error::Data(
                "base session has no test samples to evaluate".into(),
            ));
        }
        Ok(ProtocolRun {
            datasets,
            rhd,
            tkn,
            lambda: cfg.lambda,
            em: ExplicitMemory::new(),
            seen: Vec::new(),
            reports: Vec::new(),
            predictions: Vec::new(),
            next: 0,
        })
    }

    pub fn memory(&self) -> &ExplicitMemory {
        &self.em
    }

    pub fn sessions_done(&self) -> usize {
        self.next
    }

    pub fn is_finished(&self) -> bool {
        self.next == self.datasets.len()
    }

    /// Ingests the next session (memory update + cached test embeddings)
    /// and evaluates over all seen classes.
    pub fn advance(&mut self) -> Result<&SessionReport> {
        let session = self
            .datasets
            .get(self.next)
            .ok_or_else(|| Error::Protocol("protocol already finished".into()))?;
        self.em.update(session, self.rhd, self.tkn)?;

        for class in &session.classes {
            let (emb_rhd, emb_tkn) = if class.test.is_empty() {
                (Vec::new(), Vec::new())
            } else {
                let x = Tensor::from_rows(&class.test)?;
                let (_, mu_r) = self.rhd.forward_embed(&x)?;
                let (_, mu_t) = self.tkn.forward_embed(&x)?;
                let rows = |m: &Tensor| (0..class.test.len()).map(|i| m.row(i).to_vec()).collect();
                (rows(&mu_r), rows(&mu_t))
            };
            self.seen.push(SeenClass {
                class_id: class.class_id,
                introduced_session: session.session_id,
                emb_rhd,
                emb_tkn,
            });
        }
        self.next += 1;

        let report = self.evaluate(session.session_id)?;
        self.reports.push(report);
        Ok(self.reports.last().expect("just pushed"))
    }

    fn evaluate(&mut self, session_id: u32) -> Result<SessionReport> {
        let entries = self.em.entries();
        let mut total = 0usize;
        let mut correct = 0usize;
        let mut base = (0usize, 0usize);
        let mut novel = (0usize, 0usize);
        let mut per_class_acc = Vec::with_capacity(self.seen.len());

        for class in &self.seen {
            let mut class_correct = 0usize;
            for (idx, (er, et)) in class.emb_rhd.iter().zip(&class.emb_tkn).enumerate() {
                let (pred, top) = classify_embedded(entries, er, et, self.lambda)?;
                let ok = pred == class.class_id;
                class_correct += usize::from(ok);
                self.predictions.push(PredictionRecord {
                    session_id,
                    true_class: class.class_id,
                    sample_index: idx,
                    predicted_class: pred,
                    top_score: top,
                });
            }
            let n = class.emb_rhd.len();
            total += n;
            correct += class_correct;
            if class.introduced_session == 1 {
                base.0 += class_correct;
                base.1 += n;
            } else {
                novel.0 += class_correct;
                novel.1 += n;
            }
            per_class_acc.push((
                class.class_id,
                if n == 0 {
                    1.0
                } else {
                    class_correct as f64 / n as f64
                },
            ));
        }

        Ok(SessionReport {
            session_id,
            weighted_acc: correct as f64 / total as f64,
            base_acc: base.0 as f64 / base.1 as f64,
            novel_acc: (novel.1 > 0).then(|| novel.0 as f64 / novel.1 as f64),
            per_class_acc,
            num_classes_seen: self.seen.len(),
            num_test_samples: total,
        })
    }

    pub fn finish(self) -> Result<RunArtifacts> {
        if !self.is_finished() {
            return Err(Error::Protocol(format!(
                "run stopped after {} of {} sessions",
                self.next,
                self.datasets.len()
            )));
        }
        Ok(RunArtifacts {
            summary: RunSummary::from_reports(self.reports),
            predictions: self.predictions,
        })
    }
}

/// Runs the full protocol: session 1 populates the memory from base data,
/// every later session appends `way` prototypes, and each session is scored
/// on the union test set of everything seen so far.
pub fn run_protocol(
    datasets: &[SessionDataset],
    rhd: &NetworkParams,
    tkn: &NetworkParams,
    cfg: &EnsembleConfig,
    spec: &ProtocolSpec,
) -> Result<RunArtifacts> {
    let mut run = ProtocolRun::new(datasets, rhd, tkn, cfg, spec)?;
    while !run.is_finished() {
        run.advance()?;
    }
    run.finish()
}

/// Final-session weighted accuracy for one λ value.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub lambda: f64,
    pub final_weighted_acc: f64,
}

/// Evaluates the final session once per λ. Prototypes and test embeddings
/// are computed a single time and reused across the sweep.
pub fn lambda_sweep(
    datasets: &[SessionDataset],
    rhd: &NetworkParams,
    tkn: &NetworkParams,
    spec: &ProtocolSpec,
    lambdas: &[f64],
) -> Result<Vec<SweepPoint>> {
    for &l in lambdas {
        EnsembleConfig::new(l)?;
    }
    // One pass with any valid λ builds the memory and embedding cache.
    let mut run = ProtocolRun::new(datasets, rhd, tkn, &EnsembleConfig { lambda: 1.0 }, spec)?;
    while !run.is_finished() {
        run.advance()?;
    }

    // Per-sample score vectors against the full memory, reused per λ.
    let entries = run.em.entries();
    let mut scored: Vec<(u32, Vec<f64>, Vec<f64>)> = Vec::new();
    for class in &run.seen {
        for (er, et) in class.emb_rhd.iter().zip(&class.emb_tkn) {
            let s_r = crate::memory::score_embedded(entries, crate::memory::NetSelector::Rhd, er)?;
            let s_t = crate::memory::score_embedded(entries, crate::memory::NetSelector::Tkn, et)?;
            scored.push((class.class_id, s_r, s_t));
        }
    }

    let mut points = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let mut correct = 0usize;
        for (true_class, s_r, s_t) in &scored {
            let combined = crate::ensemble::combine_slices(s_r, s_t, lambda);
            let (pred, _) = crate::ensemble::pick_class(entries, &combined);
            correct += usize::from(pred == *true_class);
        }
        points.push(SweepPoint {
            lambda,
            final_weighted_acc: correct as f64 / scored.len() as f64,
        });
    }
    Ok(points)
}

/// One ablation configuration's per-session weighted accuracies.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub per_session: Vec<f64>,
    pub average_acc: f64,
    pub final_acc: f64,
}

/// Ablation table over classifier configurations.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Final-session improvement of `ours` over `baseline`.
    pub fn final_improvement(&self, ours: &str, baseline: &str) -> Option<f64> {
        Some(self.row(ours)?.final_acc - self.row(baseline)?.final_acc)
    }
}

/// Runs each classifier alone and both ensemble pairings: the plain-CE
/// transfer network, the cosine transfer network, the meta-trained RHD, and
/// RHD ensembled with each transfer variant at the configured λ.
pub fn ablation_run(
    datasets: &[SessionDataset],
    rhd: &NetworkParams,
    tkn_cosine: &NetworkParams,
    tkn_plain: &NetworkParams,
    cfg: &EnsembleConfig,
    spec: &ProtocolSpec,
) -> Result<AblationReport> {
    let solo = EnsembleConfig { lambda: 1.0 };
    let configs: [(&str, &NetworkParams, &NetworkParams, &EnsembleConfig); 5] = [
        ("tkn-plain", tkn_plain, tkn_plain, &solo),
        ("tkn-cosine", tkn_cosine, tkn_cosine, &solo),
        ("rhd", rhd, rhd, &solo),
        ("rhd+tkn-plain", rhd, tkn_plain, cfg),
        ("rhd+tkn-cosine", rhd, tkn_cosine, cfg),
    ];
    let mut rows = Vec::with_capacity(configs.len());
    for (label, a, b, ens) in configs {
        let artifacts = run_protocol(datasets, a, b, ens, spec)?;
        let per_session: Vec<f64> = artifacts
            .summary
            .reports
            .iter()
            .map(|r| r.weighted_acc)
            .collect();
        rows.push(AblationRow {
            label: label.to_string(),
            average_acc: artifacts.summary.average_acc,
            final_acc: artifacts.summary.final_session_acc,
            per_session,
        });
    }
    Ok(AblationReport { rows })
}

/// Per-session (base, novel, weighted) accuracy rows.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseNovelRow {
    pub session_id: u32,
    pub base_acc: f64,
    pub novel_acc: Option<f64>,
    pub weighted_acc: f64,
}

pub fn base_novel_split_report(summary: &RunSummary) -> Vec<BaseNovelRow> {
    summary
        .reports
        .iter()
        .map(|r| BaseNovelRow {
            session_id: r.session_id,
            base_acc: r.base_acc,
            novel_acc: r.novel_acc,
            weighted_acc: r.weighted_acc,
        })
        .collect()
}

// ── Report emission ───────────────────────────────────────────────────

/// Per-session metrics as CSV.
pub fn write_metrics_csv<W: Write>(summary: &RunSummary, mut w: W) -> std::io::Result<()> {
    writeln!(
        w,
        "session,classes_seen,test_samples,weighted_acc,base_acc,novel_acc"
    )?;
    for r in &summary.reports {
        let novel = r
            .novel_acc
            .map(|v| format!("{v:.6}"))
            .unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{:.6},{:.6},{}",
            r.session_id, r.num_classes_seen, r.num_test_samples, r.weighted_acc, r.base_acc, novel
        )?;
    }
    Ok(())
}

/// Per-sample prediction log as CSV, for independent recounting.
pub fn write_predictions_csv<W: Write>(
    predictions: &[PredictionRecord],
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "session,sample_id,true_class,predicted_class,top_score")?;
    for p in predictions {
        writeln!(
            w,
            "{},c{}_i{},{},{},{:.12}",
            p.session_id, p.true_class, p.sample_index, p.true_class, p.predicted_class, p.top_score
        )?;
    }
    Ok(())
}

fn pct(v: f64) -> String {
    format!("{:>8.2}", v * 100.0)
}

/// Aligned accuracy table over sessions, accuracies in percent.
pub fn render_run_table(summary: &RunSummary) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<10}", "session"));
    for r in &summary.reports {
        out.push_str(&format!("{:>8}", r.session_id));
    }
    out.push_str(&format!("{:>10}{:>8}\n", "average", "final"));

    out.push_str(&format!("{:<10}", "weighted"));
    for r in &summary.reports {
        out.push_str(&pct(r.weighted_acc));
    }
    out.push_str(&format!(
        "{:>10.2}{}\n",
        summary.average_acc * 100.0,
        pct(summary.final_session_acc)
    ));

    out.push_str(&format!("{:<10}", "base"));
    for r in &summary.reports {
        out.push_str(&pct(r.base_acc));
    }
    out.push('\n');

    out.push_str(&format!("{:<10}", "novel"));
    for r in &summary.reports {
        match r.novel_acc {
            Some(v) => out.push_str(&pct(v)),
            None => out.push_str(&format!("{:>8}", "-")),
        }
    }
    out.push('\n');
    out
}

pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], mut w: W) -> std::io::Result<()> {
    writeln!(w, "lambda,final_weighted_acc")?;
    for p in points {
        writeln!(w, "{:.4},{:.6}", p.lambda, p.final_weighted_acc)?;
    }
    Ok(())
}

pub fn render_sweep_table(points: &[SweepPoint]) -> String {
    let mut out = String::from("lambda    final weighted acc\n");
    for p in points {
        out.push_str(&format!("{:<10.2}{:>8.2}\n", p.lambda, p.final_weighted_acc * 100.0));
    }
    out
}

pub fn write_ablation_csv<W: Write>(report: &AblationReport, mut w: W) -> std::io::Result<()> {
    let sessions = report.rows.first().map(|r| r.per_session.len()).unwrap_or(0);
    write!(w, "configuration")?;
    for s in 1..=sessions {
        write!(w, ",session_{s}")?;
    }
    writeln!(w, ",average_acc,final_acc")?;
    for row in &report.rows {
        write!(w, "{}", row.label)?;
        for v in &row.per_session {
            write!(w, ",{v:.6}")?;
        }
        writeln!(w, ",{:.6},{:.6}", row.average_acc, row.final_acc)?;
    }
    Ok(())
}

pub fn render_ablation_table(report: &AblationReport) -> String {
    let sessions = report.rows.first().map(|r| r.per_session.len()).unwrap_or(0);
    let mut out = format!("{:<18}", "configuration");
    for s in 1..=sessions {
        out.push_str(&format!("{s:>8}"));
    }
    out.push_str(&format!("{:>10}{:>8}\n", "average", "final"));
    for row in &report.rows {
        out.push_str(&format!("{:<18}", row.label));
        for v in &row.per_session {
            out.push_str(&pct(*v));
        }
        out.push_str(&format!(
            "{:>10.2}{}\n",
            row.average_acc * 100.0,
            pct(row.final_acc)
        ));
    }
    out
}
