//! Acceptance suite. Prints one PASS/FAIL line per criterion. With
//! `FOVLAB_ACCEPTANCE_STRICT=1` it also exits non-zero if any criterion
//! fails; otherwise failures are reported but do not stop `cargo test`.
//!
//! The model sweep (20 β-VAE models over four σ values plus 5 Ada-GVAE
//! models at σ = 0.2) is resumable: records live under
//! `$FOVLAB_ACCEPTANCE_DIR` (default: the cargo target tmp dir) and cells
//! already recorded for the same config are not retrained. Criterion 8
//! retrains one cell from scratch and compares it with its stored record.

mod common;

use std::path::PathBuf;
use std::time::Instant;

use common::{brute_force_pairwise, grad, random_importance};
use fovlab::factors::Sigma;
use fovlab::metrics::*;
use fovlab::rng::{Purpose, SeedStream};
use fovlab::runner::{run_cell, run_sweep, summarize, summary_text, ExperimentConfig, ExperimentRecord, SummaryRow};
use fovlab::theory::{min_kl_over_diagonal, pullback_prior_kl, GaussianWorld};
use fovlab::vae::Objective;
use ndarray::{array, Array2};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn sweep_dir() -> PathBuf {
    std::env::var_os("FOVLAB_ACCEPTANCE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance"))
}

fn beta_config() -> ExperimentConfig {
    ExperimentConfig::default()
}

fn ada_config() -> ExperimentConfig {
    ExperimentConfig { sigmas: vec![Sigma::Finite(0.2)], objectives: vec![Objective::AdaGvae], ..beta_config() }
}

struct Sweep {
    beta: Vec<ExperimentRecord>,
    ada: Vec<ExperimentRecord>,
    rows: Vec<SummaryRow>,
}

fn run_models() -> Sweep {
    let dir = sweep_dir();
    println!("model sweep in {} (resumes from existing records)", dir.display());
    let start = Instant::now();
    let beta = run_sweep(&beta_config(), &dir, 1).expect("beta-VAE sweep");
    let ada = run_sweep(&ada_config(), &dir, 1).expect("Ada-GVAE sweep");
    println!(
        "sweep finished in {:.0}s ({} cells trained, {} reused)",
        start.elapsed().as_secs_f64(),
        beta.trained + ada.trained,
        beta.skipped + ada.skipped
    );
    let all: Vec<ExperimentRecord> = beta.records.iter().chain(&ada.records).cloned().collect();
    let rows = summarize(&all);
    print!("{}", summary_text(&rows));
    Sweep { beta: beta.records, ada: ada.records, rows }
}

impl Sweep {
    fn row(&self, objective: Objective, sigma: Sigma) -> &SummaryRow {
        self.rows.iter().find(|r| r.objective == objective && r.sigma == sigma).expect("summary row present")
    }

    fn all_completed(&self) -> Option<String> {
        let failed: Vec<String> = self.beta.iter().chain(&self.ada).filter(|r| r.result().is_none()).map(|r| r.cell.id()).collect();
        (!failed.is_empty()).then(|| format!("failed cells: {failed:?}"))
    }
}

fn sigmas() -> [Sigma; 4] {
    [Sigma::Finite(0.2), Sigma::Finite(0.4), Sigma::Finite(0.7), Sigma::Infinite]
}

fn criterion_1(s: &Sweep) -> Outcome {
    if let Some(f) = s.all_completed() {
        return outcome(false, f);
    }
    let rows: Vec<&SummaryRow> = sigmas().iter().map(|&g| s.row(Objective::BetaVae, g)).collect();
    let corr: Vec<f64> = rows.iter().map(|r| r.correlated).collect();
    let median = rows[0].median_others.unwrap_or(f64::NAN);
    let ratio = corr[0] / median;
    let monotone = corr.windows(2).all(|w| w[1] <= w[0]);
    let cpu: f64 = s.beta.iter().map(|r| r.wall_time_secs).sum();
    let pass = ratio >= 2.0 && monotone && cpu <= 40.0 * 60.0 && s.beta.len() == 20;
    outcome(
        pass,
        format!(
            "correlated {:.3}/{:.3}/{:.3}/{:.3} over sigma 0.2/0.4/0.7/inf (monotone: {monotone}); median others at 0.2 {median:.3}, ratio {ratio:.2} (need >= 2); 20-model sweep {:.0}s (budget 2400s)",
            corr[0], corr[1], corr[2], corr[3], cpu
        ),
    )
}

fn criterion_2(s: &Sweep) -> Outcome {
    let row = s.row(Objective::BetaVae, Sigma::Finite(0.2));
    let Some(adapted) = row.adapted.iter().find(|a| a.labels == 100) else {
        return outcome(false, "no 100-label adaptation recorded".into());
    };
    let drop = 1.0 - adapted.correlated / row.correlated;
    let (before, after) = (row.median_others.unwrap_or(f64::NAN), adapted.median_others.unwrap_or(f64::NAN));
    let shift = after - before;
    outcome(
        drop >= 0.30 && shift.abs() <= 0.03,
        format!(
            "correlated {:.3} -> {:.3} ({:.0}% drop, need >= 30%); median others {before:.3} -> {after:.3} (shift {shift:+.3}, need within 0.03)",
            row.correlated,
            adapted.correlated,
            100.0 * drop
        ),
    )
}

fn criterion_3(s: &Sweep) -> Outcome {
    let b = s.row(Objective::BetaVae, Sigma::Finite(0.2));
    let a = s.row(Objective::AdaGvae, Sigma::Finite(0.2));
    outcome(
        a.completed == 5 && a.dci >= b.dci + 0.15 && a.correlated <= b.correlated,
        format!(
            "DCI Ada-GVAE {:.3} vs beta-VAE {:.3} (gap {:+.3}, need >= 0.15); correlated score {:.3} vs {:.3} (need <=)",
            a.dci,
            b.dci,
            a.dci - b.dci,
            a.correlated,
            b.correlated
        ),
    )
}

fn criterion_4(s: &Sweep) -> Outcome {
    let strong = s.row(Objective::BetaVae, Sigma::Finite(0.2)).unfairness;
    let none = s.row(Objective::BetaVae, Sigma::Infinite).unfairness;
    let ada = s.row(Objective::AdaGvae, Sigma::Finite(0.2)).unfairness;
    outcome(
        strong - none >= 0.1 && ada < strong,
        format!(
            "beta-VAE unfairness {strong:.3} at sigma 0.2 vs {none:.3} at inf (gap {:+.3}, need >= 0.1); Ada-GVAE at 0.2 {ada:.3} (need < {strong:.3})",
            strong - none
        ),
    )
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let (mut worst_gap, mut worst_whitening): (f64, f64) = (0.0, 0.0);
    for i in 1..=9 {
        let rho = i as f64 / 10.0;
        let world = GaussianWorld::new(rho).unwrap();
        let analytic = -0.5 * (1.0 - rho * rho).ln();
        worst_gap = worst_gap.max((min_kl_over_diagonal(&world).kl - analytic).abs());
        worst_whitening = worst_whitening.max(pullback_prior_kl(&world, &world.whitening_map()).unwrap().abs());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_gap <= 1e-6 && worst_whitening <= 1e-10 && secs < 1.0,
        format!("max |min diagonal KL - analytic| {worst_gap:.1e} (need <= 1e-6); max whitening KL {worst_whitening:.1e} (need <= 1e-10); {secs:.3}s"),
    )
}

fn criterion_6() -> Outcome {
    let mut failures = Vec::new();
    let tree = |w: Array2<f64>| ImportanceMatrix::new(w, ImportanceSource::TreeClassifier).unwrap();
    let mi = |w: Array2<f64>| ImportanceMatrix::new(w, ImportanceSource::MutualInformation).unwrap();

    let mut rng = SeedStream::new(6).stream(Purpose::Evaluation, 0);
    let mismatches = (0..500)
        .filter(|_| {
            let w = random_importance(5, 10, &mut rng);
            pairwise_entanglement(&tree(w.clone())) != brute_force_pairwise(&w)
        })
        .count();
    if mismatches > 0 {
        failures.push(format!("{mismatches}/500 union-find mismatches"));
    }

    let mut hand = |name: &str, got: f64, want: f64| {
        if got != want {
            failures.push(format!("{name}: got {got}, want {want}"));
        }
    };
    hand("mig one-hot", mig(&mi(array![[1.0, 0.0], [0.0, 1.0]])).unwrap(), 1.0);
    hand("mig equal top", mig(&mi(array![[0.5, 0.5], [0.3, 0.3]])).unwrap(), 0.0);
    hand("mig rows", mig(&mi(array![[0.8, 0.2], [0.6, 0.1]])).unwrap(), ((0.8 - 0.2) + (0.6 - 0.1)) / 2.0);
    hand("dci permutation", dci_disentanglement(&tree(array![[0.0, 1.0], [1.0, 0.0]])).unwrap(), 1.0);
    hand("dci uniform", dci_disentanglement(&tree(array![[0.5, 0.5], [0.5, 0.5]])).unwrap(), 0.0);
    let h = -(0.9f64 * 0.9f64.ln() + 0.1 * 0.1f64.ln());
    let dci = dci_disentanglement(&tree(array![[0.9, 0.1], [0.1, 0.9]])).unwrap();
    // Entropies summed in a different order may differ in the last bit.
    hand("dci 0.9/0.1", if (dci - (1.0 - h / 2f64.ln())).abs() <= 1e-15 { 0.0 } else { dci }, 0.0);
    let pw = |w: Array2<f64>| pairwise_entanglement(&tree(w))[[0, 1]];
    hand("pairwise identity", pw(array![[1.0, 0.0], [0.0, 1.0]]), 0.0);
    hand("pairwise 0.9/0.1", pw(array![[0.9, 0.1], [0.1, 0.9]]), 0.1);
    hand("pairwise uniform", pw(array![[0.5, 0.5], [0.5, 0.5]]), 0.5);
    let pairs = array![[0.0, 0.4, 0.1], [0.4, 0.0, 0.2], [0.1, 0.2, 0.0]];
    let summary = pairwise_summary(&pairs, (0, 1));
    hand("summary correlated", summary.correlated, 0.4);
    hand("summary median", summary.median_others.unwrap_or(f64::NAN), (0.1 + 0.2) / 2.0);
    let y = Array2::from_shape_fn((1000, 1), |(n, _)| n % 4);
    let z = Array2::from_shape_fn((1000, 2), |(n, _)| (n % 4) as f64);
    hand("sap duplicate copies", sap(z.view(), y.view()).unwrap(), 0.0);

    let mut rng = SeedStream::new(60).stream(Purpose::Evaluation, 0);
    let labels = Array2::from_shape_simple_fn((10_000, 3), || rng.random_range(0..5usize));
    let z = Array2::from_shape_fn((10_000, 4), |(n, j)| labels[[n, j % 3]] as f64 + rng.random::<f64>() * 2.0 - 1.0);
    let base = mi_importance(z.view(), labels.view(), 20).unwrap();
    let mut mi_dev: f64 = 0.0;
    for f in [|v: f64| v.powi(3), |v: f64| 2.0 * v + 1.0] {
        let t = mi_importance(z.mapv(f).view(), labels.view(), 20).unwrap();
        mi_dev = base.weights.iter().zip(t.weights.iter()).fold(mi_dev, |m, (a, b)| m.max((a - b).abs()));
    }
    if mi_dev > 1e-12 {
        failures.push(format!("MI changed by {mi_dev:.1e} under a monotone transform"));
    }
    let detail = if failures.is_empty() {
        format!("500/500 union-find = brute force; 13 hand cases exact; MI monotone deviation {mi_dev:.1e}")
    } else {
        failures.join("; ")
    };
    outcome(failures.is_empty(), detail)
}

fn criterion_7() -> Outcome {
    let errs = [grad::network_backward(), grad::beta_vae_loss(), grad::ada_gvae_loss()];
    outcome(
        errs.iter().all(|&e| e <= 1e-4),
        format!("max relative error: network {:.1e}, beta-VAE loss {:.1e}, Ada-GVAE loss {:.1e} (need <= 1e-4)", errs[0], errs[1], errs[2]),
    )
}

fn criterion_8(s: &Sweep) -> Outcome {
    let cfg = beta_config();
    let record = &s.beta[0];
    let Some(stored) = record.result() else {
        return outcome(false, format!("cell {} has no completed record", record.cell.id()));
    };
    let rerun = run_cell(&cfg, &record.cell, None).expect("rerun cell");
    let same_json = serde_json::to_string(&rerun.report).unwrap() == serde_json::to_string(&stored.report).unwrap();
    let same = rerun.report == stored.report && rerun.adaptations == stored.adaptations && same_json;
    outcome(same, format!("cell {} retrained: ScoreReport identical to stored record: {same}", record.cell.id()))
}

fn main() {
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    // The cheap criteria first, so their lines appear without waiting for
    // the sweep.
    for (n, f) in [(5, criterion_5 as fn() -> Outcome), (6, criterion_6), (7, criterion_7)] {
        let o = f();
        report(n, &o);
        results.push((n, o));
    }
    let sweep = run_models();
    for (n, f) in [(1, criterion_1 as fn(&Sweep) -> Outcome), (2, criterion_2), (3, criterion_3), (4, criterion_4), (8, criterion_8)] {
        let o = f(&sweep);
        report(n, &o);
        results.push((n, o));
    }
    results.sort_by_key(|(n, _)| *n);
    println!("\nacceptance summary");
    for (n, o) in &results {
        println!("criterion {n}: {}", if o.pass { "PASS" } else { "FAIL" });
    }
    let failed = results.iter().filter(|(_, o)| !o.pass).count();
    println!("{} of {} criteria pass", results.len() - failed, results.len());
    if failed > 0 && std::env::var("FOVLAB_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}

fn report(n: usize, o: &Outcome) {
    println!("criterion {n}: {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
}
