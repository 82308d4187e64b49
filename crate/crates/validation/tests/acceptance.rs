//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 6, 7, 8 and 10 train the 3-block desk model on `cifar10-subset-5k`, read from the
//! directory named by `SKD_DATA_ROOT`. Without it they fail with the reason printed.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use skd_core::analysis::{pearson, profile_pair, ranked_output_variance, MetricsLog, ProfileOptions};
use skd_core::data::{load_dataset, synthetic_gaussian, LabeledImageDataset};
use skd_core::losses::{self, TeacherStudent};
use skd_core::optim::LrSchedule;
use skd_core::train::{batch_loss, build_network, Method, Network, ObjectiveWeights, Trainer, TrainingConfig};
use skd_core::{Error, LogitVector, OneHotLabel, TapPoint, Temperature, Tensor};
use support::oracle;

const LOSS_REL_TOL: f64 = 1e-6;
const GRAD_REL_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;
const LOSS_INSTANCES: usize = 1000;
const GRAD_INSTANCES: usize = 100;
const PERMUTATIONS: usize = 500;
const K: usize = 5;
const BATCH: usize = 4;

const DESK_MODEL: &str = "tiny-resnet-3block";
const DESK_DATASET: &str = "cifar10-subset-5k";
const DESK_SEEDS: [u64; 3] = [0, 1, 2];
const COMBINED_MARGIN: f64 = 0.005;
const SINGLE_METHOD_SLACK: f64 = 0.002;
const OVERHEAD_BOUND: f64 = 1.35;

type Check = std::result::Result<String, String>;
type Criterion = Box<dyn FnOnce(&mut DeskStudy) -> Check>;

fn main() {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut desk = DeskStudy::default();
    let criteria: Vec<(&str, Criterion)> = vec![
        ("loss-oracle equivalence", Box::new(|_| loss_oracle_equivalence())),
        ("gradient correctness", Box::new(|_| gradient_correctness())),
        ("degeneracy identities", Box::new(|_| degeneracy_identities())),
        ("permutation invariance", Box::new(|_| permutation_invariance())),
        ("reference numbers (not asserted by training)", Box::new(|_| reference_ledger())),
        ("desk-scale direction of effect", Box::new(direction_of_effect)),
        ("variance trend", Box::new(variance_trend)),
        ("tap-position trend", Box::new(tap_trend)),
        ("overhead bound", Box::new(|_| overhead_bound())),
        ("determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(|| check(&mut desk)))
            .unwrap_or_else(|p| Err(format!("panicked: {}", panic_message(&p))));
        let (tag, detail) = match result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} [{}] {name}: {detail}", i + 1);
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "unknown panic".into())
}

fn lv(v: &[f64]) -> LogitVector {
    LogitVector::new(v.to_vec()).unwrap()
}

fn tau(t: f64) -> Temperature {
    Temperature::new(t).unwrap()
}

struct Instance {
    student: Vec<Vec<f64>>,
    teacher: Vec<Vec<f64>>,
    prev: Vec<Vec<f64>>,
    labels: Vec<usize>,
    tau_drg: f64,
    tau_dsr: f64,
    alpha: f64,
    beta: f64,
}

impl Instance {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let rows = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..BATCH).map(|_| support::random_logits(rng, K, 5.0)).collect()
        };
        let student = rows(rng);
        let teacher = rows(rng);
        let prev = rows(rng).into_iter().map(|r| oracle::sorted(&r)).collect();
        Self {
            student,
            teacher,
            prev,
            labels: (0..BATCH).map(|_| rng.random_range(0..K)).collect(),
            tau_drg: rng.random_range(0.5..5.0),
            tau_dsr: rng.random_range(0.5..5.0),
            alpha: rng.random_range(0.0..2.0),
            beta: rng.random_range(0.0..2.0),
        }
    }

    fn tensor(rows: &[Vec<f64>]) -> Tensor {
        Tensor::new(vec![rows.len(), K], rows.concat()).unwrap()
    }

    fn weights(&self, alpha: f64, beta: f64) -> ObjectiveWeights {
        ObjectiveWeights { alpha, beta, tau_drg: tau(self.tau_drg), tau_dsr: tau(self.tau_dsr), teacher_detach: false }
    }
}

fn loss_oracle_equivalence() -> Check {
    let names = ["CE", "KL", "KD", "HL", "RG", "DRG", "SR", "DSR", "combined"];
    let mut worst = [0.0f64; 9];
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-12);
    let mut rng = support::rng(100);
    for _ in 0..LOSS_INSTANCES {
        let c = Instance::random(&mut rng);
        let mut lib = [0.0; 9];
        let mut ora = [0.0; 9];
        for i in 0..BATCH {
            let (zs, zt, y) = (&c.student[i], &c.teacher[i], c.labels[i]);
            let label = OneHotLabel::new(y, K).unwrap();
            let soft = |z: &[f64], t: f64| losses::softened_distribution(&lv(z), tau(t)).unwrap();
            let (p1, q1) = (soft(zs, 1.0), soft(zt, 1.0));
            let (pt, qt) = (soft(zs, c.tau_drg), soft(zt, c.tau_drg));
            let hard = TeacherStudent { teacher: &q1, student: &p1 };
            let soft_pair = TeacherStudent { teacher: &qt, student: &pt };
            let sr = losses::shape_regularization_loss(
                &losses::rank_ascending(&lv(&c.prev[i])),
                &losses::rank_ascending(&lv(zs)),
                tau(c.tau_dsr),
            )
            .unwrap();
            let t = tau(c.tau_drg);
            let values = [
                losses::cross_entropy(&p1, &label).unwrap().value,
                losses::kl_divergence(&qt, &pt).unwrap().value,
                losses::kd_loss(&p1, &label, soft_pair, t).unwrap().value,
                losses::hard_label_loss(hard, &label).unwrap().value,
                losses::reverse_guidance_loss(soft_pair, t).unwrap().value,
                losses::drg_loss(hard, soft_pair, &label, t, c.alpha).unwrap().value,
                sr.value,
                losses::dsr_loss(&p1, &label, &sr, c.beta).unwrap().value,
                losses::combined_loss(hard, soft_pair, &label, &sr, t, c.alpha, c.beta).unwrap().value,
            ];
            let refs = [
                oracle::ce_logits(zs, y),
                oracle::kl(&oracle::softmax(zt, c.tau_drg), &oracle::softmax(zs, c.tau_drg)),
                oracle::kd(zs, zt, y, c.tau_drg),
                oracle::hl(zs, zt, y),
                oracle::rg(zs, zt, c.tau_drg),
                oracle::drg(zs, zt, y, c.tau_drg, c.alpha),
                oracle::sr(&c.prev[i], zs, c.tau_dsr),
                oracle::dsr(zs, y, &c.prev[i], c.tau_dsr, c.beta),
                oracle::combined(zs, zt, y, &c.prev[i], c.tau_drg, c.tau_dsr, c.alpha, c.beta),
            ];
            for j in 0..9 {
                lib[j] += values[j] / BATCH as f64;
                ora[j] += refs[j] / BATCH as f64;
            }
        }
        for j in 0..9 {
            worst[j] = worst[j].max(rel(lib[j], ora[j]));
        }
        // the training path's batch objective against the same oracle means
        let main = Instance::tensor(&c.student);
        let aux = Instance::tensor(&c.teacher);
        let drg = batch_loss(&main, Some(&aux), &c.labels, None, &c.weights(c.alpha, 0.0)).unwrap();
        let dsr = batch_loss(&main, None, &c.labels, Some(&c.prev), &c.weights(0.0, c.beta)).unwrap();
        let all = batch_loss(&main, Some(&aux), &c.labels, Some(&c.prev), &c.weights(c.alpha, c.beta)).unwrap();
        worst[5] = worst[5].max(rel(drg.breakdown.total, ora[5]));
        worst[7] = worst[7].max(rel(dsr.breakdown.total, ora[7]));
        worst[8] = worst[8].max(rel(all.breakdown.total, ora[8]));
    }
    let summary = names.iter().zip(worst).map(|(n, w)| format!("{n} {w:.1e}")).collect::<Vec<_>>().join(", ");
    let msg = format!("{LOSS_INSTANCES} instances, K={K}, batch {BATCH}; worst relative error: {summary}");
    if worst.iter().all(|w| *w <= LOSS_REL_TOL) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn gradient_correctness() -> Check {
    let mut rng = support::rng(200);
    let mut worst: f64 = 0.0;
    for _ in 0..GRAD_INSTANCES {
        let c = Instance::random(&mut rng);
        let main = Instance::tensor(&c.student);
        let aux = Instance::tensor(&c.teacher);
        let flat_s = c.student.concat();
        let flat_t = c.teacher.concat();
        let rows = |flat: &[f64]| flat.chunks(K).map(|r| r.to_vec()).collect::<Vec<_>>();
        let mean_over = |f: &dyn Fn(usize) -> f64| (0..BATCH).map(f).sum::<f64>() / BATCH as f64;

        let drg = batch_loss(&main, Some(&aux), &c.labels, None, &c.weights(c.alpha, 0.0)).unwrap();
        let drg_of = |s: &[f64], t: &[f64]| {
            let (s, t) = (rows(s), rows(t));
            mean_over(&|i| oracle::drg(&s[i], &t[i], c.labels[i], c.tau_drg, c.alpha))
        };
        let num_s = oracle::central_diff(|s| drg_of(s, &flat_t), &flat_s, FD_STEP);
        let num_t = oracle::central_diff(|t| drg_of(&flat_s, t), &flat_t, FD_STEP);
        worst = worst.max(oracle::rel_err(drg.grad_main.data(), &num_s));
        worst = worst.max(oracle::rel_err(drg.grad_aux.as_ref().unwrap().data(), &num_t));

        let dsr = batch_loss(&main, None, &c.labels, Some(&c.prev), &c.weights(0.0, c.beta)).unwrap();
        let dsr_of = |s: &[f64]| {
            let s = rows(s);
            mean_over(&|i| oracle::dsr(&s[i], c.labels[i], &c.prev[i], c.tau_dsr, c.beta))
        };
        let num = oracle::central_diff(dsr_of, &flat_s, FD_STEP);
        worst = worst.max(oracle::rel_err(dsr.grad_main.data(), &num));
    }
    let msg = format!(
        "{GRAD_INSTANCES} instances, central differences with step {FD_STEP:e}; worst relative error {worst:.2e} (bound {GRAD_REL_TOL:e})"
    );
    if worst < GRAD_REL_TOL {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn loss_trace(data: &LabeledImageDataset, method: Method, alpha: f64, beta: f64) -> Vec<u64> {
    let mut c = TrainingConfig::desk(method);
    c.epochs = 2;
    c.schedule = LrSchedule { initial: 0.1, milestones: vec![1], factor: 0.2 };
    c.alpha = alpha;
    c.beta = beta;
    c.seed = 5;
    c.batch.shuffle_seed = 5;
    let net = build_network(support::MODEL, 10, 3, &c).unwrap();
    let mut t = Trainer::new(net, c).unwrap();
    t.fit(data).unwrap();
    t.loss_trace().iter().map(|v| v.to_bits()).collect()
}

fn degeneracy_identities() -> Check {
    let data = load_dataset("synthetic-gaussian-10", &PathBuf::new(), 0).map_err(|e| e.to_string())?;
    let combined = loss_trace(&data, Method::Combined, 0.0, 0.0);
    let drg = loss_trace(&data, Method::Drg, 0.0, 1.0);
    let dsr = loss_trace(&data, Method::Dsr, 0.2, 0.0);
    let vanilla = loss_trace(&data, Method::Vanilla, 0.2, 1.0);
    let msg = format!(
        "synthetic-gaussian-10, 2 epochs, {} iterations; combined(alpha=0, beta=0) vs DRG(alpha=0) identical: {}; DSR(beta=0) vs vanilla identical: {}",
        combined.len(),
        combined == drg,
        dsr == vanilla
    );
    if combined == drg && dsr == vanilla && !combined.is_empty() {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn permutation_invariance() -> Check {
    let mut rng = support::rng(400);
    let k = 10;
    let prev = losses::rank_ascending(&lv(&support::random_logits(&mut rng, k, 4.0)));
    let cur = support::random_logits(&mut rng, k, 4.0);
    let base = losses::shape_regularization_loss(&prev, &losses::rank_ascending(&lv(&cur)), tau(4.0)).unwrap();
    let rows: Vec<Vec<f64>> = (0..32).map(|_| support::random_logits(&mut rng, k, 4.0)).collect();
    let base_var = ranked_output_variance(&Tensor::new(vec![32, k], rows.concat()).unwrap()).unwrap();
    let mut perm: Vec<usize> = (0..k).collect();
    let mut mismatches = 0;
    for _ in 0..PERMUTATIONS {
        perm.shuffle(&mut rng);
        let permuted: Vec<f64> = perm.iter().map(|&i| cur[i]).collect();
        let sr = losses::shape_regularization_loss(&prev, &losses::rank_ascending(&lv(&permuted)), tau(4.0)).unwrap();
        if sr.value.to_bits() != base.value.to_bits() {
            mismatches += 1;
        }
        let shuffled: Vec<f64> = rows
            .iter()
            .flat_map(|r| {
                let mut p: Vec<usize> = (0..k).collect();
                p.shuffle(&mut rng);
                p.into_iter().map(|i| r[i]).collect::<Vec<_>>()
            })
            .collect();
        let var = ranked_output_variance(&Tensor::new(vec![32, k], shuffled).unwrap()).unwrap();
        if var != base_var {
            mismatches += 1;
        }
    }
    let msg = format!(
        "{PERMUTATIONS} random permutations each for the shape term and ranked variance; {mismatches} inexact results"
    );
    if mismatches == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn reference_ledger() -> Check {
    let table: [(&str, f64); 4] = [("Vanilla", 77.29), ("DRG", 79.07), ("DSR", 78.15), ("DRG+DSR", 79.30)];
    let deltas = [0.0, 1.78, 0.88, 2.01];
    let taps = [("B#1", 78.93), ("B#2", 79.30), ("B#3", 76.96)];
    // the published DSR delta (+0.88) disagrees with its own accuracies (+0.86); both are shown
    let mut notes = Vec::new();
    for ((name, acc), printed) in table.iter().zip(deltas) {
        let recomputed = ((acc - table[0].1) * 100.0).round() / 100.0;
        if (recomputed - printed).abs() > 0.025 {
            return Err(format!("delta for {name} recomputes to {recomputed:.2}, published {printed:.2}"));
        }
        if (recomputed - printed).abs() > 1e-9 {
            notes.push(format!("{name} published +{printed:.2} recomputes to +{recomputed:.2}"));
        }
    }
    if taps[2].1 >= taps[1].1 {
        return Err("tap ablation lost its ordering".into());
    }
    let rows: Vec<String> = table
        .iter()
        .zip(deltas)
        .map(|((n, a), d)| if d == 0.0 { format!("{n} {a:.2}%") } else { format!("{n} {a:.2}% (+{d:.2}%)") })
        .collect();
    let tap_rows: Vec<String> = taps.iter().map(|(t, a)| format!("{t} {a:.2}%")).collect();
    Ok(format!(
        "ResNet18 on CIFAR-100, 200 epochs: {}; tap ablation: {}; rounding notes: {}. Recorded targets only; reproducing them needs full-scale runs",
        rows.join(", "),
        tap_rows.join(", "),
        if notes.is_empty() { "none".to_string() } else { notes.join(", ") }
    ))
}

/// Desk-scale runs shared by criteria 6, 7, 8 and 10.
#[derive(Default)]
struct DeskStudy {
    data: Option<std::result::Result<LabeledImageDataset, String>>,
    logs: Vec<((Method, u64, usize), MetricsLog)>,
}

impl DeskStudy {
    fn data(&mut self) -> std::result::Result<&LabeledImageDataset, String> {
        if self.data.is_none() {
            let loaded = match std::env::var_os("SKD_DATA_ROOT") {
                None => Err(format!("SKD_DATA_ROOT is not set; {DESK_DATASET} is required")),
                Some(root) => load_dataset(DESK_DATASET, &PathBuf::from(root), 0).map_err(|e| match e {
                    Error::MissingDataset { .. } => format!("dataset unavailable: {e}"),
                    other => other.to_string(),
                }),
            };
            self.data = Some(loaded);
        }
        self.data.as_ref().unwrap().as_ref().map_err(|e| e.clone())
    }

    fn run(&mut self, method: Method, seed: u64, tap: usize) -> std::result::Result<MetricsLog, String> {
        if let Some((_, log)) = self.logs.iter().find(|(key, _)| *key == (method, seed, tap)) {
            return Ok(log.clone());
        }
        let log = self.fresh_run(method, seed, tap)?;
        self.logs.push(((method, seed, tap), log.clone()));
        Ok(log)
    }

    fn fresh_run(&mut self, method: Method, seed: u64, tap: usize) -> std::result::Result<MetricsLog, String> {
        let data = self.data()?;
        let mut c = TrainingConfig::desk(method);
        c.seed = seed;
        c.batch.shuffle_seed = seed;
        c.tap = TapPoint(tap);
        c.augmentation = Some(data.default_policy());
        let net: Network = build_network(DESK_MODEL, data.num_classes, 3, &c).map_err(|e| e.to_string())?;
        let mut t = Trainer::new(net, c).map_err(|e| e.to_string())?;
        eprintln!("desk run: {method} seed {seed} tap {tap}");
        t.fit(data).map_err(|e| e.to_string())?;
        Ok(t.log().clone())
    }

    fn final_top1(&mut self, method: Method, seed: u64, tap: usize) -> std::result::Result<f64, String> {
        let log = self.run(method, seed, tap)?;
        Ok(log.last("test").ok_or("empty log")?.top1_accuracy)
    }

    fn mean_top1(&mut self, method: Method, tap: usize) -> std::result::Result<f64, String> {
        let mut sum = 0.0;
        for seed in DESK_SEEDS {
            sum += self.final_top1(method, seed, tap)?;
        }
        Ok(sum / DESK_SEEDS.len() as f64)
    }
}

fn direction_of_effect(desk: &mut DeskStudy) -> Check {
    let v = desk.mean_top1(Method::Vanilla, 2)?;
    let d = desk.mean_top1(Method::Drg, 2)?;
    let s = desk.mean_top1(Method::Dsr, 2)?;
    let c = desk.mean_top1(Method::Combined, 2)?;
    let msg = format!(
        "mean test top-1 over seeds {DESK_SEEDS:?}: vanilla {:.2}%, DRG {:.2}%, DSR {:.2}%, DRG+DSR {:.2}% ({:+.2} points)",
        v * 100.0,
        d * 100.0,
        s * 100.0,
        c * 100.0,
        (c - v) * 100.0
    );
    if c >= v + COMBINED_MARGIN && d >= v - SINGLE_METHOD_SLACK && s >= v - SINGLE_METHOD_SLACK {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn variance_trend(desk: &mut DeskStudy) -> Check {
    let mut notes = Vec::new();
    let mut ok = true;
    for seed in DESK_SEEDS {
        let log = desk.run(Method::Combined, seed, 2)?;
        let test = log.split("test");
        let acc: Vec<f64> = test.iter().map(|r| r.top1_accuracy).collect();
        let var: Vec<f64> = test.iter().map(|r| r.ranked_output_variance).collect();
        let r = pearson(&acc, &var).map_err(|e| e.to_string())?;
        let (first, last) = (var[0], var[var.len() - 1]);
        ok &= last < first && r < 0.0;
        notes.push(format!("seed {seed}: variance {first:.3} -> {last:.3}, pearson {r:.3}"));
    }
    let msg = format!("DRG+DSR desk runs, test split; {}", notes.join("; "));
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn tap_trend(desk: &mut DeskStudy) -> Check {
    let last = skd_core::model::model_spec(DESK_MODEL, 10, 3).map_err(|e| e.to_string())?.num_blocks();
    let mut means = Vec::new();
    for tap in [1, 2, last] {
        means.push((tap, desk.mean_top1(Method::Combined, tap)?));
    }
    let msg = means.iter().map(|(t, m)| format!("B#{t} {:.2}%", m * 100.0)).collect::<Vec<_>>().join(", ");
    let best_shallow = means[0].1.max(means[1].1);
    if means[2].1 < best_shallow {
        Ok(format!("mean DRG+DSR test top-1: {msg}"))
    } else {
        Err(format!("last-block tap is the best: {msg}"))
    }
}

fn overhead_bound() -> Check {
    let data = synthetic_gaussian(10, 512, 16, 32, 9);
    let make = |method| {
        let c = TrainingConfig::desk(method);
        Trainer::new(build_network(DESK_MODEL, 10, 3, &c).unwrap(), c).unwrap()
    };
    let mut vanilla = make(Method::Vanilla);
    let mut combined = make(Method::Combined);
    let (pv, pc) =
        profile_pair(&mut vanilla, &mut combined, &data.train, ProfileOptions::default()).map_err(|e| e.to_string())?;
    let aux = match combined.network() {
        Network::Scaffolded(s) => s.aux().parameter_count(),
        Network::Plain(_) => return Err("combined trainer has no auxiliary classifier".into()),
    };
    let ratio = pc.seconds_per_iteration / pv.seconds_per_iteration;
    let extra = pc.parameter_count - pv.parameter_count;
    let msg = format!(
        "{DESK_MODEL}, batch 128, 32x32 inputs, {} timed iterations after {} warmup: vanilla {:.3} s/it, DRG+DSR {:.3} s/it, ratio {ratio:.3} (bound {OVERHEAD_BOUND}); extra parameters {extra}, auxiliary classifier {aux}",
        pv.iterations,
        ProfileOptions::default().warmup,
        pv.seconds_per_iteration,
        pc.seconds_per_iteration
    );
    if ratio <= OVERHEAD_BOUND && extra == aux {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn determinism(desk: &mut DeskStudy) -> Check {
    let seed = DESK_SEEDS[0];
    let first = desk.run(Method::Vanilla, seed, 2)?;
    let second = desk.fresh_run(Method::Vanilla, seed, 2)?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    first.write_csv(&a).map_err(|e| e.to_string())?;
    second.write_csv(&b).map_err(|e| e.to_string())?;
    let same = std::fs::read(&a).map_err(|e| e.to_string())? == std::fs::read(&b).map_err(|e| e.to_string())?;
    let msg = format!("two vanilla desk runs with seed {seed}: metrics files identical: {same}");
    if same {
        Ok(msg)
    } else {
        Err(msg)
    }
}
