//! Acceptance checks. Run with `cargo test -p ssl-disparity --test acceptance`; prints one
//! PASS/FAIL line per check and exits nonzero if any fails.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng as _;
use ssl_disparity::bounds::{
    br_proxy, hoeffding_term, lemma2_check, verify_lemma1, DiscreteInstance,
};
use ssl_disparity::data::{GroupSpec, SynthConfig};
use ssl_disparity::harness::{
    self, run_seed, DataSource, ExperimentConfig, MitigationSettings, SeedOutcome, SslSettings,
    TeacherKind,
};
use ssl_disparity::metrics::{group_mean, group_std, median};
use ssl_disparity::mitigation::{Allocation, BalanceMode};
use ssl_disparity::model::{
    ce_loss, Architecture, Classifier, LossKind, SoftLabel, TrainConfig, TrainExample,
};
use ssl_disparity::rng::{stream, Rng};

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn check(name: &'static str, pass: bool, detail: String) -> Check {
    Check { name, pass, detail }
}

fn random_label(rng: &mut Rng, k: usize) -> SoftLabel {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|r| r / total).collect();
    let head: f64 = p[1..].iter().sum();
    p[0] = 1.0 - head;
    SoftLabel::new(p).unwrap()
}

fn random_probs(rng: &mut Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|r| r / total).collect()
}

fn other_class(rng: &mut Rng, k: usize, not: usize) -> usize {
    let c = rng.random_range(0..k - 1);
    if c >= not {
        c + 1
    } else {
        c
    }
}

fn summary_statistics() -> Check {
    let brs = [24.71, 21.76, 28.21, -9.57, 27.27, -8.33, -13.82, 29.47];
    let sd = group_std(&brs).unwrap();
    let mean = group_mean(&brs).unwrap();
    // two-pass oracle, independent of the library
    let m: f64 = brs.iter().sum::<f64>() / 8.0;
    let s = (brs.iter().map(|b| (b - m) * (b - m)).sum::<f64>() / 7.0).sqrt();
    let pass = (sd - 19.28).abs() <= 0.01
        && (mean - 12.46).abs() <= 0.01
        && (sd - s).abs() < 1e-12
        && (mean - m).abs() < 1e-12;
    check("summary statistics", pass, format!("sd {sd:.4}, mean {mean:.4}"))
}

fn closed_forms() -> Check {
    let h = hoeffding_term(100.0, 0.05).unwrap();
    let h_oracle = (2.0 * (4.0f64 / 0.05).ln() / 100.0).sqrt();
    let p = br_proxy(0.074, 400.0, 100.0, 0.05).unwrap();
    let p_oracle = 1.0 - 0.074 / (h_oracle - (2.0 * 80.0f64.ln() / 400.0).sqrt());
    let p_neg = br_proxy(0.2, 400.0, 100.0, 0.05).unwrap();

    let mut rng = stream(11, 0);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let k = rng.random_range(2..=6);
        let pred = random_label(&mut rng, k);
        let (t1, t2) = (random_label(&mut rng, k), random_label(&mut rng, k));
        let a: f64 = rng.random_range(0.0..1.0);
        let mix: Vec<f64> = t1.probs().iter().zip(t2.probs()).map(|(x, y)| a * x + (1.0 - a) * y).collect();
        let mix = SoftLabel::new(mix).unwrap();
        let lhs = ce_loss(&pred, &mix);
        let rhs = a * ce_loss(&pred, &t1) + (1.0 - a) * ce_loss(&pred, &t2);
        worst = worst.max((lhs - rhs).abs());
    }
    let pass = (h - 0.29604).abs() <= 1e-5
        && (h - h_oracle).abs() < 1e-12
        && (p - 0.5001).abs() <= 1e-3
        && (p - p_oracle).abs() < 1e-9
        && p_neg < 0.0
        && worst <= 1e-9;
    check(
        "closed forms",
        pass,
        format!("hoeffding {h:.6}, proxy {p:.5}, proxy(0.2) {p_neg:.4}, CE linearity {worst:.1e}"),
    )
}

/// P(X) = P(u)·P(v) with the pseudo-label error depending on u only and the agreement of f
/// with the pseudo-label depending on v only.
fn product_instance(rng: &mut Rng) -> DiscreteInstance {
    let k = rng.random_range(2..=4);
    let nu = rng.random_range(1..=4);
    let nv = rng.random_range(1..=8 / nu);
    let (pu, pv) = (random_probs(rng, nu), random_probs(rng, nv));
    let err: Vec<bool> = (0..nu).map(|_| rng.random_bool(0.4)).collect();
    let agree: Vec<bool> = (0..nv).map(|_| rng.random_bool(0.6)).collect();
    let mut inst = DiscreteInstance {
        p_x: vec![],
        truth: vec![],
        reference: vec![],
        classifier: vec![],
    };
    for u in 0..nu {
        for v in 0..nv {
            let y = rng.random_range(0..k);
            let yt = if err[u] { other_class(rng, k, y) } else { y };
            let f = if agree[v] { yt } else { other_class(rng, k, yt) };
            inst.p_x.push(pu[u] * pv[v]);
            inst.truth.push(SoftLabel::one_hot(k, y));
            inst.reference.push(SoftLabel::one_hot(k, yt));
            inst.classifier.push(f);
        }
    }
    let head: f64 = inst.p_x[1..].iter().sum();
    inst.p_x[0] = 1.0 - head;
    inst
}

fn term1_sandwich() -> Check {
    let start = Instant::now();
    let mut rng = stream(12, 0);
    let mut failures = 0;
    for _ in 0..100 {
        let inst = product_instance(&mut rng);
        let (holds, _) = verify_lemma1(&inst).unwrap();
        failures += usize::from(!holds);
    }
    let elapsed = start.elapsed();
    check(
        "term-1 sandwich on 100 instances",
        failures == 0 && elapsed < Duration::from_secs(5),
        format!("{failures} violations in {elapsed:.2?}"),
    )
}

fn noise_identity() -> Check {
    let mut rng = stream(13, 0);
    let mut worst = 0.0f64;
    let mut flagged = 0;
    for _ in 0..1000 {
        let k = rng.random_range(2..=6);
        let reference = random_label(&mut rng, k);
        let truth = SoftLabel::one_hot(k, rng.random_range(0..k));
        let c = lemma2_check(&reference, &truth).unwrap();
        let tv = 0.5 * reference.probs().iter().zip(truth.probs()).map(|(r, t)| (r - t).abs()).sum::<f64>();
        worst = worst.max((c.eta - c.e).abs()).max((c.eta - tv).abs());
        flagged += usize::from(!c.equal);
    }
    check(
        "noise identity on 1000 references",
        worst <= 1e-12 && flagged == 0,
        format!("max |eta - e| {worst:.1e}"),
    )
}

fn gradient_check() -> Check {
    let mut rng = stream(14, 0);
    let (k, d) = (3, 4);
    let mut worst = 0.0f64;
    for arch in [Architecture::Linear, Architecture::Mlp { hidden: 5 }] {
        for loss in [LossKind::CrossEntropy, LossKind::Mse] {
            let model = Classifier::init(arch, k, d, 0.5, rng.random());
            let examples: Vec<TrainExample> = (0..6)
                .map(|_| {
                    let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
                    TrainExample::new(x, random_label(&mut rng, k))
                        .with_loss(loss)
                        .with_weight(rng.random_range(0.5..2.0))
                })
                .collect();
            let (_, grad) = model.objective_and_gradient(&examples).unwrap();
            let h = 1e-6;
            for (i, &g) in grad.iter().enumerate() {
                let shifted = |dx: f64| {
                    let mut p = model.params().to_vec();
                    p[i] += dx;
                    model.with_params(p).unwrap().objective(&examples).unwrap()
                };
                let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()).max(1e-3));
            }
        }
    }
    check("finite-difference gradients", worst < 1e-4, format!("max relative error {worst:.2e}"))
}

fn two_group_config(rich_sep: f64, poor_sep: f64) -> ExperimentConfig {
    let d = 50;
    let group = |name: &str, sep: f64, offset: f64| {
        let mut m0 = vec![0.0; d];
        let mut m1 = vec![0.0; d];
        m0[0] = -sep / 2.0;
        m1[0] = sep / 2.0;
        m0[1] = offset;
        m1[1] = offset;
        GroupSpec {
            name: name.into(),
            class_means: vec![m0, m1],
            noise_scale: 1.0,
            n_labeled: 25,
            n_unlabeled: 500,
        }
    };
    ExperimentConfig {
        data: DataSource::Synthetic {
            generator: SynthConfig {
                num_classes: 2,
                dim: d,
                groups: vec![group("rich", rich_sep, 3.0), group("poor", poor_sep, -3.0)],
                seed: 1,
            },
            test_per_group: 10_000,
        },
        train: TrainConfig {
            epochs: 5,
            learning_rate: 0.05,
            batch_size: 32,
            ..TrainConfig::default()
        },
        ssl: SslSettings::default(),
        mitigation: MitigationSettings::default(),
        delta: 0.05,
        seeds: (0..20).collect(),
        output_dir: None,
    }
}

fn run_all(cfg: &ExperimentConfig) -> Vec<SeedOutcome> {
    cfg.seeds.iter().map(|&s| run_seed(cfg, s, None).unwrap()).collect()
}

fn matthew_effect() -> Check {
    let start = Instant::now();
    let runs = run_all(&two_group_config(4.0, 1.0));
    let (mut rich, mut poor, mut wins) = (vec![], vec![], 0);
    for r in &runs {
        let g = &r.metrics.groups;
        if let (Some(a), Some(b)) = (g[0].br, g[1].br) {
            rich.push(a);
            poor.push(b);
            wins += usize::from(a > b);
        }
    }
    let harder = run_all(&two_group_config(1.0, 0.5));
    let negative = harder
        .iter()
        .filter(|r| r.metrics.groups[1].br.is_some_and(|b| b < 0.0))
        .count();
    let elapsed = start.elapsed();
    let (mr, mp) = (median(&rich).unwrap(), median(&poor).unwrap());
    check(
        "rich group benefits more",
        mr > mp && wins * 5 >= runs.len() * 4 && negative >= 1 && elapsed < Duration::from_secs(120),
        format!(
            "median BR rich {mr:.3} poor {mp:.3}, rich ahead in {wins}/{}, \
             harder variant negative poor BR in {negative} seeds, {elapsed:.1?}",
            runs.len()
        ),
    )
}

fn four_group_config() -> ExperimentConfig {
    let d = 50;
    let sizes = [100, 50, 25, 10];
    let shifts = [0.0, 0.5, -1.0, 1.5];
    let groups = sizes
        .iter()
        .zip(shifts)
        .enumerate()
        .map(|(i, (&n, shift))| {
            let mut m0 = vec![0.0; d];
            let mut m1 = vec![0.0; d];
            m0[0] = shift - 1.5;
            m1[0] = shift + 1.5;
            m0[1 + i] = 3.0;
            m1[1 + i] = 3.0;
            GroupSpec {
                name: format!("g{i}"),
                class_means: vec![m0, m1],
                noise_scale: 1.0,
                n_labeled: n,
                n_unlabeled: 30 * n,
            }
        })
        .collect();
    ExperimentConfig {
        data: DataSource::Synthetic {
            generator: SynthConfig {
                num_classes: 2,
                dim: d,
                groups,
                seed: 1,
            },
            test_per_group: 20_000,
        },
        ..two_group_config(4.0, 1.0)
    }
}

fn mitigation_trend() -> Check {
    let start = Instant::now();
    let base = four_group_config();
    let steps = [
        ("none", BalanceMode::None, None),
        ("balance_labeled", BalanceMode::BalanceLabeled, None),
        ("balance_both", BalanceMode::BalanceBoth, None),
        ("grow x2", BalanceMode::BalanceBoth, Some(Allocation::Scale(2.0))),
    ];
    let mut medians = vec![];
    let mut batch_std: Vec<Vec<f64>> = vec![];
    let mut batch_neg: Vec<Vec<usize>> = vec![];
    for (_, balance, grow) in &steps {
        let mut cfg = base.clone();
        cfg.mitigation = MitigationSettings {
            balance: *balance,
            grow: grow.clone(),
            ..MitigationSettings::default()
        };
        let runs = run_all(&cfg);
        let stds = |rs: &[SeedOutcome]| median(&rs.iter().filter_map(|r| r.metrics.br_std).collect::<Vec<_>>()).unwrap();
        medians.push(stds(&runs));
        batch_std.push(runs.chunks(5).map(stds).collect());
        batch_neg.push(runs.chunks(5).map(|c| c.iter().map(|r| r.metrics.n_negative_br).sum()).collect());
    }
    let batches = batch_std[0].len();
    // std(none) >= std(balance_labeled) >= std(balance_both) >= std(grow)
    let std_failures: Vec<usize> = (0..3)
        .map(|i| (0..batches).filter(|&b| batch_std[i + 1][b] > batch_std[i][b]).count())
        .collect();
    let neg_ok = (0..batches)
        .filter(|&b| (0..3).all(|i| batch_neg[i + 1][b] <= batch_neg[i][b]))
        .count();
    let elapsed = start.elapsed();
    let pass = std_failures.iter().all(|&f| 4 * f <= batches)
        && 4 * neg_ok >= 3 * batches
        && elapsed < Duration::from_secs(300);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    check(
        "mitigation lowers BR spread",
        pass,
        format!(
            "median br_std [{}], batches failing each step {std_failures:?}, \
             negatives per batch {batch_neg:?} (non-increasing in {neg_ok}/{batches}), {elapsed:.1?}",
            fmt(&medians)
        ),
    )
}

fn oracle_teacher() -> Check {
    let mut cfg = two_group_config(4.0, 1.0);
    cfg.ssl.teacher = TeacherKind::TruthOracle;
    let mut worst_gap = 0.0f64;
    let mut worst_bound = 0.0f64;
    for r in run_all(&cfg) {
        let b = &r.bounds;
        let all = r.metrics.overall.as_ref().unwrap();
        worst_gap = worst_gap.max((all.a_semi.unwrap() - all.a_ideal.unwrap()).abs());
        let h = hoeffding_term(b.n as f64, b.delta).unwrap();
        worst_bound = worst_bound
            .max(b.eta_bar.abs())
            .max(b.e_bar.abs())
            .max((b.ssl_ub - h).abs());
    }
    check(
        "truth oracle teacher",
        worst_bound == 0.0 && worst_gap <= 0.02,
        format!("max |semi - ideal| {worst_gap:.4}, max bound residual {worst_bound:.1e}"),
    )
}

fn tree(root: &Path, name: &str) -> Vec<(String, Vec<u8>)> {
    let mut out = vec![];
    for entry in std::fs::read_dir(root).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            let f = p.join(name);
            out.push((f.display().to_string(), std::fs::read(&f).unwrap()));
        }
    }
    out.sort();
    out.into_iter().map(|(p, c)| (p.replace(&root.display().to_string(), ""), c)).collect()
}

fn determinism() -> Check {
    let mut cfg = two_group_config(4.0, 1.0);
    cfg.seeds = vec![0, 1, 2, 3];
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    harness::run(&cfg, &a, 1).unwrap();
    harness::run(&cfg, &b, 2).unwrap();
    let same = ["metrics.json", "bounds.json"]
        .iter()
        .all(|f| tree(&a, f) == tree(&b, f) && tree(&a, f).len() == 4);
    check("repeated runs are byte-identical", same, "metrics.json, bounds.json over 4 seeds".into())
}

fn main() -> ExitCode {
    let checks: [fn() -> Check; 9] = [
        summary_statistics,
        closed_forms,
        term1_sandwich,
        noise_identity,
        gradient_check,
        matthew_effect,
        mitigation_trend,
        oracle_teacher,
        determinism,
    ];
    let mut failed = 0;
    for (i, run) in checks.iter().enumerate() {
        let c = run();
        println!("{} {}. {}: {}", if c.pass { "PASS" } else { "FAIL" }, i + 1, c.name, c.detail);
        failed += usize::from(!c.pass);
    }
    println!("{} of {} acceptance checks passed", checks.len() - failed, checks.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
