use std::fs;

use rand::Rng as _;
use ssl_disparity::data::{group_counts, GroupSpec, SynthConfig};
use ssl_disparity::harness::{
    self, files, prepare_data, read_json, run_seed, seed_dir, DataSource, ExperimentConfig,
    MitigationSettings, Regime, SslSettings,
};
use ssl_disparity::metrics::MetricsReport;
use ssl_disparity::mitigation::{Allocation, BalanceMode};
use ssl_disparity::model::{Architecture, Classifier, TrainConfig, TrainExample};
use ssl_disparity::pseudolabel::implicit_pseudo;
use ssl_disparity::rng::stream;

fn config() -> ExperimentConfig {
    let group = |name: &str, sep: f64, n_labeled: usize| GroupSpec {
        name: name.into(),
        class_means: vec![vec![-sep / 2.0, 0.0, 1.0], vec![sep / 2.0, 0.0, 1.0]],
        noise_scale: 1.0,
        n_labeled,
        n_unlabeled: 40,
    };
    ExperimentConfig {
        data: DataSource::Synthetic {
            generator: SynthConfig {
                num_classes: 2,
                dim: 3,
                groups: vec![group("a", 3.0, 12), group("b", 1.0, 6)],
                seed: 4,
            },
            test_per_group: 200,
        },
        train: TrainConfig {
            epochs: 6,
            batch_size: 8,
            ..TrainConfig::default()
        },
        ssl: SslSettings::default(),
        mitigation: MitigationSettings::default(),
        delta: 0.05,
        seeds: vec![5, 6, 7],
        output_dir: None,
    }
}

#[test]
fn snapshot_targets_carry_no_gradient() {
    let mut rng = stream(21, 0);
    for arch in [Architecture::Linear, Architecture::Mlp { hidden: 4 }] {
        let model = Classifier::init(arch, 3, 5, 0.7, 9);
        let xs: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..5).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let examples = |m: &Classifier| -> Vec<TrainExample> {
            xs.iter()
                .map(|x| TrainExample::new(x.clone(), implicit_pseudo(m, x, 0.0, &mut stream(0, 0)).unwrap()))
                .collect()
        };
        let frozen = examples(&model);
        let (_, grad) = model.objective_and_gradient(&frozen).unwrap();
        assert!(grad.iter().all(|g| g.abs() < 1e-12), "{grad:?}");

        // with targets that follow the parameters the objective is the mean entropy, which moves
        let entropy = |p: &[f64]| {
            let m = model.with_params(p.to_vec()).unwrap();
            m.objective(&examples(&m)).unwrap()
        };
        let h = 1e-6;
        let moving = (0..model.params().len()).any(|i| {
            let mut up = model.params().to_vec();
            let mut down = up.clone();
            up[i] += h;
            down[i] -= h;
            ((entropy(&up) - entropy(&down)) / (2.0 * h)).abs() > 1e-4
        });
        assert!(moving);
    }
}

#[test]
fn every_regime_is_repeatable_on_disk() {
    for regime in [Regime::TwoIteration, Regime::IterativeL1, Regime::IterativeL2] {
        let mut cfg = config();
        cfg.ssl.regime = regime;
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        let ra = harness::run(&cfg, &a, 1).unwrap();
        let rb = harness::run(&cfg, &b, 3).unwrap();
        assert!(ra.first_error.is_none());
        assert_eq!(ra.aggregate, rb.aggregate);
        for s in &cfg.seeds {
            for f in [files::METRICS, files::BOUNDS] {
                let fa = fs::read(seed_dir(&a, *s).join(f)).unwrap();
                assert_eq!(fa, fs::read(seed_dir(&b, *s).join(f)).unwrap(), "{regime:?} seed {s} {f}");
            }
        }
    }
}

#[test]
fn seed_files_match_direct_runs() {
    let cfg = config();
    let dir = tempfile::tempdir().unwrap();
    harness::run(&cfg, dir.path(), 2).unwrap();
    let direct = run_seed(&cfg, 6, None).unwrap();
    let on_disk: MetricsReport = read_json(&seed_dir(dir.path(), 6).join(files::METRICS)).unwrap();
    assert_eq!(on_disk, direct.metrics);
}

#[test]
fn report_rebuilds_the_aggregate() {
    let cfg = config();
    let dir = tempfile::tempdir().unwrap();
    let summary = harness::run(&cfg, dir.path(), 1).unwrap();
    fs::remove_file(dir.path().join(files::AGGREGATE)).unwrap();
    let rebuilt = harness::report(dir.path(), "run").unwrap();
    assert_eq!(rebuilt, summary.aggregate);
    assert_eq!(rebuilt.seeds, cfg.seeds);
}

#[test]
fn growth_doubles_each_group_and_keeps_the_original_draws() {
    let mut cfg = config();
    let plain = prepare_data(&cfg, 5).unwrap();
    cfg.mitigation = MitigationSettings {
        balance: BalanceMode::BalanceBoth,
        grow: Some(Allocation::Scale(2.0)),
        ..MitigationSettings::default()
    };
    let grown = prepare_data(&cfg, 5).unwrap();
    let counts = group_counts(&grown.full);
    assert_eq!(counts["a"], (24, 40));
    assert_eq!(counts["b"], (12, 40));
    for e in plain.full.examples() {
        assert!(grown.full.examples().contains(e));
    }
    assert_eq!(plain.test, grown.test);
}
