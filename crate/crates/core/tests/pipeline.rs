use kkm::bench::synthetic::{gaussian_mixture, MixtureSpec};
use kkm::bench::{
    read_records, records_to_csv, run_experiment, run_on_dataset, split_dataset, ExperimentConfig,
};
use kkm::cluster::{fit, kernel_cost_exact};
use kkm::kernel::gram_square;
use kkm::nystrom::{build_embedder, Dictionary};
use kkm::seed::rng_from;
use kkm::{Dataset, KernelSpec};

fn mixture(n: usize, seed: u64) -> Dataset {
    gaussian_mixture(
        &MixtureSpec {
            std: 0.8,
            ..MixtureSpec::new(n, 2, 4)
        },
        seed,
    )
    .unwrap()
}

fn write_csv(data: &Dataset, path: &std::path::Path) {
    let mut text = String::from("a,b,label\n");
    for (r, l) in data.rows().zip(data.labels().unwrap()) {
        text.push_str(&format!("{},{},{l}\n", r[0], r[1]));
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn full_dictionary_matches_exact_kernel_cost() {
    let data = mixture(40, 1);
    let mut cfg = ExperimentConfig::new("unused", 3, vec![1000]);
    cfg.repeats = 3;
    cfg.sigma = Some(1.5);
    cfg.test_fraction = 0.25;
    let records = run_on_dataset(&cfg, &data).unwrap();
    let (train, _) = split_dataset(&cfg, &data).unwrap();
    let kernel = KernelSpec::gaussian(1.5).unwrap();
    let kn = gram_square(&kernel, &train);
    for r in &records {
        let mut rng = rng_from(r.seed);
        let e = build_embedder(&train, &Dictionary::all(train.n()), &kernel, cfg.rank_tol).unwrap();
        let model = fit(
            &e.embed(&train).unwrap(),
            cfg.k,
            &cfg.lloyd_options(),
            &mut rng,
        )
        .unwrap();
        let exact = kernel_cost_exact(&kn, &model.partition()).unwrap();
        assert!(
            (r.w_train - exact).abs() <= 1e-8 * exact.max(1.0),
            "repeat {}: {} vs {exact}",
            r.repeat,
            r.w_train
        );
        assert!(r.residual_mean < 1e-8);
    }
}

#[test]
fn identical_configs_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mix.csv");
    write_csv(&mixture(120, 2), &path);
    let mut cfg = ExperimentConfig::new(&path, 4, vec![3, 12, 40]);
    cfg.label_column = Some(-1);
    cfg.repeats = 2;
    cfg.sigma = Some(2.0);
    let a = records_to_csv(&run_experiment(&cfg).unwrap()).unwrap();
    let b = records_to_csv(&run_experiment(&cfg).unwrap()).unwrap();
    assert_eq!(a, b);
    cfg.threads = Some(1);
    let c = records_to_csv(&run_experiment(&cfg).unwrap()).unwrap();
    cfg.threads = Some(3);
    let d = records_to_csv(&run_experiment(&cfg).unwrap()).unwrap();
    assert_eq!(a, c);
    assert_eq!(c, d);
    cfg.seed = 1;
    assert_ne!(records_to_csv(&run_experiment(&cfg).unwrap()).unwrap(), a);
}

#[test]
fn auto_bandwidth_and_labels_flow_through() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mix.csv");
    write_csv(&mixture(80, 3), &path);
    let mut cfg = ExperimentConfig::new(&path, 4, vec![10]);
    cfg.label_column = Some(2);
    cfg.repeats = 2;
    let recs = run_experiment(&cfg).unwrap();
    assert!(recs.iter().all(|r| r.nmi.is_some()));
    cfg.test_nmi = true;
    let test = run_experiment(&cfg).unwrap();
    assert_ne!(recs[0].nmi, test[0].nmi);
    assert_eq!(recs[0].w_test, test[0].w_test);
}

#[test]
fn emitted_records_parse_back() {
    let data = mixture(60, 4);
    let mut cfg = ExperimentConfig::new("unused", 2, vec![5, 20]);
    cfg.repeats = 3;
    cfg.sigma = Some(1.0);
    cfg.record_timings = true;
    let recs = run_on_dataset(&cfg, &data).unwrap();
    assert!(recs
        .iter()
        .all(|r| r.t_embed_ms.is_some() && r.t_lloyd_ms.is_some()));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nested/records.csv");
    kkm::bench::emit_csv(&recs, &out).unwrap();
    assert_eq!(read_records(&out).unwrap(), recs);
    let summary = dir.path().join("summary.csv");
    kkm::bench::emit_summary(&recs, &summary).unwrap();
    assert_eq!(
        std::fs::read_to_string(&summary).unwrap().lines().count(),
        3
    );
}

#[test]
fn cost_falls_as_dictionary_grows() {
    let data = mixture(300, 5);
    let mut cfg = ExperimentConfig::new("unused", 4, vec![2, 30]);
    cfg.repeats = 4;
    cfg.sigma = Some(2.0);
    let recs = run_on_dataset(&cfg, &data).unwrap();
    let mean = |m: usize| {
        let v: Vec<f64> = recs.iter().filter(|r| r.m == m).map(|r| r.w_test).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(mean(30) < mean(2), "{} vs {}", mean(30), mean(2));
}
