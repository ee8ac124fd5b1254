use kkm::kernel::{gram_indexed, gram_square};
use kkm::nystrom::{build_embedder, Dictionary, DEFAULT_RANK_TOL};
use kkm::seed::rng_from;
use kkm::{Dataset, KernelSpec};
use nalgebra::DMatrix;
use rand::Rng;

fn random_data<R: Rng>(rng: &mut R, n: usize, d: usize) -> Dataset {
    let v = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
    Dataset::new(n, d, v, None).unwrap()
}

fn random_kernel<R: Rng>(rng: &mut R, data: &Dataset) -> KernelSpec {
    if rng.random_bool(0.5) {
        KernelSpec::gaussian(rng.random_range(0.5..3.0)).unwrap()
    } else {
        KernelSpec::linear_for(data)
    }
}

fn random_dict<R: Rng>(rng: &mut R, n: usize, m: usize) -> Dictionary {
    let ids = (0..m).map(|_| rng.random_range(0..n)).collect();
    Dictionary::explicit(ids, n).unwrap()
}

/// `T K_mm T^T = I` to 1e-8 once the kept spectrum has condition number at
/// most 1e6. Beyond that, rounding in `T K_mm T^T` alone is of order
/// `eps * cond`, so the check is scaled accordingly.
#[test]
fn whitening_over_random_instances() {
    let mut rng = rng_from(101);
    let mut strict = 0;
    for case in 0..100 {
        let n = rng.random_range(2..=50);
        let d = rng.random_range(1..=6);
        let m = rng.random_range(1..=10.min(n));
        let data = random_data(&mut rng, n, d);
        let kernel = random_kernel(&mut rng, &data);
        let dict = random_dict(&mut rng, n, m);
        let e = build_embedder(&data, &dict, &kernel, DEFAULT_RANK_TOL).unwrap();
        let kmm = gram_square(&kernel, &e.landmarks).values;
        let w = &e.transform * kmm * e.transform.transpose();
        let err = (w - DMatrix::identity(e.dim(), e.dim())).amax();
        let kept = &e.kept_eigenvalues;
        let cond = kept.iter().cloned().fold(0.0, f64::max)
            / kept.iter().cloned().fold(f64::INFINITY, f64::min);
        let tol = if cond <= 1e6 {
            1e-8
        } else {
            1e-8f64.max(100.0 * f64::EPSILON * cond)
        };
        assert!(
            err <= tol,
            "case {case}: whitening error {err}, cond {cond:e}"
        );
        if cond <= 1e6 {
            strict += 1;
        }
    }
    assert!(strict >= 50, "{strict} well-conditioned instances");
}

#[test]
fn gram_reproduction_and_residual_formula() {
    let mut rng = rng_from(202);
    for case in 0..60 {
        let n = rng.random_range(3..=40);
        let m = rng.random_range(1..=10.min(n));
        let data = random_data(&mut rng, n, 3);
        let kernel = random_kernel(&mut rng, &data);
        let dict = random_dict(&mut rng, n, m);
        let e = build_embedder(&data, &dict, &kernel, DEFAULT_RANK_TOL).unwrap();
        let emb = e.embed(&data).unwrap();

        let all: Vec<usize> = (0..n).collect();
        let knm = gram_indexed(&kernel, &data, &all, &dict.indices)
            .unwrap()
            .values;
        let kmm = gram_indexed(&kernel, &data, &dict.indices, &dict.indices)
            .unwrap()
            .values;
        let svd = kmm.svd(true, true);
        let tol = 1e-10 * svd.singular_values.max();
        let pinv = svd.pseudo_inverse(tol).unwrap();
        let target = &knm * pinv * knm.transpose();
        let got = &emb.coords * emb.coords.transpose();
        let rel = (&got - &target).norm() / target.norm().max(1e-300);
        assert!(rel <= 1e-8, "case {case}: reproduction error {rel}");

        for i in 0..n {
            let kxx = kernel.kappa_sq.min(emb.self_kernel[i]);
            let sq: f64 = emb.coords.row(i).iter().map(|v| v * v).sum();
            assert!((emb.residuals[i] - (emb.self_kernel[i] - sq)).abs() <= 1e-12);
            assert!(
                emb.residuals[i] >= -1e-8 * kxx.max(1.0),
                "case {case}: residual {}",
                emb.residuals[i]
            );
        }
    }
}

#[test]
fn adding_a_landmark_never_raises_residuals() {
    let mut rng = rng_from(303);
    for case in 0..60 {
        let n = rng.random_range(4..=30);
        let m = rng.random_range(1..=8.min(n - 1));
        let data = random_data(&mut rng, n, 2);
        let kernel = random_kernel(&mut rng, &data);
        let dict = random_dict(&mut rng, n, m);
        let mut bigger = dict.indices.clone();
        bigger.push(rng.random_range(0..n));
        let bigger = Dictionary::explicit(bigger, n).unwrap();
        let small = build_embedder(&data, &dict, &kernel, DEFAULT_RANK_TOL)
            .unwrap()
            .embed(&data)
            .unwrap();
        let large = build_embedder(&data, &bigger, &kernel, DEFAULT_RANK_TOL)
            .unwrap()
            .embed(&data)
            .unwrap();
        for i in 0..n {
            assert!(
                large.residuals[i] <= small.residuals[i] + 1e-8,
                "case {case}, point {i}: {} > {}",
                large.residuals[i],
                small.residuals[i]
            );
        }
    }
}

#[test]
fn embedding_is_independent_of_worker_count() {
    let mut rng = rng_from(404);
    let data = random_data(&mut rng, 300, 4);
    let kernel = KernelSpec::gaussian(1.3).unwrap();
    let dict = random_dict(&mut rng, 300, 25);
    let e = build_embedder(&data, &dict, &kernel, DEFAULT_RANK_TOL).unwrap();
    let run = |t: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .unwrap()
            .install(|| e.embed(&data).unwrap())
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a.coords, b.coords);
    assert_eq!(a.residuals, b.residuals);
}

#[test]
fn saved_embedder_embeds_identically() {
    let mut rng = rng_from(505);
    let data = random_data(&mut rng, 40, 3);
    let kernel = KernelSpec::gaussian(0.9).unwrap();
    let dict = random_dict(&mut rng, 40, 7);
    let e = build_embedder(&data, &dict, &kernel, DEFAULT_RANK_TOL).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("embedder.json");
    e.save(&path).unwrap();
    let back = kkm::Embedder::load(&path).unwrap();
    assert_eq!(
        back.embed(&data).unwrap().coords,
        e.embed(&data).unwrap().coords
    );
}
