mod common;

use common::{scripted_dataset, speed_demos, speed_model, speed_norm};
use structpolicy::graph::DensePolicy;
use structpolicy::pgdl::{compile_source, fixtures};
use structpolicy::policy::PolicyModel;
use structpolicy::sim::ObservationSchema;
use structpolicy::trainer::{
    adam_step, mse_loss, sample_batch, smoothed, train, AdamState, Dataset, DemoSource, Demonstration,
    Frame, NormalizationSpec, TrainConfig,
};

#[test]
fn recovers_target_speed() {
    let demo = speed_demos();
    let data = Dataset::from_demos([&demo], &speed_norm()).unwrap();
    let mut model = speed_model(0.3);
    let report = train(&mut model, &data, &TrainConfig::with_seed(1)).unwrap();
    let recovered = model.params()[0] * 100.0;
    assert!((recovered - 60.0).abs() <= 3.0, "recovered {recovered}");
    assert_eq!(model.params()[1], 1.5, "frozen gain moved");
    assert_eq!(report.losses.len(), 800);
    let s = smoothed(&report.losses, 0.1);
    assert!(s[799] <= s[49]);
}

#[test]
fn zero_targets_are_fit() {
    let src = "obs x\nparam w = 0.2\naction steer = w * x clip(-1, 1)\n";
    let (c, _) = compile_source(src, &ObservationSchema::open()).unwrap();
    let frames = (0..500)
        .map(|i| Frame { obs: vec![(i as f64 / 250.0) - 1.0], action: vec![0.0] })
        .collect();
    let demo = Demonstration::new("z", DemoSource::Human, vec!["steer".into()], frames);
    let data = Dataset::from_demos([&demo], &NormalizationSpec::identity(1)).unwrap();
    let mut model = PolicyModel::Structured(Box::new(c));
    let report = train(&mut model, &data, &TrainConfig::with_seed(3)).unwrap();
    assert!(report.final_loss < 1e-6, "final loss {}", report.final_loss);
}

#[test]
fn dense_fits_better_than_structured() {
    let data = scripted_dataset();
    let cfg = TrainConfig::with_seed(7);
    let (c, _) = compile_source(fixtures::RACING_BASELINE, &ObservationSchema::racing()).unwrap();
    let mut structured = PolicyModel::Structured(Box::new(c));
    let rs = train(&mut structured, &data, &cfg).unwrap();
    let mut dense = PolicyModel::Dense(DensePolicy::baseline(7));
    let rd = train(&mut dense, &data, &cfg).unwrap();
    eprintln!("final loss: dense {} structured {}", rd.final_loss, rs.final_loss);
    assert!(rd.final_loss < rs.final_loss, "dense {} structured {}", rd.final_loss, rs.final_loss);
    assert!(rs.final_loss < 0.1, "structured {}", rs.final_loss);
    for r in [&rs, &rd] {
        let s = smoothed(&r.losses, 0.1);
        assert!(s[799] <= s[49], "{} > {}", s[799], s[49]);
    }
}

#[test]
fn training_is_deterministic() {
    let demo = speed_demos();
    let data = Dataset::from_demos([&demo], &speed_norm()).unwrap();
    let cfg = TrainConfig { total_batches: 50, ..TrainConfig::with_seed(11) };
    let mut a = speed_model(0.2);
    let mut b = speed_model(0.2);
    let ra = train(&mut a, &data, &cfg).unwrap();
    let rb = train(&mut b, &data, &cfg).unwrap();
    assert_eq!(ra.losses, rb.losses);
    assert_eq!(ra.checksum, rb.checksum);
    assert_eq!(a.params(), b.params());

    let mut d1 = PolicyModel::Dense(DensePolicy::random(vec![1, 4, 2], 5));
    let mut d2 = d1.clone();
    assert_eq!(train(&mut d1, &data, &cfg).unwrap().checksum, train(&mut d2, &data, &cfg).unwrap().checksum);
}

#[test]
fn empty_dataset_is_rejected() {
    let mut demo = speed_demos();
    demo.meta.used = false;
    assert!(Dataset::from_demos([&demo], &speed_norm()).is_err());
}

#[test]
fn mse_matches_naive_loop() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let n = rng.gen_range(1..10);
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let t: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut acc = 0.0;
        let mut i = 0;
        while i < n {
            let d = p[i] - t[i];
            acc += d * d;
            i += 1;
        }
        assert!((mse_loss(&p, &t).unwrap() - acc / n as f64).abs() < 1e-12);
    }
}

#[test]
fn sampling_is_uniform_and_reproducible() {
    let cfg = TrainConfig { batch_size: 1000, ..TrainConfig::with_seed(4) };
    assert_eq!(sample_batch(10, &cfg, 3).unwrap(), sample_batch(10, &cfg, 3).unwrap());
    assert_ne!(sample_batch(10, &cfg, 3).unwrap(), sample_batch(10, &cfg, 4).unwrap());
    let mut counts = [0u32; 10];
    for b in 0..100 {
        for i in sample_batch(10, &cfg, b).unwrap() {
            counts[i] += 1;
        }
    }
    let n = 100_000.0;
    let sigma = (n * 0.1 * 0.9f64).sqrt();
    for c in counts {
        assert!((c as f64 - n * 0.1).abs() < 3.0 * sigma, "{counts:?}");
    }
}

/// Textbook Adam on f(w) = (w - 3)², kept separate from the library.
fn reference_adam(steps: usize, lr: f64) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut w, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
    let mut path = Vec::new();
    for t in 1..=steps {
        let g = 2.0 * (w - 3.0);
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t as i32));
        let vh = v / (1.0 - b2.powi(t as i32));
        w -= lr * mh / (vh.sqrt() + eps);
        path.push(w);
    }
    path
}

#[test]
fn adam_solves_scalar_quadratic() {
    let cfg = TrainConfig { learning_rate: 0.1, ..TrainConfig::default() };
    let oracle = reference_adam(200, 0.1);
    let mut w = vec![0.0];
    let mut s = AdamState::new(1);
    for expected in &oracle {
        let g = 2.0 * (w[0] - 3.0);
        adam_step(&mut w, &[g], &[false], &mut s, &cfg).unwrap();
        assert!((w[0] - expected).abs() < 1e-12);
    }
    assert!((w[0] - 3.0).abs() < 1e-2, "w = {}", w[0]);
}

#[test]
fn frames_persist_through_files() {
    let demo = speed_demos();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("speed.csv");
    demo.write_frames(std::fs::File::create(&path).unwrap()).unwrap();
    let back = Demonstration::read_frames(std::io::BufReader::new(std::fs::File::open(&path).unwrap())).unwrap();
    assert_eq!(back, demo);
}
