use metachex::analysis::{
    export_embeddings, fit_logistic, fit_logistic_rows, project_embeddings, sigmoid, EmbeddingExport, LogOddsFeatures, Projector, Tsne,
    TsneConfig,
};
use metachex::data::MemoryImageSource;
use metachex::labels::NUM_PATHOLOGIES;
use metachex::model::{BackboneConfig, Model, ModelSpec, Variant};
use metachex::preprocess::PreprocessConfig;
use metachex::rng::rng_from;
use metachex::synthetic::{render_chestxray, synthetic_records, SyntheticSpec};
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn objective(rows: &[Vec<f64>], y: &[u8], l2: f64, theta: &[f64]) -> f64 {
    let mut ll = 0.0;
    for (x, &yi) in rows.iter().zip(y) {
        let z = theta[0] + x.iter().zip(&theta[1..]).map(|(a, b)| a * b).sum::<f64>();
        let p = 1.0 / (1.0 + (-z).exp());
        ll += if yi == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    ll - 0.5 * l2 * theta[1..].iter().map(|b| b * b).sum::<f64>()
}

// Plain gradient ascent with Armijo backtracking. The objective is at least
// l2-strongly concave in the coefficients, so a gradient norm of 1e-6 pins
// the optimum far inside the 1e-3 comparison tolerance.
fn gradient_ascent(rows: &[Vec<f64>], y: &[u8], l2: f64) -> Vec<f64> {
    let d = rows[0].len() + 1;
    let mut theta = vec![0.0; d];
    let mut t = 1.0;
    for _ in 0..200_000 {
        let mut g = vec![0.0; d];
        for (x, &yi) in rows.iter().zip(y) {
            let z = theta[0] + x.iter().zip(&theta[1..]).map(|(a, b)| a * b).sum::<f64>();
            let r = f64::from(yi) - 1.0 / (1.0 + (-z).exp());
            g[0] += r;
            for j in 1..d {
                g[j] += r * x[j - 1];
            }
        }
        for j in 1..d {
            g[j] -= l2 * theta[j];
        }
        let gn2: f64 = g.iter().map(|v| v * v).sum();
        if gn2.sqrt() < 1e-6 {
            break;
        }
        let f0 = objective(rows, y, l2, &theta);
        t *= 4.0;
        loop {
            let cand: Vec<f64> = theta.iter().zip(&g).map(|(a, b)| a + t * b).collect();
            if objective(rows, y, l2, &cand) >= f0 + 1e-4 * t * gn2 || t < 1e-12 {
                theta = cand;
                break;
            }
            t *= 0.5;
        }
    }
    theta
}

fn random_instance(seed: u64, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<u8>) {
    let mut rng = rng_from(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let beta: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng)).collect();
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| normal.sample(&mut rng)).collect()).collect();
    let mut y: Vec<u8> = rows
        .iter()
        .map(|x| u8::from(rng.random_bool(sigmoid(x.iter().zip(&beta).map(|(a, b)| a * b).sum()))))
        .collect();
    y[0] = 0;
    y[1] = 1;
    (rows, y)
}

fn names(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("x{j}")).collect()
}

#[test]
fn matches_gradient_ascent_oracle() {
    for seed in 0..20 {
        let (rows, y) = random_instance(seed, 40, 3);
        let l2 = 1.0;
        let m = fit_logistic_rows(&rows, &y, &names(3), l2).unwrap();
        assert!(m.converged, "{} {}", m.iterations, m.gradient_norm);
        let oracle = gradient_ascent(&rows, &y, l2);
        assert!((m.intercept - oracle[0]).abs() < 1e-3, "seed {seed}");
        for j in 0..3 {
            assert!((m.coefficients[j] - oracle[j + 1]).abs() < 1e-3, "seed {seed} coef {j}");
        }
    }
}

#[test]
fn one_dimensional_toy_matches_golden_section() {
    let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![if i < 10 { -1.0 } else { 1.0 }]).collect();
    let y: Vec<u8> = (0..20).map(|i| u8::from(i >= 10)).collect();
    let m = fit_logistic_rows(&rows, &y, &names(1), 1.0).unwrap();
    // By symmetry the intercept is zero; maximize over β alone.
    let f = |b: f64| objective(&rows, &y, 1.0, &[0.0, b]);
    let (mut lo, mut hi) = (0.0f64, 20.0f64);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    while hi - lo > 1e-10 {
        let a = hi - phi * (hi - lo);
        let b = lo + phi * (hi - lo);
        if f(a) < f(b) {
            lo = a;
        } else {
            hi = b;
        }
    }
    assert!(m.intercept.abs() < 1e-9);
    assert!((m.coefficients[0] - (lo + hi) / 2.0).abs() < 1e-3);
}

#[test]
fn recovers_planted_coefficients() {
    let mut rng = rng_from(99);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let beta: [f64; NUM_PATHOLOGIES] = std::array::from_fn(|k| (k as f64 - 6.5) / 7.0);
    let intercept = 0.3;
    let feats: Vec<LogOddsFeatures> = (0..10_000)
        .map(|i| {
            let x: [f64; NUM_PATHOLOGIES] = std::array::from_fn(|_| normal.sample(&mut rng));
            let z = intercept + x.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
            LogOddsFeatures {
                image_id: i.to_string(),
                x,
                tb_label: u8::from(rng.random_bool(sigmoid(z))),
            }
        })
        .collect();
    let m = fit_logistic(&feats, 1e-8).unwrap();
    assert!(m.converged, "{} {}", m.iterations, m.gradient_norm);
    for k in 0..NUM_PATHOLOGIES {
        assert!((m.coefficients[k] - beta[k]).abs() < 0.1, "{k}: {} vs {}", m.coefficients[k], beta[k]);
    }
}

#[test]
fn doubling_penalty_shrinks_coefficients() {
    for seed in 100..130 {
        let (rows, y) = random_instance(seed, 30, 4);
        let mut prev = f64::INFINITY;
        for l2 in [0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0] {
            let norm = fit_logistic_rows(&rows, &y, &names(4), l2).unwrap().coefficient_norm();
            assert!(norm <= prev + 1e-12, "seed {seed} l2 {l2}");
            prev = norm;
        }
    }
}

fn silhouette(points: &[[f64; 2]], labels: &[usize]) -> f64 {
    let dist = |a: &[f64; 2], b: &[f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let mean_to = |c: usize| {
            let ds: Vec<f64> = points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i && labels[j] == c)
                .map(|(_, q)| dist(p, q))
                .collect();
            ds.iter().sum::<f64>() / ds.len() as f64
        };
        let a = mean_to(labels[i]);
        let b = mean_to(1 - labels[i]);
        total += (b - a) / a.max(b);
    }
    total / points.len() as f64
}

fn two_clusters(n: usize, dim: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = rng_from(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let points = labels
        .iter()
        .map(|&c| (0..dim).map(|j| normal.sample(&mut rng) + if j == 0 { 10.0 * c as f64 } else { 0.0 }).collect())
        .collect();
    (points, labels)
}

#[test]
fn tsne_keeps_clusters_apart_and_is_deterministic() {
    let (points, labels) = two_clusters(100, 8, 1);
    let tsne = Tsne::new(TsneConfig {
        iterations: 500,
        ..Default::default()
    });
    let a = tsne.project(&points, 5).unwrap();
    let b = tsne.project(&points, 5).unwrap();
    assert_eq!(a.len(), 100);
    assert_eq!(a, b);
    let s = silhouette(&a, &labels);
    assert!(s > 0.5, "silhouette {s}");
}

#[test]
fn tsne_rejects_too_few_points() {
    let (points, _) = two_clusters(89, 4, 2);
    assert!(Tsne::default().project(&points, 1).is_err());
}

#[test]
fn export_round_trips_and_reports_missing_images() {
    let spec = SyntheticSpec {
        patients: 12,
        max_images_per_patient: 1,
        image_size: 16,
        ..Default::default()
    };
    let records = synthetic_records(&spec);
    let mut images = MemoryImageSource::new();
    for r in &records[1..] {
        images.insert(r.image_id.clone(), render_chestxray(r, 16, spec.seed));
    }
    let model = Model::build(
        &ModelSpec {
            variant: Variant::Metachexnet,
            backbone: BackboneConfig::tiny(8),
        },
        1,
    )
    .unwrap();
    let pre = PreprocessConfig {
        target_size: (16, 16),
        ..Default::default()
    };
    let refs: Vec<_> = records.iter().collect();
    let (mut export, failures) = export_embeddings(&model, &refs, &images, &pre, 5).unwrap();
    assert_eq!(failures.len(), 1);
    assert_eq!(failures[0].image_id, records[0].image_id);
    assert_eq!(export.len(), records.len() - 1);
    assert!(export.rows.iter().all(|r| r.features.len() == 8));

    let (again, _) = export_embeddings(&model, &refs, &images, &pre, 3).unwrap();
    assert_eq!(export.to_csv(None), again.to_csv(None));

    let tsne = Tsne::new(TsneConfig {
        perplexity: 3.0,
        iterations: 100,
        ..Default::default()
    });
    project_embeddings(&mut export, &tsne, 4).unwrap();
    let text = export.to_csv(Some("config_hash: abc"));
    assert!(text.starts_with("# config_hash: abc\nimage_id,gender,position,age_years,f_1,"));
    let back = EmbeddingExport::from_csv(text.as_bytes()).unwrap();
    assert_eq!(back, export);
}
