use heavytail_core::math::{estimate_alpha_moment, pareto_moment};
use heavytail_core::problems::{make_quadratic, make_robust_regression, NoiseKind, NoiseModel, RegressionOptions};
use heavytail_core::{ParamVec, RngStream};

fn pareto(shape: f64, scale: f64, alpha: f64) -> NoiseModel {
    NoiseModel::new(NoiseKind::ParetoAdditive, shape, scale, alpha).unwrap()
}

fn random_w(dim: usize, radius: f64, rng: &mut RngStream) -> ParamVec {
    rng.unit_sphere(dim).scale(radius * rng.uniform())
}

#[test]
fn pareto_additive_gradient_is_unbiased() {
    let problem = make_robust_regression(3, 50, 11, pareto(3.0, 1.0, 2.0)).unwrap();
    let w = ParamVec::new(vec![0.3, -0.2, 0.1]).unwrap();
    let exact = problem.full_grad(&w);
    let n = 1_000_000;
    let mut rng = RngStream::new(5, 0);
    let mut sum = [0.0; 3];
    let mut sum_sq = [0.0; 3];
    for _ in 0..n {
        let g = problem.stochastic_grad(&w, &mut rng);
        for i in 0..3 {
            sum[i] += g[i];
            sum_sq[i] += g[i] * g[i];
        }
    }
    for i in 0..3 {
        let mean = sum[i] / n as f64;
        let var = sum_sq[i] / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        assert!((mean - exact[i]).abs() <= 3.0 * se, "coord {i}: {mean} vs {} (se {se})", exact[i]);
    }
}

#[test]
fn pareto_three_noise_has_second_moment_three() {
    let noise = pareto(3.0, 1.0, 2.0);
    let mut rng = RngStream::new(8, 0);
    let n = 1_000_000;
    let m2 = (0..n).map(|_| noise.draw(4, &mut rng).norm_sq()).sum::<f64>() / n as f64;
    assert!((m2 - 3.0).abs() <= 0.05 * 3.0, "E|noise|^2 = {m2}");
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

#[test]
fn infinite_variance_witness() {
    // a = 1.8: the sample variance of |noise| keeps growing with n while the
    // 1.5-th moment settles
    let noise = pareto(1.8, 1.0, 1.5);
    let checkpoints = [10_000usize, 100_000, 1_000_000];
    let mut var_at = vec![Vec::new(); 3];
    let mut m15_at = vec![Vec::new(); 3];
    for stream in 0..5 {
        let mut rng = RngStream::new(21, stream);
        let (mut s1, mut s2, mut s15) = (0.0, 0.0, 0.0);
        let mut k = 0;
        for n in 1..=checkpoints[2] {
            let r = noise.draw(2, &mut rng).norm();
            s1 += r;
            s2 += r * r;
            s15 += r.powf(1.5);
            if n == checkpoints[k] {
                let nf = n as f64;
                var_at[k].push(s2 / nf - (s1 / nf).powi(2));
                m15_at[k].push(s15 / nf);
                k += 1;
            }
        }
    }
    let var: Vec<f64> = var_at.into_iter().map(median).collect();
    let m15: Vec<f64> = m15_at.into_iter().map(median).collect();
    assert!(var[0] < var[1] && var[1] < var[2], "variance {var:?}");
    let rel = (m15[2] - m15[1]).abs() / m15[2];
    assert!(rel <= 0.05, "1.5-moment {m15:?}");
    let exact = pareto_moment(1.8, 1.0, 1.5);
    assert!((m15[2] - exact).abs() / exact <= 0.1, "{} vs {exact}", m15[2]);
}

#[test]
fn declared_moment_bound_covers_probe_points() {
    for (noise, seed) in [(pareto(1.8, 0.25, 1.5), 1u64), (pareto(3.0, 0.25, 2.0), 2)] {
        let problem = make_robust_regression(8, 256, seed, noise).unwrap();
        let alpha = problem.moment.alpha;
        let bound = problem.moment.g_value.powf(alpha) * 1.2;
        let mut rng = RngStream::new(seed, 99);
        for _ in 0..10 {
            let w = random_w(8, 3.0, &mut rng);
            let draws: Vec<ParamVec> = (0..100_000).map(|_| problem.stochastic_grad(&w, &mut rng)).collect();
            let est = estimate_alpha_moment(&draws, alpha).unwrap();
            assert!(est <= bound, "alpha {alpha}: {est} > {bound}");
        }
    }
}

#[test]
fn sampling_noise_averages_to_full_gradient() {
    let problem = make_robust_regression(5, 40, 3, NoiseModel::new(NoiseKind::Sampling, 3.0, 1.0, 2.0).unwrap()).unwrap();
    let mut rng = RngStream::new(3, 1);
    let w = random_w(5, 1.0, &mut rng);
    let avg = problem.mean_grad_over(&w, &problem.dataset);
    let full = problem.full_grad(&w);
    assert_eq!(avg, full);
}

fn central_difference(f: impl Fn(&ParamVec) -> f64, w: &ParamVec, h: f64) -> Vec<f64> {
    (0..w.dim())
        .map(|i| {
            let mut plus = w.clone().into_vec();
            let mut minus = plus.clone();
            plus[i] += h;
            minus[i] -= h;
            (f(&ParamVec::new(plus).unwrap()) - f(&ParamVec::new(minus).unwrap())) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1e-12)
}

#[test]
fn quadratic_gradient_matches_finite_differences() {
    let mut rng = RngStream::new(4, 0);
    for d in 1..6 {
        let problem = make_quadratic(d, 50.0, NoiseModel::none(2.0)).unwrap();
        let w = random_w(d, 2.0, &mut rng);
        let fd = central_difference(|v| problem.loss(v), &w, 1e-5);
        let err = rel_err(problem.full_grad(&w).as_slice(), &fd);
        assert!(err <= 1e-8, "d={d}: {err}");
    }
}

#[test]
fn quadratic_examples() {
    let problem = make_quadratic(1, 1.0, NoiseModel::none(2.0)).unwrap();
    let w = ParamVec::new(vec![2.0]).unwrap();
    assert_eq!(problem.loss(&w), 2.0);
    assert_eq!(problem.full_grad(&w).as_slice(), &[2.0]);
    assert_eq!(problem.full_grad(&ParamVec::zeros(1)).norm(), 0.0);
    assert!(make_quadratic(2, 0.5, NoiseModel::none(2.0)).is_err());
}

#[test]
fn population_estimate_on_quadratic_matches_analytic() {
    let problem = make_quadratic(3, 10.0, NoiseModel::none(2.0)).unwrap();
    let w = ParamVec::new(vec![0.5, -1.0, 2.0]).unwrap();
    let est = problem.population_grad_estimate(&w, 1000, &mut RngStream::new(0, 0)).unwrap();
    assert_eq!(est.mean, problem.full_grad(&w));
}

#[test]
fn noiseless_population_gradient_vanishes_at_w_star() {
    let mut opts = RegressionOptions::new(4, 64, 17, NoiseModel::none(2.0));
    opts.label_scale = 0.0;
    let problem = heavytail_core::problems::make_robust_regression_with(&opts).unwrap();
    let w_star = problem.w_star().unwrap().clone();
    assert_eq!(problem.loss(&w_star), 0.0);
    assert!(problem.full_grad(&w_star).norm() < 1e-15);
    let est = problem.population_grad_estimate(&w_star, 10_000, &mut RngStream::new(1, 2)).unwrap();
    for i in 0..4 {
        assert!(est.mean[i].abs() <= 3.0 * est.se[i] + 1e-15);
    }
    let single = problem.population_grad_estimate(&w_star, 1, &mut RngStream::new(1, 3)).unwrap();
    assert_eq!(single.n_fresh, 1);
}

#[test]
fn b_constant_bounds_training_set_gradients_at_origin() {
    let problem = make_robust_regression(6, 500, 2, pareto(1.8, 0.25, 1.5)).unwrap();
    let sup = problem.grad_norm_at_zero_sup();
    assert!(sup.is_finite() && sup <= problem.b_constant());
}

#[test]
fn dataset_csv_has_feature_and_label_columns() {
    let problem = make_robust_regression(3, 5, 2, NoiseModel::none(2.0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    problem.write_dataset_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "x_1,x_2,x_3,y");
    assert_eq!(lines.len(), 6);
    for line in &lines[1..] {
        let x: Vec<f64> = line.split(',').take(3).map(|c| c.parse().unwrap()).collect();
        assert!(x.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1.0 + 1e-12);
    }
}
