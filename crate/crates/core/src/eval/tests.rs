use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::baseline::BaselineConfig;
use crate::data::{gen_springs, split, subsample, SpringKind};
use crate::latentode::LatentOdeConfig;
use crate::nn::Activation;
use crate::train::{Adam, ModelConfig};

fn gaussian(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
    Tensor::matrix(n, d, (0..n * d).map(|_| StandardNormal.sample(rng)).collect()).unwrap()
}

fn fitted(config: ModelConfig, seed: u64) -> Fitted {
    let model = Model::new(&config).unwrap();
    let params = model.init_params(seed).unwrap();
    Fitted::new(model, params)
}

fn springs() -> Dataset {
    let ds = gen_springs(&[SpringKind::Undamped, SpringKind::ExpDamped], 20, 4).unwrap();
    split(&subsample(&ds, 40).unwrap().observed, 1).unwrap()
}

fn record(epoch: usize, seconds: f64) -> EpochRecord {
    EpochRecord {
        epoch,
        train_loss: 0.0,
        val_loss: 0.0,
        seconds,
        diverged_steps: 0,
    }
}

#[test]
fn exact_reconstruction_has_zero_rmse() {
    let steps = vec![Tensor::matrix(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap(); 5];
    assert_eq!(sample_rmse(&steps, &steps).unwrap(), vec![0.0; 3]);
}

#[test]
fn sample_rmse_agrees_with_baseline_rmse() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let recon: Vec<Tensor> = (0..7).map(|_| gaussian(&mut rng, 4, 2)).collect();
    let truth: Vec<Tensor> = (0..7).map(|_| gaussian(&mut rng, 4, 2)).collect();
    let got = sample_rmse(&recon, &truth).unwrap();
    for (i, g) in got.iter().enumerate() {
        let pick = |s: &[Tensor]| Tensor::vstack(&s.iter().map(|t| Tensor::matrix(1, 2, t.row(i).to_vec()).unwrap()).collect::<Vec<_>>()).unwrap();
        assert_eq!(*g, rmse(&pick(&recon), &pick(&truth)).unwrap());
    }
}

#[test]
fn rmse_stats_mean_and_error() {
    let s = RmseStats::from_samples(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(s.mean, 2.5);
    assert!((s.std_err - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    assert!(RmseStats::from_samples(vec![]).is_err());
}

#[test]
fn rmse_table_follows_reporting_order() {
    let ds = springs();
    let node = fitted(ModelConfig::Node(LatentOdeConfig::desk()), 1);
    let base = fitted(ModelConfig::Baseline(BaselineConfig::desk()), 1);
    let names = ["solar", "spring123", "spring1", "spiral", "spring13", "spring2"];
    let runs: Vec<ExperimentRun> = names
        .iter()
        .map(|&experiment| ExperimentRun {
            experiment,
            dataset: &ds,
            node: Some(&node),
            baseline: (experiment != "solar").then_some(&base),
        })
        .collect();
    let report = rmse_table(&runs).unwrap();
    let order: Vec<&str> = report.rows.iter().map(|r| r.experiment.as_str()).collect();
    assert_eq!(order, ["spiral", "spring1", "spring2", "spring13", "spring123", "solar"]);
    let first = report.rows[0].node.as_ref().unwrap();
    assert_eq!(first.per_sample.len(), ds.indices(Split::Test).unwrap().len());
    assert!(first.per_sample.iter().all(|&r| r >= 0.0));
    let csv = report.to_csv();
    assert!(csv.starts_with("experiment,node,baseline\nspiral,"));
    assert!(csv.trim_end().ends_with(','));
}

#[test]
fn extrapolation_grid_covers_the_requested_span() {
    let times: Vec<f64> = (0..200).map(|k| k as f64 * 0.05).collect();
    let grid = extrapolation_grid(&times, -0.5, 1.5).unwrap();
    let span = 199.0 * 0.05;
    // 99.5 steps on either side, rounded inward.
    assert_eq!(grid.len(), 99 + 99);
    assert!(grid.iter().all(|&t| t < 0.0 || t > span));
    assert!(grid.iter().all(|&t| t >= -0.5 * span && t <= 1.5 * span));
    assert!((grid[0] + 99.0 * 0.05).abs() < 1e-9);
    assert!((grid[grid.len() - 1] - 298.0 * 0.05).abs() < 1e-9);
    let even: Vec<f64> = (0..11).map(|k| k as f64).collect();
    assert_eq!(extrapolation_grid(&even, -0.5, 1.5).unwrap().len(), 10);
    assert!(extrapolation_grid(&times, 0.0, 1.0).unwrap().is_empty());
    assert!(extrapolation_grid(&times, 0.2, 1.0).is_err());
    assert!(extrapolation_grid(&times[..1], -0.5, 1.5).is_err());
}

#[test]
fn node_export_has_both_regions() {
    let ds = springs();
    let f = fitted(ModelConfig::Node(LatentOdeConfig::desk()), 2);
    let times = ds.times().to_vec();
    let grid = extrapolation_grid(&times, -0.5, 1.5).unwrap();
    let sample = ds.sample(0);
    let rows = export_reconstruction(&f, &times, &sample, &grid, |_| None).unwrap();
    let observed: Vec<&ReconRow> = rows.iter().filter(|r| r.region == Region::Observed).collect();
    let extrapolated = rows.iter().filter(|r| r.region == Region::Extrapolated).count();
    assert_eq!(observed.len(), times.len());
    assert_eq!(extrapolated, grid.len());
    assert!(rows.windows(2).all(|w| w[0].t < w[1].t));
    for (i, r) in observed.iter().enumerate() {
        assert_eq!(r.truth, [sample.row(i)[0], sample.row(i)[1]]);
    }
    // Observed rows match a plain decode of the same sample.
    let Model::Node(m) = &f.model else { unreachable!() };
    let z0 = m.encode(&f.params, &sample).unwrap().mu;
    let plain = m.decode(&f.params, &z0, &times).unwrap();
    for (i, r) in observed.iter().enumerate() {
        assert_eq!(r.recon, [plain.row(i)[0], plain.row(i)[1]]);
    }
    let csv = reconstruction_csv(&rows);
    assert!(csv.contains(",observed\n") && csv.contains(",extrapolated\n"));
    assert!(csv.starts_with("t,truth_x,truth_y,recon_x,recon_y,region\n"));
}

#[test]
fn baseline_export_is_observed_only() {
    let ds = springs();
    let f = fitted(ModelConfig::Baseline(BaselineConfig::desk()), 2);
    let times = ds.times().to_vec();
    let grid = extrapolation_grid(&times, -0.5, 1.5).unwrap();
    let rows = export_reconstruction(&f, &times, &ds.sample(1), &grid, |_| None).unwrap();
    assert_eq!(rows.len(), times.len());
    assert!(rows.iter().all(|r| r.region == Region::Observed));
}

#[test]
fn extrapolated_truth_comes_from_lookup() {
    let ds = gen_springs(&[SpringKind::Undamped], 5, 4).unwrap();
    let sub = subsample(&ds, 40).unwrap();
    let f = fitted(ModelConfig::Node(LatentOdeConfig::desk()), 2);
    let tail = sub.tail_sample(0);
    let lookup = |t: f64| sub.tail_times.iter().position(|&s| s == t).map(|k| [tail[2 * k], tail[2 * k + 1]]);
    let rows = export_reconstruction(&f, sub.observed.times(), &sub.observed.sample(0), &sub.tail_times[..10], lookup).unwrap();
    let extra: Vec<&ReconRow> = rows.iter().filter(|r| r.region == Region::Extrapolated).collect();
    assert_eq!(extra.len(), 10);
    assert_eq!(extra[3].truth, [tail[6], tail[7]]);
}

#[test]
fn divergence_becomes_a_marker_row() {
    let cfg = LatentOdeConfig {
        field_activation: Activation::Identity,
        ..LatentOdeConfig::desk()
    };
    let mut f = fitted(ModelConfig::Node(cfg), 3);
    for (name, t) in f.params.iter_mut() {
        if name.starts_with("ode.") {
            t.data_mut().fill(if name.ends_with("weight") { 3.0 } else { 0.0 });
        }
    }
    let ds = springs();
    let times = ds.times().to_vec();
    let grid: Vec<f64> = (1..400).map(|k| -(k as f64)).chain((1..400).map(|k| 10.0 + k as f64)).collect();
    let rows = export_reconstruction(&f, &times, &ds.sample(0), &grid, |_| None).unwrap();
    let markers: Vec<&ReconRow> = rows.iter().filter(|r| r.region == Region::Truncated).collect();
    assert!(!markers.is_empty());
    assert!(markers.iter().all(|r| r.recon[0].is_nan()));
    assert!(reconstruction_csv(&rows).contains(",,,,truncated"));
}

#[test]
fn overfit_sample_reconstructs_closely() {
    let ds = gen_springs(&[SpringKind::Undamped], 2, 1).unwrap();
    let ds = subsample(&ds, 100).unwrap().observed;
    let batch = ds.batch(&[0]).unwrap();
    let mut f = fitted(ModelConfig::Node(LatentOdeConfig::desk()), 1);
    let mut adam = Adam::new(&f.params, 0.01);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut best = f64::INFINITY;
    for step in 1..=600 {
        f.model.train_step(&mut f.params, &batch, &mut adam, &mut rng).unwrap();
        if step % 100 == 0 {
            let times = ds.times().to_vec();
            let grid = extrapolation_grid(&times, -0.5, 1.5).unwrap();
            let rows = export_reconstruction(&f, &times, &ds.sample(0), &grid, |_| None).unwrap();
            let obs: Vec<&ReconRow> = rows.iter().filter(|r| r.region == Region::Observed).collect();
            let se: f64 = obs.iter().map(|r| (r.recon[0] - r.truth[0]).powi(2) + (r.recon[1] - r.truth[1]).powi(2)).sum();
            best = best.min((se / (2 * obs.len()) as f64).sqrt());
        }
    }
    assert!(best < 0.05, "observed-region rmse {best}");
}

fn assert_orthonormal(c: &Tensor) {
    let d = c.rows();
    for a in 0..2 {
        for b in 0..2 {
            let dot: f64 = (0..d).map(|k| c.row(k)[a] * c.row(k)[b]).sum();
            assert!((dot - f64::from(a == b)).abs() < 1e-10, "dot {a}{b} = {dot}");
        }
    }
}

#[test]
fn rank_one_data_has_unit_ratio() {
    let dir = [0.5, -1.0, 2.0, 0.25];
    let pts: Vec<f64> = (0..20).flat_map(|i| dir.map(|v| v * (i as f64 - 7.0))).collect();
    let p = pca_project(&Tensor::matrix(20, 4, pts).unwrap()).unwrap();
    assert!((p.ratios[0] - 1.0).abs() < 1e-12);
    assert!(p.ratios[1].abs() < 1e-12);
    assert!(!p.degenerate);
    assert_orthonormal(&p.components);
}

#[test]
fn isotropic_cloud_has_quarter_ratios() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = pca_project(&gaussian(&mut rng, 100_000, 4)).unwrap();
    for r in p.ratios {
        assert!((r - 0.25).abs() < 0.02, "{r}");
    }
}

#[test]
fn zero_variance_is_flagged() {
    let p = pca_project(&Tensor::full(&[5, 4], 1.5)).unwrap();
    assert!(p.degenerate);
    assert_eq!(p.ratios, [0.0, 0.0]);
    assert!(p.points.data().iter().all(|&v| v == 0.0));
    assert_orthonormal(&p.components);
}

#[test]
fn pca_rejects_small_inputs() {
    assert!(pca_project(&Tensor::zeros(&[2, 4])).is_err());
    assert!(pca_project(&Tensor::zeros(&[5, 1])).is_err());
    let mut bad = Tensor::zeros(&[5, 4]);
    bad.data_mut()[3] = f64::NAN;
    assert!(pca_project(&bad).is_err());
}

/// Covariance of `[n, d]` points, computed independently of `pca_project`.
fn covariance(x: &Tensor) -> DMatrix<f64> {
    let m = DMatrix::from_row_slice(x.rows(), x.cols(), x.data());
    let mean = m.row_mean();
    let centred = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] - mean[j]);
    centred.transpose() * &centred / (m.nrows() - 1) as f64
}

fn same_up_to_sign(a: &[f64], b: &[f64], tol: f64) -> bool {
    let plus = a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol);
    let minus = a.iter().zip(b).all(|(x, y)| (x + y).abs() < tol);
    plus || minus
}

#[test]
fn matches_direct_eigendecomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let n = rng.random_range(3..60);
        // Anisotropic scales keep the leading eigenvalues apart.
        let scales = [3.0, 1.7, 0.8, 0.3];
        let x = gaussian(&mut rng, n, 4);
        let x = Tensor::matrix(n, 4, x.data().iter().enumerate().map(|(i, v)| v * scales[i % 4]).collect()).unwrap();
        let p = pca_project(&x).unwrap();
        let eig = SymmetricEigen::new(covariance(&x));
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let trace: f64 = eig.eigenvalues.iter().sum();
        for c in 0..2 {
            let want: Vec<f64> = eig.eigenvectors.column(order[c]).iter().copied().collect();
            let got: Vec<f64> = (0..4).map(|k| p.components.row(k)[c]).collect();
            assert!(same_up_to_sign(&got, &want, 1e-8), "component {c}: {got:?} vs {want:?}");
            assert!((p.ratios[c] - eig.eigenvalues[order[c]] / trace).abs() < 1e-10);
        }
        assert!(p.ratios[0] >= p.ratios[1] && p.ratios[1] >= 0.0 && p.ratios[0] <= 1.0);
        assert_orthonormal(&p.components);
    }
}

#[test]
fn matches_power_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let x = gaussian(&mut rng, 40, 4);
        let x = Tensor::matrix(40, 4, x.data().iter().enumerate().map(|(i, v)| v * [4.0, 2.0, 1.0, 0.5][i % 4]).collect()).unwrap();
        let cov = covariance(&x);
        let mut v = nalgebra::DVector::from_element(4, 1.0);
        for _ in 0..5000 {
            v = &cov * &v;
            v /= v.norm();
        }
        let p = pca_project(&x).unwrap();
        let got: Vec<f64> = (0..4).map(|k| p.components.row(k)[0]).collect();
        assert!(same_up_to_sign(&got, v.as_slice(), 1e-8));
    }
}

#[test]
fn jacobi_reconstructs_the_matrix() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for n in [1, 2, 4, 7] {
        let b: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a: Vec<f64> = (0..n * n).map(|k| (b[k] + b[(k % n) * n + k / n]) / 2.0).collect();
        let (vals, vecs) = symmetric_eigen(&a, n).unwrap();
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        for i in 0..n {
            for j in 0..n {
                let r: f64 = (0..n).map(|k| vecs[i * n + k] * vals[k] * vecs[j * n + k]).sum();
                assert!((r - a[i * n + j]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn leading_plane_is_optimal_rank_two_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = gaussian(&mut rng, 200, 4);
    let x = Tensor::matrix(200, 4, x.data().iter().enumerate().map(|(i, v)| v * [2.0, 1.5, 0.7, 0.2][i % 4] + 1.0).collect()).unwrap();
    let p = pca_project(&x).unwrap();
    let residual = |basis: &[[f64; 4]; 2]| -> f64 {
        (0..x.rows())
            .map(|i| {
                let r: Vec<f64> = (0..4).map(|k| x.row(i)[k] - p.mean[k]).collect();
                let coef: Vec<f64> = basis.iter().map(|b| (0..4).map(|k| b[k] * r[k]).sum()).collect();
                (0..4).map(|k| (r[k] - coef[0] * basis[0][k] - coef[1] * basis[1][k]).powi(2)).sum::<f64>()
            })
            .sum()
    };
    let best = residual(&[
        std::array::from_fn(|k| p.components.row(k)[0]),
        std::array::from_fn(|k| p.components.row(k)[1]),
    ]);
    for _ in 0..100 {
        let a: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        let b: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let u = a.map(|v| v / na);
        let dot: f64 = (0..4).map(|k| u[k] * b[k]).sum();
        let w: [f64; 4] = std::array::from_fn(|k| b[k] - dot * u[k]);
        let nw = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(best <= residual(&[u, w.map(|v| v / nw)]) + 1e-9);
    }
}

#[test]
fn separation_statistic() {
    let labels: Vec<String> = (0..40).map(|i| if i < 20 { "a" } else { "b" }.to_string()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let blobs = |offset: f64, rng: &mut ChaCha8Rng| -> Tensor {
        let pts: Vec<f64> = (0..40).flat_map(|i| {
            let c = if i < 20 { 0.0 } else { offset };
            let (x, y): (f64, f64) = (StandardNormal.sample(&mut *rng), StandardNormal.sample(&mut *rng));
            [c + 0.1 * x, 0.1 * y]
        }).collect();
        Tensor::matrix(40, 2, pts).unwrap()
    };
    let apart = cluster_separation(&blobs(5.0, &mut rng), &labels).unwrap();
    assert!(apart.separated());
    assert!((apart.min_centroid_distance - 5.0).abs() < 0.2);
    assert!(!cluster_separation(&blobs(0.0, &mut rng), &labels).unwrap().separated());
    assert!(cluster_separation(&blobs(1.0, &mut rng), &vec!["a".to_string(); 40]).is_err());
}

#[test]
fn latent_scatter_contract() {
    let f = fitted(ModelConfig::Node(LatentOdeConfig::desk()), 5);
    let one = gen_springs(&[SpringKind::Damped], 20, 2).unwrap();
    let one = split(&subsample(&one, 30).unwrap().observed, 3).unwrap();
    let s = latent_scatter(&f, &one).unwrap();
    assert_eq!(s.labels.len(), 4);
    assert!(s.labels.iter().all(|l| l == "spring2"));
    let csv = s.to_csv();
    let header = csv.lines().next().unwrap();
    let total: f64 = header.split(' ').find_map(|kv| kv.strip_prefix("explained_variance=")).unwrap().parse().unwrap();
    assert!((total - (s.projection.ratios[0] + s.projection.ratios[1])).abs() < 1e-6);
    assert_eq!(csv.lines().nth(1).unwrap(), "pc1,pc2,label");
    assert_eq!(csv.lines().count(), 2 + 4);

    let unlabeled = Dataset::new(one.values().to_vec(), one.num_data(), one.times().to_vec(), None)
        .unwrap()
        .with_split(one.split().unwrap().to_vec())
        .unwrap();
    assert!(latent_scatter(&f, &unlabeled).is_err());
}

#[test]
fn baseline_codes_project_too() {
    let f = fitted(ModelConfig::Baseline(BaselineConfig::desk()), 5);
    let s = latent_scatter(&f, &springs()).unwrap();
    assert_eq!(s.projection.components.shape(), &[2, 2]);
}

#[test]
fn timing_means() {
    let same: Vec<EpochRecord> = (0..5).map(|e| record(e, 0.7)).collect();
    assert!((mean_epoch_seconds(&same).unwrap() - 0.7).abs() < 1e-15);
    let ramp = [record(0, 1.0), record(1, 2.0), record(2, 3.0)];
    assert_eq!(mean_epoch_seconds(&ramp).unwrap(), 2.5);
    assert_eq!(mean_epoch_seconds(&[record(0, 4.0)]).unwrap(), 4.0);
    assert!(mean_epoch_seconds(&[]).is_err());
}

#[test]
fn timing_report_has_node_and_baseline_columns() {
    let a = [record(0, 9.0), record(1, 1.0)];
    let b = [record(0, 9.0), record(1, 2.0), record(2, 4.0)];
    let report = timing_report(&[
        TimingInput { experiment: "spring123", node: Some(&a), baseline: Some(&b) },
        TimingInput { experiment: "spring1", node: Some(&b), baseline: None },
    ])
    .unwrap();
    assert_eq!(report.rows.len(), 2);
    assert_eq!(report.to_csv(), "experiment,node,baseline\nspring1,3.000000,\nspring123,1.000000,3.000000\n");
    assert!(timing_report(&[TimingInput { experiment: "x", node: None, baseline: None }]).is_err());
}
