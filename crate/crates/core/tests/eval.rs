use std::f64::consts::{LN_2, PI};

use rectflow::eval::*;
use rectflow::ode::fields::{ConstantField, FnField};
use rectflow::ode::SolverSpec;
use rectflow::random::{rng, standard_normal};
use rectflow::Tensor;

#[test]
fn straight_field_has_zero_curvature() {
    let field = ConstantField::new(Tensor::from_vec(vec![1.0, -3.0]));
    let x0 = standard_normal(50, &[2], &mut rng(1));
    let grid = midpoint_grid(16);
    let prof = curvature(&field, &x0, &SolverSpec::dopri5(1e-6, 1e-6), &grid, 5).unwrap();
    assert!(prof.mean.iter().chain(&prof.integrals).all(|s| *s < 1e-20));
    assert_eq!(prof.failed, 0);
    assert_eq!(prof.top.len(), 5);
}

#[test]
fn time_only_wiggle_matches_closed_form() {
    // v = (1 − 2t)c integrates to Φ(x0, 1) = x0, so s(t) = (2t − 1)²‖c‖²
    let c = [0.5, 2.0];
    let cc = c[0] * c[0] + c[1] * c[1];
    let field = FnField::new(vec![2], move |_: &[f64], t: f64| {
        vec![(1.0 - 2.0 * t) * c[0], (1.0 - 2.0 * t) * c[1]]
    });
    let x0 = standard_normal(8, &[2], &mut rng(2));
    let grid = midpoint_grid(32);
    let prof = curvature(&field, &x0, &SolverSpec::midpoint(1), &grid, 200).unwrap();
    for (t, s) in grid.iter().zip(&prof.mean) {
        let want = (2.0 * t - 1.0).powi(2) * cc;
        assert!((s - want).abs() < 1e-10, "t={t}: {s} vs {want}");
    }
    let argmax = prof
        .mean
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0;
    assert!(argmax == 0 || argmax == 31);
    // the grid average of (2t − 1)² on the midpoint grid is 1/3 − 1/(3K²)
    let want = cc * (1.0 / 3.0 - 1.0 / (3.0 * 32.0 * 32.0));
    assert!((prof.mean_integral() - want).abs() < 1e-10);
    assert_eq!(prof.top.len(), 8);
    let csv = prof.to_csv();
    assert!(csv.starts_with("t,mean,p95\n"));
    assert_eq!(csv.lines().count(), 33);
    let top = prof.top_csv();
    assert!(top.starts_with("rank,index,integral,t,s,x0,x1\n"));
    assert_eq!(top.lines().count(), 1 + 8 * 34);
}

#[test]
fn curvature_ranks_and_excludes_failures() {
    // curvature grows with |x0|; samples starting at 9 blow up
    let field = FnField::new(vec![1], |x: &[f64], t: f64| {
        if x[0] > 8.0 {
            vec![x[0] * x[0] * 10.0]
        } else {
            vec![x[0] * (t - 0.5)]
        }
    });
    let x0 = Tensor::new(vec![4, 1], vec![1.0, 3.0, 9.0, 2.0]).unwrap();
    let prof = curvature(
        &field,
        &x0,
        &SolverSpec::dopri5(1e-6, 1e-6),
        &midpoint_grid(8),
        2,
    )
    .unwrap();
    assert_eq!(prof.failed, 1);
    assert_eq!(prof.indices, vec![0, 1, 3]);
    assert_eq!(
        prof.top.iter().map(|c| c.index).collect::<Vec<_>>(),
        vec![1, 3]
    );
    assert!(curvature(&field, &x0, &SolverSpec::euler(1), &[0.0, 0.5], 2).is_err());
    assert!(curvature(&field, &x0, &SolverSpec::euler(1), &[0.6, 0.5], 2).is_err());
}

#[test]
fn bev_histogram_examples() {
    let grid = BevGrid {
        lo: -50.0,
        hi: 50.0,
        bins: 101,
    };
    let h = BevHistogram::from_points([(0.0, 0.0)], grid).unwrap();
    assert_eq!(h.mass[50 * 101 + 50], 1.0);
    assert!(h.normalized);
    let empty = BevHistogram::from_points(std::iter::empty(), grid).unwrap();
    assert!(!empty.normalized && empty.mass.iter().all(|m| *m == 0.0));
    let outside = BevHistogram::from_points([(60.0, 0.0), (0.0, -51.0)], grid).unwrap();
    assert!(!outside.normalized);

    let g = BevGrid::default();
    let step = 100.0 / 200.0;
    let pts = (0..200).flat_map(|i| {
        (0..200).map(move |j| {
            (
                -50.0 + (i as f64 + 0.5) * step,
                -50.0 + (j as f64 + 0.5) * step,
            )
        })
    });
    let h = BevHistogram::from_points(pts, g).unwrap();
    let uniform = 1.0 / (g.bins * g.bins) as f64;
    let worst = h
        .mass
        .iter()
        .map(|m| (m - uniform).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 2.0 / (g.bins * g.bins) as f64);
    assert!((h.mass.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(BevHistogram::from_points([(0.0, 0.0)], BevGrid { bins: 0, ..g }).is_err());
}

#[test]
fn jsd_examples_and_bounds() {
    assert_eq!(jsd_mass(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
    assert!((jsd_mass(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - LN_2).abs() <= 1e-12);
    // direct evaluation of the two KL sums
    let (p, q) = ([0.5, 0.5], [0.25, 0.75]);
    let m = [0.375, 0.625];
    let kl = |a: &[f64; 2]| a.iter().zip(&m).map(|(x, y)| x * (x / y).ln()).sum::<f64>();
    let want = 0.5 * kl(&p) + 0.5 * kl(&q);
    let got = jsd_mass(&p, &q).unwrap();
    assert!((got - want).abs() < 1e-15);
    assert!((got - 0.033822).abs() < 1e-6);
    assert_eq!(got, jsd_mass(&q, &p).unwrap());
    assert!(jsd_mass(&[1.0], &[0.5, 0.5]).is_err());
    assert!(jsd_mass(&[0.2, 0.2], &[0.5, 0.5]).is_err());

    let g = BevGrid {
        lo: -1.0,
        hi: 1.0,
        bins: 4,
    };
    let a = BevHistogram::from_points([(0.1, 0.1), (-0.9, 0.5)], g).unwrap();
    let b = BevHistogram::from_points([(0.1, 0.1)], BevGrid { bins: 5, ..g }).unwrap();
    assert!(jsd(&a, &b).is_err());
    assert_eq!(jsd(&a, &a).unwrap(), 0.0);
    let mean = BevHistogram::mean(&[
        a.clone(),
        BevHistogram::from_points([(0.1, 0.1)], g).unwrap(),
    ])
    .unwrap();
    assert!((mean.mass.iter().sum::<f64>() - 1.0).abs() < 1e-15);
}

fn gaussian_set(n: usize, d: usize, shift: f64, seed: u64) -> Vec<Vec<f64>> {
    let t = standard_normal(n, &[d], &mut rng(seed));
    (0..n)
        .map(|i| t.row(i).iter().map(|v| v + shift).collect())
        .collect()
}

#[test]
fn mmd_identical_sets() {
    let a = gaussian_set(40, 3, 0.0, 1);
    assert!(mmd2_unbiased(&a, &a, None).unwrap().value <= 1e-12);
    assert!(mmd2_biased(&a, &a, None).unwrap().value.abs() <= 1e-15);
    assert!(mmd2_unbiased(&a[..1], &a, None).is_err());
    assert!(mmd2_unbiased(&a, &a, Some(-1.0)).is_err());
}

#[test]
fn mmd_matches_direct_double_sum() {
    let a = gaussian_set(7, 2, 0.0, 3);
    let b = gaussian_set(9, 2, 0.5, 4);
    let s = 1.3;
    let k = |x: &[f64], y: &[f64]| {
        (-(x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>()) / (2.0 * s * s)).exp()
    };
    let (m, n) = (7.0, 9.0);
    let mut want = 0.0;
    for i in 0..7 {
        for j in 0..7 {
            if i != j {
                want += k(&a[i], &a[j]) / (m * (m - 1.0));
            }
        }
        for j in 0..9 {
            want -= 2.0 * k(&a[i], &b[j]) / (m * n);
        }
    }
    for i in 0..9 {
        for j in 0..9 {
            if i != j {
                want += k(&b[i], &b[j]) / (n * (n - 1.0));
            }
        }
    }
    assert!((mmd2_unbiased(&a, &b, Some(s)).unwrap().value - want).abs() < 1e-14);
}

#[test]
fn mmd_permutation_null_and_power() {
    let a = gaussian_set(500, 2, 0.0, 5);
    let b = gaussian_set(500, 2, 0.0, 6);
    let same = mmd_permutation_test(&a, &b, 100, None, 7).unwrap();
    assert!(
        same.statistic.abs() <= 3.0 * same.null_std,
        "z = {}",
        same.z_score()
    );

    // uniform histograms against point-mass histograms
    let mut r = rng(8);
    use rand::Rng;
    let uniform: Vec<Vec<f64>> = (0..30)
        .map(|_| {
            let mut h: Vec<f64> = (0..16).map(|_| 1.0 + 0.1 * r.random::<f64>()).collect();
            let s: f64 = h.iter().sum();
            h.iter_mut().for_each(|v| *v /= s);
            h
        })
        .collect();
    let spikes: Vec<Vec<f64>> = (0..30)
        .map(|_| {
            let mut h = vec![0.0; 16];
            h[r.random_range(0..16)] = 1.0;
            h
        })
        .collect();
    let diff = mmd_permutation_test(&uniform, &spikes, 200, None, 9).unwrap();
    assert!(
        diff.statistic > 0.0 && diff.z_score() > 5.0,
        "z = {}",
        diff.z_score()
    );
    assert!(diff.p_value < 0.01);
}

#[test]
fn sliced_w2_examples() {
    let a = standard_normal(100, &[3], &mut rng(1));
    assert_eq!(sliced_w2(&a, &a, 16, 2).unwrap(), 0.0);
    let p = Tensor::new(vec![1, 1], vec![0.0]).unwrap();
    let q = Tensor::new(vec![1, 1], vec![3.0]).unwrap();
    assert!((sliced_w2(&p, &q, 4, 3).unwrap() - 3.0).abs() < 1e-12);
    assert!(sliced_w2(&p, &Tensor::zeros(vec![0, 1]), 4, 3).is_err());
    assert!(sliced_w2(&a, &Tensor::zeros(vec![5, 2]), 4, 3).is_err());
    assert!(sliced_w2(&a, &a, 0, 3).is_err());
}

#[test]
fn sliced_w2_of_shifted_gaussians_matches_closed_form() {
    // for N(0, I) vs N(μ, I) the projected W2 along θ is |θ·μ|; averaged over
    // the circle this is 2|μ|/π
    let n = 10_000;
    let a = standard_normal(n, &[2], &mut rng(11));
    let mut b = standard_normal(n, &[2], &mut rng(12));
    for i in 0..n {
        b.data_mut()[2 * i] += 2.0;
    }
    let want = 2.0 * 2.0 / PI;
    let got = sliced_w2(&a, &b, 64, 13).unwrap();
    assert!((got - want).abs() <= 0.05 * want, "{got} vs {want}");
}

#[test]
fn w2_1d_unequal_sizes() {
    let mut a = vec![0.0, 1.0];
    let mut b = vec![0.0, 0.5, 1.0];
    // quantiles: a = 0 on [0, .5), 1 on [.5, 1); b = 0, .5, 1 on thirds
    let want = ((1.0 / 6.0) * 0.25 + (1.0 / 6.0) * 0.25_f64).sqrt();
    assert!((w2_1d(&mut a, &mut b).unwrap() - want).abs() < 1e-15);
}

#[test]
fn projection_frames_are_orthonormal() {
    let dirs = projection_directions(3, 7, 1);
    assert_eq!(dirs.len(), 7);
    for d in &dirs {
        assert!((d.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    assert!(dot(&dirs[0], &dirs[1]).abs() < 1e-12 && dot(&dirs[1], &dirs[2]).abs() < 1e-12);
}

#[test]
fn report_scales_and_bootstrap() {
    let mut r = MetricReport::default();
    r.push("jsd", 0.01, "abc");
    r.push("mmd", 2e-4, "abc");
    r.push("sliced_w2", 0.5, "abc");
    assert_eq!(r.rows[0].scaled, 1.0);
    assert!((r.rows[1].scaled - 2.0).abs() < 1e-12);
    assert_eq!(r.rows[2].scaled, 0.5);
    let csv = r.to_csv();
    assert!(csv.starts_with("metric,value,scaled,config_digest\njsd,"));
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",abc")));
    // SE of the mean of n iid unit normals is 1/√n
    let x = standard_normal(400, &[], &mut rng(3));
    let se = bootstrap_se(400, 2000, 4, |idx| {
        idx.iter().map(|&i| x.data()[i]).sum::<f64>() / 400.0
    });
    assert!((se - 0.05).abs() < 0.01, "{se}");
}
