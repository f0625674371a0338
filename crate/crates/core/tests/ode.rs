use std::f64::consts::E;

use rectflow::flow::{Flow, FlowStage, ParentRef, StageTag};
use rectflow::nn::{MlpConfig, ModelConfig, VelocityField, VelocityModel};
use rectflow::ode::fields::{ConstantField, CountingField, FnField, LinearField};
use rectflow::ode::{
    euler_step, integrate, integrate_span_each, invert, rk45_fixed, sample, slerp, trajectory_csv,
    SolverSpec,
};
use rectflow::{Error, Tensor};

fn col(values: &[f64]) -> Tensor {
    Tensor::new(vec![values.len(), 1], values.to_vec()).unwrap()
}

/// Smooth nonlinear 2-D field used for roundtrip checks.
fn swirl() -> FnField<impl Fn(&[f64], f64) -> Vec<f64>> {
    FnField::new(vec![2], |x: &[f64], t: f64| {
        vec![-x[1] + 0.3 * (x[0] * t).sin(), x[0] - 0.2 * x[1] + 0.1 * t]
    })
}

#[test]
fn euler_step_with_constant_field_adds_constant() {
    let field = ConstantField::new(Tensor::from_vec(vec![0.5, -2.0]));
    let x = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
    let y = euler_step(&field, &x, 0.0, 1.0).unwrap();
    assert_eq!(y.data(), &[1.5, -1.0]);
    let zero = ConstantField::new(Tensor::zeros(vec![2]));
    assert_eq!(euler_step(&zero, &x, 0.0, 0.5).unwrap(), x);
    assert!(euler_step(&zero, &x, 0.3, 0.3).is_err());
}

#[test]
fn euler_step_reports_non_finite_velocity() {
    let field = FnField::new(vec![1], |_: &[f64], _| vec![f64::NAN]);
    match euler_step(&field, &col(&[3.0]), 0.25, 0.5) {
        Err(Error::Solver { t, reason, .. }) => {
            assert_eq!(t, 0.25);
            assert!(reason.contains("norm 3"), "{reason}");
        }
        other => panic!("expected solver failure, got {other:?}"),
    }
}

#[test]
fn euler_on_linear_field_matches_compounding() {
    let field = CountingField::new(LinearField::new(1, 1.0));
    let out = integrate(&field, &col(&[1.0]), &SolverSpec::euler(256)).unwrap();
    let expect = (1.0 + 1.0 / 256.0_f64).powi(256);
    assert!((out.end.data()[0] - expect).abs() <= 1e-9);
    assert_eq!(out.nfe(), vec![256]);
    assert_eq!(field.evaluations(), 256);
}

#[test]
fn midpoint_uses_two_evaluations_per_step() {
    let field = CountingField::new(LinearField::new(1, 1.0));
    let out = integrate(&field, &col(&[1.0, 2.0]), &SolverSpec::midpoint(10)).unwrap();
    assert_eq!(out.nfe(), vec![20, 20]);
    assert_eq!(field.evaluations(), 40);
    // midpoint on x' = x multiplies by 1 + h + h²/2 per step
    let expect = (1.0 + 0.1 + 0.005_f64).powi(10);
    assert!((out.end.data()[0] - expect).abs() < 1e-12);
}

#[test]
fn dopri5_reaches_e_at_tolerance_1e5() {
    let field = CountingField::new(LinearField::new(1, 1.0));
    let out = integrate(&field, &col(&[1.0]), &SolverSpec::dopri5(1e-5, 1e-5)).unwrap();
    let rel = (out.end.data()[0] - E).abs() / E;
    assert!(rel <= 1e-5, "relative error {rel}");
    assert_eq!(out.nfe()[0], field.evaluations());
    assert!(out.nfe()[0] > 2);
}

#[test]
fn dopri5_nfe_counts_each_sample_exactly() {
    let field = CountingField::new(swirl());
    let x = Tensor::new(vec![3, 2], vec![0.1, 0.2, 3.0, -1.0, -5.0, 4.0]).unwrap();
    let out = integrate(&field, &x, &SolverSpec::dopri5(1e-6, 1e-6)).unwrap();
    assert_eq!(out.nfe().iter().sum::<usize>(), field.evaluations());
}

#[test]
fn dopri5_tableau_is_fifth_order() {
    let field = LinearField::new(1, 1.0);
    let steps = [2usize, 4, 8, 16];
    let pts: Vec<(f64, f64)> = steps
        .iter()
        .map(|&n| {
            let y = rk45_fixed(&field, &col(&[1.0]), 0.0, 1.0, n).unwrap();
            ((1.0 / n as f64).ln(), (y.data()[0] - E).abs().ln())
        })
        .collect();
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!(slope >= 4.5, "observed order {slope}");
}

#[test]
fn straight_field_is_solved_exactly_by_every_method() {
    let c = Tensor::from_vec(vec![2.0, -4.0, 0.25]);
    let field = ConstantField::new(c);
    let x0 = Tensor::new(vec![2, 3], vec![1.0, 0.5, -0.75, 0.0, 8.0, 2.5]).unwrap();
    let expect = Tensor::new(vec![2, 3], vec![3.0, -3.5, -0.5, 2.0, 4.0, 2.75]).unwrap();
    for spec in [
        SolverSpec::euler(1),
        SolverSpec::euler(256),
        SolverSpec::dopri5(1e-5, 1e-5),
    ] {
        let out = integrate(&field, &x0, &spec).unwrap();
        assert!(
            out.end.max_abs_diff(&expect).unwrap() <= 1e-12,
            "{}",
            spec.describe()
        );
    }
}

#[test]
fn reverse_integration_runs_backwards_in_time() {
    let field = LinearField::new(1, 1.0);
    let spec = SolverSpec::dopri5(1e-8, 1e-8).reversed().recording();
    let out = invert(&field, &col(&[E]), &spec).unwrap();
    assert!((out.end.data()[0] - 1.0).abs() < 1e-7);
    let times = &out.trajectories[0].times;
    assert_eq!(times.first(), Some(&1.0));
    assert_eq!(times.last(), Some(&0.0));
    assert!(times.windows(2).all(|w| w[1] < w[0]));

    let fixed = integrate(
        &field,
        &col(&[1.0]),
        &SolverSpec::euler(4).reversed().recording(),
    )
    .unwrap();
    assert_eq!(fixed.trajectories[0].times, vec![1.0, 0.75, 0.5, 0.25, 0.0]);
    assert!(invert(&field, &col(&[1.0]), &SolverSpec::euler(4)).is_err());
}

#[test]
fn roundtrip_error_shrinks_with_tolerance() {
    let field = swirl();
    let x0 = Tensor::new(vec![4, 2], vec![0.3, -1.2, 1.5, 0.7, -2.0, 0.1, 0.0, 2.2]).unwrap();
    let mut last = f64::INFINITY;
    for tol in [1e-3, 1e-4, 1e-5, 1e-6] {
        let fwd = integrate(&field, &x0, &SolverSpec::dopri5(tol, tol)).unwrap();
        let back = invert(&field, &fwd.end, &SolverSpec::dopri5(tol, tol).reversed()).unwrap();
        let err = back.end.max_abs_diff(&x0).unwrap();
        assert!(err < last, "tol {tol}: {err} !< {last}");
        last = err;
    }
    assert!(last < 1e-5);
}

#[test]
fn blow_up_fails_only_the_affected_sample() {
    // x' = x² from x(0) = 2 blows up at t = 1/2; from 0.5 it stays finite.
    let field = FnField::new(vec![1], |x: &[f64], _| vec![x[0] * x[0]]);
    let out = integrate_span_each(
        &field,
        &col(&[2.0, 0.5]),
        0.0,
        1.0,
        &SolverSpec::dopri5(1e-5, 1e-5),
    )
    .unwrap();
    assert!(
        matches!(&out[0], Err(Error::Solver { .. })),
        "{:?}",
        out[0].as_ref().map(|o| &o.0)
    );
    let (end, _) = out[1].as_ref().unwrap();
    assert!((end[0] - 1.0).abs() < 1e-4);
    assert!(integrate(&field, &col(&[2.0, 0.5]), &SolverSpec::dopri5(1e-5, 1e-5)).is_err());
}

#[test]
fn rejects_mismatched_shapes_and_specs() {
    let field = LinearField::new(2, 1.0);
    assert!(integrate(&field, &col(&[1.0]), &SolverSpec::euler(2)).is_err());
    let x = Tensor::zeros(vec![1, 2]);
    assert!(integrate(&field, &x, &SolverSpec::euler(0)).is_err());
    assert!(integrate(&field, &x, &SolverSpec::dopri5(0.0, 1e-5)).is_err());
}

#[test]
fn slerp_endpoints_norms_and_midpoint() {
    let a = [1.0, 0.0, 0.0];
    let b = [0.0, 1.0, 0.0];
    assert_eq!(slerp(&a, &b, 0.0).unwrap(), a.to_vec());
    let end = slerp(&a, &b, 1.0).unwrap();
    assert!(end.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-15));
    let mid = slerp(&a, &b, 0.5).unwrap();
    let r = 1.0 / 2f64.sqrt();
    assert!((mid[0] - r).abs() < 1e-15 && (mid[1] - r).abs() < 1e-15 && mid[2] == 0.0);

    let p = [3.0, -1.0, 2.0];
    let q = [-2.0, 1.0, 3.0];
    let r0 = p.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
    for i in 0..=10 {
        let z = slerp(&p, &q, i as f64 / 10.0).unwrap();
        let n = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - r0).abs() < 1e-12);
    }
    assert!(slerp(&a, &[-1.0, 0.0, 0.0], 0.5).is_err());
    assert!(slerp(&a, &[0.0; 3], 0.5).is_err());
    assert!(slerp(&a, &b, 1.5).is_err());
}

fn toy_flow(tag: StageTag) -> Flow {
    let model = VelocityModel::new(ModelConfig::Mlp(MlpConfig::toy(2)), 3).unwrap();
    let parent = match tag {
        StageTag::OneRf => None,
        _ => Some(ParentRef {
            tag: StageTag::OneRf,
            digest: "00".into(),
        }),
    };
    Flow {
        model,
        stage: FlowStage::new(tag, parent, "cfg").unwrap(),
    }
}

#[test]
fn distilled_stage_demands_its_own_schedule() {
    let flow = toy_flow(StageTag::Distilled { k: 2 });
    let ok = sample(&flow, 5, &SolverSpec::euler(2), 1).unwrap();
    assert_eq!(ok.nfe, vec![2; 5]);
    for spec in [
        SolverSpec::euler(3),
        SolverSpec::midpoint(2),
        SolverSpec::dopri5(1e-5, 1e-5),
    ] {
        assert!(matches!(sample(&flow, 5, &spec, 1), Err(Error::Stage(_))));
    }
}

#[test]
fn sampling_is_deterministic_and_handles_empty_batches() {
    let flow = toy_flow(StageTag::OneRf);
    let a = sample(&flow, 8, &SolverSpec::dopri5(1e-5, 1e-5), 42).unwrap();
    let b = sample(&flow, 8, &SolverSpec::dopri5(1e-5, 1e-5), 42).unwrap();
    assert_eq!(a.samples, b.samples);
    assert_eq!(a.nfe, b.nfe);
    let c = sample(&flow, 8, &SolverSpec::dopri5(1e-5, 1e-5), 43).unwrap();
    assert_ne!(a.x0, c.x0);
    let empty = sample(&flow, 0, &SolverSpec::euler(4), 1).unwrap();
    assert_eq!(empty.samples.shape(), &[0, 2]);
    assert!(empty.nfe.is_empty());
}

#[test]
fn batch_inversion_equals_individual_inversion() {
    let flow = toy_flow(StageTag::OneRf);
    let x = Tensor::new(vec![3, 2], vec![0.5, -1.0, 2.0, 0.25, -0.75, 1.5]).unwrap();
    let spec = SolverSpec::dopri5(1e-6, 1e-6).reversed();
    let batch = invert(&flow.model, &x, &spec).unwrap();
    for (i, row) in x.unstack().into_iter().enumerate() {
        let one = invert(&flow.model, &row.reshape(vec![1, 2]).unwrap(), &spec).unwrap();
        for (a, b) in one.end.data().iter().zip(batch.end.row(i)) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert_eq!(one.nfe()[0], batch.nfe()[i]);
    }
}

#[test]
fn straight_model_inversion_then_one_step_sampling_is_exact() {
    let field = ConstantField::new(Tensor::from_vec(vec![1.5, -0.5]));
    let x1 = Tensor::new(vec![2, 2], vec![4.0, 1.0, -2.0, 0.5]).unwrap();
    let z = invert(&field, &x1, &SolverSpec::euler(1).reversed()).unwrap();
    let back = integrate(&field, &z.end, &SolverSpec::euler(1)).unwrap();
    assert_eq!(back.end, x1);
}

#[test]
fn trajectory_csv_has_coordinates_and_nfe_footer() {
    let field = LinearField::new(2, 1.0);
    let x = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let out = integrate(&field, &x, &SolverSpec::euler(2).recording()).unwrap();
    let csv = trajectory_csv(&out.trajectories);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "sample,t,x0,x1");
    assert_eq!(lines.len(), 1 + 2 * 3 + 1);
    assert_eq!(lines[1], "0,0,1,2");
    assert_eq!(*lines.last().unwrap(), "nfe,4,,");
    assert!(lines.iter().all(|l| l.split(',').count() == 4));

    let wide = ConstantField::new(Tensor::zeros(vec![2, 4, 8]));
    let out = integrate(
        &wide,
        &Tensor::ones(vec![1, 2, 4, 8]),
        &SolverSpec::euler(1).recording(),
    )
    .unwrap();
    let csv = trajectory_csv(&out.trajectories);
    assert!(csv.starts_with("sample,t,norm,max_abs\n0,0,8,1\n"));
}

#[test]
fn counting_field_counts_batched_calls() {
    let field = CountingField::new(LinearField::new(1, 0.0));
    field.velocity(&col(&[1.0, 2.0, 3.0]), &[0.0; 3]).unwrap();
    assert_eq!((field.calls(), field.evaluations()), (1, 3));
    field.reset();
    assert_eq!(field.evaluations(), 0);
}
