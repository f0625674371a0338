//! End-to-end toy run: 1-RF, reflow to 2-RF and 1-step distillation on the
//! eight-Gaussian ring, printing curvature and few-step quality.
//!
//! cargo run --release -p rectflow --example eight_gaussians [steps]

use std::time::Instant;

use rectflow::data::EightGaussians;
use rectflow::eval::{curvature, midpoint_grid, sliced_w2};
use rectflow::flow::{
    distill, generate_reflow_pairs, train_1rf, train_reflow, Flow, PairSpec, TrainConfig,
};
use rectflow::nn::{MlpConfig, ModelConfig, VelocityModel};
use rectflow::ode::{sample, SolverSpec};
use rectflow::tensor::FloatWidth;

fn quality(flow: &Flow, steps: usize, held_out: &rectflow::Tensor) -> rectflow::Result<f64> {
    let s = sample(flow, held_out.shape()[0], &SolverSpec::euler(steps), 7)?;
    sliced_w2(&s.samples, held_out, 64, 11)
}

fn main() -> rectflow::Result<()> {
    let steps: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(5000);
    let toy = EightGaussians::default();
    let data = toy.sample(50_000, 1);
    let held_out = toy.sample(5_000, 2);

    let clock = Instant::now();
    let model = VelocityModel::new(ModelConfig::Mlp(MlpConfig::toy(2)), 3)?;
    let cfg = TrainConfig {
        steps,
        seed: 4,
        ..TrainConfig::one_rf()
    };
    let (one, _) = train_1rf(model, &data, &cfg)?;
    let one_digest = one.digest(FloatWidth::F64)?;
    println!("1-RF trained in {:.1?}", clock.elapsed());

    let pair_spec = PairSpec {
        count: 10_000,
        solver: SolverSpec::dopri5(1e-5, 1e-5),
        grid: 1,
        seed: 5,
        config_digest: String::new(),
    };
    let pairs = generate_reflow_pairs(&one, &one_digest, &pair_spec)?;
    println!(
        "pairs in {:.1?} (skipped {})",
        clock.elapsed(),
        pairs.skipped
    );
    let rcfg = TrainConfig {
        steps,
        seed: 6,
        ..TrainConfig::reflow()
    };
    let (two, _) = train_reflow(&one, &one_digest, &pairs, &rcfg)?;
    let two_digest = two.digest(FloatWidth::F64)?;
    println!("2-RF trained in {:.1?}", clock.elapsed());

    let dpairs = generate_reflow_pairs(
        &two,
        &two_digest,
        &PairSpec {
            seed: 8,
            ..pair_spec
        },
    )?;
    let dcfg = TrainConfig {
        steps: steps / 2,
        seed: 9,
        ..TrainConfig::reflow()
    };
    let (td, _) = distill(&two, &two_digest, 1, &dpairs, &dcfg)?;
    println!("1-TD trained in {:.1?}", clock.elapsed());

    let x0 = rectflow::random::standard_normal(2000, &[2], &mut rectflow::random::rng(10));
    let grid = midpoint_grid(256);
    let c1 = curvature(&one.model, &x0, &SolverSpec::midpoint(1), &grid, 200)?;
    let c2 = curvature(&two.model, &x0, &SolverSpec::midpoint(1), &grid, 200)?;
    println!(
        "curvature 1-RF {:.5} 2-RF {:.5} ratio {:.3} ({:.1?})",
        c1.mean_integral(),
        c2.mean_integral(),
        c2.mean_integral() / c1.mean_integral(),
        clock.elapsed()
    );
    for (name, f) in [("1-RF", &one), ("2-RF", &two)] {
        println!(
            "{name}: sw2 nfe1 {:.4} nfe2 {:.4} nfe256 {:.4}",
            quality(f, 1, &held_out)?,
            quality(f, 2, &held_out)?,
            quality(f, 256, &held_out)?
        );
    }
    println!("1-TD: sw2 nfe1 {:.4}", quality(&td, 1, &held_out)?);
    println!("total {:.1?}", clock.elapsed());
    Ok(())
}
