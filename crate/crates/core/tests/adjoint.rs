mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wavesono::fwi::FwiProblem;
use wavesono::phantom::two_inclusion;
use wavesono::pipeline::TransducerConfig;
use wavesono::wave::{AcousticModel, ShotRecord, SolverSettings, WaveSolver};
use wavesono::{Execution, ImageGrid};

const DX: f64 = 5e-4;

fn setup(n: usize, elements: usize) -> (AcousticModel, AcousticModel, FwiProblem) {
    let truth = AcousticModel::new(two_inclusion(n), DX).unwrap();
    let current = AcousticModel::new(truth.speed().gaussian_blur(2.0), DX).unwrap();
    let geometry = TransducerConfig {
        num_elements: elements,
        ..TransducerConfig::default()
    }
    .build(truth.dims(), DX, (1400.0, 1700.0))
    .unwrap();
    let observed = WaveSolver::new(&truth, &geometry, &SolverSettings::default())
        .unwrap()
        .simulate(Execution::default())
        .unwrap();
    (truth, current, FwiProblem::new(geometry, observed))
}

#[test]
fn dot_product_test() {
    let (_, model, problem) = setup(32, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let m0 = model.slowness_sq().mean();
    let dm = ImageGrid::from_fn(32, 32, |_, _| m0 * rng.gen_range(-1.0..1.0));
    let mut y = ShotRecord::zeros(
        problem.observed.num_shots(),
        problem.observed.num_receivers(),
        problem.observed.num_steps(),
        problem.observed.dt(),
    );
    y.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    let jdm = problem.jacobian(&model, &dm).unwrap();
    let jty = problem.jacobian_transpose(&model, &y).unwrap();
    let lhs = jdm.dot(&y);
    let rhs: f64 = dm.data().iter().zip(jty.data()).map(|(a, b)| a * b).sum();
    let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs());
    assert!(rel < 1e-3, "<J dm, y> = {lhs:e}, <dm, J^T y> = {rhs:e}, rel {rel:e}");
    // the discrete adjoint is exact, not merely consistent
    assert!(rel < 1e-9, "rel {rel:e}");
}

#[test]
fn gradient_matches_central_differences() {
    let (_, model, problem) = setup(32, 6);
    let (_, grad) = problem.objective_and_raw_gradient(&model).unwrap();
    let m = model.slowness_sq();
    let c_max = model.max_speed();
    let gmax = grad.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    while checked < 5 {
        let (r, c) = (rng.gen_range(1..31), rng.gen_range(1..31));
        // pixels at the speed maximum would move the sponge strength
        if model.speed().get(r, c) >= 0.999 * c_max || grad.get(r, c).abs() < 1e-3 * gmax {
            continue;
        }
        let h = 1e-4 * m.get(r, c);
        let perturbed = |sign: f64| {
            let mut mm = m.clone();
            mm[(r, c)] += sign * h;
            problem.objective(&AcousticModel::from_slowness_sq(&mm, DX).unwrap()).unwrap()
        };
        let fd = (perturbed(1.0) - perturbed(-1.0)) / (2.0 * h);
        let g = grad.get(r, c);
        let rel = (fd - g).abs() / g.abs();
        assert!(rel < 1e-2, "pixel ({r}, {c}): adjoint {g:e}, fd {fd:e}, rel {rel:e}");
        checked += 1;
    }
}

#[test]
fn gradient_is_execution_independent() {
    let (_, model, problem) = setup(32, 4);
    let seq = problem.clone().with_execution(Execution::Sequential);
    let par = problem.with_execution(Execution::Parallel);
    let a = seq.objective_and_raw_gradient(&model).unwrap();
    let b = par.objective_and_raw_gradient(&model).unwrap();
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    assert_eq!(a.1, b.1);
}

#[test]
fn zero_residual_gives_zero_gradient() {
    let (truth, _, problem) = setup(32, 4);
    let (phi, grad) = problem.objective_and_raw_gradient(&truth).unwrap();
    assert_eq!(phi, 0.0);
    assert!(grad.data().iter().all(|&g| g == 0.0));
}
