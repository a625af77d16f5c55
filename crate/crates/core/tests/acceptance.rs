//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line to
//! the real stdout (bypassing libtest capture) before asserting.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use supra_core::basis::{chebyshev_basis_2d, fourier_basis_2d, laplacian_eigenbasis, Basis};
use supra_core::bench::{growth_ratios, run_bench, BenchConfig, SUPRA_IMPL, TOKEN_IMPL};
use supra_core::meshfem::{
    assemble_lumped_mass, assemble_stiffness, smallest_eigenpairs, BoundaryCondition, TriMesh,
};
use supra_core::model::{model_grad_check, small_config, ModelConfig, NormKind, SupraOperator, SUITE_STEP};
use supra_core::numcore::Tensor;
use supra_core::pdedata::{darcy_solve_fd, gen_dataset, load_dataset, Dataset, DatasetSpec, FaceMean, Split, TaskSpec};
use supra_core::supra::oracle::{attention_scalar_loop, bilinear_double_sum};
use supra_core::supra::{attention_weights, supra_attention, SupraHeadParams};
use supra_core::trainer::{evaluate, fit, Divergence, FitReport, TrainConfig};

fn report(name: &str, pass: bool, started: Instant, detail: String) {
    let line = format!(
        "{} {name}: {detail} [{:.1}s]\n",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "{name}: {detail}");
}

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
    Tensor::from_fn2(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn random_heads(rng: &mut ChaCha8Rng, h: usize, d: usize) -> Vec<SupraHeadParams<Tensor<f64>>> {
    (0..h).map(|_| SupraHeadParams::random(d, rng)).collect()
}

/// `u_h W_V^T` for every head slice, concatenated: the output when each
/// row attends with weight one to a copy of itself.
fn value_only(u: &Tensor<f64>, heads: &[SupraHeadParams<Tensor<f64>>]) -> Tensor<f64> {
    let (c, n) = u.dims2().unwrap();
    let d = n / heads.len();
    Tensor::from_fn2(c, n, |i, col| {
        let (h, r) = (col / d, col % d);
        (0..d).map(|s| heads[h].w_v.at(r, s) * u.at(i, h * d + s)).sum()
    })
}

#[test]
fn attention_matches_double_sum_oracle() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for &(c, n, h) in &[(1, 8, 1), (5, 12, 3), (16, 64, 4), (32, 64, 4)] {
        let u = random(&mut rng, c, n);
        let heads = random_heads(&mut rng, h, n / h);
        let z = supra_attention(&u, &heads).unwrap();
        worst = worst.max(z.max_abs_diff(&attention_scalar_loop(&u, &heads).unwrap()));
        for (a, b) in attention_weights(&u, &heads)
            .unwrap()
            .iter()
            .zip(bilinear_double_sum(&u, &heads).unwrap())
        {
            worst = worst.max(a.max_abs_diff(&b));
        }
    }
    let mut analytic = 0.0f64;
    let heads = random_heads(&mut rng, 2, 8);
    let single = random(&mut rng, 1, 16);
    analytic = analytic.max(supra_attention(&single, &heads).unwrap().max_abs_diff(&value_only(&single, &heads)));
    let row = random(&mut rng, 1, 16);
    let same = Tensor::from_fn2(6, 16, |_, j| row.at(0, j));
    analytic = analytic.max(supra_attention(&same, &heads).unwrap().max_abs_diff(&value_only(&same, &heads)));
    report(
        "attention vs double-sum oracle and analytic cases",
        worst <= 1e-12 && analytic <= 1e-12,
        t,
        format!("oracle max err {worst:.2e}, analytic max err {analytic:.2e} (tol 1e-12)"),
    );
}

#[test]
fn model_gradients_match_finite_differences() {
    let t = Instant::now();
    let cfg = small_config(NormKind::Layer);
    let rep = model_grad_check(&cfg, 8, SUITE_STEP).unwrap();
    report(
        "model gradient check",
        rep.points == 64 && rep.passed(1e-5),
        t,
        format!(
            "C={} L={} N={} M={}: max rel err {:.2e} in {} (tol 1e-5)",
            cfg.hidden, cfg.layers, cfg.basis_dim, rep.points, rep.max_rel_err, rep.worst_param
        ),
    );
}

fn round_trip(basis: &Basis<f64>, rng: &mut ChaCha8Rng) -> f64 {
    let coords = random(rng, 3, basis.dim());
    basis.project(&basis.reconstruct(&coords).unwrap()).unwrap().max_abs_diff(&coords)
}

#[test]
fn bases_are_orthonormal() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let fourier = fourier_basis_2d::<f64>(6, 6, 64, 64).unwrap();
    let cheb = chebyshev_basis_2d::<f64>(7, 7, 64, 64).unwrap();
    let square = laplacian_eigenbasis::<f64>(&TriMesh::unit_square(24, 24).unwrap(), 64).unwrap();
    let annulus = laplacian_eigenbasis::<f64>(&TriMesh::annulus(0.5, 1.0, 12, 48).unwrap(), 64).unwrap();
    let gf = fourier.gram_deviation();
    let gc = cheb.gram_deviation();
    let gl = square.gram_deviation().max(annulus.gram_deviation());
    let rt = [&fourier, &cheb, &square, &annulus]
        .iter()
        .map(|b| round_trip(b, &mut rng))
        .fold(0.0, f64::max);
    report(
        "basis orthonormality",
        gf <= 1e-12 && gc <= 1e-8 && gl <= 1e-8 && rt <= 1e-10,
        t,
        format!("gram dev fourier {gf:.2e} (1e-12), chebyshev {gc:.2e} (1e-8), laplacian {gl:.2e} (1e-8); round trip {rt:.2e} (1e-10)"),
    );
}

/// Smooth zero-mean test function with geometrically decaying coefficients
/// on every `sin/cos x sin/cos` product.
fn smooth_field(x: f64, y: f64, phase: f64) -> f64 {
    let mut s = 0.0;
    for a in 1..=10 {
        for b in 1..=10 {
            let c = (-((a + b) as f64) / 1.5).exp();
            let (ax, by) = (2.0 * PI * a as f64 * x, 2.0 * PI * b as f64 * y);
            s += c * ((ax + phase).sin() * by.sin() + 0.5 * ax.cos() * (by + phase).cos());
        }
    }
    s
}

#[test]
fn truncated_bilinear_form_converges() {
    let t = Instant::now();
    let side = 48;
    let bases: Vec<Basis<f64>> = [2, 4, 6]
        .iter()
        .map(|&k| fourier_basis_2d(k, k, side, side).unwrap())
        .collect();
    let coords = bases[0].geometry().coordinates::<f64>(None).unwrap();
    let m = side * side;
    let pt = |i: usize| (coords.at(0, i), coords.at(1, i));
    let w = 1.0 / m as f64;
    let kernel = Tensor::from_fn2(m, m, |i, j| {
        let ((x0, y0), (x1, y1)) = (pt(i), pt(j));
        (-((x0 - x1).powi(2) + (y0 - y1).powi(2)) / 0.1).exp() * w * w
    });
    let u = Tensor::from_fn2(1, m, |_, i| smooth_field(pt(i).0, pt(i).1, 0.3));
    let v = Tensor::from_fn2(1, m, |_, i| smooth_field(pt(i).0, pt(i).1, 1.1));
    let dense = u.matmul(&kernel).unwrap().matmul_t(false, &v, true).unwrap().at(0, 0);
    let errs: Vec<f64> = bases
        .iter()
        .map(|b| {
            let a = b.phi().matmul_t(true, &kernel, false).unwrap().matmul(b.phi()).unwrap();
            let (uh, vh) = (b.project(&u).unwrap(), b.project(&v).unwrap());
            // `kernel` already carries both quadrature weights.
            let value = uh.matmul(&a).unwrap().matmul_t(false, &vh, true).unwrap().at(0, 0);
            (value - dense).abs()
        })
        .collect();
    report(
        "truncated bilinear form convergence",
        errs[0] > errs[1] && errs[1] > errs[2],
        t,
        format!("|truncated - dense| at N=16,64,144: {:.3e}, {:.3e}, {:.3e}", errs[0], errs[1], errs[2]),
    );
}

#[test]
fn laplacian_matches_square_eigenvalues() {
    let t = Instant::now();
    let mesh = TriMesh::<f64>::unit_square(33, 33).unwrap();
    let k = assemble_stiffness(&mesh).unwrap();
    let mass = assemble_lumped_mass(&mesh).unwrap();
    let dir = smallest_eigenpairs(&k, &mass, mesh.boundary_flags(), 5, BoundaryCondition::Dirichlet).unwrap();
    let exact = [2.0, 5.0, 5.0, 8.0, 10.0].map(|s| s * PI * PI);
    let eig_err = dir
        .values
        .iter()
        .zip(exact)
        .map(|(g, e)| (g - e).abs() / e)
        .fold(0.0, f64::max);
    let rayleigh = |vals: &[f64], vecs: &Tensor<f64>| {
        (0..vals.len())
            .map(|c| {
                let phi: Vec<f64> = (0..vecs.rows()).map(|i| vecs.at(i, c)).collect();
                let den: f64 = phi.iter().zip(mass.data()).map(|(p, m)| p * p * m).sum();
                (k.quadratic_form(&phi) / den - vals[c]).abs()
            })
            .fold(0.0, f64::max)
    };
    let neu = smallest_eigenpairs(&k, &mass, mesh.boundary_flags(), 5, BoundaryCondition::Neumann).unwrap();
    let c0: Vec<f64> = (0..neu.vectors.rows()).map(|i| neu.vectors.at(i, 0)).collect();
    let spread = c0.iter().fold(0.0f64, |m, &x| m.max((x - c0[0]).abs()));
    let rq = rayleigh(&dir.values, &dir.vectors).max(rayleigh(&neu.values, &neu.vectors));
    report(
        "laplacian eigen-oracle",
        eig_err < 0.02 && neu.values[0].abs() < 1e-10 && spread < 1e-10 && rq < 1e-10,
        t,
        format!(
            "dirichlet max rel err {:.2}% (2%), neumann lambda_0 {:.1e}, constant spread {spread:.1e}, rayleigh {rq:.1e} (1e-10)",
            100.0 * eig_err,
            neu.values[0]
        ),
    );
}

/// Max nodal error for `u = sin(pi x) sin(pi y)` with
/// `a = 1 + sin(pi x) sin(pi y) / 2` on an `n x n` grid.
fn darcy_manufactured_error(n: usize) -> f64 {
    let node = |i: usize| PI * i as f64 / (n - 1) as f64;
    let a = Tensor::from_fn2(n, n, |i, j| 1.0 + 0.5 * node(i).sin() * node(j).sin());
    let f = Tensor::from_fn2(n, n, |i, j| {
        let (sx, cx, sy, cy) = (node(i).sin(), node(i).cos(), node(j).sin(), node(j).cos());
        2.0 * PI * PI * a.at(i, j) * sx * sy - 0.5 * PI * PI * (cx * cx * sy * sy + sx * sx * cy * cy)
    });
    let u = darcy_solve_fd(&a, &f, FaceMean::Harmonic).unwrap();
    let exact = Tensor::from_fn2(n, n, |i, j| node(i).sin() * node(j).sin());
    u.max_abs_diff(&exact)
}

#[test]
fn darcy_solver_is_second_order() {
    let t = Instant::now();
    let (e64, e128) = (darcy_manufactured_error(64), darcy_manufactured_error(128));
    let ratio = e64 / e128;
    report(
        "darcy solver order",
        (ratio - 4.0).abs() <= 0.6,
        t,
        format!("error 64^2 {e64:.3e}, 128^2 {e128:.3e}, ratio {ratio:.3} (4 +- 15%)"),
    );
}

fn model_config(norm: NormKind) -> ModelConfig {
    ModelConfig {
        in_channels: 1,
        out_channels: 1,
        hidden: 32,
        layers: 4,
        basis_dim: 64,
        heads: 4,
        norm,
        mlp_ratio: 2,
        use_coords: true,
        seed: 0,
    }
}

fn dataset(dir: &Path, task: TaskSpec, train: usize, test: usize) -> Dataset {
    gen_dataset(&DatasetSpec { task, train, test, seed: 1 }, dir, false).unwrap();
    load_dataset(dir).unwrap()
}

fn train(data: &Dataset, basis: &Basis<f64>, norm: NormKind, cfg: &TrainConfig) -> (FitReport, SupraOperator<f64>) {
    let mut model = SupraOperator::init(&model_config(norm), basis).unwrap();
    let rep = fit(&mut model, basis, data, cfg, None).unwrap();
    (rep, model)
}

/// Steps of the 8-sample overfit run.
const OVERFIT_STEPS: usize = 2000;
const OVERFIT_LR: f64 = 1e-2;

/// Outcome of one overfit run: divergence and final train rel_l2.
#[derive(Clone, Debug)]
struct Overfit {
    diverged: Option<Divergence>,
    steps: usize,
    train_rel_l2: f64,
}

fn overfit(norm: NormKind) -> Overfit {
    let basis = fourier_basis_2d::<f64>(4, 4, 32, 32).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), TaskSpec::darcy(32), 8, 8);
    let cfg = TrainConfig {
        epochs: OVERFIT_STEPS,
        batch_size: 8,
        lr: OVERFIT_LR,
        overfit: true,
        ..TrainConfig::default()
    };
    let (rep, model) = train(&data, &basis, norm, &cfg);
    Overfit {
        diverged: rep.diverged,
        steps: rep.steps,
        train_rel_l2: evaluate(&model, &basis, &data, Split::Train).unwrap().mean_rel_l2,
    }
}

/// The layer-norm overfit run, shared by the learning and ablation checks.
fn layer_overfit() -> &'static Overfit {
    static RUN: OnceLock<Overfit> = OnceLock::new();
    RUN.get_or_init(|| overfit(NormKind::Layer))
}

#[test]
fn learns_darcy_and_overfits_small_set() {
    let t = Instant::now();
    let basis = fourier_basis_2d::<f64>(4, 4, 32, 32).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), TaskSpec::darcy(32), 200, 50);
    let (rep, model) = train(&data, &basis, NormKind::Layer, &TrainConfig::default());
    let eval = evaluate(&model, &basis, &data, Split::Test).unwrap();
    let ratio = eval.mean_rel_l2 / eval.baseline_rel_l2;

    let over = layer_overfit();
    report(
        "darcy learning capability",
        rep.diverged.is_none() && ratio <= 0.5 && over.diverged.is_none() && over.train_rel_l2 < 1e-2,
        t,
        format!(
            "test rel_l2 {:.4} vs baseline {:.4} (ratio {ratio:.3}, need <= 0.5); overfit train rel_l2 {:.4e} after {} steps (need < 1e-2)",
            eval.mean_rel_l2, eval.baseline_rel_l2, over.train_rel_l2, over.steps
        ),
    );
}

#[test]
fn learns_annulus_poisson_with_laplacian_basis() {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), TaskSpec::annulus_poisson(16, 64), 200, 50);
    let basis = laplacian_eigenbasis::<f64>(data.mesh.as_ref().unwrap(), 64).unwrap();
    let (rep, model) = train(&data, &basis, NormKind::Layer, &TrainConfig::default());
    let eval = evaluate(&model, &basis, &data, Split::Test).unwrap();
    let ratio = eval.mean_rel_l2 / eval.baseline_rel_l2;
    report(
        "annulus poisson with laplacian basis",
        rep.diverged.is_none() && ratio <= 0.5,
        t,
        format!(
            "{} vertices, test rel_l2 {:.4} vs baseline {:.4} (ratio {ratio:.3}, need <= 0.5), diverged {}",
            basis.num_points(),
            eval.mean_rel_l2,
            eval.baseline_rel_l2,
            rep.diverged.is_some()
        ),
    );
}

#[test]
fn bench_scaling_shape() {
    let t = Instant::now();
    let rows = run_bench(&BenchConfig {
        channels: vec![32],
        basis_dims: vec![64],
        ..BenchConfig::default()
    })
    .unwrap();
    let supra = growth_ratios(&rows, SUPRA_IMPL, 32, 64);
    let token = growth_ratios(&rows, TOKEN_IMPL, 32, 0);
    let fmt = |g: &[(usize, usize, f64)]| {
        g.iter()
            .map(|(a, b, r)| format!("{a}->{b} {r:.2}x"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    report(
        "complexity shape",
        supra.iter().all(|g| g.2 <= 2.5) && token.iter().all(|g| g.2 >= 8.0),
        t,
        format!("supra {} (need <= 2.5x); token {} (need >= 8x)", fmt(&supra), fmt(&token)),
    );
}

#[test]
fn normalization_ablation() {
    let t = Instant::now();
    let layer = layer_overfit();
    let inst = overfit(NormKind::Instance);
    let none = overfit(NormKind::None);

    let dir = tempfile::tempdir().unwrap();
    let tiny = dataset(dir.path(), TaskSpec::darcy(16), 4, 4);
    let tiny_basis = fourier_basis_2d::<f64>(2, 2, 16, 16).unwrap();
    let mut model = SupraOperator::init(&small_config(NormKind::None), &tiny_basis).unwrap();
    let blown = TrainConfig {
        epochs: 2,
        lr: 1e300,
        ..TrainConfig::default()
    };
    let abort = fit(&mut model, &tiny_basis, &tiny, &blown, None).unwrap();
    let abort_ok = abort.diverged.is_some() && model.params().values().iter().all(|p| p.all_finite());

    let outcome = match &none.diverged {
        Some(d) => format!("none diverged at step {} ({})", d.step, d.reason),
        None => format!(
            "none {:.4e} vs layer {:.4e}, instance {:.4e}",
            none.train_rel_l2, layer.train_rel_l2, inst.train_rel_l2
        ),
    };
    let pass = layer.diverged.is_none()
        && inst.diverged.is_none()
        && (none.diverged.is_some()
            || (none.train_rel_l2 > layer.train_rel_l2 && none.train_rel_l2 > inst.train_rel_l2))
        && abort_ok;
    report(
        "normalization ablation",
        pass,
        t,
        format!("{OVERFIT_STEPS}-step overfit train rel_l2: {outcome}; forced-divergence abort path ok {abort_ok}"),
    );
}
