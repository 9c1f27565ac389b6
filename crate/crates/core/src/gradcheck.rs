//! Finite-difference verification of the loss gradients.
//!
//! The checker samples random loss instances, excludes configurations where
//! a central difference is meaningless (hinge kinks, the arccos clamp band,
//! saturated softmax), and compares the analytic gradients of the mean loss
//! against central differences with step 1e-6. The numeric side only ever
//! calls the forward pass, so it stays independent of the gradient code it
//! checks.

use crate::chebyshev::ChebSeries;
use crate::error::Result;
use crate::hyperbolic::{exp_map_origin, hyperbolic_distance, Curvature};
use crate::losses::{
    aam_target_derivative_raw, LossConfig, LossFn, LossGrads, LossKind,
};
use crate::util::{normalize_rows, seeded_rng, softmax};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

pub const FD_STEP: f64 = 1e-6;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;

/// Batch shape every instance uses.
pub const BATCH: usize = 4;
pub const CLASSES: usize = 5;
pub const DIM: usize = 8;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub kind: LossKind,
    pub instances: usize,
    pub max_rel_err: f64,
    pub worst_instance: usize,
    /// "src" or "prototypes".
    pub worst_block: &'static str,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_err <= tolerance
    }
}

/// Raw arrays of one sampled instance, exposed so alternative gradient
/// implementations (or deliberately broken ones, in tests) can be checked.
#[derive(Debug, Clone)]
pub struct Instance {
    pub protos: Array2<f64>,
    pub src: Array2<f64>,
    pub spk: Array2<f64>,
    pub labels: Vec<usize>,
}

fn random_unit_matrix(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> Array2<f64> {
    let mut m = Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng));
    normalize_rows(&mut m);
    m
}

fn sample_config(rng: &mut ChaCha12Rng, kind: LossKind) -> LossConfig {
    let mut cfg = LossConfig::with_kind(kind);
    cfg.scale_s = rng.random_range(5.0..12.0);
    cfg.margin_m = rng.random_range(0.05..0.5);
    cfg.lambda = rng.random_range(0.2..2.0);
    cfg.tau = rng.random_range(0.05..0.3);
    cfg.curvature_c = rng.random_range(0.4..4.0);
    // place γ where the hinge is plausibly active for projected unit vectors
    cfg.gamma = rng.random_range(2.2..3.4);
    cfg.cheb_degree = *[5usize, 10, 20]
        .get(rng.random_range(0..3))
        .expect("index in range");
    cfg
}

/// Rejects geometries where the finite difference would straddle a kink or
/// resolve nothing: near-saturated softmax, hinge boundaries, the arccos
/// clamp band.
fn instance_is_checkable(inst: &Instance, loss: &LossFn) -> bool {
    let config = loss.config();
    let out = match loss.forward_raw(
        inst.protos.view(),
        inst.src.view(),
        inst.spk.view(),
        &inst.labels,
    ) {
        Ok(o) => o,
        Err(_) => return false,
    };
    for i in 0..inst.labels.len() {
        let probs = softmax(&out.logits.row(i).to_vec());
        let max_p = probs.iter().cloned().fold(0.0f64, f64::max);
        if max_p > 0.95 {
            return false;
        }
        let f = inst.src.row(i);
        let q = f.dot(&inst.spk.row(i));
        match config.kind {
            LossKind::ChebySd => {
                if (q.abs() - config.tau).abs() < 5e-3 || q.abs() < 5e-3 {
                    return false;
                }
            }
            LossKind::RiemannSd => {
                let cv = Curvature::new(config.curvature_c).expect("validated");
                let x = exp_map_origin(f, cv).expect("finite");
                let g = exp_map_origin(inst.spk.row(i), cv).expect("finite");
                let d = hyperbolic_distance(&x, &g).expect("same ball");
                if (d - config.gamma).abs() < 5e-3 {
                    return false;
                }
            }
            LossKind::Aam => {
                let y = inst.labels[i];
                if f.dot(&inst.protos.row(y)).abs() > 0.98 {
                    return false;
                }
            }
            _ => {}
        }
    }
    true
}

fn sample_instance(rng: &mut ChaCha12Rng, kind: LossKind) -> (Instance, LossFn) {
    loop {
        let config = sample_config(rng, kind);
        let inst = Instance {
            protos: random_unit_matrix(rng, CLASSES, DIM),
            src: random_unit_matrix(rng, BATCH, DIM),
            spk: random_unit_matrix(rng, BATCH, DIM),
            labels: (0..BATCH).map(|_| rng.random_range(0..CLASSES)).collect(),
        };
        let loss = LossFn::new(config).expect("sampled config is valid");
        if instance_is_checkable(&inst, &loss) {
            return (inst, loss);
        }
    }
}

fn numeric_grad(
    loss: &LossFn,
    inst: &Instance,
    perturb_src: bool,
) -> Result<Array2<f64>> {
    let base = if perturb_src {
        inst.src.clone()
    } else {
        inst.protos.clone()
    };
    let mut grad = Array2::zeros(base.dim());
    for idx in 0..base.len() {
        let (r, c) = (idx / base.ncols(), idx % base.ncols());
        let eval = |delta: f64| -> Result<f64> {
            let mut m = base.clone();
            m[[r, c]] += delta;
            let (protos, src) = if perturb_src {
                (inst.protos.view(), m.view())
            } else {
                (m.view(), inst.src.view())
            };
            Ok(loss
                .forward_raw(protos, src, inst.spk.view(), &inst.labels)?
                .mean_loss)
        };
        grad[[r, c]] = (eval(FD_STEP)? - eval(-FD_STEP)?) / (2.0 * FD_STEP);
    }
    Ok(grad)
}

/// Relative error of a gradient block, normalized by the block's overall
/// scale so that near-zero entries do not inflate it.
fn block_rel_err(analytic: &Array2<f64>, numeric: &Array2<f64>) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric.iter())
        .fold(0.0f64, |m, &v| m.max(v.abs()))
        .max(1e-12);
    analytic
        .iter()
        .zip(numeric.iter())
        .fold(0.0f64, |m, (&a, &n)| m.max((a - n).abs()))
        / scale
}

/// Checks `n_instances` random instances of `kind`, letting the caller
/// supply the gradient implementation under test.
pub fn check_loss_kind_with<F>(
    kind: LossKind,
    n_instances: usize,
    seed: u64,
    backward: F,
) -> Result<GradCheckReport>
where
    F: Fn(&LossFn, &Instance) -> Result<LossGrads>,
{
    let mut rng = seeded_rng(seed);
    let mut report = GradCheckReport {
        kind,
        instances: n_instances,
        max_rel_err: 0.0,
        worst_instance: 0,
        worst_block: "src",
    };
    for n in 0..n_instances {
        let (inst, loss) = sample_instance(&mut rng, kind);
        let grads = backward(&loss, &inst)?;
        let fd_src = numeric_grad(&loss, &inst, true)?;
        let fd_proto = numeric_grad(&loss, &inst, false)?;
        for (block, analytic, numeric) in [
            ("src", &grads.src, &fd_src),
            ("prototypes", &grads.prototypes, &fd_proto),
        ] {
            let err = block_rel_err(analytic, numeric);
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst_instance = n;
                report.worst_block = block;
            }
        }
    }
    Ok(report)
}

/// Checks the crate's own analytic gradients for one loss kind.
pub fn check_loss_gradients(
    kind: LossKind,
    n_instances: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    check_loss_kind_with(kind, n_instances, seed, |loss, inst| {
        let (_, grads) = loss.forward_backward_raw(
            inst.protos.view(),
            inst.src.view(),
            inst.spk.view(),
            &inst.labels,
        )?;
        Ok(grads)
    })
}

/// The boundary contrast between the raw arccos-based margin derivative and
/// the polynomial one.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    /// |d/dx cos(arccos x + m)| at x = 1 − 1e−8, no clamp.
    pub aam_derivative_near_one: f64,
    /// |F'| of the degree-K series at the same point.
    pub cheby_derivative_near_one: f64,
    pub cheby_derivative_at_one: f64,
    pub cheby_derivative_at_minus_one: f64,
    pub ratio: f64,
}

pub fn stability_contrast(m: f64, degree: usize) -> Result<StabilityReport> {
    let series = ChebSeries::compute(m, degree, crate::chebyshev::DEFAULT_QUAD_NODES)?;
    let x = 1.0 - 1e-8;
    let aam = aam_target_derivative_raw(x, m).abs();
    let cheb = series.eval_with_derivative(x)?.1.abs();
    let at_one = series.eval_with_derivative(1.0)?.1;
    let at_minus_one = series.eval_with_derivative(-1.0)?.1;
    Ok(StabilityReport {
        aam_derivative_near_one: aam,
        cheby_derivative_near_one: cheb,
        cheby_derivative_at_one: at_one,
        cheby_derivative_at_minus_one: at_minus_one,
        ratio: aam / cheb,
    })
}
