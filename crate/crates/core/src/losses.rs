//! Forward values and analytic gradients for the margin-softmax loss family:
//! AAM-Softmax, ChebyAAM, ChebySD-AAM, HAM-Softmax and RiemannSD-AAM.
//!
//! The two SD variants add a hinge penalty that activates when the source
//! embedding aligns with the frozen speaker embedding — by cosine threshold
//! `τ` in the Euclidean case, by hyperbolic distance threshold `γ` in the
//! Poincaré-ball case — and raise every non-target logit by it. Speaker
//! embeddings are constants; gradients flow into the source embeddings and
//! the class prototypes only.

use crate::chebyshev::{ChebSeries, DEFAULT_QUAD_NODES};
use crate::error::{Error, Result};
use crate::hyperbolic::{
    exp_map_origin, exp_map_origin_jacobian, hyperbolic_distance, hyperbolic_distance_grads,
    Curvature, PoincarePoint,
};
use crate::util::{all_finite, logsumexp, softmax};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use std::fmt;
use std::str::FromStr;

/// Target cosines are clamped to `[-1+ε, 1-ε]` before the AAM trig identity;
/// the derivative of `cos(arccos x + m)` blows up at the endpoints.
pub const AAM_COS_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Aam,
    ChebyAam,
    ChebySd,
    Ham,
    RiemannSd,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Aam,
        LossKind::ChebyAam,
        LossKind::ChebySd,
        LossKind::Ham,
        LossKind::RiemannSd,
    ];

    fn uses_chebyshev(self) -> bool {
        matches!(self, LossKind::ChebyAam | LossKind::ChebySd)
    }

    fn uses_hyperbolic(self) -> bool {
        matches!(self, LossKind::Ham | LossKind::RiemannSd)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LossKind::Aam => "aam",
            LossKind::ChebyAam => "cheby",
            LossKind::ChebySd => "cheby-sd",
            LossKind::Ham => "ham",
            LossKind::RiemannSd => "riemann-sd",
        };
        f.write_str(s)
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aam" => Ok(LossKind::Aam),
            "cheby" => Ok(LossKind::ChebyAam),
            "cheby-sd" => Ok(LossKind::ChebySd),
            "ham" => Ok(LossKind::Ham),
            "riemann-sd" => Ok(LossKind::RiemannSd),
            other => Err(Error::Config(format!(
                "unknown loss kind '{other}' (expected aam|cheby|cheby-sd|ham|riemann-sd)"
            ))),
        }
    }
}

/// Loss hyperparameters. Fields irrelevant to `kind` are ignored but must
/// still be valid.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    pub scale_s: f64,
    pub margin_m: f64,
    pub lambda: f64,
    pub tau: f64,
    pub gamma: f64,
    pub curvature_c: f64,
    pub cheb_degree: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::Aam,
            scale_s: 30.0,
            margin_m: 0.3,
            lambda: 1.0,
            tau: 0.1,
            gamma: 2.0,
            curvature_c: 6.0,
            cheb_degree: 10,
        }
    }
}

impl LossConfig {
    pub fn with_kind(kind: LossKind) -> Self {
        LossConfig {
            kind,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale_s.is_finite() && self.scale_s > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "scale must be positive, got {}",
                self.scale_s
            )));
        }
        if !(self.margin_m.is_finite() && self.margin_m >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "margin must be ≥ 0, got {}",
                self.margin_m
            )));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be ≥ 0, got {}",
                self.lambda
            )));
        }
        if !(self.tau.is_finite() && (0.0..=1.0).contains(&self.tau)) {
            return Err(Error::InvalidArgument(format!(
                "tau must be in [0, 1], got {}",
                self.tau
            )));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        Curvature::new(self.curvature_c)?;
        if self.cheb_degree < 1 {
            return Err(Error::InvalidArgument("cheb degree must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Class prototypes, one unit-norm row per class.
#[derive(Debug, Clone)]
pub struct PrototypeBank {
    weights: Array2<f64>,
}

impl PrototypeBank {
    pub fn new(weights: Array2<f64>) -> Result<Self> {
        if weights.nrows() == 0 {
            return Err(Error::InvalidArgument("need at least one prototype".into()));
        }
        for (i, row) in weights.rows().into_iter().enumerate() {
            if !row.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "prototype {i} contains non-finite values"
                )));
            }
            let n = row.dot(&row).sqrt();
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "prototype {i} not unit-norm: ‖w‖ = {n}"
                )));
            }
        }
        Ok(PrototypeBank { weights })
    }

    /// Normalizes each row before construction.
    pub fn from_raw(mut weights: Array2<f64>) -> Result<Self> {
        crate::util::normalize_rows(&mut weights);
        PrototypeBank::new(weights)
    }

    pub fn weights(&self) -> ArrayView2<'_, f64> {
        self.weights.view()
    }

    pub fn num_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }
}

/// One training batch: source embeddings, frozen speaker embeddings, labels.
#[derive(Debug, Clone)]
pub struct LossBatch {
    src: Array2<f64>,
    spk: Array2<f64>,
    labels: Vec<usize>,
}

impl LossBatch {
    pub fn new(src: Array2<f64>, spk: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if src.nrows() != spk.nrows() || src.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                left: src.nrows(),
                right: labels.len().max(spk.nrows()),
            });
        }
        if src.ncols() != spk.ncols() {
            return Err(Error::DimensionMismatch {
                left: src.ncols(),
                right: spk.ncols(),
            });
        }
        for (name, m) in [("src", &src), ("spk", &spk)] {
            for (i, row) in m.rows().into_iter().enumerate() {
                if !row.iter().all(|v| v.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "{name} embedding {i} contains non-finite values"
                    )));
                }
                let n = row.dot(&row).sqrt();
                if (n - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "{name} embedding {i} not unit-norm: ‖x‖ = {n}"
                    )));
                }
            }
        }
        Ok(LossBatch { src, spk, labels })
    }

    pub fn src(&self) -> ArrayView2<'_, f64> {
        self.src.view()
    }

    pub fn spk(&self) -> ArrayView2<'_, f64> {
        self.spk.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub mean_loss: f64,
    /// Per-sample logits, one row per batch element, one column per class.
    pub logits: Array2<f64>,
    pub per_sample: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct LossGrads {
    /// Gradient of the mean loss with respect to the source embeddings.
    pub src: Array2<f64>,
    /// Gradient of the mean loss with respect to the prototypes.
    pub prototypes: Array2<f64>,
}

/// `max(0, |⟨f_src, f_spk⟩| − τ)`: the Euclidean speaker-alignment hinge.
pub fn speaker_margin_euclidean(
    f_src: ArrayView1<'_, f64>,
    f_spk: ArrayView1<'_, f64>,
    tau: f64,
) -> Result<f64> {
    if f_src.len() != f_spk.len() {
        return Err(Error::DimensionMismatch {
            left: f_src.len(),
            right: f_spk.len(),
        });
    }
    Ok((f_src.dot(&f_spk).abs() - tau).max(0.0))
}

/// `max(0, γ − d_H(proj(f_src), proj(f_spk)))`: positive exactly when the
/// projected pair is closer than `γ` on the ball.
pub fn speaker_margin_hyperbolic(
    f_src: ArrayView1<'_, f64>,
    f_spk: ArrayView1<'_, f64>,
    gamma: f64,
    c: Curvature,
) -> Result<f64> {
    if f_src.len() != f_spk.len() {
        return Err(Error::DimensionMismatch {
            left: f_src.len(),
            right: f_spk.len(),
        });
    }
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    let x = exp_map_origin(f_src, c)?;
    let y = exp_map_origin(f_spk, c)?;
    Ok((gamma - hyperbolic_distance(&x, &y)?).max(0.0))
}

/// Derivative of the raw AAM target transform `cos(arccos x + m)` with no
/// endpoint clamp: `cos m + sin m · x/√(1−x²)`. Unbounded as `x → ±1`.
pub fn aam_target_derivative_raw(x: f64, m: f64) -> f64 {
    m.cos() + m.sin() * x / (1.0 - x * x).sqrt()
}

/// A configured loss with its Chebyshev series precomputed.
#[derive(Debug, Clone)]
pub struct LossFn {
    config: LossConfig,
    cheb: Option<ChebSeries>,
}

impl LossFn {
    pub fn new(config: LossConfig) -> Result<Self> {
        config.validate()?;
        let cheb = if config.kind.uses_chebyshev() {
            Some(ChebSeries::compute(
                config.margin_m,
                config.cheb_degree,
                DEFAULT_QUAD_NODES,
            )?)
        } else {
            None
        };
        Ok(LossFn { config, cheb })
    }

    pub fn config(&self) -> &LossConfig {
        &self.config
    }

    pub fn forward(&self, protos: &PrototypeBank, batch: &LossBatch) -> Result<LossOutput> {
        self.check_shapes(protos, batch)?;
        self.forward_raw(
            protos.weights(),
            batch.src(),
            batch.spk(),
            batch.labels(),
        )
    }

    pub fn forward_backward(
        &self,
        protos: &PrototypeBank,
        batch: &LossBatch,
    ) -> Result<(LossOutput, LossGrads)> {
        self.check_shapes(protos, batch)?;
        self.forward_backward_raw(
            protos.weights(),
            batch.src(),
            batch.spk(),
            batch.labels(),
        )
    }

    fn check_shapes(&self, protos: &PrototypeBank, batch: &LossBatch) -> Result<()> {
        if protos.dim() != batch.src().ncols() {
            return Err(Error::DimensionMismatch {
                left: protos.dim(),
                right: batch.src().ncols(),
            });
        }
        if let Some(&bad) = batch.labels().iter().find(|&&l| l >= protos.num_classes()) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {} classes",
                protos.num_classes()
            )));
        }
        Ok(())
    }

    /// Forward pass on raw arrays. Used by the finite-difference checker,
    /// which perturbs entries off the unit sphere; the loss formulas stay
    /// well defined there.
    pub(crate) fn forward_raw(
        &self,
        protos: ArrayView2<'_, f64>,
        src: ArrayView2<'_, f64>,
        spk: ArrayView2<'_, f64>,
        labels: &[usize],
    ) -> Result<LossOutput> {
        let logits = self.compute_logits(protos, src, spk, labels)?;
        let b = labels.len();
        let mut per_sample = Array1::zeros(b);
        for i in 0..b {
            let row: Vec<f64> = logits.row(i).to_vec();
            per_sample[i] = logsumexp(&row) - row[labels[i]];
        }
        let mean_loss = if b == 0 { 0.0 } else { per_sample.sum() / b as f64 };
        if !mean_loss.is_finite() {
            return Err(Error::InvalidArgument("loss is not finite".into()));
        }
        Ok(LossOutput {
            mean_loss,
            logits,
            per_sample,
        })
    }

    fn compute_logits(
        &self,
        protos: ArrayView2<'_, f64>,
        src: ArrayView2<'_, f64>,
        spk: ArrayView2<'_, f64>,
        labels: &[usize],
    ) -> Result<Array2<f64>> {
        let cfg = &self.config;
        let b = labels.len();
        let c = protos.nrows();
        let mut logits = Array2::zeros((b, c));
        if cfg.kind.uses_hyperbolic() {
            let cv = Curvature::new(cfg.curvature_c)?;
            let proj: Vec<PoincarePoint> = protos
                .rows()
                .into_iter()
                .map(|w| exp_map_origin(w, cv))
                .collect::<Result<_>>()?;
            for i in 0..b {
                let x = exp_map_origin(src.row(i), cv)?;
                let margin = if cfg.kind == LossKind::RiemannSd {
                    let g = exp_map_origin(spk.row(i), cv)?;
                    (cfg.gamma - hyperbolic_distance(&x, &g)?).max(0.0)
                } else {
                    0.0
                };
                for j in 0..c {
                    let d = hyperbolic_distance(&x, &proj[j])?;
                    logits[[i, j]] = if j == labels[i] {
                        -cfg.scale_s * (d + cfg.margin_m)
                    } else {
                        -cfg.scale_s * d + cfg.lambda_for_kind() * margin
                    };
                }
            }
        } else {
            for i in 0..b {
                let f = src.row(i);
                let margin = if cfg.kind == LossKind::ChebySd {
                    (f.dot(&spk.row(i)).abs() - cfg.tau).max(0.0)
                } else {
                    0.0
                };
                for j in 0..c {
                    let cos = f.dot(&protos.row(j));
                    logits[[i, j]] = if j == labels[i] {
                        cfg.scale_s * self.target_transform(cos)
                    } else {
                        cfg.scale_s * (cos + cfg.lambda_for_kind() * margin)
                    };
                }
            }
        }
        Ok(logits)
    }

    /// Target-logit transform of the target cosine (Euclidean kinds).
    fn target_transform(&self, cos: f64) -> f64 {
        match self.config.kind {
            LossKind::Aam => {
                let x = cos.clamp(-1.0 + AAM_COS_CLAMP, 1.0 - AAM_COS_CLAMP);
                x * self.config.margin_m.cos()
                    - (1.0 - x * x).sqrt() * self.config.margin_m.sin()
            }
            LossKind::ChebyAam | LossKind::ChebySd => self
                .cheb
                .as_ref()
                .expect("series built for cheby kinds")
                .eval_unchecked(cos.clamp(-1.0, 1.0)),
            _ => unreachable!("hyperbolic kinds have no cosine transform"),
        }
    }

    /// Derivative of [`Self::target_transform`] with respect to the cosine.
    fn target_transform_derivative(&self, cos: f64) -> f64 {
        match self.config.kind {
            LossKind::Aam => {
                if cos.abs() >= 1.0 - AAM_COS_CLAMP {
                    0.0 // clamped region: the transform is locally constant
                } else {
                    aam_target_derivative_raw(cos, self.config.margin_m)
                }
            }
            LossKind::ChebyAam | LossKind::ChebySd => self
                .cheb
                .as_ref()
                .expect("series built for cheby kinds")
                .derivative_unchecked(cos.clamp(-1.0, 1.0)),
            _ => unreachable!(),
        }
    }

    pub(crate) fn forward_backward_raw(
        &self,
        protos: ArrayView2<'_, f64>,
        src: ArrayView2<'_, f64>,
        spk: ArrayView2<'_, f64>,
        labels: &[usize],
    ) -> Result<(LossOutput, LossGrads)> {
        let output = self.forward_raw(protos, src, spk, labels)?;
        let cfg = &self.config;
        let b = labels.len();
        let c = protos.nrows();
        let d = protos.ncols();
        let inv_b = 1.0 / b.max(1) as f64;
        let mut g_src = Array2::zeros((b, d));
        let mut g_proto = Array2::zeros((c, d));

        if cfg.kind.uses_hyperbolic() {
            let cv = Curvature::new(cfg.curvature_c)?;
            let proj: Vec<PoincarePoint> = protos
                .rows()
                .into_iter()
                .map(|w| exp_map_origin(w, cv))
                .collect::<Result<_>>()?;
            let proto_jac: Vec<Array2<f64>> = protos
                .rows()
                .into_iter()
                .map(|w| exp_map_origin_jacobian(w, cv))
                .collect();
            for i in 0..b {
                let y = labels[i];
                let probs = softmax(&output.logits.row(i).to_vec());
                let x = exp_map_origin(src.row(i), cv)?;
                let jac_x = exp_map_origin_jacobian(src.row(i), cv);
                // accumulate the ball-space gradient for f, then push it
                // through the projection Jacobian once
                let mut ball_grad = Array1::<f64>::zeros(d);
                for j in 0..c {
                    let coef = (probs[j] - if j == y { 1.0 } else { 0.0 }) * inv_b;
                    if coef == 0.0 {
                        continue;
                    }
                    let (_, gx, gy) = hyperbolic_distance_grads(&x, &proj[j])?;
                    ball_grad.scaled_add(-cfg.scale_s * coef, &gx);
                    let gw = proto_jac[j].dot(&gy);
                    for k in 0..d {
                        g_proto[[j, k]] += -cfg.scale_s * coef * gw[k];
                    }
                }
                if cfg.kind == LossKind::RiemannSd {
                    let g = exp_map_origin(spk.row(i), cv)?;
                    let (dist_sg, gx_sg, _) = hyperbolic_distance_grads(&x, &g)?;
                    if dist_sg < cfg.gamma {
                        // margin γ − d enters every non-target logit
                        let nontarget: f64 = probs
                            .iter()
                            .enumerate()
                            .filter(|(j, _)| *j != y)
                            .map(|(_, p)| p)
                            .sum();
                        ball_grad.scaled_add(-cfg.lambda * nontarget * inv_b, &gx_sg);
                    }
                }
                let pushed = jac_x.dot(&ball_grad);
                for k in 0..d {
                    g_src[[i, k]] = pushed[k];
                }
            }
        } else {
            for i in 0..b {
                let y = labels[i];
                let f = src.row(i);
                let probs = softmax(&output.logits.row(i).to_vec());
                for j in 0..c {
                    let coef = (probs[j] - if j == y { 1.0 } else { 0.0 }) * inv_b;
                    if coef == 0.0 {
                        continue;
                    }
                    let cos = f.dot(&protos.row(j));
                    let fac = if j == y {
                        self.target_transform_derivative(cos)
                    } else {
                        1.0
                    };
                    for k in 0..d {
                        g_src[[i, k]] += cfg.scale_s * coef * fac * protos[[j, k]];
                        g_proto[[j, k]] += cfg.scale_s * coef * fac * f[k];
                    }
                }
                if cfg.kind == LossKind::ChebySd {
                    let q = f.dot(&spk.row(i));
                    if q.abs() > cfg.tau {
                        let nontarget: f64 = probs
                            .iter()
                            .enumerate()
                            .filter(|(j, _)| *j != y)
                            .map(|(_, p)| p)
                            .sum();
                        let w = cfg.scale_s * cfg.lambda * nontarget * inv_b * q.signum();
                        for k in 0..d {
                            g_src[[i, k]] += w * spk[[i, k]];
                        }
                    }
                }
            }
        }

        if !all_finite(g_src.as_slice().expect("contiguous"))
            || !all_finite(g_proto.as_slice().expect("contiguous"))
        {
            return Err(Error::InvalidArgument("gradient is not finite".into()));
        }
        Ok((
            output,
            LossGrads {
                src: g_src,
                prototypes: g_proto,
            },
        ))
    }
}

impl LossConfig {
    /// λ multiplies the speaker margin only for the SD kinds.
    fn lambda_for_kind(&self) -> f64 {
        match self.kind {
            LossKind::ChebySd | LossKind::RiemannSd => self.lambda,
            _ => 0.0,
        }
    }
}

/// Mean loss and per-sample logits for one batch.
pub fn loss_forward(
    config: &LossConfig,
    protos: &PrototypeBank,
    batch: &LossBatch,
) -> Result<LossOutput> {
    LossFn::new(config.clone())?.forward(protos, batch)
}

/// Exact gradients of the mean loss with respect to the source embeddings
/// and the prototypes.
pub fn loss_backward(
    config: &LossConfig,
    protos: &PrototypeBank,
    batch: &LossBatch,
) -> Result<LossGrads> {
    let (_, grads) = LossFn::new(config.clone())?.forward_backward(protos, batch)?;
    Ok(grads)
}
