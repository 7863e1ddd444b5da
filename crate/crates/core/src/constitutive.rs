//! Small-strain J2 elasto-plasticity with isotropic (linear + saturation)
//! hardening, radial return and the algorithmically consistent tangent.
//!
//! Tensors are stored in Voigt order (xx, yy, zz, xy). Stresses and plastic
//! strains hold tensor components; total strain inputs use engineering shear
//! `γ_xy = 2 ε_xy`. Plane strain is realized by passing `ε_zz = 0`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Voigt = [f64; 4];
pub type Tangent = [[f64; 4]; 4];

const SQRT_2_3: f64 = 0.816_496_580_927_726;
const VOL: Voigt = [1.0, 1.0, 1.0, 0.0];
/// Weights turning a component-wise product into the tensor contraction `a : b`.
const CONTRACT: Voigt = [1.0, 1.0, 1.0, 2.0];

#[derive(Debug, Error, PartialEq)]
pub enum ConstitutiveError {
    #[error("invalid material parameters: {0}")]
    InvalidParams(String),
    #[error("return mapping did not converge in {iterations} iterations (trial deviator norm {trial_norm}, alpha {alpha})")]
    ReturnMapDiverged {
        iterations: usize,
        trial_norm: f64,
        alpha: f64,
    },
}

/// Scaling `c` of the deviatoric norm in the yield function
/// `φ = c ‖s‖ − √(2/3) (σ_y − q(α))`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YieldNormalization {
    /// `c = 1/2`, the normalization written with a one-half prefactor.
    #[default]
    Printed,
    /// `c = 1`, the standard Von Mises surface `‖s‖ = √(2/3) σ_y`.
    VonMises,
}

impl YieldNormalization {
    pub fn factor(self) -> f64 {
        match self {
            YieldNormalization::Printed => 0.5,
            YieldNormalization::VonMises => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialParams {
    pub young: f64,
    pub poisson: f64,
    pub yield_stress: f64,
    #[serde(default)]
    pub hardening: f64,
    #[serde(default = "one")]
    pub theta: f64,
    #[serde(default)]
    pub k_inf: f64,
    #[serde(default)]
    pub k_0: f64,
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub yield_normalization: YieldNormalization,
}

fn one() -> f64 {
    1.0
}

impl Default for MaterialParams {
    fn default() -> Self {
        MaterialParams {
            young: 210e9,
            poisson: 0.3,
            yield_stress: 240e6,
            hardening: 0.0,
            theta: 1.0,
            k_inf: 0.0,
            k_0: 0.0,
            delta: 0.0,
            yield_normalization: YieldNormalization::Printed,
        }
    }
}

impl MaterialParams {
    pub fn shear_modulus(&self) -> f64 {
        self.young / (2.0 * (1.0 + self.poisson))
    }

    pub fn bulk_modulus(&self) -> f64 {
        self.young / (3.0 * (1.0 - 2.0 * self.poisson))
    }

    pub fn validate(&self) -> Result<(), ConstitutiveError> {
        let bad = |m: &str| Err(ConstitutiveError::InvalidParams(m.to_string()));
        if !(self.young > 0.0) {
            return bad("young modulus must be positive");
        }
        if !(0.0..0.5).contains(&self.poisson) {
            return bad("poisson ratio must lie in [0, 0.5)");
        }
        if !(self.yield_stress > 0.0) {
            return bad("yield stress must be positive");
        }
        if !(self.hardening >= 0.0) {
            return bad("hardening modulus must be non-negative");
        }
        if !(self.delta >= 0.0) {
            return bad("saturation exponent must be non-negative");
        }
        if ![self.theta, self.k_inf, self.k_0].iter().all(|v| v.is_finite()) {
            return bad("hardening constants must be finite");
        }
        Ok(())
    }

    fn has_linear_hardening(&self) -> bool {
        self.k_inf == self.k_0 || self.delta == 0.0
    }
}

/// Hardening function `q(α) = −θHα − (K∞ − K₀)(1 − e^{−δα})`.
pub fn q_hardening(alpha: f64, p: &MaterialParams) -> f64 {
    -p.theta * p.hardening * alpha - (p.k_inf - p.k_0) * (1.0 - (-p.delta * alpha).exp())
}

/// `−dq/dα`, the instantaneous hardening modulus.
pub fn hardening_modulus(alpha: f64, p: &MaterialParams) -> f64 {
    p.theta * p.hardening + (p.k_inf - p.k_0) * p.delta * (-p.delta * alpha).exp()
}

pub fn contract(a: &Voigt, b: &Voigt) -> f64 {
    (0..4).map(|i| CONTRACT[i] * a[i] * b[i]).sum()
}

pub fn norm(a: &Voigt) -> f64 {
    contract(a, a).sqrt()
}

pub fn trace(a: &Voigt) -> f64 {
    a[0] + a[1] + a[2]
}

pub fn deviator(a: &Voigt) -> Voigt {
    let m = trace(a) / 3.0;
    [a[0] - m, a[1] - m, a[2] - m, a[3]]
}

/// `φ(s, α)` for a deviatoric stress `s`.
pub fn yield_function(s_dev: &Voigt, alpha: f64, p: &MaterialParams) -> f64 {
    p.yield_normalization.factor() * norm(s_dev) - SQRT_2_3 * (p.yield_stress - q_hardening(alpha, p))
}

/// Plastic state at a material point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PointHistory {
    /// Equivalent plastic strain.
    pub alpha: f64,
    /// Plastic strain, tensor components.
    pub eps_p: Voigt,
}

impl PointHistory {
    pub const LEN: usize = 5;

    pub fn to_array(&self) -> [f64; 5] {
        [self.alpha, self.eps_p[0], self.eps_p[1], self.eps_p[2], self.eps_p[3]]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        PointHistory {
            alpha: v[0],
            eps_p: [v[1], v[2], v[3], v[4]],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StressResult {
    pub stress: Voigt,
    pub history: PointHistory,
    /// `∂σ/∂ε` with engineering shear in the strain columns.
    pub tangent: Tangent,
    pub plastic_multiplier: f64,
    /// Trial value of the yield function.
    pub trial_yield: f64,
}

impl StressResult {
    pub fn is_plastic(&self) -> bool {
        self.plastic_multiplier > 0.0
    }
}

/// Tensor-component strain from engineering strain.
pub fn strain_tensor(eng: &Voigt) -> Voigt {
    [eng[0], eng[1], eng[2], 0.5 * eng[3]]
}

pub fn elastic_tangent(p: &MaterialParams) -> Tangent {
    let (g, k) = (p.shear_modulus(), p.bulk_modulus());
    assemble_tangent(k, 2.0 * g, 0.0, &[0.0; 4])
}

/// Stress for given engineering strain and plastic strain, without yielding.
pub fn elastic_stress(eng: &Voigt, eps_p: &Voigt, p: &MaterialParams) -> Voigt {
    let e = strain_tensor(eng);
    let (g, k) = (p.shear_modulus(), p.bulk_modulus());
    let tr = trace(&e);
    let d = deviator(&e);
    std::array::from_fn(|i| k * tr * VOL[i] + 2.0 * g * (d[i] - eps_p[i]))
}

/// `κ I⊗I + a P_dev + b n⊗n`, mapped to engineering-shear strain columns.
fn assemble_tangent(kappa: f64, a: f64, b: f64, n: &Voigt) -> Tangent {
    let mut t = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            let pdev = if i == j { 1.0 } else { 0.0 } - VOL[i] * VOL[j] / 3.0;
            let m = kappa * VOL[i] * VOL[j] + a * pdev + b * n[i] * CONTRACT[j] * n[j];
            t[i][j] = if j == 3 { 0.5 * m } else { m };
        }
    }
    t
}

const NEWTON_MAX_ITERS: usize = 50;

/// Radial-return stress update.
pub fn stress_update(
    eng_strain: &Voigt,
    history: &PointHistory,
    p: &MaterialParams,
) -> Result<StressResult, ConstitutiveError> {
    let (g, kappa) = (p.shear_modulus(), p.bulk_modulus());
    let c = p.yield_normalization.factor();
    let e = strain_tensor(eng_strain);
    let tr = trace(&e);
    let d = deviator(&e);
    let s_trial: Voigt = std::array::from_fn(|i| 2.0 * g * (d[i] - history.eps_p[i]));
    let n_trial = norm(&s_trial);
    let f_trial = yield_function(&s_trial, history.alpha, p);
    if f_trial <= 0.0 || n_trial == 0.0 {
        let stress = std::array::from_fn(|i| kappa * tr * VOL[i] + s_trial[i]);
        return Ok(StressResult {
            stress,
            history: *history,
            tangent: assemble_tangent(kappa, 2.0 * g, 0.0, &[0.0; 4]),
            plastic_multiplier: 0.0,
            trial_yield: f_trial,
        });
    }

    let residual = |dg: f64| {
        c * (n_trial - 2.0 * g * dg) - SQRT_2_3 * (p.yield_stress - q_hardening(history.alpha + SQRT_2_3 * dg, p))
    };
    let slope = |dg: f64| -2.0 * g * c - (2.0 / 3.0) * hardening_modulus(history.alpha + SQRT_2_3 * dg, p);
    let dgamma = if p.has_linear_hardening() {
        f_trial / (2.0 * g * c + (2.0 / 3.0) * p.theta * p.hardening)
    } else {
        let tol = 1e-12 * p.yield_stress;
        let mut dg = 0.0;
        let mut converged = false;
        for _ in 0..NEWTON_MAX_ITERS {
            let r = residual(dg);
            if r.abs() <= tol {
                converged = true;
                break;
            }
            dg -= r / slope(dg);
        }
        if !converged {
            return Err(ConstitutiveError::ReturnMapDiverged {
                iterations: NEWTON_MAX_ITERS,
                trial_norm: n_trial,
                alpha: history.alpha,
            });
        }
        dg
    };

    let n_hat: Voigt = std::array::from_fn(|i| s_trial[i] / n_trial);
    let alpha = history.alpha + SQRT_2_3 * dgamma;
    let eps_p = std::array::from_fn(|i| history.eps_p[i] + dgamma * n_hat[i]);
    let stress = std::array::from_fn(|i| kappa * tr * VOL[i] + s_trial[i] - 2.0 * g * dgamma * n_hat[i]);
    let hp = hardening_modulus(alpha, p);
    let a = 2.0 * g * (1.0 - 2.0 * g * dgamma / n_trial);
    let b = 4.0 * g * g * dgamma / n_trial - 4.0 * g * g * c / (2.0 * g * c + (2.0 / 3.0) * hp);
    Ok(StressResult {
        stress,
        history: PointHistory { alpha, eps_p },
        tangent: assemble_tangent(kappa, a, b, &n_hat),
        plastic_multiplier: dgamma,
        trial_yield: f_trial,
    })
}

/// Largest deviation between the algorithmic tangent and central finite
/// differences of `stress_update`, relative to the largest tangent entry.
/// `rel_step` scales the perturbation by the strain magnitude.
pub fn tangent_vs_fd(
    eng_strain: &Voigt,
    history: &PointHistory,
    p: &MaterialParams,
    rel_step: f64,
) -> Result<f64, ConstitutiveError> {
    let base = stress_update(eng_strain, history, p)?;
    let scale = eng_strain.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let h = rel_step * scale;
    let tmax = base
        .tangent
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let mut dev = 0.0f64;
    for j in 0..4 {
        let mut ep = *eng_strain;
        let mut em = *eng_strain;
        ep[j] += h;
        em[j] -= h;
        let sp = stress_update(&ep, history, p)?.stress;
        let sm = stress_update(&em, history, p)?.stress;
        for i in 0..4 {
            let fd = (sp[i] - sm[i]) / (2.0 * h);
            dev = dev.max((fd - base.tangent[i][j]).abs() / tmax);
        }
    }
    Ok(dev)
}
