//! Energy functionals on Kähler potentials, all in closed form.
//!
//! Integrals against omega_phi use the chart quadrature plus the polar caps,
//! which carry the reference metric. With that convention every functional
//! below is exactly the path integral of its variation on the grid (the
//! discrete Laplacian is symmetric in the quadrature inner product), and all
//! of them vanish at phi = 0 and are invariant under adding constants.

use crate::geometry::{fubini_study, integrate, potential_density, ScalarField};
use crate::ma_core::Background;
use crate::real::{lit, max_of, Real};

#[derive(Debug, Clone, thiserror::Error)]
pub enum EnergyError {
    #[error("potential is not Kähler-positive at node {index}")]
    NotKahler { index: usize },
    #[error("audit class weight mu' = {mu_prime} must not exceed mu = {mu}")]
    InvalidAuditAngle { mu: f64, mu_prime: f64 },
    #[error("{expected} angles expected, got {got}")]
    AngleCount { expected: usize, got: usize },
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

fn chart_dot<T: Real>(phi: &ScalarField<T>, a: &[T], b: &[T]) -> T {
    let prod: Vec<T> = a.iter().zip(b).map(|(&x, &y)| x * y).collect();
    phi.grid().chart_sum(&prod)
}

/// I = int phi (omega0 - omega_phi).
pub fn aubin_i<T: Real>(phi: &ScalarField<T>) -> T {
    let rho0 = fubini_study(phi.grid());
    integrate(phi, &rho0) - integrate(phi, &potential_density(phi))
}

/// J = int phi omega0 - 1/2 (int phi omega0 + int phi omega_phi).
pub fn aubin_j<T: Real>(phi: &ScalarField<T>) -> T {
    let rho0 = fubini_study(phi.grid());
    let a = integrate(phi, &rho0);
    let b = integrate(phi, &potential_density(phi));
    a - lit::<T>(0.5) * (a + b)
}

/// J_omega0 = I - J.
pub fn j_omega0<T: Real>(phi: &ScalarField<T>) -> T {
    aubin_i(phi) - aubin_j(phi)
}

/// int psi (omega_phi - omega0), skipping flagged nodes.
fn shift_term<T: Real>(phi: &ScalarField<T>, psi: &[T], mask: Option<&[bool]>) -> T {
    let half = lit::<T>(0.5);
    let lap = phi.laplacian();
    let dens: Vec<T> = match mask {
        Some(m) => lap.iter().zip(m).map(|(&l, &skip)| if skip { T::zero() } else { half * l }).collect(),
        None => lap.iter().map(|&l| half * l).collect(),
    };
    chart_dot(phi, psi, &dens)
}

/// J_alpha for alpha = lambda omega0 + i ddbar psi: lambda J_omega0 + int psi (omega_phi - omega0).
pub fn j_alpha<T: Real>(phi: &ScalarField<T>, lambda: T, psi_shift: &[T]) -> T {
    lambda * j_omega0(phi) + shift_term(phi, psi_shift, None)
}

/// As [`j_alpha`] for a singular shift; nodes flagged in `mask` are left out of the shift integral.
pub fn j_alpha_masked<T: Real>(phi: &ScalarField<T>, lambda: T, psi_shift: &[T], mask: &[bool]) -> T {
    lambda * j_omega0(phi) + shift_term(phi, psi_shift, Some(mask))
}

/// Explicit Mabuchi functional
/// E = int log(omega_phi / (e^h omega0)) omega_phi - J_omega0 + int h omega0.
pub fn mabuchi_e<T: Real>(phi: &ScalarField<T>, h: &ScalarField<T>) -> Result<T, EnergyError> {
    let grid = phi.grid();
    let rho = potential_density(phi);
    if let Some(index) = rho.values().iter().position(|&r| !(r > T::zero())) {
        return Err(EnergyError::NotKahler { index });
    }
    let n = grid.len();
    // the caps carry omega0, so the log density ratio vanishes there
    let integrand: Vec<T> = (0..n)
        .map(|i| {
            let r = rho.values()[i];
            r * ((r / grid.rho0_at(i)).ln() - h.values()[i])
        })
        .collect();
    let log_term = grid.chart_sum(&integrand) - grid.cap_sum(h.values());
    Ok(log_term - j_omega0(phi) + integrate(h, &fubini_study(grid)))
}

fn check_angles<T: Real>(bg: &Background<T>, angles: &[T]) -> Result<(), EnergyError> {
    if angles.len() != bg.n_components() {
        return Err(EnergyError::AngleCount { expected: bg.n_components(), got: angles.len() });
    }
    Ok(())
}

/// J_chi^i with chi^i = lambda_i omega0 + i ddbar log |S_i|^2 (singular nodes masked).
pub fn j_chi<T: Real>(phi: &ScalarField<T>, bg: &Background<T>, i: usize) -> T {
    j_alpha_masked(phi, bg.lambda(i), bg.log_norm(i), bg.singular_mask(i))
}

/// J_{chi_eps}^i with chi_eps^i = lambda_i omega0 + i ddbar log(|S_i|^2 + eps).
pub fn j_chi_eps<T: Real>(phi: &ScalarField<T>, bg: &Background<T>, i: usize, eps: T) -> Result<T, EnergyError> {
    Ok(j_alpha(phi, bg.lambda(i), &bg.log_norm_eps(i, eps)?))
}

/// E_{(1-beta)D} = E + sum_i (1 - beta_i) J_chi^i.
pub fn log_mabuchi<T: Real>(phi: &ScalarField<T>, bg: &Background<T>, angles: &[T]) -> Result<T, EnergyError> {
    check_angles(bg, angles)?;
    let mut e = mabuchi_e(phi, bg.h())?;
    for (i, &b) in angles.iter().enumerate() {
        if b != T::one() {
            e = e + (T::one() - b) * j_chi(phi, bg, i);
        }
    }
    Ok(e)
}

/// E_{eps,(1-beta)D} = E + sum_i (1 - beta_i) J_{chi_eps}^i.
pub fn smoothed_log_mabuchi<T: Real>(
    phi: &ScalarField<T>,
    bg: &Background<T>,
    angles: &[T],
    eps: T,
) -> Result<T, EnergyError> {
    check_angles(bg, angles)?;
    let mut e = mabuchi_e(phi, bg.h())?;
    for (i, &b) in angles.iter().enumerate() {
        if b != T::one() {
            e = e + (T::one() - b) * j_chi_eps(phi, bg, i, eps)?;
        }
    }
    Ok(e)
}

fn check_mu_prime<T: Real>(mu: T, mu_prime: T) -> Result<(), EnergyError> {
    if mu_prime > mu {
        return Err(EnergyError::InvalidAuditAngle { mu: mu.as_f64(), mu_prime: mu_prime.as_f64() });
    }
    Ok(())
}

/// Modified log-Mabuchi functional E~ = E_{eps,(1-beta)D} + (mu - mu') J_{omega_{phi_eps}}.
///
/// `mu_prime` is the class weight of the audited angle; for a single
/// component of weight 1 it is the angle beta' itself.
pub fn modified_log_mabuchi<T: Real>(
    phi: &ScalarField<T>,
    bg: &Background<T>,
    angles: &[T],
    mu_prime: T,
    eps: T,
    phi_eps: &ScalarField<T>,
) -> Result<T, EnergyError> {
    let mu = bg.mu(angles);
    check_mu_prime(mu, mu_prime)?;
    let base = smoothed_log_mabuchi(phi, bg, angles, eps)?;
    Ok(base + (mu - mu_prime) * j_alpha(phi, T::one(), phi_eps.values()))
}

/// C with E~ >= (mu - mu') J_omega0 - C:
/// C = 2 V (mu - mu') |phi_eps|_inf + sum_i (1 - beta_i) (V sup log(|S_i|^2 + 1) - int log |S_i|^2 omega0).
pub fn coercivity_constant<T: Real>(
    bg: &Background<T>,
    angles: &[T],
    mu_prime: T,
    phi_eps: &ScalarField<T>,
) -> Result<T, EnergyError> {
    check_angles(bg, angles)?;
    let mu = bg.mu(angles);
    check_mu_prime(mu, mu_prime)?;
    let grid = bg.grid();
    let rho0 = fubini_study(grid);
    let vol = rho0.total_mass();
    let two = lit::<T>(2.0);
    let mut c = two * vol * (mu - mu_prime) * phi_eps.sup_norm();
    for (i, &b) in angles.iter().enumerate() {
        if b == T::one() {
            continue;
        }
        let sup = max_of(&bg.log_norm_eps(i, T::one())?);
        let logs = bg.log_norm(i);
        let mask = bg.singular_mask(i);
        let vals: Vec<T> = (0..grid.len())
            .map(|k| if mask[k] { T::zero() } else { logs[k] * grid.rho0_at(k) })
            .collect();
        let int_log = grid.chart_sum(&vals) + grid.cap_sum(logs);
        c = c + (T::one() - b) * (vol * sup - int_log);
    }
    Ok(c)
}

/// Every functional at one potential. Vectors indexed like `mu_primes` or like the components.
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionalReport<T> {
    pub eps: T,
    pub angles: Vec<T>,
    pub mu_primes: Vec<T>,
    pub i: T,
    pub j: T,
    pub j_omega0: T,
    pub e: T,
    pub e_log_d: T,
    pub e_log_d_eps: T,
    pub e_modified: Vec<T>,
    pub j_chi_eps: Vec<T>,
    pub j_omega_phi_eps: T,
    pub coercivity_c: Vec<T>,
}

pub fn functional_report<T: Real>(
    phi: &ScalarField<T>,
    bg: &Background<T>,
    angles: &[T],
    eps: T,
    phi_eps: &ScalarField<T>,
    mu_primes: &[T],
) -> Result<FunctionalReport<T>, EnergyError> {
    check_angles(bg, angles)?;
    let mu = bg.mu(angles);
    let e = mabuchi_e(phi, bg.h())?;
    let j_chi_eps = (0..angles.len()).map(|i| j_chi_eps(phi, bg, i, eps)).collect::<Result<Vec<_>, _>>()?;
    let mut e_log_d = e;
    let mut e_log_d_eps = e;
    for (i, &b) in angles.iter().enumerate() {
        e_log_d = e_log_d + (T::one() - b) * j_chi(phi, bg, i);
        e_log_d_eps = e_log_d_eps + (T::one() - b) * j_chi_eps[i];
    }
    let j_omega_phi_eps = j_alpha(phi, T::one(), phi_eps.values());
    let mut e_modified = Vec::with_capacity(mu_primes.len());
    let mut coercivity_c = Vec::with_capacity(mu_primes.len());
    for &mp in mu_primes {
        check_mu_prime(mu, mp)?;
        e_modified.push(e_log_d_eps + (mu - mp) * j_omega_phi_eps);
        coercivity_c.push(coercivity_constant(bg, angles, mp, phi_eps)?);
    }
    Ok(FunctionalReport {
        eps,
        angles: angles.to_vec(),
        mu_primes: mu_primes.to_vec(),
        i: aubin_i(phi),
        j: aubin_j(phi),
        j_omega0: j_omega0(phi),
        e,
        e_log_d,
        e_log_d_eps,
        e_modified,
        j_chi_eps,
        j_omega_phi_eps,
        coercivity_c,
    })
}
