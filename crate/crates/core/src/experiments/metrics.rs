use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};
use crate::models::MfgProblem;
use crate::timedep::SpaceTimeState;

/// Discrete L² distance with cell volume Π spacings.
pub fn l2_error(u: &[f64], v: &[f64], spacings: &[f64]) -> Result<f64> {
    check_len(v, u.len())?;
    let w: f64 = spacings.iter().product();
    let s: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((w * s).sqrt())
}

pub fn linf_error(u: &[f64], v: &[f64]) -> Result<f64> {
    check_len(v, u.len())?;
    Ok(u.iter().zip(v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// The full fields carried by an equilibrium state: (m, u), stacked over
/// every time level 0..=NT for time-dependent problems.
pub fn full_fields(problem: &MfgProblem, z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    match &problem.time {
        None => {
            let n = problem.grid.len();
            check_len(z, 2 * n)?;
            Ok((z[..n].to_vec(), z[n..].to_vec()))
        }
        Some(td) => {
            let y = SpaceTimeState::from_vec(problem, z.to_vec())?;
            let m = (0..=td.slices).flat_map(|k| y.m_full(problem, k).to_vec()).collect();
            let u = (0..=td.slices).flat_map(|k| y.u_full(problem, k).to_vec()).collect();
            Ok((m, u))
        }
    }
}

/// Quadrature spacings for (space-time field, spatial field).
pub fn spacings(problem: &MfgProblem) -> (Vec<f64>, Vec<f64>) {
    let g = &problem.grid;
    let space = vec![g.h(); g.dim()];
    let mut st = space.clone();
    if let Some(td) = &problem.time {
        st.push(td.dt());
    }
    (st, space)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldErrors {
    pub m_l2: f64,
    pub u_l2: f64,
    pub v_l2: f64,
    pub m_linf: f64,
    pub u_linf: f64,
    pub v_linf: f64,
    pub lambda_abs: Option<f64>,
}

/// Errors of a recovered (m, u, V, λ) against the reference, given as full fields.
pub fn field_errors(
    problem: &MfgProblem,
    (m, u, v, lambda): (&[f64], &[f64], &[f64], Option<f64>),
    (m_ref, u_ref, v_ref, lambda_ref): (&[f64], &[f64], &[f64], Option<f64>),
) -> Result<FieldErrors> {
    let (st, sp) = spacings(problem);
    Ok(FieldErrors {
        m_l2: l2_error(m, m_ref, &st)?,
        u_l2: l2_error(u, u_ref, &st)?,
        v_l2: l2_error(v, v_ref, &sp)?,
        m_linf: linf_error(m, m_ref)?,
        u_linf: linf_error(u, u_ref)?,
        v_linf: linf_error(v, v_ref)?,
        lambda_abs: lambda.zip(lambda_ref).map(|(a, b)| (a - b).abs()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l2_weights_by_cell_volume() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [1.0, 1.0, 1.0, 1.0];
        // (0 + 1 + 4 + 9) * 0.5 * 0.25
        assert!((l2_error(&a, &b, &[0.5, 0.25]).unwrap() - (14.0f64 * 0.125).sqrt()).abs() < 1e-15);
        assert_eq!(l2_error(&a, &a, &[0.1]).unwrap(), 0.0);
        assert_eq!(linf_error(&a, &b).unwrap(), 3.0);
        assert!(l2_error(&a, &b[..3], &[1.0]).is_err());
    }
}
