//! Trajectory NLL and maneuver cross-entropy, in two forms: tape-level
//! compositions used by the training loop, and plain-value functions for
//! evaluating already-extracted parameters. A test pins the two routes to
//! each other.

use crate::dataset::ManeuverLabel;
use crate::error::{Error, Result};
use crate::geometry::FramePoint;
use crate::model::{DecodedSeq, GaussStepVars, GaussianSeq, ManeuverPosterior, OutputKind};
use crate::nn::tape::{Tape, Var};

const LN_2PI: f64 = 1.8378770664093453; // ln(2*pi)

/// Negative log density of one Gaussian step on the tape.
pub fn gaussian_nll_step(tape: &mut Tape, step: &GaussStepVars, target: &[f64]) -> Result<Var> {
    let dim = tape.values(step.mu).len();
    if target.len() != dim {
        return Err(Error::shape("nll target", &[dim], &[target.len()]));
    }
    let t = tape.leaf_vector(target.to_vec());
    let d = tape.sub(t, step.mu)?;
    let z = tape.div(d, step.sigma)?;
    let ln_sigma = tape.ln(step.sigma);
    let sum_ln_sigma = tape.sum(ln_sigma);

    match step.rho {
        Some(rho) => {
            // Correlated bivariate form.
            let zx = tape.slice(z, 0, 1)?;
            let zy = tape.slice(z, 1, 1)?;
            let zx2 = tape.mul(zx, zx)?;
            let zy2 = tape.mul(zy, zy)?;
            let cross = tape.mul(zx, zy)?;
            let rho_cross = tape.mul(rho, cross)?;
            let rho2 = tape.mul(rho, rho)?;
            let one = tape.scalar(1.0);
            let omr = tape.sub(one, rho2)?;
            let sum_sq = tape.add(zx2, zy2)?;
            let neg_cross = tape.scale(rho_cross, -2.0);
            let quad = tape.add(sum_sq, neg_cross)?;
            let two_omr = tape.scale(omr, 2.0);
            let mahal = tape.div(quad, two_omr)?;
            let ln_omr = tape.ln(omr);
            let half_ln_omr = tape.scale(ln_omr, 0.5);
            let a = tape.add(sum_ln_sigma, half_ln_omr)?;
            let b = tape.add(a, mahal)?;
            Ok(tape.add_scalar(b, LN_2PI))
        }
        None => {
            // Diagonal form.
            let z2 = tape.mul(z, z)?;
            let sum_z2 = tape.sum(z2);
            let half = tape.scale(sum_z2, 0.5);
            let a = tape.add(sum_ln_sigma, half)?;
            Ok(tape.add_scalar(a, dim as f64 * 0.5 * LN_2PI))
        }
    }
}

/// Mean NLL over all decoded steps.
pub fn gaussian_nll_decoded(
    tape: &mut Tape,
    decoded: &DecodedSeq,
    targets: &[Vec<f64>],
) -> Result<Var> {
    if targets.len() != decoded.steps.len() {
        return Err(Error::shape(
            "nll step count",
            &[decoded.steps.len()],
            &[targets.len()],
        ));
    }
    let mut step_losses = Vec::with_capacity(decoded.steps.len());
    for (step, target) in decoded.steps.iter().zip(targets) {
        step_losses.push(gaussian_nll_step(tape, step, target)?);
    }
    let all = tape.concat(&step_losses)?;
    Ok(tape.mean(all))
}

/// Cross-entropy of the two maneuver heads against the labeled classes.
pub fn maneuver_ce_heads(
    tape: &mut Tape,
    p_loc: Var,
    p_acc: Var,
    label: &ManeuverLabel,
) -> Result<Var> {
    let pl = tape.slice(p_loc, label.location.index(), 1)?;
    let pa = tape.slice(p_acc, label.acceleration.index(), 1)?;
    let ln_pl = tape.ln(pl);
    let ln_pa = tape.ln(pa);
    let s = tape.add(ln_pl, ln_pa)?;
    Ok(tape.scale(s, -1.0))
}

/// Plain-value Gaussian NLL of a sequence against ground-truth future
/// points: mean over timesteps of the negative log density. Bivariate
/// parameters are scored against Cartesian (dx, dy) targets, trivariate
/// against (r, phi, v_r).
pub fn gaussian_nll(seq: &GaussianSeq, targets: &[FramePoint]) -> Result<f64> {
    if seq.len() != targets.len() {
        return Err(Error::shape("gaussian_nll length", &[seq.len()], &[targets.len()]));
    }
    if seq.is_empty() {
        return Err(Error::InvalidInput("empty Gaussian sequence".into()));
    }
    let mut total = 0.0;
    match seq {
        GaussianSeq::Bivariate(steps) => {
            for (s, t) in steps.iter().zip(targets) {
                if s.sigma_x <= 0.0 || s.sigma_y <= 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "non-positive sigma ({}, {})",
                        s.sigma_x, s.sigma_y
                    )));
                }
                if s.rho.abs() >= 1.0 {
                    return Err(Error::InvalidInput(format!(
                        "correlation {} outside (-1, 1)",
                        s.rho
                    )));
                }
                let zx = (t.dx - s.mu_x) / s.sigma_x;
                let zy = (t.dy - s.mu_y) / s.sigma_y;
                let omr = 1.0 - s.rho * s.rho;
                total += LN_2PI
                    + s.sigma_x.ln()
                    + s.sigma_y.ln()
                    + 0.5 * omr.ln()
                    + (zx * zx - 2.0 * s.rho * zx * zy + zy * zy) / (2.0 * omr);
            }
        }
        GaussianSeq::Trivariate(steps) => {
            for (s, t) in steps.iter().zip(targets) {
                let sigmas = [s.sigma_r, s.sigma_phi, s.sigma_v];
                if sigmas.iter().any(|v| *v <= 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "non-positive sigma {sigmas:?}"
                    )));
                }
                let zs = [
                    (t.r - s.mu_r) / s.sigma_r,
                    (t.phi - s.mu_phi) / s.sigma_phi,
                    (t.v_r - s.mu_v) / s.sigma_v,
                ];
                total += 1.5 * LN_2PI
                    + sigmas.iter().map(|v| v.ln()).sum::<f64>()
                    + zs.iter().map(|z| 0.5 * z * z).sum::<f64>();
            }
        }
    }
    Ok(total / seq.len() as f64)
}

/// Plain-value maneuver cross-entropy.
pub fn maneuver_ce(post: &ManeuverPosterior, label: &ManeuverLabel) -> f64 {
    -post.p_loc[label.location.index()].ln() - post.p_acc[label.acceleration.index()].ln()
}

/// Coordinate kind a `GaussianSeq` is scored in.
pub fn target_kind(seq: &GaussianSeq) -> OutputKind {
    match seq {
        GaussianSeq::Bivariate(_) => OutputKind::Bivariate,
        GaussianSeq::Trivariate(_) => OutputKind::Trivariate,
    }
}
