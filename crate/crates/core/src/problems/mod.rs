//! Test problem families.
//!
//! Each constructor returns an [`Instance`]: the map and set, a starting
//! point, the coordinate groups that own separate stepsizes, and the
//! constants the adaptive rules need.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SviError};
use crate::map::{MapConstants, Problem};
use crate::smoothing::{SmoothedLipschitz, SmoothingKind, SmoothingScheme};
use crate::stepsize::SchemeParams;
use crate::vector::BlockVector;

pub mod bandwidth;
pub mod cournot;
pub mod piecewise;
pub mod quadratic;

/// Certified constants of the smoothed map for one radius vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothedConstants {
    pub eps: Vec<f64>,
    pub msr: SmoothedLipschitz,
    pub mcr: SmoothedLipschitz,
}

#[derive(Clone, Debug)]
pub struct Instance {
    pub name: String,
    pub problem: Problem,
    pub x0: BlockVector,
    /// Coordinate ranges sharing one stepsize sequence (one per agent).
    pub groups: Vec<Range<usize>>,
    /// `eta`, `L` of the unsmoothed map, bounds `C`, and the noise level.
    pub constants: MapConstants,
    /// `max ||x - x0||` bound over the set.
    pub diameter: f64,
    /// Accept `nu >= D` instead of `nu >= D L / sqrt 2` for DASA.
    pub relaxed_nu: bool,
    pub smoothed: Option<SmoothedConstants>,
}

/// Everything a run needs beyond the instance for one smoothing choice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConstants {
    pub eta: f64,
    pub lip: f64,
    pub nu: f64,
    pub diameter: f64,
    pub c: f64,
    pub r: Vec<f64>,
    pub relaxed_nu: bool,
}

impl Instance {
    pub fn smoothing(&self, kind: SmoothingKind) -> Result<SmoothingScheme> {
        match kind {
            SmoothingKind::None => Ok(SmoothingScheme::none()),
            _ => {
                let s = self
                    .smoothed
                    .as_ref()
                    .ok_or_else(|| SviError::param(format!("{} has no smoothing radius configured", self.name)))?;
                Ok(SmoothingScheme {
                    kind,
                    eps: s.eps.clone(),
                })
            }
        }
    }

    /// Lipschitz constant used by the stepsize rules under `kind`.
    pub fn lipschitz(&self, kind: SmoothingKind) -> Result<f64> {
        match kind {
            SmoothingKind::None if self.constants.lip.is_finite() => Ok(self.constants.lip),
            SmoothingKind::None => Err(SviError::param(format!(
                "{} has no finite Lipschitz constant without smoothing",
                self.name
            ))),
            SmoothingKind::Msr | SmoothingKind::Mcr => {
                let s = self
                    .smoothed
                    .as_ref()
                    .ok_or_else(|| SviError::param(format!("{} has no smoothing radius configured", self.name)))?;
                Ok(if kind == SmoothingKind::Msr {
                    s.msr.value
                } else {
                    s.mcr.value
                })
            }
        }
    }

    /// Resolves `L`, `nu`, `c = eta/4` and draws one multiplier per group.
    pub fn resolve<R: Rng + ?Sized>(&self, kind: SmoothingKind, rng: &mut R) -> Result<ResolvedConstants> {
        let eta = self.constants.eta;
        let lip = self.lipschitz(kind)?;
        let d = self.diameter;
        let nu = if self.relaxed_nu {
            self.constants.nu.max(d)
        } else {
            self.constants.nu.max(lip * d / 2f64.sqrt())
        };
        let c = eta / 4.0;
        let proto = SchemeParams::new(eta, lip, nu, d * d).with_dasa(c, vec![], d);
        let r = proto.draw_multipliers(self.groups.len(), rng);
        Ok(ResolvedConstants {
            eta,
            lip,
            nu,
            diameter: d,
            c,
            r,
            relaxed_nu: self.relaxed_nu,
        })
    }
}

impl ResolvedConstants {
    pub fn scheme_params(&self) -> SchemeParams {
        SchemeParams::new(self.eta, self.lip, self.nu, self.diameter * self.diameter)
            .with_dasa(self.c, self.r.clone(), self.diameter)
            .relaxed(self.relaxed_nu)
    }
}

/// Coordinate groups equal to the blocks of `x`.
pub(crate) fn block_groups(x: &BlockVector) -> Vec<Range<usize>> {
    x.layout().ranges().collect()
}
