use std::fmt;

use serde::Serialize;

use super::rates::{alpha, beta_rate};
use super::{CouplingParams, ModelError};
use crate::ctmc::RateModel;

/// State `(y1, y1', y2)` of the joint chain; invariant `y1' >= y1 >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct JointState {
    pub y1: i64,
    pub y1p: i64,
    pub y2: i64,
}

impl JointState {
    pub fn new(y1: i64, y1p: i64, y2: i64) -> Self {
        JointState { y1, y1p, y2 }
    }

    pub fn in_domain(&self) -> bool {
        self.y1 >= 0 && self.y1p >= self.y1 && self.y2 >= 0
    }
}

impl fmt::Display for JointState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.y1, self.y1p, self.y2)
    }
}

/// Joint chain of `(Y1, Y1', Y2)` sharing the class-2 process. Above the
/// threshold only `Y1` is served; at or below it, departures of `Y1` drag
/// `Y1'` along and `Y1'` has an extra lone departure stream at
/// `mu beta_{y1' - y1}(y1)`, so that its total service is `mu alpha(y1')`.
#[derive(Debug, Clone, Copy)]
pub struct JointModel {
    pub coupling: CouplingParams,
}

pub fn joint_rates(c: CouplingParams) -> JointModel {
    JointModel { coupling: c }
}

impl RateModel for JointModel {
    type State = JointState;

    fn transitions(
        &self,
        s: &JointState,
        out: &mut Vec<(JointState, f64)>,
    ) -> Result<(), ModelError> {
        if !s.in_domain() {
            return Err(ModelError::Domain(format!(
                "joint state {s} violates y1' >= y1 >= 0, y2 >= 0"
            )));
        }
        let p = &self.coupling.base;
        let ell = self.coupling.ell;
        let JointState { y1, y1p, y2 } = *s;
        out.push((JointState::new(y1, y1p, y2 + 1), p.lambda_tot()));
        if y2 > 0 {
            out.push((JointState::new(y1, y1p, y2 - 1), p.theta * y2 as f64));
        }
        out.push((JointState::new(y1 + 1, y1p + 1, y2), p.lambda1));
        let served = p.mu * alpha(y1 as u64, ell);
        if (y2 as u64) <= ell {
            if y1 > 0 {
                out.push((JointState::new(y1 - 1, y1p - 1, y2), served));
            }
            if y1p > y1 {
                let lone = p.mu * beta_rate((y1p - y1) as u64, y1 as u64, ell);
                out.push((JointState::new(y1, y1p - 1, y2), lone));
            }
        } else if y1 > 0 {
            out.push((JointState::new(y1 - 1, y1p, y2), served));
        }
        Ok(())
    }

    fn tag(&self) -> String {
        let p = &self.coupling.base;
        format!(
            "joint(lambda1={}, lambda_tot={}, mu={}, theta={}, ell={})",
            p.lambda1,
            p.lambda_tot(),
            p.mu,
            p.theta,
            self.coupling.ell
        )
    }
}
