//! Box growth driver.

use super::{
    build_generator, stationary_direct, CtmcError, LatticeState, RateModel, TruncatedDistribution,
    TruncationBox,
};
use crate::models::Stability;

/// Scalar summary of a solved table (a mean, an empty probability, a log of
/// one...). Convergence of the truncation is judged on these.
pub type Functional<'a> = &'a dyn Fn(&TruncatedDistribution) -> f64;

/// An axis is grown only while its outer face holds at least this fraction of `tol`.
const FACE_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, Copy)]
pub struct TruncationOptions {
    /// Bound on the boundary mass and on the change of every functional
    /// between successive boxes, relative to `max(1, |value|)`.
    pub tol: f64,
    /// Per-axis growth factor between successive boxes.
    pub growth: f64,
    /// Largest number of box states the driver may solve.
    pub max_states: usize,
    /// First box; defaults to the model's hint.
    pub initial: Option<TruncationBox>,
}

impl Default for TruncationOptions {
    fn default() -> Self {
        TruncationOptions {
            tol: 1e-8,
            growth: 1.25,
            max_states: 1 << 20,
            initial: None,
        }
    }
}

impl TruncationOptions {
    pub fn with_tol(tol: f64) -> Self {
        TruncationOptions {
            tol,
            ..Default::default()
        }
    }
}

fn close(prev: &[f64], cur: &[f64], tol: f64) -> bool {
    prev.iter()
        .zip(cur)
        .all(|(p, c)| (c - p).abs() <= tol * c.abs().max(1.0))
}

fn grow(n: u32, factor: f64) -> u32 {
    ((n as f64 * factor).ceil() as u32).max(n + 4)
}

/// Solve `model` on successively larger boxes until every functional moves by
/// less than `tol` between two boxes and the boundary mass is below `tol`.
///
/// Models that declare themselves null recurrent or transient are refused up
/// front; otherwise the driver gives up once the next box would exceed
/// `max_states`, reporting the last two sets of functional values.
pub fn adapt_truncation<M>(
    model: &M,
    functionals: &[Functional<'_>],
    opts: &TruncationOptions,
) -> Result<(TruncationBox, TruncatedDistribution), CtmcError>
where
    M: RateModel<State = LatticeState> + ?Sized,
{
    assert!(opts.tol > 0.0 && opts.growth > 1.0);
    if let Some(stability) = model.stability() {
        if stability != Stability::PositiveRecurrent {
            return Err(CtmcError::NotPositiveRecurrent {
                tag: model.tag(),
                stability,
            });
        }
    }

    let mut bx = opts
        .initial
        .or_else(|| model.box_hint(opts.tol))
        .unwrap_or(TruncationBox::new(16, 16));
    let mut previous: Vec<f64> = Vec::new();
    let mut last: Option<(Vec<f64>, TruncationBox, f64)> = None;

    loop {
        if bx.len() > opts.max_states {
            let (values, last_box, boundary_mass) =
                last.unwrap_or((Vec::new(), bx, f64::NAN));
            return Err(CtmcError::TruncationFailure {
                cap: opts.max_states,
                last_box,
                previous,
                last: values,
                boundary_mass,
            });
        }
        let gen = build_generator(model, bx)?;
        let dist = stationary_direct(&gen)?;
        let values: Vec<f64> = functionals.iter().map(|f| f(&dist)).collect();
        if let Some((prev, _, _)) = &last {
            if dist.boundary_mass() < opts.tol && close(prev, &values, opts.tol) {
                return Ok((bx, dist));
            }
        }

        let face = dist.face_mass();
        let mut g1 = bx.n1_max > 0 && face[0] >= opts.tol * FACE_FRACTION;
        let mut g2 = bx.n2_max > 0 && face[1] >= opts.tol * FACE_FRACTION;
        if !g1 && !g2 {
            g1 = bx.n1_max > 0;
            g2 = bx.n2_max > 0;
        }
        let next = TruncationBox {
            n1_max: if g1 { grow(bx.n1_max, opts.growth) } else { bx.n1_max },
            n2_max: if g2 { grow(bx.n2_max, opts.growth) } else { bx.n2_max },
            offset2: bx.offset2,
        };
        if let Some((prev, _, _)) = last.take() {
            previous = prev;
        }
        last = Some((values, bx, dist.boundary_mass()));
        bx = next;
    }
}
