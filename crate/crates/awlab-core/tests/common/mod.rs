//! Shared fixtures for the integration suites.
#![allow(dead_code)]

use awlab_core::grid::AnnulusGrid;
use awlab_core::model::{project_constraints, PhysicalParams, StateVector};

/// Smooth low-mode state used across the deterministic experiments.
pub fn demo_state(g: &AnnulusGrid, p: &PhysicalParams) -> StateVector {
    let mut s = StateVector::zero(g);
    for i in 0..g.nr {
        for j in 0..g.ntheta {
            let r = g.node_radii[i];
            let th = g.theta(j);
            s.u[[i, j]] = (2.0 * r).sin() * th.cos() + 0.3 * r * r * (2.0 * th).sin();
            s.ut[[i, j]] = 0.5 * (1.5 * r).cos() * th.sin();
        }
    }
    for j in 0..g.ntheta {
        let th = g.theta(j);
        s.v[j] = 0.4 * th.cos() + 0.2 * (3.0 * th).sin();
        s.vt[j] = 0.3 * (2.0 * th).cos();
    }
    project_constraints(&s, p, g)
}

/// Companion state for two-ensemble experiments: same interior content,
/// different membrane data.
pub fn demo_state_shifted(g: &AnnulusGrid, p: &PhysicalParams) -> StateVector {
    let mut s = demo_state(g, p);
    for j in 0..g.ntheta {
        let th = g.theta(j);
        s.v[j] += -0.4 * (2.0 * th).cos() + 0.2 * (3.0 * th).sin();
        s.vt[j] += 0.3 * th.cos() - 0.15 * (4.0 * th).sin();
    }
    project_constraints(&s, p, g)
}
