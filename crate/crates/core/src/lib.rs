//! Rigid nanorotors carrying embedded spins.
//!
//! The crate covers the classical hard-magnet Euler dynamics, the reduced
//! pendulum description of the tennis-racket flip and its spin-induced
//! stabilization, thermal ensembles, and the quantum NV-center spin coupled to
//! the rotation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constants;
pub mod dynamics;
pub mod error;
pub mod inertia;
pub mod meanfield;
pub mod ode;
pub mod orientation;
pub mod pendulum;
pub mod spin;
pub mod thermal;

pub use constants::{PhysicalConstants, DIAMOND_DENSITY, HBAR, K_B, NV_ZERO_FIELD_SPLITTING};
pub use dynamics::{
    alignment, alignment_proxy, euler_angle_rates, euler_rhs, hard_magnet_energy, integrate_body_momentum,
    integrate_hard_magnet, IntegratorSettings, MomentumSeries, Observables, Trajectory, TrajectoryRecord,
};
pub use error::{Error, Result};
pub use inertia::{classify_rotor, ellipsoid_inertia, InertiaSpec, RotorClass};
pub use meanfield::{
    evolve_meanfield, resonance_initial_state, resonance_scan, time_avg_j2, MeanFieldSeries, MeanFieldSettings, ScanRow,
};
pub use orientation::{
    body_angmom_from_euler, euler_to_orientation, momentum_angles, omega_from_j, Orientation, RotorState,
};
pub use pendulum::{
    effective_potential, h_eff_energy, integrate_pendulum, oblate_duality_map, tau_sym, thermal_bound, threshold_asym,
    threshold_sym, turning_point_singamma, PendulumParams, PendulumTrajectory,
};
pub use spin::{
    energy_gaps, evolve_spin_parametric, rwa_effective_spin, rwa_validity, semiclassical_hamiltonian, EffectiveSpin,
    NVConfig, NvCenter, RwaVerdict, SemiclassicalHamiltonian, SpinAmplitudes, SpinSeries, SpinSettings,
};
pub use thermal::{
    ensemble_alignment, fit_gaussian_decay, sample_initial_states, AlignmentObservable, EnsembleSeries, GaussianFit,
    ThermalSpec,
};
