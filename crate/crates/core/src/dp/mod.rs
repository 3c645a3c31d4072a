//! DP-SGD mechanics and the Rényi-DP accountant.

mod accountant;
mod mechanics;

pub use accountant::{
    calibrate_sigma, default_orders, epsilon_for, rdp_sgm, rdp_to_epsilon, RdpCurve, SIGMA_BRACKET,
};
pub use mechanics::{clip_per_sample, noisy_update, poisson_sample, ClipOutput, PrivacyParams};
