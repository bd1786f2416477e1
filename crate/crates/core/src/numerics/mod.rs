//! Special functions, quantile-based Gamma/Dirichlet sampling and the
//! pathwise derivative of Dirichlet samples with respect to the
//! concentration scale.

mod dirichlet;
mod noise;
mod special;

pub use dirichlet::{
    dirichlet_component_variance, dirichlet_mean, dirichlet_sample,
    sample_derivative_wrt_beta, sample_with_beta_derivative, ConcentrationVector,
    ProbabilityVector, EPSILON_CLIP, SIMPLEX_TOLERANCE,
};
pub use noise::{derive_stream, id_hash, UniformNoiseBlock};
pub use special::{
    gamma_quantile, log_gamma, reg_inc_gamma_p, reg_inc_gamma_q, QUANTILE_FLOOR,
};

/// Shortest round-trip text for a float. Plain decimals as usual, switching
/// to exponent form for magnitudes where positional output gets hundreds of
/// digits long.
pub fn format_float(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-5..1e16).contains(&a) {
        format!("{x:e}")
    } else {
        x.to_string()
    }
}
