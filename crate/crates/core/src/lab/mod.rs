//! Monte Carlo estimation of moment and almost-sure Lyapunov exponents, and
//! executable checks of the truncation lemmas and the one-step contraction.

mod fit;
mod lemmas;
mod monte_carlo;
mod quadrature;

pub use fit::{default_window, fit_exponent, ExponentFit, MIN_FIT_POINTS};
pub use lemmas::{
    verify_lemma_global_lipschitz, verify_lemma_lambda_preserved, LambdaLemmaReport,
    LipschitzLemmaReport, PairCase, LAMBDA_SLACK, LIPSCHITZ_SLACK,
};
pub use monte_carlo::{
    compare_schemes, estimate_as_exponent, estimate_moment_curve, run_ensemble, AsExponentSummary,
    CompareSummary, Ensemble, EnsembleSpec, MomentEstimate, PathSummary, DEFAULT_FLOOR,
};
pub use quadrature::{one_step_contraction, one_step_moment_ratio, ContractionCheck};
