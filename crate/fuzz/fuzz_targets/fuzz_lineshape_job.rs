//! Lineshape jobs parsed from arbitrary TOML must be rejected cleanly or
//! produce finite couplings without panicking in the quadrature.

#![no_main]

use libfuzzer_sys::fuzz_target;
use srs_qmetro::config::LineshapeJob;
use srs_qmetro::lineshape::{compute_gamma_srs, compute_h_srs};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(job) = toml::from_str::<LineshapeJob>(text) else {
        return;
    };
    if job.params.validate().is_err() || job.pump.validate().is_err() || job.probe.validate().is_err()
    {
        return;
    }
    // keep the adaptive quadrature budget small under fuzzing
    let bounded = job.params.lines.iter().all(|l| {
        l.omega_line.abs() < 1e6 && l.gamma_line < 1e6 && l.polarizability_sq < 1e6
    }) && job.pump.center_freq.abs() < 1e6
        && job.probe.center_freq.abs() < 1e6
        && job.pump.bandwidth < 1e6
        && job.probe.bandwidth < 1e6;
    if !bounded {
        return;
    }
    if let Ok(gamma) = compute_gamma_srs(&job.params, &job.pump, &job.probe) {
        assert!(gamma.is_finite() && gamma >= 0.0);
    }
    if let Ok(h) = compute_h_srs(&job.params, &job.pump, &job.probe) {
        assert!(h.is_finite());
    }
});
