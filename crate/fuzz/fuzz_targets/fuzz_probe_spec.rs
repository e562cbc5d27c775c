//! Probe-spec fragments with arbitrary numbers must either be rejected or
//! produce finite budgets and bounded truncation dimensions.

#![no_main]

use libfuzzer_sys::fuzz_target;
use srs_qmetro::states::{dims_for, mean_total_photons, ProbeSpec};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(spec) = toml::from_str::<ProbeSpec>(text) else {
        return;
    };
    if spec.validate().is_err() {
        return;
    }
    let n_tot = mean_total_photons(&spec);
    assert!(n_tot.is_finite() && n_tot >= 0.0);
    if let Ok(dims) = dims_for(&spec, 1e-8, 4096) {
        assert!(dims.joint() <= 4096);
    }
});
