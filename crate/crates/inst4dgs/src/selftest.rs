//! Property suites run by `inst4dgs selftest`.

use inst4dgs_core::checks::{
    dqb_identities, gradient_suite, harden_vs_brute_force, hungarian_oracle, sinkhorn_marginals,
    CheckResult,
};

/// Seeded instances per family.
#[derive(Debug, Clone, Copy)]
pub struct SelftestSizes {
    pub gradients: usize,
    pub sinkhorn: usize,
    pub harden: usize,
    pub hungarian: usize,
    pub dqb: usize,
}

impl Default for SelftestSizes {
    fn default() -> Self {
        SelftestSizes {
            gradients: 20,
            sinkhorn: 1000,
            harden: 100,
            hungarian: 100,
            dqb: 100,
        }
    }
}

pub fn run_selftest(sizes: SelftestSizes) -> Vec<CheckResult> {
    let mut out = gradient_suite(sizes.gradients);
    out.push(sinkhorn_marginals(sizes.sinkhorn));
    out.push(harden_vs_brute_force(sizes.harden));
    out.push(hungarian_oracle(sizes.hungarian));
    out.push(dqb_identities(sizes.dqb));
    out
}

pub fn format_result(r: &CheckResult) -> String {
    format!(
        "{} {:<20} worst {:.3e} tol {:.0e} over {} instances",
        if r.passed() { "ok  " } else { "FAIL" },
        r.name,
        r.worst,
        r.tolerance,
        r.instances
    )
}
