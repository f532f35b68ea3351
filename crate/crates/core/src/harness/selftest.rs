//! Loopback checks over an ideal channel.

use rayon::prelude::*;

use crate::channel::{ChannelConfig, ChannelModel, ImpairmentConfig};
use crate::coding::MAX_MCS;
use crate::error::Result;
use crate::evaluator::pool;
use crate::grid::Allocation;
use crate::link::{LinkScenario, LinkSimulator};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelftestCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SelftestReport {
    pub checks: Vec<SelftestCheck>,
}

impl SelftestReport {
    pub fn all_passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn render(&self) -> String {
        let mut s: String = self
            .checks
            .iter()
            .map(|c| {
                format!(
                    "{} {} {}\n",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                )
            })
            .collect();
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        s.push_str(&format!("{} checks, {failed} failed\n", self.checks.len()));
        s
    }
}

/// Allocation widths exercised by the loopback.
pub const LOOPBACK_WIDTHS: [usize; 3] = [1, 2, 6];

/// Every MCS on 1, 2 and 6 sub-channels, `n_subframes` each, with no
/// fading, noise or impairments. A check passes when every block is
/// decoded with the exact payload and SCI.
pub fn run_selftest(n_subframes: usize, workers: usize) -> Result<SelftestReport> {
    let cases: Vec<(u8, usize)> = (0..=MAX_MCS)
        .flat_map(|m| LOOPBACK_WIDTHS.iter().map(move |&w| (m, w)))
        .collect();
    let checks = pool(workers)?.install(|| {
        cases
            .par_iter()
            .map(|&(mcs, width)| -> Result<SelftestCheck> {
                let base = LinkScenario::default();
                // Walk the start position so every sub-channel gets used.
                let start = usize::from(mcs) % (base.grid.n_subchannels - width + 1);
                let sc = LinkScenario {
                    channel: ChannelConfig::with_model(ChannelModel::Ideal),
                    impairments: ImpairmentConfig::none(),
                    allocation: Allocation::new(start, width),
                    ..base
                };
                let sim = LinkSimulator::new(sc)?;
                let out = sim.run_blocks(
                    u64::from(mcs) << 8 | width as u64,
                    mcs,
                    &[0.0],
                    0,
                    n_subframes,
                )?;
                let failures = out[0].iter().filter(|o| !o.success).count();
                Ok(SelftestCheck {
                    name: format!("loopback mcs={mcs} alloc={start}+{width}"),
                    passed: failures == 0,
                    detail: format!("{failures}/{n_subframes} block errors"),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(SelftestReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_selftest_passes() {
        let r = run_selftest(2, 1).unwrap();
        assert_eq!(r.checks.len(), 29 * 3);
        assert!(r.all_passed(), "{}", r.render());
        assert!(r.render().ends_with("87 checks, 0 failed\n"));
    }
}
