//! End-to-end acceptance criteria. Runs as a plain binary so every
//! criterion prints one PASS/FAIL line even when the output is not
//! captured; the process fails if any criterion fails.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use ltev_core::channel::{
    ChannelConfig, ChannelModel, FadingChannel, ImpairmentConfig, PowerCalibration, Tap,
};
use ltev_core::evaluator::{
    backoff_db, bler_stats, run_bler_sweep, run_throughput_sweep, SweepPlan,
};
use ltev_core::harness::{self, ExperimentConfig, SelftestReport, RAW_FILE, SPS_FILE, STATS_FILE};
use ltev_core::link::{derive_stream, uncoded_qpsk_ber, LinkScenario, LinkSimulator};
use ltev_core::mac_sps::{
    collision_rate, Network, NetworkConfig, PolicyKind, PoolConfig, ThresholdTable,
};
use ltev_core::phy_tx::OfdmConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::erf::erfc;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn awgn_link(impairments: ImpairmentConfig) -> LinkScenario {
    LinkScenario {
        channel: ChannelConfig::with_model(ChannelModel::Awgn),
        impairments,
        ..LinkScenario::default()
    }
}

// Index of the first swept power whose value is below `level`.
fn first_below(curve: &[(f64, f64)], level: f64) -> Option<f64> {
    curve.iter().find(|(_, b)| *b < level).map(|(p, _)| *p)
}

fn loopback() -> Outcome {
    let r: SelftestReport = harness::run_selftest(200, 0).map_err(|e| e.to_string())?;
    let failed: Vec<&str> = r
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name.as_str())
        .collect();
    check(
        r.all_passed(),
        format!(
            "{} configurations x 200 subframes, failed: {failed:?}",
            r.checks.len()
        ),
    )
}

// Q(x) = erfc(x / sqrt 2) / 2.
fn q_func(x: f64) -> f64 {
    0.5 * erfc(x / 2f64.sqrt())
}

fn theory_ber(ebn0_db: f64) -> f64 {
    q_func((2.0 * 10f64.powf(ebn0_db / 10.0)).sqrt())
}

// Eb/N0 at which the theoretical curve reaches `ber`, by bisection.
fn theory_ebn0_db(ber: f64) -> f64 {
    let (mut lo, mut hi) = (-20.0, 20.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if theory_ber(mid) > ber {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn awgn_sanity() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut points = Vec::new();
    for i in 0..=14 {
        let ebn0 = -1.0 + 0.5 * f64::from(i);
        let (err, bits) =
            uncoded_qpsk_ber(ebn0, 400, 0xB0 + i as u64).map_err(|e| e.to_string())?;
        let ber = err as f64 / bits as f64;
        if !(1e-3..=1e-1).contains(&ber) {
            continue;
        }
        let gap = ebn0 - theory_ebn0_db(ber);
        worst = worst.max(gap.abs());
        points.push((ebn0, ber));
    }
    if points.len() < 8 {
        return Err(format!("only {} points in the BER range", points.len()));
    }

    // Coded MCS 0 against uncoded QPSK at the same per-RE SNR: the
    // uncoded block fails if any of its information bits does.
    let scenario = LinkScenario {
        calibration: PowerCalibration {
            gain_offset_db: 0.0,
        },
        ..awgn_link(ImpairmentConfig::none())
    };
    let sim = LinkSimulator::new(scenario.clone()).map_err(|e| e.to_string())?;
    let tb = sim.tb_bits(0).map_err(|e| e.to_string())? as f64;
    let powers = [-4.0, -2.0, 0.0, 2.0];
    let out = sim
        .run_blocks(7, 0, &powers, 0, 400)
        .map_err(|e| e.to_string())?;
    let mut coded_better = true;
    let mut pairs = Vec::new();
    for (p, o) in powers.iter().zip(&out) {
        let coded = o.iter().filter(|b| !b.success).count() as f64 / o.len() as f64;
        // Es/N0 per RE, QPSK carries 2 bits per RE.
        let ebn0 = scenario.re_snr_db(*p) - 10.0 * 2f64.log10();
        let uncoded = 1.0 - (1.0 - theory_ber(ebn0)).powf(tb);
        coded_better &= coded < uncoded;
        pairs.push(format!("{p} dB: {coded:.3} < {uncoded:.3}"));
    }
    check(
        worst <= 0.5 && coded_better,
        format!(
            "max BER gap {worst:.3} dB over {} points; MCS 0 BLER coded vs uncoded [{}]",
            points.len(),
            pairs.join(", ")
        ),
    )
}

fn reduced_plan(cfg: &ExperimentConfig, trials: u64, window_blocks: usize) -> SweepPlan {
    SweepPlan {
        trials,
        window_blocks,
        ..cfg.sweep_plan(0)
    }
}

fn mcs_ordering() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.link.channel = ChannelConfig::with_model(ChannelModel::Awgn);
    let sim = LinkSimulator::new(cfg.link.clone()).map_err(|e| e.to_string())?;
    let res = run_bler_sweep(&sim, &reduced_plan(&cfg, 100, 50)).map_err(|e| e.to_string())?;
    let firsts: Vec<Option<f64>> = [0u8, 5, 10, 15]
        .iter()
        .map(|&m| first_below(&res.curve(m, |s| s.mean), 0.1))
        .collect();
    let increasing = firsts.iter().all(Option::is_some)
        && firsts.windows(2).all(|w| w[0].unwrap() < w[1].unwrap());
    check(
        increasing,
        format!("first power with mean BLER < 0.1 per MCS 0/5/10/15: {firsts:?}"),
    )
}

fn dispersion() -> Outcome {
    let cfg = ExperimentConfig::default();
    let sim = LinkSimulator::new(cfg.link.clone()).map_err(|e| e.to_string())?;
    // The default grid ends at 10 dB SNR, below the regime where most
    // windows are error-free, so it is extended upwards.
    let plan = SweepPlan {
        powers_dbm: (0..16).map(|i| -20.0 + 2.0 * f64::from(i)).collect(),
        ..reduced_plan(&cfg, 100, 50)
    };
    let res = run_bler_sweep(&sim, &plan).map_err(|e| e.to_string())?;
    let high: Vec<(f64, u8)> = res
        .stats
        .iter()
        .filter(|r| r.stats.std > r.stats.mean)
        .map(|r| (r.tx_power_dbm, r.mcs))
        .collect();

    let mut awgn = ExperimentConfig::default();
    awgn.link.channel = ChannelConfig::with_model(ChannelModel::Awgn);
    let sim = LinkSimulator::new(awgn.link.clone()).map_err(|e| e.to_string())?;
    let plan = SweepPlan {
        powers_dbm: vec![-20.0],
        ..reduced_plan(&awgn, 100, 50)
    };
    let low = run_bler_sweep(&sim, &plan).map_err(|e| e.to_string())?;
    let low_ok = low.stats.iter().all(|r| r.stats.mean > r.stats.std);
    check(
        !high.is_empty() && low_ok,
        format!(
            "fading points with std > mean: {high:?}; AWGN at -20 dBm mean > std for all MCS: {low_ok}"
        ),
    )
}

fn backoff_property() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.link.block_interval = 5;
    let sim = LinkSimulator::new(cfg.link.clone()).map_err(|e| e.to_string())?;
    let plan = SweepPlan {
        powers_dbm: (0..10).map(|i| -4.0 + 2.0 * f64::from(i)).collect(),
        ..reduced_plan(&cfg, 200, 200)
    };
    let res = run_bler_sweep(&sim, &plan).map_err(|e| e.to_string())?;
    let target = 1e-2;
    let mut ok = true;
    let mut parts = Vec::new();
    for m in [0u8, 5, 10, 15] {
        let mean = res.curve(m, |s| s.mean);
        let q99 = res.curve(m, |s| s.q99);
        let b = backoff_db(&mean, &q99, target);
        // Crossing region: from the last power where the mean curve is
        // still above the target to the first where the q99 curve is below.
        let lo = mean
            .iter()
            .rev()
            .find(|(_, v)| *v >= target)
            .map_or(f64::NEG_INFINITY, |x| x.0);
        let hi = q99
            .iter()
            .find(|(_, v)| *v < target)
            .map_or(f64::INFINITY, |x| x.0);
        let above = mean
            .iter()
            .zip(&q99)
            .filter(|((p, _), _)| (lo..=hi).contains(p))
            .all(|((_, a), (_, b))| b >= a);
        match b {
            Ok(d) => {
                ok &= d > 0.0 && d <= 6.0 && above;
                parts.push(format!("MCS {m}: {d:.2} dB, q99 >= mean {above}"));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("MCS {m}: {e}"));
            }
        }
    }
    check(ok, parts.join("; "))
}

fn throughput_shape() -> Outcome {
    let cfg = ExperimentConfig::default();
    let sim = LinkSimulator::new(cfg.link.clone()).map_err(|e| e.to_string())?;
    let plan = SweepPlan {
        powers_dbm: vec![cfg.throughput.tx_power_dbm],
        mcs: cfg.throughput.mcs.clone(),
        ..reduced_plan(&cfg, 10, 50)
    };
    let rows = run_throughput_sweep(&sim, &plan).map_err(|e| e.to_string())?;
    let tp: Vec<f64> = rows.iter().map(|r| r.throughput_bps).collect();
    let (peak_idx, peak) = tp
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::MIN), |a, (i, v)| if v > a.1 { (i, v) } else { a });
    let last = *tp.last().unwrap();
    let interior = peak_idx > 0 && peak_idx < tp.len() - 1 && tp[1] > tp[0];
    check(
        interior && last < 0.2 * peak,
        format!(
            "peak {:.0} kbit/s at MCS {}, MCS 28 at {:.1}% of peak",
            peak / 1e3,
            rows[peak_idx].mcs,
            100.0 * last / peak
        ),
    )
}

fn statistics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let n = rng.gen_range(1..300);
        let xs: Vec<f64> = (0..n)
            .map(|_| {
                if rng.gen_bool(0.3) {
                    0.0
                } else {
                    rng.gen::<f64>()
                }
            })
            .collect();
        let s = bler_stats(&xs).map_err(|e| e.to_string())?;
        let mut sorted = xs.clone();
        sorted.sort_by(f64::total_cmp);
        // Nearest rank: the ceil(0.99 n)-th smallest value.
        let rank = ((0.99 * n as f64).ceil() as usize).max(1);
        let q99 = sorted[rank - 1];
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let exact = s.q99 == q99 && s.n_samples == n;
        let close = (s.mean - mean).abs() <= 1e-12 && (s.std - var.sqrt()).abs() <= 1e-12;
        mismatches += usize::from(!(exact && close));
    }

    // Log-linear curves: mean BLER 10^-(p/5) reaches 1e-2 at p = 10, q99
    // 10^(-(p-4)/5) at p = 14, so the back-off is exactly 4 dB.
    let mean: Vec<(f64, f64)> = (0..=10)
        .map(|i| (2.0 * f64::from(i), 10f64.powf(-0.4 * f64::from(i))))
        .collect();
    let q99: Vec<(f64, f64)> = mean
        .iter()
        .map(|&(p, _)| (p, 10f64.powf(-(p - 4.0) / 5.0).min(1.0)))
        .collect();
    let b1 = backoff_db(&mean, &q99, 1e-2).map_err(|e| e.to_string())?;
    // Between bracketing points (3, 0.5) and (7, 0.005), log10 BLER is
    // linear, so 1e-2 sits at 3 + 4 * (log 0.5 - log 0.01) / (log 0.5 - log 0.005).
    let coarse_mean = [(3.0, 0.5), (7.0, 0.005)];
    let coarse_q99 = [(3.0, 1.0), (9.0, 0.001)];
    let want_mean = 3.0 + 4.0 * (0.5f64.log10() + 2.0) / (0.5f64.log10() - 0.005f64.log10());
    let want_q99 = 3.0 + 6.0 * (2.0 / 3.0);
    let b2 = backoff_db(&coarse_mean, &coarse_q99, 1e-2).map_err(|e| e.to_string())?;
    let err = (b1 - 4.0).abs().max((b2 - (want_q99 - want_mean)).abs());
    check(
        mismatches == 0 && err <= 1e-9,
        format!("{mismatches} mismatching sample sets of 10000; back-off interpolation error {err:.1e} dB"),
    )
}

fn sps_effectiveness() -> Outcome {
    let cfg = ExperimentConfig::default();
    let always = ThresholdTable::from_points(&[(cfg.sps.mcs, -100.0)]);
    let replicas = 10;
    let mut diffs = Vec::new();
    let (mut sum_r, mut sum_s) = (0.0, 0.0);
    for r in 0..replicas {
        let seed = derive_stream(cfg.master_seed, &[0xACC, r]);
        let rate = |policy| -> Result<f64, String> {
            let mut net = Network::new(cfg.network(20, policy, seed), always.clone())
                .map_err(|e| e.to_string())?;
            let log = net.run(10_000).map_err(|e| e.to_string())?;
            collision_rate(&log).map_err(|e| e.to_string())
        };
        let (cr, cs) = (rate(PolicyKind::Random)?, rate(PolicyKind::Sensing)?);
        sum_r += cr;
        sum_s += cs;
        diffs.push(cr - cs);
    }
    let load = cfg.network(20, PolicyKind::Random, 0).load();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let t = mean / (sd / n.sqrt());
    let t_crit = StudentsT::new(0.0, 1.0, n - 1.0)
        .map_err(|e| e.to_string())?
        .inverse_cdf(0.95);

    // Two vehicles on a two-resource pool, one selection each.
    let pool = PoolConfig {
        n_subchannels: 2,
        selection_period_ms: 1,
        sensing_window_ms: 1,
        ..PoolConfig::default()
    };
    let trials = 4000u64;
    let mut collided = 0u64;
    for s in 0..trials {
        let net_cfg = NetworkConfig {
            pool: pool.clone(),
            n_vehicles: 2,
            policy: PolicyKind::Random,
            seed: derive_stream(0x2F2, &[s]),
            ..NetworkConfig::default()
        };
        let mut net = Network::new(net_cfg, always.clone()).map_err(|e| e.to_string())?;
        let recs = net.step().map_err(|e| e.to_string())?;
        collided += u64::from(recs.iter().any(|r| r.collided));
    }
    let p = collided as f64 / trials as f64;
    let sigma = (0.25 / trials as f64).sqrt();
    check(
        (load - 0.5).abs() < 1e-12 && t > t_crit && (p - 0.5).abs() < 3.0 * sigma,
        format!(
            "load {load}: random {:.4} vs sensing {:.4}, paired t = {t:.1} (critical {t_crit:.2}); \
             2-vehicle/2-slot collision rate {p:.4} (1/2 +- {:.4})",
            sum_r / n,
            sum_s / n,
            3.0 * sigma
        ),
    )
}

// J0(x) = (1/pi) * integral over [0, pi] of cos(x sin t), composite Simpson.
fn bessel_j0(x: f64) -> f64 {
    let n = 2000;
    let h = PI / n as f64;
    let f = |t: f64| (x * t.sin()).cos();
    let mut s = f(0.0) + f(PI);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0 / PI
}

fn channel_fidelity() -> Outcome {
    let fs = OfdmConfig::default().sample_rate();
    let flat = |seed: u64| {
        let cfg = ChannelConfig {
            model: ChannelModel::RayleighFlat,
            doppler_hz: 60.0,
            taps: vec![Tap {
                delay_samples: 0,
                power: 1.0,
            }],
            seed,
        };
        FadingChannel::new(&cfg, fs)
    };

    // Independent realisations, magnitude against the unit-power Rayleigh
    // CDF 1 - exp(-r^2).
    let n = 100_000;
    let mut mags: Vec<f64> = (0..n)
        .map(|s| flat(s as u64).tap_gain_at(0, 0.0).norm())
        .collect();
    mags.sort_by(f64::total_cmp);
    let d = mags
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let c = 1.0 - (-r * r).exp();
            (c - i as f64 / n as f64)
                .abs()
                .max(((i + 1) as f64 / n as f64 - c).abs())
        })
        .fold(0.0, f64::max);
    // Asymptotic Kolmogorov critical value at alpha = 0.01.
    let d_crit = 1.6276 / (n as f64).sqrt();

    // Ensemble autocorrelation up to the first zero of J0.
    let fd = 60.0;
    let tau_max = 2.404_825_557_695_773 / (2.0 * PI * fd);
    let channels: Vec<FadingChannel> = (0..4000).map(|s| flat(1_000_000 + s)).collect();
    let mut worst: f64 = 0.0;
    for k in 0..=40 {
        let tau = tau_max * f64::from(k) / 40.0;
        let t = tau * fs;
        let r = channels
            .iter()
            .map(|c| (c.tap_gain_at(0, t) * c.tap_gain_at(0, 0.0).conj()).re)
            .sum::<f64>()
            / channels.len() as f64;
        worst = worst.max((r - bessel_j0(2.0 * PI * fd * tau)).abs());
    }
    check(
        d < d_crit && worst <= 0.05,
        format!("KS D = {d:.5} (critical {d_crit:.5}); max |R - J0| = {worst:.4}"),
    )
}

fn determinism() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.sweep.tx_power_dbm = vec![-14.0, -10.0, -6.0];
    cfg.sweep.trials = 6;
    cfg.sweep.window_blocks = 20;
    cfg.sps.duration_ms = 500;
    cfg.sps.replicas = 4;
    cfg.sps.snr_threshold_db = Some(0.0);
    let dirs: Vec<tempfile::TempDir> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    let run = |dir: &std::path::Path, cfg: &ExperimentConfig, workers| -> Result<(), String> {
        harness::run_bler_sweep_cmd(cfg, dir, workers).map_err(|e| e.to_string())?;
        harness::run_sps_cmd(cfg, dir, workers).map_err(|e| e.to_string())?;
        Ok(())
    };
    run(dirs[0].path(), &cfg, 1)?;
    run(dirs[1].path(), &cfg, 4)?;
    // Replay from the written manifest.
    let replay = ExperimentConfig::from_file(&dirs[0].path().join(harness::MANIFEST_FILE))
        .map_err(|e| e.to_string())?;
    run(dirs[2].path(), &replay, 2)?;
    let mut same = true;
    for f in [STATS_FILE, RAW_FILE, SPS_FILE] {
        let a = std::fs::read(dirs[0].path().join(f)).map_err(|e| e.to_string())?;
        for d in &dirs[1..] {
            same &= std::fs::read(d.path().join(f)).map_err(|e| e.to_string())? == a;
        }
    }
    check(
        same,
        "bler_stats, bler_raw and sps CSVs across workers 1/4 and manifest replay".into(),
    )
}

fn main() {
    type Criterion = (&'static str, Duration, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        ("loopback exactness", Duration::from_secs(60), loopback),
        ("AWGN sanity", Duration::from_secs(120), awgn_sanity),
        ("MCS ordering", Duration::from_secs(300), mcs_ordering),
        ("BLER dispersion", Duration::from_secs(300), dispersion),
        ("back-off", Duration::from_secs(600), backoff_property),
        (
            "throughput shape",
            Duration::from_secs(300),
            throughput_shape,
        ),
        (
            "statistics oracle",
            Duration::from_secs(60),
            statistics_oracle,
        ),
        (
            "SPS effectiveness",
            Duration::from_secs(60),
            sps_effectiveness,
        ),
        (
            "channel fidelity",
            Duration::from_secs(60),
            channel_fidelity,
        ),
        ("determinism", Duration::from_secs(60), determinism),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, budget, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|k| name.contains(k.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = f();
        let took = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) => (took <= *budget, d),
            Err(d) => (false, d),
        };
        failed += usize::from(!ok);
        println!(
            "{} criterion {:>2} {name} ({:.1} s, budget {} s): {detail}",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
