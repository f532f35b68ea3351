//! Statistical receiver properties that need many subframes.

use ltev_core::channel::{ChannelConfig, ChannelModel, ImpairmentConfig, PowerCalibration};
use ltev_core::evaluator::{crossing_power, DEFAULT_BLER_FLOOR};
use ltev_core::grid::{GridConfig, SubframeGrid};
use ltev_core::link::{LinkScenario, LinkSimulator};
use ltev_core::phy_rx::{decode_pssch, receive_grid, EqualizedGrid, Equalizer, RxOptions};
use ltev_core::phy_tx::{LinkIds, OfdmConfig, Sci};
use ltev_core::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn noise_grid(cfg: &GridConfig, rng: &mut ChaCha8Rng) -> SubframeGrid {
    let mut g = SubframeGrid::for_config(cfg);
    for c in g.cells_mut() {
        let (re, im): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        *c = Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2;
    }
    g
}

#[test]
fn blind_detection_false_alarms_on_pure_noise() {
    // White noise through a unitary FFT is white with the same variance,
    // so noise grids are drawn directly in the frequency domain.
    let cfg = GridConfig::default();
    let ofdm = OfdmConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0xFA);
    let n = 100_000u32;
    let mut subframes_with_alarm = 0u32;
    let mut detections = 0usize;
    for i in 0..n {
        let g = noise_grid(&cfg, &mut rng);
        let rx = receive_grid(
            g,
            &cfg,
            &ofdm,
            LinkIds::new(1, i % 1024),
            &RxOptions::default(),
        )
        .unwrap();
        assert_eq!(rx.blocks.len(), rx.detected_scis.len());
        detections += rx.detected_scis.len();
        subframes_with_alarm += u32::from(!rx.detected_scis.is_empty());
    }
    let per_subframe = f64::from(subframes_with_alarm) / f64::from(n);
    let per_subchannel = detections as f64 / (f64::from(n) * cfg.n_subchannels as f64);
    println!(
        "false alarms: {subframes_with_alarm}/{n} subframes, {per_subchannel:.2e} per sub-channel"
    );
    assert!(per_subframe <= 1e-3, "{per_subframe}");
    // CRC-16 gives 2^-16 per sub-channel; allow 3 sigma of Poisson spread.
    let bound = 2f64.powi(-16) * f64::from(n) * cfg.n_subchannels as f64;
    assert!(
        (detections as f64) <= bound + 3.0 * bound.sqrt(),
        "{detections} vs {bound}"
    );
}

#[test]
fn garbage_grids_never_pass_the_pssch_crc() {
    let cfg = GridConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6A);
    let mut passes = 0;
    for i in 0..3000u32 {
        let mcs = (i % 29) as u8;
        let width = 1 + (i % 6) as u8;
        let start = (i as usize / 6) % (7 - usize::from(width));
        let sci = Sci::new(mcs, width, 0, 0).unwrap();
        let eq = EqualizedGrid::from_grid(noise_grid(&cfg, &mut rng), 1.0);
        let d = decode_pssch(&eq, &cfg, &sci, start, LinkIds::new(3, i));
        passes += usize::from(d.crc_pass);
    }
    // The CRC-24 bound makes even one pass in 3000 a ~2e-4 event.
    assert_eq!(passes, 0);
}

fn awgn_mcs5(cfo_hz: f64, correct: bool) -> LinkSimulator {
    LinkSimulator::new(LinkScenario {
        channel: ChannelConfig::with_model(ChannelModel::Awgn),
        impairments: ImpairmentConfig {
            cfo_hz,
            cfo_enabled: cfo_hz != 0.0,
            ..ImpairmentConfig::none()
        },
        calibration: PowerCalibration {
            gain_offset_db: 0.0,
        },
        rx: RxOptions {
            cfo_correction: correct,
            ..RxOptions::default()
        },
        ..LinkScenario::default()
    })
    .unwrap()
}

// Failure indicators `[power][block]`, same seeds for every simulator.
fn failures(sim: &LinkSimulator, mcs: u8, powers: &[f64], n_blocks: usize) -> Vec<Vec<bool>> {
    sim.run_blocks(0xC0FFEE, mcs, powers, 0, n_blocks)
        .unwrap()
        .into_iter()
        .map(|v| v.into_iter().map(|o| !o.success).collect())
        .collect()
}

fn bler_curve(powers: &[f64], fails: &[Vec<bool>]) -> Vec<(f64, f64)> {
    powers
        .iter()
        .zip(fails)
        .map(|(&p, f)| (p, f.iter().filter(|&&x| x).count() as f64 / f.len() as f64))
        .collect()
}

#[test]
fn cfo_correction_keeps_the_loss_small() {
    let powers: Vec<f64> = (0..13).map(|i| -1.0 + 0.25 * f64::from(i)).collect();
    let n = 3000;
    let base = failures(&awgn_mcs5(0.0, true), 5, &powers, n);
    let fixed = failures(&awgn_mcs5(500.0, true), 5, &powers, n);
    let raw = failures(&awgn_mcs5(500.0, false), 5, &powers, n);
    let cross = |f: &[Vec<bool>]| {
        crossing_power(&bler_curve(&powers, f), 1e-2, DEFAULT_BLER_FLOOR, "mean").unwrap()
    };
    let (p0, p1, p2) = (cross(&base), cross(&fixed), cross(&raw));
    println!("BLER 1e-2 at {p0:.2} dB (no CFO), {p1:.2} dB (corrected), {p2:.2} dB (uncorrected)");
    assert!(p1 - p0 < 1.0, "corrected loss {}", p1 - p0);

    // Paired comparison over every (power, block): blocks lost only
    // without correction must significantly outnumber the reverse.
    let (mut only_raw, mut only_fixed) = (0f64, 0f64);
    for (a, b) in raw.iter().flatten().zip(fixed.iter().flatten()) {
        only_raw += f64::from(u8::from(*a && !*b));
        only_fixed += f64::from(u8::from(*b && !*a));
    }
    let z = (only_raw - only_fixed) / (only_raw + only_fixed).sqrt();
    println!("discordant blocks: {only_raw} lost only uncorrected, {only_fixed} only corrected, z = {z:.1}");
    assert!(z > 1.645);
    assert!(p2 > p1);
}

#[test]
fn mmse_is_no_worse_than_zero_forcing_in_fading() {
    let sim = |eq| {
        LinkSimulator::new(LinkScenario {
            channel: ChannelConfig::with_model(ChannelModel::RayleighTdl),
            impairments: ImpairmentConfig::none(),
            calibration: PowerCalibration {
                gain_offset_db: 0.0,
            },
            rx: RxOptions {
                equalizer: eq,
                ..RxOptions::default()
            },
            block_interval: 20,
            ..LinkScenario::default()
        })
        .unwrap()
    };
    let powers = [8.0, 12.0, 16.0];
    let n = 1500;
    let mmse = failures(&sim(Equalizer::Mmse), 10, &powers, n);
    let zf = failures(&sim(Equalizer::ZeroForcing), 10, &powers, n);
    let (mut only_zf, mut only_mmse) = (0f64, 0f64);
    for (z, m) in zf.iter().flatten().zip(mmse.iter().flatten()) {
        only_zf += f64::from(u8::from(*z && !*m));
        only_mmse += f64::from(u8::from(*m && !*z));
    }
    println!("MMSE {:?}", bler_curve(&powers, &mmse));
    println!("ZF   {:?}", bler_curve(&powers, &zf));
    println!("discordant: {only_zf} lost only by ZF, {only_mmse} only by MMSE");
    // One-sided sign test: MMSE is not worse at 95% confidence.
    assert!(only_mmse - only_zf <= 1.645 * (only_mmse + only_zf).max(1.0).sqrt());
    assert!(only_zf >= only_mmse);
}

#[test]
fn awgn_bler_is_monotone_in_power() {
    let powers: Vec<f64> = (0..12).map(|i| -3.0 + 0.5 * f64::from(i)).collect();
    let n = 1500;
    let curve = bler_curve(&powers, &failures(&awgn_mcs5(0.0, true), 5, &powers, n));
    println!("{curve:?}");
    for w in curve.windows(2) {
        let ((_, a), (_, b)) = (w[0], w[1]);
        let sigma = ((a * (1.0 - a) + b * (1.0 - b)) / n as f64).sqrt();
        assert!(b <= a + 2.0 * sigma, "{curve:?}");
    }
    assert!(
        curve[0].1 > 0.5 && curve.last().unwrap().1 < 0.05,
        "{curve:?}"
    );
}
