use entlink::cascade::sample_pair;
use entlink::cascade::{Arm, Origin};
use entlink::channel::FilterStage;
use entlink::pipeline::simulate;
use entlink::cascade::SourceConfig;
use entlink::rng::{derive_seed, Domain};
use entlink::scenario::{preset, ArmStage, ChannelStage, StageArm};
use std::collections::HashMap;

fn main() {
    let pulses: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(4_000_000);
    let mut sc = preset("initial").unwrap();
    sc.source.state_noise_fraction = 0.0;
    sc.detector_xx.irf_fwhm_ps = 1e-3;
    sc.detector_x.irf_fwhm_ps = 1e-3;
    sc.detector_xx.dark_rate_hz = 0.0;
    sc.detector_x.dark_rate_hz = 0.0;
    sc.source.cascade.t1_xx_ps = 1e-6;
    sc.stages.push(ArmStage {
        arm: StageArm::Xx,
        stage: ChannelStage::Filter(FilterStage {
            bandwidth_ghz: 0.9,
            inhomogeneous_linewidth_ghz: 5.6,
        }),
    });
    let streams = simulate(&sc, pulses).unwrap();
    let source = SourceConfig {
        seed: derive_seed(sc.master_seed, Domain::Pairs, 0),
        ..sc.source.clone()
    };

    let xx: HashMap<u64, f64> = streams
        .records_xx
        .iter()
        .filter(|r| r.origin == Origin::Signal && r.arm == Arm::Xx)
        .map(|r| (r.pulse_index, r.timestamp_ps))
        .collect();
    let w = 2.0 * std::f64::consts::PI / 1969.37;
    let (mut re, mut im, mut n) = (0.0, 0.0, 0u64);
    let (mut re_all, mut im_all, mut n_all) = (0.0, 0.0, 0u64);
    let mut mismatch = 0u64;
    for r in streams.records_x.iter().filter(|r| r.origin == Origin::Signal) {
        let Some(&t_xx) = xx.get(&r.pulse_index) else { continue };
        let m = r.timestamp_ps - t_xx;
        let ev = sample_pair(&source, r.pulse_index).expect("record implies a pair");
        let x_true = ev.delay_ps;
        // cross-check the regenerated emission against the record stream:
        // t_x - t_xx(unfiltered) should equal delay exactly (no IRF here)
        if (0.0..8.0).contains(&m) {
            re += (w * x_true).cos();
            im += (w * x_true).sin();
            n += 1;
            if (m - x_true).abs() < 1e-6 {
                mismatch += 1; // filter shift exactly zero would be suspicious
            }
        }
        re_all += (w * x_true).cos();
        im_all += (w * x_true).sin();
        n_all += 1;
    }
    let v = (re * re + im * im).sqrt() / n as f64;
    let arg = im.atan2(re);
    println!("same-pulse matched, window [0,8): n = {n}, |CF| = {v:.4}, arg = {arg:.4}");
    let v2 = (re_all * re_all + im_all * im_all).sqrt() / n_all as f64;
    println!("all same-pulse pairs: n = {n_all}, |CF| = {v2:.4}, arg = {:.4}", im_all.atan2(re_all));
    println!("zero-shift coincidences in window: {mismatch}");
}
