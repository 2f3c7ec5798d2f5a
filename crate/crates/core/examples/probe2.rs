use entlink::channel::FilterStage;
use entlink::pipeline::run;
use entlink::scenario::{preset, ArmStage, ChannelStage, StageArm};

fn main() {
    let pulses: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(10_000_000);
    let variant = std::env::args().nth(2).unwrap_or_default();
    let mut sc = preset("initial").unwrap();
    sc.source.state_noise_fraction = 0.0;
    if !variant.contains("nofilter") {
        sc.stages.push(ArmStage {
            arm: StageArm::Xx,
            stage: ChannelStage::Filter(FilterStage {
                bandwidth_ghz: 0.9,
                inhomogeneous_linewidth_ghz: 5.6,
            }),
        });
    }
    if variant.contains("noirf") {
        sc.detector_xx.irf_fwhm_ps = 1e-3;
        sc.detector_x.irf_fwhm_ps = 1e-3;
        sc.detector_xx.dark_rate_hz = 0.0;
        sc.detector_x.dark_rate_hz = 0.0;
    }
    if variant.contains("noxx") {
        sc.source.cascade.t1_xx_ps = 1e-6;
    }
    let out = run(&sc, pulses).unwrap();
    println!("{}", out.summary());
    let w = out.scenario.analysis.zero_delay_window_ps;
    let mut total = 0.0;
    for h in &out.tomography.histograms {
        let c = h.window_counts(0.0, w);
        total += c;
        println!(
            "  {:?}/{:?} window [0,{w}) = {c}",
            h.setting.projector_xx, h.setting.projector_x
        );
    }
    println!("  window total = {total}");
    let rho = &out.tomography.rho_zero.rho;
    println!("rho03 = {:.4} {:+.4}i  |rho03| = {:.4}", rho[(0, 3)].re, rho[(0, 3)].im, rho[(0, 3)].norm());
    println!("rho00 = {:.4}, rho33 = {:.4}", rho[(0, 0)].re, rho[(3, 3)].re);
}
