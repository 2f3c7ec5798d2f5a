use entlink::cascade::{sample_pair, Arm, Origin, SourceConfig};
use entlink::channel::{DriftTable, FilterStage};
use entlink::pipeline::{simulate, CascadePairState};
use entlink::rng::{derive_seed, Domain};
use entlink::scenario::{preset, ArmStage, ChannelStage, StageArm};
use entlink::tomography::{james_16, PairStateLookup};
use std::collections::HashMap;

fn main() {
    let pulses: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(10_000_000);
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
    let id = DriftTable::identity();
    let lookup = CascadePairState::new(&source, &id, &id, 0.0, false);

    let xx: HashMap<u64, f64> = streams
        .records_xx
        .iter()
        .filter(|r| r.origin == Origin::Signal && r.arm == Arm::Xx)
        .map(|r| (r.pulse_index, r.timestamp_ps))
        .collect();
    let settings = james_16();
    let mut expected = vec![0.0f64; settings.len()];
    let mut n = 0u64;
    for r in streams.records_x.iter().filter(|r| r.origin == Origin::Signal) {
        let Some(&t_xx) = xx.get(&r.pulse_index) else { continue };
        let m = r.timestamp_ps - t_xx;
        if (0.0..8.0).contains(&m) {
            n += 1;
            for (k, s) in settings.iter().enumerate() {
                expected[k] += lookup.projection(r.pulse_index, s).joint;
            }
        }
    }
    println!("window same-pulse pairs n = {n}");
    for (k, s) in settings.iter().enumerate() {
        println!(
            "  {:?}/{:?} expected = {:.1}",
            s.projector_xx, s.projector_x, expected[k]
        );
    }
}
