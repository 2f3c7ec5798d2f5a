use entlink::pipeline::run;
use entlink::scenario::preset;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let name = args.get(1).map(String::as_str).unwrap_or("initial");
    let pulses: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1_000_000);
    let noise: Option<f64> = args.get(3).and_then(|s| s.parse().ok());
    let mut sc = preset(name).unwrap();
    if let Some(nf) = noise {
        sc.source.state_noise_fraction = nf;
    }
    if let Some(rate) = args.get(4).and_then(|s| s.parse::<f64>().ok()) {
        for st in &mut sc.stages {
            if let entlink::scenario::ChannelStage::Qfc(q) = &mut st.stage {
                if matches!(q.direction, entlink::channel::QfcDirection::Up) {
                    q.noise_rate_hz = rate;
                }
            }
        }
    }
    if let Some(seed) = args.get(5).and_then(|s| s.parse::<u64>().ok()) {
        sc.master_seed = seed;
    }
    let t0 = std::time::Instant::now();
    let out = run(&sc, pulses).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!("=== {name} @ {pulses} pulses (wall {dt:.1} s) ===");
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
}
