//! Generates the synthetic benchmark and summarises each station.

use idsnet::synth::benchmark;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let bench = benchmark(7)?;
    println!(
        "{:<10} {:>6} {:>10} {:>10}  features",
        "station", "days", "mean kW", "peak kW"
    );
    for s in bench.candidates.iter().chain([&bench.target]) {
        let mean = s.power.iter().sum::<f64>() / s.len() as f64;
        let peak = s.power.iter().copied().fold(f64::MIN, f64::max);
        let days = (s.timestamps[s.len() - 1] - s.timestamps[0]).num_days() + 1;
        println!(
            "{:<10} {:>6} {:>10.3} {:>10.3}  {}",
            s.station_id,
            days,
            mean,
            peak,
            s.feature_names.join(",")
        );
    }
    Ok(())
}
