//! Injects spikes into a station, then shows the Hampel correction and the
//! ReliefF feature ranking computed on the training split.

mod common;

use idsnet::pipeline::prepare_source;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (candidates, _) = common::stations(5);
    let cfg = common::small_config();
    let mut station = candidates[0].clone();
    for i in [400, 1300, 1900] {
        station.power[i] += 25.0;
    }

    let prepared = prepare_source(&station, &cfg)?;
    println!("replaced {} points, e.g.:", prepared.outliers.len());
    for &i in prepared
        .outliers
        .iter()
        .filter(|i| [400, 1300, 1900].contains(*i))
    {
        println!(
            "  t={i:<5} {:>8.3} -> {:.3}",
            station.power[i], prepared.series.power[i]
        );
    }
    if let Some(ranking) = &prepared.ranking {
        println!("feature ranking:");
        for (rank, &j) in ranking.order.iter().enumerate() {
            println!(
                "  {}. {:<14} {:+.4}",
                rank + 1,
                station.feature_names[j],
                ranking.weights[j]
            );
        }
    }
    println!("kept: {}", prepared.feature_names().join(", "));
    Ok(())
}
