//! Great-circle distances and geographic nearest neighbours.
//!
//! cargo run --example geo_neighbors

use crossview::datasets::Coordinate;
use crossview::geo::{geo_topk, haversine_distance, GeoConfig};

fn main() -> crossview::Result<()> {
    let places = [
        ("Berlin", 52.5200, 13.4050),
        ("Hamburg", 53.5511, 9.9937),
        ("Munich", 48.1351, 11.5820),
        ("Vienna", 48.2082, 16.3738),
        ("Prague", 50.0755, 14.4378),
        ("Zurich", 47.3769, 8.5417),
    ];
    let coords = places
        .iter()
        .map(|&(_, lat, lon)| Coordinate::wgs84(lat, lon))
        .collect::<crossview::Result<Vec<_>>>()?;
    let geo = GeoConfig::default();

    let d = haversine_distance(&coords[0], &coords[2], &geo)?;
    println!("Berlin to Munich: {:.1} km", d / 1000.0);

    for pool in geo_topk(&coords, &coords, 2, &geo)? {
        let names: Vec<String> = pool
            .neighbor_indices
            .iter()
            .zip(&pool.scores)
            .map(|(&j, &m)| format!("{} ({:.0} km)", places[j].0, m / 1000.0))
            .collect();
        println!("{:<8} -> {}", places[pool.anchor_index].0, names.join(", "));
    }
    Ok(())
}
