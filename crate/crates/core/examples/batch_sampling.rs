//! Epoch batch plans under each sampling strategy.
//!
//! cargo run --example batch_sampling

use crossview::datasets::{generate_synthetic, SynthConfig};
use crossview::sampler::{build_geo_pools, build_sim_pools, epoch_rng, plan_epoch, should_refresh, SamplerConfig, Strategy};
use crossview::simsearch::l2_normalize;
use crossview::geo::GeoConfig;

fn main() -> crossview::Result<()> {
    let data = generate_synthetic(&SynthConfig {
        n_pairs: 1000,
        ..SynthConfig::default()
    })?;
    let base = SamplerConfig::default();
    let geo_pools = build_geo_pools(&data.manifest, &base, &GeoConfig::default())?;
    let q = l2_normalize(&data.query_features)?;
    let r = l2_normalize(&data.reference_features)?;
    let sim_pools = build_sim_pools(&q, &r, &base)?;

    for strategy in Strategy::ALL {
        let cfg = SamplerConfig { strategy, ..base.clone() };
        for epoch in [0, cfg.gps_epochs] {
            let used = strategy.resolve(epoch, cfg.gps_epochs);
            let pools = match used {
                Strategy::Gps => Some(&geo_pools[..]),
                Strategy::Dss => Some(&sim_pools[..]),
                _ => None,
            };
            let plan = plan_epoch(&data.manifest, pools, &cfg, epoch, &mut epoch_rng(cfg.seed, epoch))?;
            let first = &plan.batches[0];
            let near = pools.map_or(0, |p| {
                p[first[0]].neighbor_indices[..cfg.picks_per_anchor / 2]
                    .iter()
                    .filter(|j| first.contains(j))
                    .count()
            });
            println!(
                "{strategy:<13} epoch {epoch}: uses {used:<6} {} batches, first batch {} pairs, {near} of anchor's nearest {}, refresh {}",
                plan.batches.len(),
                first.len(),
                cfg.picks_per_anchor / 2,
                should_refresh(epoch, &cfg)
            );
        }
    }
    Ok(())
}
