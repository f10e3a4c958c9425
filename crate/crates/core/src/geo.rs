//! Great-circle and planar distances, and exact top-K geographic neighbour
//! search.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{Coordinate, Crs};
use crate::error::{Error, Result};
use crate::simsearch::{NeighborPool, PoolKind};

/// Mean Earth radius (IUGG), metres.
pub const MEAN_EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoConfig {
    pub earth_radius_m: f64,
}

impl Default for GeoConfig {
    fn default() -> Self {
        GeoConfig {
            earth_radius_m: MEAN_EARTH_RADIUS_M,
        }
    }
}

impl GeoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.earth_radius_m > 0.0 && self.earth_radius_m.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidConfig("geo.earth_radius_m must be > 0".into()))
        }
    }
}

/// Haversine great-circle distance in metres between two WGS84 points.
pub fn haversine_distance(p: &Coordinate, q: &Coordinate, cfg: &GeoConfig) -> Result<f64> {
    if p.crs != Crs::Wgs84 || q.crs != Crs::Wgs84 {
        return Err(Error::MixedCrs);
    }
    Ok(haversine_unchecked(p, q, cfg.earth_radius_m))
}

fn haversine_unchecked(p: &Coordinate, q: &Coordinate, radius: f64) -> f64 {
    let (phi1, phi2) = (p.a.to_radians(), q.a.to_radians());
    let half_dphi = (phi2 - phi1) / 2.0;
    let half_dlambda = (q.b - p.b).to_radians() / 2.0;
    let h = half_dphi.sin().powi(2) + phi1.cos() * phi2.cos() * half_dlambda.sin().powi(2);
    // rounding can push h a hair above 1 for antipodal points
    2.0 * radius * h.clamp(0.0, 1.0).sqrt().asin()
}

/// Euclidean distance between two planar (e.g. UTM) points, metres.
pub fn planar_distance(p: &Coordinate, q: &Coordinate) -> Result<f64> {
    if p.crs != Crs::Planar || q.crs != Crs::Planar {
        return Err(Error::MixedCrs);
    }
    Ok((p.a - q.a).hypot(p.b - q.b))
}

/// Distance under whichever CRS both points share.
pub fn distance(p: &Coordinate, q: &Coordinate, cfg: &GeoConfig) -> Result<f64> {
    match (p.crs, q.crs) {
        (Crs::Wgs84, Crs::Wgs84) => Ok(haversine_unchecked(p, q, cfg.earth_radius_m)),
        (Crs::Planar, Crs::Planar) => Ok((p.a - q.a).hypot(p.b - q.b)),
        _ => Err(Error::MixedCrs),
    }
}

pub(crate) fn common_crs<'a>(coords: impl IntoIterator<Item = &'a Coordinate>) -> Result<Option<Crs>> {
    let mut crs = None;
    for c in coords {
        match crs {
            None => crs = Some(c.crs),
            Some(k) if k != c.crs => return Err(Error::MixedCrs),
            _ => {}
        }
    }
    Ok(crs)
}

/// Keeps the `k` smallest `(score, index)` entries under `better`, sorted.
pub(crate) fn select_top<F>(mut scored: Vec<(f64, usize)>, k: usize, better: F) -> Vec<(f64, usize)>
where
    F: Fn(&(f64, usize), &(f64, usize)) -> std::cmp::Ordering,
{
    if k < scored.len() {
        scored.select_nth_unstable_by(k, &better);
        scored.truncate(k);
    }
    scored.sort_unstable_by(&better);
    scored
}

/// For each anchor `i`, the `k` nearest candidates other than candidate `i`,
/// ascending by distance with ties broken by lower candidate index.
pub fn geo_topk(
    anchors: &[Coordinate],
    candidates: &[Coordinate],
    k: usize,
    cfg: &GeoConfig,
) -> Result<Vec<NeighborPool>> {
    cfg.validate()?;
    let max = candidates.len().saturating_sub(1);
    if k == 0 || k > max {
        return Err(Error::KOutOfRange { k, max });
    }
    common_crs(anchors.iter().chain(candidates))?;
    let radius = cfg.earth_radius_m;

    anchors
        .par_iter()
        .enumerate()
        .map(|(i, anchor)| {
            let scored: Vec<(f64, usize)> = candidates
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, c)| {
                    let d = match anchor.crs {
                        Crs::Wgs84 => haversine_unchecked(anchor, c, radius),
                        Crs::Planar => (anchor.a - c.a).hypot(anchor.b - c.b),
                    };
                    (d, j)
                })
                .collect();
            let top = select_top(scored, k, |x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            Ok(NeighborPool {
                anchor_index: i,
                neighbor_indices: top.iter().map(|t| t.1).collect(),
                scores: top.iter().map(|t| t.0).collect(),
                kind: PoolKind::Geographic,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ll(lat: f64, lon: f64) -> Coordinate {
        Coordinate::wgs84(lat, lon).unwrap()
    }

    #[test]
    fn haversine_fixed_values() {
        let cfg = GeoConfig::default();
        let r = MEAN_EARTH_RADIUS_M;
        assert_eq!(haversine_distance(&ll(10.0, 20.0), &ll(10.0, 20.0), &cfg).unwrap(), 0.0);
        let one_deg = haversine_distance(&ll(0.0, 0.0), &ll(0.0, 1.0), &cfg).unwrap();
        assert!((one_deg - std::f64::consts::PI * r / 180.0).abs() / one_deg < 1e-12);
        assert!((one_deg - 111_195.08).abs() < 0.01);
        let half = haversine_distance(&ll(0.0, 0.0), &ll(0.0, 180.0), &cfg).unwrap();
        assert!((half - 20_015_114.4).abs() < 0.1);
    }

    #[test]
    fn mixed_crs_rejected() {
        let cfg = GeoConfig::default();
        let p = Coordinate::planar(0.0, 0.0);
        assert!(matches!(haversine_distance(&p, &ll(0.0, 0.0), &cfg), Err(Error::MixedCrs)));
        assert!(matches!(planar_distance(&p, &ll(0.0, 0.0)), Err(Error::MixedCrs)));
        assert!(geo_topk(&[p, ll(1.0, 1.0)], &[p, ll(1.0, 1.0)], 1, &cfg).is_err());
    }

    #[test]
    fn planar_pythagorean() {
        let d = planar_distance(&Coordinate::planar(0.0, 0.0), &Coordinate::planar(3.0, 4.0));
        assert_eq!(d.unwrap(), 5.0);
    }

    #[test]
    fn planar_matches_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let p = Coordinate::planar(rng.random_range(-1e5..1e5), rng.random_range(-1e5..1e5));
            let q = Coordinate::planar(rng.random_range(-1e5..1e5), rng.random_range(-1e5..1e5));
            let d = planar_distance(&p, &q).unwrap();
            // two-sum style recomputation of the squared length
            let (dx, dy) = (p.a - q.a, p.b - q.b);
            let oracle = (dx.mul_add(dx, dy * dy)).sqrt();
            assert!((d - oracle).abs() <= 1e-12 * oracle.max(1.0));
            assert_eq!(d, planar_distance(&q, &p).unwrap());
        }
    }

    #[test]
    fn collinear_nearest() {
        let pts = [0.0, 1.0, 3.0].map(|x| Coordinate::planar(x, 0.0));
        let pools = geo_topk(&pts, &pts, 1, &GeoConfig::default()).unwrap();
        let nearest: Vec<usize> = pools.iter().map(|p| p.neighbor_indices[0]).collect();
        assert_eq!(nearest, vec![1, 0, 1]);
        assert_eq!(pools[2].scores, vec![2.0]);
    }

    #[test]
    fn equidistant_tie_prefers_lower_index() {
        let pts = [
            Coordinate::planar(0.0, 0.0),
            Coordinate::planar(1.0, 0.0),
            Coordinate::planar(-1.0, 0.0),
        ];
        let pools = geo_topk(&pts, &pts, 2, &GeoConfig::default()).unwrap();
        assert_eq!(pools[0].neighbor_indices, vec![1, 2]);
    }

    #[test]
    fn full_k_is_sorted_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Coordinate> = (0..40)
            .map(|_| ll(rng.random_range(-60.0..60.0), rng.random_range(-170.0..170.0)))
            .collect();
        let cfg = GeoConfig::default();
        let pools = geo_topk(&pts, &pts, 39, &cfg).unwrap();
        for (i, pool) in pools.iter().enumerate() {
            let mut oracle: Vec<(f64, usize)> = (0..40)
                .filter(|&j| j != i)
                .map(|j| (haversine_distance(&pts[i], &pts[j], &cfg).unwrap(), j))
                .collect();
            oracle.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            assert_eq!(pool.neighbor_indices, oracle.iter().map(|o| o.1).collect::<Vec<_>>());
            assert!(!pool.neighbor_indices.contains(&i));
        }
    }

    #[test]
    fn k_out_of_range() {
        let pts = [Coordinate::planar(0.0, 0.0), Coordinate::planar(1.0, 0.0)];
        assert!(matches!(
            geo_topk(&pts, &pts, 2, &GeoConfig::default()),
            Err(Error::KOutOfRange { k: 2, max: 1 })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn wgs() -> impl Strategy<Value = Coordinate> {
            (-90.0f64..=90.0, -180.0f64..=180.0).prop_map(|(a, b)| ll(a, b))
        }

        proptest! {
            #[test]
            fn haversine_symmetric_bounded(p in wgs(), q in wgs()) {
                let cfg = GeoConfig::default();
                let d = haversine_distance(&p, &q, &cfg).unwrap();
                prop_assert_eq!(d, haversine_distance(&q, &p, &cfg).unwrap());
                prop_assert!(d >= 0.0);
                prop_assert!(d <= std::f64::consts::PI * cfg.earth_radius_m * (1.0 + 1e-15));
                prop_assert_eq!(haversine_distance(&p, &p, &cfg).unwrap(), 0.0);
            }

            #[test]
            fn topk_matches_brute_force(
                pts in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 2..40),
                k_frac in 0.0f64..1.0,
            ) {
                let coords: Vec<Coordinate> =
                    pts.iter().map(|&(x, y)| Coordinate::planar(x, y)).collect();
                let n = coords.len();
                let k = 1 + ((n - 2) as f64 * k_frac) as usize;
                let pools = geo_topk(&coords, &coords, k, &GeoConfig::default()).unwrap();
                for (i, pool) in pools.iter().enumerate() {
                    prop_assert!(pool.scores.windows(2).all(|w| w[0] <= w[1]));
                    let mut all: Vec<f64> = (0..n)
                        .filter(|&j| j != i)
                        .map(|j| planar_distance(&coords[i], &coords[j]).unwrap())
                        .collect();
                    all.sort_by(f64::total_cmp);
                    prop_assert_eq!(&pool.scores[..], &all[..k]);
                    prop_assert!(!pool.neighbor_indices.contains(&i));
                }
            }
        }
    }
}
