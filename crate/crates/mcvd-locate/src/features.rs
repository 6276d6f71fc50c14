//! Feature extraction: AbsorptionLog -> fixed-layout per-pilot tokens.
//!
//! Token layout (30 reals, fixed order), used by `flatten`:
//!   [0..24)  octants 0..7, each (peak_time, peak_count, total_count)
//!   [24]     pilot_total
//!   [25]     d_hat_time   (distance from global peak time; -1 sentinel)
//!   [26]     d_hat_count  (distance from total count; -1 sentinel)
//!   [27..30) centroid_dir x, y, z (unit vector or zeros)
//! plus two per-token indicator channels appended by `flatten`:
//!   [30]     is_top2 (0/1)
//!   [31]     rank of pilot_total (descending, ties by lower pilot id)
//! for 6 x 32 = 192 reals per sample.

use crate::channel::{invert_distance_from_count, invert_distance_from_peak, DistanceEstimate};
use crate::config::SceneConfig;
use crate::error::{Error, Result};
use crate::geom::{octant_index, Vec3};
use crate::simulator::{Absorber, AbsorptionEvent, AbsorptionLog, PilotResult};

pub const TOKEN_REALS: usize = 30;
pub const TOKEN_WIDTH: usize = 32;
pub const N_TOKENS: usize = 6;
pub const FLAT_WIDTH: usize = N_TOKENS * TOKEN_WIDTH;

/// Sentinel for undefined times/distances.
pub const SENTINEL: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OctantFeatures {
    /// Center of the maximal histogram bin, or -1 when the octant is empty.
    pub peak_time: f64,
    /// Count in that bin.
    pub peak_count: u64,
    pub total_count: u64,
}

impl OctantFeatures {
    pub const EMPTY: OctantFeatures = OctantFeatures {
        peak_time: SENTINEL,
        peak_count: 0,
        total_count: 0,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct PilotToken {
    pub octants: [OctantFeatures; 8],
    pub pilot_total: u64,
    pub d_hat_time: f64,
    pub d_hat_count: f64,
    pub centroid_dir: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub tokens: Vec<PilotToken>,
    /// Pilot ids with the largest and second-largest pilot_total.
    pub top2: (u8, u8),
}

fn n_bins(cfg: &SceneConfig) -> usize {
    (cfg.t_pilot / cfg.bin_width).ceil().max(1.0) as usize
}

fn bin_of(t: f64, cfg: &SceneConfig, bins: usize) -> usize {
    ((t / cfg.bin_width) as usize).min(bins - 1)
}

fn bin_center(idx: usize, cfg: &SceneConfig) -> f64 {
    (idx as f64 + 0.5) * cfg.bin_width
}

/// Earliest maximal bin of a count histogram, or None if all zero.
fn peak_bin(hist: &[u64]) -> Option<usize> {
    let max = *hist.iter().max()?;
    if max == 0 {
        return None;
    }
    hist.iter().position(|&c| c == max)
}

/// Per-octant (peak_time, peak_count, total_count) over Node-B events.
pub fn extract_octant_features(
    events: &[AbsorptionEvent],
    cfg: &SceneConfig,
) -> Result<[OctantFeatures; 8]> {
    let bins = n_bins(cfg);
    let mut hists = vec![vec![0u64; bins]; 8];
    for e in events {
        debug_assert!(
            e.absorber == Absorber::NodeB,
            "octant features expect Node-B events"
        );
        let oct = octant_index(&e.surface_point)?;
        hists[oct][bin_of(e.time, cfg, bins)] += 1;
    }
    let mut out = [OctantFeatures::EMPTY; 8];
    for (oct, hist) in hists.iter().enumerate() {
        if let Some(idx) = peak_bin(hist) {
            out[oct] = OctantFeatures {
                peak_time: bin_center(idx, cfg),
                peak_count: hist[idx],
                total_count: hist.iter().sum(),
            };
        }
    }
    Ok(out)
}

/// Full token for one pilot: octant stats, the two physics distance
/// estimates, and the direction centroid.
pub fn build_token(pilot: &PilotResult, cfg: &SceneConfig) -> Result<PilotToken> {
    let b_events: Vec<AbsorptionEvent> = pilot
        .events
        .iter()
        .copied()
        .filter(|e| e.absorber == Absorber::NodeB)
        .collect();
    let octants = extract_octant_features(&b_events, cfg)?;
    let pilot_total = b_events.len() as u64;

    let d_hat_time = if b_events.is_empty() {
        SENTINEL
    } else {
        let bins = n_bins(cfg);
        let mut hist = vec![0u64; bins];
        for e in &b_events {
            hist[bin_of(e.time, cfg, bins)] += 1;
        }
        let idx = peak_bin(&hist).expect("non-empty histogram has a peak");
        invert_distance_from_peak(bin_center(idx, cfg), cfg.r, cfg.d_coeff)?
    };

    let d_hat_count = match invert_distance_from_count(pilot_total, cfg.n_molecules, cfg.r)? {
        DistanceEstimate::Finite(d) => d,
        DistanceEstimate::Unbounded => SENTINEL,
    };

    let centroid_dir = if b_events.is_empty() {
        Vec3::ZERO
    } else {
        let mut sum = Vec3::ZERO;
        for e in &b_events {
            // events lie on the sphere |p| = r > 0
            sum = sum.add(&e.surface_point.scale(1.0 / e.surface_point.norm()));
        }
        if sum.norm() < 1e-12 {
            Vec3::ZERO
        } else {
            sum.scale(1.0 / sum.norm())
        }
    };

    Ok(PilotToken {
        octants,
        pilot_total,
        d_hat_time,
        d_hat_count,
        centroid_dir,
    })
}

/// The two pilots with the largest pilot_total; ties break to the lower id.
pub fn select_top2(tokens: &[PilotToken]) -> (u8, u8) {
    let order = rank_order(tokens);
    (order[0], order[1])
}

/// Pilot ids sorted by descending pilot_total, ties by lower id.
fn rank_order(tokens: &[PilotToken]) -> Vec<u8> {
    let mut ids: Vec<u8> = (0..tokens.len() as u8).collect();
    ids.sort_by(|&a, &b| {
        tokens[b as usize]
            .pilot_total
            .cmp(&tokens[a as usize].pilot_total)
            .then(a.cmp(&b))
    });
    ids
}

/// Features for a whole scene log.
pub fn build_feature_matrix(log: &AbsorptionLog) -> Result<FeatureMatrix> {
    if log.pilots.len() != N_TOKENS {
        return Err(Error::invalid(format!(
            "expected 6 pilots, found {}",
            log.pilots.len()
        )));
    }
    let tokens: Vec<PilotToken> = log
        .pilots
        .iter()
        .map(|p| build_token(p, &log.scene))
        .collect::<Result<_>>()?;
    let top2 = select_top2(&tokens);
    Ok(FeatureMatrix { tokens, top2 })
}

/// 192-real fixed layout: 6 tokens x (30 token reals + is_top2 + rank).
pub fn flatten(matrix: &FeatureMatrix) -> Vec<f64> {
    let order = rank_order(&matrix.tokens);
    let mut rank_of = [0usize; N_TOKENS];
    for (rank, &id) in order.iter().enumerate() {
        rank_of[id as usize] = rank;
    }
    let mut out = Vec::with_capacity(FLAT_WIDTH);
    for (pilot, tok) in matrix.tokens.iter().enumerate() {
        for oct in &tok.octants {
            out.push(oct.peak_time);
            out.push(oct.peak_count as f64);
            out.push(oct.total_count as f64);
        }
        out.push(tok.pilot_total as f64);
        out.push(tok.d_hat_time);
        out.push(tok.d_hat_count);
        out.push(tok.centroid_dir.x);
        out.push(tok.centroid_dir.y);
        out.push(tok.centroid_dir.z);
        let is_top2 = pilot as u8 == matrix.top2.0 || pilot as u8 == matrix.top2.1;
        out.push(if is_top2 { 1.0 } else { 0.0 });
        out.push(rank_of[pilot] as f64);
    }
    out
}

/// Inverse of `flatten`; counts and ids are recovered exactly.
pub fn unflatten(flat: &[f64]) -> Result<FeatureMatrix> {
    if flat.len() != FLAT_WIDTH {
        return Err(Error::ShapeMismatch(format!(
            "flattened features must have {FLAT_WIDTH} entries, found {}",
            flat.len()
        )));
    }
    let mut tokens = Vec::with_capacity(N_TOKENS);
    let mut top_by_rank: Vec<(usize, u8)> = Vec::new();
    for pilot in 0..N_TOKENS {
        let base = pilot * TOKEN_WIDTH;
        let mut octants = [OctantFeatures::EMPTY; 8];
        for (o, oct) in octants.iter_mut().enumerate() {
            *oct = OctantFeatures {
                peak_time: flat[base + 3 * o],
                peak_count: flat[base + 3 * o + 1] as u64,
                total_count: flat[base + 3 * o + 2] as u64,
            };
        }
        tokens.push(PilotToken {
            octants,
            pilot_total: flat[base + 24] as u64,
            d_hat_time: flat[base + 25],
            d_hat_count: flat[base + 26],
            centroid_dir: Vec3::new(flat[base + 27], flat[base + 28], flat[base + 29]),
        });
        if flat[base + 30] != 0.0 {
            top_by_rank.push((flat[base + 31] as usize, pilot as u8));
        }
    }
    top_by_rank.sort_unstable();
    if top_by_rank.len() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "expected exactly 2 top-2 indicator channels set, found {}",
            top_by_rank.len()
        )));
    }
    Ok(FeatureMatrix {
        tokens,
        top2: (top_by_rank[0].1, top_by_rank[1].1),
    })
}

/// Column names for the flattened layout, in order.
pub fn feature_names() -> Vec<String> {
    let mut names = Vec::with_capacity(FLAT_WIDTH);
    for pilot in 0..N_TOKENS {
        for oct in 0..8 {
            names.push(format!("p{pilot}_oct{oct}_peak_time"));
            names.push(format!("p{pilot}_oct{oct}_peak_count"));
            names.push(format!("p{pilot}_oct{oct}_total"));
        }
        names.push(format!("p{pilot}_total"));
        names.push(format!("p{pilot}_d_hat_time"));
        names.push(format!("p{pilot}_d_hat_count"));
        names.push(format!("p{pilot}_centroid_x"));
        names.push(format!("p{pilot}_centroid_y"));
        names.push(format!("p{pilot}_centroid_z"));
        names.push(format!("p{pilot}_is_top2"));
        names.push(format!("p{pilot}_rank"));
    }
    names
}

/// The d_hat_count of the strongest pilot (rank 0), for the physics loss;
/// None when that pilot received nothing.
pub fn best_pilot_distance(flat: &[f64]) -> Option<f64> {
    for pilot in 0..N_TOKENS {
        let base = pilot * TOKEN_WIDTH;
        if flat[base + 31] == 0.0 {
            let d = flat[base + 26];
            return (d != SENTINEL).then_some(d);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Pose, UnitQuaternion};
    use crate::simulator::simulate_scene;

    fn cfg() -> SceneConfig {
        SceneConfig::default()
    }

    fn event(t: f64, p: Vec3) -> AbsorptionEvent {
        AbsorptionEvent {
            time: t,
            surface_point: p,
            absorber: Absorber::NodeB,
            pilot_id: 0,
            molecule_id: 0,
        }
    }

    fn on_sphere(dir: Vec3) -> Vec3 {
        dir.scale(5.0 / dir.norm())
    }

    #[test]
    fn empty_events_all_sentinel() {
        let octs = extract_octant_features(&[], &cfg()).unwrap();
        assert!(octs.iter().all(|o| *o == OctantFeatures::EMPTY));
    }

    #[test]
    fn hand_counted_histogram() {
        let p = on_sphere(Vec3::new(1.0, 1.0, 1.0));
        let events = [event(0.10, p), event(0.105, p), event(0.32, p)];
        let octs = extract_octant_features(&events, &cfg()).unwrap();
        assert!((octs[0].peak_time - 0.105).abs() < 1e-12);
        assert_eq!(octs[0].peak_count, 2);
        assert_eq!(octs[0].total_count, 3);
        for o in 1..8 {
            assert_eq!(octs[o], OctantFeatures::EMPTY);
        }
    }

    #[test]
    fn octant_features_order_invariant() {
        let pts = [
            on_sphere(Vec3::new(1.0, 2.0, 3.0)),
            on_sphere(Vec3::new(-1.0, 2.0, 3.0)),
            on_sphere(Vec3::new(1.0, -2.0, -3.0)),
        ];
        let mut events: Vec<AbsorptionEvent> = (0..30)
            .map(|i| event(0.01 + 0.015 * i as f64, pts[i % 3]))
            .collect();
        let a = extract_octant_features(&events, &cfg()).unwrap();
        events.reverse();
        let b = extract_octant_features(&events, &cfg()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn token_from_empty_pilot() {
        let pilot = PilotResult {
            pilot_id: 0,
            events: vec![],
            n_lost: 2000,
        };
        let tok = build_token(&pilot, &cfg()).unwrap();
        assert_eq!(tok.pilot_total, 0);
        assert_eq!(tok.d_hat_time, SENTINEL);
        assert_eq!(tok.d_hat_count, SENTINEL);
        assert_eq!(tok.centroid_dir, Vec3::ZERO);
    }

    #[test]
    fn token_single_point_peak() {
        // all events at (r,0,0), peak bin centered at 0.375
        let p = Vec3::new(5.0, 0.0, 0.0);
        let events: Vec<AbsorptionEvent> = (0..10)
            .map(|i| event(0.371 + 0.0005 * i as f64, p))
            .collect();
        let pilot = PilotResult {
            pilot_id: 0,
            events,
            n_lost: 1990,
        };
        let tok = build_token(&pilot, &cfg()).unwrap();
        assert!((tok.d_hat_time - 20.0).abs() < 1e-9, "{}", tok.d_hat_time);
        assert!((tok.centroid_dir.x - 1.0).abs() < 1e-9);
    }

    #[test]
    fn token_quarter_count_inverts_to_20() {
        let p = Vec3::new(5.0, 0.0, 0.0);
        let events: Vec<AbsorptionEvent> =
            (0..500).map(|i| event(0.01 + 1e-4 * i as f64, p)).collect();
        let pilot = PilotResult {
            pilot_id: 0,
            events,
            n_lost: 1500,
        };
        let tok = build_token(&pilot, &cfg()).unwrap();
        assert!((tok.d_hat_count - 20.0).abs() < 1e-9);
    }

    fn tokens_with_totals(totals: &[u64]) -> Vec<PilotToken> {
        totals
            .iter()
            .map(|&t| PilotToken {
                octants: [OctantFeatures::EMPTY; 8],
                pilot_total: t,
                d_hat_time: SENTINEL,
                d_hat_count: SENTINEL,
                centroid_dir: Vec3::ZERO,
            })
            .collect()
    }

    #[test]
    fn top2_selection_rules() {
        assert_eq!(
            select_top2(&tokens_with_totals(&[10, 5, 3, 2, 1, 0])),
            (0, 1)
        );
        assert_eq!(
            select_top2(&tokens_with_totals(&[3, 7, 7, 1, 0, 0])),
            (1, 2)
        );
        assert_eq!(
            select_top2(&tokens_with_totals(&[0, 0, 0, 0, 0, 0])),
            (0, 1)
        );
    }

    #[test]
    fn flatten_round_trip_and_layout() {
        let cfg = SceneConfig {
            n_molecules: 300,
            dt: 1e-3,
            t_pilot: 1.0,
            ..cfg()
        };
        let pose = Pose {
            position: Vec3::new(20.0, 5.0, -3.0),
            orientation: UnitQuaternion::normalize(0.6, -0.2, 0.4, 0.1),
        };
        let log = simulate_scene(&cfg, &pose, 31).unwrap();
        let fm = build_feature_matrix(&log).unwrap();
        let flat = flatten(&fm);
        assert_eq!(flat.len(), FLAT_WIDTH);
        assert_eq!(feature_names().len(), FLAT_WIDTH);
        let back = unflatten(&flat).unwrap();
        assert_eq!(fm, back);
        // conservation: per-token octant totals equal the Node-B count
        for (pilot, tok) in fm.tokens.iter().enumerate() {
            let b_count = log.pilots[pilot]
                .events
                .iter()
                .filter(|e| e.absorber == Absorber::NodeB)
                .count() as u64;
            let oct_sum: u64 = tok.octants.iter().map(|o| o.total_count).sum();
            assert_eq!(oct_sum, b_count);
            assert_eq!(tok.pilot_total, b_count);
        }
        // exactly two is_top2 flags set
        let flags: f64 = (0..N_TOKENS).map(|p| flat[p * TOKEN_WIDTH + 30]).sum();
        assert_eq!(flags, 2.0);
        // ranks are a permutation of 0..5
        let mut ranks: Vec<f64> = (0..N_TOKENS).map(|p| flat[p * TOKEN_WIDTH + 31]).collect();
        ranks.sort_by(f64::total_cmp);
        assert_eq!(ranks, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn best_pilot_distance_reads_rank0() {
        let cfg = SceneConfig {
            n_molecules: 300,
            dt: 1e-3,
            t_pilot: 1.0,
            ..cfg()
        };
        let pose = Pose {
            position: Vec3::new(20.0, 0.0, 0.0),
            orientation: UnitQuaternion::IDENTITY,
        };
        let log = simulate_scene(&cfg, &pose, 8).unwrap();
        let fm = build_feature_matrix(&log).unwrap();
        let flat = flatten(&fm);
        let best = best_pilot_distance(&flat).unwrap();
        let strongest = &fm.tokens[fm.top2.0 as usize];
        assert_eq!(best, strongest.d_hat_count);
    }

    #[test]
    fn strongest_pilot_centroid_points_toward_a() {
        // coarse-direction sanity on a handful of seeded scenes
        let cfg = SceneConfig {
            n_molecules: 1000,
            dt: 1e-3,
            t_pilot: 2.0,
            ..cfg()
        };
        let mut hits = 0;
        for seed in 0..10u64 {
            let pose = Pose {
                position: Vec3::new(20.0, 0.0, 0.0),
                orientation: UnitQuaternion::IDENTITY,
            };
            let log = simulate_scene(&cfg, &pose, seed).unwrap();
            let fm = build_feature_matrix(&log).unwrap();
            let c = &fm.tokens[fm.top2.0 as usize].centroid_dir;
            let toward_a = pose.position.normalized().unwrap();
            if c.dot(&toward_a) > 0.0 {
                hits += 1;
            }
        }
        assert!(
            hits >= 9,
            "centroid pointed at Node A in only {hits}/10 scenes"
        );
    }
}
