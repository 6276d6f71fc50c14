//! Monte Carlo ground truth: Brownian pilot molecules in unbounded 3D
//! space with two absorbing spheres.
//!
//! Stepping is Euler-Maruyama with per-axis Gaussian increments of
//! standard deviation sqrt(2 D dt). Absorption combines three tests, all
//! gated to a thin shell around each sphere so far-field steps stay cheap:
//!
//! 1. segment-sphere (chord) intersection, event time linearly
//!    interpolated at the intersection parameter;
//! 2. a Brownian-bridge correction for excursions that touch the surface
//!    between two outside endpoints, accepted with probability
//!    exp(-(l0 - r)(l1 - r) / (D dt)) in the radial coordinate.
//!
//! Without the bridge term the scheme under-absorbs by ~6% at dt = 1e-3
//! (~3% at 1e-4) against the closed-form hitting probability; with it the
//! residual bias is below 0.5% at both step sizes.

use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::config::SceneConfig;
use crate::error::{Error, Result};
use crate::exec;
use crate::geom::{tx_world_positions, Pose, Vec3};
use crate::rng::molecule_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Absorber {
    NodeA,
    NodeB,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbsorptionEvent {
    pub time: f64,
    pub surface_point: Vec3,
    pub absorber: Absorber,
    pub pilot_id: u8,
    pub molecule_id: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PilotResult {
    pub pilot_id: u8,
    pub events: Vec<AbsorptionEvent>,
    /// Molecules never absorbed within T_pilot, or culled.
    pub n_lost: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbsorptionLog {
    pub pilots: Vec<PilotResult>,
    pub scene: SceneConfig,
    pub pose_a: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathCounts {
    pub lost: u64,
    pub to_b: u64,
    pub to_a: u64,
}

/// Path taxonomy: lost in free space, direct reception at B, reabsorbed at A.
pub fn classify_paths(result: &PilotResult) -> PathCounts {
    let to_b = result
        .events
        .iter()
        .filter(|e| e.absorber == Absorber::NodeB)
        .count() as u64;
    let to_a = result.events.len() as u64 - to_b;
    PathCounts {
        lost: result.n_lost,
        to_b,
        to_a,
    }
}

/// One molecule's fate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Outcome {
    Hit {
        time: f64,
        point: Vec3,
        absorber: Absorber,
    },
    Lost,
}

/// Immutable per-pilot stepping parameters.
#[derive(Debug, Clone, Copy)]
pub(crate) struct World {
    /// Node A absorbing center; None disables A absorption (single-sphere
    /// oracle runs).
    pub center_a: Option<Vec3>,
    /// Node B absorbing center.
    pub center_b: Vec3,
    pub r: f64,
    pub sigma: f64,
    pub dt: f64,
    pub n_steps: u64,
    pub cull_center: Vec3,
    pub cull_radius: f64,
}

impl World {
    pub(crate) fn for_scene(cfg: &SceneConfig, pose_a: &Pose) -> World {
        World {
            center_a: Some(pose_a.position),
            center_b: Vec3::ZERO,
            r: cfg.r,
            sigma: (2.0 * cfg.d_coeff * cfg.dt).sqrt(),
            dt: cfg.dt,
            n_steps: (cfg.t_pilot / cfg.dt).round() as u64,
            cull_center: pose_a.position.scale(0.5),
            cull_radius: cfg.cull_radius,
        }
    }
}

#[inline]
fn dist2(p: &Vec3, c: &Vec3) -> f64 {
    let dx = p.x - c.x;
    let dy = p.y - c.y;
    let dz = p.z - c.z;
    dx * dx + dy * dy + dz * dz
}

/// Earliest absorption of the step segment on one sphere, as a fraction of
/// the step, or None. `d0_2`/`d1_2` are squared center distances of the
/// endpoints; the caller guarantees d0_2 > r^2 (not yet absorbed).
#[inline]
fn sphere_hit(
    p0: &Vec3,
    p1: &Vec3,
    center: &Vec3,
    r: f64,
    d0_2: f64,
    d1_2: f64,
    inv_ddt: f64,
    rng: &mut Xoshiro256PlusPlus,
) -> Option<f64> {
    let r2 = r * r;
    // chord: |p0 + s (p1 - p0) - center|^2 = r^2, earliest root in [0, 1]
    let ux = p1.x - p0.x;
    let uy = p1.y - p0.y;
    let uz = p1.z - p0.z;
    let wx = p0.x - center.x;
    let wy = p0.y - center.y;
    let wz = p0.z - center.z;
    let a = ux * ux + uy * uy + uz * uz;
    if a > 0.0 {
        let b = wx * ux + wy * uy + wz * uz;
        let c = d0_2 - r2;
        let disc = b * b - a * c;
        if disc >= 0.0 {
            let s = (-b - disc.sqrt()) / a;
            if (0.0..=1.0).contains(&s) {
                return Some(s);
            }
        }
    }
    if d1_2 <= r2 {
        // endpoint inside but chord root missed numerically: absorb at the
        // step end
        return Some(1.0);
    }
    // Brownian bridge between two outside endpoints; hit assigned to the
    // step midpoint
    let l0 = d0_2.sqrt();
    let l1 = d1_2.sqrt();
    let p_hit = (-(l0 - r) * (l1 - r) * inv_ddt).exp();
    if rng.random::<f64>() < p_hit {
        return Some(0.5);
    }
    None
}

/// Projects an interpolated contact point exactly onto the sphere surface.
fn surface_point(p0: &Vec3, p1: &Vec3, s: f64, center: &Vec3, r: f64) -> Vec3 {
    let p = Vec3::new(
        p0.x + s * (p1.x - p0.x),
        p0.y + s * (p1.y - p0.y),
        p0.z + s * (p1.z - p0.z),
    );
    let rel = p.sub(center);
    let n = rel.norm();
    if n == 0.0 {
        // degenerate contact at the center: arbitrary fixed direction
        return center.add(&Vec3::new(r, 0.0, 0.0));
    }
    center.add(&rel.scale(r / n))
}

/// Walks one molecule from `start` until absorption, cull, or the time
/// horizon.
pub(crate) fn run_molecule(world: &World, start: Vec3, rng: &mut Xoshiro256PlusPlus) -> Outcome {
    let r2 = world.r * world.r;
    // exact absorption tests only fire within r + 4 sigma of a center; a
    // bridge excursion across the remaining gap has probability
    // <= exp(-32) per step
    let near = world.r + 4.0 * world.sigma;
    let near2 = near * near;
    let ddt = world.sigma * world.sigma / 2.0; // D*dt, sigma^2 = 2 D dt
    let inv_ddt = if ddt > 0.0 { 1.0 / ddt } else { f64::INFINITY };
    let cull_r2 = world.cull_radius * world.cull_radius;
    // cheap cull guard: if |p - B| stays under this, |p - cull_center|
    // cannot exceed cull_radius
    let guard = world.cull_radius - world.cull_center.sub(&world.center_b).norm();
    let guard2 = guard * guard;

    let mut pos = start;
    let mut da2 = world.center_a.map_or(f64::INFINITY, |c| dist2(&pos, &c));
    let mut db2 = dist2(&pos, &world.center_b);
    debug_assert!(da2 > r2 && db2 > r2, "molecule starts inside a sphere");

    for k in 0..world.n_steps {
        let gx: f64 = rng.sample(StandardNormal);
        let gy: f64 = rng.sample(StandardNormal);
        let gz: f64 = rng.sample(StandardNormal);
        let next = Vec3::new(
            pos.x + world.sigma * gx,
            pos.y + world.sigma * gy,
            pos.z + world.sigma * gz,
        );
        let nda2 = world.center_a.map_or(f64::INFINITY, |c| dist2(&next, &c));
        let ndb2 = dist2(&next, &world.center_b);

        let mut best: Option<(f64, Absorber, Vec3)> = None;
        if let Some(ca) = world.center_a {
            if da2 < near2 || nda2 < near2 {
                if let Some(s) = sphere_hit(&pos, &next, &ca, world.r, da2, nda2, inv_ddt, rng) {
                    best = Some((s, Absorber::NodeA, ca));
                }
            }
        }
        if db2 < near2 || ndb2 < near2 {
            if let Some(s) = sphere_hit(
                &pos,
                &next,
                &world.center_b,
                world.r,
                db2,
                ndb2,
                inv_ddt,
                rng,
            ) {
                if best.is_none_or(|(sa, _, _)| s < sa) {
                    best = Some((s, Absorber::NodeB, world.center_b));
                }
            }
        }
        if let Some((s, absorber, center)) = best {
            let time = (k as f64 + s) * world.dt;
            return Outcome::Hit {
                time,
                point: surface_point(&pos, &next, s, &center, world.r),
                absorber,
            };
        }

        if ndb2 > guard2 && dist2(&next, &world.cull_center) > cull_r2 {
            return Outcome::Lost;
        }
        pos = next;
        da2 = nda2;
        db2 = ndb2;
    }
    Outcome::Lost
}

fn check_emission(cfg: &SceneConfig, pose_a: &Pose, emission: &Vec3) -> Result<()> {
    let da = emission.sub(&pose_a.position).norm();
    let db = emission.norm();
    if da <= cfg.r || db <= cfg.r {
        return Err(Error::Config(vec![format!(
            "emission point ({:.3}, {:.3}, {:.3}) lies inside an absorbing sphere",
            emission.x, emission.y, emission.z
        )]));
    }
    Ok(())
}

fn simulate_pilot_with<F>(
    cfg: &SceneConfig,
    pose_a: &Pose,
    pilot_id: u8,
    sample_seed: u64,
    map: F,
) -> Result<PilotResult>
where
    F: Fn(usize, &(dyn Fn(usize) -> Outcome + Sync)) -> Vec<Outcome>,
{
    cfg.validate()?;
    if pilot_id > 5 {
        return Err(Error::invalid(format!(
            "pilot_id {pilot_id} out of range [0,5]"
        )));
    }
    let layout = cfg.layout();
    let emission = tx_world_positions(pose_a, &layout)[pilot_id as usize];
    check_emission(cfg, pose_a, &emission)?;

    let world = World::for_scene(cfg, pose_a);
    let n = cfg.n_molecules as usize;
    let runner = |m: usize| {
        let mut rng = molecule_rng(sample_seed, 0, pilot_id as u64, m as u64);
        run_molecule(&world, emission, &mut rng)
    };
    let outcomes = map(n, &runner);

    let mut events = Vec::new();
    let mut n_lost = 0u64;
    for (m, out) in outcomes.into_iter().enumerate() {
        match out {
            Outcome::Hit {
                time,
                point,
                absorber,
            } => events.push(AbsorptionEvent {
                time,
                surface_point: point,
                absorber,
                pilot_id,
                molecule_id: m as u32,
            }),
            Outcome::Lost => n_lost += 1,
        }
    }
    // canonical order regardless of scheduling
    events.sort_unstable_by(|a, b| {
        a.time
            .total_cmp(&b.time)
            .then_with(|| a.molecule_id.cmp(&b.molecule_id))
    });
    Ok(PilotResult {
        pilot_id,
        events,
        n_lost,
    })
}

/// Simulates all N molecules of one pilot transmission.
pub fn simulate_pilot(
    cfg: &SceneConfig,
    pose_a: &Pose,
    pilot_id: u8,
    sample_seed: u64,
) -> Result<PilotResult> {
    simulate_pilot_with(cfg, pose_a, pilot_id, sample_seed, |n, f| {
        exec::map_indexed(n, f)
    })
}

/// Single-threaded variant; bit-identical to `simulate_pilot` by the
/// per-molecule stream contract. Benchmark baseline.
pub fn simulate_pilot_serial(
    cfg: &SceneConfig,
    pose_a: &Pose,
    pilot_id: u8,
    sample_seed: u64,
) -> Result<PilotResult> {
    simulate_pilot_with(cfg, pose_a, pilot_id, sample_seed, |n, f| {
        exec::map_indexed_serial(n, f)
    })
}

/// Runs the six pilots of one scene; pilots are fully isolated (the
/// guard-time assumption).
pub fn simulate_scene(cfg: &SceneConfig, pose_a: &Pose, sample_seed: u64) -> Result<AbsorptionLog> {
    let mut pilots = Vec::with_capacity(6);
    for pilot_id in 0..6u8 {
        pilots.push(simulate_pilot(cfg, pose_a, pilot_id, sample_seed)?);
    }
    Ok(AbsorptionLog {
        pilots,
        scene: cfg.clone(),
        pose_a: *pose_a,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneHeader {
    layout_version: String,
    scene: SceneConfig,
    pose_a: Pose,
}

pub const LOG_LAYOUT_VERSION: &str = "mcvd-locate/v1";

/// Writes the event CSV and the JSON scene header.
pub fn save_log(log: &AbsorptionLog, csv_path: &Path, header_path: &Path) -> Result<()> {
    let header = SceneHeader {
        layout_version: LOG_LAYOUT_VERSION.to_string(),
        scene: log.scene.clone(),
        pose_a: log.pose_a,
    };
    let mut hf = std::fs::File::create(header_path)?;
    hf.write_all(
        serde_json::to_string_pretty(&header)
            .expect("header serializes")
            .as_bytes(),
    )?;
    hf.write_all(b"\n")?;

    let mut w = csv::Writer::from_path(csv_path)?;
    w.write_record([
        "pilot_id",
        "molecule_id",
        "time_s",
        "px",
        "py",
        "pz",
        "absorber",
    ])
    .map_err(csv_io)?;
    for pilot in &log.pilots {
        for e in &pilot.events {
            let absorber = match e.absorber {
                Absorber::NodeA => "NodeA",
                Absorber::NodeB => "NodeB",
            };
            w.write_record([
                e.pilot_id.to_string(),
                e.molecule_id.to_string(),
                format!("{}", e.time),
                format!("{}", e.surface_point.x),
                format!("{}", e.surface_point.y),
                format!("{}", e.surface_point.z),
                absorber.to_string(),
            ])
            .map_err(csv_io)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Reads a log back; n_lost is reconstructed from N minus the event count.
pub fn load_log(csv_path: &Path, header_path: &Path) -> Result<AbsorptionLog> {
    let header_text = std::fs::read_to_string(header_path)?;
    let header: SceneHeader = serde_json::from_str(&header_text)
        .map_err(|e| Error::MalformedHeader(format!("scene header: {e}")))?;
    if header.layout_version != LOG_LAYOUT_VERSION {
        return Err(Error::VersionMismatch {
            found: header.layout_version,
            expected: LOG_LAYOUT_VERSION.to_string(),
        });
    }
    header.scene.validate()?;

    let mut pilots: Vec<PilotResult> = (0..6u8)
        .map(|pilot_id| PilotResult {
            pilot_id,
            events: Vec::new(),
            n_lost: 0,
        })
        .collect();
    let mut reader = csv::Reader::from_path(csv_path)?;
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2; // header is row 1
        let rec = rec.map_err(|e| Error::MalformedRecord {
            row,
            message: e.to_string(),
        })?;
        if rec.len() != 7 {
            return Err(Error::MalformedRecord {
                row,
                message: format!("expected 7 fields, found {}", rec.len()),
            });
        }
        let field = |j: usize| rec.get(j).unwrap();
        let parse_f = |j: usize| -> Result<f64> {
            field(j).parse::<f64>().map_err(|e| Error::MalformedRecord {
                row,
                message: format!("field {}: {e}", j + 1),
            })
        };
        let pilot_id: u8 = field(0).parse().map_err(|_| Error::MalformedRecord {
            row,
            message: format!("bad pilot_id {:?}", field(0)),
        })?;
        if pilot_id > 5 {
            return Err(Error::MalformedRecord {
                row,
                message: format!("pilot_id {pilot_id} out of range"),
            });
        }
        let molecule_id: u32 = field(1).parse().map_err(|_| Error::MalformedRecord {
            row,
            message: format!("bad molecule_id {:?}", field(1)),
        })?;
        let absorber = match field(6) {
            "NodeA" => Absorber::NodeA,
            "NodeB" => Absorber::NodeB,
            other => {
                return Err(Error::MalformedRecord {
                    row,
                    message: format!("unknown absorber {other:?}"),
                })
            }
        };
        pilots[pilot_id as usize].events.push(AbsorptionEvent {
            time: parse_f(2)?,
            surface_point: Vec3::new(parse_f(3)?, parse_f(4)?, parse_f(5)?),
            absorber,
            pilot_id,
            molecule_id,
        });
    }
    for p in &mut pilots {
        if p.events.len() as u64 > header.scene.n_molecules {
            return Err(Error::MalformedRecord {
                row: 0,
                message: format!(
                    "pilot {} has {} events, more than N={}",
                    p.pilot_id,
                    p.events.len(),
                    header.scene.n_molecules
                ),
            });
        }
        p.n_lost = header.scene.n_molecules - p.events.len() as u64;
        p.events.sort_unstable_by(|a, b| {
            a.time
                .total_cmp(&b.time)
                .then_with(|| a.molecule_id.cmp(&b.molecule_id))
        });
    }
    Ok(AbsorptionLog {
        pilots,
        scene: header.scene,
        pose_a: header.pose_a,
    })
}
