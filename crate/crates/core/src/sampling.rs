//! Multi-resolution collocation grids and mini-batch draws.

use crate::error::{Error, Result};
use crate::physics::{Category, MaterialProps, MaterialSpace, ProcessConfig};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::{Read, Write};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Paper,
    Desk,
}

impl Profile {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            _ => Err(Error::Config(format!("unknown profile `{s}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
        }
    }

    pub fn grid(self) -> GridSpec {
        match self {
            Profile::Paper => GridSpec::paper(),
            Profile::Desk => GridSpec::paper().coarsened(2.0, 0.3, true),
        }
    }
}

/// Spacings of the collocation grids, metres and seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub time_step: f64,
    pub face_spacing: f64,
    pub patch_size: f64,
    pub patch_spacing: f64,
    pub slab_depth: f64,
    pub slab_spacing: f64,
    pub deep_spacing: f64,
    pub ic_spacing: [f64; 3],
    /// drop top-face patch points that coincide with the base face grid
    pub dedup: bool,
    /// resampling jitter half-width as a fraction of each spacing
    pub jitter: f64,
}

impl GridSpec {
    pub fn paper() -> Self {
        Self {
            time_step: 0.05,
            face_spacing: 1e-3,
            patch_size: 6e-3,
            patch_spacing: 0.25e-3,
            slab_depth: 1e-3,
            slab_spacing: 0.5e-3,
            deep_spacing: 1.12e-3,
            ic_spacing: [2e-3, 1e-3, 2e-3],
            dedup: false,
            jitter: 0.25,
        }
    }

    /// Every spacing multiplied by `factor`, with a new time step.
    pub fn coarsened(&self, factor: f64, time_step: f64, dedup: bool) -> Self {
        Self {
            time_step,
            face_spacing: self.face_spacing * factor,
            patch_size: self.patch_size,
            patch_spacing: self.patch_spacing * factor,
            slab_depth: self.slab_depth,
            slab_spacing: self.slab_spacing * factor,
            deep_spacing: self.deep_spacing * factor,
            ic_spacing: self.ic_spacing.map(|s| s * factor),
            dedup,
            jitter: self.jitter,
        }
    }

    fn validate(&self) -> Result<()> {
        let all = [
            self.time_step,
            self.face_spacing,
            self.patch_size,
            self.patch_spacing,
            self.slab_depth,
            self.slab_spacing,
            self.deep_spacing,
            self.ic_spacing[0],
            self.ic_spacing[1],
            self.ic_spacing[2],
        ];
        if !all.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::ProfileInfeasible("all spacings must be positive".into()));
        }
        if !(0.0..=0.5).contains(&self.jitter) {
            return Err(Error::ProfileInfeasible(format!("jitter fraction {} outside [0, 0.5]", self.jitter)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollocationPoint {
    pub category: Category,
    pub pos: [f64; 3],
    pub t: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct CollocationCounts {
    pub pde: usize,
    pub ic: usize,
    pub x_plus: usize,
    pub y_plus: usize,
    pub x_minus: usize,
    pub y_minus: usize,
    pub top: usize,
    pub bottom: usize,
}

impl CollocationCounts {
    pub fn bc(&self) -> usize {
        self.x_plus + self.y_plus + self.x_minus + self.y_minus + self.top + self.bottom
    }

    pub fn total(&self) -> usize {
        self.pde + self.ic + self.bc()
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Pool {
    base: Vec<CollocationPoint>,
    /// jitter half-width per axis, then in time
    jitter: Vec<[f64; 4]>,
    /// refinement-patch points shift with the beam when their time moves
    follows_beam: Vec<bool>,
    points: Vec<CollocationPoint>,
}

impl Pool {
    fn new() -> Self {
        Self {
            base: Vec::new(),
            jitter: Vec::new(),
            follows_beam: Vec::new(),
            points: Vec::new(),
        }
    }

    fn push(&mut self, p: CollocationPoint, jitter: [f64; 4], follows_beam: bool) {
        self.base.push(p);
        self.jitter.push(jitter);
        self.follows_beam.push(follows_beam);
        self.points.push(p);
    }
}

/// Categorized collocation pools.
#[derive(Clone, Debug, PartialEq)]
pub struct CollocationSet {
    pub times: Vec<f64>,
    pub domain: [f64; 3],
    /// refinement patch touched the domain edge and was cut
    pub patch_clipped: bool,
    t_end: f64,
    /// beam velocity in the top plane
    scan_velocity: [f64; 2],
    interior: Pool,
    boundary: Pool,
    initial: Pool,
}

fn axis(len: f64, spacing: f64) -> Vec<f64> {
    let n = (len / spacing + 1e-9).floor() as usize;
    (0..=n).map(|k| k as f64 * spacing).collect()
}

fn key(p: [f64; 3]) -> [i64; 3] {
    p.map(|v| (v * 1e9).round() as i64)
}

/// Builds the deterministic (unjittered) collocation pools.
pub fn build_collocation(process: &ProcessConfig, grid: &GridSpec) -> Result<CollocationSet> {
    grid.validate()?;
    let [lx, ly, lz] = process.domain;
    if grid.slab_depth > lz {
        return Err(Error::ProfileInfeasible("refined slab deeper than the domain".into()));
    }
    let levels = (process.t_end / grid.time_step + 1e-9).floor() as usize;
    let times: Vec<f64> = (0..=levels).map(|i| i as f64 * grid.time_step).collect();

    let fx = axis(lx, grid.face_spacing);
    let fy = axis(ly, grid.face_spacing);
    let fz = axis(lz, grid.face_spacing);
    let fs = grid.face_spacing * grid.jitter;

    let slab_z: Vec<f64> = axis(grid.slab_depth, grid.slab_spacing)
        .iter()
        .map(|d| lz - d)
        .rev()
        .collect();
    let deep_top = lz - grid.slab_depth;
    let deep_z: Vec<f64> = axis(lz, grid.deep_spacing)
        .into_iter()
        .filter(|z| *z < deep_top - 1e-9)
        .collect();
    let sx = axis(lx, grid.slab_spacing);
    let sy = axis(ly, grid.slab_spacing);
    let dx = axis(lx, grid.deep_spacing);
    let dy = axis(ly, grid.deep_spacing);

    let mut set = CollocationSet {
        times: times.clone(),
        domain: process.domain,
        patch_clipped: false,
        t_end: process.t_end,
        scan_velocity: {
            let (a, b) = (process.laser_center(0.0), process.laser_center(1.0));
            [b[0] - a[0], b[1] - a[1]]
        },
        interior: Pool::new(),
        boundary: Pool::new(),
        initial: Pool::new(),
    };

    let base_top: HashSet<[i64; 3]> = fx
        .iter()
        .flat_map(|&x| fy.iter().map(move |&y| key([x, y, lz])))
        .collect();
    let half = grid.patch_size / 2.0;
    let np = (grid.patch_size / grid.patch_spacing + 1e-9).round() as usize;

    let jt = grid.time_step * grid.jitter;
    for &t in &times {
        let push = |pool: &mut Pool, category, pos, [a, b, c]: [f64; 3]| {
            pool.push(CollocationPoint { category, pos, t }, [a, b, c, jt], false)
        };
        // side faces: normal coordinate fixed, jitter in-plane only
        for &y in &fy {
            for &z in &fz {
                push(&mut set.boundary, Category::SideXPlus, [lx, y, z], [0.0, fs, fs]);
            }
        }
        for &x in &fx {
            for &z in &fz {
                push(&mut set.boundary, Category::SideYPlus, [x, ly, z], [fs, 0.0, fs]);
            }
        }
        for &y in &fy {
            for &z in &fz {
                push(&mut set.boundary, Category::SideXMinus, [0.0, y, z], [0.0, fs, fs]);
            }
        }
        for &x in &fx {
            for &z in &fz {
                push(&mut set.boundary, Category::SideYMinus, [x, 0.0, z], [fs, 0.0, fs]);
            }
        }
        for &x in &fx {
            for &y in &fy {
                push(&mut set.boundary, Category::Top, [x, y, lz], [fs, fs, 0.0]);
            }
        }
        let c = process.laser_center(t);
        let ps = grid.patch_spacing * grid.jitter;
        for i in 0..=np {
            for j in 0..=np {
                let x = c[0] - half + i as f64 * grid.patch_spacing;
                let y = c[1] - half + j as f64 * grid.patch_spacing;
                if x < -1e-12 || x > lx + 1e-12 || y < -1e-12 || y > ly + 1e-12 {
                    set.patch_clipped = true;
                    continue;
                }
                let pos = [x.clamp(0.0, lx), y.clamp(0.0, ly), lz];
                if grid.dedup && base_top.contains(&key(pos)) {
                    continue;
                }
                set.boundary.push(CollocationPoint { category: Category::Top, pos, t }, [ps, ps, 0.0, jt], true);
            }
        }
        for &x in &fx {
            for &y in &fy {
                push(&mut set.boundary, Category::Bottom, [x, y, 0.0], [fs, fs, 0.0]);
            }
        }
        let ss = grid.slab_spacing * grid.jitter;
        for &x in &sx {
            for &y in &sy {
                for &z in &slab_z {
                    push(&mut set.interior, Category::Interior, [x, y, z], [ss; 3]);
                }
            }
        }
        let ds = grid.deep_spacing * grid.jitter;
        for &x in &dx {
            for &y in &dy {
                for &z in &deep_z {
                    push(&mut set.interior, Category::Interior, [x, y, z], [ds; 3]);
                }
            }
        }
    }
    let ix = axis(lx, grid.ic_spacing[0]);
    let iy = axis(ly, grid.ic_spacing[1]);
    let iz = axis(lz, grid.ic_spacing[2]);
    let [a, b, c] = grid.ic_spacing.map(|s| s * grid.jitter);
    let ij = [a, b, c, 0.0];
    for &x in &ix {
        for &y in &iy {
            for &z in &iz {
                set.initial.push(
                    CollocationPoint {
                        category: Category::Initial,
                        pos: [x, y, z],
                        t: 0.0,
                    },
                    ij,
                    false,
                );
            }
        }
    }
    Ok(set)
}

impl CollocationSet {
    pub fn interior(&self) -> &[CollocationPoint] {
        &self.interior.points
    }

    pub fn boundary(&self) -> &[CollocationPoint] {
        &self.boundary.points
    }

    pub fn initial(&self) -> &[CollocationPoint] {
        &self.initial.points
    }

    pub fn counts(&self) -> CollocationCounts {
        let mut c = CollocationCounts {
            pde: self.interior.points.len(),
            ic: self.initial.points.len(),
            ..Default::default()
        };
        for p in &self.boundary.points {
            match p.category {
                Category::SideXPlus => c.x_plus += 1,
                Category::SideYPlus => c.y_plus += 1,
                Category::SideXMinus => c.x_minus += 1,
                Category::SideYMinus => c.y_minus += 1,
                Category::Top => c.top += 1,
                Category::Bottom => c.bottom += 1,
                _ => {}
            }
        }
        c
    }

    pub fn all_points(&self) -> impl Iterator<Item = &CollocationPoint> {
        self.interior
            .points
            .iter()
            .chain(&self.boundary.points)
            .chain(&self.initial.points)
    }

    /// Builds a set directly from points, without resampling support beyond
    /// reshuffling.
    pub fn from_points(domain: [f64; 3], points: Vec<CollocationPoint>) -> Self {
        let mut set = CollocationSet {
            times: Vec::new(),
            domain,
            patch_clipped: false,
            t_end: 0.0,
            scan_velocity: [0.0; 2],
            interior: Pool::new(),
            boundary: Pool::new(),
            initial: Pool::new(),
        };
        let mut times: Vec<f64> = Vec::new();
        for p in points {
            let pool = match p.category {
                Category::Interior => &mut set.interior,
                Category::Initial => &mut set.initial,
                _ => &mut set.boundary,
            };
            pool.push(p, [0.0; 4], false);
            set.t_end = set.t_end.max(p.t);
            if !times.contains(&p.t) {
                times.push(p.t);
            }
        }
        times.sort_by(f64::total_cmp);
        set.times = times;
        set
    }

    /// Columnar dump: magic, count, then the category codes and the x, y,
    /// z, t columns as little-endian f64.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let pts: Vec<&CollocationPoint> = self.all_points().collect();
        w.write_all(b"LPBFCOL1")?;
        w.write_all(&(pts.len() as u64).to_le_bytes())?;
        w.write_all(&pts.iter().map(|p| p.category.code()).collect::<Vec<u8>>())?;
        let mut buf = Vec::with_capacity(pts.len() * 8);
        for col in 0..4 {
            buf.clear();
            for p in &pts {
                let v = if col < 3 { p.pos[col] } else { p.t };
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read, domain: [f64; 3]) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() < 16 || &bytes[..8] != b"LPBFCOL1" {
            return Err(Error::format("collocation dump", "bad magic"));
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        if bytes.len() != 16 + n + 32 * n {
            return Err(Error::format("collocation dump", "length mismatch"));
        }
        let cats = &bytes[16..16 + n];
        let col = |c: usize, i: usize| {
            let o = 16 + n + (c * n + i) * 8;
            f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap())
        };
        let mut pts = Vec::with_capacity(n);
        for (i, &code) in cats.iter().enumerate() {
            let category = Category::from_code(code)
                .ok_or_else(|| Error::format("collocation dump", format!("category code {code}")))?;
            pts.push(CollocationPoint {
                category,
                pos: [col(0, i), col(1, i), col(2, i)],
                t: col(3, i),
            });
        }
        Ok(Self::from_points(domain, pts))
    }
}

/// Regenerates the jitter around the base grid and reshuffles every pool.
pub fn resample_pools(set: &CollocationSet, rng: &mut impl Rng) -> CollocationSet {
    let mut out = set.clone();
    for pool in [&mut out.interior, &mut out.boundary, &mut out.initial] {
        let perm = index::sample(rng, pool.base.len(), pool.base.len()).into_vec();
        let mut points = Vec::with_capacity(perm.len());
        for &i in &perm {
            let b = pool.base[i];
            let j = pool.jitter[i];
            let mut t = b.t;
            if j[3] > 0.0 {
                t = (t + rng.gen_range(-j[3]..=j[3])).clamp(0.0, set.t_end);
            }
            let mut pos = b.pos;
            if pool.follows_beam[i] {
                for a in 0..2 {
                    pos[a] += set.scan_velocity[a] * (t - b.t);
                }
            }
            for a in 0..3 {
                if j[a] > 0.0 {
                    pos[a] += rng.gen_range(-j[a]..=j[a]);
                }
                pos[a] = pos[a].clamp(0.0, set.domain[a]);
            }
            points.push(CollocationPoint { pos, t, ..b });
        }
        let base = perm.iter().map(|&i| pool.base[i]).collect();
        let jitter = perm.iter().map(|&i| pool.jitter[i]).collect();
        let follows_beam = perm.iter().map(|&i| pool.follows_beam[i]).collect();
        *pool = Pool {
            base,
            jitter,
            follows_beam,
            points,
        };
    }
    out
}

/// Mini-batch sizes for one optimizer phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSpec {
    pub bc: usize,
    pub ic: usize,
    pub pde: usize,
}

impl BatchSpec {
    pub const ADAM: BatchSpec = BatchSpec {
        bc: 12_000,
        ic: 6_000,
        pde: 20_000,
    };
    pub const LBFGS: BatchSpec = BatchSpec {
        bc: 8_000,
        ic: 4_000,
        pde: 12_000,
    };
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub point: CollocationPoint,
    pub material: MaterialProps,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Batch {
    pub bc: Vec<Sample>,
    pub ic: Vec<Sample>,
    pub pde: Vec<Sample>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.bc.len() + self.ic.len() + self.pde.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Draws each category without replacement (sizes clamped to the pool) and
/// pairs every point with its own uniform material draw.
pub fn draw_batch(set: &CollocationSet, spec: &BatchSpec, space: &MaterialSpace, rng: &mut impl Rng) -> Batch {
    let mut take = |pool: &[CollocationPoint], k: usize| -> Vec<Sample> {
        let k = k.min(pool.len());
        let idx = index::sample(rng, pool.len(), k).into_vec();
        idx.into_iter()
            .map(|i| Sample {
                point: pool[i],
                material: space.sample(rng),
            })
            .collect()
    };
    let bc = take(set.boundary(), spec.bc);
    let ic = take(set.initial(), spec.ic);
    let pde = take(set.interior(), spec.pde);
    Batch { bc, ic, pde }
}

/// Replaces every material draw with a single fixed material.
pub fn with_material(batch: &Batch, m: MaterialProps) -> Batch {
    let fix = |v: &[Sample]| v.iter().map(|s| Sample { material: m, ..*s }).collect();
    Batch {
        bc: fix(&batch.bc),
        ic: fix(&batch.ic),
        pde: fix(&batch.pde),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn paper_face_counts() {
        let set = build_collocation(&ProcessConfig::default(), &GridSpec::paper()).unwrap();
        let c = set.counts();
        assert_eq!(c.x_plus, 4_697);
        assert_eq!(c.x_minus, 4_697);
        assert_eq!(c.y_plus, 17_507);
        assert_eq!(c.y_minus, 17_507);
        assert_eq!(c.top, 65_636);
        assert_eq!(c.bottom, 27_511);
        assert_eq!(c.bc(), 137_555);
        assert!((c.ic as f64 / 909.0 - 1.0).abs() <= 0.02);
        assert!((c.pde as f64 / 416_874.0 - 1.0).abs() <= 0.02);
        assert!(!set.patch_clipped);
    }

    #[test]
    fn desk_is_strictly_smaller() {
        let p = ProcessConfig::default();
        let paper = build_collocation(&p, &GridSpec::paper()).unwrap().counts();
        let desk = build_collocation(&p, &Profile::Desk.grid()).unwrap().counts();
        for (a, b) in [
            (desk.pde, paper.pde),
            (desk.ic, paper.ic),
            (desk.x_plus, paper.x_plus),
            (desk.y_plus, paper.y_plus),
            (desk.top, paper.top),
            (desk.bottom, paper.bottom),
        ] {
            assert!(a < b);
        }
    }

    #[test]
    fn resample_conserves_counts_and_membership() {
        let p = ProcessConfig::default();
        let set = build_collocation(&p, &Profile::Desk.grid()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r = resample_pools(&set, &mut rng);
        assert_eq!(r.counts(), set.counts());
        assert_ne!(r.boundary(), set.boundary());
        for q in r.all_points() {
            assert!(q.category.contains(q.pos, q.t, p.domain, 1e-9), "{q:?}");
            assert!((0.0..=p.t_end).contains(&q.t));
        }
        assert!(r.initial().iter().all(|q| q.t == 0.0));
        // times move by at most a quarter step, and do move
        let dt = Profile::Desk.grid().time_step;
        let off_grid = r
            .interior()
            .iter()
            .map(|q| (q.t / dt - (q.t / dt).round()).abs())
            .inspect(|d| assert!(*d <= 0.25 + 1e-9))
            .filter(|d| *d > 1e-9)
            .count();
        assert!(off_grid > r.interior().len() / 2);
        let mut rng2 = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(resample_pools(&set, &mut rng2), r);
    }

    #[test]
    fn whole_pool_batch_is_a_permutation() {
        let p = ProcessConfig::default();
        let set = build_collocation(&p, &Profile::Desk.grid()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = set.initial().len();
        let b = draw_batch(
            &set,
            &BatchSpec { bc: 0, ic: n, pde: 0 },
            &MaterialSpace::default(),
            &mut rng,
        );
        let mut got: Vec<[i64; 3]> = b.ic.iter().map(|s| key(s.point.pos)).collect();
        let mut want: Vec<[i64; 3]> = set.initial().iter().map(|q| key(q.pos)).collect();
        got.sort();
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn dump_round_trip() {
        let p = ProcessConfig::default();
        let set = build_collocation(&p, &Profile::Desk.grid()).unwrap();
        let mut buf = Vec::new();
        set.write_to(&mut buf).unwrap();
        let back = CollocationSet::read_from(buf.as_slice(), p.domain).unwrap();
        assert_eq!(back.counts(), set.counts());
        assert!(back.all_points().zip(set.all_points()).all(|(a, b)| a == b));
    }
}
