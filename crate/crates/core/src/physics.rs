//! Heat equation, boundary operators, laser source and material space.

use crate::autodiff::{Jet, Real};
use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const STEFAN_BOLTZMANN: f64 = 5.670374419e-8;

/// Thermophysical properties of one alloy, SI units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialProps {
    pub rho: f64,
    pub cp: f64,
    pub k: f64,
}

impl MaterialProps {
    pub fn new(rho: f64, cp: f64, k: f64) -> Result<Self> {
        let m = Self { rho, cp, k };
        if [rho, cp, k].iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(m)
        } else {
            Err(Error::Config(format!("material properties must be positive, got {m:?}")))
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.rho, self.cp, self.k]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self {
            rho: a[0],
            cp: a[1],
            k: a[2],
        }
    }

    pub fn diffusivity(&self) -> f64 {
        diffusivity(self)
    }

    pub fn heat_capacity(&self) -> f64 {
        self.rho * self.cp
    }
}

/// Thermal diffusivity `k / (ρ C_p)` in m²/s.
pub fn diffusivity(m: &MaterialProps) -> f64 {
    m.k / (m.rho * m.cp)
}

/// Closed box of admissible material vectors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSpace {
    pub rho: [f64; 2],
    pub cp: [f64; 2],
    pub k: [f64; 2],
}

impl Default for MaterialSpace {
    fn default() -> Self {
        Self {
            rho: [3000.0, 10000.0],
            cp: [300.0, 1000.0],
            k: [3.0, 50.0],
        }
    }
}

impl MaterialSpace {
    pub fn bounds(&self) -> [[f64; 2]; 3] {
        [self.rho, self.cp, self.k]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in ["rho", "cp", "k"].iter().zip(self.bounds()) {
            if !(lo > 0.0 && lo < hi && hi.is_finite()) {
                return Err(Error::Config(format!("material space {name}: need 0 < lo < hi, got [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, m: &MaterialProps) -> bool {
        self.bounds()
            .iter()
            .zip(m.as_array())
            .all(|([lo, hi], v)| (*lo..=*hi).contains(&v))
    }

    pub fn sample(&self, rng: &mut impl Rng) -> MaterialProps {
        let b = self.bounds();
        MaterialProps::from_array([0, 1, 2].map(|i| rng.gen_range(b[i][0]..=b[i][1])))
    }

    pub fn midpoint(&self) -> MaterialProps {
        MaterialProps::from_array(self.bounds().map(|[lo, hi]| 0.5 * (lo + hi)))
    }
}

/// Process, ambient and domain constants. Lengths in metres.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessConfig {
    pub domain: [f64; 3],
    pub power: f64,
    pub absorptivity: f64,
    pub beam_radius: f64,
    pub scan_speed: f64,
    pub t_end: f64,
    pub start: [f64; 3],
    pub t_initial: f64,
    pub t_ambient: f64,
    pub h_conv: f64,
    pub emissivity: f64,
    pub stefan_boltzmann: f64,
}

impl Default for ProcessConfig {
    fn default() -> Self {
        Self {
            domain: [0.040, 0.010, 0.006],
            power: 500.0,
            absorptivity: 0.4,
            beam_radius: 0.0015,
            scan_speed: 0.010,
            t_end: 3.0,
            start: [0.005, 0.005, 0.006],
            t_initial: 300.0,
            t_ambient: 300.0,
            h_conv: 50.0,
            emissivity: 0.3,
            stefan_boltzmann: STEFAN_BOLTZMANN,
        }
    }
}

impl ProcessConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if self.domain.iter().any(|d| !(*d > 0.0)) {
            return bad("domain extents must be positive");
        }
        if !(self.beam_radius > 0.0) || !(self.t_end > 0.0) {
            return bad("beam radius and end time must be positive");
        }
        if self.power < 0.0 || !(0.0..=1.0).contains(&self.absorptivity) {
            return bad("power must be non-negative and absorptivity within [0, 1]");
        }
        if self.h_conv < 0.0 || !(0.0..=1.0).contains(&self.emissivity) {
            return bad("convection coefficient and emissivity out of range");
        }
        if self.t_initial != self.t_ambient {
            return bad("initial and ambient temperatures must coincide");
        }
        let end = self.laser_center(self.t_end);
        for p in [self.start, end] {
            if p[0] < 0.0 || p[0] > self.domain[0] || p[1] < 0.0 || p[1] > self.domain[1] {
                return bad("laser path leaves the top face");
            }
        }
        Ok(())
    }

    pub fn laser_center(&self, t: f64) -> [f64; 3] {
        [self.start[0] + self.scan_speed * t, self.start[1], self.start[2]]
    }

    /// Absorbed Gaussian surface flux at in-plane position `(x, y)`, W/m².
    pub fn laser_flux(&self, x: f64, y: f64, t: f64) -> f64 {
        laser_flux([x, y], t, self)
    }

    pub fn peak_flux(&self) -> f64 {
        2.0 * self.absorptivity * self.power / (PI * self.beam_radius * self.beam_radius)
    }

    /// Outward convective plus radiative loss at surface temperature `t`.
    pub fn surface_loss<R: Real>(&self, t: R) -> R {
        let t0 = self.t_ambient;
        (t - t0) * self.h_conv + (t.powi(4) - t0.powi(4)) * (self.stefan_boltzmann * self.emissivity)
    }
}

pub fn laser_flux(xy: [f64; 2], t: f64, process: &ProcessConfig) -> f64 {
    let c = process.laser_center(t);
    let r = process.beam_radius;
    let d2 = (xy[0] - c[0]).powi(2) + (xy[1] - c[1]).powi(2);
    process.peak_flux() * (-2.0 * d2 / (r * r)).exp()
}

/// Peak temperature rise `ηP / (2π k r)` of the simplified Rosenthal solution.
pub fn rosenthal_tmax(m: &MaterialProps, process: &ProcessConfig) -> Result<f64> {
    if !(m.k > 0.0) {
        return Err(Error::DegenerateScale(m.k));
    }
    Ok(process.absorptivity * process.power / (2.0 * PI * m.k * process.beam_radius))
}

/// Quasi-steady Rosenthal temperature for a moving point source on a
/// semi-infinite body, with `ξ = x − x_laser(t)` in the moving frame.
/// The distance is floored at the beam radius so the centre stays finite.
pub fn rosenthal_profile(m: &MaterialProps, process: &ProcessConfig, pos: [f64; 3], t: f64) -> f64 {
    let c = process.laser_center(t);
    let xi = pos[0] - c[0];
    let dist = (xi * xi + (pos[1] - c[1]).powi(2) + (pos[2] - c[2]).powi(2))
        .sqrt()
        .max(process.beam_radius);
    let alpha = diffusivity(m);
    let q = process.absorptivity * process.power;
    process.t_ambient
        + q / (2.0 * PI * m.k * dist) * (-process.scan_speed * (xi + dist) / (2.0 * alpha)).exp()
}

/// Region a collocation point belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Interior,
    Top,
    SideXPlus,
    SideXMinus,
    SideYPlus,
    SideYMinus,
    Bottom,
    Initial,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::Interior,
        Category::Top,
        Category::SideXPlus,
        Category::SideXMinus,
        Category::SideYPlus,
        Category::SideYMinus,
        Category::Bottom,
        Category::Initial,
    ];

    pub const FACES: [Category; 6] = [
        Category::SideXPlus,
        Category::SideYPlus,
        Category::SideXMinus,
        Category::SideYMinus,
        Category::Top,
        Category::Bottom,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }

    pub fn is_boundary(self) -> bool {
        !matches!(self, Category::Interior | Category::Initial)
    }

    /// Outward unit normal as `(axis, sign)`.
    pub fn normal(self) -> Option<(usize, f64)> {
        match self {
            Category::SideXPlus => Some((0, 1.0)),
            Category::SideXMinus => Some((0, -1.0)),
            Category::SideYPlus => Some((1, 1.0)),
            Category::SideYMinus => Some((1, -1.0)),
            Category::Top => Some((2, 1.0)),
            Category::Bottom => Some((2, -1.0)),
            _ => None,
        }
    }

    /// Whether `pos` lies on this region within `tol` metres.
    pub fn contains(self, pos: [f64; 3], t: f64, domain: [f64; 3], tol: f64) -> bool {
        let inside = (0..3).all(|a| pos[a] >= -tol && pos[a] <= domain[a] + tol);
        if !inside {
            return false;
        }
        match self {
            Category::Interior => true,
            Category::Initial => t.abs() <= tol,
            _ => {
                let (axis, sign) = self.normal().unwrap();
                let plane = if sign > 0.0 { domain[axis] } else { 0.0 };
                (pos[axis] - plane).abs() <= tol
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Interior => "interior",
            Category::Top => "top",
            Category::SideXPlus => "x+",
            Category::SideXMinus => "x-",
            Category::SideYPlus => "y+",
            Category::SideYMinus => "y-",
            Category::Bottom => "bottom",
            Category::Initial => "initial",
        }
    }
}

/// `ρ C_p ∂T/∂t − k ∇²T` in W/m³.
pub fn pde_residual<R: Real>(jet: &Jet<R>, m: &MaterialProps) -> R {
    jet.d_dt * m.heat_capacity() - jet.laplacian() * m.k
}

/// Boundary residual: W/m² on flux faces, K on the Dirichlet bottom.
///
/// Absorbed laser flux enters through the top face; convection and
/// radiation leave through the top and sides.
pub fn bc_residual<R: Real>(
    category: Category,
    pos: [f64; 3],
    t: f64,
    jet: &Jet<R>,
    m: &MaterialProps,
    process: &ProcessConfig,
) -> Result<R> {
    match category {
        Category::Bottom => Ok(jet.value - process.t_initial),
        Category::Interior | Category::Initial => Err(Error::BadCategory(category)),
        face => {
            let (axis, sign) = face.normal().unwrap();
            let conduction_out = -(jet.d_dx[axis] * (m.k * sign));
            let loss = process.surface_loss(jet.value);
            let r = conduction_out - loss;
            Ok(if face == Category::Top {
                r + laser_flux([pos[0], pos[1]], t, process)
            } else {
                r
            })
        }
    }
}

/// `T − T₀` in K.
pub fn ic_residual<R: Real>(jet: &Jet<R>, process: &ProcessConfig) -> R {
    jet.value - process.t_initial
}

/// Named alloys with their property triples.
#[derive(Clone, Debug, PartialEq)]
pub struct MaterialLibrary {
    entries: Vec<(String, MaterialProps)>,
}

const BUILTIN_LIBRARY: &str = include_str!("../data/materials.txt");

fn normalize_name(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

impl Default for MaterialLibrary {
    fn default() -> Self {
        Self::parse(BUILTIN_LIBRARY).expect("builtin material library parses")
    }
}

impl MaterialLibrary {
    /// Whitespace-separated `name rho cp k` rows; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(Error::format("material library", format!("line {}: expected 4 fields", n + 1)));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::format("material library", format!("line {}: {e}", n + 1)))
            };
            entries.push((f[0].to_string(), MaterialProps::new(num(f[1])?, num(f[2])?, num(f[3])?)?));
        }
        Ok(Self { entries })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, name: &str) -> Result<MaterialProps> {
        let key = normalize_name(name);
        self.entries
            .iter()
            .find(|(n, _)| normalize_name(n) == key)
            .map(|(_, m)| *m)
            .ok_or_else(|| Error::UnknownMaterial(name.to_string()))
    }

    pub fn entries(&self) -> &[(String, MaterialProps)] {
        &self.entries
    }
}
