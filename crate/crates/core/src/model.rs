//! Network architectures, input normalization and output scaling.

use crate::autodiff::{
    forward_jets, stack, Dense, Fusion, Jet, JetOrder, JetState, NetInput, NetSpec,
    NetTape, Real, Topology,
};
use crate::error::{Error, Result};
use crate::physics::{rosenthal_tmax, MaterialProps, MaterialSpace, ProcessConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    /// coordinates only, one material per trained model
    NPinn,
    /// coordinates and material properties in a single stack
    PPinn,
    /// separate coordinate and material encoders, concatenated
    Decoupled,
    /// separate encoders with the material branch emitting scale and shift
    DecoupledFilm,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::NPinn => "n-pinn",
            Architecture::PPinn => "p-pinn",
            Architecture::Decoupled => "decoupled",
            Architecture::DecoupledFilm => "decoupled-film",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [
            Architecture::NPinn,
            Architecture::PPinn,
            Architecture::Decoupled,
            Architecture::DecoupledFilm,
        ]
        .into_iter()
        .find(|a| a.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown architecture `{s}`")))
    }

    pub fn uses_material(self) -> bool {
        self != Architecture::NPinn
    }

    pub fn topology(self) -> Topology {
        match self {
            Architecture::NPinn => Topology::Mlp {
                material_inputs: false,
                layers: stack(&[4, 60, 60, 60, 60, 1], true),
            },
            Architecture::PPinn => Topology::Mlp {
                material_inputs: true,
                layers: stack(&[7, 60, 60, 60, 60, 1], true),
            },
            Architecture::Decoupled => Topology::Decoupled {
                coord: stack(&[4, 30, 30, 30], false),
                material: stack(&[3, 30, 30, 30], false),
                fusion: Fusion::Concat,
                head: stack(&[60, 50, 50, 1], true),
            },
            Architecture::DecoupledFilm => Topology::Decoupled {
                coord: stack(&[4, 30, 30, 30], false),
                material: stack(&[3, 30, 30, 60], true),
                fusion: Fusion::Film,
                head: stack(&[30, 50, 50, 1], true),
            },
        }
    }

    /// Network graph; the learned-scale arm adds a small material-only head.
    pub fn spec(self, scaling: ScalingMode) -> NetSpec {
        let mut spec = NetSpec::new(self.topology());
        if scaling == ScalingMode::LearnedTmax {
            spec.aux_head = Some(stack(&[3, 16, 1], true));
        }
        spec
    }
}

/// Learnable parameters of one architecture, stored flat.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub architecture: Architecture,
    pub spec: NetSpec,
    pub values: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(architecture: Architecture, scaling: ScalingMode) -> Self {
        let spec = architecture.spec(scaling);
        let values = vec![0.0; spec.param_count()];
        Self {
            architecture,
            spec,
            values,
        }
    }

    pub fn param_count(&self) -> usize {
        self.values.len()
    }

    /// Count of the main network, excluding any auxiliary scale head.
    pub fn main_param_count(&self) -> usize {
        self.spec.main_param_count()
    }

    pub fn has_aux(&self) -> bool {
        self.spec.aux_head.is_some()
    }

    /// `(weights, bias)` slices of every layer, in parameter order.
    pub fn layers(&self) -> Vec<(Dense, &[f64], &[f64])> {
        let offsets = self.spec.offsets();
        let mut out = Vec::new();
        for ((_, layers), offs) in self.spec.subnets().iter().zip(&offsets) {
            for (d, &o) in layers.iter().zip(offs) {
                let nw = d.fan_in * d.fan_out;
                out.push((*d, &self.values[o..o + nw], &self.values[o + nw..o + d.param_count()]));
            }
        }
        out
    }

    pub fn descriptor(&self) -> String {
        format!(
            "lpbf-pinn-params v1 architecture={} aux={} count={}",
            self.architecture.name(),
            if self.has_aux() { "learned-tmax" } else { "none" },
            self.values.len()
        )
    }

    /// Descriptor line, newline, then every parameter as little-endian f64
    /// in layer order (weights row-major `fan_out × fan_in`, then bias).
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{}", self.descriptor())?;
        let mut buf = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let nl = bytes
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| Error::format("checkpoint", "missing descriptor line"))?;
        let header = std::str::from_utf8(&bytes[..nl]).map_err(|e| Error::format("checkpoint", e.to_string()))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("lpbf-pinn-params") || fields.next() != Some("v1") {
            return Err(Error::format("checkpoint", format!("unrecognized descriptor `{header}`")));
        }
        let (mut arch, mut aux, mut count) = (None, None, None);
        for f in fields {
            match f.split_once('=') {
                Some(("architecture", v)) => arch = Some(Architecture::parse(v)?),
                Some(("aux", v)) => aux = Some(v == "learned-tmax"),
                Some(("count", v)) => {
                    count = Some(v.parse::<usize>().map_err(|e| Error::format("checkpoint", e.to_string()))?)
                }
                _ => return Err(Error::format("checkpoint", format!("unexpected field `{f}`"))),
            }
        }
        let (Some(arch), Some(aux), Some(count)) = (arch, aux, count) else {
            return Err(Error::format("checkpoint", "incomplete descriptor"));
        };
        let scaling = if aux {
            ScalingMode::LearnedTmax
        } else {
            ScalingMode::PhysicsGuided
        };
        let mut p = Self::zeros(arch, scaling);
        let body = &bytes[nl + 1..];
        if count != p.values.len() || body.len() != count * 8 {
            return Err(Error::format(
                "checkpoint",
                format!("expected {} parameters, found {} bytes", p.values.len(), body.len()),
            ));
        }
        for (v, c) in p.values.iter_mut().zip(body.chunks_exact(8)) {
            *v = f64::from_le_bytes(c.try_into().unwrap());
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Glorot-uniform weights, zero biases, deterministic per seed.
pub fn init_params(architecture: Architecture, scaling: ScalingMode, seed: u64) -> NetworkParams {
    let mut p = NetworkParams::zeros(architecture, scaling);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offsets = p.spec.offsets();
    let subnets: Vec<Vec<Dense>> = p.spec.subnets().iter().map(|(_, l)| l.to_vec()).collect();
    for (layers, offs) in subnets.iter().zip(&offsets) {
        for (d, &o) in layers.iter().zip(offs) {
            let bound = glorot_bound(d);
            for w in &mut p.values[o..o + d.fan_in * d.fan_out] {
                *w = rng.gen_range(-bound..bound);
            }
        }
    }
    p
}

pub fn glorot_bound(d: &Dense) -> f64 {
    (6.0 / (d.fan_in + d.fan_out) as f64).sqrt()
}

/// Affine maps of coordinates and material properties onto `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub domain: [f64; 3],
    pub t_end: f64,
    pub material: [[f64; 2]; 3],
}

impl Normalizer {
    pub fn new(process: &ProcessConfig, space: &MaterialSpace) -> Self {
        Self {
            domain: process.domain,
            t_end: process.t_end,
            material: space.bounds(),
        }
    }

    fn map(v: f64, lo: f64, hi: f64) -> f64 {
        2.0 * (v - lo) / (hi - lo) - 1.0
    }

    fn unmap(u: f64, lo: f64, hi: f64) -> f64 {
        lo + 0.5 * (u + 1.0) * (hi - lo)
    }

    /// `(x, y, z, t)` normalized.
    pub fn coords(&self, pos: [f64; 3], t: f64) -> [f64; 4] {
        [
            Self::map(pos[0], 0.0, self.domain[0]),
            Self::map(pos[1], 0.0, self.domain[1]),
            Self::map(pos[2], 0.0, self.domain[2]),
            Self::map(t, 0.0, self.t_end),
        ]
    }

    pub fn coords_inverse(&self, u: [f64; 4]) -> ([f64; 3], f64) {
        (
            [
                Self::unmap(u[0], 0.0, self.domain[0]),
                Self::unmap(u[1], 0.0, self.domain[1]),
                Self::unmap(u[2], 0.0, self.domain[2]),
            ],
            Self::unmap(u[3], 0.0, self.t_end),
        )
    }

    pub fn material(&self, m: &MaterialProps) -> [f64; 3] {
        let a = m.as_array();
        [0, 1, 2].map(|i| Self::map(a[i], self.material[i][0], self.material[i][1]))
    }

    pub fn material_inverse(&self, u: [f64; 3]) -> MaterialProps {
        MaterialProps::from_array([0, 1, 2].map(|i| Self::unmap(u[i], self.material[i][0], self.material[i][1])))
    }

    /// Chain-rule seeds `d(normalized)/d(physical)` for `(x, y, z, t)`.
    pub fn coord_scale(&self) -> [f64; 4] {
        [
            2.0 / self.domain[0],
            2.0 / self.domain[1],
            2.0 / self.domain[2],
            2.0 / self.t_end,
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ScalingMode {
    /// network output used directly as temperature
    Raw,
    /// `T∞ + softplus(u)`
    SoftplusOnly,
    /// `T∞ + T_max·softplus(u)` with a fixed `T_max`
    FixedTmax(f64),
    /// `T∞ + S(λ)·softplus(u)` with `S` produced by an auxiliary head
    LearnedTmax,
    /// `T∞ + κ·T_max(λ)·softplus(u)` with the Rosenthal peak rise
    PhysicsGuided,
}

impl ScalingMode {
    pub fn name(&self) -> String {
        match self {
            ScalingMode::Raw => "raw".into(),
            ScalingMode::SoftplusOnly => "softplus-only".into(),
            ScalingMode::FixedTmax(v) => format!("fixed-tmax:{v}"),
            ScalingMode::LearnedTmax => "learned-tmax".into(),
            ScalingMode::PhysicsGuided => "physics-guided".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "raw" => ScalingMode::Raw,
            "softplus-only" => ScalingMode::SoftplusOnly,
            "learned-tmax" => ScalingMode::LearnedTmax,
            "physics-guided" => ScalingMode::PhysicsGuided,
            _ => match s.strip_prefix("fixed-tmax:") {
                Some(v) => ScalingMode::FixedTmax(
                    v.parse()
                        .map_err(|_| Error::Config(format!("bad fixed T_max in `{s}`")))?,
                ),
                None => return Err(Error::Config(format!("unknown scaling mode `{s}`"))),
            },
        })
    }
}

impl TryFrom<String> for ScalingMode {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Self::parse(&s)
    }
}

impl From<ScalingMode> for String {
    fn from(m: ScalingMode) -> String {
        m.name()
    }
}

/// Multiplier applied to the auxiliary head output in the learned-scale arm.
pub const LEARNED_TMAX_UNIT: f64 = 1000.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    pub mode: ScalingMode,
    pub kappa: f64,
    pub epsilon: f64,
    pub clip_ceiling: f64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            mode: ScalingMode::PhysicsGuided,
            kappa: 1.5,
            epsilon: 1e-3,
            clip_ceiling: 1e6,
        }
    }
}

impl ScalingConfig {
    pub fn validate(&self, process: &ProcessConfig) -> Result<()> {
        if !(self.kappa >= 1.0) {
            return Err(Error::Config(format!("kappa must be ≥ 1, got {}", self.kappa)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.clip_ceiling >= process.t_ambient) {
            return Err(Error::Config("clip ceiling below ambient temperature".into()));
        }
        if let ScalingMode::FixedTmax(v) = self.mode {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("fixed T_max must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Material-dependent multiplier `S`; `None` for the learned arm and raw
    /// output.
    pub fn fixed_scale(&self, m: &MaterialProps, process: &ProcessConfig) -> Result<Option<f64>> {
        let s = match self.mode {
            ScalingMode::Raw | ScalingMode::LearnedTmax => return Ok(None),
            ScalingMode::SoftplusOnly => 1.0,
            ScalingMode::FixedTmax(v) => v,
            ScalingMode::PhysicsGuided => self.kappa * rosenthal_tmax(m, process)?,
        };
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::DegenerateScale(s));
        }
        Ok(Some(s))
    }
}

/// Maps a raw output jet to physical temperature in K.
///
/// `aux` is the auxiliary head output and is only read by the learned arm.
pub fn scale_output<R: Real>(
    raw: &Jet<R>,
    m: &MaterialProps,
    process: &ProcessConfig,
    cfg: &ScalingConfig,
    aux: Option<R>,
) -> Result<Jet<R>> {
    if cfg.mode == ScalingMode::Raw {
        return Ok(*raw);
    }
    let s = match cfg.fixed_scale(m, process)? {
        Some(s) => raw.value.lift(s),
        None => {
            let a = aux.ok_or_else(|| Error::Config("learned scale requires an auxiliary head".into()))?;
            let s = a.softplus() * LEARNED_TMAX_UNIT;
            if !(s.val() > 0.0 && s.val().is_finite()) {
                return Err(Error::DegenerateScale(s.val()));
            }
            s
        }
    };
    Ok(raw
        .softplus()
        .add_const(cfg.epsilon)
        .scale(s)
        .add_const(process.t_ambient)
        .clip_max(cfg.clip_ceiling))
}

/// Raw network output jet at a physical point, derivatives in SI units.
pub fn forward_raw(params: &NetworkParams, norm: &Normalizer, pos: [f64; 3], t: f64, m: &MaterialProps) -> JetState {
    forward_jets(
        &params.spec,
        &params.values,
        norm.coords(pos, t),
        norm.material(m),
        norm.coord_scale(),
    )
}

/// Trained network plus everything needed to turn it into temperatures.
#[derive(Clone, Debug)]
pub struct Surrogate {
    pub params: NetworkParams,
    pub normalizer: Normalizer,
    pub scaling: ScalingConfig,
    pub process: ProcessConfig,
}

impl Surrogate {
    /// Temperatures at many points for one material.
    pub fn temperatures(&self, points: &[([f64; 3], f64)], m: &MaterialProps) -> Result<Vec<f64>> {
        let lam = self.normalizer.material(m);
        let scale = self.scaling.fixed_scale(m, &self.process)?;
        let mut out = Vec::with_capacity(points.len());
        for chunk in points.chunks(crate::autodiff::CHUNK) {
            let input = NetInput {
                coords: chunk.iter().map(|(p, t)| self.normalizer.coords(*p, *t)).collect(),
                material: vec![lam; chunk.len()],
                coord_scale: self.normalizer.coord_scale(),
            };
            let tape = NetTape::forward(&self.params.spec, &self.params.values, &input, JetOrder::Value);
            let raw = tape.output().ch(0);
            for (i, &u) in raw.iter().enumerate() {
                let t = match (self.scaling.mode, scale) {
                    (ScalingMode::Raw, _) => u,
                    (_, Some(s)) => self.finish(u, s),
                    (_, None) => {
                        let a = tape.aux().map(|a| a[i]).unwrap_or(0.0);
                        self.finish(u, crate::autodiff::tape::softplus(a) * LEARNED_TMAX_UNIT)
                    }
                };
                out.push(t);
            }
        }
        Ok(out)
    }

    fn finish(&self, u: f64, s: f64) -> f64 {
        (self.process.t_ambient + s * (crate::autodiff::tape::softplus(u) + self.scaling.epsilon))
            .min(self.scaling.clip_ceiling)
    }

    pub fn temperature(&self, pos: [f64; 3], t: f64, m: &MaterialProps) -> Result<f64> {
        Ok(self.temperatures(&[(pos, t)], m)?[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn parameter_counts() {
        let n = |a: Architecture| NetworkParams::zeros(a, ScalingMode::PhysicsGuided).param_count();
        assert_eq!(n(Architecture::NPinn), 11_341);
        assert_eq!(n(Architecture::PPinn), 11_521);
        assert_eq!(n(Architecture::Decoupled), 9_641);
        let learned = NetworkParams::zeros(Architecture::Decoupled, ScalingMode::LearnedTmax);
        assert_eq!(learned.main_param_count(), 9_641);
        assert!(learned.param_count() > 9_641);
        for a in [
            Architecture::NPinn,
            Architecture::PPinn,
            Architecture::Decoupled,
            Architecture::DecoupledFilm,
        ] {
            a.spec(ScalingMode::LearnedTmax).validate().unwrap();
        }
    }

    #[test]
    fn branch_sizes() {
        let p = NetworkParams::zeros(Architecture::Decoupled, ScalingMode::PhysicsGuided);
        let sizes: Vec<usize> = p
            .spec
            .subnets()
            .iter()
            .map(|(_, l)| l.iter().map(Dense::param_count).sum())
            .collect();
        assert_eq!(sizes, vec![2_010, 1_980, 5_651]);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = init_params(Architecture::Decoupled, ScalingMode::PhysicsGuided, 0);
        let b = init_params(Architecture::Decoupled, ScalingMode::PhysicsGuided, 0);
        let c = init_params(Architecture::Decoupled, ScalingMode::PhysicsGuided, 1);
        assert_eq!(a, b);
        assert_ne!(a.values, c.values);
        assert_eq!(a.values.len(), 9_641);
        for (d, w, bias) in a.layers() {
            let bound = glorot_bound(&d);
            assert!(w.iter().all(|v| v.abs() <= bound));
            assert!(bias.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn zero_weights_give_zero_jet() {
        let p = NetworkParams::zeros(Architecture::Decoupled, ScalingMode::PhysicsGuided);
        let norm = Normalizer::new(&ProcessConfig::default(), &MaterialSpace::default());
        let j = forward_raw(&p, &norm, [0.01, 0.002, 0.004], 1.0, &MaterialSpace::default().midpoint());
        assert_eq!(j, JetState::constant(0.0));
    }

    #[test]
    fn softplus_only_at_zero() {
        let cfg = ScalingConfig {
            mode: ScalingMode::SoftplusOnly,
            ..Default::default()
        };
        let m = MaterialSpace::default().midpoint();
        let t = scale_output(&JetState::constant(0.0), &m, &ProcessConfig::default(), &cfg, None).unwrap();
        assert_relative_eq!(t.value, 300.0 + std::f64::consts::LN_2 + 1e-3, max_relative = 1e-15);
    }

    #[test]
    fn physics_guided_scale_for_copper() {
        let cu = MaterialProps::new(8960.0, 385.0, 401.0).unwrap();
        let cfg = ScalingConfig::default();
        let s = cfg.fixed_scale(&cu, &ProcessConfig::default()).unwrap().unwrap();
        assert_relative_eq!(s, 79.4, max_relative = 1e-3);
    }

    #[test]
    fn clip_saturates() {
        let cfg = ScalingConfig {
            clip_ceiling: 1000.0,
            ..Default::default()
        };
        let m = MaterialSpace::default().midpoint();
        let raw = Jet {
            d_dx: [5.0, 0.0, 0.0],
            ..JetState::constant(50.0)
        };
        let t = scale_output(&raw, &m, &ProcessConfig::default(), &cfg, None).unwrap();
        assert_eq!(t.value, 1000.0);
        assert_eq!(t.d_dx, [0.0; 3]);
    }

    #[test]
    fn normalizer_round_trip() {
        let n = Normalizer::new(&ProcessConfig::default(), &MaterialSpace::default());
        let (p, t) = n.coords_inverse(n.coords([0.013, 0.007, 0.0051], 2.2));
        assert_relative_eq!(p[0], 0.013, max_relative = 1e-12);
        assert_relative_eq!(p[2], 0.0051, max_relative = 1e-12);
        assert_relative_eq!(t, 2.2, max_relative = 1e-12);
        let m = MaterialProps::new(4430.0, 560.0, 6.7).unwrap();
        let back = n.material_inverse(n.material(&m));
        for (a, b) in back.as_array().iter().zip(m.as_array()) {
            assert_relative_eq!(*a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = init_params(Architecture::PPinn, ScalingMode::PhysicsGuided, 3);
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        let q = NetworkParams::read_from(buf.as_slice()).unwrap();
        assert_eq!(p, q);
        buf.truncate(buf.len() - 8);
        assert!(NetworkParams::read_from(buf.as_slice()).is_err());
    }

    #[test]
    fn scaling_mode_names_round_trip() {
        for m in [
            ScalingMode::Raw,
            ScalingMode::SoftplusOnly,
            ScalingMode::FixedTmax(2500.0),
            ScalingMode::LearnedTmax,
            ScalingMode::PhysicsGuided,
        ] {
            assert_eq!(ScalingMode::parse(&m.name()).unwrap(), m);
        }
    }
}
