//! Explicit finite-difference reference solver, error metric and probes.

use crate::error::{Error, Result};
use crate::model::Surrogate;
use crate::physics::{MaterialProps, ProcessConfig};
use std::f64::consts::PI;
use std::io::Write;

/// Boundary treatment of one face.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FaceBc {
    /// convection and radiation to ambient, plus the laser on the top face
    Flux,
    /// fixed temperature
    Dirichlet(f64),
    /// zero normal flux
    Adiabatic,
}

/// Faces indexed `2·axis + side`, side 0 at the origin and 1 at the far end.
pub type Faces = [FaceBc; 6];

pub const BARE_PLATE: Faces = [
    FaceBc::Flux,
    FaceBc::Flux,
    FaceBc::Flux,
    FaceBc::Flux,
    FaceBc::Dirichlet(f64::NAN),
    FaceBc::Flux,
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitialField {
    Uniform(f64),
    /// `base + amplitude·sin(π x_axis / L_axis)`
    Sine { axis: usize, base: f64, amplitude: f64 },
}

/// Regular node grid covering `[0, L]` per axis; an axis with one node is
/// inactive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub n: [usize; 3],
    pub spacing: [f64; 3],
}

impl Grid {
    pub fn covering(extents: [f64; 3], h: f64) -> Self {
        let n = extents.map(|l| if l > 0.0 { (l / h).round() as usize + 1 } else { 1 });
        let spacing = [0, 1, 2].map(|a| if n[a] > 1 { extents[a] / (n[a] - 1) as f64 } else { 0.0 });
        Self { n, spacing }
    }

    pub fn len(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n[0] * (j + self.n[1] * k)
    }

    pub fn position(&self, idx: usize) -> [f64; 3] {
        let i = idx % self.n[0];
        let j = (idx / self.n[0]) % self.n[1];
        let k = idx / (self.n[0] * self.n[1]);
        [
            i as f64 * self.spacing[0],
            j as f64 * self.spacing[1],
            k as f64 * self.spacing[2],
        ]
    }

    pub fn extents(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| (self.n[a] - 1) as f64 * self.spacing[a])
    }

    fn active(&self) -> impl Iterator<Item = usize> + '_ {
        (0..3).filter(|a| self.n[*a] > 1)
    }
}

/// Node temperatures at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct TemperatureField {
    pub grid: Grid,
    pub time: f64,
    pub values: Vec<f64>,
    pub material: MaterialProps,
}

impl TemperatureField {
    pub fn points(&self) -> Vec<([f64; 3], f64)> {
        (0..self.values.len()).map(|i| (self.grid.position(i), self.time)).collect()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Trilinear interpolation; errors outside the grid.
    pub fn sample(&self, loc: [f64; 3]) -> Result<f64> {
        let ext = self.grid.extents();
        let tol = 1e-12;
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            if loc[a] < -tol || loc[a] > ext[a] + tol {
                return Err(Error::OutOfDomain(loc));
            }
            if self.grid.n[a] == 1 {
                continue;
            }
            let u = (loc[a] / self.grid.spacing[a]).clamp(0.0, (self.grid.n[a] - 1) as f64);
            let i = (u.floor() as usize).min(self.grid.n[a] - 2);
            base[a] = i;
            frac[a] = u - i as f64;
        }
        let mut acc = 0.0;
        for corner in 0..8 {
            let off = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let mut w = 1.0;
            let mut idx = [0usize; 3];
            for a in 0..3 {
                let f = if off[a] == 1 { frac[a] } else { 1.0 - frac[a] };
                w *= f;
                idx[a] = (base[a] + off[a]).min(self.grid.n[a] - 1);
            }
            if w != 0.0 {
                acc += w * self.values[self.grid.index(idx[0], idx[1], idx[2])];
            }
        }
        Ok(acc)
    }

    /// Trapezoid-weighted `Σ ρ C_p T ΔV` over the active axes.
    pub fn enthalpy(&self) -> f64 {
        let g = &self.grid;
        let mut sum = 0.0;
        for k in 0..g.n[2] {
            for j in 0..g.n[1] {
                for i in 0..g.n[0] {
                    let mut w = 1.0;
                    for (a, ix) in [i, j, k].into_iter().enumerate() {
                        if g.n[a] > 1 {
                            w *= g.spacing[a] * if ix == 0 || ix == g.n[a] - 1 { 0.5 } else { 1.0 };
                        }
                    }
                    sum += w * self.values[g.index(i, j, k)];
                }
            }
        }
        sum * self.material.heat_capacity()
    }
}

#[derive(Clone, Debug)]
pub struct FdmProblem {
    pub process: ProcessConfig,
    pub material: MaterialProps,
    pub grid: Grid,
    pub faces: Faces,
    pub initial: InitialField,
    pub t_end: f64,
    pub output_interval: f64,
    /// explicit step; `None` selects 0.9 of the stability bound
    pub dt: Option<f64>,
}

pub const SAFETY: f64 = 0.9;

impl FdmProblem {
    /// The plate under a moving laser: flux on the top and sides, Dirichlet
    /// bottom at the initial temperature.
    pub fn bare_plate(process: &ProcessConfig, material: MaterialProps, spacing: f64) -> Self {
        let mut faces = BARE_PLATE;
        faces[4] = FaceBc::Dirichlet(process.t_initial);
        Self {
            grid: Grid::covering(process.domain, spacing),
            process: process.clone(),
            material,
            faces,
            initial: InitialField::Uniform(process.t_initial),
            t_end: process.t_end,
            output_interval: 0.1,
            dt: None,
        }
    }

    /// Largest stable explicit step `1 / (2α Σ h⁻²)`.
    pub fn stability_bound(&self) -> f64 {
        let alpha = self.material.diffusivity();
        let inv: f64 = self.grid.active().map(|a| self.grid.spacing[a].powi(-2)).sum();
        1.0 / (2.0 * alpha * inv)
    }

    /// Step actually used, a whole fraction of the output interval.
    pub fn time_step(&self) -> Result<f64> {
        let bound = self.stability_bound();
        match self.dt {
            Some(dt) if dt > bound => Err(Error::UnstableStep { dt, bound }),
            Some(dt) => {
                let ratio = self.output_interval / dt;
                if !(dt > 0.0) || (ratio - ratio.round()).abs() > 1e-9 * ratio {
                    return Err(Error::Config(format!(
                        "time step {dt} s must divide the output interval {} s",
                        self.output_interval
                    )));
                }
                Ok(dt)
            }
            None => {
                let steps = (self.output_interval / (SAFETY * bound)).ceil().max(1.0);
                Ok(self.output_interval / steps)
            }
        }
    }

    fn initial_value(&self, pos: [f64; 3]) -> f64 {
        match self.initial {
            InitialField::Uniform(t) => t,
            InitialField::Sine { axis, base, amplitude } => {
                let l = self.grid.extents()[axis];
                base + amplitude * (PI * pos[axis] / l).sin()
            }
        }
    }
}

/// Advances the problem and returns snapshots at every output interval,
/// starting with the initial field.
pub fn solve(problem: &FdmProblem) -> Result<Vec<TemperatureField>> {
    let g = problem.grid;
    let dt = problem.time_step()?;
    let per_output = (problem.output_interval / dt).round().max(1.0) as usize;
    let outputs = (problem.t_end / problem.output_interval + 1e-9).floor() as usize;
    let m = problem.material;
    let p = &problem.process;
    let alpha = m.diffusivity();
    let n = g.len();

    // per-node Dirichlet value, NaN when free
    let mut fixed = vec![f64::NAN; n];
    let mut t = vec![0.0; n];
    for idx in 0..n {
        t[idx] = problem.initial_value(g.position(idx));
    }
    let coord = |idx: usize| [idx % g.n[0], (idx / g.n[0]) % g.n[1], idx / (g.n[0] * g.n[1])];
    for idx in 0..n {
        let c = coord(idx);
        for a in g.active().collect::<Vec<_>>() {
            for side in 0..2 {
                let on = if side == 0 { c[a] == 0 } else { c[a] == g.n[a] - 1 };
                if let (true, FaceBc::Dirichlet(v)) = (on, problem.faces[2 * a + side]) {
                    fixed[idx] = v;
                }
            }
        }
        if !fixed[idx].is_nan() {
            t[idx] = fixed[idx];
        }
    }
    let stride = [1, g.n[0], g.n[0] * g.n[1]];
    let active: Vec<usize> = g.active().collect();
    let inv_h2: Vec<f64> = active.iter().map(|&a| g.spacing[a].powi(-2)).collect();

    let snapshot = |values: &[f64], time: f64| TemperatureField {
        grid: g,
        time,
        values: values.to_vec(),
        material: m,
    };
    let mut out = vec![snapshot(&t, 0.0)];
    let mut next = t.clone();
    let mut step = 0usize;
    let total = outputs * per_output;
    while step < total {
        let time = step as f64 * dt;
        for idx in 0..n {
            if !fixed[idx].is_nan() {
                next[idx] = fixed[idx];
                continue;
            }
            let c = coord(idx);
            let tc = t[idx];
            let mut lap = 0.0;
            for (ai, &a) in active.iter().enumerate() {
                let h = g.spacing[a];
                let s = stride[a];
                let last = g.n[a] - 1;
                let (minus, plus) = if c[a] == 0 {
                    let nb = t[idx + s];
                    (ghost(problem, 2 * a, nb, tc, idx, h, time, &g, p, m.k), nb)
                } else if c[a] == last {
                    let nb = t[idx - s];
                    (nb, ghost(problem, 2 * a + 1, nb, tc, idx, h, time, &g, p, m.k))
                } else {
                    (t[idx - s], t[idx + s])
                };
                lap += (minus - 2.0 * tc + plus) * inv_h2[ai];
            }
            next[idx] = tc + alpha * dt * lap;
        }
        std::mem::swap(&mut t, &mut next);
        step += 1;
        if step % per_output == 0 {
            let now = step as f64 * dt;
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(now));
            }
            out.push(snapshot(&t, (step / per_output) as f64 * problem.output_interval));
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn ghost(
    problem: &FdmProblem,
    face: usize,
    neighbor: f64,
    tc: f64,
    idx: usize,
    h: f64,
    time: f64,
    g: &Grid,
    p: &ProcessConfig,
    k: f64,
) -> f64 {
    match problem.faces[face] {
        FaceBc::Adiabatic | FaceBc::Dirichlet(_) => neighbor,
        FaceBc::Flux => {
            let mut q_out = p.surface_loss(tc);
            if face == 5 {
                let pos = g.position(idx);
                q_out -= p.laser_flux(pos[0], pos[1], time);
            }
            neighbor - 2.0 * h * q_out / k
        }
    }
}

/// Reference fields for the bare plate on a uniform grid.
pub fn fdm_solve(process: &ProcessConfig, m: &MaterialProps, spacing: f64, t_end: f64) -> Result<Vec<TemperatureField>> {
    let mut prob = FdmProblem::bare_plate(process, *m, spacing);
    prob.t_end = t_end;
    solve(&prob)
}

/// `100·‖T̂ − T‖₂ / ‖T‖₂` over every node of every reference snapshot.
pub fn relative_l2<F>(mut predict: F, reference: &[TemperatureField]) -> Result<f64>
where
    F: FnMut(&TemperatureField) -> Result<Vec<f64>>,
{
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for field in reference {
        let pred = predict(field)?;
        for (a, b) in pred.iter().zip(&field.values) {
            num += (a - b) * (a - b);
            den += b * b;
        }
    }
    Ok(100.0 * (num / den).sqrt())
}

/// Relative L2 of a trained model against reference fields of one material.
pub fn surrogate_l2(model: &Surrogate, m: &MaterialProps, reference: &[TemperatureField]) -> Result<f64> {
    relative_l2(|f| model.temperatures(&f.points(), m), reference)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeHistory {
    pub location: [f64; 3],
    pub times: Vec<f64>,
    pub temperatures: Vec<f64>,
}

impl ProbeHistory {
    /// Time of the highest temperature.
    pub fn peak_time(&self) -> f64 {
        let mut best = 0;
        for i in 1..self.temperatures.len() {
            if self.temperatures[i] > self.temperatures[best] {
                best = i;
            }
        }
        self.times[best]
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "t,T")?;
        for (t, v) in self.times.iter().zip(&self.temperatures) {
            writeln!(w, "{t},{v}")?;
        }
        Ok(())
    }
}

pub fn probe(fields: &[TemperatureField], loc: [f64; 3]) -> Result<ProbeHistory> {
    let temperatures = fields.iter().map(|f| f.sample(loc)).collect::<Result<Vec<_>>>()?;
    Ok(ProbeHistory {
        location: loc,
        times: fields.iter().map(|f| f.time).collect(),
        temperatures,
    })
}

pub fn probe_surrogate(model: &Surrogate, m: &MaterialProps, loc: [f64; 3], times: &[f64]) -> Result<ProbeHistory> {
    let d = model.process.domain;
    if (0..3).any(|a| loc[a] < 0.0 || loc[a] > d[a]) {
        return Err(Error::OutOfDomain(loc));
    }
    let pts: Vec<_> = times.iter().map(|t| (loc, *t)).collect();
    Ok(ProbeHistory {
        location: loc,
        times: times.to_vec(),
        temperatures: model.temperatures(&pts, m)?,
    })
}

/// Comparison of a trained model with the reference for one material.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub rel_l2: f64,
    pub peak_model: f64,
    pub peak_reference: f64,
    /// (model, reference) history per probe
    pub probes: Vec<(ProbeHistory, ProbeHistory)>,
}

/// Scores `model` against `reference` fields and probes both at `probes`.
pub fn evaluate(model: &Surrogate, m: &MaterialProps, reference: &[TemperatureField], probes: &[[f64; 3]]) -> Result<Evaluation> {
    let mut peak_model = f64::NEG_INFINITY;
    let rel_l2 = relative_l2(
        |f| {
            let v = model.temperatures(&f.points(), m)?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(f.time));
            }
            peak_model = v.iter().copied().fold(peak_model, f64::max);
            Ok(v)
        },
        reference,
    )?;
    let times: Vec<f64> = reference.iter().map(|f| f.time).collect();
    let probes = probes
        .iter()
        .map(|loc| Ok((probe_surrogate(model, m, *loc, &times)?, probe(reference, *loc)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation {
        rel_l2,
        peak_model,
        peak_reference: reference.iter().map(|f| f.max()).fold(f64::NEG_INFINITY, f64::max),
        probes,
    })
}

/// A problem with a closed-form solution.
pub struct AnalyticProblem {
    pub name: &'static str,
    pub problem: FdmProblem,
    pub solution: Box<dyn Fn([f64; 3], f64) -> f64 + Send + Sync>,
}

/// Dirichlet slab eigenmode on `[0, L]` discretized with spacing `h`.
pub fn eigenmode_problem(h: f64) -> AnalyticProblem {
    let length = 0.01;
    let m = MaterialProps {
        rho: 4430.0,
        cp: 560.0,
        k: 6.7,
    };
    let base = 300.0;
    let amplitude = 100.0;
    let process = ProcessConfig {
        power: 0.0,
        ..ProcessConfig::default()
    };
    let mut faces = [FaceBc::Adiabatic; 6];
    faces[0] = FaceBc::Dirichlet(base);
    faces[1] = FaceBc::Dirichlet(base);
    let problem = FdmProblem {
        process,
        material: m,
        grid: Grid::covering([length, 0.0, 0.0], h),
        faces,
        initial: InitialField::Sine {
            axis: 0,
            base,
            amplitude,
        },
        t_end: 1.0,
        output_interval: 0.1,
        dt: None,
    };
    let rate = m.diffusivity() * PI * PI / (length * length);
    AnalyticProblem {
        name: "slab-eigenmode",
        problem,
        solution: Box::new(move |p, t| base + amplitude * (PI * p[0] / length).sin() * (-rate * t).exp()),
    }
}

pub fn analytic_suite() -> Vec<AnalyticProblem> {
    let process = ProcessConfig {
        power: 0.0,
        ..ProcessConfig::default()
    };
    let m = MaterialProps {
        rho: 8000.0,
        cp: 500.0,
        k: 16.0,
    };
    let mut eq = FdmProblem::bare_plate(&process, m, 1e-3);
    eq.t_end = 3.0;
    let t0 = process.t_initial;
    vec![
        eigenmode_problem(0.25e-3),
        AnalyticProblem {
            name: "uniform-equilibrium",
            problem: eq,
            solution: Box::new(move |_, _| t0),
        },
    ]
}

/// Maximum nodal error of a solved problem against its closed form at
/// every snapshot.
pub fn max_error(a: &AnalyticProblem, fields: &[TemperatureField]) -> Vec<f64> {
    fields
        .iter()
        .map(|f| {
            f.values
                .iter()
                .enumerate()
                .map(|(i, v)| (v - (a.solution)(f.grid.position(i), f.time)).abs())
                .fold(0.0, f64::max)
        })
        .collect()
}

/// `x,y,z,T` rows, metres and kelvin.
pub fn write_field_csv(f: &TemperatureField, mut w: impl Write) -> Result<()> {
    writeln!(w, "x,y,z,T")?;
    for (i, v) in f.values.iter().enumerate() {
        let p = f.grid.position(i);
        writeln!(w, "{},{},{},{}", p[0], p[1], p[2], v)?;
    }
    Ok(())
}

/// Legacy ASCII VTK structured points.
pub fn write_field_vtk(f: &TemperatureField, mut w: impl Write) -> Result<()> {
    let g = f.grid;
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "temperature t={}", f.time)?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET STRUCTURED_POINTS")?;
    writeln!(w, "DIMENSIONS {} {} {}", g.n[0], g.n[1], g.n[2])?;
    writeln!(w, "ORIGIN 0 0 0")?;
    writeln!(w, "SPACING {} {} {}", g.spacing[0], g.spacing[1], g.spacing[2])?;
    writeln!(w, "POINT_DATA {}", g.len())?;
    writeln!(w, "SCALARS temperature double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for v in &f.values {
        writeln!(w, "{v}")?;
    }
    Ok(())
}
