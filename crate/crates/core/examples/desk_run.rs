//! Trains one desk-profile model and reports relative L2 against the
//! finite-difference reference for each evaluation alloy.
//!
//! `cargo run --release --example desk_run -- [key=value ...]`

use lpbf_pinn::config::RunConfig;
use lpbf_pinn::model::Surrogate;
use lpbf_pinn::oracle::{fdm_solve, surrogate_l2};
use lpbf_pinn::physics::MaterialLibrary;
use lpbf_pinn::train::{train, Observer, TrainRecord};
use lpbf_pinn::model::NetworkParams;
use lpbf_pinn::Result;

struct Print(usize);

impl Observer for Print {
    fn record(&mut self, r: &TrainRecord, _p: &NetworkParams) -> Result<()> {
        if r.epoch % self.0 == 0 || r.resampled {
            println!(
                "{:5} {:10} pde {:.3e} bc {:.3e} ic {:.3e} total {:.3e} evals {} t {:.1}s{}",
                r.epoch,
                r.phase.name(),
                r.l_pde,
                r.l_bc,
                r.l_ic,
                r.total,
                r.evaluations,
                r.wall_time,
                if r.resampled { " resampled" } else { "" }
            );
        }
        Ok(())
    }
}

fn main() -> Result<()> {
    let overrides: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = RunConfig::desk();
    cfg.apply_overrides(&overrides)?;
    let out = train(&cfg, &mut Print(50))?;
    if let Ok(path) = std::env::var("DESK_RUN_SAVE") {
        out.params().save(std::path::Path::new(&path))?;
    }
    report(&cfg, &out.surrogate)
}

fn report(cfg: &RunConfig, model: &Surrogate) -> Result<()> {
    let lib = MaterialLibrary::default();
    for name in &cfg.evaluation.materials {
        let m = lib.get(name)?;
        let reference = fdm_solve(&cfg.process, &m, cfg.evaluation.grid_spacing, cfg.process.t_end)?;
        let l2 = surrogate_l2(model, &m, &reference)?;
        let peak_ref = reference.iter().map(|f| f.max()).fold(0.0, f64::max);
        let peak = reference
            .iter()
            .map(|f| model.temperatures(&f.points(), &m).map(|v| v.into_iter().fold(0.0, f64::max)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        println!("{name:12} L2 {l2:6.2}%  peak ref {peak_ref:7.1} K  model {peak:7.1} K");
    }
    Ok(())
}
