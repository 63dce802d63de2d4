//! Composite physics loss and the hybrid Adam → L-BFGS schedule.

pub mod adam;
pub mod lbfgs;

pub use adam::{adam_step, clip_grad_norm, AdamConfig, AdamState};
pub use lbfgs::{lbfgs_epoch, two_loop, EpochReport, LbfgsConfig, LbfgsState, StepRecord};

use crate::autodiff::{loss_grad, Jet, JetOrder, NetInput, PointGroup, PointLoss, Real, Tape, Var};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::{init_params, scale_output, NetworkParams, Normalizer, ScalingConfig, Surrogate};
use crate::physics::{bc_residual, ic_residual, pde_residual, Category, MaterialProps, ProcessConfig};
use crate::sampling::{build_collocation, draw_batch, resample_pools, with_material, Batch, Sample};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub pde: f64,
    pub ic: f64,
    pub bc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            pde: 1.0,
            ic: 1e-4,
            bc: 1.0,
        }
    }
}

/// Length unit in which flux and volumetric residuals are expressed before
/// squaring. Temperatures stay in K either way.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualUnits {
    /// W/m³ and W/m²
    Si,
    /// W/mm³ and W/mm²
    Millimetre,
}

impl ResidualUnits {
    pub fn volumetric(self) -> f64 {
        match self {
            ResidualUnits::Si => 1.0,
            ResidualUnits::Millimetre => 1e-9,
        }
    }

    pub fn areal(self) -> f64 {
        match self {
            ResidualUnits::Si => 1.0,
            ResidualUnits::Millimetre => 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr_adam: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub grad_clip: f64,
    pub total_epochs: usize,
    /// epoch at which Adam hands over to L-BFGS
    pub adam_epochs: usize,
    pub curriculum_epochs: usize,
    pub lr_lbfgs: f64,
    pub max_iter: usize,
    pub max_eval: usize,
    pub history: usize,
    pub c1: f64,
    pub c2: f64,
    pub max_ls: usize,
    pub tolerance_grad: f64,
    pub tolerance_change: f64,
    pub stale_decrease: f64,
    pub weights: LossWeights,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let l = LbfgsConfig::default();
        let a = AdamConfig::default();
        Self {
            lr_adam: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps_adam: a.eps,
            grad_clip: 1e3,
            total_epochs: 10_000,
            adam_epochs: 2_000,
            curriculum_epochs: 200,
            lr_lbfgs: l.lr,
            max_iter: l.max_iter,
            max_eval: l.max_eval,
            history: l.history,
            c1: l.c1,
            c2: l.c2,
            max_ls: l.max_ls,
            tolerance_grad: l.tolerance_grad,
            tolerance_change: l.tolerance_change,
            stale_decrease: l.stale_decrease,
            weights: LossWeights::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr_adam,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps_adam,
        }
    }

    pub fn lbfgs(&self) -> LbfgsConfig {
        LbfgsConfig {
            lr: self.lr_lbfgs,
            max_iter: self.max_iter,
            max_eval: self.max_eval,
            history: self.history,
            c1: self.c1,
            c2: self.c2,
            max_ls: self.max_ls,
            tolerance_grad: self.tolerance_grad,
            tolerance_change: self.tolerance_change,
            stale_decrease: self.stale_decrease,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.weights;
        let checks = [
            (self.adam_epochs <= self.total_epochs, "adam_epochs must not exceed total_epochs"),
            (self.history >= 1, "history must be at least 1"),
            (self.max_iter >= 1, "max_iter must be at least 1"),
            (0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0, "need 0 < c1 < c2 < 1"),
            (self.lr_adam > 0.0 && self.lr_lbfgs > 0.0, "learning rates must be positive"),
            (w.pde >= 0.0 && w.ic >= 0.0 && w.bc >= 0.0, "loss weights must be non-negative"),
            ((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2), "Adam betas in [0, 1)"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::Config(msg.into()));
            }
        }
        Ok(())
    }

    /// Weights in force at `epoch`: the PDE term is switched off during the
    /// curriculum.
    pub fn weights_at(&self, epoch: usize) -> LossWeights {
        let mut w = self.weights;
        if epoch < self.curriculum_epochs {
            w.pde = 0.0;
        }
        w
    }
}

/// Everything the residuals need besides the network.
#[derive(Clone, Debug)]
pub struct LossContext {
    pub process: ProcessConfig,
    pub scaling: ScalingConfig,
    pub normalizer: Normalizer,
    pub units: ResidualUnits,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum GroupKind {
    Pde,
    Flux,
    Dirichlet,
    Initial,
}

const COMPONENT_PDE: usize = 0;
const COMPONENT_BC: usize = 1;
const COMPONENT_IC: usize = 2;

struct CompositeLoss<'a> {
    ctx: &'a LossContext,
    kinds: Vec<GroupKind>,
    samples: Vec<Vec<Sample>>,
}

impl PointLoss for CompositeLoss<'_> {
    fn components(&self) -> usize {
        3
    }

    fn term<'t>(&self, _: &'t Tape, group: usize, point: usize, out: Jet<Var<'t>>, aux: Option<Var<'t>>) -> Result<Var<'t>> {
        let s = &self.samples[group][point];
        let c = self.ctx;
        let t = scale_output(&out, &s.material, &c.process, &c.scaling, aux)?;
        let r = match self.kinds[group] {
            GroupKind::Pde => pde_residual(&t, &s.material) * c.units.volumetric(),
            GroupKind::Flux => {
                bc_residual(s.point.category, s.point.pos, s.point.t, &t, &s.material, &c.process)? * c.units.areal()
            }
            GroupKind::Dirichlet => bc_residual(s.point.category, s.point.pos, s.point.t, &t, &s.material, &c.process)?,
            GroupKind::Initial => ic_residual(&t, &c.process),
        };
        Ok(r.square())
    }
}

/// Loss value, per-category mean squared residuals and parameter gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// mean squared residuals; NaN for a category whose weight is zero
    pub pde: f64,
    pub bc: f64,
    pub ic: f64,
    pub grad: Vec<f64>,
}

fn input_for(samples: &[Sample], norm: &Normalizer) -> NetInput {
    NetInput {
        coords: samples.iter().map(|s| norm.coords(s.point.pos, s.point.t)).collect(),
        material: samples.iter().map(|s| norm.material(&s.material)).collect(),
        coord_scale: norm.coord_scale(),
    }
}

/// `w_pde·mean(r_pde²) + w_bc·mean(r_bc²) + w_ic·mean(r_ic²)` and its
/// gradient. Categories with zero weight are skipped entirely.
pub fn composite_loss(params: &NetworkParams, batch: &Batch, weights: &LossWeights, ctx: &LossContext) -> Result<LossBreakdown> {
    let mut kinds = Vec::new();
    let mut samples = Vec::new();
    let mut groups = Vec::new();
    let mut add = |kind: GroupKind, s: Vec<Sample>, order: JetOrder, scale: f64, component: usize| {
        if s.is_empty() || scale == 0.0 {
            return;
        }
        groups.push(PointGroup {
            input: input_for(&s, &ctx.normalizer),
            order,
            scale,
            component,
        });
        kinds.push(kind);
        samples.push(s);
    };
    let nb = batch.bc.len() as f64;
    let (dirichlet, flux): (Vec<Sample>, Vec<Sample>) =
        batch.bc.iter().partition(|s| s.point.category == Category::Bottom);
    add(GroupKind::Pde, batch.pde.clone(), JetOrder::Second, weights.pde / batch.pde.len() as f64, COMPONENT_PDE);
    add(GroupKind::Flux, flux, JetOrder::First, weights.bc / nb, COMPONENT_BC);
    add(GroupKind::Dirichlet, dirichlet, JetOrder::Value, weights.bc / nb, COMPONENT_BC);
    add(GroupKind::Initial, batch.ic.clone(), JetOrder::Value, weights.ic / batch.ic.len() as f64, COMPONENT_IC);
    let loss = CompositeLoss { ctx, kinds, samples };
    let ev = loss_grad(&params.spec, &params.values, &groups, &loss)?;
    let mean = |c: usize, w: f64| if w > 0.0 { ev.components[c] / w } else { f64::NAN };
    Ok(LossBreakdown {
        total: ev.total,
        pde: mean(COMPONENT_PDE, weights.pde),
        bc: mean(COMPONENT_BC, weights.bc),
        ic: mean(COMPONENT_IC, weights.ic),
        grad: ev.grad,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Curriculum,
    Adam,
    Lbfgs,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Curriculum => "curriculum",
            Phase::Adam => "adam",
            Phase::Lbfgs => "lbfgs",
        }
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub l_pde: f64,
    pub l_bc: f64,
    pub l_ic: f64,
    pub total: f64,
    pub rel_l2: Option<f64>,
    pub wall_time: f64,
    pub resampled: bool,
    pub evaluations: usize,
}

impl TrainRecord {
    pub const CSV_HEADER: &'static str = "epoch,phase,l_pde,l_bc,l_ic,total,rel_l2,wall_time,resampled,evaluations";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.3},{},{}",
            self.epoch,
            self.phase.name(),
            self.l_pde,
            self.l_bc,
            self.l_ic,
            self.total,
            self.rel_l2.map(|v| v.to_string()).unwrap_or_default(),
            self.wall_time,
            self.resampled as u8,
            self.evaluations
        )
    }

    /// Equality ignoring wall-clock time.
    pub fn same_run(&self, other: &Self) -> bool {
        let bits = |v: f64| v.to_bits();
        self.epoch == other.epoch
            && self.phase == other.phase
            && bits(self.l_pde) == bits(other.l_pde)
            && bits(self.l_bc) == bits(other.l_bc)
            && bits(self.l_ic) == bits(other.l_ic)
            && bits(self.total) == bits(other.total)
            && self.rel_l2.map(bits) == other.rel_l2.map(bits)
            && self.resampled == other.resampled
            && self.evaluations == other.evaluations
    }
}

/// Append-only CSV sink for training records.
pub struct RecordWriter<W: Write> {
    out: W,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{}", TrainRecord::CSV_HEADER)?;
        Ok(Self { out })
    }

    pub fn write(&mut self, r: &TrainRecord) -> Result<()> {
        writeln!(self.out, "{}", r.csv_row())?;
        self.out.flush()?;
        Ok(())
    }
}

/// Callbacks invoked during training.
pub trait Observer {
    /// Relative L2 error of the current model, if this epoch is scheduled
    /// for evaluation.
    fn evaluate(&mut self, _epoch: usize, _model: &Surrogate) -> Result<Option<f64>> {
        Ok(None)
    }

    fn record(&mut self, _record: &TrainRecord, _params: &NetworkParams) -> Result<()> {
        Ok(())
    }
}

/// Observer that does nothing.
pub struct Silent;

impl Observer for Silent {}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub surrogate: Surrogate,
    pub records: Vec<TrainRecord>,
    pub resamples: usize,
    /// every accepted L-BFGS step, for auditing the line search
    pub lbfgs_steps: Vec<StepRecord>,
}

impl TrainOutcome {
    pub fn params(&self) -> &NetworkParams {
        &self.surrogate.params
    }
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Curriculum, Adam until `adam_epochs`, then per-epoch L-BFGS on fixed
/// batches, resampling the pools whenever curvature goes stale.
pub fn train(cfg: &RunConfig, observer: &mut dyn Observer) -> Result<TrainOutcome> {
    cfg.validate()?;
    let opt = &cfg.optimizer;
    let scaling = cfg.network.scaling_config();
    let ctx = LossContext {
        process: cfg.process.clone(),
        scaling,
        normalizer: Normalizer::new(&cfg.process, &cfg.materials),
        units: cfg.network.residual_units,
    };
    let seed = cfg.sampling.seed;
    let params = init_params(cfg.network.architecture, scaling.mode, seed);
    let mut surrogate = Surrogate {
        params,
        normalizer: ctx.normalizer.clone(),
        scaling,
        process: cfg.process.clone(),
    };
    let fixed: Option<MaterialProps> = cfg.sampling.fixed_material()?;
    let base = build_collocation(&cfg.process, &cfg.sampling.grid())?;
    let mut pools = base.clone();
    let mut batch_rng = rng_stream(seed, 1);
    let mut resample_rng = rng_stream(seed, 2);
    let draw = |pools: &_, spec: &_, rng: &mut ChaCha8Rng| {
        let b = draw_batch(pools, spec, &cfg.materials, rng);
        match fixed {
            Some(m) => with_material(&b, m),
            None => b,
        }
    };

    let adam_cfg = opt.adam();
    let lbfgs_cfg = opt.lbfgs();
    let mut adam = AdamState::new(surrogate.params.values.len());
    let mut lbfgs = LbfgsState::new();
    let mut records = Vec::with_capacity(opt.total_epochs);
    let mut resamples = 0;
    let mut steps = Vec::new();
    // the L-BFGS batch is held until curvature goes stale
    let mut lbfgs_batch: Option<Batch> = None;
    let start = Instant::now();

    for epoch in 0..opt.total_epochs {
        let weights = opt.weights_at(epoch);
        let diverged = |e: Error| Error::Diverged {
            epoch,
            source: Box::new(e),
        };
        let mut record = if epoch < opt.adam_epochs {
            if cfg.sampling.adam_jitter {
                pools = resample_pools(&base, &mut resample_rng);
            }
            let batch = draw(&pools, &cfg.sampling.adam_batch, &mut batch_rng);
            let mut lb = composite_loss(&surrogate.params, &batch, &weights, &ctx).map_err(diverged)?;
            clip_grad_norm(&mut lb.grad, opt.grad_clip);
            adam_step(&mut surrogate.params.values, &lb.grad, &mut adam, &adam_cfg);
            TrainRecord {
                epoch,
                phase: if epoch < opt.curriculum_epochs {
                    Phase::Curriculum
                } else {
                    Phase::Adam
                },
                l_pde: lb.pde,
                l_bc: lb.bc,
                l_ic: lb.ic,
                total: lb.total,
                rel_l2: None,
                wall_time: 0.0,
                resampled: false,
                evaluations: 1,
            }
        } else {
            let batch: &Batch =
                lbfgs_batch.get_or_insert_with(|| draw(&pools, &cfg.sampling.lbfgs_batch, &mut batch_rng));
            let params = &surrogate.params;
            let mut values = params.values.clone();
            let rep = {
                let obj = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
                    let p = NetworkParams {
                        values: x.to_vec(),
                        ..params.clone()
                    };
                    let lb = composite_loss(&p, batch, &weights, &ctx)?;
                    Ok((lb.total, lb.grad))
                };
                lbfgs_epoch(&mut values, obj, &mut lbfgs, &lbfgs_cfg).map_err(diverged)?
            };
            surrogate.params.values = values;
            steps.extend_from_slice(&rep.steps);
            // component means at the accepted iterate
            let lb = composite_loss(&surrogate.params, batch, &weights, &ctx).map_err(diverged)?;
            let mut resampled = false;
            if rep.stale {
                pools = resample_pools(&base, &mut resample_rng);
                lbfgs_batch = None;
                lbfgs.clear();
                resamples += 1;
                resampled = true;
            }
            TrainRecord {
                epoch,
                phase: Phase::Lbfgs,
                l_pde: lb.pde,
                l_bc: lb.bc,
                l_ic: lb.ic,
                total: lb.total,
                rel_l2: None,
                wall_time: 0.0,
                resampled,
                evaluations: rep.evaluations,
            }
        };
        record.rel_l2 = observer.evaluate(epoch, &surrogate)?;
        record.wall_time = start.elapsed().as_secs_f64();
        observer.record(&record, &surrogate.params)?;
        records.push(record);
    }
    Ok(TrainOutcome {
        surrogate,
        records,
        resamples,
        lbfgs_steps: steps,
    })
}
