//! Exact input derivatives by jet propagation and parameter gradients by a
//! single reverse sweep over the jet-augmented graph.

pub mod jet;
pub mod net;
pub mod tape;

pub use jet::{Jet, JetState};
pub use net::{
    forward_jets, forward_values, stack, Activation, Dense, Fusion, JetBatch, JetOrder, NetInput,
    NetSpec, NetTape, Topology,
};
pub use tape::{Real, Tape, Var};

use crate::error::{Error, Result};
use rand::Rng;

/// Points per forward/backward chunk; bounds the memory held by a layer tape.
pub const CHUNK: usize = 512;

/// Points sharing a jet order and a loss weight.
#[derive(Clone, Debug)]
pub struct PointGroup {
    pub input: NetInput,
    pub order: JetOrder,
    /// multiplies the sum of per-point terms (weight / count for a mean)
    pub scale: f64,
    /// index of the loss component this group contributes to
    pub component: usize,
}

/// Maps a point's output jet to its scalar loss term.
pub trait PointLoss {
    /// Number of reported loss components.
    fn components(&self) -> usize;

    /// Loss term for point `point` of group `group`. `aux` is the auxiliary
    /// head output when the network has one.
    fn term<'t>(
        &self,
        tape: &'t Tape,
        group: usize,
        point: usize,
        out: Jet<Var<'t>>,
        aux: Option<Var<'t>>,
    ) -> Result<Var<'t>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossEval {
    pub total: f64,
    /// per-component unweighted contribution, i.e. `scale`-weighted sums
    /// with each group's scale applied
    pub components: Vec<f64>,
    pub grad: Vec<f64>,
}

/// Sum in a fixed pairwise order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        2 => v[0] + v[1],
        n => {
            let (a, b) = v.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

fn slice_input(input: &NetInput, range: std::ops::Range<usize>) -> NetInput {
    NetInput {
        coords: input.coords[range.clone()].to_vec(),
        material: input.material[range].to_vec(),
        coord_scale: input.coord_scale,
    }
}

/// Loss `Σ_g scale_g · Σ_i term(g, i)` and its gradient with respect to every
/// network parameter.
pub fn loss_grad(
    spec: &NetSpec,
    params: &[f64],
    groups: &[PointGroup],
    loss: &impl PointLoss,
) -> Result<LossEval> {
    let mut grad = vec![0.0; params.len()];
    let mut comp_terms: Vec<Vec<f64>> = vec![Vec::new(); loss.components()];
    let mut tape = Tape::with_capacity(256);
    for (g, group) in groups.iter().enumerate() {
        let n = group.input.len();
        let mut terms = Vec::with_capacity(n);
        for start in (0..n).step_by(CHUNK) {
            let end = (start + CHUNK).min(n);
            let input = slice_input(&group.input, start..end);
            let net = NetTape::forward(spec, params, &input, group.order);
            let out = net.output();
            let mut adj = JetBatch::zeros(group.order, end - start, 1);
            let mut aux_adj = net.aux().map(|a| vec![0.0; a.len()]);
            let channels = group.order.channels();
            for i in 0..end - start {
                tape.clear();
                let jet = out.jet(i, 0).on_tape(&tape);
                let aux = net.aux().map(|a| tape.var(a[i]));
                let term = loss.term(&tape, g, start + i, jet, aux)?;
                terms.push(term.value());
                let adjoints = tape.adjoints(term, group.scale);
                let idx = jet.indices();
                for c in 0..channels {
                    adj.data[c * (end - start) + i] = adjoints[idx[c]];
                }
                if let (Some(a), Some(v)) = (aux_adj.as_mut(), aux) {
                    a[i] = adjoints[v.index()];
                }
            }
            net.backward(params, adj, aux_adj.as_deref(), &mut grad);
        }
        comp_terms[group.component].push(group.scale * pairwise_sum(&terms));
    }
    let components: Vec<f64> = comp_terms.iter().map(|t| pairwise_sum(t)).collect();
    let total = pairwise_sum(&components);
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss(total));
    }
    Ok(LossEval {
        total,
        components,
        grad,
    })
}

/// Largest relative discrepancy between the analytic directional derivative
/// `g·d` and a central difference, over `directions` random unit directions.
///
/// Tiny steps are allowed; they simply report the roundoff floor.
pub fn fd_check<F>(f: F, params: &[f64], grad: &[f64], step: f64, directions: usize, rng: &mut impl Rng) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let mut worst: f64 = 0.0;
    let mut p = params.to_vec();
    for _ in 0..directions {
        let mut d: Vec<f64> = (0..params.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        d.iter_mut().for_each(|v| *v /= norm);
        let analytic: f64 = grad.iter().zip(&d).map(|(g, v)| g * v).sum();
        for (q, (a, v)) in p.iter_mut().zip(params.iter().zip(&d)) {
            *q = a + step * v;
        }
        let fp = f(&p);
        for (q, (a, v)) in p.iter_mut().zip(params.iter().zip(&d)) {
            *q = a - step * v;
        }
        let fm = f(&p);
        let fd = (fp - fm) / (2.0 * step);
        let rel = (analytic - fd).abs() / analytic.abs().max(1e-12);
        worst = worst.max(if rel.is_nan() { f64::INFINITY } else { rel });
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Quadratic;

    impl PointLoss for Quadratic {
        fn components(&self) -> usize {
            1
        }
        fn term<'t>(&self, _: &'t Tape, _: usize, _: usize, out: Jet<Var<'t>>, _: Option<Var<'t>>) -> Result<Var<'t>> {
            Ok((out.value - 1.0).square())
        }
    }

    fn linear_spec() -> NetSpec {
        NetSpec::new(Topology::Mlp {
            material_inputs: false,
            layers: vec![Dense::new(4, 1, Activation::Linear)],
        })
    }

    fn group(n: usize, rng: &mut ChaCha8Rng) -> PointGroup {
        PointGroup {
            input: NetInput {
                coords: (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen(), rng.gen()]).collect(),
                material: vec![[0.0; 3]; n],
                coord_scale: [1.0; 4],
            },
            order: JetOrder::Value,
            scale: 1.0 / n as f64,
            component: 0,
        }
    }

    #[test]
    fn linear_net_quadratic_loss_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = linear_spec();
        let p: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let groups = vec![group(20, &mut rng)];
        let ev = loss_grad(&spec, &p, &groups, &Quadratic).unwrap();
        let f = |q: &[f64]| loss_grad(&spec, q, &groups, &Quadratic).unwrap().total;
        assert!(fd_check(f, &p, &ev.grad, 1e-3, 20, &mut rng) <= 1e-10);
        // roundoff floor is reported, not raised
        let tiny = fd_check(f, &p, &ev.grad, 1e-20, 3, &mut rng);
        assert!(tiny > 1e-3);
    }

    #[test]
    fn duplicated_points_leave_mean_loss_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = linear_spec();
        let p: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = group(8, &mut rng);
        let mut d = g.clone();
        d.input.coords = g.input.coords.iter().flat_map(|c| [*c, *c]).collect();
        d.input.material = vec![[0.0; 3]; 16];
        d.scale = 1.0 / 16.0;
        let a = loss_grad(&spec, &p, &[g], &Quadratic).unwrap();
        let b = loss_grad(&spec, &p, &[d], &Quadratic).unwrap();
        assert!((a.total - b.total).abs() <= 1e-15 * a.total.abs());
        for (x, y) in a.grad.iter().zip(&b.grad) {
            assert!((x - y).abs() <= 1e-14 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn pairwise_sum_is_order_fixed() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        assert_eq!(pairwise_sum(&v).to_bits(), pairwise_sum(&v.clone()).to_bits());
        assert!((pairwise_sum(&v) - v.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn chunking_matches_single_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = NetSpec::new(Topology::Mlp {
            material_inputs: false,
            layers: stack(&[4, 8, 1], true),
        });
        let p: Vec<f64> = (0..spec.param_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = group(CHUNK * 2 + 17, &mut rng);
        let ev = loss_grad(&spec, &p, &[g.clone()], &Quadratic).unwrap();
        let f = |q: &[f64]| loss_grad(&spec, q, &[g.clone()], &Quadratic).unwrap().total;
        assert!(fd_check(f, &p, &ev.grad, 1e-5, 10, &mut rng) <= 1e-6);
    }
}
