//! Batched jet propagation through dense tanh networks.
//!
//! A batch of `n` points with `C` jet channels and `w` units is stored as a
//! row-major `(C·n) × w` matrix, channel-major, so every affine layer is one
//! GEMM over all channels at once. The bias only enters the value channel.

use super::jet::JetState;

/// Which jet channels a batch carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum JetOrder {
    /// value only
    Value,
    /// value, ∂t, ∂x, ∂y, ∂z
    First,
    /// value, ∂t, ∂x, ∂y, ∂z, ∂xx, ∂yy, ∂zz
    Second,
}

impl JetOrder {
    pub fn channels(self) -> usize {
        match self {
            JetOrder::Value => 1,
            JetOrder::First => 5,
            JetOrder::Second => 8,
        }
    }
}

pub const CH_VALUE: usize = 0;
pub const CH_T: usize = 1;
pub const CH_X: usize = 2;
pub const CH_XX: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Tanh,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dense {
    pub fan_in: usize,
    pub fan_out: usize,
    pub activation: Activation,
}

impl Dense {
    pub const fn new(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        Self {
            fan_in,
            fan_out,
            activation,
        }
    }

    pub fn param_count(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }
}

/// Tanh stack: `widths[0] → … → widths[last]`, tanh on every layer except
/// optionally the last.
pub fn stack(widths: &[usize], linear_output: bool) -> Vec<Dense> {
    let n = widths.len() - 1;
    (0..n)
        .map(|i| {
            let act = if linear_output && i + 1 == n {
                Activation::Linear
            } else {
                Activation::Tanh
            };
            Dense::new(widths[i], widths[i + 1], act)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Fusion {
    /// concatenate coordinate and material features
    Concat,
    /// material features split into per-unit scale and shift
    Film,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Topology {
    /// Single stack over `(x, y, z, t)`, optionally followed by the three
    /// material inputs.
    Mlp {
        material_inputs: bool,
        layers: Vec<Dense>,
    },
    /// Separate coordinate and material encoders feeding a fusion head.
    Decoupled {
        coord: Vec<Dense>,
        material: Vec<Dense>,
        fusion: Fusion,
        head: Vec<Dense>,
    },
}

/// Network graph plus an optional material-only scalar head.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct NetSpec {
    pub topology: Topology,
    pub aux_head: Option<Vec<Dense>>,
}

impl NetSpec {
    pub fn new(topology: Topology) -> Self {
        Self {
            topology,
            aux_head: None,
        }
    }

    /// Sub-networks in parameter order.
    pub fn subnets(&self) -> Vec<(&'static str, &[Dense])> {
        let mut out: Vec<(&'static str, &[Dense])> = match &self.topology {
            Topology::Mlp { layers, .. } => vec![("mlp", layers.as_slice())],
            Topology::Decoupled {
                coord,
                material,
                head,
                ..
            } => vec![
                ("coord", coord.as_slice()),
                ("material", material.as_slice()),
                ("fusion", head.as_slice()),
            ],
        };
        if let Some(aux) = &self.aux_head {
            out.push(("aux", aux.as_slice()));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.subnets()
            .iter()
            .flat_map(|(_, l)| l.iter())
            .map(Dense::param_count)
            .sum()
    }

    /// Parameter count of the main network, excluding the auxiliary head.
    pub fn main_param_count(&self) -> usize {
        self.param_count()
            - self
                .aux_head
                .as_ref()
                .map(|l| l.iter().map(Dense::param_count).sum())
                .unwrap_or(0)
    }

    /// Offsets of each layer's weight block in the flat parameter vector,
    /// in the same order as [`NetSpec::subnets`].
    pub fn offsets(&self) -> Vec<Vec<usize>> {
        let mut off = 0;
        self.subnets()
            .iter()
            .map(|(_, layers)| {
                layers
                    .iter()
                    .map(|d| {
                        let o = off;
                        off += d.param_count();
                        o
                    })
                    .collect()
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), String> {
        let chain = |layers: &[Dense], input: usize, name: &str| -> Result<usize, String> {
            let mut w = input;
            for (i, d) in layers.iter().enumerate() {
                if d.fan_in != w {
                    return Err(format!(
                        "{name} layer {i}: fan_in {} does not match {w}",
                        d.fan_in
                    ));
                }
                w = d.fan_out;
            }
            if layers.is_empty() {
                return Err(format!("{name} has no layers"));
            }
            Ok(w)
        };
        match &self.topology {
            Topology::Mlp {
                material_inputs,
                layers,
            } => {
                let out = chain(layers, if *material_inputs { 7 } else { 4 }, "mlp")?;
                if out != 1 {
                    return Err("mlp output width must be 1".into());
                }
            }
            Topology::Decoupled {
                coord,
                material,
                fusion,
                head,
            } => {
                let wc = chain(coord, 4, "coord")?;
                let wm = chain(material, 3, "material")?;
                let fused = match fusion {
                    Fusion::Concat => wc + wm,
                    Fusion::Film => {
                        if wm != 2 * wc {
                            return Err("film material branch must emit 2× coordinate width".into());
                        }
                        wc
                    }
                };
                if chain(head, fused, "fusion")? != 1 {
                    return Err("fusion output width must be 1".into());
                }
            }
        }
        if let Some(aux) = &self.aux_head {
            if chain(aux, 3, "aux")? != 1 {
                return Err("aux head output width must be 1".into());
            }
        }
        Ok(())
    }
}

/// Jet batch stored channel-major: `data[(c * n + i) * width + j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct JetBatch {
    pub order: JetOrder,
    pub n: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl JetBatch {
    pub fn zeros(order: JetOrder, n: usize, width: usize) -> Self {
        Self {
            order,
            n,
            width,
            data: vec![0.0; order.channels() * n * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.order.channels()
    }

    pub fn rows(&self) -> usize {
        self.channels() * self.n
    }

    pub fn ch(&self, c: usize) -> &[f64] {
        let len = self.n * self.width;
        &self.data[c * len..(c + 1) * len]
    }

    pub fn ch_mut(&mut self, c: usize) -> &mut [f64] {
        let len = self.n * self.width;
        &mut self.data[c * len..(c + 1) * len]
    }

    /// Jet of unit `j` at point `i`; absent channels read as zero.
    pub fn jet(&self, i: usize, j: usize) -> JetState {
        let mut c = [0.0; 8];
        for (k, slot) in c.iter_mut().enumerate().take(self.channels()) {
            *slot = self.ch(k)[i * self.width + j];
        }
        JetState::from_channels(c)
    }
}

/// Network inputs for a batch of points, already normalized.
#[derive(Clone, Debug, Default)]
pub struct NetInput {
    /// normalized `(x, y, z, t)` per point
    pub coords: Vec<[f64; 4]>,
    /// normalized `(ρ, C_p, k)` per point
    pub material: Vec<[f64; 3]>,
    /// derivative of each normalized coordinate with respect to its physical
    /// counterpart (chain-rule seed)
    pub coord_scale: [f64; 4],
}

impl NetInput {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    fn coord_jets(&self, order: JetOrder, extra_material: bool) -> JetBatch {
        let n = self.len();
        let width = if extra_material { 7 } else { 4 };
        let mut b = JetBatch::zeros(order, n, width);
        {
            let v = b.ch_mut(CH_VALUE);
            for i in 0..n {
                v[i * width..i * width + 4].copy_from_slice(&self.coords[i]);
                if extra_material {
                    v[i * width + 4..i * width + 7].copy_from_slice(&self.material[i]);
                }
            }
        }
        if order != JetOrder::Value {
            // input order is (x, y, z, t); channels are (t, x, y, z)
            let seeds = [(CH_T, 3usize), (CH_X, 0), (CH_X + 1, 1), (CH_X + 2, 2)];
            for (ch, col) in seeds {
                let s = self.coord_scale[col];
                let c = b.ch_mut(ch);
                for i in 0..n {
                    c[i * width + col] = s;
                }
            }
        }
        b
    }

    fn material_values(&self) -> JetBatch {
        let n = self.len();
        let mut b = JetBatch::zeros(JetOrder::Value, n, 3);
        for i in 0..n {
            b.data[i * 3..i * 3 + 3].copy_from_slice(&self.material[i]);
        }
        b
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Affine {
        x: usize,
        y: usize,
        offset: usize,
        dense: Dense,
        needs_input_grad: bool,
        /// leading input columns that can be non-zero in derivative channels
        live: usize,
    },
    Tanh {
        x: usize,
        y: usize,
    },
    Concat {
        a: usize,
        b: usize,
        y: usize,
    },
    Modulate {
        gz: usize,
        x: usize,
        y: usize,
    },
}

/// Layer-level record of a forward pass, kept for the reverse sweep.
#[derive(Debug, Default)]
pub struct NetTape {
    nodes: Vec<JetBatch>,
    ops: Vec<Op>,
    output: usize,
    aux_output: Option<usize>,
}

impl NetTape {
    pub fn output(&self) -> &JetBatch {
        &self.nodes[self.output]
    }

    /// Material-only scalar per point from the auxiliary head, if present.
    pub fn aux(&self) -> Option<&[f64]> {
        self.aux_output.map(|i| self.nodes[i].ch(CH_VALUE))
    }

    pub fn op_count(&self) -> usize {
        self.ops.len()
    }

    fn push(&mut self, b: JetBatch) -> usize {
        self.nodes.push(b);
        self.nodes.len() - 1
    }

    fn run_stack(
        &mut self,
        params: &[f64],
        layers: &[Dense],
        offsets: &[usize],
        mut x: usize,
        first_is_input: bool,
        first_live: usize,
    ) -> usize {
        for (k, (d, &off)) in layers.iter().zip(offsets).enumerate() {
            let live = if k == 0 { first_live } else { d.fan_in };
            let y = affine_forward(&self.nodes[x], params, off, *d, live);
            let y = self.push(y);
            self.ops.push(Op::Affine {
                x,
                y,
                offset: off,
                dense: *d,
                needs_input_grad: !(first_is_input && k == 0),
                live,
            });
            x = y;
            if d.activation == Activation::Tanh {
                let y = tanh_forward(&self.nodes[x]);
                let y = self.push(y);
                self.ops.push(Op::Tanh { x, y });
                x = y;
            }
        }
        x
    }

    /// Runs the network on `input`, carrying the requested jet channels.
    pub fn forward(spec: &NetSpec, params: &[f64], input: &NetInput, order: JetOrder) -> Self {
        debug_assert_eq!(params.len(), spec.param_count());
        let offsets = spec.offsets();
        let mut tape = NetTape::default();
        match &spec.topology {
            Topology::Mlp {
                material_inputs,
                layers,
            } => {
                let x = tape.push(input.coord_jets(order, *material_inputs));
                tape.output = tape.run_stack(params, layers, &offsets[0], x, true, 4);
            }
            Topology::Decoupled {
                coord,
                material,
                fusion,
                head,
            } => {
                let xc = tape.push(input.coord_jets(order, false));
                let c = tape.run_stack(params, coord, &offsets[0], xc, true, 4);
                let xm = tape.push(input.material_values());
                let m = tape.run_stack(params, material, &offsets[1], xm, true, 3);
                let coord_width = tape.nodes[c].width;
                let (fused, live) = match fusion {
                    Fusion::Concat => {
                        let y = concat_forward(&tape.nodes[c], &tape.nodes[m]);
                        let y = tape.push(y);
                        tape.ops.push(Op::Concat { a: c, b: m, y });
                        (y, coord_width)
                    }
                    Fusion::Film => {
                        let y = modulate_forward(&tape.nodes[m], &tape.nodes[c]);
                        let y = tape.push(y);
                        tape.ops.push(Op::Modulate { gz: m, x: c, y });
                        (y, coord_width)
                    }
                };
                tape.output = tape.run_stack(params, head, &offsets[2], fused, false, live);
            }
        }
        if let Some(aux) = &spec.aux_head {
            let xa = tape.push(input.material_values());
            let last = offsets.len() - 1;
            tape.aux_output = Some(tape.run_stack(params, aux, &offsets[last], xa, true, 3));
        }
        tape
    }

    /// Reverse sweep: accumulates `∂L/∂θ` into `grad` given the adjoint of
    /// the output jets and, optionally, of the auxiliary output.
    pub fn backward(&self, params: &[f64], out_adj: JetBatch, aux_adj: Option<&[f64]>, grad: &mut [f64]) {
        let mut adj: Vec<Option<JetBatch>> = vec![None; self.nodes.len()];
        debug_assert_eq!(out_adj.order, self.output().order);
        adj[self.output] = Some(out_adj);
        if let (Some(ai), Some(a)) = (self.aux_output, aux_adj) {
            let mut b = JetBatch::zeros(JetOrder::Value, a.len(), 1);
            b.data.copy_from_slice(a);
            adj[ai] = Some(b);
        }
        for op in self.ops.iter().rev() {
            match *op {
                Op::Affine {
                    x,
                    y,
                    offset,
                    dense,
                    needs_input_grad,
                    live,
                } => {
                    let Some(ybar) = adj[y].take() else { continue };
                    let xin = &self.nodes[x];
                    affine_weight_grad(&ybar, xin, offset, dense, live, grad);
                    if needs_input_grad {
                        let xbar = affine_input_grad(&ybar, params, offset, dense, live);
                        accumulate(&mut adj[x], xbar);
                    }
                }
                Op::Tanh { x, y } => {
                    let Some(ybar) = adj[y].take() else { continue };
                    let xbar = tanh_backward(&self.nodes[x], &self.nodes[y], &ybar);
                    accumulate(&mut adj[x], xbar);
                }
                Op::Concat { a, b, y } => {
                    let Some(ybar) = adj[y].take() else { continue };
                    let (abar, bbar) = concat_backward(&ybar, self.nodes[a].width, self.nodes[b].width);
                    accumulate(&mut adj[a], abar);
                    accumulate(&mut adj[b], bbar);
                }
                Op::Modulate { gz, x, y } => {
                    let Some(ybar) = adj[y].take() else { continue };
                    let (gzbar, xbar) = modulate_backward(&self.nodes[gz], &self.nodes[x], &ybar);
                    accumulate(&mut adj[gz], gzbar);
                    accumulate(&mut adj[x], xbar);
                }
            }
        }
    }
}

fn accumulate(slot: &mut Option<JetBatch>, add: JetBatch) {
    match slot {
        Some(b) => {
            for (s, a) in b.data.iter_mut().zip(&add.data) {
                *s += a;
            }
        }
        None => *slot = Some(add),
    }
}

/// `c = a·b + beta·c` with explicit row and column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], sa: [isize; 2], b: &[f64], sb: [isize; 2], beta: f64, c: &mut [f64], sc: [isize; 2]) {
    if m == 0 || n == 0 {
        return;
    }
    // bounds of the strided views, checked before handing raw pointers over
    let extent = |rows: usize, cols: usize, st: [isize; 2]| (rows - 1) * st[0] as usize + (cols - 1) * st[1] as usize + 1;
    assert!(k == 0 || (a.len() >= extent(m, k, sa) && b.len() >= extent(k, n, sb)));
    assert!(c.len() >= extent(m, n, sc));
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa[0],
            sa[1],
            b.as_ptr(),
            sb[0],
            sb[1],
            beta,
            c.as_mut_ptr(),
            sc[0],
            sc[1],
        );
    }
}

/// Row blocks of a channel-major batch: the value rows, then the
/// derivative rows together with how many leading input columns they use.
fn blocks(x_rows: usize, n: usize, fan_in: usize, live: usize) -> [(usize, usize, usize); 2] {
    if live == fan_in {
        [(0, x_rows, fan_in), (x_rows, 0, fan_in)]
    } else {
        [(0, n, fan_in), (n, x_rows - n, live)]
    }
}

fn affine_forward(x: &JetBatch, params: &[f64], offset: usize, d: Dense, live: usize) -> JetBatch {
    debug_assert_eq!(x.width, d.fan_in);
    let mut y = JetBatch::zeros(x.order, x.n, d.fan_out);
    let w = &params[offset..offset + d.fan_in * d.fan_out];
    let bias = &params[offset + d.fan_in * d.fan_out..offset + d.param_count()];
    let (fi, fo) = (d.fan_in as isize, d.fan_out as isize);
    // y = x · Wᵀ, W stored (fan_out × fan_in) row-major
    for (r0, rows, k) in blocks(x.rows(), x.n, d.fan_in, live) {
        if rows > 0 {
            gemm(
                rows,
                k,
                d.fan_out,
                &x.data[r0 * d.fan_in..],
                [fi, 1],
                w,
                [1, fi],
                0.0,
                &mut y.data[r0 * d.fan_out..],
                [fo, 1],
            );
        }
    }
    for row in y.ch_mut(CH_VALUE).chunks_exact_mut(d.fan_out) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
    y
}

fn affine_weight_grad(ybar: &JetBatch, x: &JetBatch, offset: usize, d: Dense, live: usize, grad: &mut [f64]) {
    let (gw, gb) = grad[offset..offset + d.param_count()].split_at_mut(d.fan_in * d.fan_out);
    let (fi, fo) = (d.fan_in as isize, d.fan_out as isize);
    // dW += ȳᵀ · x over every channel row
    for (r0, rows, k) in blocks(ybar.rows(), ybar.n, d.fan_in, live) {
        if rows > 0 {
            gemm(
                d.fan_out,
                rows,
                k,
                &ybar.data[r0 * d.fan_out..],
                [1, fo],
                &x.data[r0 * d.fan_in..],
                [fi, 1],
                1.0,
                gw,
                [fi, 1],
            );
        }
    }
    for row in ybar.ch(CH_VALUE).chunks_exact(d.fan_out) {
        for (g, v) in gb.iter_mut().zip(row) {
            *g += v;
        }
    }
}

fn affine_input_grad(ybar: &JetBatch, params: &[f64], offset: usize, d: Dense, live: usize) -> JetBatch {
    let mut xbar = JetBatch::zeros(ybar.order, ybar.n, d.fan_in);
    let w = &params[offset..offset + d.fan_in * d.fan_out];
    let (fi, fo) = (d.fan_in as isize, d.fan_out as isize);
    for (r0, rows, k) in blocks(ybar.rows(), ybar.n, d.fan_in, live) {
        if rows > 0 {
            gemm(
                rows,
                d.fan_out,
                k,
                &ybar.data[r0 * d.fan_out..],
                [fo, 1],
                w,
                [fi, 1],
                0.0,
                &mut xbar.data[r0 * d.fan_in..],
                [fi, 1],
            );
        }
    }
    xbar
}

/// `tanh` through `expm1`, accurate near zero and cheaper than the libm
/// routine.
#[inline]
pub(crate) fn fast_tanh(x: f64) -> f64 {
    if x.abs() > 20.0 {
        return x.signum();
    }
    let e = (2.0 * x).exp_m1();
    e / (e + 2.0)
}

fn tanh_forward(x: &JetBatch) -> JetBatch {
    let mut y = JetBatch::zeros(x.order, x.n, x.width);
    let len = x.n * x.width;
    let (s_out, rest) = y.data.split_at_mut(len);
    for (s, v) in s_out.iter_mut().zip(x.ch(CH_VALUE)) {
        *s = fast_tanh(*v);
    }
    if x.order == JetOrder::Value {
        return y;
    }
    // first-derivative channels: p · g
    for c in 1..5 {
        let g = x.ch(c);
        let out = &mut rest[(c - 1) * len..c * len];
        for k in 0..len {
            let s = s_out[k];
            out[k] = (1.0 - s * s) * g[k];
        }
    }
    if x.order == JetOrder::Second {
        // p · h − 2 s p g²
        for d in 0..3 {
            let g = x.ch(CH_X + d);
            let h = x.ch(CH_XX + d);
            let out = &mut rest[(CH_XX + d - 1) * len..(CH_XX + d) * len];
            for k in 0..len {
                let s = s_out[k];
                let p = 1.0 - s * s;
                out[k] = p * h[k] - 2.0 * s * p * g[k] * g[k];
            }
        }
    }
    y
}

fn tanh_backward(x: &JetBatch, y: &JetBatch, ybar: &JetBatch) -> JetBatch {
    let len = x.n * x.width;
    let mut xbar = JetBatch::zeros(x.order, x.n, x.width);
    let s = y.ch(CH_VALUE);
    {
        let yv = ybar.ch(CH_VALUE);
        let xv = xbar.ch_mut(CH_VALUE);
        for k in 0..len {
            xv[k] = (1.0 - s[k] * s[k]) * yv[k];
        }
    }
    if x.order == JetOrder::Value {
        return xbar;
    }
    let (xv, xrest) = xbar.data.split_at_mut(len);
    for c in 1..5 {
        let g = x.ch(c);
        let yb = ybar.ch(c);
        let out = &mut xrest[(c - 1) * len..c * len];
        for k in 0..len {
            let sk = s[k];
            let p = 1.0 - sk * sk;
            out[k] = p * yb[k];
            xv[k] += -2.0 * sk * p * g[k] * yb[k];
        }
    }
    if x.order == JetOrder::Second {
        for d in 0..3 {
            let g = x.ch(CH_X + d);
            let h = x.ch(CH_XX + d);
            let yb = ybar.ch(CH_XX + d);
            for k in 0..len {
                let sk = s[k];
                let p = 1.0 - sk * sk;
                let a = yb[k];
                xrest[(CH_XX + d - 1) * len + k] = p * a;
                xrest[(CH_X + d - 1) * len + k] += -4.0 * sk * p * g[k] * a;
                xv[k] += a * (-2.0 * sk * p * h[k] - 2.0 * g[k] * g[k] * p * (p - 2.0 * sk * sk));
            }
        }
    }
    xbar
}

fn concat_forward(a: &JetBatch, b: &JetBatch) -> JetBatch {
    debug_assert_eq!(b.order, JetOrder::Value);
    let w = a.width + b.width;
    let mut y = JetBatch::zeros(a.order, a.n, w);
    for c in 0..a.channels() {
        let src = a.ch(c);
        let dst = y.ch_mut(c);
        for i in 0..a.n {
            dst[i * w..i * w + a.width].copy_from_slice(&src[i * a.width..(i + 1) * a.width]);
            if c == CH_VALUE {
                dst[i * w + a.width..(i + 1) * w]
                    .copy_from_slice(&b.data[i * b.width..(i + 1) * b.width]);
            }
        }
    }
    y
}

fn concat_backward(ybar: &JetBatch, wa: usize, wb: usize) -> (JetBatch, JetBatch) {
    let w = wa + wb;
    let n = ybar.n;
    let mut abar = JetBatch::zeros(ybar.order, n, wa);
    let mut bbar = JetBatch::zeros(JetOrder::Value, n, wb);
    for c in 0..ybar.channels() {
        let src = ybar.ch(c);
        let dst = abar.ch_mut(c);
        for i in 0..n {
            dst[i * wa..(i + 1) * wa].copy_from_slice(&src[i * w..i * w + wa]);
        }
    }
    let src = ybar.ch(CH_VALUE);
    for i in 0..n {
        bbar.data[i * wb..(i + 1) * wb].copy_from_slice(&src[i * w + wa..(i + 1) * w]);
    }
    (abar, bbar)
}

fn modulate_forward(gz: &JetBatch, x: &JetBatch) -> JetBatch {
    let w = x.width;
    let mut y = JetBatch::zeros(x.order, x.n, w);
    for c in 0..x.channels() {
        let src = x.ch(c);
        let dst = y.ch_mut(c);
        for i in 0..x.n {
            let gamma = &gz.data[i * 2 * w..i * 2 * w + w];
            let zeta = &gz.data[i * 2 * w + w..(i + 1) * 2 * w];
            for j in 0..w {
                dst[i * w + j] = gamma[j] * src[i * w + j] + if c == CH_VALUE { zeta[j] } else { 0.0 };
            }
        }
    }
    y
}

fn modulate_backward(gz: &JetBatch, x: &JetBatch, ybar: &JetBatch) -> (JetBatch, JetBatch) {
    let w = x.width;
    let n = x.n;
    let mut gzbar = JetBatch::zeros(JetOrder::Value, n, 2 * w);
    let mut xbar = JetBatch::zeros(x.order, n, w);
    for c in 0..x.channels() {
        let xs = x.ch(c);
        let yb = ybar.ch(c);
        let xb = xbar.ch_mut(c);
        for i in 0..n {
            for j in 0..w {
                let k = i * w + j;
                let gamma = gz.data[i * 2 * w + j];
                xb[k] = gamma * yb[k];
                gzbar.data[i * 2 * w + j] += yb[k] * xs[k];
                if c == CH_VALUE {
                    gzbar.data[i * 2 * w + w + j] += yb[k];
                }
            }
        }
    }
    (gzbar, xbar)
}

/// Output jet of a single point: value, ∂t, ∇ and pure second derivatives.
pub fn forward_jets(spec: &NetSpec, params: &[f64], coords: [f64; 4], material: [f64; 3], coord_scale: [f64; 4]) -> JetState {
    let input = NetInput {
        coords: vec![coords],
        material: vec![material],
        coord_scale,
    };
    NetTape::forward(spec, params, &input, JetOrder::Second)
        .output()
        .jet(0, 0)
}

/// Value-only forward pass; returns the network output per point.
pub fn forward_values(spec: &NetSpec, params: &[f64], input: &NetInput) -> Vec<f64> {
    NetTape::forward(spec, params, input, JetOrder::Value)
        .output()
        .data
        .clone()
}
