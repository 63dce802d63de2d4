use super::tape::{Real, Tape, Var};

/// Value of a field together with its first time derivative, first spatial
/// derivatives and pure second spatial derivatives.
///
/// Mixed second derivatives are not carried; the heat operator only needs the
/// Laplacian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet<R> {
    pub value: R,
    pub d_dt: R,
    pub d_dx: [R; 3],
    pub d2_dx2: [R; 3],
}

pub type JetState = Jet<f64>;

impl Default for JetState {
    fn default() -> Self {
        Self::constant(0.0)
    }
}

impl JetState {
    pub fn constant(value: f64) -> Self {
        Jet {
            value,
            d_dt: 0.0,
            d_dx: [0.0; 3],
            d2_dx2: [0.0; 3],
        }
    }

    /// Channel view in storage order: value, t, x, y, z, xx, yy, zz.
    pub fn channels(&self) -> [f64; 8] {
        [
            self.value,
            self.d_dt,
            self.d_dx[0],
            self.d_dx[1],
            self.d_dx[2],
            self.d2_dx2[0],
            self.d2_dx2[1],
            self.d2_dx2[2],
        ]
    }

    pub fn from_channels(c: [f64; 8]) -> Self {
        Jet {
            value: c[0],
            d_dt: c[1],
            d_dx: [c[2], c[3], c[4]],
            d2_dx2: [c[5], c[6], c[7]],
        }
    }

    /// Records every channel as an independent tape input.
    pub fn on_tape<'t>(&self, tape: &'t Tape) -> Jet<Var<'t>> {
        let c = self.channels();
        Jet {
            value: tape.var(c[0]),
            d_dt: tape.var(c[1]),
            d_dx: [tape.var(c[2]), tape.var(c[3]), tape.var(c[4])],
            d2_dx2: [tape.var(c[5]), tape.var(c[6]), tape.var(c[7])],
        }
    }

    /// Linear combination of two jets.
    pub fn combine(a: f64, x: &Self, b: f64, y: &Self) -> Self {
        let cx = x.channels();
        let cy = y.channels();
        let mut out = [0.0; 8];
        for i in 0..8 {
            out[i] = a * cx[i] + b * cy[i];
        }
        Self::from_channels(out)
    }
}

impl<'t> Jet<Var<'t>> {
    /// Tape indices of the eight channels, in storage order.
    pub fn indices(&self) -> [usize; 8] {
        [
            self.value.index(),
            self.d_dt.index(),
            self.d_dx[0].index(),
            self.d_dx[1].index(),
            self.d_dx[2].index(),
            self.d2_dx2[0].index(),
            self.d2_dx2[1].index(),
            self.d2_dx2[2].index(),
        ]
    }

    pub fn values(&self) -> JetState {
        Jet {
            value: self.value.value(),
            d_dt: self.d_dt.value(),
            d_dx: self.d_dx.map(|v| v.value()),
            d2_dx2: self.d2_dx2.map(|v| v.value()),
        }
    }
}

impl<R: Real> Jet<R> {
    /// Applies a smooth scalar map `f` given `f(v)`, `f'(v)` and `f''(v)`.
    pub fn compose(&self, f: R, f1: R, f2: R) -> Self {
        let g = self.d_dx;
        Jet {
            value: f,
            d_dt: f1 * self.d_dt,
            d_dx: [f1 * g[0], f1 * g[1], f1 * g[2]],
            d2_dx2: [
                f1 * self.d2_dx2[0] + f2 * g[0].square(),
                f1 * self.d2_dx2[1] + f2 * g[1].square(),
                f1 * self.d2_dx2[2] + f2 * g[2].square(),
            ],
        }
    }

    pub fn softplus(&self) -> Self {
        let s = self.value.sigmoid();
        let s2 = s * (-s + 1.0);
        self.compose(self.value.softplus(), s, s2)
    }

    pub fn tanh(&self) -> Self {
        let t = self.value.tanh();
        let p = -(t * t) + 1.0;
        let p2 = t * p * (-2.0);
        self.compose(t, p, p2)
    }

    /// Multiplies by a scalar that does not depend on the coordinates.
    pub fn scale(&self, s: R) -> Self {
        Jet {
            value: self.value * s,
            d_dt: self.d_dt * s,
            d_dx: self.d_dx.map(|g| g * s),
            d2_dx2: self.d2_dx2.map(|h| h * s),
        }
    }

    pub fn add_const(&self, c: f64) -> Self {
        Jet {
            value: self.value + c,
            ..*self
        }
    }

    /// `min(self, ceiling)`; beyond the ceiling the value saturates and every
    /// derivative channel is zero.
    pub fn clip_max(&self, ceiling: f64) -> Self {
        if self.value.val() > ceiling {
            let zero = self.value.lift(0.0);
            Jet {
                value: self.value.min_const(ceiling),
                d_dt: zero,
                d_dx: [zero; 3],
                d2_dx2: [zero; 3],
            }
        } else {
            *self
        }
    }

    pub fn laplacian(&self) -> R {
        self.d2_dx2[0] + self.d2_dx2[1] + self.d2_dx2[2]
    }
}
