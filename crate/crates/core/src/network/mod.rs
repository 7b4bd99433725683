//! Two-hidden-layer price surrogate `F(T', k')` with closed-form propagation
//! of `(F, ∂T'F, ∂k'F, ∂²k'k'F)` and the matching reverse pass.
//!
//! Layer `l` computes `z ↦ ς(W z + b)`. Alongside the value, each layer
//! carries the input sensitivities `u_T`, `u_k` and the second strike
//! sensitivity `v`:
//!
//! ```text
//! a = W z + b,  a_T = W u_T,  a_k = W u_k,  a_kk = W v
//! z' = ς(a),  u_T' = ς'(a) a_T,  u_k' = ς'(a) a_k,  v' = ς''(a) a_k² + ς'(a) a_kk
//! ```
//!
//! In the sparse modes the first layer is split: the first half of its units
//! sees only `T'` (sigmoid), the rest only `k'` (softplus). With nonnegative
//! weights this makes `F` nondecreasing in both inputs and convex in `k'`.

mod activation;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use activation::{sigmoid, softplus, ActEval, Activation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchitectureMode {
    DenseSoft,
    SparseSoft,
    SparseHard,
}

impl ArchitectureMode {
    pub fn is_sparse(self) -> bool {
        !matches!(self, ArchitectureMode::DenseSoft)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ArchitectureMode::DenseSoft => "dense-soft",
            ArchitectureMode::SparseSoft => "sparse-soft",
            ArchitectureMode::SparseHard => "sparse-hard",
        }
    }
}

impl std::str::FromStr for ArchitectureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense-soft" => Ok(Self::DenseSoft),
            "sparse-soft" => Ok(Self::SparseSoft),
            "sparse-hard" => Ok(Self::SparseHard),
            other => Err(Error::InvalidInput(format!("unknown mode {other:?}"))),
        }
    }
}

/// Offsets of each block inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub h1: usize,
    pub h2: usize,
    /// Number of first-layer units wired to `T'` in sparse modes.
    pub h1_t: usize,
    pub sparse: bool,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub w3: usize,
    pub b3: usize,
    pub len: usize,
}

impl Layout {
    pub fn new(mode: ArchitectureMode, widths: [usize; 2]) -> Result<Self> {
        let [h1, h2] = widths;
        if h1 == 0 || h2 == 0 {
            return Err(Error::InvalidInput("hidden widths must be positive".into()));
        }
        let sparse = mode.is_sparse();
        if sparse && h1 < 2 {
            return Err(Error::InvalidInput(
                "sparse modes need at least two first-layer units".into(),
            ));
        }
        let w1_len = if sparse { h1 } else { 2 * h1 };
        let w1 = 0;
        let b1 = w1 + w1_len;
        let w2 = b1 + h1;
        let b2 = w2 + h1 * h2;
        let w3 = b2 + h2;
        let b3 = w3 + h2;
        Ok(Self {
            h1,
            h2,
            h1_t: h1 / 2,
            sparse,
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            len: b3 + 1,
        })
    }

    /// Index ranges of weight (not bias) entries.
    pub fn weight_ranges(&self) -> [std::ops::Range<usize>; 3] {
        [self.w1..self.b1, self.w2..self.b2, self.w3..self.b3]
    }

    fn first_activation(&self, unit: usize) -> Activation {
        if self.sparse && unit < self.h1_t {
            Activation::Sigmoid
        } else {
            Activation::Softplus
        }
    }
}

/// Network weights and biases in one flat vector, plus the architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    mode: ArchitectureMode,
    widths: [usize; 2],
    layout: Layout,
    data: Vec<f64>,
}

/// Network value and input sensitivities at one point, in scaled-input units.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalResult {
    pub value: f64,
    pub d_t: f64,
    pub d_k: f64,
    pub d_kk: f64,
}

impl NetParams {
    /// Uniform Glorot initialization. In `SparseHard` mode the absolute value
    /// of each weight is taken so the starting point is feasible.
    pub fn init(mode: ArchitectureMode, widths: [usize; 2], seed: u64) -> Result<Self> {
        let layout = Layout::new(mode, widths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = vec![0.0; layout.len];
        let [h1, h2] = widths;
        let fan_in_1 = if layout.sparse { 1 } else { 2 };
        let blocks = [
            (layout.w1..layout.b1, fan_in_1, h1),
            (layout.w2..layout.b2, h1, h2),
            (layout.w3..layout.b3, h2, 1),
        ];
        for (range, fan_in, fan_out) in blocks {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut data[range] {
                *w = rng.random_range(-limit..limit);
            }
        }
        let mut p = Self {
            mode,
            widths,
            layout,
            data,
        };
        if mode == ArchitectureMode::SparseHard {
            for r in p.layout.weight_ranges() {
                p.data[r].iter_mut().for_each(|w| *w = w.abs());
            }
        }
        Ok(p)
    }

    /// Build from a flat vector laid out as [`Layout`] describes.
    pub fn from_flat(mode: ArchitectureMode, widths: [usize; 2], data: Vec<f64>) -> Result<Self> {
        let layout = Layout::new(mode, widths)?;
        if data.len() != layout.len {
            return Err(Error::ShapeMismatch {
                expected: layout.len,
                got: data.len(),
            });
        }
        Ok(Self {
            mode,
            widths,
            layout,
            data,
        })
    }

    pub fn mode(&self) -> ArchitectureMode {
        self.mode
    }

    pub fn widths(&self) -> [usize; 2] {
        self.widths
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn num_params(&self) -> usize {
        self.data.len()
    }

    /// Smallest weight entry (biases excluded).
    pub fn min_weight(&self) -> f64 {
        self.layout
            .weight_ranges()
            .into_iter()
            .flat_map(|r| self.data[r].iter().copied())
            .fold(f64::INFINITY, f64::min)
    }

    /// Clamp every weight entry at zero in `SparseHard` mode; no-op otherwise.
    pub fn project_weights(&mut self) {
        if self.mode != ArchitectureMode::SparseHard {
            return;
        }
        for r in self.layout.weight_ranges() {
            for w in &mut self.data[r] {
                if *w < 0.0 {
                    *w = 0.0;
                }
            }
        }
    }

    /// Projected copy; see [`NetParams::project_weights`].
    pub fn projected(&self) -> Self {
        let mut p = self.clone();
        p.project_weights();
        p
    }

    fn first_layer_pre(&self, unit: usize, t: f64, k: f64) -> (f64, f64, f64) {
        let l = &self.layout;
        let d = &self.data;
        let b = d[l.b1 + unit];
        if l.sparse {
            let w = d[l.w1 + unit];
            if unit < l.h1_t {
                (w * t + b, w, 0.0)
            } else {
                (w * k + b, 0.0, w)
            }
        } else {
            let wt = d[l.w1 + 2 * unit];
            let wk = d[l.w1 + 2 * unit + 1];
            (wt * t + wk * k + b, wt, wk)
        }
    }

    /// First-layer outputs at a point.
    pub fn first_layer_activations(&self, t: f64, k: f64) -> Vec<f64> {
        (0..self.layout.h1)
            .map(|i| {
                let (a, _, _) = self.first_layer_pre(i, t, k);
                self.layout.first_activation(i).value(a)
            })
            .collect()
    }

    /// Network value at scaled inputs `(t, k)`.
    pub fn forward(&self, t: f64, k: f64) -> f64 {
        let l = &self.layout;
        let d = &self.data;
        let z1 = self.first_layer_activations(t, k);
        let mut out = d[l.b3];
        for j in 0..l.h2 {
            let row = &d[l.w2 + j * l.h1..l.w2 + (j + 1) * l.h1];
            let a = d[l.b2 + j] + dot(row, &z1);
            out += d[l.w3 + j] * softplus(a);
        }
        softplus(out)
    }

    /// Value and exact input sensitivities at scaled inputs `(t, k)`.
    pub fn forward_with_sensitivities(&self, t: f64, k: f64) -> EvalResult {
        let mut tape = Tape::new(&self.layout);
        self.forward_tape(t, k, &mut tape)
    }

    pub(crate) fn forward_tape(&self, t: f64, k: f64, tape: &mut Tape) -> EvalResult {
        let l = &self.layout;
        let d = &self.data;
        for i in 0..l.h1 {
            let (a, a_t, a_k) = self.first_layer_pre(i, t, k);
            let e = l.first_activation(i).eval(a);
            tape.act1[i] = e;
            tape.pre1.set(i, a, a_t, a_k, 0.0);
            tape.out1.set(i, e.value, e.d1 * a_t, e.d1 * a_k, e.d2 * a_k * a_k);
        }
        for j in 0..l.h2 {
            let row = &d[l.w2 + j * l.h1..l.w2 + (j + 1) * l.h1];
            let a = d[l.b2 + j] + dot(row, &tape.out1.z);
            let a_t = dot(row, &tape.out1.t);
            let a_k = dot(row, &tape.out1.k);
            let a_kk = dot(row, &tape.out1.kk);
            let e = Activation::Softplus.eval(a);
            tape.act2[j] = e;
            tape.pre2.set(j, a, a_t, a_k, a_kk);
            tape.out2.set(j, e.value, e.d1 * a_t, e.d1 * a_k, e.d2 * a_k * a_k + e.d1 * a_kk);
        }
        let w3 = &d[l.w3..l.b3];
        let a = d[l.b3] + dot(w3, &tape.out2.z);
        let a_t = dot(w3, &tape.out2.t);
        let a_k = dot(w3, &tape.out2.k);
        let a_kk = dot(w3, &tape.out2.kk);
        let e = Activation::Softplus.eval(a);
        tape.act3 = e;
        tape.pre3 = [a, a_t, a_k, a_kk];
        EvalResult {
            value: e.value,
            d_t: e.d1 * a_t,
            d_k: e.d1 * a_k,
            d_kk: e.d2 * a_k * a_k + e.d1 * a_kk,
        }
    }

    /// Reverse pass: given adjoints of `(F, ∂T F, ∂k F, ∂²kk F)` at the point
    /// recorded in `tape`, accumulate the parameter gradient into `grad`.
    pub(crate) fn backward_tape(&self, t: f64, k: f64, tape: &mut Tape, seed: &EvalResult, grad: &mut [f64]) {
        let l = &self.layout;
        let d = &self.data;

        let [_, a_t3, a_k3, a_kk3] = tape.pre3;
        let (abar, at_bar, ak_bar, akk_bar) = layer_adjoint(&tape.act3, a_t3, a_k3, a_kk3, seed);
        for j in 0..l.h2 {
            grad[l.w3 + j] += abar * tape.out2.z[j]
                + at_bar * tape.out2.t[j]
                + ak_bar * tape.out2.k[j]
                + akk_bar * tape.out2.kk[j];
        }
        grad[l.b3] += abar;

        // Adjoints of layer-1 outputs, accumulated over layer-2 rows.
        tape.g1.clear();
        for j in 0..l.h2 {
            let w3j = d[l.w3 + j];
            let up = EvalResult {
                value: w3j * abar,
                d_t: w3j * at_bar,
                d_k: w3j * ak_bar,
                d_kk: w3j * akk_bar,
            };
            let (a2, at2, ak2, akk2) =
                layer_adjoint(&tape.act2[j], tape.pre2.t[j], tape.pre2.k[j], tape.pre2.kk[j], &up);
            grad[l.b2 + j] += a2;
            let row = l.w2 + j * l.h1;
            let grow = &mut grad[row..row + l.h1];
            let wrow = &d[row..row + l.h1];
            for i in 0..l.h1 {
                grow[i] += a2 * tape.out1.z[i] + at2 * tape.out1.t[i] + ak2 * tape.out1.k[i] + akk2 * tape.out1.kk[i];
                tape.g1.z[i] += wrow[i] * a2;
                tape.g1.t[i] += wrow[i] * at2;
                tape.g1.k[i] += wrow[i] * ak2;
                tape.g1.kk[i] += wrow[i] * akk2;
            }
        }

        for i in 0..l.h1 {
            let up = EvalResult {
                value: tape.g1.z[i],
                d_t: tape.g1.t[i],
                d_k: tape.g1.k[i],
                d_kk: tape.g1.kk[i],
            };
            let (a1, at1, ak1, _) = layer_adjoint(&tape.act1[i], tape.pre1.t[i], tape.pre1.k[i], 0.0, &up);
            grad[l.b1 + i] += a1;
            if l.sparse {
                grad[l.w1 + i] += if i < l.h1_t { a1 * t + at1 } else { a1 * k + ak1 };
            } else {
                grad[l.w1 + 2 * i] += a1 * t + at1;
                grad[l.w1 + 2 * i + 1] += a1 * k + ak1;
            }
        }
    }

    /// Serialize as a versioned JSON checkpoint.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let l = &self.layout;
        let d = &self.data;
        Checkpoint {
            version: CHECKPOINT_VERSION,
            mode: self.mode,
            widths: self.widths,
            w1: d[l.w1..l.b1].to_vec(),
            b1: d[l.b1..l.w2].to_vec(),
            w2: d[l.w2..l.b2].to_vec(),
            b2: d[l.b2..l.w3].to_vec(),
            w3: d[l.w3..l.b3].to_vec(),
            b3: d[l.b3],
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                c.version
            )));
        }
        let mut data = Vec::new();
        for block in [&c.w1, &c.b1, &c.w2, &c.b2, &c.w3] {
            data.extend_from_slice(block);
        }
        data.push(c.b3);
        Self::from_flat(c.mode, c.widths, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_checkpoint(&serde_json::from_str(&text)?)
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk parameter document. Weight matrices are row-major; in sparse
/// modes `w1` holds one weight per first-layer unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub mode: ArchitectureMode,
    pub widths: [usize; 2],
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: f64,
}

/// Adjoint of one unit `ς(a)` with sensitivities. Returns the adjoints of
/// `(a, a_T, a_k, a_kk)` given adjoints of the unit's four outputs.
#[inline]
fn layer_adjoint(e: &ActEval, a_t: f64, a_k: f64, a_kk: f64, g: &EvalResult) -> (f64, f64, f64, f64) {
    let abar = g.value * e.d1
        + g.d_t * e.d2 * a_t
        + g.d_k * e.d2 * a_k
        + g.d_kk * (e.d3 * a_k * a_k + e.d2 * a_kk);
    let at_bar = g.d_t * e.d1;
    let ak_bar = g.d_k * e.d1 + g.d_kk * 2.0 * e.d2 * a_k;
    let akk_bar = g.d_kk * e.d1;
    (abar, at_bar, ak_bar, akk_bar)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Default)]
pub(crate) struct SensVec {
    z: Vec<f64>,
    t: Vec<f64>,
    k: Vec<f64>,
    kk: Vec<f64>,
}

impl SensVec {
    fn zeros(n: usize) -> Self {
        Self {
            z: vec![0.0; n],
            t: vec![0.0; n],
            k: vec![0.0; n],
            kk: vec![0.0; n],
        }
    }

    #[inline]
    fn set(&mut self, i: usize, z: f64, t: f64, k: f64, kk: f64) {
        self.z[i] = z;
        self.t[i] = t;
        self.k[i] = k;
        self.kk[i] = kk;
    }

    fn clear(&mut self) {
        for v in [&mut self.z, &mut self.t, &mut self.k, &mut self.kk] {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

/// Per-point forward record reused by the reverse pass.
#[derive(Debug, Clone)]
pub(crate) struct Tape {
    act1: Vec<ActEval>,
    pre1: SensVec,
    out1: SensVec,
    act2: Vec<ActEval>,
    pre2: SensVec,
    out2: SensVec,
    act3: ActEval,
    pre3: [f64; 4],
    g1: SensVec,
}

impl Tape {
    pub(crate) fn new(l: &Layout) -> Self {
        let zero = ActEval {
            value: 0.0,
            d1: 0.0,
            d2: 0.0,
            d3: 0.0,
        };
        Self {
            act1: vec![zero; l.h1],
            pre1: SensVec::zeros(l.h1),
            out1: SensVec::zeros(l.h1),
            act2: vec![zero; l.h2],
            pre2: SensVec::zeros(l.h2),
            out2: SensVec::zeros(l.h2),
            act3: zero,
            pre3: [0.0; 4],
            g1: SensVec::zeros(l.h1),
        }
    }
}

/// One semi-affine layer `ς(W z + b)` applied to a value-and-sensitivity
/// state; `w` is `rows × z.len()` row-major. This is the propagation rule the
/// network uses for its dense layers.
pub fn propagate_layer(act: Activation, w: &[f64], b: &[f64], input: &[EvalResult]) -> Vec<EvalResult> {
    let cols = input.len();
    b.iter()
        .enumerate()
        .map(|(j, bj)| {
            let row = &w[j * cols..(j + 1) * cols];
            let mut acc = EvalResult {
                value: *bj,
                ..Default::default()
            };
            for (wi, x) in row.iter().zip(input) {
                acc.value += wi * x.value;
                acc.d_t += wi * x.d_t;
                acc.d_k += wi * x.d_k;
                acc.d_kk += wi * x.d_kk;
            }
            let e = act.eval(acc.value);
            EvalResult {
                value: e.value,
                d_t: e.d1 * acc.d_t,
                d_k: e.d1 * acc.d_k,
                d_kk: e.d2 * acc.d_k * acc.d_k + e.d1 * acc.d_kk,
            }
        })
        .collect()
}
