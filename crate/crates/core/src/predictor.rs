//! Linear and residual-network price predictors with manual backward passes.
//!
//! Both kinds map a standardized feature vector `x` to 24 log prices. The
//! residual network feeds `x` into every layer:
//!
//! ```text
//! y_1     = act(Wx_1 x + b_1)
//! y_{l+1} = act(Wy_{l+1} y_l + Wx_{l+1} x + b_{l+1})
//! out     = Wy_out y_L + Wx_out x + b_out
//! ```
//!
//! Parameters are addressed as one flat vector (layer by layer: `Wy`, `Wx`,
//! `b`, row-major) so optimizers need no knowledge of the layout.

use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::data::{FeatureLayout, Standardizer};
use crate::error::{check_len, Error, Result};
use crate::ess::{DaySample, PriceCurve};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const RIDGE_DELTA: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorKind {
    Linear,
    Resnet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Self::Relu => z.max(0.0),
            Self::Tanh => z.tanh(),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Self::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Tanh => 1.0 - z.tanh().powi(2),
        }
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out += self * v`
    fn mul_add(&self, v: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o += self.row(r).iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// `out += self^T * v`
    fn tmul_add(&self, v: &[f64], out: &mut [f64]) {
        for (r, &vr) in v.iter().enumerate() {
            if vr == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += a * vr;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    /// Weight on the previous layer's state; absent on the first layer.
    pub theta_y: Option<Matrix>,
    /// Weight on the input features.
    pub theta_x: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    fn param_len(&self) -> usize {
        self.theta_y.as_ref().map_or(0, |m| m.data.len()) + self.theta_x.data.len() + self.bias.len()
    }

    fn width(&self) -> usize {
        self.bias.len()
    }

    fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.theta_y
            .as_mut()
            .map(|m| m.data.as_mut_slice())
            .into_iter()
            .chain([self.theta_x.data.as_mut_slice(), self.bias.as_mut_slice()])
    }

    fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.theta_y
            .as_ref()
            .map(|m| m.data.as_slice())
            .into_iter()
            .chain([self.theta_x.data.as_slice(), self.bias.as_slice()])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorParams {
    pub kind: PredictorKind,
    #[serde(default)]
    pub activation: Activation,
    /// Hidden layers followed by the output layer.
    pub layers: Vec<Layer>,
    pub feature_dim: usize,
    pub output_dim: usize,
    pub standardizer: Standardizer,
    pub dropout_rate: f64,
    /// Keeps the input-skip maps of all but the first layer at zero
    /// (a plain multilayer perceptron).
    #[serde(default)]
    pub frozen_skips: bool,
    #[serde(default)]
    pub layout: Option<FeatureLayout>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Intermediate values of a train-mode forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    pub pre_activations: Vec<Vec<f64>>,
    /// Hidden activations after dropout.
    pub activations: Vec<Vec<f64>>,
    /// Per-unit dropout multipliers: 0 or `1 / (1 - rate)`.
    pub masks: Vec<Vec<f64>>,
}

impl PredictorParams {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_len).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            for s in l.slices() {
                out.extend_from_slice(s);
            }
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_len("flat parameter vector", self.param_count(), flat.len())?;
        let mut off = 0;
        for l in &mut self.layers {
            for s in l.slices_mut() {
                s.copy_from_slice(&flat[off..off + s.len()]);
                off += s.len();
            }
        }
        Ok(())
    }

    /// Zeroes the gradient entries of parameters held fixed.
    pub fn mask_frozen(&self, grad: &mut [f64]) {
        if !self.frozen_skips {
            return;
        }
        let mut off = 0;
        for (i, l) in self.layers.iter().enumerate() {
            off += l.theta_y.as_ref().map_or(0, |m| m.data.len());
            let n = l.theta_x.data.len();
            if i > 0 {
                grad[off..off + n].fill(0.0);
            }
            off += n + l.bias.len();
        }
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.layers.is_empty() {
            return bad("predictor has no layers".into());
        }
        if self.kind == PredictorKind::Linear && (self.layers.len() != 1 || self.layers[0].theta_y.is_some()) {
            return bad("linear predictor must have exactly one affine layer".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout rate {} outside [0, 1)", self.dropout_rate));
        }
        check_len("standardizer", self.feature_dim, self.standardizer.dim())?;
        if self.standardizer.stddev.iter().any(|&s| s.is_nan() || s <= 0.0) {
            return bad("standardizer stddev must be > 0".into());
        }
        if let Some(layout) = &self.layout {
            check_len("feature layout", self.feature_dim, layout.dim())?;
        }
        let mut prev: Option<usize> = None;
        for (i, l) in self.layers.iter().enumerate() {
            let w = l.width();
            if l.theta_x.rows != w || l.theta_x.cols != self.feature_dim || l.theta_x.data.len() != w * self.feature_dim
            {
                return bad(format!("layer {i}: input weight shape mismatch"));
            }
            match (&l.theta_y, prev) {
                (None, None) => {}
                (Some(m), Some(p)) if m.rows == w && m.cols == p && m.data.len() == w * p => {}
                _ => return bad(format!("layer {i}: state weight shape mismatch")),
            }
            prev = Some(w);
        }
        check_len("output layer", self.output_dim, prev.unwrap_or(0))
    }
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Matrix {
    let r = 1.0 / (fan_in as f64).sqrt();
    Matrix {
        rows,
        cols,
        data: (0..rows * cols).map(|_| rng.gen_range(-r..r)).collect(),
    }
}

/// Ridge least-squares map from standardized features to log price:
/// returns `(W, b)` minimizing `|Z W^T + 1 b^T - Y|^2 + delta |[W b]|^2`.
pub fn least_squares_map(train: &[DaySample], standardizer: &Standardizer) -> Result<(Matrix, Vec<f64>)> {
    let Some(first) = train.first() else {
        return Err(Error::InvalidInput("empty training set".into()));
    };
    let f = standardizer.dim();
    let t = first.log_price.len();
    let n = train.len();
    let mut z = DMatrix::<f64>::zeros(n, f + 1);
    let mut y = DMatrix::<f64>::zeros(n, t);
    for (i, s) in train.iter().enumerate() {
        check_len("target curve", t, s.log_price.len())?;
        let zi = standardizer.apply(&s.features)?;
        for (j, v) in zi.iter().enumerate() {
            z[(i, j)] = *v;
        }
        z[(i, f)] = 1.0;
        for (j, v) in s.log_price.iter().enumerate() {
            y[(i, j)] = *v;
        }
    }
    let mut gram = z.transpose() * &z;
    for k in 0..=f {
        gram[(k, k)] += RIDGE_DELTA;
    }
    let rhs = z.transpose() * y;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Singular("normal equations not positive definite after ridge".into()))?;
    let sol = chol.solve(&rhs);
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("least-squares solution is not finite".into()));
    }
    let mut w = Matrix::zeros(t, f);
    for r in 0..t {
        for c in 0..f {
            w.set(r, c, sol[(c, r)]);
        }
    }
    let b = (0..t).map(|r| sol[(f, r)]).collect();
    Ok((w, b))
}

/// Linear predictor initialized at the ridge least-squares fit.
pub fn init_linear(train: &[DaySample], standardizer: Standardizer) -> Result<PredictorParams> {
    let (theta_x, bias) = least_squares_map(train, &standardizer)?;
    let params = PredictorParams {
        kind: PredictorKind::Linear,
        activation: Activation::Relu,
        feature_dim: standardizer.dim(),
        output_dim: bias.len(),
        layers: vec![Layer {
            theta_y: None,
            theta_x,
            bias,
        }],
        standardizer,
        dropout_rate: 0.0,
        frozen_skips: false,
        layout: None,
    };
    params.check()?;
    Ok(params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResnetConfig {
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
    pub dropout_rate: f64,
    /// Zero and freeze every input-skip map after the first layer.
    pub frozen_skips: bool,
}

impl Default for ResnetConfig {
    fn default() -> Self {
        Self {
            hidden_widths: vec![50, 50],
            activation: Activation::Relu,
            dropout_rate: 0.0,
            frozen_skips: false,
        }
    }
}

/// Residual network with uniform `±1/sqrt(fan_in)` weights, zero biases,
/// and the output layer's input-skip map set to the least-squares fit.
pub fn init_resnet(
    train: &[DaySample],
    standardizer: Standardizer,
    cfg: &ResnetConfig,
    seed: u64,
) -> Result<PredictorParams> {
    if cfg.hidden_widths.is_empty() || cfg.hidden_widths.contains(&0) {
        return Err(Error::InvalidInput(
            "hidden widths must be non-empty and positive".into(),
        ));
    }
    let f = standardizer.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let mut prev: Option<usize> = None;
    for &w in &cfg.hidden_widths {
        let fan_in = f + prev.unwrap_or(0);
        let theta_y = prev.map(|p| uniform_matrix(&mut rng, w, p, fan_in));
        let theta_x = if cfg.frozen_skips && prev.is_some() {
            Matrix::zeros(w, f)
        } else {
            uniform_matrix(&mut rng, w, f, fan_in)
        };
        layers.push(Layer {
            theta_y,
            theta_x,
            bias: vec![0.0; w],
        });
        prev = Some(w);
    }
    let last = prev.expect("at least one hidden layer");
    let (ls_w, ls_b) = if cfg.frozen_skips {
        let t = train.first().map_or(0, |s| s.log_price.len());
        (Matrix::zeros(t, f), None)
    } else {
        let (w, b) = least_squares_map(train, &standardizer)?;
        (w, Some(b))
    };
    let t = ls_w.rows;
    if t == 0 {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    layers.push(Layer {
        theta_y: Some(uniform_matrix(&mut rng, t, last, last + f)),
        theta_x: ls_w,
        bias: ls_b.unwrap_or_else(|| mean_target(train, t)),
    });
    let params = PredictorParams {
        kind: PredictorKind::Resnet,
        activation: cfg.activation,
        layers,
        feature_dim: f,
        output_dim: t,
        standardizer,
        dropout_rate: cfg.dropout_rate,
        frozen_skips: cfg.frozen_skips,
        layout: None,
    };
    params.check()?;
    Ok(params)
}

fn mean_target(train: &[DaySample], t: usize) -> Vec<f64> {
    let mut m = vec![0.0; t];
    for s in train {
        for (a, b) in m.iter_mut().zip(&s.log_price) {
            *a += b;
        }
    }
    m.iter_mut().for_each(|a| *a /= train.len() as f64);
    m
}

/// Output (log prices) for standardized features. Train mode draws dropout
/// masks from `seed` and returns the trace needed by [`backward`].
pub fn forward(
    params: &PredictorParams,
    features: &[f64],
    mode: Mode,
    seed: u64,
) -> Result<(Vec<f64>, Option<ForwardTrace>)> {
    check_len("feature vector", params.feature_dim, features.len())?;
    let n_hidden = params.layers.len() - 1;
    let keep = 1.0 - params.dropout_rate;
    let mut rng = (mode == Mode::Train && params.dropout_rate > 0.0).then(|| ChaCha8Rng::seed_from_u64(seed));
    let mut pre_activations = Vec::new();
    let mut activations: Vec<Vec<f64>> = Vec::new();
    let mut masks = Vec::new();
    for layer in &params.layers[..n_hidden] {
        let mut z = layer.bias.clone();
        layer.theta_x.mul_add(features, &mut z);
        if let (Some(wy), Some(prev)) = (&layer.theta_y, activations.last()) {
            wy.mul_add(prev, &mut z);
        }
        let mask: Vec<f64> = match rng.as_mut() {
            Some(r) => (0..z.len())
                .map(|_| if r.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect(),
            None => vec![1.0; z.len()],
        };
        let a = z
            .iter()
            .zip(&mask)
            .map(|(&zi, &m)| params.activation.apply(zi) * m)
            .collect();
        pre_activations.push(z);
        activations.push(a);
        masks.push(mask);
    }
    let out_layer = &params.layers[n_hidden];
    let mut out = out_layer.bias.clone();
    out_layer.theta_x.mul_add(features, &mut out);
    if let (Some(wy), Some(prev)) = (&out_layer.theta_y, activations.last()) {
        wy.mul_add(prev, &mut out);
    }
    let trace = (mode == Mode::Train).then(|| ForwardTrace {
        input: features.to_vec(),
        pre_activations,
        activations,
        masks,
    });
    Ok((out, trace))
}

/// Gradient of `output . output_grad` with respect to the flat parameters.
pub fn backward(params: &PredictorParams, trace: &ForwardTrace, output_grad: &[f64]) -> Result<Vec<f64>> {
    check_len("output gradient", params.output_dim, output_grad.len())?;
    let n_hidden = params.layers.len() - 1;
    if trace.activations.len() != n_hidden || trace.input.len() != params.feature_dim {
        return Err(Error::InvalidInput("trace does not match the parameters".into()));
    }
    let mut grads: Vec<Vec<f64>> = vec![Vec::new(); params.layers.len()];
    let x = &trace.input;
    let mut delta = output_grad.to_vec();
    for li in (0..params.layers.len()).rev() {
        let layer = &params.layers[li];
        let prev = li.checked_sub(1).map(|p| &trace.activations[p]);
        let mut g = Vec::with_capacity(layer.param_len());
        if let (Some(wy), Some(a)) = (&layer.theta_y, prev) {
            for &d in &delta {
                g.extend(a.iter().map(|v| d * v));
            }
            debug_assert_eq!(g.len(), wy.data.len());
        }
        for &d in &delta {
            g.extend(x.iter().map(|v| d * v));
        }
        g.extend_from_slice(&delta);
        grads[li] = g;
        if li == 0 {
            break;
        }
        let wy = layer.theta_y.as_ref().expect("non-first layer has a state weight");
        let mut da = vec![0.0; wy.cols];
        wy.tmul_add(&delta, &mut da);
        let z = &trace.pre_activations[li - 1];
        let m = &trace.masks[li - 1];
        delta = da
            .iter()
            .zip(z)
            .zip(m)
            .map(|((d, &zi), mi)| d * mi * params.activation.derivative(zi))
            .collect();
    }
    let mut flat: Vec<f64> = grads.concat();
    params.mask_frozen(&mut flat);
    Ok(flat)
}

/// Eval-mode output for raw features.
pub fn predict_log(params: &PredictorParams, raw_features: &[f64]) -> Result<Vec<f64>> {
    let z = params.standardizer.apply(raw_features)?;
    Ok(forward(params, &z, Mode::Eval, 0)?.0)
}

/// Predicted price curve for raw (unstandardized) features.
pub fn predict_price(params: &PredictorParams, raw_features: &[f64]) -> Result<PriceCurve> {
    let out = predict_log(params, raw_features)?;
    let price: Vec<f64> = out.iter().map(|v| v.exp()).collect();
    if price.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(Error::Numerical("predicted price is not finite and positive".into()));
    }
    PriceCurve::new(price)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    version: u32,
    params: PredictorParams,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: u32,
}

pub fn checkpoint_to_string(params: &PredictorParams) -> Result<String> {
    canonical::to_string(&Checkpoint {
        version: CHECKPOINT_VERSION,
        params: params.clone(),
    })
}

pub fn checkpoint_from_str(text: &str) -> Result<PredictorParams> {
    let probe: VersionProbe = serde_json::from_str(text)?;
    if probe.version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: probe.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let ck: Checkpoint = canonical::from_str(text)?;
    ck.params.check()?;
    Ok(ck.params)
}

pub fn save_checkpoint(params: &PredictorParams, path: impl AsRef<Path>) -> Result<()> {
    crate::error::write_text(path, checkpoint_to_string(params)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<PredictorParams> {
    checkpoint_from_str(&crate::error::read_text(path)?)
}
