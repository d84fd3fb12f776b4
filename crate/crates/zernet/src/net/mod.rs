//! Trainable layer stack: steered Zernike convolutions with angular
//! max-pooling, shared linear layers, a scalar regression head, hand-written
//! reverse-mode gradients, and Adam.

pub mod checkpoint;
pub mod gradcheck;

use ndarray::{Array2, Array3, Zip};
use rand::{Rng as _, SeedableRng as _};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patch::{extract_all, PatchSet};
use crate::zernike::{rotate_coefficients_in_place, RotationPair, ZernikeBasisSet};

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};

/// Input channels of the first convolution: tangent-frame x, y, and normal
/// offsets.
pub const XYZ_CHANNELS: usize = 3;

/// Upper bound on cos/sin rotation pairs for any permitted basis order; lets
/// the convolution kernels keep per-harmonic accumulators on the stack.
const PAIR_CAP: usize = 48;

/// Shape of the five-stage pipeline: three convolution units (extract,
/// convolve, pool, ReLU), a shared linear layer, and a width-1 regression
/// head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub max_order: u32,
    /// Number of steering angles Q; responses are taken at 2πq/Q.
    pub rotations: usize,
    pub conv_filters: [usize; 3],
    pub linear_width: usize,
    /// Apply ReLU between the linear layer and the regression head.
    pub linear_relu: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            max_order: 5,
            rotations: 16,
            conv_filters: [128, 512, 1024],
            linear_width: 800,
            linear_relu: true,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rotations == 0 {
            return Err(Error::Usage("rotations must be at least 1".into()));
        }
        if self.conv_filters.iter().any(|&p| p == 0) || self.linear_width == 0 {
            return Err(Error::Usage("layer widths must be at least 1".into()));
        }
        Ok(())
    }

    /// Architecture string stored in checkpoints; any drift between a stored
    /// descriptor and the running config is a refusal to load.
    pub fn descriptor(&self) -> String {
        format!(
            "zernet order={} q={} conv={},{},{} linear={} linear_relu={}",
            self.max_order,
            self.rotations,
            self.conv_filters[0],
            self.conv_filters[1],
            self.conv_filters[2],
            self.linear_width,
            u8::from(self.linear_relu),
        )
    }
}

/// Half-open range of one parameter tensor inside the flat store.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub len: usize,
}

impl Slot {
    pub fn of<'a>(&self, store: &'a [f64]) -> &'a [f64] {
        &store[self.offset..self.offset + self.len]
    }

    pub fn of_mut<'a>(&self, store: &'a mut [f64]) -> &'a mut [f64] {
        &mut store[self.offset..self.offset + self.len]
    }
}

/// Flat parameter layout in declaration order: conv weights then bias per
/// unit, linear, head. Checkpoints and Adam moments follow this order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub conv_w: [Slot; 3],
    pub conv_b: [Slot; 3],
    pub linear_w: Slot,
    pub linear_b: Slot,
    pub head_w: Slot,
    pub head_b: Slot,
    pub total: usize,
}

impl ParamLayout {
    fn new(config: &NetConfig, basis_len: usize) -> Self {
        let mut offset = 0;
        let mut take = |len: usize| {
            let slot = Slot { offset, len };
            offset += len;
            slot
        };
        let chain = [
            XYZ_CHANNELS,
            config.conv_filters[0],
            config.conv_filters[1],
            config.conv_filters[2],
        ];
        let mut conv_w = [Slot { offset: 0, len: 0 }; 3];
        let mut conv_b = [Slot { offset: 0, len: 0 }; 3];
        for i in 0..3 {
            conv_w[i] = take(chain[i + 1] * chain[i] * basis_len);
            conv_b[i] = take(chain[i + 1]);
        }
        let linear_w = take(config.linear_width * config.conv_filters[2]);
        let linear_b = take(config.linear_width);
        let head_w = take(config.linear_width);
        let head_b = take(1);
        ParamLayout {
            conv_w,
            conv_b,
            linear_w,
            linear_b,
            head_w,
            head_b,
            total: offset,
        }
    }

    pub fn named_slots(&self) -> Vec<(&'static str, Slot)> {
        vec![
            ("conv1.weights", self.conv_w[0]),
            ("conv1.bias", self.conv_b[0]),
            ("conv2.weights", self.conv_w[1]),
            ("conv2.bias", self.conv_b[1]),
            ("conv3.weights", self.conv_w[2]),
            ("conv3.bias", self.conv_b[2]),
            ("linear.weights", self.linear_w),
            ("linear.bias", self.linear_b),
            ("head.weights", self.head_w),
            ("head.bias", self.head_b),
        ]
    }
}

/// Harmonic structure of the basis plus cos/sin tables at the Q steering
/// angles, laid out as Q × pairs.
#[derive(Clone, Debug)]
struct SteerPlan {
    zero: Vec<usize>,
    pairs: Vec<RotationPair>,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl SteerPlan {
    fn new(basis: &ZernikeBasisSet, rotations: usize) -> Self {
        let (zero, pairs) = basis.rotation_structure();
        let zero = zero.to_vec();
        let pairs = pairs.to_vec();
        assert!(pairs.len() <= PAIR_CAP);
        let mut cos = Vec::with_capacity(rotations * pairs.len());
        let mut sin = Vec::with_capacity(rotations * pairs.len());
        for q in 0..rotations {
            let phi = 2.0 * std::f64::consts::PI * q as f64 / rotations as f64;
            for pair in &pairs {
                let (s, c) = (pair.m as f64 * phi).sin_cos();
                cos.push(c);
                sin.push(s);
            }
        }
        SteerPlan { zero, pairs, cos, sin }
    }

    fn angle_row(&self, q: usize) -> (&[f64], &[f64]) {
        let np = self.pairs.len();
        (&self.cos[q * np..(q + 1) * np], &self.sin[q * np..(q + 1) * np])
    }
}

/// The full model: architecture, basis, and flat parameter store.
pub struct ZerNetModel {
    config: NetConfig,
    basis: ZernikeBasisSet,
    layout: ParamLayout,
    plan: SteerPlan,
    pub params: Vec<f64>,
}

/// Everything the backward pass needs from one forward run.
pub struct ForwardCache {
    /// Inputs of the second and third convolutions (the first reads the
    /// caller's coefficients directly).
    conv_in: Vec<Array3<f64>>,
    /// Pooled pre-activation responses per unit.
    z: Vec<Array2<f64>>,
    argmax: Vec<Array2<u32>>,
    h: Vec<Array2<f64>>,
    u: Array2<f64>,
    ur: Array2<f64>,
    pub pred: Vec<f64>,
}

impl ZerNetModel {
    pub fn new(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let basis = ZernikeBasisSet::new(config.max_order)?;
        let layout = ParamLayout::new(&config, basis.len());
        let plan = SteerPlan::new(&basis, config.rotations);
        let params = vec![0.0; layout.total];
        Ok(ZerNetModel { config, basis, layout, plan, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn basis(&self) -> &ZernikeBasisSet {
        &self.basis
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    pub fn descriptor(&self) -> String {
        self.config.descriptor()
    }

    /// Uniform fan-based init: conv weights within ±1/√(C·N), linear and head
    /// within ±1/√C_in, biases zero. Draw order follows the layout.
    pub fn init_params(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.basis.len();
        let chain = self.channel_chain();
        for i in 0..3 {
            let bound = 1.0 / ((chain[i] * n) as f64).sqrt();
            for w in self.layout.conv_w[i].of_mut(&mut self.params) {
                *w = rng.gen_range(-bound..bound);
            }
            self.layout.conv_b[i].of_mut(&mut self.params).fill(0.0);
        }
        let bound = 1.0 / (chain[3] as f64).sqrt();
        for w in self.layout.linear_w.of_mut(&mut self.params) {
            *w = rng.gen_range(-bound..bound);
        }
        self.layout.linear_b.of_mut(&mut self.params).fill(0.0);
        let bound = 1.0 / (self.config.linear_width as f64).sqrt();
        for w in self.layout.head_w.of_mut(&mut self.params) {
            *w = rng.gen_range(-bound..bound);
        }
        self.layout.head_b.of_mut(&mut self.params).fill(0.0);
    }

    fn channel_chain(&self) -> [usize; 4] {
        [
            XYZ_CHANNELS,
            self.config.conv_filters[0],
            self.config.conv_filters[1],
            self.config.conv_filters[2],
        ]
    }

    fn check_input(&self, input: &Array3<f64>, set: &PatchSet) -> Result<()> {
        let (s, c, n) = input.dim();
        if s != set.len() || c != XYZ_CHANNELS || n != self.basis.len() {
            return Err(Error::ShapeMismatch {
                layer: "input".into(),
                message: format!(
                    "coefficients {}x{}x{} for {} patches over {} bases",
                    s,
                    c,
                    n,
                    set.len(),
                    self.basis.len()
                ),
            });
        }
        if set.max_order != self.config.max_order {
            return Err(Error::ShapeMismatch {
                layer: "input".into(),
                message: format!(
                    "patch set order {} but model order {}",
                    set.max_order, self.config.max_order
                ),
            });
        }
        Ok(())
    }

    /// Full pipeline over one sample set; returns per-sample predictions and
    /// the cache for `backward`.
    pub fn forward(&self, input: &Array3<f64>, set: &PatchSet) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(input, set)?;
        let p = &self.params;
        let l = &self.layout;

        let (z1, am1) = self.conv_pool(l.conv_w[0].of(p), l.conv_b[0].of(p), input);
        let h1 = relu_of(&z1);
        let a1 = extract_all(&h1, &set.patches, &set.operators, true)?;

        let (z2, am2) = self.conv_pool(l.conv_w[1].of(p), l.conv_b[1].of(p), &a1);
        let h2 = relu_of(&z2);
        let a2 = extract_all(&h2, &set.patches, &set.operators, true)?;

        let (z3, am3) = self.conv_pool(l.conv_w[2].of(p), l.conv_b[2].of(p), &a2);
        let h3 = relu_of(&z3);

        let u = linear_forward(l.linear_w.of(p), l.linear_b.of(p), &h3);
        let ur = if self.config.linear_relu { relu_of(&u) } else { u.clone() };
        let out = linear_forward(l.head_w.of(p), l.head_b.of(p), &ur);
        let pred: Vec<f64> = out.column(0).to_vec();

        let cache = ForwardCache {
            conv_in: vec![a1, a2],
            z: vec![z1, z2, z3],
            argmax: vec![am1, am2, am3],
            h: vec![h1, h2, h3],
            u,
            ur,
            pred: pred.clone(),
        };
        Ok((pred, cache))
    }

    /// Reverse-mode gradients for every parameter given dLoss/dPrediction.
    /// The cache must come from a `forward` call with the same input and
    /// patch set.
    pub fn backward(
        &self,
        input: &Array3<f64>,
        set: &PatchSet,
        cache: &ForwardCache,
        dpred: &[f64],
    ) -> Result<Vec<f64>> {
        self.check_input(input, set)?;
        let s = set.len();
        if cache.pred.len() != s
            || cache.z.len() != 3
            || cache.h[0].dim() != (s, self.config.conv_filters[0])
            || cache.u.dim() != (s, self.config.linear_width)
        {
            return Err(Error::StaleCache);
        }
        if dpred.len() != s {
            return Err(Error::LengthMismatch {
                expected: s,
                got: dpred.len(),
                context: "prediction gradient".into(),
            });
        }

        let p = &self.params;
        let l = &self.layout;
        let mut grads = vec![0.0; l.total];

        let dout = Array2::from_shape_vec((s, 1), dpred.to_vec()).expect("length checked");
        let (dhw, dhb, dur) = linear_backward(l.head_w.of(p), &cache.ur, &dout);
        l.head_w.of_mut(&mut grads).copy_from_slice(&dhw);
        l.head_b.of_mut(&mut grads).copy_from_slice(&dhb);

        let mut du = dur;
        if self.config.linear_relu {
            relu_mask(&mut du, &cache.u);
        }
        let (dlw, dlb, dh3) = linear_backward(l.linear_w.of(p), &cache.h[2], &du);
        l.linear_w.of_mut(&mut grads).copy_from_slice(&dlw);
        l.linear_b.of_mut(&mut grads).copy_from_slice(&dlb);

        let mut delta = dh3;
        relu_mask(&mut delta, &cache.z[2]);
        for unit in (0..3).rev() {
            let conv_input = match unit {
                0 => input,
                _ => &cache.conv_in[unit - 1],
            };
            let want_input = unit > 0;
            let (dw, db, dcoeffs) = self.conv_pool_backward(
                l.conv_w[unit].of(p),
                conv_input,
                &cache.argmax[unit],
                &delta,
                want_input,
            );
            l.conv_w[unit].of_mut(&mut grads).copy_from_slice(&dw);
            l.conv_b[unit].of_mut(&mut grads).copy_from_slice(&db);
            if let Some(dcoeffs) = dcoeffs {
                let mut dh = extract_backward(set, &dcoeffs, true);
                relu_mask(&mut dh, &cache.z[unit - 1]);
                delta = dh;
            }
        }
        Ok(grads)
    }

    /// Convolution responses at all Q steering angles fused with the angular
    /// max; returns pooled pre-activations and argmax angles. Harmonic
    /// regrouping evaluates each angle from 2·pairs+1 accumulated products
    /// instead of a full N-term dot per angle.
    fn conv_pool(&self, w: &[f64], bias: &[f64], coeffs: &Array3<f64>) -> (Array2<f64>, Array2<u32>) {
        let (s, c_in, n) = coeffs.dim();
        let filters = bias.len();
        let rotations = self.config.rotations;
        let plan = &self.plan;
        let np = plan.pairs.len();
        let coeffs_slice = coeffs.as_slice().expect("standard layout");

        let mut z = Array2::zeros((s, filters));
        let mut am = Array2::zeros((s, filters));
        let z_slice = z.as_slice_mut().expect("standard layout");
        let am_slice = am.as_slice_mut().expect("standard layout");
        z_slice
            .par_chunks_mut(filters)
            .zip(am_slice.par_chunks_mut(filters))
            .enumerate()
            .for_each(|(x, (z_row, am_row))| {
                let a_row = &coeffs_slice[x * c_in * n..(x + 1) * c_in * n];
                let mut u = [0.0f64; PAIR_CAP];
                let mut v = [0.0f64; PAIR_CAP];
                for p in 0..filters {
                    let wp = &w[p * c_in * n..(p + 1) * c_in * n];
                    let mut a0 = bias[p];
                    u[..np].fill(0.0);
                    v[..np].fill(0.0);
                    for c in 0..c_in {
                        let wc = &wp[c * n..(c + 1) * n];
                        let ac = &a_row[c * n..(c + 1) * n];
                        for &j in &plan.zero {
                            a0 += wc[j] * ac[j];
                        }
                        for (i, pair) in plan.pairs.iter().enumerate() {
                            let (wcos, wsin) = (wc[pair.cos_idx], wc[pair.sin_idx]);
                            let (acos, asin) = (ac[pair.cos_idx], ac[pair.sin_idx]);
                            u[i] += wcos * acos + wsin * asin;
                            v[i] += wsin * acos - wcos * asin;
                        }
                    }
                    let mut best = f64::NEG_INFINITY;
                    let mut best_q = 0u32;
                    for q in 0..rotations {
                        let (ct, st) = plan.angle_row(q);
                        let mut g = a0;
                        for i in 0..np {
                            g += ct[i] * u[i] + st[i] * v[i];
                        }
                        if g > best {
                            best = g;
                            best_q = q as u32;
                        }
                    }
                    z_row[p] = best;
                    am_row[p] = best_q;
                }
            });
        (z, am)
    }

    /// Gradients of the fused convolution+pool. `delta` is the upstream
    /// gradient at the pooled outputs; each entry routes to its argmax angle.
    fn conv_pool_backward(
        &self,
        w: &[f64],
        coeffs: &Array3<f64>,
        argmax: &Array2<u32>,
        delta: &Array2<f64>,
        want_input_grad: bool,
    ) -> (Vec<f64>, Vec<f64>, Option<Array3<f64>>) {
        let (s, c_in, n) = coeffs.dim();
        let filters = delta.dim().1;
        let plan = &self.plan;
        let coeffs_slice = coeffs.as_slice().expect("standard layout");

        let mut dw = vec![0.0; filters * c_in * n];
        let mut db = vec![0.0; filters];
        // Filters own disjoint gradient rows, and each row sums over samples
        // in index order, so the reduction is deterministic under any worker
        // count.
        dw.par_chunks_mut(c_in * n)
            .zip(db.par_iter_mut())
            .enumerate()
            .for_each(|(p, (dwp, dbp))| {
                for x in 0..s {
                    let d = delta[(x, p)];
                    if d == 0.0 {
                        continue;
                    }
                    *dbp += d;
                    let (ct, st) = plan.angle_row(argmax[(x, p)] as usize);
                    let a_row = &coeffs_slice[x * c_in * n..(x + 1) * c_in * n];
                    for c in 0..c_in {
                        let dwc = &mut dwp[c * n..(c + 1) * n];
                        let ac = &a_row[c * n..(c + 1) * n];
                        for &j in &plan.zero {
                            dwc[j] += d * ac[j];
                        }
                        for (i, pair) in plan.pairs.iter().enumerate() {
                            let (acos, asin) = (ac[pair.cos_idx], ac[pair.sin_idx]);
                            dwc[pair.cos_idx] += d * (ct[i] * acos - st[i] * asin);
                            dwc[pair.sin_idx] += d * (st[i] * acos + ct[i] * asin);
                        }
                    }
                }
            });

        let dcoeffs = want_input_grad.then(|| {
            let mut da = Array3::zeros((s, c_in, n));
            let da_slice = da.as_slice_mut().expect("standard layout");
            da_slice
                .par_chunks_mut(c_in * n)
                .enumerate()
                .for_each(|(x, da_row)| {
                    for p in 0..filters {
                        let d = delta[(x, p)];
                        if d == 0.0 {
                            continue;
                        }
                        let (ct, st) = plan.angle_row(argmax[(x, p)] as usize);
                        let wp = &w[p * c_in * n..(p + 1) * c_in * n];
                        for c in 0..c_in {
                            let dac = &mut da_row[c * n..(c + 1) * n];
                            let wc = &wp[c * n..(c + 1) * n];
                            for &j in &plan.zero {
                                dac[j] += d * wc[j];
                            }
                            for (i, pair) in plan.pairs.iter().enumerate() {
                                let (wcos, wsin) = (wc[pair.cos_idx], wc[pair.sin_idx]);
                                dac[pair.cos_idx] += d * (ct[i] * wcos + st[i] * wsin);
                                dac[pair.sin_idx] += d * (-st[i] * wcos + ct[i] * wsin);
                            }
                        }
                    }
                });
            da
        });
        (dw, db, dcoeffs)
    }
}

/// One standalone convolution layer in the shape the pipeline composes;
/// useful for inspecting full S×P×Q response tensors at small scale.
#[derive(Clone, Debug)]
pub struct ZernikeConvLayer {
    /// P × C × N filter coefficients.
    pub weights: Array3<f64>,
    pub bias: Vec<f64>,
    pub rotations: usize,
}

/// Responses of every filter at every steering angle, built by explicitly
/// rotating filter coefficients. The model's fused path must agree with this
/// to rounding.
pub fn conv_forward(
    layer: &ZernikeConvLayer,
    basis: &ZernikeBasisSet,
    coeffs: &Array3<f64>,
) -> Result<Array3<f64>> {
    let (s, c_in, n) = coeffs.dim();
    let (filters, w_c, w_n) = layer.weights.dim();
    if w_c != c_in || w_n != n || n != basis.len() || layer.bias.len() != filters {
        return Err(Error::ShapeMismatch {
            layer: "conv".into(),
            message: format!(
                "filters {}x{}x{} against coefficients {}x{}x{}",
                filters, w_c, w_n, s, c_in, n
            ),
        });
    }
    if layer.rotations == 0 {
        return Err(Error::Usage("rotations must be at least 1".into()));
    }
    let mut out = Array3::zeros((s, filters, layer.rotations));
    let mut rotated = vec![0.0; n];
    for q in 0..layer.rotations {
        let phi = 2.0 * std::f64::consts::PI * q as f64 / layer.rotations as f64;
        for p in 0..filters {
            for c in 0..c_in {
                let w_row = layer.weights.slice(ndarray::s![p, c, ..]);
                rotated.copy_from_slice(w_row.as_slice().expect("contiguous row"));
                rotate_coefficients_in_place(basis, phi, &mut rotated);
                for x in 0..s {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += rotated[j] * coeffs[(x, c, j)];
                    }
                    out[(x, p, q)] += acc;
                }
            }
            for x in 0..s {
                out[(x, p, q)] += layer.bias[p];
            }
        }
    }
    Ok(out)
}

/// Max over the steering axis with argmax kept for backward routing; ties
/// break toward the lowest angle index.
pub fn angular_max_pool(responses: &Array3<f64>) -> (Array2<f64>, Array2<u32>) {
    let (s, filters, rotations) = responses.dim();
    assert!(rotations >= 1, "steering axis must be non-empty");
    let mut pooled = Array2::zeros((s, filters));
    let mut argmax = Array2::zeros((s, filters));
    for x in 0..s {
        for p in 0..filters {
            let mut best = f64::NEG_INFINITY;
            let mut best_q = 0u32;
            for q in 0..rotations {
                let v = responses[(x, p, q)];
                if v > best {
                    best = v;
                    best_q = q as u32;
                }
            }
            pooled[(x, p)] = best;
            argmax[(x, p)] = best_q;
        }
    }
    (pooled, argmax)
}

fn relu_of(z: &Array2<f64>) -> Array2<f64> {
    z.mapv(|v| v.max(0.0))
}

/// Zero the gradient wherever the pre-activation was clamped.
fn relu_mask(grad: &mut Array2<f64>, pre: &Array2<f64>) {
    Zip::from(grad).and(pre).for_each(|g, &z| {
        if z <= 0.0 {
            *g = 0.0;
        }
    });
}

/// Shared affine map per sample point: out[x] = W·input[x] + b with W stored
/// row-major as out_dim × in_dim.
fn linear_forward(w: &[f64], bias: &[f64], input: &Array2<f64>) -> Array2<f64> {
    let (s, c_in) = input.dim();
    let out_dim = bias.len();
    let input_slice = input.as_slice().expect("standard layout");
    let mut out = Array2::zeros((s, out_dim));
    let out_slice = out.as_slice_mut().expect("standard layout");
    out_slice
        .par_chunks_mut(out_dim)
        .enumerate()
        .for_each(|(x, row)| {
            let inp = &input_slice[x * c_in..(x + 1) * c_in];
            for (o, out_v) in row.iter_mut().enumerate() {
                let wr = &w[o * c_in..(o + 1) * c_in];
                let mut acc = bias[o];
                for (wv, iv) in wr.iter().zip(inp) {
                    acc += wv * iv;
                }
                *out_v = acc;
            }
        });
    out
}

fn linear_backward(
    w: &[f64],
    input: &Array2<f64>,
    dout: &Array2<f64>,
) -> (Vec<f64>, Vec<f64>, Array2<f64>) {
    let (s, c_in) = input.dim();
    let out_dim = dout.dim().1;
    let input_slice = input.as_slice().expect("standard layout");

    let mut dw = vec![0.0; out_dim * c_in];
    let mut db = vec![0.0; out_dim];
    dw.par_chunks_mut(c_in)
        .zip(db.par_iter_mut())
        .enumerate()
        .for_each(|(o, (dwr, dbo))| {
            for x in 0..s {
                let d = dout[(x, o)];
                if d == 0.0 {
                    continue;
                }
                *dbo += d;
                let inp = &input_slice[x * c_in..(x + 1) * c_in];
                for (dwv, iv) in dwr.iter_mut().zip(inp) {
                    *dwv += d * iv;
                }
            }
        });

    let mut dinput = Array2::zeros((s, c_in));
    let din_slice = dinput.as_slice_mut().expect("standard layout");
    din_slice
        .par_chunks_mut(c_in)
        .enumerate()
        .for_each(|(x, row)| {
            for o in 0..out_dim {
                let d = dout[(x, o)];
                if d == 0.0 {
                    continue;
                }
                let wr = &w[o * c_in..(o + 1) * c_in];
                for (rv, wv) in row.iter_mut().zip(wr) {
                    *rv += d * wv;
                }
            }
        });
    (dw, db, dinput)
}

/// Samples per block in the extraction backward pass; bounds the transient
/// per-member buffer while keeping the parallel grain coarse.
const EXTRACT_BLOCK: usize = 128;

/// Adjoint of `extract_all`: fit-matrix transposes push coefficient
/// gradients back onto member samples, with the center-subtraction term when
/// `normalize` is set. Scatter order is fixed, so sums are deterministic.
pub fn extract_backward(set: &PatchSet, dcoeffs: &Array3<f64>, normalize: bool) -> Array2<f64> {
    let (s, channels, n) = dcoeffs.dim();
    debug_assert_eq!(s, set.len());
    let dc_slice = dcoeffs.as_slice().expect("standard layout");
    let mut grad = Array2::zeros((s, channels));
    for block_start in (0..s).step_by(EXTRACT_BLOCK) {
        let block_end = (block_start + EXTRACT_BLOCK).min(s);
        let per_patch: Vec<Vec<f64>> = (block_start..block_end)
            .into_par_iter()
            .map(|x| {
                let fit = &set.operators[x].fit;
                let members = fit.ncols();
                let fit_data = fit.as_slice();
                let mut t = vec![0.0; members * channels];
                for c in 0..channels {
                    let drow = &dc_slice[(x * channels + c) * n..(x * channels + c + 1) * n];
                    for k in 0..members {
                        let col = &fit_data[k * n..(k + 1) * n];
                        let mut acc = 0.0;
                        for (cv, dv) in col.iter().zip(drow) {
                            acc += cv * dv;
                        }
                        t[k * channels + c] = acc;
                    }
                }
                t
            })
            .collect();
        for (x, t) in (block_start..block_end).zip(&per_patch) {
            let patch = &set.patches[x];
            for (k, &member) in patch.members.iter().enumerate() {
                for c in 0..channels {
                    grad[(member, c)] += t[k * channels + c];
                }
            }
            if normalize {
                for c in 0..channels {
                    let total: f64 = t.iter().skip(c).step_by(channels).sum();
                    grad[(patch.center, c)] -= total;
                }
            }
        }
    }
    grad
}

/// Mean squared error and its gradient with respect to the prediction.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch {
            expected: target.len(),
            got: pred.len(),
            context: "loss target".into(),
        });
    }
    if pred.is_empty() {
        return Err(Error::Domain("loss over an empty prediction".into()));
    }
    let s = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for (g, (&p, &t)) in grad.iter_mut().zip(pred.iter().zip(target)) {
        let d = p - t;
        loss += d * d;
        *g = 2.0 * d / s;
    }
    Ok((loss / s, grad))
}

/// Adam state and hyperparameters; moments follow the flat parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub loss_history: Vec<f64>,
}

impl TrainState {
    pub fn new(lr: f64, beta1: f64, beta2: f64, epsilon: f64, param_count: usize) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(Error::Usage("learning rate must be positive".into()));
        }
        if !(0.0 < beta1 && beta1 < 1.0 && 0.0 < beta2 && beta2 < 1.0) {
            return Err(Error::Usage("Adam betas must lie in (0, 1)".into()));
        }
        Ok(TrainState {
            lr,
            beta1,
            beta2,
            epsilon,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
            loss_history: Vec::new(),
        })
    }

    pub fn with_defaults(param_count: usize) -> Self {
        Self::new(1e-3, 0.9, 0.999, 1e-8, param_count).expect("defaults are valid")
    }

    /// One bias-corrected Adam update in place.
    pub fn adam_step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::LengthMismatch {
                expected: self.m.len(),
                got: params.len().max(grads.len()),
                context: "optimizer state".into(),
            });
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::gradcheck::toy_problem;
    use crate::zernike::rotation_matrix;
    use approx::assert_abs_diff_eq;

    fn basis5() -> ZernikeBasisSet {
        ZernikeBasisSet::new(5).unwrap()
    }

    fn random_coeffs(s: usize, c: usize, n: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((s, c, n), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn layout_is_contiguous_and_ordered() {
        let config = NetConfig {
            max_order: 5,
            rotations: 8,
            conv_filters: [4, 6, 8],
            linear_width: 10,
            linear_relu: true,
        };
        let layout = ParamLayout::new(&config, 21);
        let mut cursor = 0;
        for (_, slot) in layout.named_slots() {
            assert_eq!(slot.offset, cursor);
            cursor += slot.len;
        }
        assert_eq!(cursor, layout.total);
        assert_eq!(layout.conv_w[0].len, 4 * 3 * 21);
        assert_eq!(layout.conv_w[1].len, 6 * 4 * 21);
        assert_eq!(layout.linear_w.len, 10 * 8);
        assert_eq!(layout.head_w.len, 10);
        assert_eq!(layout.head_b.len, 1);
    }

    #[test]
    fn self_correlation_recovers_squared_norm() {
        let basis = basis5();
        let n = basis.len();
        let coeffs = random_coeffs(5, 1, n, 7);
        let row = coeffs.slice(ndarray::s![3, 0, ..]).to_owned();
        let layer = ZernikeConvLayer {
            weights: row.clone().into_shape_with_order((1, 1, n)).unwrap(),
            bias: vec![0.0],
            rotations: 1,
        };
        let out = conv_forward(&layer, &basis, &coeffs).unwrap();
        let norm2: f64 = row.iter().map(|v| v * v).sum();
        assert_abs_diff_eq!(out[(3, 0, 0)], norm2, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_filter_ignores_steering() {
        let basis = basis5();
        let n = basis.len();
        let (zero, _) = basis.rotation_structure();
        let mut weights = Array3::zeros((1, 2, n));
        for &j in zero {
            weights[(0, 0, j)] = 0.7;
            weights[(0, 1, j)] = -0.3;
        }
        let layer = ZernikeConvLayer { weights, bias: vec![0.1], rotations: 12 };
        let coeffs = random_coeffs(4, 2, n, 9);
        let out = conv_forward(&layer, &basis, &coeffs).unwrap();
        for x in 0..4 {
            for q in 1..12 {
                assert_abs_diff_eq!(out[(x, 0, q)], out[(x, 0, 0)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn rotating_input_permutes_steering_axis() {
        let basis = basis5();
        let n = basis.len();
        let rotations = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let weights = Array3::from_shape_fn((3, 2, n), |_| rng.gen_range(-1.0..1.0));
        let bias = vec![0.2, -0.4, 0.0];
        let layer = ZernikeConvLayer { weights, bias, rotations };
        let coeffs = random_coeffs(6, 2, n, 12);

        let step = 2.0 * std::f64::consts::PI / rotations as f64;
        let rot = rotation_matrix(&basis, step);
        let mut rotated = coeffs.clone();
        for x in 0..6 {
            for c in 0..2 {
                let row: Vec<f64> = coeffs.slice(ndarray::s![x, c, ..]).to_vec();
                let out = &rot * nalgebra::DVector::from_vec(row);
                for j in 0..n {
                    rotated[(x, c, j)] = out[j];
                }
            }
        }

        let base = conv_forward(&layer, &basis, &coeffs).unwrap();
        let moved = conv_forward(&layer, &basis, &rotated).unwrap();
        for x in 0..6 {
            for p in 0..3 {
                for q in 0..rotations {
                    let prev = (q + rotations - 1) % rotations;
                    assert_abs_diff_eq!(moved[(x, p, q)], base[(x, p, prev)], epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn pooling_examples() {
        let resp =
            Array3::from_shape_vec((1, 1, 4), vec![0.2, -0.5, 0.9, 0.1]).unwrap();
        let (pooled, am) = angular_max_pool(&resp);
        assert_eq!(pooled[(0, 0)], 0.9);
        assert_eq!(am[(0, 0)], 2);

        let single = Array3::from_shape_vec((1, 1, 1), vec![-0.3]).unwrap();
        let (pooled, am) = angular_max_pool(&single);
        assert_eq!(pooled[(0, 0)], -0.3);
        assert_eq!(am[(0, 0)], 0);

        let tied = Array3::from_shape_vec((1, 1, 4), vec![0.5, 0.9, 0.9, 0.1]).unwrap();
        let (_, am) = angular_max_pool(&tied);
        assert_eq!(am[(0, 0)], 1);

        let shifted =
            Array3::from_shape_vec((1, 1, 4), vec![0.1, 0.2, -0.5, 0.9]).unwrap();
        let (pooled, _) = angular_max_pool(&shifted);
        assert_eq!(pooled[(0, 0)], 0.9);
    }

    #[test]
    fn fused_conv_pool_matches_explicit_rotation_path() {
        let (model, input, set, _) = toy_problem(21);
        let l = model.layout();
        let w = l.conv_w[0].of(&model.params);
        let bias = l.conv_b[0].of(&model.params);
        let n = model.basis().len();
        let filters = model.config().conv_filters[0];
        let weights = Array3::from_shape_vec((filters, XYZ_CHANNELS, n), w.to_vec()).unwrap();
        let layer = ZernikeConvLayer {
            weights,
            bias: bias.to_vec(),
            rotations: model.config().rotations,
        };
        let responses = conv_forward(&layer, model.basis(), &input).unwrap();
        let (pooled, am) = angular_max_pool(&responses);
        let (fused_z, fused_am) = model.conv_pool(w, bias, &input);
        for x in 0..set.len() {
            for p in 0..filters {
                assert_abs_diff_eq!(fused_z[(x, p)], pooled[(x, p)], epsilon = 1e-10);
                assert_eq!(fused_am[(x, p)], am[(x, p)]);
            }
        }
    }

    #[test]
    fn pooled_output_invariant_under_exact_steering_rotations() {
        let (model, input, set, _) = toy_problem(33);
        let rotations = model.config().rotations;
        let basis = model.basis();
        for k in [1usize, 3] {
            let step = 2.0 * std::f64::consts::PI * k as f64 / rotations as f64;
            let mut rotated = input.clone();
            for x in 0..set.len() {
                for c in 0..XYZ_CHANNELS {
                    let mut row: Vec<f64> = input.slice(ndarray::s![x, c, ..]).to_vec();
                    rotate_coefficients_in_place(basis, step, &mut row);
                    for (j, v) in row.iter().enumerate() {
                        rotated[(x, c, j)] = *v;
                    }
                }
            }
            let l = model.layout();
            let (z_base, _) = model.conv_pool(
                l.conv_w[0].of(&model.params),
                l.conv_b[0].of(&model.params),
                &input,
            );
            let (z_rot, _) = model.conv_pool(
                l.conv_w[0].of(&model.params),
                l.conv_b[0].of(&model.params),
                &rotated,
            );
            for (a, b) in z_base.iter().zip(z_rot.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn linear_layer_examples() {
        let input = Array2::from_shape_vec((2, 3), vec![1.0, 2.0, 3.0, -1.0, 0.5, 2.0]).unwrap();
        let identity = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let out = linear_forward(&identity, &[0.0; 3], &input);
        assert_eq!(out, input);

        let zero_w = vec![0.0; 6];
        let out = linear_forward(&zero_w, &[0.7, -0.2], &input);
        for x in 0..2 {
            assert_eq!(out[(x, 0)], 0.7);
            assert_eq!(out[(x, 1)], -0.2);
        }
    }

    #[test]
    fn all_zero_parameters_predict_zero() {
        let (mut model, input, set, _) = toy_problem(1);
        model.params.fill(0.0);
        let (pred, _) = model.forward(&input, &set).unwrap();
        assert!(pred.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_output_finite_and_head_linear() {
        let (mut model, input, set, _) = toy_problem(5);
        let (pred, _) = model.forward(&input, &set).unwrap();
        assert_eq!(pred.len(), set.len());
        assert!(pred.iter().all(|v| v.is_finite()));

        let l = model.layout().clone();
        let head_b = l.head_b.of(&model.params)[0];
        for w in l.head_w.of_mut(&mut model.params) {
            *w *= 2.0;
        }
        let (doubled, _) = model.forward(&input, &set).unwrap();
        for (a, b) in pred.iter().zip(&doubled) {
            assert_abs_diff_eq!(2.0 * (a - head_b) + head_b, *b, epsilon = 1e-10);
        }
    }

    #[test]
    fn extraction_backward_is_the_adjoint() {
        let (model, _, set, _) = toy_problem(8);
        let s = set.len();
        let n = model.basis().len();
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let field = Array2::from_shape_fn((s, 2), |_| rng.gen_range(-1.0..1.0));
        let dcoeffs = Array3::from_shape_fn((s, 2, n), |_| rng.gen_range(-1.0..1.0));
        for normalize in [false, true] {
            let coeffs = extract_all(&field, &set.patches, &set.operators, normalize).unwrap();
            let pushed = extract_backward(&set, &dcoeffs, normalize);
            let forward_side: f64 = coeffs.iter().zip(dcoeffs.iter()).map(|(a, b)| a * b).sum();
            let backward_side: f64 = field.iter().zip(pushed.iter()).map(|(a, b)| a * b).sum();
            assert_abs_diff_eq!(forward_side, backward_side, epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_loss_gradient_means_zero_parameter_gradients() {
        let (model, input, set, _) = toy_problem(3);
        let (_, cache) = model.forward(&input, &set).unwrap();
        let grads = model.backward(&input, &set, &cache, &vec![0.0; set.len()]).unwrap();
        assert!(grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn mse_examples() {
        let (loss, grad) = mse_loss(&[1.0, 3.0], &[0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(loss, 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(grad[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(grad[1], 2.0, epsilon = 1e-15);

        let (loss, grad) = mse_loss(&[0.4, -0.2], &[0.4, -0.2]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));

        let target = vec![1.0, 2.0, 3.0];
        let pred: Vec<f64> = target.iter().map(|t| t + 0.5).collect();
        let (loss, _) = mse_loss(&pred, &target).unwrap();
        assert_abs_diff_eq!(loss, 0.25, epsilon = 1e-15);

        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn adam_fixed_points_and_first_step() {
        let mut state = TrainState::with_defaults(3);
        let mut params = vec![0.5, -0.25, 1.0];
        let before = params.clone();
        state.adam_step(&mut params, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(params, before);

        let mut state = TrainState::with_defaults(2);
        let mut params = vec![0.0, 0.0];
        state.adam_step(&mut params, &[0.3, -4.0]).unwrap();
        // After bias correction the first step is lr·g/(|g| + ε̂), one lr-sized
        // move against the gradient sign.
        assert_abs_diff_eq!(params[0], -1e-3, epsilon = 1e-8);
        assert_abs_diff_eq!(params[1], 1e-3, epsilon = 1e-8);
    }

    #[test]
    fn adam_trajectories_are_deterministic() {
        let run = || {
            let mut state = TrainState::with_defaults(4);
            let mut params = vec![1.0, -2.0, 0.5, 0.0];
            for step in 0..50 {
                let grads: Vec<f64> =
                    params.iter().map(|p| 2.0 * p + step as f64 * 1e-3).collect();
                state.adam_step(&mut params, &grads).unwrap();
            }
            params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn invalid_hyperparameters_are_rejected() {
        assert!(TrainState::new(0.0, 0.9, 0.999, 1e-8, 1).is_err());
        assert!(TrainState::new(1e-3, 1.0, 0.999, 1e-8, 1).is_err());
        assert!(TrainState::new(1e-3, 0.9, 0.0, 1e-8, 1).is_err());
        assert!(NetConfig { rotations: 0, ..NetConfig::default() }.validate().is_err());
    }

    #[test]
    fn descriptor_reflects_architecture() {
        let config = NetConfig::default();
        assert_eq!(
            config.descriptor(),
            "zernet order=5 q=16 conv=128,512,1024 linear=800 linear_relu=1"
        );
        let other = NetConfig { conv_filters: [16, 32, 64], ..config.clone() };
        assert_ne!(config.descriptor(), other.descriptor());
    }

    #[test]
    fn mismatched_input_is_rejected() {
        let (model, input, set, _) = toy_problem(2);
        let bad = Array3::zeros((set.len(), XYZ_CHANNELS, model.basis().len() + 1));
        assert!(model.forward(&bad, &set).is_err());
        let (_, cache) = model.forward(&input, &set).unwrap();
        let short = vec![0.0; set.len() - 1];
        assert!(model.backward(&input, &set, &cache, &short).is_err());
    }

    #[test]
    fn training_smoke_reaches_a_tenth_of_initial_loss() {
        let (mut model, input, set, target) = toy_problem(17);
        let mut state = TrainState::new(1e-2, 0.9, 0.999, 1e-8, model.param_count()).unwrap();
        let (pred, _) = model.forward(&input, &set).unwrap();
        let (initial, _) = mse_loss(&pred, &target).unwrap();
        let mut last = initial;
        for _ in 0..200 {
            let (pred, cache) = model.forward(&input, &set).unwrap();
            let (loss, dpred) = mse_loss(&pred, &target).unwrap();
            let grads = model.backward(&input, &set, &cache, &dpred).unwrap();
            state.adam_step(&mut model.params, &grads).unwrap();
            last = loss;
        }
        assert!(
            last <= 0.1 * initial,
            "loss went from {initial} to {last} in 200 steps"
        );
    }

    #[test]
    fn conv_layer_parameters_stay_below_default_patch_size() {
        let basis = basis5();
        let config = NetConfig::default();
        let per_filter_per_channel = basis.len();
        let default_members = 8000.0 * 0.01;
        assert!((per_filter_per_channel as f64) < default_members);
        let layout = ParamLayout::new(&config, basis.len());
        assert_eq!(
            layout.conv_w[0].len + layout.conv_b[0].len,
            config.conv_filters[0] * (XYZ_CHANNELS * basis.len() + 1)
        );
    }
}
