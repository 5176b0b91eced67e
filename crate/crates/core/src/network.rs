//! Fully connected ReLU network mapping a feature row to one attenuation value.
//!
//! Rows are processed in fixed-size chunks. Chunks are independent in the
//! forward pass; parameter gradients are summed chunk by chunk in order, so
//! results are identical whether chunks run in parallel or not.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::FeatureMatrix;
use crate::error::{Error, Result};
use crate::par;

const ROW_CHUNK: usize = 256;

/// Affine layer `y = W x + b` with `W` stored `fan_out x fan_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.nrows()
    }

    fn zeros_like(&self) -> Layer {
        Layer {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParameters {
    layers: Vec<Layer>,
}

/// Same layout as [`NetworkParameters`], holding `∂L/∂W` and `∂L/∂b`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGradients {
    pub layers: Vec<Layer>,
}

impl NetworkGradients {
    pub fn weights(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weight.iter())
    }

    pub fn biases(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.bias.iter())
    }

    /// Weights then bias of each layer, layer by layer.
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
            .copied()
            .collect()
    }
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::invalid(
            "network needs at least an input and an output size",
        ));
    }
    if sizes.contains(&0) {
        return Err(Error::invalid(format!("zero layer size in {sizes:?}")));
    }
    if *sizes.last().unwrap() != 1 {
        return Err(Error::invalid(format!(
            "network output size must be 1, got {sizes:?}"
        )));
    }
    Ok(())
}

impl NetworkParameters {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network has no layers"));
        }
        for pair in layers.windows(2) {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::invalid("consecutive layers are not compatible"));
            }
        }
        for l in &layers {
            if l.bias.len() != l.fan_out() {
                return Err(Error::invalid("bias length differs from fan-out"));
            }
        }
        let net = NetworkParameters { layers };
        check_sizes(&net.layer_sizes())?;
        if net
            .layers
            .iter()
            .any(|l| l.weight.iter().chain(l.bias.iter()).any(|x| !x.is_finite()))
        {
            return Err(Error::invalid("non-finite network parameter"));
        }
        Ok(net)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// `[fan_in of layer 0, fan_out of each layer...]`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].fan_in())
            .chain(self.layers.iter().map(Layer::fan_out))
            .collect()
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn zero_gradients(&self) -> NetworkGradients {
        NetworkGradients {
            layers: self.layers.iter().map(Layer::zeros_like).collect(),
        }
    }

    /// Layer-size manifest (`NETW`, count, sizes as `u32` LE) followed by
    /// each layer's weights then bias as `f64` LE.
    pub fn to_bytes(&self) -> Vec<u8> {
        let sizes = self.layer_sizes();
        let mut out = Vec::with_capacity(8 + 4 * sizes.len() + 8 * self.parameter_count());
        out.extend_from_slice(b"NETW");
        out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
        for s in &sizes {
            out.extend_from_slice(&(*s as u32).to_le_bytes());
        }
        for l in &self.layers {
            for x in l.weight.iter().chain(l.bias.iter()) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        let u32_at = |at: usize| -> Result<usize> {
            bytes
                .get(at..at + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
                .ok_or_else(|| Error::format("truncated network manifest"))
        };
        if bytes.len() < 8 || &bytes[..4] != b"NETW" {
            return Err(Error::format("missing NETW header"));
        }
        let n = u32_at(4)?;
        let sizes = (0..n)
            .map(|i| u32_at(8 + 4 * i))
            .collect::<Result<Vec<_>>>()?;
        check_sizes(&sizes).map_err(|e| Error::format(e.to_string()))?;
        let mut at = 8 + 4 * n;
        let mut take = |count: usize| -> Result<Vec<f64>> {
            let end = at + 8 * count;
            let chunk = bytes
                .get(at..end)
                .ok_or_else(|| Error::format("truncated network weights"))?;
            at = end;
            Ok(chunk
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect())
        };
        let mut layers = Vec::with_capacity(n - 1);
        for pair in sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let weight = Array2::from_shape_vec((fan_out, fan_in), take(fan_in * fan_out)?)
                .expect("length checked");
            let bias = Array1::from_vec(take(fan_out)?);
            layers.push(Layer { weight, bias });
        }
        let net =
            NetworkParameters::from_layers(layers).map_err(|e| Error::format(e.to_string()))?;
        Ok((net, at))
    }
}

/// Weights uniform on `±sqrt(6 / fan_in)`, biases zero.
pub fn init_network(layer_sizes: &[usize], seed: u64) -> Result<NetworkParameters> {
    check_sizes(layer_sizes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = layer_sizes
        .windows(2)
        .map(|pair| {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            Layer {
                weight: Array2::from_shape_simple_fn((fan_out, fan_in), || {
                    rng.random_range(-bound..=bound)
                }),
                bias: Array1::zeros(fan_out),
            }
        })
        .collect();
    NetworkParameters::from_layers(layers)
}

#[derive(Debug, Clone)]
struct ChunkCache {
    /// Input to each layer; `inputs[0]` is the feature chunk.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Array2<f64>>,
}

/// Activations kept from [`net_forward`] for [`net_backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    rows: usize,
    sizes: Vec<usize>,
    chunks: Vec<ChunkCache>,
}

impl ForwardCache {
    pub fn rows(&self) -> usize {
        self.rows
    }
}

fn affine(x: ArrayView2<f64>, layer: &Layer) -> Array2<f64> {
    let mut z = x.dot(&layer.weight.t());
    z += &layer.bias;
    z
}

fn forward_chunk(x: ArrayView2<f64>, params: &NetworkParameters) -> (Array1<f64>, ChunkCache) {
    let n = params.layers.len();
    let mut inputs = Vec::with_capacity(n);
    let mut pre = Vec::with_capacity(n - 1);
    let mut current = x.to_owned();
    for (li, layer) in params.layers.iter().enumerate() {
        let z = affine(current.view(), layer);
        inputs.push(current);
        if li + 1 == n {
            let out = z.column(0).to_owned();
            return (out, ChunkCache { inputs, pre });
        }
        current = z.mapv(|v| v.max(0.0));
        pre.push(z);
    }
    unreachable!("network has at least one layer")
}

fn chunk_count(rows: usize) -> usize {
    rows.div_ceil(ROW_CHUNK)
}

/// Affine + ReLU on hidden layers, affine only on the output layer.
pub fn net_forward(
    features: &FeatureMatrix,
    params: &NetworkParameters,
) -> Result<(Array1<f64>, ForwardCache)> {
    if features.ncols() != params.input_len() {
        return Err(Error::invalid(format!(
            "feature width {} does not match network input {}",
            features.ncols(),
            params.input_len()
        )));
    }
    let rows = features.nrows();
    let results = par::map_range(chunk_count(rows), |ci| {
        let lo = ci * ROW_CHUNK;
        let hi = (lo + ROW_CHUNK).min(rows);
        forward_chunk(features.slice(s![lo..hi, ..]), params)
    });
    let mut output = Vec::with_capacity(rows);
    let mut chunks = Vec::with_capacity(results.len());
    for (out, cache) in results {
        output.extend(out);
        chunks.push(cache);
    }
    Ok((
        Array1::from_vec(output),
        ForwardCache {
            rows,
            sizes: params.layer_sizes(),
            chunks,
        },
    ))
}

/// Forward pass without keeping activations.
pub fn net_predict(features: &FeatureMatrix, params: &NetworkParameters) -> Result<Array1<f64>> {
    net_forward(features, params).map(|(out, _)| out)
}

/// Reverse-mode pass; returns parameter gradients and `∂L/∂features`.
///
/// The ReLU derivative at exactly zero is taken as zero.
pub fn net_backward(
    cache: &ForwardCache,
    params: &NetworkParameters,
    upstream: &[f64],
) -> Result<(NetworkGradients, FeatureMatrix)> {
    if cache.sizes != params.layer_sizes() {
        return Err(Error::invalid(
            "forward cache was produced by a network of a different shape",
        ));
    }
    if upstream.len() != cache.rows {
        return Err(Error::invalid(format!(
            "upstream length {} does not match cached batch of {}",
            upstream.len(),
            cache.rows
        )));
    }
    let n = params.layers.len();
    let partials = par::map_range(cache.chunks.len(), |ci| {
        let chunk = &cache.chunks[ci];
        let lo = ci * ROW_CHUNK;
        let rows = chunk.inputs[0].nrows();
        let mut delta = Array2::from_shape_vec((rows, 1), upstream[lo..lo + rows].to_vec())
            .expect("chunk length");
        let mut grads: Vec<Layer> = Vec::with_capacity(n);
        for li in (0..n).rev() {
            let layer = &params.layers[li];
            let weight = delta.t().dot(&chunk.inputs[li]);
            let bias = delta.sum_axis(Axis(0));
            grads.push(Layer { weight, bias });
            let mut back = delta.dot(&layer.weight);
            if li > 0 {
                back.zip_mut_with(&chunk.pre[li - 1], |d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            delta = back;
        }
        grads.reverse();
        (grads, delta)
    });

    let mut total = params.zero_gradients();
    let mut feature_grad = Vec::with_capacity(cache.rows * params.input_len());
    for (grads, dfeat) in partials {
        for (acc, g) in total.layers.iter_mut().zip(&grads) {
            acc.weight += &g.weight;
            acc.bias += &g.bias;
        }
        feature_grad.extend(dfeat.iter().copied());
    }
    let feature_grad = Array2::from_shape_vec((cache.rows, params.input_len()), feature_grad)
        .expect("feature gradient shape");
    Ok((total, feature_grad))
}
