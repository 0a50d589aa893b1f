//! Feedforward network representation, file formats, forward evaluation, the
//! affine safety property, and covariance whitening.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{BoxRegion, GaussianInput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// One affine layer followed by an elementwise activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: DMatrix<f64>, bias: DVector<f64>, activation: Activation) -> Result<Self> {
        if weights.nrows() == 0 || weights.ncols() == 0 {
            return Err(Error::config("layer weight matrix must be non-empty"));
        }
        if bias.len() != weights.nrows() {
            return Err(Error::dim("layer bias", weights.nrows(), bias.len()));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }
}

/// A feedforward network: an ordered stack of affine+activation layers.
/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("network must have at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[1].input_dim() != pair[0].output_dim() {
                return Err(Error::config(format!(
                    "layer {} expects input dimension {}, but layer {} outputs {}",
                    i + 1,
                    pair[1].input_dim(),
                    i,
                    pair[0].output_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output_dim()
    }

    /// Exact layer-by-layer evaluation: affine map then activation.
    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::dim("forward input", self.input_dim(), x.len()));
        }
        let mut h = x.clone();
        for layer in &self.layers {
            let z = &layer.weights * h + &layer.bias;
            h = z.map(|v| layer.activation.apply(v));
        }
        Ok(h)
    }
}

/// Affine safety property `C y >= a` over the network output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetySpec {
    pub c: DMatrix<f64>,
    pub a: DVector<f64>,
}

impl SafetySpec {
    pub fn new(c: DMatrix<f64>, a: DVector<f64>) -> Result<Self> {
        if c.nrows() == 0 {
            return Err(Error::config("safety spec needs at least one constraint"));
        }
        if a.len() != c.nrows() {
            return Err(Error::dim("safety threshold vector", c.nrows(), a.len()));
        }
        Ok(Self { c, a })
    }

    pub fn constraint_count(&self) -> usize {
        self.c.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.c.ncols()
    }

    /// Margin vector `C y - a` for an output point.
    pub fn margins_of_output(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.c * y - &self.a
    }
}

/// Signed margins `(C f(x))_j - a_j`; all entries nonnegative iff `x` is safe.
pub fn margins(net: &Network, spec: &SafetySpec, x: &DVector<f64>) -> Result<DVector<f64>> {
    if spec.output_dim() != net.output_dim() {
        return Err(Error::dim(
            "safety spec columns",
            net.output_dim(),
            spec.output_dim(),
        ));
    }
    Ok(spec.margins_of_output(&net.forward(x)?))
}

/// Worst constraint margin; its sign is the point's safety.
pub fn min_margin(margins: &DVector<f64>) -> f64 {
    margins.iter().cloned().fold(f64::INFINITY, f64::min)
}

pub fn is_safe_point(net: &Network, spec: &SafetySpec, x: &DVector<f64>) -> Result<bool> {
    Ok(min_margin(&margins(net, spec, x)?) >= 0.0)
}

// ---------------------------------------------------------------------------
// NNet format
// ---------------------------------------------------------------------------

/// Normalization constants as stored in an NNet file. Verification runs in
/// raw network coordinates unless the caller explicitly applies these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnetNormalization {
    pub input_mean: Vec<f64>,
    pub input_range: Vec<f64>,
    pub output_mean: f64,
    pub output_range: f64,
}

/// Parsed NNet file: the network, the declared input box, and the
/// normalization constants.
#[derive(Debug, Clone, PartialEq)]
pub struct NnetFile {
    pub network: Network,
    pub input_box: BoxRegion,
    pub normalization: NnetNormalization,
}

impl NnetFile {
    /// Network with the file's normalization folded into the affine layers:
    /// inputs are shifted/scaled into normalized coordinates before the first
    /// layer and outputs are denormalized after the last. Forward on the
    /// result takes physical-unit inputs and yields physical-unit outputs.
    pub fn normalized_network(&self) -> Result<Network> {
        let norm = &self.normalization;
        if norm.input_range.iter().any(|r| *r <= 0.0) {
            return Err(Error::config(
                "cannot apply NNet normalization: input ranges must be positive",
            ));
        }
        if norm.output_range <= 0.0 {
            return Err(Error::config(
                "cannot apply NNet normalization: output range must be positive",
            ));
        }
        let mut layers = self.network.layers.clone();
        {
            // (x - mean) / range folded into W1 x + b1: scale each input
            // column, subtract the column-weighted mean shift from the bias.
            let first = &mut layers[0];
            let d = first.input_dim();
            let mut bias = first.bias.clone();
            for j in 0..d {
                bias -= first.weights.column(j) * (norm.input_mean[j] / norm.input_range[j]);
                let col = first.weights.column(j) / norm.input_range[j];
                first.weights.set_column(j, &col);
            }
            first.bias = bias;
        }
        {
            let last = layers.last_mut().unwrap();
            last.weights *= norm.output_range;
            last.bias = &last.bias * norm.output_range
                + DVector::from_element(last.bias.len(), norm.output_mean);
        }
        Network::new(layers)
    }
}

struct NnetCursor<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> NnetCursor<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines().enumerate(),
        }
    }

    /// Next non-comment, non-blank line with its 1-based number.
    fn next_data(&mut self, what: &str) -> Result<(usize, &'a str)> {
        for (idx, line) in self.lines.by_ref() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with("//") {
                continue;
            }
            return Ok((idx + 1, trimmed));
        }
        Err(Error::parse(format!(
            "unexpected end of file while reading {what}"
        )))
    }

    fn floats(&mut self, what: &str, expected: usize) -> Result<Vec<f64>> {
        let (line_no, line) = self.next_data(what)?;
        let vals = parse_csv_floats(line, line_no, what)?;
        if vals.len() != expected {
            return Err(Error::parse(format!(
                "line {line_no}: expected {expected} values for {what}, found {}",
                vals.len()
            )));
        }
        Ok(vals)
    }
}

fn parse_csv_floats(line: &str, line_no: usize, what: &str) -> Result<Vec<f64>> {
    line.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>().map_err(|_| {
                Error::parse(format!("line {line_no}: invalid number '{t}' in {what}"))
            })
        })
        .collect()
}

/// Parse the ACAS Xu NNet text format: leading `//` comments, a header of
/// layer counts, declared input mins/maxes, normalization means/ranges, then
/// row-major weights and per-neuron biases for each layer. Hidden layers are
/// ReLU, the output layer is affine.
pub fn parse_nnet(text: &str) -> Result<NnetFile> {
    let mut cur = NnetCursor::new(text);

    let header = cur.floats(
        "header counts (numLayers,inputSize,outputSize,maxLayerSize)",
        4,
    )?;
    let num_layers = to_count(header[0], "numLayers")?;
    let input_size = to_count(header[1], "inputSize")?;
    let output_size = to_count(header[2], "outputSize")?;

    let sizes: Vec<usize> = cur
        .floats("layer sizes", num_layers + 1)?
        .into_iter()
        .map(|v| to_count(v, "layer size"))
        .collect::<Result<_>>()?;
    if sizes[0] != input_size {
        return Err(Error::parse(format!(
            "layer sizes disagree with header: first size {} vs inputSize {input_size}",
            sizes[0]
        )));
    }
    if *sizes.last().unwrap() != output_size {
        return Err(Error::parse(format!(
            "layer sizes disagree with header: last size {} vs outputSize {output_size}",
            sizes.last().unwrap()
        )));
    }

    // Legacy symmetric flag; present in all ACAS files, always zero.
    let _flag = cur.floats("symmetric flag", 1)?;

    let mins = cur.floats("input minimums", input_size)?;
    let maxes = cur.floats("input maximums", input_size)?;
    let means = cur.floats("normalization means", input_size + 1)?;
    let ranges = cur.floats("normalization ranges", input_size + 1)?;

    let mut layers = Vec::with_capacity(num_layers);
    for l in 0..num_layers {
        let rows = sizes[l + 1];
        let cols = sizes[l];
        let mut w = DMatrix::zeros(rows, cols);
        for r in 0..rows {
            let row = cur.floats(&format!("weights row {r} of layer {l}"), cols)?;
            for (c, v) in row.into_iter().enumerate() {
                w[(r, c)] = v;
            }
        }
        let mut b = DVector::zeros(rows);
        for r in 0..rows {
            b[r] = cur.floats(&format!("bias {r} of layer {l}"), 1)?[0];
        }
        let act = if l + 1 == num_layers {
            Activation::Identity
        } else {
            Activation::Relu
        };
        layers.push(Layer::new(w, b, act)?);
    }

    let network = Network::new(layers)?;
    let input_box = BoxRegion::from_slices(&mins, &maxes)
        .map_err(|e| Error::parse(format!("declared input box: {e}")))?;
    let normalization = NnetNormalization {
        input_mean: means[..input_size].to_vec(),
        input_range: ranges[..input_size].to_vec(),
        output_mean: means[input_size],
        output_range: ranges[input_size],
    };
    Ok(NnetFile {
        network,
        input_box,
        normalization,
    })
}

fn to_count(v: f64, what: &str) -> Result<usize> {
    if v.fract() != 0.0 || v < 0.0 || v > u32::MAX as f64 {
        return Err(Error::parse(format!(
            "{what} must be a nonnegative integer, got {v}"
        )));
    }
    Ok(v as usize)
}

/// Serialize back to NNet text. Floats are written in shortest round-trip
/// form, so parse(serialize(parse(t))) reproduces the weights bit for bit.
pub fn serialize_nnet(file: &NnetFile) -> String {
    let net = &file.network;
    let mut out = String::new();
    out.push_str("// probhull network export\n");
    let sizes: Vec<usize> = std::iter::once(net.input_dim())
        .chain(net.layers().iter().map(|l| l.output_dim()))
        .collect();
    let max_size = *sizes.iter().max().unwrap();
    out.push_str(&format!(
        "{},{},{},{},\n",
        net.layers().len(),
        net.input_dim(),
        net.output_dim(),
        max_size
    ));
    push_csv(&mut out, sizes.iter().map(|s| *s as f64));
    out.push_str("0,\n");
    push_csv(&mut out, file.input_box.lower().iter().cloned());
    push_csv(&mut out, file.input_box.upper().iter().cloned());
    let norm = &file.normalization;
    push_csv(
        &mut out,
        norm.input_mean.iter().cloned().chain([norm.output_mean]),
    );
    push_csv(
        &mut out,
        norm.input_range.iter().cloned().chain([norm.output_range]),
    );
    for layer in net.layers() {
        for r in 0..layer.output_dim() {
            push_csv(&mut out, layer.weights.row(r).iter().cloned());
        }
        for r in 0..layer.output_dim() {
            push_csv(&mut out, [layer.bias[r]]);
        }
    }
    out
}

fn push_csv(out: &mut String, vals: impl IntoIterator<Item = f64>) {
    for v in vals {
        out.push_str(&format!("{v},"));
    }
    out.push('\n');
}

// ---------------------------------------------------------------------------
// JSON network format
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct JsonNetwork {
    layers: Vec<JsonLayer>,
}

#[derive(Deserialize)]
struct JsonLayer {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    activation: String,
}

/// Parse the repo's JSON network schema: an object with a `layers` array of
/// `{weights, bias, activation}`. Errors carry the JSON path of the offending
/// element.
pub fn parse_json_network(text: &str) -> Result<Network> {
    let mut de = serde_json::Deserializer::from_str(text);
    let raw: JsonNetwork = serde_path_to_error::deserialize(&mut de)
        .map_err(|e| Error::parse(format!("network JSON at {}: {}", e.path(), e.inner())))?;
    if raw.layers.is_empty() {
        return Err(Error::parse("network JSON at layers: array is empty"));
    }
    let mut layers = Vec::with_capacity(raw.layers.len());
    for (i, l) in raw.layers.into_iter().enumerate() {
        let act = Activation::from_name(&l.activation).ok_or_else(|| {
            Error::parse(format!(
                "network JSON at layers[{i}].activation: unknown activation '{}'",
                l.activation
            ))
        })?;
        let rows = l.weights.len();
        if rows == 0 {
            return Err(Error::parse(format!(
                "network JSON at layers[{i}].weights: matrix is empty"
            )));
        }
        let cols = l.weights[0].len();
        for (r, row) in l.weights.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::parse(format!(
                    "network JSON at layers[{i}].weights[{r}]: ragged row of length {} (expected {cols})",
                    row.len()
                )));
            }
        }
        let w = DMatrix::from_row_iterator(rows, cols, l.weights.into_iter().flatten());
        let b = DVector::from_vec(l.bias);
        if b.len() != rows {
            return Err(Error::parse(format!(
                "network JSON at layers[{i}].bias: length {} does not match {rows} rows",
                b.len()
            )));
        }
        layers.push(Layer::new(w, b, act)?);
    }
    Network::new(layers).map_err(|e| Error::parse(format!("network JSON: {e}")))
}

/// Serialize a network into the JSON schema accepted by
/// [`parse_json_network`].
pub fn network_to_json(net: &Network) -> String {
    #[derive(Serialize)]
    struct JsonNetworkOut<'a> {
        layers: Vec<JsonLayerOut<'a>>,
    }
    #[derive(Serialize)]
    struct JsonLayerOut<'a> {
        weights: Vec<Vec<f64>>,
        bias: Vec<f64>,
        activation: &'a str,
    }
    let layers = net
        .layers()
        .iter()
        .map(|l| JsonLayerOut {
            weights: (0..l.output_dim())
                .map(|r| l.weights.row(r).iter().cloned().collect())
                .collect(),
            bias: l.bias.iter().cloned().collect(),
            activation: l.activation.name(),
        })
        .collect();
    serde_json::to_string_pretty(&JsonNetworkOut { layers }).expect("network serializes")
}

// ---------------------------------------------------------------------------
// Whitening
// ---------------------------------------------------------------------------

/// Gaussian with a full covariance matrix, prior to whitening.
#[derive(Debug, Clone, PartialEq)]
pub struct FullGaussian {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub seed: u64,
}

/// Result of [`whiten`]: a standard-normal input model, the network with the
/// change of variables folded into its first layer, and the affine map
/// `x = shift + transform * z` relating the two coordinate systems.
#[derive(Debug, Clone)]
pub struct Whitened {
    pub gaussian: GaussianInput,
    pub network: Network,
    pub transform: DMatrix<f64>,
    pub shift: DVector<f64>,
}

const EIGENVALUE_TOL: f64 = 1e-12;

/// Eigendecompose the covariance and absorb the resulting affine change of
/// variables into the first layer, so verification can always run against a
/// standard diagonal Gaussian.
pub fn whiten(full: &FullGaussian, net: &Network) -> Result<Whitened> {
    let d = full.mean.len();
    if full.covariance.nrows() != d || full.covariance.ncols() != d {
        return Err(Error::dim("covariance", d, full.covariance.nrows()));
    }
    if net.input_dim() != d {
        return Err(Error::dim("whiten network input", d, net.input_dim()));
    }
    let asym = (&full.covariance - full.covariance.transpose()).abs().max();
    if asym > 1e-9 {
        return Err(Error::config(format!(
            "covariance must be symmetric (max asymmetry {asym:e})"
        )));
    }
    let eig = full.covariance.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|l| *l <= EIGENVALUE_TOL) {
        return Err(Error::config(format!(
            "covariance is not positive definite (min eigenvalue {:e})",
            eig.eigenvalues.min()
        )));
    }
    let sqrt_lambda = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    let transform = &eig.eigenvectors * sqrt_lambda;

    let mut layers = net.layers().to_vec();
    {
        let first = &mut layers[0];
        let new_bias = &first.bias + &first.weights * &full.mean;
        first.weights = &first.weights * &transform;
        first.bias = new_bias;
    }
    Ok(Whitened {
        gaussian: GaussianInput::standard(d, full.seed),
        network: Network::new(layers)?,
        transform,
        shift: full.mean.clone(),
    })
}
