//! Network ingestion: the DNN graph, shape inference, weight material and the
//! bit-exact integer inference oracle.

mod reference;
mod weights;

pub use reference::reference_inference;
pub use weights::{generate_input, generate_weights, SplitMix64};

use serde::Deserialize;
use thiserror::Error;

pub const NETWORK_INPUT: i64 = -1;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("network syntax error: {0}")]
    Syntax(String),
    #[error("network schema error at `{path}`: {msg}")]
    Schema { path: String, msg: String },
    #[error("layer {layer}: {msg}")]
    Semantic { layer: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
}

fn semantic(layer: usize, msg: impl Into<String>) -> NetError {
    NetError::Semantic {
        layer,
        msg: msg.into(),
    }
}

/// Fixed-point requantization parameters: int32 accumulators are rescaled to
/// int8 by `clamp(round_half_away_from_zero(x * multiplier / 2^shift))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantParams {
    pub multiplier: i32,
    pub shift: u32,
}

/// `round_half_away_from_zero(value / divisor)` in exact integer arithmetic.
pub fn div_round_half_away(value: i64, divisor: i64) -> i64 {
    debug_assert!(divisor > 0);
    let q = (2 * value.abs() + divisor) / (2 * divisor);
    if value < 0 {
        -q
    } else {
        q
    }
}

/// The requantization rule shared by the oracle and the vector unit.
pub fn requantize(acc: i32, q: QuantParams) -> i8 {
    let v = acc as i64 * q.multiplier as i64;
    let r = if q.shift == 0 {
        v
    } else {
        let half = 1i64 << (q.shift - 1);
        let mag = (v.abs() + half) >> q.shift;
        if v < 0 {
            -mag
        } else {
            mag
        }
    };
    r.clamp(-128, 127) as i8
}

/// Saturating int8 addition via an int16 intermediate sum.
pub fn sat_add_i8(a: i8, b: i8) -> i8 {
    (a as i16 + b as i16).clamp(-128, 127) as i8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Max,
    Avg,
}

/// Where a layer's weight matrix comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WeightSpec {
    Seed(u64),
    /// Unresolved reference to a raw int8 file (row-major).
    File(String),
    /// Resolved bytes, row-major.
    Data(Vec<i8>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d {
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
        quant: QuantParams,
        weights: WeightSpec,
    },
    Fc {
        out_features: usize,
        quant: QuantParams,
        weights: WeightSpec,
    },
    Pool {
        kind: PoolKind,
        kernel: usize,
        stride: usize,
    },
    Relu,
    Add,
    Concat,
}

impl LayerKind {
    pub fn op_name(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::Fc { .. } => "fc",
            LayerKind::Pool { .. } => "pool",
            LayerKind::Relu => "relu",
            LayerKind::Add => "add",
            LayerKind::Concat => "concat",
        }
    }

    pub fn has_weights(&self) -> bool {
        matches!(self, LayerKind::Conv2d { .. } | LayerKind::Fc { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layer {
    pub id: usize,
    /// Producer layer ids; -1 refers to the network input.
    pub producers: Vec<i64>,
    pub kind: LayerKind,
    /// Inferred output shape: `[C, H, W]` for spatial tensors, `[N]` for vectors.
    pub out_shape: Vec<usize>,
}

impl Layer {
    pub fn out_elems(&self) -> usize {
        self.out_shape.iter().product()
    }

    /// Logical weight matrix dimensions (rows = input dims, cols = output dims).
    pub fn weight_matrix_dims(&self, net: &Network) -> Option<(usize, usize)> {
        match &self.kind {
            LayerKind::Conv2d {
                out_channels,
                kernel_h,
                kernel_w,
                ..
            } => {
                let in_shape = net.producer_shape(self, 0);
                Some((in_shape[0] * kernel_h * kernel_w, *out_channels))
            }
            LayerKind::Fc { out_features, .. } => {
                let in_elems: usize = net.producer_shape(self, 0).iter().product();
                Some((in_elems, *out_features))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    pub name: String,
    /// Channels, height, width.
    pub input_shape: [usize; 3],
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn input_elems(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Output shape of the given producer slot of `layer`.
    pub fn producer_shape(&self, layer: &Layer, slot: usize) -> Vec<usize> {
        let p = layer.producers[slot];
        if p == NETWORK_INPUT {
            self.input_shape.to_vec()
        } else {
            self.layers[p as usize].out_shape.clone()
        }
    }

    /// The single layer no other layer consumes.
    pub fn terminal_layer(&self) -> &Layer {
        let mut consumed = vec![false; self.layers.len()];
        for layer in &self.layers {
            for &p in &layer.producers {
                if p >= 0 {
                    consumed[p as usize] = true;
                }
            }
        }
        let idx = consumed.iter().position(|c| !c).expect("validated network");
        &self.layers[idx]
    }

    pub fn consumers_of(&self, producer: i64) -> Vec<usize> {
        self.layers
            .iter()
            .filter(|l| l.producers.contains(&producer))
            .map(|l| l.id)
            .collect()
    }

    /// Resolved weight matrix of a conv/fc layer, row-major.
    pub fn layer_weights(&self, layer: &Layer) -> Result<Vec<i8>, NetError> {
        let (rows, cols) = layer
            .weight_matrix_dims(self)
            .ok_or_else(|| semantic(layer.id, "layer has no weights"))?;
        let spec = match &layer.kind {
            LayerKind::Conv2d { weights, .. } | LayerKind::Fc { weights, .. } => weights,
            _ => unreachable!(),
        };
        match spec {
            WeightSpec::Seed(seed) => Ok(generate_weights(*seed, rows, cols)),
            WeightSpec::Data(data) => {
                if data.len() != rows * cols {
                    return Err(semantic(
                        layer.id,
                        format!(
                            "weight file holds {} bytes, expected {}x{} = {}",
                            data.len(),
                            rows,
                            cols,
                            rows * cols
                        ),
                    ));
                }
                Ok(data.clone())
            }
            WeightSpec::File(name) => Err(semantic(
                layer.id,
                format!("weight file `{name}` not resolved"),
            )),
        }
    }

    /// Replace every seed-based weight spec, deriving per-layer seeds from `base`.
    pub fn override_weight_seeds(&mut self, base: u64) {
        for layer in &mut self.layers {
            let id = layer.id as u64;
            match &mut layer.kind {
                LayerKind::Conv2d { weights, .. } | LayerKind::Fc { weights, .. } => {
                    if let WeightSpec::Seed(s) = weights {
                        *s = base.wrapping_add(id);
                    }
                }
                _ => {}
            }
        }
    }

    /// Resolve `weight_file` references through `loader` (bytes of the raw file).
    pub fn resolve_weight_files<F>(&mut self, mut loader: F) -> Result<(), NetError>
    where
        F: FnMut(&str) -> Result<Vec<u8>, String>,
    {
        for layer in &mut self.layers {
            match &mut layer.kind {
                LayerKind::Conv2d { weights, .. } | LayerKind::Fc { weights, .. } => {
                    if let WeightSpec::File(name) = weights {
                        let bytes = loader(name)
                            .map_err(|e| semantic(layer.id, format!("weight file: {e}")))?;
                        *weights = WeightSpec::Data(bytes.iter().map(|&b| b as i8).collect());
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    name: String,
    input_shape: [usize; 3],
    layers: Vec<RawLayer>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLayer {
    #[serde(rename = "type")]
    ty: String,
    producers: Vec<i64>,
    out_channels: Option<usize>,
    kernel: Option<serde_json::Value>,
    stride: Option<usize>,
    padding: Option<usize>,
    kind: Option<String>,
    out_features: Option<usize>,
    quant: Option<QuantParams>,
    weight_seed: Option<u64>,
    weight_file: Option<String>,
}

pub fn parse_network(text: &str) -> Result<Network, NetError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawNetwork = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if inner.is_syntax() || inner.is_eof() {
            NetError::Syntax(inner.to_string())
        } else {
            NetError::Schema {
                path,
                msg: inner.to_string(),
            }
        }
    })?;

    if raw.input_shape.iter().any(|&d| d == 0) {
        return Err(NetError::Invalid("input_shape dimensions must be >= 1".into()));
    }

    let mut layers = Vec::with_capacity(raw.layers.len());
    for (id, rl) in raw.layers.iter().enumerate() {
        let kind = lower_raw_layer(id, rl)?;
        for &p in &rl.producers {
            if p < NETWORK_INPUT || p >= id as i64 {
                return Err(semantic(
                    id,
                    format!("producer {p} must precede the layer (or be -1 for the input)"),
                ));
            }
        }
        layers.push(Layer {
            id,
            producers: rl.producers.clone(),
            kind,
            out_shape: Vec::new(),
        });
    }

    let mut net = Network {
        name: raw.name,
        input_shape: raw.input_shape,
        layers,
    };
    infer_shapes(&mut net)?;
    check_single_terminal(&net)?;
    Ok(net)
}

fn parse_kernel_pair(id: usize, v: &serde_json::Value) -> Result<(usize, usize), NetError> {
    match v {
        serde_json::Value::Number(n) => {
            let k = n
                .as_u64()
                .ok_or_else(|| semantic(id, "kernel must be a positive integer"))?;
            Ok((k as usize, k as usize))
        }
        serde_json::Value::Array(a) if a.len() == 2 => {
            let kh = a[0].as_u64().ok_or_else(|| semantic(id, "bad kernel"))?;
            let kw = a[1].as_u64().ok_or_else(|| semantic(id, "bad kernel"))?;
            Ok((kh as usize, kw as usize))
        }
        _ => Err(semantic(id, "kernel must be an integer or [kh, kw]")),
    }
}

fn weight_spec(id: usize, rl: &RawLayer) -> Result<WeightSpec, NetError> {
    match (rl.weight_seed, &rl.weight_file) {
        (Some(s), None) => Ok(WeightSpec::Seed(s)),
        (None, Some(f)) => Ok(WeightSpec::File(f.clone())),
        (None, None) => Err(semantic(id, "needs weight_seed or weight_file")),
        (Some(_), Some(_)) => Err(semantic(id, "weight_seed and weight_file are exclusive")),
    }
}

fn quant_of(id: usize, rl: &RawLayer) -> Result<QuantParams, NetError> {
    let q = rl
        .quant
        .ok_or_else(|| semantic(id, "weighted layer needs quant parameters"))?;
    if q.multiplier < 0 {
        return Err(semantic(id, "quant.multiplier must be >= 0"));
    }
    if q.shift > 31 {
        return Err(semantic(id, "quant.shift must be in [0, 31]"));
    }
    Ok(q)
}

fn lower_raw_layer(id: usize, rl: &RawLayer) -> Result<LayerKind, NetError> {
    match rl.ty.as_str() {
        "conv2d" => {
            let (kernel_h, kernel_w) = parse_kernel_pair(
                id,
                rl.kernel
                    .as_ref()
                    .ok_or_else(|| semantic(id, "conv2d needs kernel"))?,
            )?;
            if kernel_h == 0 || kernel_w == 0 {
                return Err(semantic(id, "kernel dimensions must be >= 1"));
            }
            Ok(LayerKind::Conv2d {
                out_channels: rl
                    .out_channels
                    .ok_or_else(|| semantic(id, "conv2d needs out_channels"))?,
                kernel_h,
                kernel_w,
                stride: rl.stride.unwrap_or(1),
                padding: rl.padding.unwrap_or(0),
                quant: quant_of(id, rl)?,
                weights: weight_spec(id, rl)?,
            })
        }
        "fc" => Ok(LayerKind::Fc {
            out_features: rl
                .out_features
                .ok_or_else(|| semantic(id, "fc needs out_features"))?,
            quant: quant_of(id, rl)?,
            weights: weight_spec(id, rl)?,
        }),
        "pool" => {
            let kind = match rl.kind.as_deref() {
                Some("max") => PoolKind::Max,
                Some("avg") => PoolKind::Avg,
                _ => return Err(semantic(id, "pool kind must be \"max\" or \"avg\"")),
            };
            let kernel = match rl.kernel.as_ref() {
                Some(serde_json::Value::Number(n)) => n
                    .as_u64()
                    .ok_or_else(|| semantic(id, "bad pool kernel"))?
                    as usize,
                _ => return Err(semantic(id, "pool needs an integer kernel")),
            };
            if kernel == 0 {
                return Err(semantic(id, "pool kernel must be >= 1"));
            }
            Ok(LayerKind::Pool {
                kind,
                kernel,
                stride: rl.stride.unwrap_or(kernel),
            })
        }
        "relu" => Ok(LayerKind::Relu),
        "add" => Ok(LayerKind::Add),
        "concat" => Ok(LayerKind::Concat),
        other => Err(semantic(id, format!("unknown layer type `{other}`"))),
    }
}

fn conv_out_dim(id: usize, input: usize, k: usize, stride: usize, pad: usize) -> Result<usize, NetError> {
    if stride == 0 {
        return Err(semantic(id, "stride must be >= 1"));
    }
    let padded = input + 2 * pad;
    if padded < k {
        return Err(semantic(id, "kernel larger than padded input"));
    }
    let out = (padded - k) / stride + 1;
    if out == 0 {
        return Err(semantic(id, "non-positive inferred dimension"));
    }
    Ok(out)
}

fn infer_shapes(net: &mut Network) -> Result<(), NetError> {
    for i in 0..net.layers.len() {
        let layer = net.layers[i].clone();
        let id = layer.id;
        let nprod = layer.producers.len();
        let shape_of = |slot: usize| net.producer_shape(&layer, slot);
        let require_single = |what: &str| -> Result<(), NetError> {
            if nprod != 1 {
                Err(semantic(id, format!("{what} takes exactly one producer")))
            } else {
                Ok(())
            }
        };

        let out_shape = match &layer.kind {
            LayerKind::Conv2d {
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
                ..
            } => {
                require_single("conv2d")?;
                let in_shape = shape_of(0);
                if in_shape.len() != 3 {
                    return Err(semantic(id, "conv2d needs a [C, H, W] input"));
                }
                if *out_channels == 0 {
                    return Err(semantic(id, "out_channels must be >= 1"));
                }
                let oh = conv_out_dim(id, in_shape[1], *kernel_h, *stride, *padding)?;
                let ow = conv_out_dim(id, in_shape[2], *kernel_w, *stride, *padding)?;
                vec![*out_channels, oh, ow]
            }
            LayerKind::Fc { out_features, .. } => {
                require_single("fc")?;
                if *out_features == 0 {
                    return Err(semantic(id, "out_features must be >= 1"));
                }
                vec![*out_features]
            }
            LayerKind::Pool { kernel, stride, .. } => {
                require_single("pool")?;
                let in_shape = shape_of(0);
                if in_shape.len() != 3 {
                    return Err(semantic(id, "pool needs a [C, H, W] input"));
                }
                let oh = conv_out_dim(id, in_shape[1], *kernel, *stride, 0)?;
                let ow = conv_out_dim(id, in_shape[2], *kernel, *stride, 0)?;
                vec![in_shape[0], oh, ow]
            }
            LayerKind::Relu => {
                require_single("relu")?;
                shape_of(0)
            }
            LayerKind::Add => {
                if nprod != 2 {
                    return Err(semantic(id, "add takes exactly two producers"));
                }
                let a = shape_of(0);
                let b = shape_of(1);
                if a != b {
                    return Err(semantic(
                        id,
                        format!("add producers have mismatched shapes {a:?} vs {b:?}"),
                    ));
                }
                a
            }
            LayerKind::Concat => {
                if nprod < 2 {
                    return Err(semantic(id, "concat takes at least two producers"));
                }
                let first = shape_of(0);
                let mut channels = 0usize;
                for slot in 0..nprod {
                    let s = shape_of(slot);
                    if s.len() != first.len() {
                        return Err(semantic(id, "concat producers have mixed ranks"));
                    }
                    if s.len() == 3 && s[1..] != first[1..] {
                        return Err(semantic(
                            id,
                            format!("concat producers disagree on spatial dims: {s:?} vs {first:?}"),
                        ));
                    }
                    channels += s[0];
                }
                if first.len() == 3 {
                    vec![channels, first[1], first[2]]
                } else if first.len() == 1 {
                    vec![channels]
                } else {
                    return Err(semantic(id, "concat supports [C,H,W] or [N] producers"));
                }
            }
        };
        net.layers[i].out_shape = out_shape;
    }
    Ok(())
}

fn check_single_terminal(net: &Network) -> Result<(), NetError> {
    let mut consumed = vec![false; net.layers.len()];
    for layer in &net.layers {
        for &p in &layer.producers {
            if p >= 0 {
                consumed[p as usize] = true;
            }
        }
    }
    let terminals: Vec<usize> = (0..net.layers.len()).filter(|&i| !consumed[i]).collect();
    match terminals.len() {
        0 => Err(NetError::Invalid("network has no layers".into())),
        1 => Ok(()),
        _ => Err(NetError::Invalid(format!(
            "network must have exactly one terminal layer, found {terminals:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mlp_doc() -> &'static str {
        r#"{
            "name": "mlp",
            "input_shape": [64, 1, 1],
            "layers": [
                {"type": "fc", "producers": [-1], "out_features": 32,
                 "quant": {"multiplier": 1, "shift": 7}, "weight_seed": 1},
                {"type": "relu", "producers": [0]},
                {"type": "fc", "producers": [1], "out_features": 10,
                 "quant": {"multiplier": 1, "shift": 7}, "weight_seed": 2}
            ]
        }"#
    }

    #[test]
    fn mlp_shapes() {
        let net = parse_network(mlp_doc()).unwrap();
        let shapes: Vec<_> = net.layers.iter().map(|l| l.out_shape.clone()).collect();
        assert_eq!(shapes, vec![vec![32], vec![32], vec![10]]);
        assert_eq!(net.terminal_layer().id, 2);
    }

    #[test]
    fn conv_shape_formula() {
        let doc = r#"{
            "name": "c",
            "input_shape": [3, 16, 16],
            "layers": [
                {"type": "conv2d", "producers": [-1], "out_channels": 8,
                 "kernel": 3, "stride": 1, "padding": 1,
                 "quant": {"multiplier": 1, "shift": 8}, "weight_seed": 3}
            ]
        }"#;
        let net = parse_network(doc).unwrap();
        assert_eq!(net.layers[0].out_shape, vec![8, 16, 16]);
        assert_eq!(net.layers[0].weight_matrix_dims(&net), Some((27, 8)));
    }

    #[test]
    fn add_shape_mismatch_rejected() {
        let doc = r#"{
            "name": "bad",
            "input_shape": [8, 16, 16],
            "layers": [
                {"type": "pool", "producers": [-1], "kind": "max", "kernel": 2, "stride": 2},
                {"type": "add", "producers": [-1, 0]}
            ]
        }"#;
        let err = parse_network(doc).unwrap_err();
        assert!(matches!(err, NetError::Semantic { layer: 1, .. }), "{err}");
    }

    #[test]
    fn unknown_field_rejected_with_path() {
        let doc = r#"{
            "name": "x", "input_shape": [1,1,1],
            "layers": [{"type": "relu", "producers": [-1], "bogus": 3}]
        }"#;
        let err = parse_network(doc).unwrap_err();
        match err {
            NetError::Schema { path, .. } => assert!(path.contains("layers"), "{path}"),
            other => panic!("expected schema error, got {other}"),
        }
    }

    #[test]
    fn requantize_examples() {
        // round(3000 / 32) = 94 with half-away-from-zero rounding
        assert_eq!(
            requantize(1000, QuantParams { multiplier: 3, shift: 5 }),
            94
        );
        assert_eq!(requantize(-1000, QuantParams { multiplier: 3, shift: 5 }), -94);
        // ties round away from zero
        assert_eq!(requantize(3, QuantParams { multiplier: 1, shift: 1 }), 2);
        assert_eq!(requantize(-3, QuantParams { multiplier: 1, shift: 1 }), -2);
        // shift 0 is a pure multiply with clamping
        assert_eq!(requantize(100, QuantParams { multiplier: 2, shift: 0 }), 127);
        assert_eq!(requantize(-100, QuantParams { multiplier: 2, shift: 0 }), -128);
    }

    #[test]
    fn div_round_half_away_cases() {
        assert_eq!(div_round_half_away(10, 4), 3);
        assert_eq!(div_round_half_away(-10, 4), -3);
        assert_eq!(div_round_half_away(9, 4), 2);
        assert_eq!(div_round_half_away(11, 4), 3);
        assert_eq!(div_round_half_away(0, 4), 0);
    }
}
