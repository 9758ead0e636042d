//! Reference inference: exact integer execution of a network, used as the
//! functional oracle for compiled programs.
//!
//! All tensors are int8 in CHW order. Conv/FC accumulate int8 products in
//! int32 and requantize through the shared fixed-point rule; avg-pool divides
//! by the window size with round-half-away-from-zero; add saturates to int8.

use super::{
    div_round_half_away, requantize, sat_add_i8, Layer, LayerKind, NetError, Network, PoolKind,
    NETWORK_INPUT,
};

/// Run the network on `input` (CHW int8) and return the terminal layer's output.
pub fn reference_inference(net: &Network, input: &[i8]) -> Result<Vec<i8>, NetError> {
    if input.len() != net.input_elems() {
        return Err(NetError::Invalid(format!(
            "input has {} elements, network expects {}",
            input.len(),
            net.input_elems()
        )));
    }

    let mut outputs: Vec<Vec<i8>> = Vec::with_capacity(net.layers.len());
    for layer in &net.layers {
        let fetch = |slot: usize| -> &[i8] {
            let p = layer.producers[slot];
            if p == NETWORK_INPUT {
                input
            } else {
                &outputs[p as usize]
            }
        };
        let out = match &layer.kind {
            LayerKind::Conv2d { .. } => run_conv(net, layer, fetch(0))?,
            LayerKind::Fc { quant, .. } => {
                let weights = net.layer_weights(layer)?;
                let (rows, cols) = layer.weight_matrix_dims(net).unwrap();
                let x = fetch(0);
                (0..cols)
                    .map(|j| {
                        let mut acc = 0i32;
                        for (i, &v) in x.iter().take(rows).enumerate() {
                            acc += v as i32 * weights[i * cols + j] as i32;
                        }
                        requantize(acc, *quant)
                    })
                    .collect()
            }
            LayerKind::Pool { kind, kernel, stride } => {
                run_pool(&net.producer_shape(layer, 0), fetch(0), *kind, *kernel, *stride)
            }
            LayerKind::Relu => fetch(0).iter().map(|&v| v.max(0)).collect(),
            LayerKind::Add => {
                let a = fetch(0);
                let b = fetch(1);
                a.iter().zip(b).map(|(&x, &y)| sat_add_i8(x, y)).collect()
            }
            LayerKind::Concat => {
                let mut out = Vec::with_capacity(layer.out_elems());
                if layer.out_shape.len() == 3 {
                    let (h, w) = (layer.out_shape[1], layer.out_shape[2]);
                    for slot in 0..layer.producers.len() {
                        let c = net.producer_shape(layer, slot)[0];
                        out.extend_from_slice(&fetch(slot)[..c * h * w]);
                    }
                } else {
                    for slot in 0..layer.producers.len() {
                        out.extend_from_slice(fetch(slot));
                    }
                }
                out
            }
        };
        debug_assert_eq!(out.len(), layer.out_elems());
        outputs.push(out);
    }

    Ok(outputs[net.terminal_layer().id].clone())
}

fn run_conv(net: &Network, layer: &Layer, x: &[i8]) -> Result<Vec<i8>, NetError> {
    let LayerKind::Conv2d {
        out_channels,
        kernel_h,
        kernel_w,
        stride,
        padding,
        quant,
        ..
    } = &layer.kind
    else {
        unreachable!()
    };
    let in_shape = net.producer_shape(layer, 0);
    let (c_in, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = (layer.out_shape[1], layer.out_shape[2]);
    let weights = net.layer_weights(layer)?;
    let k = *out_channels;

    let mut out = vec![0i8; k * oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..k {
                let mut acc = 0i32;
                for c in 0..c_in {
                    for dh in 0..*kernel_h {
                        let iy = (oy * stride + dh) as isize - *padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for dw in 0..*kernel_w {
                            let ix = (ox * stride + dw) as isize - *padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let v = x[c * h * w + iy as usize * w + ix as usize] as i32;
                            let row = (c * kernel_h + dh) * kernel_w + dw;
                            acc += v * weights[row * k + ch] as i32;
                        }
                    }
                }
                out[ch * oh * ow + oy * ow + ox] = requantize(acc, *quant);
            }
        }
    }
    Ok(out)
}

fn run_pool(in_shape: &[usize], x: &[i8], kind: PoolKind, kernel: usize, stride: usize) -> Vec<i8> {
    let (c_in, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let oh = (h - kernel) / stride + 1;
    let ow = (w - kernel) / stride + 1;
    let mut out = vec![0i8; c_in * oh * ow];
    for c in 0..c_in {
        for oy in 0..oh {
            for ox in 0..ow {
                let window = (0..kernel).flat_map(|dh| {
                    (0..kernel).map(move |dw| x[c * h * w + (oy * stride + dh) * w + ox * stride + dw])
                });
                out[c * oh * ow + oy * ow + ox] = match kind {
                    PoolKind::Max => window.max().unwrap(),
                    PoolKind::Avg => {
                        let sum: i64 = window.map(|v| v as i64).sum();
                        div_round_half_away(sum, (kernel * kernel) as i64) as i8
                    }
                };
            }
        }
    }
    out
}
