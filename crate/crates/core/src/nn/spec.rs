//! Serializable network description, used for checkpoint self-description
//! and shape validation.

use serde::{Deserialize, Serialize};

use super::NnError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv1d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    ConvT1d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
    },
    BatchNorm {
        channels: usize,
    },
    Relu,
    Sigmoid,
    MaxPool {
        size: usize,
        stride: usize,
        ceil_mode: bool,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Flatten,
    Reshape {
        channels: usize,
        width: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Propagates a `(channels, width)` shape through the stack, checking
    /// that consecutive layers compose. Dense layers consume and produce
    /// flat `(features, 1)` shapes.
    pub fn output_shape(&self, input: (usize, usize)) -> Result<(usize, usize), NnError> {
        let mut cur = input;
        for (i, layer) in self.layers.iter().enumerate() {
            let err = |msg: String| NnError::ShapeMismatch(format!("layer {i}: {msg}"));
            cur = match *layer {
                LayerSpec::Conv1d {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                    padding,
                } => {
                    if cur.0 != in_ch {
                        return Err(err(format!("expected {in_ch} channels, got {}", cur.0)));
                    }
                    let padded = cur.1 + 2 * padding;
                    if padded < kernel {
                        return Err(err("kernel larger than padded width".into()));
                    }
                    (out_ch, (padded - kernel) / stride + 1)
                }
                LayerSpec::ConvT1d {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                    padding,
                    output_padding,
                } => {
                    if cur.0 != in_ch {
                        return Err(err(format!("expected {in_ch} channels, got {}", cur.0)));
                    }
                    (
                        out_ch,
                        (cur.1 - 1) * stride + kernel + output_padding - 2 * padding,
                    )
                }
                LayerSpec::BatchNorm { channels } => {
                    if cur.0 != channels {
                        return Err(err(format!("expected {channels} channels, got {}", cur.0)));
                    }
                    cur
                }
                LayerSpec::Relu | LayerSpec::Sigmoid => cur,
                LayerSpec::MaxPool {
                    size,
                    stride,
                    ceil_mode,
                } => {
                    let w = cur.1;
                    let out = if ceil_mode {
                        if w == 0 {
                            return Err(err("empty width".into()));
                        }
                        (w.saturating_sub(size) + stride - 1) / stride + 1
                    } else {
                        if w < size {
                            return Err(err("window larger than input".into()));
                        }
                        (w - size) / stride + 1
                    };
                    (cur.0, out)
                }
                LayerSpec::Dense { inputs, outputs } => {
                    if cur.0 * cur.1 != inputs {
                        return Err(err(format!(
                            "expected {inputs} features, got {}",
                            cur.0 * cur.1
                        )));
                    }
                    (outputs, 1)
                }
                LayerSpec::Flatten => (cur.0 * cur.1, 1),
                LayerSpec::Reshape { channels, width } => {
                    if cur.0 * cur.1 != channels * width {
                        return Err(err("reshape element count mismatch".into()));
                    }
                    (channels, width)
                }
            };
        }
        Ok(cur)
    }
}
