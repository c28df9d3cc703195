use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::NnError;

/// One layer of the segment classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Valid (unpadded) 2-D convolution over `[channels, height, width]`.
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    /// Non-overlapping max pooling with window and stride `kernel`.
    MaxPool {
        kernel: usize,
    },
    Dense {
        out_dim: usize,
    },
    Relu,
    /// Inverted dropout; active only when the forward pass asks for it.
    Dropout {
        rate: f64,
    },
    Flatten,
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. })
    }

    /// Output shape for a single sample of shape `input`.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        let bad = |why: &str| {
            Err(NnError::InvalidConfig(format!(
                "{self} cannot take input {input:?}: {why}"
            )))
        };
        match *self {
            LayerSpec::Conv2d {
                out_channels,
                kernel,
                stride,
            } => {
                if input.len() != 3 {
                    return bad("expected [channels, height, width]");
                }
                if kernel == 0 || stride == 0 || out_channels == 0 {
                    return bad("zero-sized kernel, stride or channel count");
                }
                if input[1] < kernel || input[2] < kernel {
                    return bad("input smaller than kernel");
                }
                Ok(vec![
                    out_channels,
                    (input[1] - kernel) / stride + 1,
                    (input[2] - kernel) / stride + 1,
                ])
            }
            LayerSpec::MaxPool { kernel } => {
                if input.len() != 3 {
                    return bad("expected [channels, height, width]");
                }
                if kernel == 0 || input[1] < kernel || input[2] < kernel {
                    return bad("pooling window does not fit");
                }
                Ok(vec![input[0], input[1] / kernel, input[2] / kernel])
            }
            LayerSpec::Dense { out_dim } => {
                if input.len() != 1 {
                    return bad("dense layers need a flat input");
                }
                if out_dim == 0 {
                    return bad("zero output dimension");
                }
                Ok(vec![out_dim])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return bad("dropout rate must be in [0, 1)");
                }
                Ok(input.to_vec())
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Parameter tensor shapes `(weight, bias)` given the layer input shape.
    pub fn param_shapes(&self, input: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv2d {
                out_channels,
                kernel,
                ..
            } => Some((
                vec![out_channels, input[0], kernel, kernel],
                vec![out_channels],
            )),
            LayerSpec::Dense { out_dim } => Some((vec![out_dim, input[0]], vec![out_dim])),
            _ => None,
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv2d {
                out_channels,
                kernel,
                stride,
            } => write!(f, "conv:{out_channels}:{kernel}:{stride}"),
            LayerSpec::MaxPool { kernel } => write!(f, "maxpool:{kernel}"),
            LayerSpec::Dense { out_dim } => write!(f, "dense:{out_dim}"),
            LayerSpec::Relu => write!(f, "relu"),
            LayerSpec::Dropout { rate } => write!(f, "dropout:{rate}"),
            LayerSpec::Flatten => write!(f, "flatten"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let err = || NnError::InvalidConfig(format!("cannot parse layer `{s}`"));
        let num = |i: usize| -> Result<usize, NnError> {
            parts.get(i).ok_or_else(err)?.parse().map_err(|_| err())
        };
        let layer = match parts[0] {
            "conv" => LayerSpec::Conv2d {
                out_channels: num(1)?,
                kernel: num(2)?,
                stride: if parts.len() > 3 { num(3)? } else { 1 },
            },
            "maxpool" => LayerSpec::MaxPool { kernel: num(1)? },
            "dense" => LayerSpec::Dense { out_dim: num(1)? },
            "relu" => LayerSpec::Relu,
            "dropout" => LayerSpec::Dropout {
                rate: parts.get(1).ok_or_else(err)?.parse().map_err(|_| err())?,
            },
            "flatten" => LayerSpec::Flatten,
            _ => return Err(err()),
        };
        Ok(layer)
    }
}

/// Architecture of the segment classifier. The last layer must be a dense
/// layer producing one logit per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub classes: usize,
}

/// Hidden layers of the default convolutional backbone for `[1, mels, frames]` input.
pub const DEFAULT_CONV_ARCH: &str =
    "conv:8:3:1,relu,maxpool:2,conv:16:3:1,relu,maxpool:2,flatten,dropout:0.3,dense:64,relu,dropout:0.3";

/// Hidden layers of the default backbone for flat feature vectors.
pub const DEFAULT_DENSE_ARCH: &str = "dense:64,relu,dropout:0.3";

impl NetworkConfig {
    /// Builds a config from a comma-separated list of hidden layers; a final
    /// `dense:classes` layer is appended.
    pub fn from_arch(input_shape: Vec<usize>, arch: &str, classes: usize) -> Result<Self, NnError> {
        let mut layers = arch
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<LayerSpec>, _>>()?;
        layers.push(LayerSpec::Dense { out_dim: classes });
        let cfg = Self {
            input_shape,
            layers,
            classes,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Default backbone: convolutional for 3-D input, a small MLP otherwise.
    pub fn default_for(input_shape: Vec<usize>, classes: usize) -> Result<Self, NnError> {
        let arch = if input_shape.len() == 3 {
            DEFAULT_CONV_ARCH
        } else {
            DEFAULT_DENSE_ARCH
        };
        Self::from_arch(input_shape, arch, classes)
    }

    /// Comma-separated hidden layers, the inverse of [`NetworkConfig::from_arch`].
    pub fn arch_string(&self) -> String {
        let n = self.layers.len().saturating_sub(1);
        self.layers[..n]
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.classes < 2 {
            return Err(NnError::InvalidConfig(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        let shapes = self.layer_shapes()?;
        let last = shapes.last().expect("input shape always present");
        if last.as_slice() != [self.classes] {
            return Err(NnError::InvalidConfig(format!(
                "network output {:?} does not match {} classes",
                last, self.classes
            )));
        }
        Ok(())
    }

    /// Per-sample shapes: the input followed by the output of every layer.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>, NnError> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(NnError::InvalidConfig(format!(
                "bad input shape {:?}",
                self.input_shape
            )));
        }
        let mut shapes = vec![self.input_shape.clone()];
        for layer in &self.layers {
            let next = layer.output_shape(shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    /// Shapes of every parameter tensor in storage order (weight then bias per layer).
    pub fn param_shapes(&self) -> Result<Vec<Vec<usize>>, NnError> {
        let shapes = self.layer_shapes()?;
        let mut out = Vec::new();
        for (layer, input) in self.layers.iter().zip(&shapes) {
            if let Some((w, b)) = layer.param_shapes(input) {
                out.push(w);
                out.push(b);
            }
        }
        Ok(out)
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn param_count(&self) -> Result<usize, NnError> {
        Ok(self
            .param_shapes()?
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum())
    }

    pub fn has_dropout(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, LayerSpec::Dropout { rate } if *rate > 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_backbone_shapes_on_one_second_mel() {
        let cfg = NetworkConfig::default_for(vec![1, 128, 42], 4).unwrap();
        let shapes = cfg.layer_shapes().unwrap();
        assert_eq!(shapes[1], vec![8, 126, 40]);
        assert_eq!(shapes[3], vec![8, 63, 20]);
        assert_eq!(shapes[4], vec![16, 61, 18]);
        assert_eq!(shapes[6], vec![16, 30, 9]);
        assert_eq!(shapes[7], vec![4320]);
        assert_eq!(shapes.last().unwrap(), &vec![4]);
    }

    #[test]
    fn arch_string_round_trips() {
        let cfg = NetworkConfig::default_for(vec![1, 16, 16], 3).unwrap();
        assert_eq!(cfg.arch_string(), DEFAULT_CONV_ARCH);
        let again = NetworkConfig::from_arch(vec![1, 16, 16], &cfg.arch_string(), 3).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn rejects_non_composing_layers() {
        assert!(NetworkConfig::from_arch(vec![1, 8, 8], "dense:4", 2).is_err());
        assert!(NetworkConfig::from_arch(vec![10], "conv:4:3", 2).is_err());
        assert!(NetworkConfig::from_arch(vec![1, 2, 2], "conv:4:3,flatten", 2).is_err());
        assert!(NetworkConfig::from_arch(vec![10], "dropout:1.0", 2).is_err());
        assert!(NetworkConfig::from_arch(vec![10], "wobble", 2).is_err());
    }
}
