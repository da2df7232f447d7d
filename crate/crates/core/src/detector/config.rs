use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tinynet::{Conv1dGeom, Conv3dGeom};

/// Layer of the visual extractor. Every convolution is followed by ReLU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum VisualBlock {
    /// Non-overlapping mean pooling; each axis shrinks to `len / kernel`.
    AvgPool { kernel: [usize; 3] },
    Conv {
        out_channels: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
    },
    /// `relu(conv3x3x3(relu(conv3x3x3_s(x))) + shortcut(x))` where the
    /// shortcut is a strided 1x1x1 convolution whenever the shape changes.
    Residual {
        out_channels: usize,
        stride: [usize; 3],
    },
}

/// Strided 1D convolution followed by ReLU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AudioBlock {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl AudioBlock {
    pub fn geom(&self) -> Conv1dGeom {
        Conv1dGeom {
            stride: self.stride,
            padding: self.padding,
        }
    }
}

/// Shape of the clips the detector consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputShape {
    pub t_v: usize,
    pub c_v: usize,
    pub h: usize,
    pub w: usize,
    pub t_a: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    /// Temporal length T' of both feature maps.
    pub t_prime: usize,
    /// Feature channels C'.
    pub c_prime: usize,
    pub visual_blocks: Vec<VisualBlock>,
    pub audio_blocks: Vec<AudioBlock>,
    /// When false the attention map is replaced by the uniform `1/T'`.
    pub attention: bool,
    /// Temporal kernel of the two attention projections (odd, same padding).
    pub attention_kernel: usize,
    /// Width of the classifier's hidden layer.
    pub hidden: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig::toy(8, 16)
    }
}

impl DetectorConfig {
    /// Desk-scale layout for 16-frame 32x32 clips with 1600 audio samples.
    ///
    /// Visual: 4x4 spatial mean pool, a stem convolution and two residual
    /// blocks (the second halves time, 16 -> 8 frames). Audio: five strided
    /// convolutions, 1600 -> 320 -> 64 -> 32 -> 16 -> 8 steps.
    pub fn toy(t_prime: usize, c_prime: usize) -> Self {
        let half = (c_prime / 2).max(1);
        let conv1 = |out_channels, stride| AudioBlock {
            out_channels,
            kernel: stride + 2,
            stride,
            padding: 1,
        };
        DetectorConfig {
            t_prime,
            c_prime,
            visual_blocks: vec![
                VisualBlock::AvgPool { kernel: [1, 4, 4] },
                VisualBlock::Conv {
                    out_channels: half,
                    kernel: [3, 3, 3],
                    stride: [1, 1, 1],
                    padding: [1, 1, 1],
                },
                VisualBlock::Residual {
                    out_channels: half,
                    stride: [1, 2, 2],
                },
                VisualBlock::Residual {
                    out_channels: c_prime,
                    stride: [2, 1, 1],
                },
            ],
            audio_blocks: vec![
                conv1(half, 5),
                conv1(c_prime, 5),
                conv1(c_prime, 2),
                conv1(c_prime, 2),
                conv1(c_prime, 2),
            ],
            attention: true,
            attention_kernel: 3,
            hidden: 32,
        }
    }

    /// Smallest layout used by the full-model gradient check: clips of
    /// 4 frames of 4x4 pixels and 32 audio samples.
    pub fn tiny(t_prime: usize, c_prime: usize) -> Self {
        DetectorConfig {
            t_prime,
            c_prime,
            visual_blocks: vec![
                VisualBlock::Conv {
                    out_channels: 2,
                    kernel: [3, 3, 3],
                    stride: [1, 1, 1],
                    padding: [1, 1, 1],
                },
                VisualBlock::Residual {
                    out_channels: c_prime,
                    stride: [2, 2, 2],
                },
            ],
            audio_blocks: vec![
                AudioBlock { out_channels: 2, kernel: 4, stride: 2, padding: 1 },
                AudioBlock { out_channels: c_prime, kernel: 4, stride: 2, padding: 1 },
                AudioBlock { out_channels: c_prime, kernel: 4, stride: 2, padding: 1 },
            ],
            attention: true,
            attention_kernel: 3,
            hidden: 5,
        }
    }

    pub fn attention_channels(&self) -> usize {
        self.c_prime / 4
    }

    /// Visual activation shapes `[C, T, H, W]` after each block, starting
    /// with the input.
    pub fn trace_visual(&self, input: &InputShape) -> Result<Vec<[usize; 4]>> {
        let mut shape = [input.c_v, input.t_v, input.h, input.w];
        let mut trace = vec![shape];
        for (idx, block) in self.visual_blocks.iter().enumerate() {
            let spatial = |k: [usize; 3], s: [usize; 3], p: [usize; 3], shape: [usize; 4]| -> Result<[usize; 3]> {
                let mut out = [0; 3];
                for d in 0..3 {
                    out[d] = crate::tinynet::conv::out_len(shape[d + 1], k[d], s[d], p[d]).ok_or_else(|| {
                        Error::Config(format!(
                            "visual block {idx}: kernel {k:?} stride {s:?} padding {p:?} does not fit {shape:?}"
                        ))
                    })?;
                }
                Ok(out)
            };
            shape = match *block {
                VisualBlock::AvgPool { kernel } => {
                    if kernel.contains(&0) {
                        return Err(Error::Config(format!("visual block {idx}: zero pool kernel")));
                    }
                    let o = [0, 1, 2].map(|d| (shape[d + 1] / kernel[d]).max(1));
                    [shape[0], o[0], o[1], o[2]]
                }
                VisualBlock::Conv { out_channels, kernel, stride, padding } => {
                    let o = spatial(kernel, stride, padding, shape)?;
                    [out_channels, o[0], o[1], o[2]]
                }
                VisualBlock::Residual { out_channels, stride } => {
                    let o = spatial([3; 3], stride, [1; 3], shape)?;
                    [out_channels, o[0], o[1], o[2]]
                }
            };
            if shape.contains(&0) {
                return Err(Error::Config(format!("visual block {idx} produces empty shape {shape:?}")));
            }
            trace.push(shape);
        }
        Ok(trace)
    }

    /// Audio activation shapes `[C, L]` after each block, starting with the
    /// input.
    pub fn trace_audio(&self, input: &InputShape) -> Result<Vec<[usize; 2]>> {
        let mut shape = [1, input.t_a];
        let mut trace = vec![shape];
        for (idx, b) in self.audio_blocks.iter().enumerate() {
            let l = crate::tinynet::conv::out_len(shape[1], b.kernel, b.stride, b.padding).ok_or_else(|| {
                Error::Config(format!("audio block {idx}: {b:?} does not fit length {}", shape[1]))
            })?;
            shape = [b.out_channels, l];
            if b.out_channels == 0 {
                return Err(Error::Config(format!("audio block {idx} has zero channels")));
            }
            trace.push(shape);
        }
        Ok(trace)
    }

    pub fn validate(&self, input: &InputShape) -> Result<()> {
        if self.t_prime == 0 {
            return Err(Error::Config("t_prime must be >= 1".into()));
        }
        if self.c_prime == 0 || self.c_prime % 4 != 0 {
            return Err(Error::Config(format!("c_prime={} must be a positive multiple of 4", self.c_prime)));
        }
        if self.attention_kernel % 2 == 0 {
            return Err(Error::Config(format!("attention_kernel={} must be odd", self.attention_kernel)));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden must be >= 1".into()));
        }
        let v = *self.trace_visual(input)?.last().expect("trace has the input");
        let a = *self.trace_audio(input)?.last().expect("trace has the input");
        if v[0] != self.c_prime || a[0] != self.c_prime {
            return Err(Error::Config(format!(
                "extractors end with {} (visual) and {} (audio) channels, c_prime is {}",
                v[0], a[0], self.c_prime
            )));
        }
        if v[1] < self.t_prime || a[1] < self.t_prime {
            return Err(Error::Config(format!(
                "extractors end with temporal length {} (visual) and {} (audio), below t_prime={}",
                v[1], a[1], self.t_prime
            )));
        }
        Ok(())
    }

    pub(crate) fn residual_geoms(stride: [usize; 3]) -> (Conv3dGeom, Conv3dGeom, Conv3dGeom) {
        (
            Conv3dGeom { stride, padding: [1; 3] },
            Conv3dGeom { stride: [1; 3], padding: [1; 3] },
            Conv3dGeom { stride, padding: [0; 3] },
        )
    }
}
