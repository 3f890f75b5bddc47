use serde::{Deserialize, Serialize};

use super::loss::LossKind;
use crate::error::{Error, Result};
use crate::lif::LifConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv {
        channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    BatchNorm,
    Lif,
    MaxPool {
        size: usize,
    },
    Dropout {
        rate: f64,
    },
    Fc {
        width: usize,
    },
    /// Averages consecutive groups of `group` neurons into one score each.
    Voting {
        group: usize,
    },
    /// Mean over the time axis; must be the final layer.
    TemporalAverage,
}

fn one() -> usize {
    1
}

/// Layer vocabulary plus the boundary between the frozen feature extractor
/// (`layers[..split]`) and the trainable classifier (`layers[split..]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Per-step, per-sample input shape: `[C, H, W]` or `[F]`.
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    pub layers: Vec<LayerSpec>,
    pub split: usize,
    #[serde(default)]
    pub lif: LifConfig,
    #[serde(default)]
    pub loss: LossKind,
}

/// Options used when expanding the compact layer notation.
#[derive(Clone, Copy, Debug)]
pub struct NotationOptions {
    pub vote_group: usize,
    pub dropout: f64,
    /// Zero padding for every convolution.
    pub conv_padding: ConvPadding,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvPadding {
    /// No padding.
    Valid,
    /// `kernel / 2`, preserving the spatial extent for odd kernels.
    Same,
}

impl Default for NotationOptions {
    fn default() -> Self {
        Self {
            vote_group: 10,
            dropout: 0.5,
            conv_padding: ConvPadding::Same,
        }
    }
}

impl NetworkSpec {
    /// Expands notation such as `{32C5-BN-MP}*2||DP-FC2048-DP-Voting-AP`.
    ///
    /// `nCk` is a k×k convolution with n channels, `BN` batch norm, `MP` 2×2 max
    /// pooling, `DP` dropout, `FCn` a fully connected layer, `Voting` the class
    /// readout layer followed by group averaging, `AP` averaging over time. A LIF
    /// layer follows each batch norm (or a convolution with no batch norm) and each
    /// fully connected layer. `||` marks the extractor/classifier split.
    pub fn from_notation(
        notation: &str,
        input_shape: &[usize],
        num_classes: usize,
        lif: LifConfig,
        opts: NotationOptions,
    ) -> Result<Self> {
        let compact: String = notation.chars().filter(|c| !c.is_whitespace()).collect();
        let mut halves = compact.split("||");
        let head = halves.next().unwrap_or_default();
        let tail = halves
            .next()
            .ok_or_else(|| Error::Network("notation lacks the `||` split marker".into()))?;
        if halves.next().is_some() {
            return Err(Error::Network("notation has more than one `||`".into()));
        }
        let mut layers = Vec::new();
        for tok in expand_groups(head)? {
            push_token(&tok, &mut layers, num_classes, opts)?;
        }
        fix_lif_after_conv(&mut layers);
        let split = layers.len();
        let mut classifier = Vec::new();
        for tok in expand_groups(tail)? {
            push_token(&tok, &mut classifier, num_classes, opts)?;
        }
        fix_lif_after_conv(&mut classifier);
        layers.extend(classifier);
        let spec = Self {
            input_shape: input_shape.to_vec(),
            num_classes,
            layers,
            split,
            lif,
            loss: LossKind::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Infers per-step, per-sample shapes after every layer (index 0 is the input).
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_shape.clone()];
        let mut cur = self.input_shape.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let bad = |msg: &str| Error::Network(format!("layer {i} ({layer:?}): {msg}"));
            cur = match *layer {
                LayerSpec::Conv {
                    channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let [_, h, w] = cur[..] else {
                        return Err(bad("convolution needs [C, H, W] input"));
                    };
                    if channels == 0 || kernel == 0 || stride == 0 {
                        return Err(bad("zero-sized convolution"));
                    }
                    if h + 2 * padding < kernel || w + 2 * padding < kernel {
                        return Err(bad("kernel larger than padded input"));
                    }
                    vec![
                        channels,
                        (h + 2 * padding - kernel) / stride + 1,
                        (w + 2 * padding - kernel) / stride + 1,
                    ]
                }
                LayerSpec::MaxPool { size } => {
                    let [c, h, w] = cur[..] else {
                        return Err(bad("max pooling needs [C, H, W] input"));
                    };
                    if size == 0 || h < size || w < size {
                        return Err(bad("pool larger than input"));
                    }
                    vec![c, h / size, w / size]
                }
                LayerSpec::BatchNorm | LayerSpec::Lif => cur,
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(bad("dropout rate must lie in [0, 1)"));
                    }
                    cur
                }
                LayerSpec::Fc { width } => {
                    if width == 0 {
                        return Err(bad("zero width"));
                    }
                    vec![width]
                }
                LayerSpec::Voting { group } => {
                    let n: usize = cur.iter().product();
                    if group == 0 || n != self.num_classes * group {
                        return Err(bad(&format!(
                            "voting over {n} neurons needs num_classes * group = {}",
                            self.num_classes * group
                        )));
                    }
                    vec![self.num_classes]
                }
                LayerSpec::TemporalAverage => {
                    if i + 1 != self.layers.len() {
                        return Err(bad("temporal average must be the last layer"));
                    }
                    cur
                }
            };
            shapes.push(cur.clone());
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        self.lif.validate()?;
        if self.num_classes < 2 {
            return Err(Error::Network("need at least two classes".into()));
        }
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::Network(
                "input shape must be non-empty and positive".into(),
            ));
        }
        if self.split > self.layers.len() {
            return Err(Error::Network("split index beyond the last layer".into()));
        }
        let shapes = self.shapes()?;
        if self.layers.last() != Some(&LayerSpec::TemporalAverage) {
            return Err(Error::Network(
                "network must end with a temporal average".into(),
            ));
        }
        if shapes.last().map(|s| s.iter().product::<usize>()) != Some(self.num_classes) {
            return Err(Error::Network(
                "readout does not produce one score per class".into(),
            ));
        }
        if self.split > 0 && !self.emits_spikes(self.split) {
            return Err(Error::Network(format!(
                "layer {} before the split does not emit spikes",
                self.split - 1
            )));
        }
        if self.layers[..self.split].iter().any(|l| {
            matches!(
                l,
                LayerSpec::Dropout { .. } | LayerSpec::Voting { .. } | LayerSpec::TemporalAverage
            )
        }) {
            return Err(Error::Network(
                "extractor may only hold conv/bn/lif/pool/fc layers".into(),
            ));
        }
        Ok(())
    }

    /// True if the output after `layers[..end]` is guaranteed binary.
    fn emits_spikes(&self, end: usize) -> bool {
        let mut binary = false;
        for layer in &self.layers[..end] {
            binary = match layer {
                LayerSpec::Lif => true,
                LayerSpec::MaxPool { .. } => binary,
                _ => false,
            };
        }
        binary
    }

    /// Per-step latent shape at the split boundary.
    pub fn latent_shape(&self) -> Result<Vec<usize>> {
        Ok(self.shapes()?[self.split].clone())
    }

    pub fn latent_len(&self) -> Result<usize> {
        Ok(self.latent_shape()?.iter().product())
    }
}

fn expand_groups(s: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let chars: Vec<char> = s.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        match chars[i] {
            '-' => i += 1,
            '{' => {
                let mut depth = 0;
                let mut j = i;
                loop {
                    match chars.get(j) {
                        Some('{') => depth += 1,
                        Some('}') => {
                            depth -= 1;
                            if depth == 0 {
                                break;
                            }
                        }
                        None => return Err(Error::Network(format!("unbalanced braces in `{s}`"))),
                        _ => {}
                    }
                    j += 1;
                }
                let inner: String = chars[i + 1..j].iter().collect();
                let mut k = j + 1;
                let mut reps = 1;
                if chars.get(k) == Some(&'*') {
                    let start = k + 1;
                    k = start;
                    while chars.get(k).is_some_and(|c| c.is_ascii_digit()) {
                        k += 1;
                    }
                    let digits: String = chars[start..k].iter().collect();
                    reps = digits
                        .parse()
                        .map_err(|_| Error::Network(format!("bad repeat count in `{s}`")))?;
                }
                let body = expand_groups(&inner)?;
                for _ in 0..reps {
                    out.extend(body.iter().cloned());
                }
                i = k;
            }
            _ => {
                let mut j = i;
                while j < chars.len() && chars[j] != '-' && chars[j] != '{' {
                    j += 1;
                }
                out.push(chars[i..j].iter().collect());
                i = j;
            }
        }
    }
    Ok(out)
}

fn push_token(
    tok: &str,
    layers: &mut Vec<LayerSpec>,
    num_classes: usize,
    opts: NotationOptions,
) -> Result<()> {
    let bad = || Error::Network(format!("unknown layer token `{tok}`"));
    match tok {
        "BN" => {
            layers.push(LayerSpec::BatchNorm);
            layers.push(LayerSpec::Lif);
        }
        "MP" => layers.push(LayerSpec::MaxPool { size: 2 }),
        "DP" => layers.push(LayerSpec::Dropout { rate: opts.dropout }),
        "AP" => layers.push(LayerSpec::TemporalAverage),
        "Voting" => {
            layers.push(LayerSpec::Fc {
                width: num_classes * opts.vote_group,
            });
            layers.push(LayerSpec::Lif);
            layers.push(LayerSpec::Voting {
                group: opts.vote_group,
            });
        }
        _ if tok.starts_with("FC") => {
            let width = tok[2..].parse().map_err(|_| bad())?;
            layers.push(LayerSpec::Fc { width });
            layers.push(LayerSpec::Lif);
        }
        _ => {
            let (ch, k) = tok.split_once('C').ok_or_else(bad)?;
            let channels = ch.parse().map_err(|_| bad())?;
            let kernel: usize = k.parse().map_err(|_| bad())?;
            let padding = match opts.conv_padding {
                ConvPadding::Valid => 0,
                ConvPadding::Same => kernel / 2,
            };
            layers.push(LayerSpec::Conv {
                channels,
                kernel,
                stride: 1,
                padding,
            });
        }
    }
    Ok(())
}

/// Inserts a LIF after any convolution that is not followed by batch norm.
fn fix_lif_after_conv(layers: &mut Vec<LayerSpec>) {
    let mut i = 0;
    while i < layers.len() {
        if matches!(layers[i], LayerSpec::Conv { .. })
            && layers.get(i + 1) != Some(&LayerSpec::BatchNorm)
        {
            layers.insert(i + 1, LayerSpec::Lif);
        }
        i += 1;
    }
}

/// Layer notation for the MNIST network.
pub const MNIST_NOTATION: &str = "{32C5-BN-MP}*2||DP-FC2048-DP-Voting-AP";

/// Reduced MNIST network for single-core runs; meant for valid padding, which
/// gives a `16 x 4 x 4` latent per step.
pub const DESK_MNIST_NOTATION: &str = "{16C5-BN-MP}*2||DP-FC256-DP-Voting-AP";
