//! Human-readable text format for architecture specs: one layer per line,
//! `key=value` fields. Parsing and formatting round-trip exactly.
//!
//! ```text
//! name seesawfacenet-shuffle
//! input 3x112x112
//! embedding 512
//! stem_conv out=64 stride=2 act=swish
//! dw_conv kernel=3 act=swish
//! block variant=seesaw_shuffle in=64 exp=128 out=64 stride=2 split=0.25 se=1 red=4 act=swish residual=0 skip=0 repeat=1
//! head_conv out=512 act=swish
//! gdconv kernel=7
//! embedding_linear out=512
//! ```

use std::collections::HashMap;

use crate::arch::{LayerKind, LayerSpec, ModelSpec};
use crate::blocks::{BlockConfig, BlockVariant};
use crate::error::{Error, Result};
use crate::ops::ActivationKind;

fn act_name(kind: ActivationKind) -> &'static str {
    kind.name()
}

fn parse_act(s: &str) -> Result<ActivationKind> {
    match s {
        "swish" => Ok(ActivationKind::Swish),
        "prelu" => Ok(ActivationKind::PRelu),
        "relu" => Ok(ActivationKind::Relu),
        "sigmoid" => Ok(ActivationKind::Sigmoid),
        _ => Err(Error::SpecFormat(format!("unknown activation '{s}'"))),
    }
}

pub fn format_spec(spec: &ModelSpec) -> String {
    let mut out = String::new();
    out.push_str(&format!("name {}\n", spec.name));
    out.push_str(&format!("input {}x{}x{}\n", spec.input.0, spec.input.1, spec.input.2));
    out.push_str(&format!("embedding {}\n", spec.embedding_dim));
    for layer in &spec.layers {
        let line = match layer.kind {
            LayerKind::StemConv { out_channels, stride, activation } => {
                format!("stem_conv out={out_channels} stride={stride} act={}", act_name(activation))
            }
            LayerKind::DwConv { kernel, activation } => {
                format!("dw_conv kernel={kernel} act={}", act_name(activation))
            }
            LayerKind::Block(cfg) => format!(
                "block variant={} in={} exp={} out={} stride={} split={} se={} red={} act={} residual={} skip={}",
                cfg.variant.name(),
                cfg.in_channels,
                cfg.expansion_channels,
                cfg.out_channels,
                cfg.stride,
                cfg.split_ratio,
                cfg.use_se as u8,
                cfg.se_reduction,
                act_name(cfg.activation),
                cfg.residual as u8,
                cfg.downsample_skip as u8,
            ),
            LayerKind::HeadConv { out_channels, activation } => {
                format!("head_conv out={out_channels} act={}", act_name(activation))
            }
            LayerKind::GdConv { kernel } => format!("gdconv kernel={kernel}"),
            LayerKind::EmbeddingLinear { out_features } => format!("embedding_linear out={out_features}"),
        };
        if layer.repeat == 1 {
            out.push_str(&format!("{line}\n"));
        } else {
            out.push_str(&format!("{line} repeat={}\n", layer.repeat));
        }
    }
    out
}

struct Fields<'a> {
    line_no: usize,
    map: HashMap<&'a str, &'a str>,
}

impl<'a> Fields<'a> {
    fn get(&self, key: &str) -> Result<&'a str> {
        self.map
            .get(key)
            .copied()
            .ok_or_else(|| Error::SpecFormat(format!("line {}: missing field '{key}'", self.line_no)))
    }

    fn get_usize(&self, key: &str) -> Result<usize> {
        self.get(key)?
            .parse()
            .map_err(|_| Error::SpecFormat(format!("line {}: field '{key}' is not an integer", self.line_no)))
    }

    fn get_f64(&self, key: &str) -> Result<f64> {
        self.get(key)?
            .parse()
            .map_err(|_| Error::SpecFormat(format!("line {}: field '{key}' is not a number", self.line_no)))
    }

    fn get_bool(&self, key: &str) -> Result<bool> {
        match self.get(key)? {
            "0" | "false" => Ok(false),
            "1" | "true" => Ok(true),
            other => Err(Error::SpecFormat(format!(
                "line {}: field '{key}' must be 0/1, got '{other}'",
                self.line_no
            ))),
        }
    }

    fn repeat(&self) -> Result<usize> {
        match self.map.get("repeat") {
            Some(v) => v
                .parse()
                .map_err(|_| Error::SpecFormat(format!("line {}: bad repeat", self.line_no))),
            None => Ok(1),
        }
    }
}

pub fn parse_spec(text: &str) -> Result<ModelSpec> {
    let mut name = None;
    let mut input = None;
    let mut embedding = None;
    let mut layers = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let line_no = i + 1;
        let (head, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        match head {
            "name" => name = Some(rest.trim().to_string()),
            "input" => {
                let dims: Vec<usize> = rest
                    .trim()
                    .split('x')
                    .map(|d| d.parse().map_err(|_| Error::SpecFormat(format!("line {line_no}: bad input dims"))))
                    .collect::<Result<_>>()?;
                if dims.len() != 3 {
                    return Err(Error::SpecFormat(format!("line {line_no}: input must be CxHxW")));
                }
                input = Some((dims[0], dims[1], dims[2]));
            }
            "embedding" => {
                embedding = Some(
                    rest.trim()
                        .parse()
                        .map_err(|_| Error::SpecFormat(format!("line {line_no}: bad embedding dim")))?,
                );
            }
            kind => {
                let mut map = HashMap::new();
                for tok in rest.split_whitespace() {
                    let (k, v) = tok
                        .split_once('=')
                        .ok_or_else(|| Error::SpecFormat(format!("line {line_no}: expected key=value, got '{tok}'")))?;
                    map.insert(k, v);
                }
                let fields = Fields { line_no, map };
                let repeat = fields.repeat()?;
                let kind = match kind {
                    "stem_conv" => LayerKind::StemConv {
                        out_channels: fields.get_usize("out")?,
                        stride: fields.get_usize("stride")?,
                        activation: parse_act(fields.get("act")?)?,
                    },
                    "dw_conv" => LayerKind::DwConv {
                        kernel: fields.get_usize("kernel")?,
                        activation: parse_act(fields.get("act")?)?,
                    },
                    "block" => LayerKind::Block(BlockConfig {
                        in_channels: fields.get_usize("in")?,
                        expansion_channels: fields.get_usize("exp")?,
                        out_channels: fields.get_usize("out")?,
                        stride: fields.get_usize("stride")?,
                        variant: BlockVariant::parse(fields.get("variant")?)
                            .ok_or_else(|| Error::SpecFormat(format!("line {line_no}: unknown variant")))?,
                        split_ratio: fields.get_f64("split")?,
                        use_se: fields.get_bool("se")?,
                        se_reduction: fields.get_usize("red")?,
                        activation: parse_act(fields.get("act")?)?,
                        residual: fields.get_bool("residual")?,
                        downsample_skip: fields.get_bool("skip")?,
                    }),
                    "head_conv" => LayerKind::HeadConv {
                        out_channels: fields.get_usize("out")?,
                        activation: parse_act(fields.get("act")?)?,
                    },
                    "gdconv" => LayerKind::GdConv {
                        kernel: fields.get_usize("kernel")?,
                    },
                    "embedding_linear" => LayerKind::EmbeddingLinear {
                        out_features: fields.get_usize("out")?,
                    },
                    other => {
                        return Err(Error::SpecFormat(format!("line {line_no}: unknown layer kind '{other}'")))
                    }
                };
                layers.push(LayerSpec { kind, repeat });
            }
        }
    }

    let spec = ModelSpec {
        name: name.ok_or_else(|| Error::SpecFormat("missing 'name' line".into()))?,
        input: input.ok_or_else(|| Error::SpecFormat("missing 'input' line".into()))?,
        embedding_dim: embedding.ok_or_else(|| Error::SpecFormat("missing 'embedding' line".into()))?,
        layers,
    };
    if spec.layers.is_empty() {
        return Err(Error::SpecFormat("spec has no layers".into()));
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch;

    #[test]
    fn round_trip_all_predefined_specs() {
        for name in arch::KNOWN_MODELS {
            let spec = arch::model_by_name(name).unwrap();
            let text = format_spec(&spec);
            let parsed = parse_spec(&text).unwrap();
            assert_eq!(parsed, spec, "{name}");
            // Stable: formatting again yields the same text.
            assert_eq!(format_spec(&parsed), text);
        }
    }

    #[test]
    fn parse_reports_line_numbers() {
        let text = "name x\ninput 3x8x8\nembedding 4\nstem_conv out=ten stride=2 act=swish\n";
        let err = parse_spec(text).unwrap_err().to_string();
        assert!(err.contains("line 4"), "{err}");
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let spec = arch::spec_seesaw_toy();
        let mut text = String::from("# header comment\n\n");
        text.push_str(&format_spec(&spec));
        assert_eq!(parse_spec(&text).unwrap(), spec);
    }

    #[test]
    fn missing_header_is_an_error() {
        assert!(parse_spec("embedding 4\n").is_err());
    }
}
