use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use super::{BoundParams, ModelParams, TUNetConfig};
use crate::autodiff::{Graph, Tensor, Var};
use crate::data::IMAGE_CHANNELS;
use crate::error::{Error, Result};
use crate::rng::{mix, standard_normal, stream_rng};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// Square `k x k` convolution with bias.
    Conv { cin: usize, cout: usize, k: usize },
    /// 2x2 stride-2 transposed convolution, no bias.
    UpConv { cin: usize, cout: usize },
    Dense { fin: usize, fout: usize },
}

/// A learnable layer and the parameter names it owns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

impl LayerSpec {
    fn conv(name: String, cin: usize, cout: usize, k: usize) -> Self {
        LayerSpec {
            name,
            kind: LayerKind::Conv { cin, cout, k },
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> Option<String> {
        match self.kind {
            LayerKind::UpConv { .. } => None,
            _ => Some(format!("{}.bias", self.name)),
        }
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Conv { cin, cout, k } => alloc::vec![cout, cin, k, k],
            LayerKind::UpConv { cin, cout } => alloc::vec![cin, cout, 2, 2],
            LayerKind::Dense { fin, fout } => alloc::vec![fin, fout],
        }
    }

    pub fn bias_len(&self) -> usize {
        match self.kind {
            LayerKind::Conv { cout, .. } => cout,
            LayerKind::UpConv { .. } => 0,
            LayerKind::Dense { fout, .. } => fout,
        }
    }

    /// Inputs feeding each output unit, used for He initialisation.
    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv { cin, k, .. } => cin * k * k,
            // A 2x2 stride-2 kernel touches each output pixel with exactly one tap per input channel.
            LayerKind::UpConv { cin, .. } => cin,
            LayerKind::Dense { fin, .. } => fin,
        }
    }
}

/// Graph handles produced by [`TUNet::forward`].
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub seg_logits: Var,
    pub seg_probs: Var,
    pub cls_logits: Var,
    pub cls_probs: Var,
}

/// Output values of an inference pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<T> {
    /// `[N,C,S,S]`, each entry in `(0, 1)`.
    pub seg_probs: Tensor<T>,
    /// `[N,C]`, each entry in `(0, 1)`.
    pub cls_probs: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TUNet {
    config: TUNetConfig,
    layers: Vec<LayerSpec>,
}

impl TUNet {
    pub fn new(config: TUNetConfig) -> Result<Self> {
        config.validate()?;
        Ok(TUNet {
            layers: layout(&config),
            config,
        })
    }

    pub fn config(&self) -> &TUNetConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight_shape().iter().product::<usize>() + l.bias_len())
            .sum()
    }

    /// He-normal weights (`std = sqrt(2 / fan_in)`), zero biases. Each tensor
    /// has its own random stream so the result depends only on `seed`.
    pub fn init<T: Scalar>(&self, seed: u64) -> ModelParams<T> {
        let mut params = ModelParams::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let std = (2.0 / layer.fan_in() as f64).sqrt();
            let mut rng = stream_rng(seed, mix(&[0x696e_6974, i as u64]));
            let w = Tensor::from_fn(&layer.weight_shape(), |_| T::of(std * standard_normal(&mut rng)));
            params.insert(layer.weight_name(), w).expect("layer names are unique");
            if let Some(b) = layer.bias_name() {
                params
                    .insert(b, Tensor::zeros(&[layer.bias_len()]))
                    .expect("layer names are unique");
            }
        }
        params
    }

    /// Check that `params` has exactly this network's names and shapes.
    pub fn check_params<T: Scalar>(&self, params: &ModelParams<T>) -> Result<()> {
        let expected = self.init::<f32>(0);
        if !expected.same_layout(params) {
            return Err(Error::usage(format!(
                "parameter layout does not match the configured network ({} tensors expected, {} given)",
                expected.len(),
                params.len()
            )));
        }
        Ok(())
    }

    /// Joint forward pass over `batch` `[N,4,S,S]`.
    pub fn forward<T: Scalar, R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        params: &BoundParams,
        batch: Var,
        training: bool,
        rng: &mut R,
    ) -> Result<ForwardVars> {
        let cfg = &self.config;
        let s = cfg.side;
        match *g.shape(batch) {
            [_, IMAGE_CHANNELS, h, w] if h == s && w == s => {}
            ref shape => {
                return Err(Error::dim(
                    "input",
                    format!("expected [N,{IMAGE_CHANNELS},{s},{s}], got {shape:?}"),
                ))
            }
        }
        let mut x = batch;
        let mut skips = Vec::with_capacity(cfg.levels);
        for l in 0..cfg.levels {
            x = self.conv_relu(g, params, &format!("enc.{l}.conv1"), x, 1)?;
            x = self.conv_relu(g, params, &format!("enc.{l}.conv2"), x, 1)?;
            skips.push(x);
            x = g.maxpool2x2(x).map_err(at(&format!("enc.{l}.pool")))?;
        }
        x = self.conv_relu(g, params, "bottleneck.conv1", x, 1)?;
        let bottleneck = self.conv_relu(g, params, "bottleneck.conv2", x, 1)?;

        x = bottleneck;
        for l in (0..cfg.levels).rev() {
            let name = format!("dec.{l}.up");
            let k = params.var(&format!("{name}.weight"))?;
            x = g.conv2d_transpose(x, k, (2, 2)).map_err(at(&name))?;
            x = g
                .concat_channels(x, skips[l])
                .map_err(at(&format!("dec.{l}.skip")))?;
            x = self.conv_relu(g, params, &format!("dec.{l}.conv1"), x, 1)?;
            x = self.conv_relu(g, params, &format!("dec.{l}.conv2"), x, 1)?;
        }
        let seg_logits = self.conv(g, params, "seg_head", x, 1, 0)?;
        let seg_probs = g.sigmoid(seg_logits);

        let appearance = self.conv_relu(g, params, "cls.appearance", bottleneck, 2)?;
        let mut st = self.conv_relu(g, params, "cls.structure.0", seg_probs, 1)?;
        for k in 1..=cfg.structural_downsamples() {
            st = self.conv_relu(g, params, &format!("cls.structure.{k}"), st, 2)?;
        }
        let fused = g.concat_channels(appearance, st).map_err(at("cls.fuse"))?;
        let fused = g.dropout(fused, cfg.dropout, training, rng)?;
        let pooled = g.global_avg_pool(fused).map_err(at("cls.gap"))?;
        let pooled = g.dropout(pooled, cfg.dropout, training, rng)?;
        let w = params.var("cls.fc.weight")?;
        let b = params.var("cls.fc.bias")?;
        let cls_logits = g.dense(pooled, w, b).map_err(at("cls.fc"))?;
        let cls_probs = g.sigmoid(cls_logits);
        Ok(ForwardVars {
            seg_logits,
            seg_probs,
            cls_logits,
            cls_probs,
        })
    }

    /// Eval-mode forward pass returning plain tensors.
    pub fn predict<T: Scalar>(&self, params: &ModelParams<T>, batch: &Tensor<T>) -> Result<ForwardOutput<T>> {
        let mut g = Graph::new();
        let bound = params.bind_frozen(&mut g);
        let input = g.constant(batch.clone());
        let mut unused = stream_rng(0, 0);
        let out = self.forward(&mut g, &bound, input, false, &mut unused)?;
        Ok(ForwardOutput {
            seg_probs: g.value(out.seg_probs).clone(),
            cls_probs: g.value(out.cls_probs).clone(),
        })
    }

    fn conv<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        params: &BoundParams,
        name: &str,
        x: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let w = params.var(&format!("{name}.weight"))?;
        let b = params.var(&format!("{name}.bias"))?;
        g.conv2d(x, w, Some(b), (stride, stride), (pad, pad)).map_err(at(name))
    }

    fn conv_relu<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        params: &BoundParams,
        name: &str,
        x: Var,
        stride: usize,
    ) -> Result<Var> {
        let y = self.conv(g, params, name, x, stride, 1)?;
        Ok(g.relu(y))
    }
}

/// Scalar count for `config`, without building the network.
pub fn param_count(config: &TUNetConfig) -> Result<usize> {
    Ok(TUNet::new(*config)?.param_count())
}

fn at(layer: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Dimension { op, detail } => Error::Dimension {
            op: format!("{layer} ({op})"),
            detail,
        },
        other => other,
    }
}

fn layout(cfg: &TUNetConfig) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    let mut cin = IMAGE_CHANNELS;
    for l in 0..cfg.levels {
        let w = cfg.width(l);
        layers.push(LayerSpec::conv(format!("enc.{l}.conv1"), cin, w, 3));
        layers.push(LayerSpec::conv(format!("enc.{l}.conv2"), w, w, 3));
        cin = w;
    }
    let wb = cfg.width(cfg.levels);
    layers.push(LayerSpec::conv("bottleneck.conv1".into(), cin, wb, 3));
    layers.push(LayerSpec::conv("bottleneck.conv2".into(), wb, wb, 3));
    for l in (0..cfg.levels).rev() {
        let w = cfg.width(l);
        layers.push(LayerSpec {
            name: format!("dec.{l}.up"),
            kind: LayerKind::UpConv {
                cin: cfg.width(l + 1),
                cout: w,
            },
        });
        layers.push(LayerSpec::conv(format!("dec.{l}.conv1"), 2 * w, w, 3));
        layers.push(LayerSpec::conv(format!("dec.{l}.conv2"), w, w, 3));
    }
    layers.push(LayerSpec::conv("seg_head".into(), cfg.width(0), cfg.classes, 1));
    layers.push(LayerSpec::conv("cls.appearance".into(), wb, wb, 3));
    layers.push(LayerSpec::conv("cls.structure.0".into(), cfg.classes, cfg.width(0), 3));
    let downs = cfg.structural_downsamples();
    let mut ws = cfg.width(0);
    for k in 1..=downs {
        let out = cfg.width(k.min(cfg.levels));
        layers.push(LayerSpec::conv(format!("cls.structure.{k}"), ws, out, 3));
        ws = out;
    }
    layers.push(LayerSpec {
        name: "cls.fc".into(),
        kind: LayerKind::Dense {
            fin: wb + ws,
            fout: cfg.classes,
        },
    });
    layers
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TUNetConfig {
        TUNetConfig {
            side: 32,
            classes: 4,
            levels: 3,
            base_width: 8,
            dropout: 0.25,
        }
    }

    #[test]
    fn init_is_seeded_with_zero_bias() {
        let net = TUNet::new(small()).unwrap();
        let a = net.init::<f32>(3);
        let b = net.init::<f32>(3);
        assert_eq!(a, b);
        assert_ne!(a, net.init::<f32>(4));
        for (name, t) in a.iter() {
            if name.ends_with(".bias") {
                assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
            }
        }
        assert_eq!(a.scalar_count(), net.param_count());
    }

    #[test]
    fn rejects_wrong_input_side() {
        let net = TUNet::new(small()).unwrap();
        let params = net.init::<f32>(0);
        let err = net.predict(&params, &Tensor::zeros(&[1, 4, 16, 16])).unwrap_err();
        assert!(matches!(err, Error::Dimension { ref op, .. } if op == "input"));
    }
}
