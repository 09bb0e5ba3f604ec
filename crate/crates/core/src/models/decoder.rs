use serde::{Deserialize, Serialize};

use super::layers::{ConvKind, Layer, Sequential};
use super::pose::{NormalizedPose, POSE_DIM};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Rng;
use crate::tensor::{ConvGeometry, Tape, Tensor, Var};

pub const FC_LAYERS: usize = 5;
/// Conv layers between the base feature map and the output head.
pub const UPSAMPLING_LAYERS: usize = 6;

pub(crate) const DECODER_STREAM: u64 = 0x4445_434f_4445_52;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub output_size: usize,
    /// Output widths of the five FC layers; the last equals `C * H * W` of `base`.
    pub fc_widths: Vec<usize>,
    /// `[C, H, W]` of the map the FC stack is reshaped into.
    pub base: [usize; 3],
    /// Output channels of the six conv layers before the 1x1 head.
    pub conv_channels: Vec<usize>,
}

impl DecoderConfig {
    pub fn with_output_size(output_size: usize) -> Self {
        Self {
            output_size,
            fc_widths: vec![64, 256, 1024, 2048, 4096],
            base: [256, 4, 4],
            conv_channels: vec![128, 64, 32, 32, 32, 32],
        }
    }

    pub fn full() -> Self {
        Self::with_output_size(256)
    }

    pub fn desk() -> Self {
        Self::with_output_size(64)
    }

    /// Number of stride-2 upsampling layers; the rest keep resolution.
    pub fn doublings(&self) -> usize {
        (0..=UPSAMPLING_LAYERS)
            .find(|&d| self.base[1] << d == self.output_size)
            .unwrap_or(usize::MAX)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.fc_widths.len() != FC_LAYERS {
            return bad(format!("decoder needs {FC_LAYERS} FC widths, got {}", self.fc_widths.len()));
        }
        if self.conv_channels.len() != UPSAMPLING_LAYERS {
            return bad(format!(
                "decoder needs {UPSAMPLING_LAYERS} conv channel counts, got {}",
                self.conv_channels.len()
            ));
        }
        if self.fc_widths.iter().chain(&self.conv_channels).chain(&self.base).any(|&w| w == 0) {
            return bad("widths must be positive".into());
        }
        let [c, h, w] = self.base;
        if h != w {
            return bad(format!("base map must be square, got {h}x{w}"));
        }
        if self.fc_widths[FC_LAYERS - 1] != c * h * w {
            return bad(format!(
                "last FC width {} does not match base map {c}x{h}x{w}",
                self.fc_widths[FC_LAYERS - 1]
            ));
        }
        if self.doublings() > UPSAMPLING_LAYERS {
            return bad(format!(
                "output size {} is not base size {h} times a power of two up to 2^{UPSAMPLING_LAYERS}",
                self.output_size
            ));
        }
        Ok(())
    }

    /// `(in_channels, out_channels, stride-2?)` of the six upsampling layers.
    /// Resolution-preserving layers come first, where the map is smallest.
    pub fn conv_plan(&self) -> Vec<(usize, usize, bool)> {
        let flat = UPSAMPLING_LAYERS - self.doublings();
        let mut cin = self.base[0];
        self.conv_channels
            .iter()
            .enumerate()
            .map(|(i, &cout)| {
                let step = (cin, cout, i >= flat);
                cin = cout;
                step
            })
            .collect()
    }

    pub fn penultimate_channels(&self) -> usize {
        *self.conv_channels.last().expect("validated")
    }
}

pub(crate) fn upsample_geometry(stride2: bool) -> (ConvKind, ConvGeometry) {
    if stride2 {
        (ConvKind::Transpose, ConvGeometry::square(4, 2, 1))
    } else {
        (ConvKind::Conv, ConvGeometry::square(3, 1, 1))
    }
}

pub(crate) fn downsample_geometry(stride2: bool) -> ConvGeometry {
    if stride2 {
        ConvGeometry::square(4, 2, 1)
    } else {
        ConvGeometry::square(3, 1, 1)
    }
}

/// Pose-to-image network: FC stack, reshape, six conv layers, 1x1 head.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    config: DecoderConfig,
    pub(crate) net: Sequential,
}

pub fn build_decoder(config: &DecoderConfig, seed: u64) -> Result<Decoder> {
    let mut rng = Rng::derive(seed, DECODER_STREAM);
    Decoder::build(config, &mut rng)
}

impl Decoder {
    pub(crate) fn build(config: &DecoderConfig, rng: &mut Rng) -> Result<Decoder> {
        config.validate()?;
        let mut layers = Vec::new();
        let mut inp = POSE_DIM;
        for &w in &config.fc_widths {
            layers.push(Layer::linear(inp, w, true, rng));
            inp = w;
        }
        layers.push(Layer::Unflatten { shape: config.base });
        for (cin, cout, stride2) in config.conv_plan() {
            let (kind, geom) = upsample_geometry(stride2);
            layers.push(Layer::conv(kind, cin, cout, geom, true, true, rng));
        }
        layers.push(Layer::conv(
            ConvKind::Conv,
            config.penultimate_channels(),
            1,
            ConvGeometry::square(1, 1, 0),
            false,
            false,
            rng,
        ));
        Ok(Decoder {
            config: config.clone(),
            net: Sequential::new(layers),
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn output_size(&self) -> usize {
        self.config.output_size
    }

    pub fn layers(&self) -> &[Layer] {
        &self.net.layers
    }

    pub fn network(&self) -> &Sequential {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Sequential {
        &mut self.net
    }

    pub fn fc_layer_count(&self) -> usize {
        self.net.layers.iter().filter(|l| l.is_linear()).count()
    }

    pub fn conv_layer_count(&self) -> usize {
        self.net.layers.iter().filter(|l| l.is_conv()).count()
    }

    /// Trainable scalars, batch-norm affine terms included.
    pub fn parameter_count(&self) -> usize {
        self.net.parameter_count()
    }

    /// Eval-mode forward of a `[B, 7]` batch to raw `[B, 1, S, S]` output.
    pub fn forward(&self, poses: &Tensor) -> Result<Tensor> {
        check_pose_batch(poses)?;
        self.net.forward_eval(poses.clone())
    }

    /// Eval-mode forward keeping the penultimate feature map.
    pub fn forward_features(&self, poses: &Tensor) -> Result<Tensor> {
        check_pose_batch(poses)?;
        self.net.forward_eval_prefix(poses.clone(), self.net.layers.len() - 1)
    }

    /// Train-mode forward recorded on `tape`.
    pub fn forward_train(&mut self, tape: &mut Tape, poses: Var, params: &mut Vec<Var>) -> Result<Var> {
        check_pose_batch(tape.value(poses))?;
        self.net.forward_train(tape, poses, params)
    }

    /// Simulated image for one pose, clamped to [0, 1].
    pub fn simulate(&self, pose: &NormalizedPose) -> Result<Image> {
        let out = self.forward(&pose.to_tensor())?;
        let s = self.output_size();
        Ok(Image::new(s, s, out.into_data())?.clamped())
    }

    /// Batched [`Decoder::simulate`].
    pub fn simulate_batch(&self, poses: &[NormalizedPose]) -> Result<Vec<Image>> {
        let out = self.forward(&NormalizedPose::batch(poses)?)?;
        let s = self.output_size();
        out.data()
            .chunks(s * s)
            .map(|c| Ok(Image::new(s, s, c.to_vec())?.clamped()))
            .collect()
    }

    pub fn parameter_hash(&self) -> String {
        super::state_hash(&self.net.state("decoder"))
    }
}

fn check_pose_batch(x: &Tensor) -> Result<()> {
    match x.shape() {
        [_, POSE_DIM] => Ok(()),
        s => Err(Error::shape("decoder", format!("expected [batch, {POSE_DIM}] poses, got {s:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_counts_and_output_shape() {
        for size in [64, 256] {
            let dec = build_decoder(&DecoderConfig::with_output_size(size), 1).unwrap();
            assert_eq!(dec.fc_layer_count(), 5);
            assert_eq!(dec.conv_layer_count(), 7);
            let y = dec.forward(&Tensor::zeros(&[2, 7])).unwrap();
            assert_eq!(y.shape(), &[2, 1, size, size]);
            let f = dec.forward_features(&Tensor::zeros(&[1, 7])).unwrap();
            assert_eq!(f.shape(), &[1, 32, size, size]);
        }
    }

    #[test]
    fn unit_width_parameter_count() {
        for (size, flat) in [(256, 0), (64, 2)] {
            let cfg = DecoderConfig {
                output_size: size,
                fc_widths: vec![1, 1, 1, 1, 16],
                base: [1, 4, 4],
                conv_channels: vec![1; 6],
            };
            // FC: 7->1, three 1->1, 1->16, each with bias
            let fc = (7 + 1) + 3 * (1 + 1) + (16 + 16);
            // conv 1->1 plus bias, BN gamma and beta: k=3 stride-1, k=4 stride-2
            let conv = flat * (9 + 3) + (6 - flat) * (16 + 3);
            let head = 1 + 1;
            let dec = build_decoder(&cfg, 0).unwrap();
            assert_eq!(dec.parameter_count(), fc + conv + head);
            assert_eq!(build_decoder(&cfg, 9).unwrap().parameter_count(), dec.parameter_count());
        }
    }

    #[test]
    fn desk_mode_plan() {
        let plan = DecoderConfig::desk().conv_plan();
        let strides: Vec<bool> = plan.iter().map(|p| p.2).collect();
        assert_eq!(strides, [false, false, true, true, true, true]);
        assert!(DecoderConfig::full().conv_plan().iter().all(|p| p.2));
    }

    #[test]
    fn invalid_configs() {
        let mut c = DecoderConfig::desk();
        c.output_size = 96;
        assert!(build_decoder(&c, 0).is_err());
        let mut c = DecoderConfig::desk();
        c.fc_widths.pop();
        assert!(build_decoder(&c, 0).is_err());
        let mut c = DecoderConfig::desk();
        c.conv_channels.push(8);
        assert!(build_decoder(&c, 0).is_err());
        let mut c = DecoderConfig::desk();
        c.fc_widths[4] = 100;
        assert!(build_decoder(&c, 0).is_err());
        assert!(build_decoder(&DecoderConfig::with_output_size(512), 0).is_err());
    }

    #[test]
    fn seeded_init() {
        let c = DecoderConfig::desk();
        assert_eq!(build_decoder(&c, 5).unwrap(), build_decoder(&c, 5).unwrap());
        assert_ne!(
            build_decoder(&c, 5).unwrap().parameter_hash(),
            build_decoder(&c, 6).unwrap().parameter_hash()
        );
    }

    #[test]
    fn zero_head_gives_black_images() {
        let mut dec = build_decoder(&DecoderConfig::desk(), 2).unwrap();
        let n = dec.net.layers.len();
        for p in dec.net.layers[n - 1].params_mut() {
            p.data_mut().fill(0.0);
        }
        let img = dec.simulate(&NormalizedPose::new([1.0, 0.0, 0.0, 0.0, 0.1, 0.2, 0.3]).unwrap()).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_forward_repeatable_and_rejects_width() {
        let dec = build_decoder(&DecoderConfig::desk(), 3).unwrap();
        let x = Tensor::from_fn(&[1, 7], |i| i as f32 * 0.1);
        assert_eq!(dec.forward(&x).unwrap(), dec.forward(&x).unwrap());
        assert!(dec.forward(&Tensor::zeros(&[1, 6])).is_err());
    }
}
