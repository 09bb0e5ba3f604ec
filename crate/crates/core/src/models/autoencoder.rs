use serde::{Deserialize, Serialize};

use super::decoder::{downsample_geometry, Decoder, DecoderConfig, DECODER_STREAM, UPSAMPLING_LAYERS};
use super::layers::{ConvKind, Layer, Sequential};
use super::pose::POSE_DIM;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{ConvGeometry, Tape, Tensor, Var};

const ENCODER_STREAM: u64 = 0x454e_434f_4445_52;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderConfig {
    pub decoder: DecoderConfig,
    pub latent_dim: usize,
    /// Weight of the tracker term in the multi-input loss.
    pub k: f32,
}

impl AutoencoderConfig {
    pub fn new(decoder: DecoderConfig) -> Self {
        Self {
            decoder,
            latent_dim: POSE_DIM,
            k: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.decoder.validate()?;
        if self.latent_dim != POSE_DIM {
            return Err(Error::InvalidConfig(format!(
                "latent dimension must be {POSE_DIM}, got {}",
                self.latent_dim
            )));
        }
        if !(self.k >= 0.0) || !self.k.is_finite() {
            return Err(Error::InvalidConfig(format!("tracker weight K must be >= 0, got {}", self.k)));
        }
        Ok(())
    }
}

/// Image encoder mirroring the decoder, followed by the decoder itself.
/// The 7-D latent sits where the decoder's pose input would be.
#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder {
    config: AutoencoderConfig,
    encoder: Sequential,
    decoder: Decoder,
}

/// The decoder half is drawn from the same stream as `build_decoder(seed)`,
/// so both start from identical weights.
pub fn build_autoencoder(config: &AutoencoderConfig, seed: u64) -> Result<Autoencoder> {
    config.validate()?;
    let decoder = Decoder::build(&config.decoder, &mut Rng::derive(seed, DECODER_STREAM))?;
    let encoder = build_encoder(&config.decoder, &mut Rng::derive(seed, ENCODER_STREAM));
    Ok(Autoencoder {
        config: config.clone(),
        encoder,
        decoder,
    })
}

fn build_encoder(cfg: &DecoderConfig, rng: &mut Rng) -> Sequential {
    let mut layers = Vec::new();
    let first = cfg.penultimate_channels();
    layers.push(Layer::conv(
        ConvKind::Conv,
        1,
        first,
        ConvGeometry::square(1, 1, 0),
        true,
        true,
        rng,
    ));
    for (dec_in, dec_out, stride2) in cfg.conv_plan().into_iter().rev() {
        layers.push(Layer::conv(
            ConvKind::Conv,
            dec_out,
            dec_in,
            downsample_geometry(stride2),
            true,
            true,
            rng,
        ));
    }
    debug_assert_eq!(layers.len(), UPSAMPLING_LAYERS + 1);
    layers.push(Layer::Flatten);
    let mut widths: Vec<usize> = std::iter::once(POSE_DIM).chain(cfg.fc_widths.iter().copied()).collect();
    widths.reverse();
    for (i, pair) in widths.windows(2).enumerate() {
        // the latent must be free to take the sign of the tracker reading
        let relu = i + 2 < widths.len();
        layers.push(Layer::linear(pair[0], pair[1], relu, rng));
    }
    Sequential::new(layers)
}

/// Output of a full autoencoder pass.
pub struct AutoencoderOutput {
    pub latent: Tensor,
    pub reconstruction: Tensor,
}

impl Autoencoder {
    pub fn config(&self) -> &AutoencoderConfig {
        &self.config
    }

    pub fn encoder(&self) -> &Sequential {
        &self.encoder
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn decoder_mut(&mut self) -> &mut Decoder {
        &mut self.decoder
    }

    pub fn into_decoder(self) -> Decoder {
        self.decoder
    }

    pub fn parameter_count(&self) -> usize {
        self.encoder.parameter_count() + self.decoder.parameter_count()
    }

    pub fn encoder_conv_count(&self) -> usize {
        self.encoder.layers.iter().filter(|l| l.is_conv()).count()
    }

    pub fn encoder_fc_count(&self) -> usize {
        self.encoder.layers.iter().filter(|l| l.is_linear()).count()
    }

    fn check_images(&self, x: &Tensor) -> Result<()> {
        let s = self.decoder.output_size();
        match x.shape() {
            [_, 1, h, w] if *h == s && *w == s => Ok(()),
            other => Err(Error::shape(
                "autoencoder",
                format!("expected [batch, 1, {s}, {s}] images, got {other:?}"),
            )),
        }
    }

    /// Eval-mode latent code of a `[B, 1, S, S]` batch.
    pub fn encode(&self, images: &Tensor) -> Result<Tensor> {
        self.check_images(images)?;
        self.encoder.forward_eval(images.clone())
    }

    pub fn forward(&self, images: &Tensor) -> Result<AutoencoderOutput> {
        let latent = self.encode(images)?;
        let reconstruction = self.decoder.forward(&latent)?;
        Ok(AutoencoderOutput { latent, reconstruction })
    }

    /// Train-mode pass on `tape`, returning `(latent, reconstruction)`.
    /// Encoder parameters are appended to `params` before decoder ones.
    pub fn forward_train(&mut self, tape: &mut Tape, images: Var, params: &mut Vec<Var>) -> Result<(Var, Var)> {
        self.check_images(tape.value(images))?;
        let z = self.encoder.forward_train(tape, images, params)?;
        let recon = self.decoder.forward_train(tape, z, params)?;
        Ok((z, recon))
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut v = self.encoder.params();
        v.extend(self.decoder.network().params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.encoder.params_mut();
        v.extend(self.decoder.net.params_mut());
        v
    }

    pub fn state(&self) -> Vec<(String, &Tensor)> {
        let mut v = self.encoder.state("encoder");
        v.extend(self.decoder.net.state("decoder"));
        v
    }

    pub fn state_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = self.encoder.state_mut("encoder");
        v.extend(self.decoder.net.state_mut("decoder"));
        v
    }

    pub fn decoder_hash(&self) -> String {
        self.decoder.parameter_hash()
    }
}

/// Initializes `decoder` with the autoencoder's decoder half: every
/// parameter and running statistic is copied bit for bit.
pub fn transfer_decoder_weights(autoencoder: &Autoencoder, decoder: &mut Decoder) -> Result<()> {
    if autoencoder.decoder.config() != decoder.config() {
        return Err(Error::Structure(format!(
            "decoder config {:?} differs from the autoencoder's {:?}",
            decoder.config(),
            autoencoder.decoder.config()
        )));
    }
    decoder.net.copy_state_from(&autoencoder.decoder.net)
}
