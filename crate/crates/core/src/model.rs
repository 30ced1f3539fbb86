//! The full network: convolutional autoencoder, self-expression matrix and
//! classifier head, with a versioned binary checkpoint.

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, BinReader, BinWriter};
use crate::classifier::ClassifierHead;
use crate::config::Architecture;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvTranspose2d, Layer, Sequential};
use crate::selfexpr::RepresentationMatrix;
use crate::tensor::Tensor;
use crate::Scalar;

const MAGIC: &[u8; 4] = b"RSCN";
const VERSION: u32 = 1;

/// Self-describing header stored at the front of a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub architecture: Architecture,
    pub sample_shape: Vec<usize>,
    pub k: usize,
    pub has_head: bool,
    pub has_c: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub architecture: Architecture,
    /// Shape of one sample, without the batch axis.
    pub sample_shape: Vec<usize>,
    pub k: usize,
    pub encoder: Sequential<T>,
    pub decoder: Sequential<T>,
    pub c: Option<RepresentationMatrix<T>>,
    pub head: Option<ClassifierHead<T>>,
}

fn build_autoencoder<T: Scalar, R: Rng + ?Sized>(
    arch: &Architecture,
    sample_shape: &[usize],
    rng: &mut R,
) -> Result<(Sequential<T>, Sequential<T>)> {
    if arch.encoder.is_empty() {
        let decoder = match *sample_shape {
            [channels, height, width] => vec![Layer::Unflatten { channels, height, width }],
            _ => Vec::new(),
        };
        return Ok((Sequential::new(vec![Layer::Flatten]), Sequential::new(decoder)));
    }
    let [mut ch, mut h, mut w] = *sample_shape else {
        return Err(Error::Config(format!(
            "a convolutional encoder needs [channels, height, width] samples, got {sample_shape:?}"
        )));
    };
    let mut enc = Vec::new();
    // (in channels, spatial size before the layer) per conv, for mirroring.
    let mut inputs = Vec::new();
    for spec in &arch.encoder {
        let pad = (spec.kernel - 1) / 2;
        let conv = Conv2d::new(ch, spec.channels, spec.kernel, spec.stride, pad, rng);
        let out = conv.output_shape(&[1, ch, h, w])?;
        inputs.push((ch, h, w));
        enc.push(Layer::Conv(conv));
        enc.push(Layer::Relu);
        (ch, h, w) = (out[1], out[2], out[3]);
    }
    enc.push(Layer::Flatten);
    let mut dec = vec![Layer::Unflatten {
        channels: ch,
        height: h,
        width: w,
    }];
    for (i, spec) in arch.encoder.iter().enumerate().rev() {
        let (out_ch, th, tw) = inputs[i];
        let pad = (spec.kernel - 1) / 2;
        let output_padding = |target: usize, n: usize| {
            let op = (target + 2 * pad) as i64 - ((n - 1) * spec.stride + spec.kernel) as i64;
            (0..spec.stride as i64).contains(&op).then_some(op as usize)
        };
        let op = match (output_padding(th, h), output_padding(tw, w)) {
            (Some(a), Some(b)) if a == b => a,
            _ => return Err(Error::Config(format!("architecture.encoder[{i}] cannot be mirrored for {th}x{tw} input"))),
        };
        let deconv = ConvTranspose2d::new(ch, out_ch, spec.kernel, spec.stride, pad, op, rng);
        dec.push(Layer::Deconv(deconv));
        if i > 0 {
            dec.push(Layer::Relu);
        }
        (ch, h, w) = (out_ch, th, tw);
    }
    Ok((Sequential::new(enc), Sequential::new(dec)))
}

impl<T: Scalar> Model<T> {
    /// Autoencoder only; the representation matrix and head are added by the
    /// training stages that need them.
    pub fn new<R: Rng + ?Sized>(architecture: &Architecture, sample_shape: &[usize], k: usize, rng: &mut R) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("k must be >= 1"));
        }
        let (encoder, decoder) = build_autoencoder(architecture, sample_shape, rng)?;
        let model = Model {
            architecture: architecture.clone(),
            sample_shape: sample_shape.to_vec(),
            k,
            encoder,
            decoder,
            c: None,
            head: None,
        };
        let out = model.decoder.output_shape(&[1, model.latent_dim()?])?;
        if model.decoder.is_empty() || out[1..] == *sample_shape {
            Ok(model)
        } else {
            Err(Error::Config(format!("decoder output {out:?} does not match sample shape {sample_shape:?}")))
        }
    }

    pub fn latent_dim(&self) -> Result<usize> {
        let mut shape = vec![1];
        shape.extend(&self.sample_shape);
        Ok(self.encoder.output_shape(&shape)?[1])
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.ndim() == 0 || x.shape()[1..] != self.sample_shape[..] {
            return Err(Error::shape("model input", format!("[N, {:?}]", self.sample_shape), format!("{:?}", x.shape())));
        }
        Ok(())
    }

    /// Latent codes, one row per sample.
    pub fn encode(&self, x: &Tensor<T>) -> Result<Array2<T>> {
        self.check_input(x)?;
        Ok(self.encoder.forward(x)?.to_rows())
    }

    pub fn reconstruct(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let z = self.encoder.forward(x)?;
        if self.decoder.is_empty() {
            return Ok(z);
        }
        self.decoder.forward(&z)
    }

    /// Classifies samples with encoder and head; `C` is never consulted,
    /// so this works for samples that took no part in training.
    pub fn predict_unseen(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        let head = self
            .head
            .as_ref()
            .ok_or_else(|| Error::invalid("model has no classifier head; run full training first"))?;
        head.predict(self.encode(x)?.view())
    }

    pub fn ensure_c(&mut self, n: usize) -> Result<&mut RepresentationMatrix<T>> {
        match &self.c {
            Some(c) if c.n() != n => Err(Error::shape("representation matrix", n, c.n())),
            _ => Ok(self.c.get_or_insert_with(|| RepresentationMatrix::zeros(n))),
        }
    }

    pub fn ensure_head<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<&mut ClassifierHead<T>> {
        if self.head.is_none() {
            self.head = Some(ClassifierHead::new(self.latent_dim()?, self.k, rng));
        }
        Ok(self.head.as_mut().expect("head present"))
    }

    /// Network parameters in a fixed order: encoder, decoder, head.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut p = self.encoder.params();
        p.extend(self.decoder.params());
        if let Some(h) = &self.head {
            p.push(&h.fc.weight);
            p.push(&h.fc.bias);
        }
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut p = self.encoder.params_mut();
        p.extend(self.decoder.params_mut());
        if let Some(h) = &mut self.head {
            p.extend(h.params_mut());
        }
        p
    }

    pub fn manifest(&self) -> ModelManifest {
        ModelManifest {
            architecture: self.architecture.clone(),
            sample_shape: self.sample_shape.clone(),
            k: self.k,
            has_head: self.head.is_some(),
            has_c: self.c.is_some(),
        }
    }

    /// Magic `RSCN`, version, manifest as TOML, then every parameter block
    /// with its shape, the head centroids and `C` when present.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BinWriter::new(checkpoint::create(path)?, MAGIC, VERSION)?;
        w.str(&toml::to_string(&self.manifest()).expect("manifest serializes"))?;
        let params = self.params();
        w.u32(params.len() as u32)?;
        for p in params {
            w.u32(p.ndim() as u32)?;
            for &d in p.shape() {
                w.u64(d as u64)?;
            }
            w.scalars(p.data())?;
        }
        if let Some(h) = &self.head {
            checkpoint::write_matrix(&mut w, &h.centroids)?;
        }
        if let Some(c) = &self.c {
            checkpoint::write_matrix(&mut w, c.matrix())?;
        }
        w.finish()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ctx = |m: String| Error::Checkpoint(format!("{}: {m}", path.display()));
        let (mut r, version) = BinReader::new(checkpoint::open(path)?, MAGIC).map_err(|e| ctx(e.to_string()))?;
        if version != VERSION {
            return Err(ctx(format!("unsupported version {version}")));
        }
        let manifest: ModelManifest = toml::from_str(&r.str()?).map_err(|e| ctx(format!("bad manifest: {e}")))?;
        let mut model = Model::new(&manifest.architecture, &manifest.sample_shape, manifest.k, &mut ChaCha8Rng::seed_from_u64(0))?;
        if manifest.has_head {
            model.ensure_head(&mut ChaCha8Rng::seed_from_u64(0))?;
        }
        let count = r.u32()? as usize;
        let mut params = model.params_mut();
        if count != params.len() {
            return Err(ctx(format!("expected {} parameter blocks, found {count}", params.len())));
        }
        for (i, p) in params.iter_mut().enumerate() {
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if shape != p.shape() {
                return Err(ctx(format!("parameter block {i}: shape {shape:?}, expected {:?}", p.shape())));
            }
            let data = r.scalars::<T>()?;
            if data.len() != p.len() {
                return Err(ctx(format!("parameter block {i}: {} values, expected {}", data.len(), p.len())));
            }
            p.data_mut().copy_from_slice(&data);
        }
        if let Some(h) = &mut model.head {
            let centroids = checkpoint::read_matrix(&mut r)?;
            if centroids.dim() != (manifest.k, manifest.k) {
                return Err(ctx(format!("centroids are {:?}, expected {k}x{k}", centroids.dim(), k = manifest.k)));
            }
            h.centroids = centroids;
        }
        if manifest.has_c {
            model.c = Some(RepresentationMatrix::from_array(checkpoint::read_matrix(&mut r)?)?);
        }
        r.expect_end()?;
        Ok(model)
    }
}
