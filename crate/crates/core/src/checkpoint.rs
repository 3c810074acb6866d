//! Single-file checkpoints: one line of JSON metadata, a newline, then every
//! parameter as a little-endian `f64` in canonical tensor order
//! (see [`NetworkParams`]).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::events::WindowSpec;
use crate::features::FeatureManifest;
use crate::nn::{NetworkDims, NetworkParams};
use crate::scalar::Scalar;

pub const FORMAT: &str = "lanechange-lstm";
pub const VERSION: u32 = 1;

/// Where the training windows came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetProvenance {
    pub seed: u64,
    pub window: WindowSpec,
    pub split_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub format: String,
    pub version: u32,
    pub dims: NetworkDims,
    pub seed: u64,
    /// Scalar type the parameters were trained in.
    pub scalar: String,
    pub param_count: usize,
    /// Hex SHA-256 of the parameter bytes.
    pub param_sha256: String,
    pub feature_manifest_hash: String,
    pub feature_manifest: FeatureManifest,
    pub dataset: Option<DatasetProvenance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub envelope: Envelope,
    pub params: NetworkParams<f64>,
}

fn param_bytes(params: &NetworkParams<f64>) -> Vec<u8> {
    params.to_flat().iter().flat_map(|v| v.to_le_bytes()).collect()
}

impl Checkpoint {
    pub fn new<T: Scalar>(
        params: &NetworkParams<T>,
        seed: u64,
        manifest: FeatureManifest,
        dataset: Option<DatasetProvenance>,
    ) -> Self {
        let params = params.cast::<f64>();
        let dims = params.dims();
        let envelope = Envelope {
            format: FORMAT.into(),
            version: VERSION,
            dims,
            seed,
            scalar: T::TYPE_NAME.into(),
            param_count: params.len(),
            param_sha256: hex::encode(Sha256::digest(param_bytes(&params))),
            feature_manifest_hash: manifest.hash(),
            feature_manifest: manifest,
            dataset,
        };
        Checkpoint { envelope, params }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(&self.envelope).expect("envelope serializes");
        out.push(b'\n');
        out.extend(param_bytes(&self.params));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        let split = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing envelope terminator".into()))?;
        let envelope: Envelope =
            serde_json::from_slice(&bytes[..split]).map_err(|e| bad(format!("unreadable envelope: {e}")))?;
        if envelope.format != FORMAT {
            return Err(bad(format!("unknown format `{}`", envelope.format)));
        }
        if envelope.version != VERSION {
            return Err(bad(format!("unsupported version {} (expected {VERSION})", envelope.version)));
        }
        envelope.dims.check()?;
        if envelope.feature_manifest.hash() != envelope.feature_manifest_hash {
            return Err(bad("feature manifest does not match its hash".into()));
        }
        let width = envelope.feature_manifest.config().width();
        if width != envelope.dims.input_width {
            return Err(bad(format!("feature width {width} does not match input width {}", envelope.dims.input_width)));
        }
        let body = &bytes[split + 1..];
        if body.len() != envelope.param_count * 8 {
            return Err(bad(format!("expected {} parameter bytes, found {}", envelope.param_count * 8, body.len())));
        }
        if hex::encode(Sha256::digest(body)) != envelope.param_sha256 {
            return Err(bad("parameter bytes do not match their checksum".into()));
        }
        let flat: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let params = NetworkParams::from_flat(&envelope.dims, &flat).map_err(|e| bad(e.to_string()))?;
        Ok(Checkpoint { envelope, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn params_as<T: Scalar>(&self) -> NetworkParams<T> {
        self.params.cast()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::acc_config;
    use crate::nn::init_params;

    fn sample() -> Checkpoint {
        let cfg = acc_config();
        let dims = NetworkDims::new(cfg.width(), 3);
        let params = init_params::<f64>(7, &dims);
        Checkpoint::new(&params, 7, FeatureManifest::new(&cfg, 1, None), None)
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn normalizer_survives_round_trip() {
        use crate::events::Label;
        use crate::features::{FeatureSequence, Normalizer};
        let cfg = acc_config();
        let seqs: Vec<FeatureSequence<f64>> = (0..4)
            .map(|k| {
                let values = (0..cfg.total()).map(|i| ((i * 7 + k * 13) as f64 * 0.1).sin() * 37.3 + 0.1).collect();
                FeatureSequence::new(cfg.n, cfg.width(), values, Label::Keep).unwrap()
            })
            .collect();
        let manifest = FeatureManifest::new(&cfg, 1, Some(Normalizer::fit(&seqs).unwrap()));
        let dims = NetworkDims::new(cfg.width(), 2);
        let ck = Checkpoint::new(&init_params::<f64>(1, &dims), 1, manifest, None);
        assert_eq!(Checkpoint::from_bytes(&ck.to_bytes()).unwrap(), ck);
    }

    #[test]
    fn body_is_little_endian_in_canonical_order() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let start = bytes.iter().position(|&b| b == b'\n').unwrap() + 1;
        let first = f64::from_le_bytes(bytes[start..start + 8].try_into().unwrap());
        assert_eq!(first, ck.params.layer1.forget.w_x.data[0]);
        let last = f64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
        assert_eq!(last, ck.params.out.b[0]);
    }

    #[test]
    fn rejects_corruption() {
        let ck = sample();
        let mut bytes = ck.to_bytes();
        let n = bytes.len();
        bytes[n - 3] ^= 0x10;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checkpoint(_))));
        assert!(Checkpoint::from_bytes(&ck.to_bytes()[..n - 8]).is_err());
        assert!(Checkpoint::from_bytes(b"{}").is_err());
    }

    #[test]
    fn rejects_other_versions() {
        let mut ck = sample();
        ck.envelope.version = 2;
        assert!(Checkpoint::from_bytes(&ck.to_bytes()).is_err());
    }
}
